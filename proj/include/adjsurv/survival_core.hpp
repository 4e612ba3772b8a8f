#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "adjsurv/dataset.hpp"
#include "adjsurv/errors.hpp"
#include "adjsurv/root_finding.hpp"

namespace adjsurv {

/// Right-continuous step function: value(t) = sum of increments at jumps <= t.
class StepHazard {
 public:
  StepHazard() = default;
  StepHazard(std::vector<double> jump_times, std::vector<double> increments)
      : times_(std::move(jump_times)), increments_(std::move(increments)) {
    if (times_.size() != increments_.size())
      throw Error(ErrorCode::InvalidInput, "step function needs one increment per jump");
    for (std::size_t k = 1; k < times_.size(); ++k)
      if (!(times_[k] > times_[k - 1]))
        throw Error(ErrorCode::InvalidInput, "jump times must be strictly increasing");
    cumulative_.resize(increments_.size());
    std::partial_sum(increments_.begin(), increments_.end(), cumulative_.begin());
  }

  double operator()(double t) const {
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) return 0.0;
    return cumulative_[static_cast<std::size_t>(it - times_.begin()) - 1];
  }

  const std::vector<double>& jump_times() const { return times_; }
  const std::vector<double>& increments() const { return increments_; }
  /// Warning flag: the estimate had no events to jump at.
  bool no_events() const { return times_.empty(); }

 private:
  std::vector<double> times_;
  std::vector<double> increments_;
  std::vector<double> cumulative_;
};

/// Value and negative derivative (observed information) of a Cox score.
struct ScoreEvaluation {
  double value = 0.0;
  double neg_derivative = 0.0;
};

namespace detail {

/// Per-stratum event table: distinct event times <= tau with arm-specific
/// event counts and at-risk counts (T >= t, so censored-at-t subjects count).
struct EventTable {
  std::vector<double> times;
  std::vector<double> d1, d0;
  std::vector<double> y1, y0;

  std::size_t size() const { return times.size(); }
  double events() const {
    return std::accumulate(d1.begin(), d1.end(), 0.0) + std::accumulate(d0.begin(), d0.end(), 0.0);
  }
};

inline EventTable build_event_table(const TrialDataset& data, std::span<const std::size_t> members) {
  std::vector<double> t1, t0;
  std::map<double, std::pair<double, double>> events;
  for (std::size_t i : members) {
    const Subject& s = data[i];
    (s.treated() ? t1 : t0).push_back(s.time);
    if (s.event && s.time <= data.tau()) {
      auto& cell = events[s.time];
      (s.treated() ? cell.first : cell.second) += 1.0;
    }
  }
  std::sort(t1.begin(), t1.end());
  std::sort(t0.begin(), t0.end());
  EventTable tab;
  tab.times.reserve(events.size());
  for (const auto& [t, counts] : events) {
    tab.times.push_back(t);
    tab.d1.push_back(counts.first);
    tab.d0.push_back(counts.second);
    tab.y1.push_back(static_cast<double>(t1.end() - std::lower_bound(t1.begin(), t1.end(), t)));
    tab.y0.push_back(static_cast<double>(t0.end() - std::lower_bound(t0.begin(), t0.end(), t)));
  }
  return tab;
}

/// Subjects grouped by stratum, in increasing label order. Unstratified data
/// (or an explicit request to ignore strata) yields a single group.
struct Partition {
  std::vector<int> labels;
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> group_of;

  std::size_t size() const { return members.size(); }
};

inline Partition make_partition(const TrialDataset& data, bool use_strata) {
  Partition part;
  part.group_of.assign(data.size(), 0);
  if (!use_strata || !data.stratified()) {
    part.labels = {0};
    part.members.resize(1);
    part.members[0].resize(data.size());
    std::iota(part.members[0].begin(), part.members[0].end(), std::size_t{0});
    return part;
  }
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < data.size(); ++i) groups[*data[i].stratum].push_back(i);
  for (auto& [label, idx] : groups) {
    for (std::size_t i : idx) part.group_of[i] = part.members.size();
    part.labels.push_back(label);
    part.members.push_back(std::move(idx));
  }
  return part;
}

inline std::vector<EventTable> build_tables(const TrialDataset& data, const Partition& part) {
  std::vector<EventTable> tables;
  tables.reserve(part.size());
  for (const auto& m : part.members) tables.push_back(build_event_table(data, m));
  return tables;
}

/// Score and information summed over event tables, scaled by 1/n.
inline ScoreEvaluation score_from_tables(std::span<const EventTable> tables, double theta, double n) {
  const double e = std::exp(theta);
  ScoreEvaluation out;
  for (const auto& tab : tables) {
    for (std::size_t k = 0; k < tab.size(); ++k) {
      const double s = e * tab.y1[k] + tab.y0[k];
      const double d = tab.d1[k] + tab.d0[k];
      out.value += tab.d1[k] - d * e * tab.y1[k] / s;
      out.neg_derivative += d * e * tab.y1[k] * tab.y0[k] / (s * s);
    }
  }
  out.value /= n;
  out.neg_derivative /= n;
  return out;
}

inline double total_events(std::span<const EventTable> tables) {
  double d = 0.0;
  for (const auto& t : tables) d += t.events();
  return d;
}

}  // namespace detail

enum class HazardScope { Pooled, Control, Treatment };

/// Nelson-Aalen cumulative hazard from raw (time, event) pairs, truncated at
/// tau. Tied events pool into one jump d/Y.
inline StepHazard nelson_aalen(const std::vector<double>& times, const std::vector<bool>& events,
                               double tau) {
  if (times.empty()) throw Error(ErrorCode::EmptyRiskSet, "no subjects for Nelson-Aalen");
  if (times.size() != events.size())
    throw Error(ErrorCode::InvalidInput, "times and events differ in length");
  std::vector<double> sorted(times.begin(), times.end());
  std::sort(sorted.begin(), sorted.end());
  std::map<double, double> d;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (events[i] && times[i] <= tau) d[times[i]] += 1.0;
  std::vector<double> jt, inc;
  jt.reserve(d.size());
  inc.reserve(d.size());
  for (const auto& [t, count] : d) {
    const double at_risk =
        static_cast<double>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
    jt.push_back(t);
    inc.push_back(count / at_risk);
  }
  return StepHazard(std::move(jt), std::move(inc));
}

/// Nelson-Aalen for the pooled sample or one arm. Zero events before tau
/// gives the zero function; check StepHazard::no_events().
inline StepHazard nelson_aalen(const TrialDataset& data, HazardScope scope = HazardScope::Pooled) {
  std::vector<double> t;
  std::vector<bool> ev;
  for (const auto& s : data.subjects()) {
    if (scope == HazardScope::Treatment && !s.treated()) continue;
    if (scope == HazardScope::Control && s.treated()) continue;
    t.push_back(s.time);
    ev.push_back(s.event);
  }
  return nelson_aalen(t, ev, data.tau());
}

/// Sample-average at-risk and counting processes.
///
/// at_risk(j, t) = n^-1 #{T >= t, arm j}; events(t) = n^-1 #{T <= min(t, tau), event}.
class RiskCurves {
 public:
  explicit RiskCurves(const TrialDataset& data) : n_(static_cast<double>(data.size())), tau_(data.tau()) {
    for (const auto& s : data.subjects()) {
      times_[arm_index(s.arm)].push_back(s.time);
      if (s.event && s.time <= data.tau()) event_times_.push_back(s.time);
    }
    for (auto& v : times_) std::sort(v.begin(), v.end());
    std::sort(event_times_.begin(), event_times_.end());
  }

  double at_risk(Arm arm, double t) const {
    const auto& v = times_[arm_index(arm)];
    return static_cast<double>(v.end() - std::lower_bound(v.begin(), v.end(), t)) / n_;
  }
  double at_risk(double t) const { return at_risk(Arm::Treatment, t) + at_risk(Arm::Control, t); }
  double events(double t) const {
    const double u = std::min(t, tau_);
    return static_cast<double>(std::upper_bound(event_times_.begin(), event_times_.end(), u) -
                               event_times_.begin()) / n_;
  }

  /// Distinct event times in [0, tau].
  std::vector<double> event_times() const {
    std::vector<double> u = event_times_;
    u.erase(std::unique(u.begin(), u.end()), u.end());
    return u;
  }

 private:
  double n_;
  double tau_;
  std::vector<double> times_[2];
  std::vector<double> event_times_;
};

inline RiskCurves risk_curves(const TrialDataset& data) { return RiskCurves(data); }

/// Unadjusted Cox partial-likelihood score for treatment at theta, with the
/// observed information. Throws DegenerateInformation when the information is 0.
inline ScoreEvaluation cox_score(const TrialDataset& data, double theta) {
  const auto part = detail::make_partition(data, false);
  const auto tables = detail::build_tables(data, part);
  if (detail::total_events(tables) == 0.0)
    throw Error(ErrorCode::NoEvents, "no events before tau");
  auto ev = detail::score_from_tables(tables, theta, static_cast<double>(data.size()));
  if (!(ev.neg_derivative > 0.0))
    throw Error(ErrorCode::DegenerateInformation, "one arm has an empty risk set at every event time");
  return ev;
}

/// Solves score(theta) = target for a score table set. Shared by the
/// unadjusted, adjusted, and stratified estimators.
inline double solve_score(std::span<const detail::EventTable> tables, double n, double target = 0.0,
                          const BracketOptions& opt = {}) {
  if (detail::total_events(tables) == 0.0)
    throw Error(ErrorCode::NoEvents, "no events before tau");
  const auto info = detail::score_from_tables(tables, 0.0, n).neg_derivative;
  if (!(info > 0.0))
    throw Error(ErrorCode::DegenerateInformation, "one arm has an empty risk set at every event time");
  return find_decreasing_root(
      [&](double th) { return detail::score_from_tables(tables, th, n).value - target; }, opt);
}

/// Maximum partial likelihood estimate of the log hazard ratio, treatment as
/// the only covariate.
inline double cox_mple(const TrialDataset& data, const BracketOptions& opt = {}) {
  const auto part = detail::make_partition(data, false);
  const auto tables = detail::build_tables(data, part);
  return solve_score(tables, static_cast<double>(data.size()), 0.0, opt);
}

/// M_i = event_i 1(T_i <= tau) - hazard(min(T_i, tau)).
inline std::vector<double> martingale_residuals(const TrialDataset& data, const StepHazard& hazard) {
  std::vector<double> m;
  m.reserve(data.size());
  for (const auto& s : data.subjects()) {
    const double dn = (s.event && s.time <= data.tau()) ? 1.0 : 0.0;
    m.push_back(dn - hazard(std::min(s.time, data.tau())));
  }
  return m;
}

}  // namespace adjsurv
