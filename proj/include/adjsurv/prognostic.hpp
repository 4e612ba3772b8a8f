#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string_view>
#include <type_traits>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "adjsurv/dataset.hpp"
#include "adjsurv/forest.hpp"
#include "adjsurv/stats.hpp"
#include "adjsurv/survival_core.hpp"

namespace adjsurv {

/// Historical control cohort used only to train the prognostic score.
/// Missing covariates (NaN) are replaced by column means at construction.
class ExternalControls {
 public:
  static ExternalControls make(std::vector<Subject> subjects, std::vector<std::string> feature_names,
                               std::optional<double> tau_ext = std::nullopt) {
    ExternalControls e;
    if (subjects.empty()) throw Error(ErrorCode::EmptyRiskSet, "external cohort is empty");
    const std::size_t p = feature_names.size();
    double max_time = 0.0;
    std::vector<double> sums(p, 0.0), counts(p, 0.0);
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      const Subject& s = subjects[i];
      if (!std::isfinite(s.time) || s.time < 0.0)
        throw Error(ErrorCode::InvalidInput, "external row " + std::to_string(i) + ": invalid time");
      if (s.covariates.size() != p)
        throw Error(ErrorCode::InvalidInput, "external row " + std::to_string(i) + ": covariate count mismatch");
      for (std::size_t k = 0; k < p; ++k)
        if (std::isfinite(s.covariates[k])) {
          sums[k] += s.covariates[k];
          counts[k] += 1.0;
        }
      max_time = std::max(max_time, s.time);
    }
    e.means_.resize(p);
    for (std::size_t k = 0; k < p; ++k) {
      if (counts[k] == 0.0)
        throw Error(ErrorCode::InvalidInput, "external feature '" + feature_names[k] + "' is entirely missing");
      e.means_[k] = sums[k] / counts[k];
      if (counts[k] < static_cast<double>(subjects.size()))
        e.diagnostics_.push_back("feature '" + feature_names[k] + "': " +
                                 std::to_string(static_cast<std::size_t>(
                                     static_cast<double>(subjects.size()) - counts[k])) +
                                 " missing value(s) mean-imputed");
    }
    for (auto& s : subjects)
      for (std::size_t k = 0; k < p; ++k)
        if (!std::isfinite(s.covariates[k])) s.covariates[k] = e.means_[k];
    if (subjects.size() < 20) e.diagnostics_.push_back("external cohort has fewer than 20 rows");
    e.subjects_ = std::move(subjects);
    e.names_ = std::move(feature_names);
    e.tau_ = tau_ext.value_or(max_time);
    if (!(e.tau_ > 0.0)) throw Error(ErrorCode::InvalidInput, "external tau must be positive");
    return e;
  }

  std::span<const Subject> subjects() const { return subjects_; }
  std::size_t size() const { return subjects_.size(); }
  double tau() const { return tau_; }
  const std::vector<std::string>& feature_names() const { return names_; }
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

  Eigen::MatrixXd feature_matrix() const {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(names_.size()));
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t k = 0; k < names_.size(); ++k)
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = subjects_[i].covariates[k];
    return x;
  }

  StepHazard baseline_hazard() const {
    std::vector<double> t;
    std::vector<bool> ev;
    for (const auto& s : subjects_) {
      t.push_back(s.time);
      ev.push_back(s.event);
    }
    return nelson_aalen(t, ev, tau_);
  }

  double median_follow_up() const {
    std::vector<double> t;
    for (const auto& s : subjects_) t.push_back(s.time);
    std::sort(t.begin(), t.end());
    const std::size_t m = t.size();
    return m % 2 ? t[m / 2] : 0.5 * (t[m / 2 - 1] + t[m / 2]);
  }

 private:
  std::vector<Subject> subjects_;
  std::vector<std::string> names_;
  std::vector<double> means_;
  std::vector<std::string> diagnostics_;
  double tau_ = 0.0;
};

enum class TargetKind { MartingaleResidual, SurvivalProbability };

struct TargetSpec {
  TargetKind kind = TargetKind::MartingaleResidual;
  std::optional<double> at_time;  // survival target only; default is the median follow-up
};

inline const char* target_kind_name(TargetKind k) {
  return k == TargetKind::MartingaleResidual ? "martingale_residual" : "survival_probability";
}

/// event_i - Lambda_ext(T_i), with the external Nelson-Aalen truncated at tau_ext.
inline std::vector<double> external_martingale_target(const ExternalControls& ext) {
  const StepHazard h = ext.baseline_hazard();
  if (h.no_events()) throw Error(ErrorCode::NoEvents, "external cohort has no events before tau");
  std::vector<double> out;
  out.reserve(ext.size());
  for (const auto& s : ext.subjects()) {
    const double dn = (s.event && s.time <= ext.tau()) ? 1.0 : 0.0;
    out.push_back(dn - h(std::min(s.time, ext.tau())));
  }
  return out;
}

/// exp(-Lambda_ext(min(T_i, at_time))): the cumulative-hazard survival
/// transform of each subject's follow-up, capped at at_time.
inline std::vector<double> external_survival_target(const ExternalControls& ext, double at_time) {
  if (!(at_time > 0.0 && at_time <= ext.tau()))
    throw Error(ErrorCode::InvalidTime, "survival target time must lie in (0, tau_ext]");
  const StepHazard h = ext.baseline_hazard();
  std::vector<double> out;
  out.reserve(ext.size());
  for (const auto& s : ext.subjects()) out.push_back(std::exp(-h(std::min(s.time, at_time))));
  return out;
}

/// Covariates -> score. A plain callable so any regressor can be injected.
using Predictor = std::function<double(std::span<const double>)>;
/// Fits a predictor on (features, target).
using RegressorFactory = std::function<Predictor(const Eigen::MatrixXd&, std::span<const double>)>;

struct TrainingSummary {
  std::size_t n = 0;
  std::size_t events = 0;
  double target_mean = 0.0;
  double target_variance = 0.0;
  std::optional<double> oob_r2;
  std::optional<double> at_time;
};

struct ConstantRegressor {
  double value = 0.0;
};

struct CustomRegressor {
  std::string name;
  Predictor predict;
  std::uint64_t data_fingerprint = 0;
};

using Regressor = std::variant<RandomForest, ConstantRegressor, CustomRegressor>;

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class PrognosticModel {
 public:
  PrognosticModel() = default;
  PrognosticModel(TargetSpec target, std::vector<std::string> features, Regressor reg, TrainingSummary summary)
      : target_(target), features_(std::move(features)), regressor_(std::move(reg)), summary_(summary) {}

  double predict(std::span<const double> row) const {
    return std::visit(
        [&](const auto& r) -> double {
          using R = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<R, RandomForest>) return r.predict(row);
          else if constexpr (std::is_same_v<R, ConstantRegressor>) return r.value;
          else return r.predict(row);
        },
        regressor_);
  }

  const TargetSpec& target() const { return target_; }
  const std::vector<std::string>& feature_names() const { return features_; }
  const Regressor& regressor() const { return regressor_; }
  const TrainingSummary& summary() const { return summary_; }
  bool is_constant() const { return std::holds_alternative<ConstantRegressor>(regressor_); }
  const std::string& model_id() const { return model_id_; }
  void set_model_id(std::string id) { model_id_ = std::move(id); }
  std::vector<std::string>& diagnostics() { return diagnostics_; }
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  TargetSpec target_;
  std::vector<std::string> features_;
  Regressor regressor_;
  TrainingSummary summary_;
  std::string model_id_;
  std::vector<std::string> diagnostics_;
};

namespace detail {

inline std::vector<double> training_target(const ExternalControls& ext, TargetSpec& target) {
  if (target.kind == TargetKind::MartingaleResidual) return external_martingale_target(ext);
  if (!target.at_time) target.at_time = std::min(ext.median_follow_up(), ext.tau());
  return external_survival_target(ext, *target.at_time);
}

inline TrainingSummary summarize(const ExternalControls& ext, std::span<const double> y,
                                 const TargetSpec& target) {
  TrainingSummary s;
  s.n = ext.size();
  for (const auto& sub : ext.subjects()) s.events += sub.event ? 1 : 0;
  s.target_mean = mean(y);
  s.target_variance = variance(y);
  s.at_time = target.at_time;
  return s;
}

}  // namespace detail

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.append(p, sizeof(T));
  }
  void put(const std::string& s) {
    put(static_cast<std::uint64_t>(s.size()));
    bytes_ += s;
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

inline std::uint64_t data_fingerprint(const Eigen::MatrixXd& x, std::span<const double> y) {
  ByteWriter w;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index k = 0; k < x.cols(); ++k) w.put(x(i, k));
  for (double v : y) w.put(v);
  return fnv1a64(w.bytes());
}

}  // namespace detail

/// Content hash over target, features, and the fitted regressor, as 16 hex digits.
inline std::string compute_model_id(const PrognosticModel& model) {
  detail::ByteWriter w;
  w.put(std::string("adjsurv-prognostic-v1"));
  w.put(static_cast<int>(model.target().kind));
  w.put(model.target().at_time.value_or(-1.0));
  for (const auto& f : model.feature_names()) w.put(f);
  std::visit(
      [&](const auto& r) {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, RandomForest>) {
          w.put(std::string("forest"));
          const ForestParams& p = r.params();
          w.put(p.n_trees);
          w.put(p.max_depth);
          w.put(p.min_leaf);
          w.put(p.resolved_mtry(r.n_features()));
          w.put(p.bootstrap);
          w.put(p.seed);
          for (const auto& t : r.trees()) {
            w.put(static_cast<std::uint64_t>(t.nodes().size()));
            for (const auto& nd : t.nodes()) {
              w.put(nd.feature);
              w.put(nd.threshold);
              w.put(nd.left);
              w.put(nd.right);
              w.put(nd.value);
            }
          }
        } else if constexpr (std::is_same_v<R, ConstantRegressor>) {
          w.put(std::string("constant"));
          w.put(r.value);
        } else {
          w.put(std::string("custom"));
          w.put(r.name);
          w.put(r.data_fingerprint);
        }
      },
      model.regressor());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(w.bytes())));
  return buf;
}

/// Trains the built-in forest on the chosen target. A zero-variance target
/// yields a constant model with a diagnostic instead of an error.
inline PrognosticModel train(const ExternalControls& ext, TargetSpec target, const ForestParams& params = {}) {
  const std::vector<double> y = detail::training_target(ext, target);
  TrainingSummary summary = detail::summarize(ext, y, target);
  std::vector<std::string> diag = ext.diagnostics();
  PrognosticModel model;
  if (!(summary.target_variance > 0.0) || ext.feature_names().empty()) {
    diag.push_back("training target has zero variance or no features; using a constant predictor");
    model = PrognosticModel(target, ext.feature_names(), ConstantRegressor{summary.target_mean}, summary);
  } else {
    RandomForest forest = RandomForest::fit(ext.feature_matrix(), y, params);
    if (std::isfinite(forest.oob_r2())) summary.oob_r2 = forest.oob_r2();
    model = PrognosticModel(target, ext.feature_names(), std::move(forest), summary);
  }
  model.diagnostics() = std::move(diag);
  model.set_model_id(compute_model_id(model));
  return model;
}

/// Trains an injected regressor. The model id hashes the regressor name and
/// the training data, since the fitted object is opaque.
inline PrognosticModel train(const ExternalControls& ext, TargetSpec target, const RegressorFactory& factory,
                             const std::string& name) {
  const std::vector<double> y = detail::training_target(ext, target);
  TrainingSummary summary = detail::summarize(ext, y, target);
  const Eigen::MatrixXd x = ext.feature_matrix();
  PrognosticModel model(target, ext.feature_names(),
                        CustomRegressor{name, factory(x, y), detail::data_fingerprint(x, y)}, summary);
  model.diagnostics() = ext.diagnostics();
  model.set_model_id(compute_model_id(model));
  return model;
}

/// Scores every trial subject; the data must carry all model features.
inline std::vector<double> score(const PrognosticModel& model, const TrialDataset& data) {
  std::vector<std::size_t> cols;
  std::vector<std::string> missing;
  for (const auto& f : model.feature_names()) {
    auto idx = data.covariate_index(f);
    if (idx) cols.push_back(*idx);
    else missing.push_back(f);
  }
  if (!missing.empty()) {
    std::string msg = "trial data lacks model feature(s):";
    for (const auto& m : missing) msg += " " + m;
    throw Error(ErrorCode::FeatureMismatch, msg);
  }
  std::vector<double> out;
  out.reserve(data.size());
  std::vector<double> row(cols.size());
  for (const auto& s : data.subjects()) {
    for (std::size_t k = 0; k < cols.size(); ++k) row[k] = s.covariates[cols[k]];
    out.push_back(model.predict(row));
  }
  return out;
}

struct RhoEstimate {
  double rho = 0.0;
  std::optional<double> rho_strat;
  std::size_t n_used = 0;
  bool zero_variance = false;
  const char* target_proxy = "trial_martingale";
};

/// Correlation between the score and the trial's pooled Nelson-Aalen
/// martingale residuals; with strata, also the pooled within-stratum
/// correlation against stratum-specific residuals.
inline RhoEstimate estimate_rho(const TrialDataset& data, std::span<const double> scores) {
  if (data.size() < 3) throw Error(ErrorCode::InvalidInput, "need at least 3 subjects to estimate rho");
  if (scores.size() != data.size()) throw Error(ErrorCode::InvalidInput, "one score per subject required");
  RhoEstimate out;
  out.n_used = data.size();
  const auto resid = martingale_residuals(data, nelson_aalen(data));
  out.rho = pearson(scores, resid, &out.zero_variance);
  if (data.stratified()) {
    const auto part = detail::make_partition(data, true);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (const auto& mem : part.members) {
      std::vector<double> t, m_res, sc;
      std::vector<bool> ev;
      for (std::size_t i : mem) {
        t.push_back(data[i].time);
        ev.push_back(data[i].event);
      }
      const StepHazard hz = nelson_aalen(t, ev, data.tau());
      double ms = 0.0, mm = 0.0;
      for (std::size_t i : mem) {
        const double dn = (data[i].event && data[i].time <= data.tau()) ? 1.0 : 0.0;
        m_res.push_back(dn - hz(std::min(data[i].time, data.tau())));
        sc.push_back(scores[i]);
        ms += sc.back();
        mm += m_res.back();
      }
      ms /= static_cast<double>(mem.size());
      mm /= static_cast<double>(mem.size());
      for (std::size_t k = 0; k < mem.size(); ++k) {
        sxy += (sc[k] - ms) * (m_res[k] - mm);
        sxx += (sc[k] - ms) * (sc[k] - ms);
        syy += (m_res[k] - mm) * (m_res[k] - mm);
      }
    }
    out.rho_strat = (sxx > 0.0 && syy > 0.0) ? std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0) : 0.0;
  }
  return out;
}

}  // namespace adjsurv
