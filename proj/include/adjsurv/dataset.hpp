#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adjsurv/errors.hpp"

namespace adjsurv {

enum class Arm : int { Control = 0, Treatment = 1 };

constexpr int arm_index(Arm a) { return static_cast<int>(a); }

/// One observed trial record.
struct Subject {
  double time = 0.0;  // follow-up time, event or censoring
  bool event = false;
  Arm arm = Arm::Control;
  std::optional<int> stratum;
  std::vector<double> covariates;

  bool treated() const { return arm == Arm::Treatment; }
};

/// A validated two-arm trial sample with analysis horizon and allocation.
///
/// Every analysis integral runs over [0, tau]; events after tau do not count
/// and subjects followed beyond tau stay at risk through tau.
class TrialDataset {
 public:
  TrialDataset() = default;

  /// Validates and builds. tau defaults to the maximum follow-up time and pi
  /// to the observed treated fraction.
  static TrialDataset make(std::vector<Subject> subjects,
                           std::vector<std::string> covariate_names = {},
                           std::optional<double> tau = std::nullopt,
                           std::optional<double> pi = std::nullopt) {
    TrialDataset d;
    d.subjects_ = std::move(subjects);
    d.names_ = std::move(covariate_names);
    d.validate(tau, pi);
    return d;
  }

  std::span<const Subject> subjects() const { return subjects_; }
  const Subject& operator[](std::size_t i) const { return subjects_[i]; }
  std::size_t size() const { return subjects_.size(); }
  double tau() const { return tau_; }
  double pi() const { return pi_; }
  std::size_t n_treated() const { return n_treated_; }
  double pi_hat() const {
    return static_cast<double>(n_treated_) / static_cast<double>(size());
  }
  bool stratified() const { return !subjects_.empty() && subjects_[0].stratum.has_value(); }
  std::size_t n_covariates() const { return p_; }
  const std::vector<std::string>& covariate_names() const { return names_; }

  std::optional<std::size_t> covariate_index(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
  }

  /// n x p covariate matrix in subject order.
  Eigen::MatrixXd covariate_matrix() const {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(p_));
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t k = 0; k < p_; ++k)
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = subjects_[i].covariates[k];
    return x;
  }

  /// Copy with the stratum labels replaced (or removed when labels is empty).
  TrialDataset with_strata(const std::vector<int>& labels) const {
    std::vector<Subject> s = subjects_;
    for (std::size_t i = 0; i < s.size(); ++i)
      s[i].stratum = labels.empty() ? std::nullopt : std::optional<int>(labels.at(i));
    return make(std::move(s), names_, tau_, pi_);
  }

  TrialDataset with_tau(double tau) const { return make(subjects_, names_, tau, pi_); }

 private:
  void validate(std::optional<double> tau, std::optional<double> pi) {
    if (subjects_.empty())
      throw Error(ErrorCode::EmptyRiskSet, "dataset has no subjects");
    p_ = subjects_[0].covariates.size();
    if (!names_.empty() && names_.size() != p_)
      throw Error(ErrorCode::InvalidInput, "covariate name count does not match covariate length");
    if (names_.empty())
      for (std::size_t k = 0; k < p_; ++k) names_.push_back("x" + std::to_string(k + 1));
    const bool has_stratum = subjects_[0].stratum.has_value();
    n_treated_ = 0;
    std::size_t events = 0;
    double max_time = 0.0;
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
      const Subject& s = subjects_[i];
      if (!std::isfinite(s.time) || s.time < 0.0)
        throw Error(ErrorCode::InvalidInput,
                    "subject " + std::to_string(i) + ": time must be finite and nonnegative");
      if (s.covariates.size() != p_)
        throw Error(ErrorCode::InvalidInput,
                    "subject " + std::to_string(i) + ": covariate length differs from subject 0");
      for (double v : s.covariates)
        if (!std::isfinite(v))
          throw Error(ErrorCode::InvalidInput,
                      "subject " + std::to_string(i) + ": covariate is not finite");
      if (s.stratum.has_value() != has_stratum)
        throw Error(ErrorCode::InvalidInput, "stratum must be present for all subjects or none");
      if (s.treated()) ++n_treated_;
      if (s.event) ++events;
      max_time = std::max(max_time, s.time);
    }
    if (n_treated_ == 0 || n_treated_ == subjects_.size())
      throw Error(ErrorCode::InvalidInput, "each arm needs at least one subject");
    if (events == 0) throw Error(ErrorCode::NoEvents, "dataset has no events");
    tau_ = tau.value_or(max_time);
    if (!(tau_ > 0.0) || !std::isfinite(tau_))
      throw Error(ErrorCode::InvalidInput, "tau must be positive and finite");
    pi_ = pi.value_or(pi_hat());
    if (!(pi_ > 0.0 && pi_ < 1.0))
      throw Error(ErrorCode::InvalidInput, "pi must lie in (0, 1)");
  }

  std::vector<Subject> subjects_;
  std::vector<std::string> names_;
  double tau_ = 0.0;
  double pi_ = 0.5;
  std::size_t n_treated_ = 0;
  std::size_t p_ = 0;
};

/// Covariates handed to the adjustment: a subset of dataset columns, an
/// external score, or both, as an n x p matrix in subject order.
struct CovariateView {
  Eigen::MatrixXd values;
  std::vector<std::string> names;

  Eigen::Index cols() const { return values.cols(); }

  static CovariateView none(std::size_t n) {
    return {Eigen::MatrixXd(static_cast<Eigen::Index>(n), 0), {}};
  }

  static CovariateView all(const TrialDataset& data) {
    return {data.covariate_matrix(), data.covariate_names()};
  }

  static CovariateView columns(const TrialDataset& data, const std::vector<std::string>& names) {
    CovariateView v{Eigen::MatrixXd(static_cast<Eigen::Index>(data.size()),
                                    static_cast<Eigen::Index>(names.size())),
                    names};
    std::vector<std::string> missing;
    for (std::size_t k = 0; k < names.size(); ++k) {
      auto idx = data.covariate_index(names[k]);
      if (!idx) {
        missing.push_back(names[k]);
        continue;
      }
      for (std::size_t i = 0; i < data.size(); ++i)
        v.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
            data[i].covariates[*idx];
    }
    if (!missing.empty()) {
      std::string msg = "unknown covariate columns:";
      for (const auto& m : missing) msg += " " + m;
      throw Error(ErrorCode::FeatureMismatch, msg);
    }
    return v;
  }

  static CovariateView score(std::span<const double> scores, std::string name = "score") {
    CovariateView v{Eigen::MatrixXd(static_cast<Eigen::Index>(scores.size()), 1), {std::move(name)}};
    for (std::size_t i = 0; i < scores.size(); ++i) v.values(static_cast<Eigen::Index>(i), 0) = scores[i];
    return v;
  }

  static CovariateView combine(const CovariateView& a, const CovariateView& b) {
    if (a.values.rows() != b.values.rows())
      throw Error(ErrorCode::InvalidInput, "covariate views have different row counts");
    CovariateView v{Eigen::MatrixXd(a.values.rows(), a.cols() + b.cols()), a.names};
    v.values.leftCols(a.cols()) = a.values;
    v.values.rightCols(b.cols()) = b.values;
    v.names.insert(v.names.end(), b.names.begin(), b.names.end());
    return v;
  }
};

}  // namespace adjsurv
