#pragma once

// Fixed-effects network meta-analysis by generalized least squares.
//
// Each contrast y_i = theta_t - theta_c + e_i with theta_ref = 0. Contrasts
// from the same multi-arm trial share the comparator arm's sampling error,
// so Sigma is block diagonal with one dense block per trial. The estimator is
//   theta = (X' S^-1 X)^-1 X' S^-1 y,   Cov = (X' S^-1 X)^-1.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "estnma/ingest.hpp"
#include "estnma/network.hpp"

namespace estnma {

/// Covariance block for the contrasts of one trial.
///
/// One contrast gives [se^2]. Several contrasts need arm variances v_x
/// (from the arm CIs); then Cov(t1 - c1, t2 - c2) is assembled from shared
/// arms, i.e. v_t + v_c on the diagonal and v_c between contrasts sharing c.
/// Throws DataError when arm variances are missing or the contrasts are
/// linearly dependent.
Eigen::MatrixXd trial_covariance(std::span<const ContrastEstimate> contrasts,
                                 std::span<const ArmSummary> arms);

/// Pass-through of an explicit covariance after shape, symmetry and
/// positive-definiteness checks (NumericalError otherwise).
Eigen::MatrixXd trial_covariance(std::span<const ContrastEstimate> contrasts,
                                 const Eigen::MatrixXd& explicit_covariance);

struct TrialBlock {
  std::string trial_id;
  Eigen::Index offset;
  Eigen::Index size;
};

struct GlsSystem {
  std::string reference;
  std::vector<std::string> treatments;  // network node order
  std::vector<std::string> parameters;  // treatments minus reference
  std::vector<std::size_t> rows;        // contrast index per row of y / X
  std::vector<TrialBlock> blocks;
  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  Eigen::MatrixXd Sigma;
};

struct AssembleOptions {
  /// Treat contrasts of a multi-arm trial as independent when its shared-arm
  /// variance cannot be identified (instead of failing).
  bool allow_independent_multiarm = false;
};

/// Throws InfeasibleError when the network is disconnected, std::out_of_range
/// for an unknown reference, DataError when a covariance block is unavailable.
/// `contrasts` must be the span the network was built from; arm summaries
/// are looked up in `base`.
GlsSystem assemble_gls(const EvidenceNetwork& net, std::span<const ContrastEstimate> contrasts,
                       const EvidenceBase& base, std::string_view reference,
                       const AssembleOptions& options = {});
/// Convenience overload for a base whose contrasts built `net`.
GlsSystem assemble_gls(const EvidenceNetwork& net, const EvidenceBase& base, std::string_view reference,
                       const AssembleOptions& options = {});

struct FixedEffectsFit {
  Eigen::VectorXd estimates;
  Eigen::MatrixXd covariance;
  double condition_number = 1.0;  // of X' S^-1 X
  std::vector<std::string> warnings;
};

inline constexpr double kConditionWarn = 1e8;
inline constexpr double kConditionFail = 1e12;

/// Throws NumericalError on rank deficiency, non-PD Sigma, or a condition
/// number above kConditionFail.
FixedEffectsFit solve_fixed_effects(const GlsSystem& sys);

struct Comparison {
  std::string treatment;
  std::string comparator;
  double md = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double ci_level = 0.95;
};

struct NmaResult {
  std::string reference;
  std::vector<std::string> treatments;  // all nodes, network order
  std::vector<std::string> parameters;  // basic parameters (non-reference)
  Eigen::VectorXd basic_estimates;
  Eigen::MatrixXd covariance;
  double condition_number = 1.0;
  std::vector<std::string> warnings;

  bool has_treatment(std::string_view t) const;
};

NmaResult make_result(const GlsSystem& sys, const FixedEffectsFit& fit);

/// md and se of a vs b, interval at `level`. std::out_of_range on unknown ids.
Comparison comparison(const NmaResult& res, std::string_view a, std::string_view b, double level = 0.95);

/// Every ordered pair (a, b), a != b, in treatment order.
std::vector<Comparison> league_table(const NmaResult& res, double level = 0.95);

}  // namespace estnma
