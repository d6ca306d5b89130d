#include "estnma/nma.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "estnma/errors.hpp"
#include "estnma/normal.hpp"

namespace estnma {

namespace {

void require_positive_definite(const Eigen::MatrixXd& m, std::string_view what) {
  if (!m.isApprox(m.transpose(), 1e-12)) throw NumericalError(fmt::format("{}: not symmetric", what));
  const Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(fmt::format("{}: not positive definite", what));
  }
}

// Rows over the trial's own arms; used to detect loops inside one trial.
Eigen::Index local_rank(std::span<const ContrastEstimate> contrasts) {
  std::vector<std::string> arms;
  for (const auto& c : contrasts) {
    for (const auto* t : {&c.treatment, &c.comparator}) {
      if (std::ranges::find(arms, *t) == arms.end()) arms.push_back(*t);
    }
  }
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(contrasts.size()),
                                            static_cast<Eigen::Index>(arms.size()));
  for (std::size_t i = 0; i < contrasts.size(); ++i) {
    const auto ti = std::ranges::find(arms, contrasts[i].treatment) - arms.begin();
    const auto ci = std::ranges::find(arms, contrasts[i].comparator) - arms.begin();
    D(static_cast<Eigen::Index>(i), ti) = 1.0;
    D(static_cast<Eigen::Index>(i), ci) = -1.0;
  }
  return Eigen::FullPivLU<Eigen::MatrixXd>(D).rank();
}

}  // namespace

Eigen::MatrixXd trial_covariance(std::span<const ContrastEstimate> contrasts,
                                 std::span<const ArmSummary> arms) {
  if (contrasts.empty()) throw std::invalid_argument("trial_covariance: no contrasts");
  const auto k = static_cast<Eigen::Index>(contrasts.size());
  if (k == 1) {
    Eigen::MatrixXd block(1, 1);
    block(0, 0) = contrasts[0].se * contrasts[0].se;
    return block;
  }

  const std::string& trial = contrasts[0].trial_id;
  if (local_rank(contrasts) < k) {
    throw DataError(fmt::format("trial {}: contrasts form a loop inside the trial; supply one "
                                "contrast per non-baseline arm",
                                trial));
  }

  std::map<std::string, double> arm_var;
  std::vector<std::string> missing;
  for (const auto& c : contrasts) {
    for (const auto* t : {&c.treatment, &c.comparator}) {
      if (arm_var.contains(*t)) continue;
      const auto it = std::ranges::find_if(arms, [&](const ArmSummary& a) {
        return a.trial_id == c.trial_id && a.estimand_label == c.estimand_label &&
               a.endpoint == c.endpoint && a.treatment == *t;
      });
      if (it == arms.end()) {
        if (std::ranges::find(missing, *t) == missing.end()) missing.push_back(*t);
      } else {
        arm_var[*t] = it->variance();
      }
    }
  }
  if (!missing.empty()) {
    throw DataError(fmt::format("trial {}: shared-arm variance unidentifiable (no arm summaries for {})",
                                trial, fmt::join(missing, ", ")));
  }

  auto var_if = [&](const std::string& x, const std::string& y) { return x == y ? arm_var.at(x) : 0.0; };
  Eigen::MatrixXd block(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& a = contrasts[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto& b = contrasts[static_cast<std::size_t>(j)];
      block(i, j) = var_if(a.treatment, b.treatment) - var_if(a.treatment, b.comparator) -
                    var_if(a.comparator, b.treatment) + var_if(a.comparator, b.comparator);
    }
  }
  require_positive_definite(block, fmt::format("trial {} covariance", trial));
  return block;
}

Eigen::MatrixXd trial_covariance(std::span<const ContrastEstimate> contrasts,
                                 const Eigen::MatrixXd& explicit_covariance) {
  const auto k = static_cast<Eigen::Index>(contrasts.size());
  if (explicit_covariance.rows() != k || explicit_covariance.cols() != k) {
    throw DataError(fmt::format("explicit covariance is {}x{}, expected {}x{}", explicit_covariance.rows(),
                                explicit_covariance.cols(), k, k));
  }
  require_positive_definite(explicit_covariance, "explicit covariance");
  return explicit_covariance;
}

GlsSystem assemble_gls(const EvidenceNetwork& net, std::span<const ContrastEstimate> contrasts,
                       const EvidenceBase& base, std::string_view reference,
                       const AssembleOptions& options) {
  if (!net.contains(reference)) {
    throw std::out_of_range(fmt::format("reference '{}' is not in the network", reference));
  }
  if (!is_connected(net)) throw InfeasibleError("evidence network is disconnected");

  GlsSystem sys;
  sys.reference = std::string(reference);
  sys.treatments = net.nodes();
  for (const auto& t : sys.treatments) {
    if (t != reference) sys.parameters.push_back(t);
  }

  for (const auto& e : net.edges()) sys.rows.push_back(e.contrast_index);
  std::ranges::sort(sys.rows, [&](std::size_t a, std::size_t b) {
    const auto& ca = contrasts[a];
    const auto& cb = contrasts[b];
    return std::tie(ca.trial_id, ca.treatment, ca.comparator) < std::tie(cb.trial_id, cb.treatment, cb.comparator);
  });

  const auto m = static_cast<Eigen::Index>(sys.rows.size());
  const auto p = static_cast<Eigen::Index>(sys.parameters.size());
  sys.y.resize(m);
  sys.X = Eigen::MatrixXd::Zero(m, p);
  sys.Sigma = Eigen::MatrixXd::Zero(m, m);

  auto column = [&](const std::string& t) -> std::optional<Eigen::Index> {
    const auto it = std::ranges::find(sys.parameters, t);
    if (it == sys.parameters.end()) return std::nullopt;
    return static_cast<Eigen::Index>(it - sys.parameters.begin());
  };

  for (Eigen::Index r = 0; r < m; ++r) {
    const auto& c = contrasts[sys.rows[static_cast<std::size_t>(r)]];
    sys.y(r) = c.md;
    if (const auto col = column(c.treatment)) sys.X(r, *col) = 1.0;
    if (const auto col = column(c.comparator)) sys.X(r, *col) = -1.0;
  }

  Eigen::Index r = 0;
  while (r < m) {
    const std::string& trial = contrasts[sys.rows[static_cast<std::size_t>(r)]].trial_id;
    std::vector<ContrastEstimate> group;
    Eigen::Index end = r;
    while (end < m && contrasts[sys.rows[static_cast<std::size_t>(end)]].trial_id == trial) {
      group.push_back(contrasts[sys.rows[static_cast<std::size_t>(end)]]);
      ++end;
    }
    for (const auto& g : group) {
      if (g.estimand_label != group.front().estimand_label) {
        throw DataError(fmt::format("trial {} contributes contrasts under several estimands ({}, {})", trial,
                                    group.front().estimand_label, g.estimand_label));
      }
    }
    Eigen::MatrixXd block;
    try {
      block = trial_covariance(group, base.arm_summaries);
    } catch (const DataError&) {
      if (!options.allow_independent_multiarm || local_rank(group) < static_cast<Eigen::Index>(group.size())) {
        throw;
      }
      block = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(group.size()),
                                    static_cast<Eigen::Index>(group.size()));
      for (std::size_t i = 0; i < group.size(); ++i) {
        block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = group[i].se * group[i].se;
      }
    }
    const Eigen::Index k = end - r;
    sys.Sigma.block(r, r, k, k) = block;
    sys.blocks.push_back({trial, r, k});
    r = end;
  }
  return sys;
}

GlsSystem assemble_gls(const EvidenceNetwork& net, const EvidenceBase& base, std::string_view reference,
                       const AssembleOptions& options) {
  return assemble_gls(net, base.contrasts, base, reference, options);
}

FixedEffectsFit solve_fixed_effects(const GlsSystem& sys) {
  const Eigen::Index m = sys.y.size();
  const Eigen::Index p = sys.X.cols();
  if (p == 0) throw NumericalError("no basic parameters to estimate");
  if (m < p) throw NumericalError(fmt::format("rank deficient: {} contrasts for {} parameters", m, p));

  // Whiten block by block: L_b^-1 applied to the rows of each trial.
  Eigen::MatrixXd Xw = sys.X;
  Eigen::VectorXd yw = sys.y;
  for (const auto& b : sys.blocks) {
    const Eigen::MatrixXd S = sys.Sigma.block(b.offset, b.offset, b.size, b.size);
    const Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) {
      throw NumericalError(fmt::format("covariance block of trial {} is not positive definite", b.trial_id));
    }
    Xw.middleRows(b.offset, b.size) = llt.matrixL().solve(sys.X.middleRows(b.offset, b.size));
    yw.segment(b.offset, b.size) = llt.matrixL().solve(sys.y.segment(b.offset, b.size));
  }

  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
  if (qr.rank() < p) {
    throw NumericalError(fmt::format("design matrix is rank deficient (rank {} < {})", qr.rank(), p));
  }

  FixedEffectsFit fit;
  const Eigen::MatrixXd normal = Xw.transpose() * Xw;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  fit.condition_number = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(fit.condition_number <= kConditionFail)) {
    throw NumericalError(fmt::format("normal matrix condition number {:.3g} exceeds {:.0e}; check for "
                                     "near-duplicate or extremely precise contrasts",
                                     fit.condition_number, kConditionFail));
  }
  if (fit.condition_number > kConditionWarn) {
    fit.warnings.push_back(fmt::format("normal matrix is ill conditioned (condition number {:.3g})",
                                       fit.condition_number));
  }

  fit.estimates = qr.solve(yw);
  // (X'S^-1X)^-1 = P R^-1 R^-T P'
  const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd Rinv =
      R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd inner = Rinv * Rinv.transpose();
  const auto& perm = qr.colsPermutation();
  fit.covariance = perm * inner * perm.transpose();
  fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose());
  return fit;
}

bool NmaResult::has_treatment(std::string_view t) const {
  return std::ranges::find(treatments, t) != treatments.end();
}

NmaResult make_result(const GlsSystem& sys, const FixedEffectsFit& fit) {
  NmaResult res;
  res.reference = sys.reference;
  res.treatments = sys.treatments;
  res.parameters = sys.parameters;
  res.basic_estimates = fit.estimates;
  res.covariance = fit.covariance;
  res.condition_number = fit.condition_number;
  res.warnings = fit.warnings;
  return res;
}

Comparison comparison(const NmaResult& res, std::string_view a, std::string_view b, double level) {
  for (const auto t : {a, b}) {
    if (!res.has_treatment(t)) throw std::out_of_range(fmt::format("unknown treatment '{}'", t));
  }
  const auto p = static_cast<Eigen::Index>(res.parameters.size());
  Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
  auto put = [&](std::string_view t, double v) {
    const auto it = std::ranges::find(res.parameters, t);
    if (it != res.parameters.end()) c(it - res.parameters.begin()) += v;  // reference: theta = 0
  };
  put(a, 1.0);
  put(b, -1.0);

  Comparison out;
  out.treatment = std::string(a);
  out.comparator = std::string(b);
  out.md = c.dot(res.basic_estimates);
  out.se = std::sqrt(std::max(0.0, c.dot(res.covariance * c)));
  const double z = critical_value(level);
  out.ci_lower = out.md - z * out.se;
  out.ci_upper = out.md + z * out.se;
  out.ci_level = level;
  return out;
}

std::vector<Comparison> league_table(const NmaResult& res, double level) {
  std::vector<Comparison> out;
  for (const auto& a : res.treatments) {
    for (const auto& b : res.treatments) {
      if (a != b) out.push_back(comparison(res, a, b, level));
    }
  }
  return out;
}

}  // namespace estnma
