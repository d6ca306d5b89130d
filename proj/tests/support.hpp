#pragma once

// Shared test helpers: fixture access, random evidence generators and
// brute-force oracles that do not go through the engine's own code paths.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "estnma/estimand.hpp"
#include "estnma/ingest.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(ESTNMA_FIXTURE_DIR) / name;
}

// 97.5% standard normal quantile to double precision.
inline constexpr double kZ975 = 1.959963984540054;

inline const std::string kRescue = "initiation of anti-diabetic rescue medication";
inline const std::string kDiscontinuation = "premature treatment discontinuation";
inline const std::string kDoseChange = "change in treatment dose";

inline estnma::Estimand make_estimand(std::string label, std::vector<std::string> treatments,
                                      std::string endpoint, int week,
                                      std::vector<std::pair<std::string, estnma::Strategy>> events,
                                      std::string population = "adults with type 2 diabetes",
                                      std::string units = "%-points") {
  estnma::Estimand e;
  e.label = std::move(label);
  e.population = std::move(population);
  e.treatments = {treatments.begin(), treatments.end()};
  e.endpoint = {std::move(endpoint), std::move(units), week, estnma::Direction::LowerIsBetter};
  for (const auto& [name, s] : events) e.ie_handlings.push_back(estnma::IntercurrentEventHandling::make(name, s));
  return e;
}

inline std::string node_name(std::size_t i) { return "t" + std::to_string(i); }

// Evidence generated at arm level: every trial arm has a true mean and a
// sampling variance; contrasts are arm differences against the trial's first arm.
struct RandomArm {
  std::size_t node;
  double mean;
  double variance;
};

struct RandomTrial {
  std::string id;
  std::vector<RandomArm> arms;  // arms[0] is the within-trial baseline
};

struct RandomEvidence {
  std::size_t n_nodes = 0;
  std::vector<RandomTrial> trials;
  estnma::EvidenceBase base;
};

inline estnma::EvidenceBase to_evidence_base(std::size_t n_nodes, const std::vector<RandomTrial>& trials) {
  using namespace estnma;
  EvidenceBase base;
  for (const auto& t : trials) {
    Trial trial;
    trial.id = t.id;
    std::vector<std::string> names;
    for (const auto& a : t.arms) names.push_back(node_name(a.node));
    trial.arms = names;
    trial.estimands[{"main", "y"}] =
        make_estimand("main", names, "y", 12, {{kDiscontinuation, Strategy::Hypothetical}});
    base.trials[t.id] = trial;
    const bool multi = t.arms.size() > 2;
    for (std::size_t k = 1; k < t.arms.size(); ++k) {
      ContrastEstimate c;
      c.trial_id = t.id;
      c.treatment = names[k];
      c.comparator = names[0];
      c.endpoint = "y";
      c.estimand_label = "main";
      c.md = t.arms[k].mean - t.arms[0].mean;
      c.se = std::sqrt(t.arms[k].variance + t.arms[0].variance);
      c.source = SeSource::ReportedSe;
      base.contrasts.push_back(c);
    }
    if (multi) {
      for (std::size_t k = 0; k < t.arms.size(); ++k) {
        ArmSummary a;
        a.trial_id = t.id;
        a.treatment = names[k];
        a.n_randomized = 100;
        a.endpoint = "y";
        a.estimand_label = "main";
        a.mean_change = t.arms[k].mean;
        const double half = kZ975 * std::sqrt(t.arms[k].variance);
        a.ci = {t.arms[k].mean - half, t.arms[k].mean + half, 0.95};
        base.arm_summaries.push_back(a);
      }
    }
  }
  (void)n_nodes;
  return base;
}

// Connected network on up to `max_nodes` nodes and `max_trials` trials,
// mixing 2- and 3-arm designs. A random spanning tree guarantees connectivity.
inline RandomEvidence random_connected_evidence(std::mt19937_64& rng, std::size_t max_nodes = 6,
                                                std::size_t max_trials = 8) {
  std::uniform_int_distribution<std::size_t> n_dist(2, max_nodes);
  std::uniform_real_distribution<double> mean_dist(-3.0, 3.0);
  std::uniform_real_distribution<double> var_dist(0.005, 0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  RandomEvidence ev;
  ev.n_nodes = n_dist(rng);
  const std::size_t n = ev.n_nodes;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  auto make_trial = [&](std::vector<std::size_t> nodes) {
    RandomTrial t;
    t.id = "trial" + std::to_string(ev.trials.size());
    for (const auto v : nodes) t.arms.push_back({v, mean_dist(rng), var_dist(rng)});
    ev.trials.push_back(std::move(t));
  };

  // Spanning tree: each new node joins a random earlier node, sometimes via a 3-arm trial.
  std::size_t i = 1;
  while (i < n && ev.trials.size() < max_trials) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    const std::size_t anchor = order[pick(rng)];
    if (i + 1 < n && unit(rng) < 0.35) {
      make_trial({anchor, order[i], order[i + 1]});
      i += 2;
    } else {
      make_trial({anchor, order[i]});
      i += 1;
    }
  }
  // Attach any remaining nodes with one 3-arm trial per two nodes if the budget ran out.
  while (i < n) {
    if (i + 1 < n) {
      make_trial({order[0], order[i], order[i + 1]});
      i += 2;
    } else {
      make_trial({order[0], order[i]});
      i += 1;
    }
  }
  // Extra trials up to the budget.
  std::uniform_int_distribution<std::size_t> extra_dist(0, max_trials > ev.trials.size() ? max_trials - ev.trials.size() : 0);
  const std::size_t extra = extra_dist(rng);
  std::uniform_int_distribution<std::size_t> node_pick(0, n - 1);
  for (std::size_t k = 0; k < extra; ++k) {
    const bool three = n >= 3 && unit(rng) < 0.4;
    std::vector<std::size_t> nodes;
    while (nodes.size() < (three ? 3u : 2u)) {
      const std::size_t v = node_pick(rng);
      if (std::find(nodes.begin(), nodes.end(), v) == nodes.end()) nodes.push_back(v);
    }
    make_trial(nodes);
  }
  ev.base = to_evidence_base(n, ev.trials);
  return ev;
}

// Dense GLS with explicit inverses, built straight from the arm-level
// generator: parameters are t1..t{n-1} relative to `reference`.
struct OracleFit {
  std::vector<std::string> parameters;
  Eigen::VectorXd theta;
  Eigen::MatrixXd cov;

  double md(const std::string& a, const std::string& b, const std::string& reference) const {
    return value(a, reference) - value(b, reference);
  }
  double se(const std::string& a, const std::string& b, const std::string& reference) const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(theta.size());
    add(w, a, reference, 1.0);
    add(w, b, reference, -1.0);
    return std::sqrt(w.dot(cov * w));
  }

 private:
  double value(const std::string& t, const std::string& reference) const {
    if (t == reference) return 0.0;
    const auto it = std::find(parameters.begin(), parameters.end(), t);
    return theta(it - parameters.begin());
  }
  void add(Eigen::VectorXd& w, const std::string& t, const std::string& reference, double s) const {
    if (t == reference) return;
    const auto it = std::find(parameters.begin(), parameters.end(), t);
    w(it - parameters.begin()) += s;
  }
};

inline OracleFit oracle_gls(std::size_t n_nodes, const std::vector<RandomTrial>& trials, std::size_t reference) {
  std::vector<std::size_t> col(n_nodes, 0);
  OracleFit fit;
  std::size_t p = 0;
  for (std::size_t v = 0; v < n_nodes; ++v) {
    if (v == reference) continue;
    col[v] = p++;
    fit.parameters.push_back(node_name(v));
  }
  std::size_t m = 0;
  for (const auto& t : trials) m += t.arms.size() - 1;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p));
  Eigen::VectorXd y(static_cast<Eigen::Index>(m));
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  Eigen::Index row = 0;
  for (const auto& t : trials) {
    const Eigen::Index start = row;
    const auto& base = t.arms[0];
    for (std::size_t k = 1; k < t.arms.size(); ++k, ++row) {
      const auto& arm = t.arms[k];
      y(row) = arm.mean - base.mean;
      if (arm.node != reference) X(row, static_cast<Eigen::Index>(col[arm.node])) += 1.0;
      if (base.node != reference) X(row, static_cast<Eigen::Index>(col[base.node])) -= 1.0;
    }
    for (Eigen::Index r = start; r < row; ++r) {
      for (Eigen::Index c = start; c < row; ++c) {
        S(r, c) = base.variance;
        if (r == c) S(r, c) += t.arms[static_cast<std::size_t>(r - start) + 1].variance;
      }
    }
  }
  const Eigen::MatrixXd Si = S.inverse();
  fit.cov = (X.transpose() * Si * X).inverse();
  fit.theta = fit.cov * X.transpose() * Si * y;
  return fit;
}

// Union-find connectivity oracle.
inline std::size_t count_components(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::size_t comps = n;
  for (const auto& [u, v] : edges) {
    const auto a = find(u), b = find(v);
    if (a != b) {
      parent[a] = b;
      --comps;
    }
  }
  return comps;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// Case-study base with one trial removed entirely.
inline estnma::EvidenceBase without_trial(const estnma::EvidenceBase& base, const std::string& id) {
  estnma::EvidenceBase out = base;
  out.trials.erase(id);
  std::erase_if(out.contrasts, [&](const auto& c) { return c.trial_id == id; });
  std::erase_if(out.arm_summaries, [&](const auto& a) { return a.trial_id == id; });
  return out;
}

}  // namespace testing
