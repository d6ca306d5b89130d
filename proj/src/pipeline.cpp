#include "estnma/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "estnma/errors.hpp"

namespace estnma {

void AnalysisConfig::validate() const {
  if (meta_estimands.empty()) throw DataError("analysis config: no meta-estimands");
  if (endpoints.empty()) throw DataError("analysis config: no endpoints");
  for (const auto& m : meta_estimands) m.validate();
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw DataError("analysis config: ci_level outside (0, 1)");
}

RestrictedEvidence restrict_evidence(const EvidenceBase& base, const MetaEstimand& meta,
                                     std::string_view endpoint) {
  RestrictedEvidence out;
  out.slice.trials = base.trials;
  out.slice.arm_summaries = base.arm_summaries;
  out.slice.meta_estimands = base.meta_estimands;

  for (std::size_t i = 0; i < base.contrasts.size(); ++i) {
    const auto& c = base.contrasts[i];
    if (c.endpoint != endpoint) {
      out.excluded.push_back({i, {fmt::format("endpoint {} not requested", c.endpoint)}});
      continue;
    }
    if (meta.target.endpoint.name != endpoint) {
      out.excluded.push_back(
          {i, {fmt::format("target {} is defined for endpoint {}", meta.label(), meta.target.endpoint.name)}});
      continue;
    }
    const Estimand* e = base.find_estimand(c.trial_id, c.estimand_label, c.endpoint);
    if (e == nullptr) {
      out.excluded.push_back({i, {fmt::format("trial {} declares no estimand {}", c.trial_id, c.estimand_label)}});
      continue;
    }
    const MatchVerdict v = matches_meta(*e, meta);
    std::vector<std::string> blocking;
    std::vector<std::string> warnings;
    for (const auto& r : v.reasons) (r.blocking ? blocking : warnings).push_back(r.message);
    if (v.compatible) {
      out.used.push_back({i, std::move(warnings)});
      out.slice.contrasts.push_back(c);
    } else {
      out.excluded.push_back({i, std::move(blocking)});
    }
  }
  return out;
}

std::string_view feasibility_name(Feasibility f) {
  switch (f) {
    case Feasibility::Feasible: return "feasible";
    case Feasibility::FeasibleWithWarnings: return "feasible_with_warnings";
    case Feasibility::Infeasible: return "infeasible";
  }
  return "?";
}

bool FeasibilityReport::has(std::string_view code) const {
  return std::ranges::any_of(items, [&](const FeasibilityItem& i) { return i.code == code; });
}

namespace {

struct FeasibilityState {
  FeasibilityReport report;
  RestrictedEvidence restriction;
};

void add_item(FeasibilityReport& r, std::string code, bool blocking, std::string message) {
  const bool dup = std::ranges::any_of(r.items, [&](const FeasibilityItem& i) {
    return i.code == code && i.message == message;
  });
  if (!dup) r.items.push_back({std::move(code), blocking, std::move(message)});
}

FeasibilityState assess(const EvidenceBase& base, const MetaEstimand& meta, std::string_view endpoint) {
  FeasibilityState st;
  FeasibilityReport& rep = st.report;
  rep.meta_label = meta.label();
  rep.endpoint = std::string(endpoint);

  std::vector<LabelledEstimand> declared;
  for (const auto& [id, t] : base.trials) {
    for (const auto& [key, e] : t.estimands) {
      if (key.endpoint == endpoint) declared.push_back({id, e});
    }
  }
  if (!declared.empty()) rep.alignment = heterogeneity_matrix(declared, meta);

  st.restriction = restrict_evidence(base, meta, endpoint);
  const auto& slice = st.restriction.slice;
  rep.contrasts_used = st.restriction.used.size();
  rep.contrasts_excluded = st.restriction.excluded.size();

  if (slice.contrasts.empty()) {
    add_item(rep, "no_evidence", true,
             fmt::format("no contrasts match target {} for endpoint {}", meta.label(), endpoint));
    rep.verdict = Feasibility::Infeasible;
    return st;
  }

  // Non-blocking match reasons, per trial.
  std::set<int> timepoints;
  std::set<std::string> used_trials;
  for (const auto& c : slice.contrasts) {
    used_trials.insert(c.trial_id);
    const Estimand* e = slice.find_estimand(c.trial_id, c.estimand_label, c.endpoint);
    timepoints.insert(e->endpoint.timepoint_weeks);
    for (const auto& r : matches_meta(*e, meta).reasons) {
      if (!r.blocking) add_item(rep, r.code, false, fmt::format("{} ({}): {}", c.trial_id, e->label, r.message));
    }
  }
  rep.trials_used = used_trials.size();
  if (timepoints.size() > 1) {
    add_item(rep, "timepoint_spread", false,
             fmt::format("endpoint timepoints differ: {}", fmt::join(timepoints, ", ")));
  }

  // Trials with evidence on this endpoint that the target filters out entirely.
  std::set<std::string> trials_with_endpoint;
  for (const auto& c : base.contrasts) {
    if (c.endpoint == endpoint) trials_with_endpoint.insert(c.trial_id);
  }
  for (const auto& t : trials_with_endpoint) {
    if (!used_trials.contains(t)) {
      add_item(rep, "trial_excluded", false,
               fmt::format("trial {} has no estimand compatible with {}", t, meta.label()));
    }
  }

  const EvidenceNetwork net = build_network(slice.contrasts);
  rep.connected = is_connected(net);
  rep.components = connected_components(net);
  for (const auto& t : meta.target.treatments) {
    if (!net.contains(t)) {
      add_item(rep, "target_treatment_missing", false,
               fmt::format("target treatment {} has no compatible evidence for endpoint {}", t, endpoint));
    }
  }
  if (!rep.connected) {
    std::vector<std::string> parts;
    for (const auto& comp : rep.components) parts.push_back(fmt::format("{{{}}}", fmt::join(comp, ", ")));
    add_item(rep, "disconnected", true,
             fmt::format("evidence network is disconnected: {}", fmt::join(parts, " | ")));
  }

  std::map<std::string, std::vector<ContrastEstimate>> by_trial;
  for (const auto& c : slice.contrasts) by_trial[c.trial_id].push_back(c);
  for (const auto& [trial, group] : by_trial) {
    const bool mixed = std::ranges::any_of(
        group, [&](const ContrastEstimate& c) { return c.estimand_label != group.front().estimand_label; });
    if (mixed) {
      add_item(rep, "ambiguous_trial_estimand", true,
               fmt::format("trial {} matches the target under several estimands", trial));
      continue;
    }
    try {
      trial_covariance(group, slice.arm_summaries);
    } catch (const DataError& e) {
      add_item(rep, "covariance_unidentifiable", true, e.what());
    } catch (const NumericalError& e) {
      add_item(rep, "covariance_invalid", true, e.what());
    }
  }

  const bool blocking = std::ranges::any_of(rep.items, &FeasibilityItem::blocking);
  if (blocking) {
    rep.verdict = Feasibility::Infeasible;
  } else {
    rep.verdict = rep.items.empty() ? Feasibility::Feasible : Feasibility::FeasibleWithWarnings;
  }
  return st;
}

std::string describe_blocking(const FeasibilityReport& rep) {
  std::vector<std::string> parts;
  for (const auto& i : rep.items) {
    if (i.blocking) parts.push_back(fmt::format("{}: {}", i.code, i.message));
  }
  return fmt::format("analysis of {} / {} is infeasible: {}", rep.meta_label, rep.endpoint,
                     fmt::join(parts, "; "));
}

}  // namespace

FeasibilityReport feasibility_report(const EvidenceBase& base, const MetaEstimand& meta,
                                     std::string_view endpoint) {
  return assess(base, meta, endpoint).report;
}

AnalysisResult run_analysis(const EvidenceBase& base, const MetaEstimand& meta, std::string_view endpoint,
                            const RunOptions& options) {
  FeasibilityState st = assess(base, meta, endpoint);
  AnalysisResult out;
  out.meta_label = meta.label();
  out.endpoint = std::string(endpoint);

  if (st.report.verdict == Feasibility::Infeasible) {
    if (!options.force || st.report.has("no_evidence") || st.report.has("ambiguous_trial_estimand") ||
        st.report.has("covariance_invalid")) {
      throw InfeasibleError(describe_blocking(st.report));
    }
    out.warnings.push_back("forced: " + describe_blocking(st.report));
  }

  std::vector<ContrastEstimate> contrasts = st.restriction.slice.contrasts;
  std::vector<std::size_t> source_index;
  for (const auto& u : st.restriction.used) source_index.push_back(u.index);
  std::set<std::size_t> dropped;

  EvidenceNetwork net = build_network(contrasts);
  if (!st.report.connected) {
    // forced: keep the component holding the reference, else the largest one
    const auto comps = connected_components(net);
    auto chosen = std::ranges::max_element(comps, {}, &std::vector<std::string>::size);
    if (options.reference) {
      const auto hit = std::ranges::find_if(comps, [&](const auto& c) {
        return std::ranges::find(c, *options.reference) != c.end();
      });
      if (hit != comps.end()) chosen = hit;
    }
    std::vector<ContrastEstimate> kept;
    std::vector<std::size_t> kept_index;
    for (std::size_t i = 0; i < contrasts.size(); ++i) {
      if (std::ranges::find(*chosen, contrasts[i].treatment) != chosen->end()) {
        kept.push_back(contrasts[i]);
        kept_index.push_back(source_index[i]);
      } else {
        dropped.insert(source_index[i]);
      }
    }
    out.warnings.push_back(fmt::format("forced: analysing component {{{}}} only", fmt::join(*chosen, ", ")));
    contrasts = std::move(kept);
    source_index = std::move(kept_index);
    net = build_network(contrasts);
  }

  std::string reference;
  if (options.reference) {
    reference = *options.reference;
  } else {
    reference = *std::ranges::min_element(net.nodes());
  }
  if (!net.contains(reference)) {
    throw std::out_of_range(fmt::format("reference '{}' is not in the {} / {} network", reference,
                                        meta.label(), endpoint));
  }

  AssembleOptions assemble_opts;
  assemble_opts.allow_independent_multiarm = options.force;
  if (options.force && st.report.has("covariance_unidentifiable")) {
    out.warnings.push_back("forced: multi-arm contrasts without arm data treated as independent");
  }
  const GlsSystem sys = assemble_gls(net, contrasts, st.restriction.slice, reference, assemble_opts);
  const FixedEffectsFit fit = solve_fixed_effects(sys);
  out.nma = make_result(sys, fit);
  out.warnings.insert(out.warnings.end(), fit.warnings.begin(), fit.warnings.end());
  out.feasibility = std::move(st.report);

  std::map<std::size_t, const UsedContrast*> used;
  for (const auto& u : st.restriction.used) used[u.index] = &u;
  std::map<std::size_t, const ExcludedContrast*> excluded;
  for (const auto& x : st.restriction.excluded) excluded[x.index] = &x;
  for (std::size_t i = 0; i < base.contrasts.size(); ++i) {
    ProvenanceEntry entry{i, base.contrasts[i], false, {}};
    if (dropped.contains(i)) {
      entry.notes = {"outside the analysed network component"};
    } else if (const auto u = used.find(i); u != used.end()) {
      entry.used = true;
      entry.notes = u->second->warnings;
    } else {
      entry.notes = excluded.at(i)->reasons;
    }
    out.provenance.push_back(std::move(entry));
  }
  return out;
}

const StrategyRow* StrategyComparison::find(std::string_view treatment, std::string_view comparator) const {
  for (const auto& r : rows) {
    if (r.treatment == treatment && r.comparator == comparator) return &r;
  }
  return nullptr;
}

StrategyComparison compare_strategies(std::span<const LabelledResult> results, std::string_view endpoint,
                                      double level) {
  if (results.size() < 2) throw DataError("strategy comparison needs at least two results");
  const std::set<std::string> base_set(results[0].result.treatments.begin(), results[0].result.treatments.end());
  for (const auto& r : results) {
    const std::set<std::string> s(r.result.treatments.begin(), r.result.treatments.end());
    if (s != base_set) {
      throw DataError(fmt::format("results '{}' and '{}' cover different treatments", results[0].label, r.label));
    }
  }

  StrategyComparison out;
  out.endpoint = std::string(endpoint);
  for (const auto& r : results) out.labels.push_back(r.label);
  const auto& order = results[0].result.treatments;
  for (const auto& a : order) {
    for (const auto& b : order) {
      if (a == b) continue;
      StrategyRow row;
      row.treatment = a;
      row.comparator = b;
      for (const auto& r : results) row.by_label.push_back(comparison(r.result, a, b, level));
      const double base_abs = std::abs(row.by_label.front().md);
      for (std::size_t k = 0; k < row.by_label.size(); ++k) {
        row.attenuated.push_back(k > 0 && std::abs(row.by_label[k].md) < base_abs);
      }
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace estnma
