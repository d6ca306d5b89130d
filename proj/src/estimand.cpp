#include "estnma/estimand.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "estnma/errors.hpp"

namespace estnma {

namespace {

struct StrategyInfo {
  Strategy strategy;
  std::string_view token;
  std::string_view name;
};

constexpr StrategyInfo kStrategies[] = {
    {Strategy::TreatmentPolicy, "treatment_policy", "TreatmentPolicy"},
    {Strategy::Hypothetical, "hypothetical", "Hypothetical"},
    {Strategy::CompositeVariable, "composite", "CompositeVariable"},
    {Strategy::WhileOnTreatment, "while_on_treatment", "WhileOnTreatment"},
    {Strategy::PrincipalStratum, "principal_stratum", "PrincipalStratum"},
};

const StrategyInfo& info(Strategy s) {
  for (const auto& i : kStrategies) {
    if (i.strategy == s) return i;
  }
  throw std::logic_error("unknown strategy enumerator");
}

// Canonical event name -> strategy, tolerant of non-canonical input.
std::map<std::string, Strategy> event_map(const Estimand& e) {
  std::map<std::string, Strategy> out;
  for (const auto& h : e.ie_handlings) out.emplace(canonical_event_name(h.event_name), h.strategy);
  return out;
}

void raise(CellVerdict& cell, const MatchReason& r) {
  const CellVerdict v = r.blocking ? CellVerdict::Mismatch : CellVerdict::Warning;
  if (static_cast<int>(v) > static_cast<int>(cell)) cell = v;
}

}  // namespace

Strategy parse_strategy(std::string_view token) {
  const std::string t = normalize_text(token);
  for (const auto& i : kStrategies) {
    if (t == i.token) return i.strategy;
  }
  throw DataError(fmt::format("unknown intercurrent-event strategy '{}'", token));
}

std::string_view strategy_token(Strategy s) { return info(s).token; }
std::string_view strategy_name(Strategy s) { return info(s).name; }

std::string normalize_text(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (const char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::string canonical_event_name(std::string_view raw) {
  std::string out = normalize_text(raw);
  if (out.empty()) throw DataError("intercurrent event name is empty");
  return out;
}

IntercurrentEventHandling IntercurrentEventHandling::make(std::string_view event_name,
                                                          Strategy strategy) {
  return {canonical_event_name(event_name), strategy};
}

Direction parse_direction(std::string_view token) {
  const std::string t = normalize_text(token);
  if (t == "lower_is_better") return Direction::LowerIsBetter;
  if (t == "higher_is_better") return Direction::HigherIsBetter;
  throw DataError(fmt::format("unknown endpoint direction '{}'", token));
}

std::string_view direction_token(Direction d) {
  return d == Direction::LowerIsBetter ? "lower_is_better" : "higher_is_better";
}

void EndpointSpec::validate() const {
  if (name.empty()) throw DataError("endpoint name is empty");
  if (units.empty()) throw DataError(fmt::format("endpoint '{}': units are empty", name));
  if (timepoint_weeks <= 0) {
    throw DataError(fmt::format("endpoint '{}': timepoint_weeks must be positive", name));
  }
}

SummaryMeasure parse_summary_measure(std::string_view token) {
  const std::string t = normalize_text(token);
  if (t == "mean_difference" || t == "md") return SummaryMeasure::MeanDifference;
  throw DataError(fmt::format("unsupported summary measure '{}'", token));
}

std::string_view summary_measure_token(SummaryMeasure) { return "mean_difference"; }

void Estimand::validate() const {
  if (label.empty()) throw DataError("estimand label is empty");
  if (treatments.size() < 2) {
    throw DataError(fmt::format("estimand '{}': a comparative estimand needs at least two treatments",
                                label));
  }
  endpoint.validate();
  std::set<std::string> seen;
  for (const auto& h : ie_handlings) {
    if (!seen.insert(canonical_event_name(h.event_name)).second) {
      throw DataError(fmt::format("estimand '{}': intercurrent event '{}' declared twice", label,
                                  h.event_name));
    }
  }
}

MatchingMode parse_matching_mode(std::string_view token) {
  const std::string t = normalize_text(token);
  if (t == "strict") return MatchingMode::Strict;
  if (t == "lenient") return MatchingMode::Lenient;
  throw DataError(fmt::format("unknown matching mode '{}'", token));
}

std::string_view matching_mode_token(MatchingMode m) {
  return m == MatchingMode::Strict ? "strict" : "lenient";
}

void MetaEstimand::validate() const {
  target.validate();
  if (timepoint_tolerance_weeks < 0) {
    throw DataError(fmt::format("meta-estimand '{}': negative timepoint tolerance", target.label));
  }
}

MetaEstimand meta_from(const Estimand& x, int tolerance_weeks, MatchingMode mode) {
  return MetaEstimand{x, tolerance_weeks, mode};
}

std::optional<Strategy> strategy_of(const Estimand& estimand, std::string_view event_name) {
  const std::string key = canonical_event_name(event_name);
  for (const auto& h : estimand.ie_handlings) {
    if (canonical_event_name(h.event_name) == key) return h.strategy;
  }
  return std::nullopt;
}

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Identical: return "identical";
    case Verdict::Overlapping: return "overlapping";
    case Verdict::Disjoint: return "disjoint";
  }
  return "?";
}

bool AttributeDiff::all_identical() const {
  return population == Verdict::Identical && treatments == Verdict::Identical &&
         endpoint == Verdict::Identical && summary_measure == Verdict::Identical &&
         ie_strategies == Verdict::Identical && events.empty();
}

AttributeDiff compare_estimands(const Estimand& a, const Estimand& b) {
  AttributeDiff d;

  const std::string pa = normalize_text(a.population);
  const std::string pb = normalize_text(b.population);
  if (pa == pb) {
    d.population = Verdict::Identical;
  } else if (!pa.empty() && !pb.empty() &&
             (pa.find(pb) != std::string::npos || pb.find(pa) != std::string::npos)) {
    d.population = Verdict::Overlapping;
  } else {
    d.population = Verdict::Disjoint;
  }

  std::vector<std::string> common;
  std::ranges::set_intersection(a.treatments, b.treatments, std::back_inserter(common));
  if (a.treatments == b.treatments) {
    d.treatments = Verdict::Identical;
  } else {
    d.treatments = common.empty() ? Verdict::Disjoint : Verdict::Overlapping;
  }

  d.timepoint_a = a.endpoint.timepoint_weeks;
  d.timepoint_b = b.endpoint.timepoint_weeks;
  d.timepoint_differs = d.timepoint_a != d.timepoint_b;
  if (a.endpoint.name != b.endpoint.name || a.endpoint.units != b.endpoint.units) {
    d.endpoint = Verdict::Disjoint;
  } else {
    d.endpoint = d.timepoint_differs ? Verdict::Overlapping : Verdict::Identical;
  }

  d.summary_measure =
      a.summary_measure == b.summary_measure ? Verdict::Identical : Verdict::Disjoint;

  const auto ea = event_map(a);
  const auto eb = event_map(b);
  std::size_t shared_same = 0;
  for (const auto& [name, s] : ea) {
    const auto it = eb.find(name);
    if (it == eb.end()) {
      d.events.push_back({name, EventDifference::Kind::OnlyInA, s, std::nullopt});
    } else if (it->second != s) {
      d.events.push_back({name, EventDifference::Kind::StrategyDiffers, s, it->second});
    } else {
      ++shared_same;
    }
  }
  for (const auto& [name, s] : eb) {
    if (!ea.contains(name)) d.events.push_back({name, EventDifference::Kind::OnlyInB, std::nullopt, s});
  }
  std::ranges::sort(d.events, {}, &EventDifference::event_name);

  if (d.events.empty()) {
    d.ie_strategies = Verdict::Identical;
  } else {
    d.ie_strategies = shared_same > 0 ? Verdict::Overlapping : Verdict::Disjoint;
  }
  return d;
}

std::string_view attribute_name(Attribute a) {
  switch (a) {
    case Attribute::Population: return "population";
    case Attribute::Treatments: return "treatments";
    case Attribute::Endpoint: return "endpoint";
    case Attribute::SummaryMeasure: return "summary_measure";
    case Attribute::IeStrategies: return "ie_strategies";
  }
  return "?";
}

std::vector<std::string> MatchVerdict::messages() const {
  std::vector<std::string> out;
  out.reserve(reasons.size());
  for (const auto& r : reasons) out.push_back(r.message);
  return out;
}

bool MatchVerdict::has_reason(std::string_view code) const {
  return std::ranges::any_of(reasons, [&](const MatchReason& r) { return r.code == code; });
}

MatchVerdict matches_meta(const Estimand& trial, const MetaEstimand& meta) {
  MatchVerdict v;
  const Estimand& target = meta.target;
  auto add = [&v](std::string code, std::string message, Attribute attr, bool blocking) {
    v.reasons.push_back({std::move(code), std::move(message), attr, blocking});
    if (blocking) v.compatible = false;
  };

  if (trial.summary_measure != target.summary_measure) {
    add("summary_measure_mismatch",
        fmt::format("summary measure {} vs target {}", summary_measure_token(trial.summary_measure),
                    summary_measure_token(target.summary_measure)),
        Attribute::SummaryMeasure, true);
  }

  if (trial.endpoint.name != target.endpoint.name || trial.endpoint.units != target.endpoint.units) {
    add("endpoint_mismatch",
        fmt::format("endpoint {} ({}) vs target {} ({})", trial.endpoint.name, trial.endpoint.units,
                    target.endpoint.name, target.endpoint.units),
        Attribute::Endpoint, true);
  } else {
    const int gap = std::abs(trial.endpoint.timepoint_weeks - target.endpoint.timepoint_weeks);
    if (gap > meta.timepoint_tolerance_weeks) {
      add("timepoint_exceeds_tolerance",
          fmt::format("timepoint {} vs {} weeks exceeds tolerance {}", trial.endpoint.timepoint_weeks,
                      target.endpoint.timepoint_weeks, meta.timepoint_tolerance_weeks),
          Attribute::Endpoint, true);
    } else if (gap > 0) {
      add("timepoint_differs",
          fmt::format("timepoint {} vs {} weeks within tolerance {}", trial.endpoint.timepoint_weeks,
                      target.endpoint.timepoint_weeks, meta.timepoint_tolerance_weeks),
          Attribute::Endpoint, false);
    }
  }

  const auto trial_events = event_map(trial);
  const auto target_events = event_map(target);
  std::set<Strategy> target_strategies;
  for (const auto& [name, s] : target_events) {
    target_strategies.insert(s);
    const auto it = trial_events.find(name);
    if (it == trial_events.end()) {
      add("missing_event", fmt::format("event not declared by trial: {} (target {})", name,
                                       strategy_name(s)),
          Attribute::IeStrategies, true);
    } else if (it->second != s) {
      add("strategy_mismatch",
          fmt::format("strategy mismatch: {}: {} vs target {}", name, strategy_name(it->second),
                      strategy_name(s)),
          Attribute::IeStrategies, true);
    }
  }
  for (const auto& [name, s] : trial_events) {
    if (target_events.contains(name)) continue;
    const bool blocking =
        meta.matching_mode == MatchingMode::Strict && !target_strategies.contains(s);
    add("extra_event", fmt::format("extra event: {} ({})", name, strategy_name(s)),
        Attribute::IeStrategies, blocking);
  }

  if (normalize_text(trial.population) != normalize_text(target.population)) {
    add("population_differs",
        fmt::format("population differs from target: '{}'", trial.population),
        Attribute::Population, false);
  }
  std::vector<std::string> outside;
  std::ranges::set_difference(trial.treatments, target.treatments, std::back_inserter(outside));
  if (!outside.empty()) {
    add("treatments_outside_target",
        fmt::format("treatments outside target: {}", fmt::join(outside, ", ")),
        Attribute::Treatments, false);
  }
  return v;
}

std::string_view cell_verdict_name(CellVerdict v) {
  switch (v) {
    case CellVerdict::Match: return "match";
    case CellVerdict::Warning: return "warning";
    case CellVerdict::Mismatch: return "mismatch";
  }
  return "?";
}

CellVerdict AlignmentRow::cell(Attribute a) const {
  switch (a) {
    case Attribute::Population: return population;
    case Attribute::Treatments: return treatments;
    case Attribute::Endpoint: return endpoint;
    case Attribute::SummaryMeasure: return summary_measure;
    case Attribute::IeStrategies: return ie_strategies;
  }
  return CellVerdict::Match;
}

AlignmentReport heterogeneity_matrix(std::span<const LabelledEstimand> estimands,
                                     const MetaEstimand& meta) {
  if (estimands.empty()) throw std::invalid_argument("heterogeneity_matrix: no estimands");
  AlignmentReport report;
  report.meta_label = meta.label();
  report.feasible = true;
  for (const auto& le : estimands) {
    AlignmentRow row;
    row.trial_id = le.trial_id;
    row.label = le.estimand.label;
    row.verdict = matches_meta(le.estimand, meta);
    for (const auto& r : row.verdict.reasons) {
      switch (r.attribute) {
        case Attribute::Population: raise(row.population, r); break;
        case Attribute::Treatments: raise(row.treatments, r); break;
        case Attribute::Endpoint: raise(row.endpoint, r); break;
        case Attribute::SummaryMeasure: raise(row.summary_measure, r); break;
        case Attribute::IeStrategies: raise(row.ie_strategies, r); break;
      }
    }
    report.feasible = report.feasible && row.verdict.compatible;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace estnma
