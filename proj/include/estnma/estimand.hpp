#pragma once

// Typed ICH E9 (R1) estimands and the rules for comparing trial-level
// estimands with each other and with a target meta-analytical estimand.

#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace estnma {

enum class Strategy {
  TreatmentPolicy,
  Hypothetical,
  CompositeVariable,
  WhileOnTreatment,
  PrincipalStratum,
};

/// Parses the file token (treatment_policy, hypothetical, composite,
/// while_on_treatment, principal_stratum). Throws DataError otherwise.
Strategy parse_strategy(std::string_view token);
std::string_view strategy_token(Strategy s);
/// CamelCase name used in human-readable messages.
std::string_view strategy_name(Strategy s);

/// Lowercase, trimmed, internal whitespace collapsed to single spaces.
/// Throws DataError when nothing is left.
std::string canonical_event_name(std::string_view raw);

/// Lowercase + trim + collapse, but empty input is allowed.
std::string normalize_text(std::string_view raw);

struct IntercurrentEventHandling {
  std::string event_name;  // canonical
  Strategy strategy;

  static IntercurrentEventHandling make(std::string_view event_name, Strategy strategy);
  friend bool operator==(const IntercurrentEventHandling&, const IntercurrentEventHandling&) = default;
};

enum class Direction { LowerIsBetter, HigherIsBetter };

Direction parse_direction(std::string_view token);
std::string_view direction_token(Direction d);

struct EndpointSpec {
  std::string name;
  std::string units;
  int timepoint_weeks = 0;
  Direction direction = Direction::LowerIsBetter;

  void validate() const;
  friend bool operator==(const EndpointSpec&, const EndpointSpec&) = default;
};

enum class SummaryMeasure { MeanDifference };

SummaryMeasure parse_summary_measure(std::string_view token);
std::string_view summary_measure_token(SummaryMeasure m);

struct Estimand {
  std::string label;
  std::string population;
  std::set<std::string> treatments;
  EndpointSpec endpoint;
  SummaryMeasure summary_measure = SummaryMeasure::MeanDifference;
  std::vector<IntercurrentEventHandling> ie_handlings;

  /// Throws DataError on a broken invariant.
  void validate() const;
  friend bool operator==(const Estimand&, const Estimand&) = default;
};

enum class MatchingMode { Strict, Lenient };

MatchingMode parse_matching_mode(std::string_view token);
std::string_view matching_mode_token(MatchingMode m);

/// Target meta-analytical estimand: the ideal estimand the pooled
/// evidence should address, plus how tolerant matching against it is.
struct MetaEstimand {
  Estimand target;
  int timepoint_tolerance_weeks = 4;
  MatchingMode matching_mode = MatchingMode::Lenient;

  const std::string& label() const { return target.label; }
  void validate() const;
  friend bool operator==(const MetaEstimand&, const MetaEstimand&) = default;
};

/// A meta-estimand that mirrors `x` exactly (tolerance 0, strict).
MetaEstimand meta_from(const Estimand& x, int tolerance_weeks = 0,
                       MatchingMode mode = MatchingMode::Strict);

/// Declared strategy for an event, or nullopt when the estimand does not
/// list that event. Throws DataError for an empty event name.
std::optional<Strategy> strategy_of(const Estimand& estimand, std::string_view event_name);

enum class Verdict { Identical, Overlapping, Disjoint };

std::string_view verdict_name(Verdict v);

struct EventDifference {
  enum class Kind { OnlyInA, OnlyInB, StrategyDiffers };
  std::string event_name;
  Kind kind;
  std::optional<Strategy> in_a;
  std::optional<Strategy> in_b;
};

struct AttributeDiff {
  Verdict population = Verdict::Identical;
  Verdict treatments = Verdict::Identical;
  Verdict endpoint = Verdict::Identical;
  Verdict summary_measure = Verdict::Identical;
  Verdict ie_strategies = Verdict::Identical;
  bool timepoint_differs = false;
  int timepoint_a = 0;
  int timepoint_b = 0;
  std::vector<EventDifference> events;

  bool all_identical() const;
};

AttributeDiff compare_estimands(const Estimand& a, const Estimand& b);

/// Which estimand attribute a match reason is about.
enum class Attribute { Population, Treatments, Endpoint, SummaryMeasure, IeStrategies };

std::string_view attribute_name(Attribute a);

struct MatchReason {
  std::string code;  // machine-readable, e.g. "strategy_mismatch"
  std::string message;
  Attribute attribute;
  bool blocking;
};

struct MatchVerdict {
  bool compatible = true;
  std::vector<MatchReason> reasons;

  std::vector<std::string> messages() const;
  bool has_reason(std::string_view code) const;
};

MatchVerdict matches_meta(const Estimand& trial_estimand, const MetaEstimand& meta);

enum class CellVerdict { Match, Warning, Mismatch };

std::string_view cell_verdict_name(CellVerdict v);

struct LabelledEstimand {
  std::string trial_id;
  Estimand estimand;
};

struct AlignmentRow {
  std::string trial_id;
  std::string label;
  CellVerdict population = CellVerdict::Match;
  CellVerdict treatments = CellVerdict::Match;
  CellVerdict endpoint = CellVerdict::Match;
  CellVerdict summary_measure = CellVerdict::Match;
  CellVerdict ie_strategies = CellVerdict::Match;
  MatchVerdict verdict;

  CellVerdict cell(Attribute a) const;
};

struct AlignmentReport {
  std::string meta_label;
  std::vector<AlignmentRow> rows;
  bool feasible = false;  // every row compatible
};

/// Cross-trial heterogeneity table against a target. Throws
/// std::invalid_argument on an empty list.
AlignmentReport heterogeneity_matrix(std::span<const LabelledEstimand> estimands,
                                     const MetaEstimand& meta);

}  // namespace estnma
