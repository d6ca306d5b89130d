#pragma once

// End-to-end synthesis workflow: restrict the evidence base to a target
// meta-analytical estimand, judge feasibility, run the NMA per slice and
// line up results obtained under different targets.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "estnma/estimand.hpp"
#include "estnma/ingest.hpp"
#include "estnma/network.hpp"
#include "estnma/nma.hpp"

namespace estnma {

struct AnalysisConfig {
  std::vector<MetaEstimand> meta_estimands;
  std::vector<std::string> endpoints;
  std::optional<std::string> reference;
  double ci_level = 0.95;

  void validate() const;
};

struct ExcludedContrast {
  std::size_t index;  // into the source base's contrasts
  std::vector<std::string> reasons;
};

struct UsedContrast {
  std::size_t index;
  std::vector<std::string> warnings;  // non-blocking match reasons
};

struct RestrictedEvidence {
  EvidenceBase slice;  // same trials/arms; only matching contrasts
  std::vector<UsedContrast> used;
  std::vector<ExcludedContrast> excluded;
};

/// Keeps the contrasts whose trial estimand matches `meta` and whose
/// endpoint is `endpoint`; everything else is recorded as excluded.
RestrictedEvidence restrict_evidence(const EvidenceBase& base, const MetaEstimand& meta,
                                     std::string_view endpoint);

enum class Feasibility { Feasible, FeasibleWithWarnings, Infeasible };

std::string_view feasibility_name(Feasibility f);

struct FeasibilityItem {
  std::string code;  // e.g. "disconnected", "no_evidence", "timepoint_spread"
  bool blocking;
  std::string message;
};

struct FeasibilityReport {
  std::string meta_label;
  std::string endpoint;
  Feasibility verdict = Feasibility::Infeasible;
  std::vector<FeasibilityItem> items;
  std::optional<AlignmentReport> alignment;  // absent when no trial declares the endpoint
  std::size_t contrasts_used = 0;
  std::size_t contrasts_excluded = 0;
  std::size_t trials_used = 0;
  bool connected = false;
  std::vector<std::vector<std::string>> components;

  bool has(std::string_view code) const;
};

FeasibilityReport feasibility_report(const EvidenceBase& base, const MetaEstimand& meta,
                                     std::string_view endpoint);

struct ProvenanceEntry {
  std::size_t index;
  ContrastEstimate contrast;
  bool used;
  std::vector<std::string> notes;  // exclusion reasons or match warnings
};

struct AnalysisResult {
  std::string meta_label;
  std::string endpoint;
  NmaResult nma;
  FeasibilityReport feasibility;
  std::vector<ProvenanceEntry> provenance;  // one entry per input contrast
  std::vector<std::string> warnings;
};

struct RunOptions {
  std::optional<std::string> reference;  // default: lexicographically smallest node
  double ci_level = 0.95;
  /// Proceed past an infeasible verdict where the maths allows it.
  bool force = false;
};

/// restrict -> feasibility -> network -> GLS -> result. Throws
/// InfeasibleError (without force, or when nothing can be estimated),
/// NumericalError from the solver, std::out_of_range for a bad reference.
AnalysisResult run_analysis(const EvidenceBase& base, const MetaEstimand& meta, std::string_view endpoint,
                            const RunOptions& options = {});

struct LabelledResult {
  std::string label;
  NmaResult result;
};

struct StrategyRow {
  std::string treatment;
  std::string comparator;
  std::vector<Comparison> by_label;  // same order as StrategyComparison::labels
  std::vector<bool> attenuated;      // per label: |md| below the baseline's |md| (baseline: false)
};

struct StrategyComparison {
  std::string endpoint;
  std::vector<std::string> labels;  // labels[0] is the baseline
  std::vector<StrategyRow> rows;

  const StrategyRow* find(std::string_view treatment, std::string_view comparator) const;
};

/// Needs >= 2 results over the same treatment set (DataError otherwise).
StrategyComparison compare_strategies(std::span<const LabelledResult> results, std::string_view endpoint,
                                      double level = 0.95);

}  // namespace estnma
