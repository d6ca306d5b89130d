#pragma once

// Evidence-base data model, file parsing/serialization, and the
// standard-error back-calculations used when trials do not report SEs.

#include <compare>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "estnma/estimand.hpp"

namespace estnma {

struct ConfidenceInterval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;

  friend bool operator==(const ConfidenceInterval&, const ConfidenceInterval&) = default;
};

/// Standard error implied by a normal-theory interval:
/// (upper - lower) / (2 z), z the quantile at (1 + level) / 2.
/// Throws DataError on non-finite bounds, lower >= upper, or level outside (0, 1).
double se_from_ci(double lower, double upper, double level = 0.95);
inline double se_from_ci(const ConfidenceInterval& ci) { return se_from_ci(ci.lower, ci.upper, ci.level); }

struct ArmSummary {
  std::string trial_id;
  std::string treatment;
  int n_randomized = 1;
  std::string endpoint;
  std::string estimand_label;
  double mean_change = 0.0;
  ConfidenceInterval ci;

  double se() const { return se_from_ci(ci); }
  double variance() const;
  void validate() const;
  friend bool operator==(const ArmSummary&, const ArmSummary&) = default;
};

enum class SeSource { ReportedSe, FromCi, FromArms };

std::string_view se_source_token(SeSource s);

struct ContrastEstimate {
  std::string trial_id;
  std::string treatment;
  std::string comparator;
  std::string endpoint;
  std::string estimand_label;
  double md = 0.0;  // treatment minus comparator
  double se = 0.0;
  SeSource source = SeSource::ReportedSe;
  // Interval as reported, kept so the base can be written back unchanged.
  std::optional<ConfidenceInterval> reported_ci;

  void validate() const;
  friend bool operator==(const ContrastEstimate&, const ContrastEstimate&) = default;
};

/// md = a - b, se = sqrt(se_a^2 + se_b^2). Arms must share trial, endpoint
/// and estimand label and differ in treatment; otherwise DataError.
ContrastEstimate contrast_from_arms(const ArmSummary& a, const ArmSummary& b);

struct EstimandKey {
  std::string label;
  std::string endpoint;

  friend auto operator<=>(const EstimandKey&, const EstimandKey&) = default;
};

struct Trial {
  std::string id;
  std::vector<std::string> arms;  // declaration order
  std::map<EstimandKey, Estimand> estimands;

  bool has_arm(std::string_view treatment) const;
  friend bool operator==(const Trial&, const Trial&) = default;
};

struct EvidenceBase {
  std::map<std::string, Trial> trials;
  std::vector<ContrastEstimate> contrasts;
  std::vector<ArmSummary> arm_summaries;
  // Target meta-estimands carried alongside the data (optional section).
  std::vector<MetaEstimand> meta_estimands;

  const Estimand* find_estimand(std::string_view trial_id, std::string_view label,
                                std::string_view endpoint) const;
  const ArmSummary* find_arm(std::string_view trial_id, std::string_view label,
                             std::string_view endpoint, std::string_view treatment) const;
  const MetaEstimand* find_meta(std::string_view label, std::string_view endpoint) const;

  /// Sorted distinct treatment ids over all trial arms.
  std::vector<std::string> treatments() const;
  /// Sorted distinct endpoint keys over estimands and contrasts.
  std::vector<std::string> endpoints() const;
  /// Distinct meta-estimand labels in declaration order.
  std::vector<std::string> meta_labels() const;

  /// Throws DataError naming the first broken invariant.
  void check_invariants() const;
  friend bool operator==(const EvidenceBase&, const EvidenceBase&) = default;
};

EvidenceBase parse_evidence(const std::filesystem::path& path);
/// `source` names the stream in error messages.
EvidenceBase parse_evidence_csv(std::istream& in, std::string_view source = "<csv>");
EvidenceBase parse_evidence_json(const nlohmann::json& doc);
EvidenceBase parse_evidence_json(std::istream& in);

void write_evidence_csv(const EvidenceBase& base, std::ostream& out);
nlohmann::json evidence_to_json(const EvidenceBase& base);

MetaEstimand meta_estimand_from_json(const nlohmann::json& j, std::string_view where);
nlohmann::json meta_estimand_to_json(const MetaEstimand& m);

enum class Severity { Warning, Error };

std::string_view severity_name(Severity s);

struct Issue {
  Severity severity;
  std::string code;
  std::string message;
};

std::vector<Issue> validate_evidence(const EvidenceBase& base);

}  // namespace estnma
