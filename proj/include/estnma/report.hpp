#pragma once

// Rendering of results: plot-ready CSV tables, structured JSON, and a
// plain-text report (two decimals, as results are usually quoted).

#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "estnma/ingest.hpp"
#include "estnma/network.hpp"
#include "estnma/nma.hpp"
#include "estnma/pipeline.hpp"

namespace estnma {

nlohmann::json comparison_to_json(const Comparison& c);
nlohmann::json nma_result_to_json(const NmaResult& res, double level);
nlohmann::json alignment_to_json(const AlignmentReport& report);
nlohmann::json feasibility_to_json(const FeasibilityReport& report);
nlohmann::json analysis_to_json(const AnalysisResult& result, double level);
nlohmann::json strategy_comparison_to_json(const StrategyComparison& sc);
nlohmann::json network_to_json(const EvidenceNetwork& net);
nlohmann::json issues_to_json(std::span<const Issue> issues);

/// Header: estimand,endpoint,treatment,comparator,md,ci_lower,ci_upper,se
void write_comparisons_csv_header(std::ostream& out);
void write_comparisons_csv(std::ostream& out, std::string_view estimand, std::string_view endpoint,
                           std::span<const Comparison> rows);

/// Long format: endpoint,treatment,comparator,estimand,md,ci_lower,ci_upper,se,attenuated
void write_strategy_csv_header(std::ostream& out);
void write_strategy_csv(std::ostream& out, const StrategyComparison& sc);

void write_alignment_text(std::ostream& out, const AlignmentReport& report);
void write_feasibility_text(std::ostream& out, const FeasibilityReport& report);
void write_analysis_text(std::ostream& out, const AnalysisResult& result, double level);
void write_strategy_text(std::ostream& out, const StrategyComparison& sc);
void write_network_text(std::ostream& out, const EvidenceNetwork& net);

}  // namespace estnma
