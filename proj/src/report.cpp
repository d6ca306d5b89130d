#include "estnma/report.hpp"

#include <algorithm>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "csv.hpp"

namespace estnma {

using nlohmann::json;

namespace {

std::string full(double v) { return fmt::format("{}", v); }
std::string two(double v) {
  std::string s = fmt::format("{:.2f}", v);
  if (s == "-0.00") s = "0.00";
  return s;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

constexpr Attribute kAttributes[] = {Attribute::Population, Attribute::Treatments, Attribute::Endpoint,
                                     Attribute::SummaryMeasure, Attribute::IeStrategies};

}  // namespace

json comparison_to_json(const Comparison& c) {
  return {{"treatment", c.treatment}, {"comparator", c.comparator}, {"md", c.md},
          {"se", c.se},               {"ci_lower", c.ci_lower},     {"ci_upper", c.ci_upper},
          {"ci_level", c.ci_level}};
}

json nma_result_to_json(const NmaResult& res, double level) {
  json j;
  j["reference"] = res.reference;
  j["treatments"] = res.treatments;
  j["parameters"] = res.parameters;
  j["basic_estimates"] = std::vector<double>(res.basic_estimates.data(),
                                             res.basic_estimates.data() + res.basic_estimates.size());
  j["covariance"] = matrix_to_json(res.covariance);
  j["condition_number"] = res.condition_number;
  j["comparisons"] = json::array();
  for (const auto& c : league_table(res, level)) j["comparisons"].push_back(comparison_to_json(c));
  return j;
}

json alignment_to_json(const AlignmentReport& report) {
  json j;
  j["meta_estimand"] = report.meta_label;
  j["feasible"] = report.feasible;
  j["rows"] = json::array();
  for (const auto& r : report.rows) {
    json row = {{"trial_id", r.trial_id}, {"label", r.label}, {"compatible", r.verdict.compatible}};
    for (const auto a : kAttributes) row[std::string(attribute_name(a))] = cell_verdict_name(r.cell(a));
    row["reasons"] = json::array();
    for (const auto& reason : r.verdict.reasons) {
      row["reasons"].push_back(
          {{"code", reason.code}, {"message", reason.message}, {"blocking", reason.blocking}});
    }
    j["rows"].push_back(std::move(row));
  }
  return j;
}

json feasibility_to_json(const FeasibilityReport& report) {
  json j;
  j["meta_estimand"] = report.meta_label;
  j["endpoint"] = report.endpoint;
  j["verdict"] = feasibility_name(report.verdict);
  j["connected"] = report.connected;
  j["components"] = report.components;
  j["contrasts_used"] = report.contrasts_used;
  j["contrasts_excluded"] = report.contrasts_excluded;
  j["trials_used"] = report.trials_used;
  j["reasons"] = json::array();
  for (const auto& i : report.items) {
    j["reasons"].push_back({{"code", i.code}, {"blocking", i.blocking}, {"message", i.message}});
  }
  j["alignment"] = report.alignment ? alignment_to_json(*report.alignment) : json(nullptr);
  return j;
}

json analysis_to_json(const AnalysisResult& result, double level) {
  json j;
  j["meta_estimand"] = result.meta_label;
  j["endpoint"] = result.endpoint;
  j["result"] = nma_result_to_json(result.nma, level);
  j["feasibility"] = feasibility_to_json(result.feasibility);
  j["warnings"] = result.warnings;
  j["provenance"] = json::array();
  for (const auto& p : result.provenance) {
    j["provenance"].push_back({{"index", p.index},
                               {"trial_id", p.contrast.trial_id},
                               {"estimand_label", p.contrast.estimand_label},
                               {"endpoint", p.contrast.endpoint},
                               {"treatment", p.contrast.treatment},
                               {"comparator", p.contrast.comparator},
                               {"se_source", se_source_token(p.contrast.source)},
                               {"used", p.used},
                               {"notes", p.notes}});
  }
  return j;
}

json strategy_comparison_to_json(const StrategyComparison& sc) {
  json j;
  j["endpoint"] = sc.endpoint;
  j["labels"] = sc.labels;
  j["baseline"] = sc.labels.empty() ? json(nullptr) : json(sc.labels.front());
  j["rows"] = json::array();
  for (const auto& r : sc.rows) {
    json row = {{"treatment", r.treatment}, {"comparator", r.comparator}};
    json by = json::object();
    for (std::size_t k = 0; k < r.by_label.size(); ++k) {
      json c = comparison_to_json(r.by_label[k]);
      c["attenuated"] = static_cast<bool>(r.attenuated[k]);
      by[sc.labels[k]] = std::move(c);
    }
    row["by_estimand"] = std::move(by);
    j["rows"].push_back(std::move(row));
  }
  return j;
}

json network_to_json(const EvidenceNetwork& net) {
  json j;
  j["nodes"] = net.nodes();
  j["edges"] = json::array();
  for (const auto& e : net.edges()) {
    j["edges"].push_back({{"trial_id", e.trial_id},
                          {"treatment", e.treatment},
                          {"comparator", e.comparator},
                          {"weight", e.weight}});
  }
  j["trial_designs"] = net.trial_designs();
  j["connected"] = is_connected(net);
  j["components"] = connected_components(net);
  return j;
}

json issues_to_json(std::span<const Issue> issues) {
  json arr = json::array();
  for (const auto& i : issues) {
    arr.push_back({{"severity", severity_name(i.severity)}, {"code", i.code}, {"message", i.message}});
  }
  return arr;
}

void write_comparisons_csv_header(std::ostream& out) {
  out << "estimand,endpoint,treatment,comparator,md,ci_lower,ci_upper,se\n";
}

void write_comparisons_csv(std::ostream& out, std::string_view estimand, std::string_view endpoint,
                           std::span<const Comparison> rows) {
  for (const auto& c : rows) {
    out << csv::quote_field(estimand) << ',' << csv::quote_field(endpoint) << ','
        << csv::quote_field(c.treatment) << ',' << csv::quote_field(c.comparator) << ',' << full(c.md)
        << ',' << full(c.ci_lower) << ',' << full(c.ci_upper) << ',' << full(c.se) << '\n';
  }
}

void write_strategy_csv_header(std::ostream& out) {
  out << "endpoint,treatment,comparator,estimand,md,ci_lower,ci_upper,se,attenuated\n";
}

void write_strategy_csv(std::ostream& out, const StrategyComparison& sc) {
  for (const auto& r : sc.rows) {
    for (std::size_t k = 0; k < r.by_label.size(); ++k) {
      const auto& c = r.by_label[k];
      out << csv::quote_field(sc.endpoint) << ',' << csv::quote_field(r.treatment) << ','
          << csv::quote_field(r.comparator) << ',' << csv::quote_field(sc.labels[k]) << ',' << full(c.md)
          << ',' << full(c.ci_lower) << ',' << full(c.ci_upper) << ',' << full(c.se) << ','
          << (r.attenuated[k] ? "true" : "false") << '\n';
    }
  }
}

void write_alignment_text(std::ostream& out, const AlignmentReport& report) {
  out << fmt::format("Alignment with target '{}'\n", report.meta_label);
  out << fmt::format("  {:<16} {:<20} {:<10} {:<10} {:<10} {:<10} {:<10} {}\n", "trial", "estimand",
                     "population", "treatment", "endpoint", "summary", "ie", "compatible");
  for (const auto& r : report.rows) {
    out << fmt::format("  {:<16} {:<20} {:<10} {:<10} {:<10} {:<10} {:<10} {}\n", r.trial_id, r.label,
                       cell_verdict_name(r.population), cell_verdict_name(r.treatments),
                       cell_verdict_name(r.endpoint), cell_verdict_name(r.summary_measure),
                       cell_verdict_name(r.ie_strategies), r.verdict.compatible ? "yes" : "no");
  }
}

void write_feasibility_text(std::ostream& out, const FeasibilityReport& report) {
  out << fmt::format("Feasibility for '{}' / {}: {}\n", report.meta_label, report.endpoint,
                     feasibility_name(report.verdict));
  out << fmt::format("  contrasts used {}, excluded {}, trials {}\n", report.contrasts_used,
                     report.contrasts_excluded, report.trials_used);
  for (const auto& i : report.items) {
    out << fmt::format("  [{}] {}: {}\n", i.blocking ? "block" : "warn", i.code, i.message);
  }
}

void write_analysis_text(std::ostream& out, const AnalysisResult& result, double level) {
  out << fmt::format("== Target '{}', endpoint {} (reference {}) ==\n", result.meta_label, result.endpoint,
                     result.nma.reference);
  write_feasibility_text(out, result.feasibility);
  for (const auto& w : result.warnings) out << "  note: " << w << '\n';
  const int pct = static_cast<int>(level * 100.0 + 0.5);
  out << fmt::format("  {:<12} {:<12} {:>8}  {:<18} {:>6}\n", "treatment", "comparator", "MD",
                     fmt::format("{}% CI", pct), "SE");
  for (const auto& c : league_table(result.nma, level)) {
    out << fmt::format("  {:<12} {:<12} {:>8}  {:<18} {:>6}\n", c.treatment, c.comparator, two(c.md),
                       fmt::format("({}, {})", two(c.ci_lower), two(c.ci_upper)), two(c.se));
  }
}

void write_strategy_text(std::ostream& out, const StrategyComparison& sc) {
  out << fmt::format("== Strategy comparison, endpoint {} (baseline '{}') ==\n", sc.endpoint,
                     sc.labels.empty() ? "" : sc.labels.front());
  for (const auto& r : sc.rows) {
    out << fmt::format("  {} vs {}:", r.treatment, r.comparator);
    for (std::size_t k = 0; k < r.by_label.size(); ++k) {
      const auto& c = r.by_label[k];
      out << fmt::format("  {} {} ({}, {}){}", sc.labels[k], two(c.md), two(c.ci_lower), two(c.ci_upper),
                         r.attenuated[k] ? " [attenuated]" : "");
    }
    out << '\n';
  }
}

void write_network_text(std::ostream& out, const EvidenceNetwork& net) {
  const auto comps = connected_components(net);
  out << fmt::format("  nodes ({}): {}\n", net.nodes().size(), fmt::join(net.nodes(), ", "));
  out << fmt::format("  edges: {}\n", net.edges().size());
  for (const auto& e : net.edges()) {
    out << fmt::format("    {}: {} - {} (weight {:.2f})\n", e.trial_id, e.treatment, e.comparator, e.weight);
  }
  out << fmt::format("  connected: {} ({} component{})\n", is_connected(net) ? "yes" : "no", comps.size(),
                     comps.size() == 1 ? "" : "s");
}

}  // namespace estnma
