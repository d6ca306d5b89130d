#include "estnma/cli.hpp"

#include <algorithm>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include "estnma/errors.hpp"
#include "estnma/ingest.hpp"
#include "estnma/network.hpp"
#include "estnma/pipeline.hpp"
#include "estnma/report.hpp"

namespace estnma {

namespace {

using nlohmann::json;

struct Options {
  std::string input;
  std::vector<std::string> endpoints;
  std::vector<std::string> estimands;
  std::string reference;
  double level = 0.95;
  std::string format = "text";
  bool strict = false;
  bool lenient = false;
  std::optional<int> tolerance;
  bool force = false;
  std::string config;
  std::string output;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-i,--input", o.input, "Evidence file (.csv or .json)")->required();
  cmd->add_option("-e,--endpoint", o.endpoints, "Endpoint filter (repeatable)");
  cmd->add_option("--estimand", o.estimands, "Meta-estimand label filter (repeatable)");
  cmd->add_option("-r,--reference", o.reference, "Reference treatment");
  cmd->add_option("--level", o.level, "Confidence level in (0, 1)")
      ->check(CLI::Validator(
          [](std::string& s) -> std::string {
            const double v = std::stod(s);
            return (v > 0.0 && v < 1.0) ? std::string{} : std::string("level must lie in (0, 1)");
          },
          "(0,1)"));
  cmd->add_option("-f,--format", o.format, "Output format")
      ->check(CLI::IsMember({"text", "csv", "json"}));
  auto* strict = cmd->add_flag("--strict", o.strict, "Strict estimand matching");
  auto* lenient = cmd->add_flag("--lenient", o.lenient, "Lenient estimand matching");
  strict->excludes(lenient);
  cmd->add_option("--tolerance", o.tolerance, "Timepoint tolerance in weeks")
      ->check(CLI::NonNegativeNumber);
  cmd->add_flag("--force", o.force, "Proceed past infeasible verdicts where possible");
  cmd->add_option("--config", o.config, "JSON config: meta_estimands, endpoints, reference, ci_level");
  cmd->add_option("-o,--output", o.output, "Write data output to this file instead of stdout");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("{}: cannot open", path));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("{}: {}", path, e.what()));
  }
}

struct Context {
  EvidenceBase base;
  std::vector<MetaEstimand> metas;
  std::vector<std::string> endpoints;  // explicit filter, possibly empty
  std::optional<std::string> reference;
  double level = 0.95;
};

Context load(const Options& o, const CLI::App& cmd) {
  Context ctx;
  ctx.base = parse_evidence(o.input);
  ctx.metas = ctx.base.meta_estimands;
  ctx.level = o.level;

  if (!o.config.empty()) {
    const json cfg = read_json_file(o.config);
    if (!cfg.is_object()) throw DataError(fmt::format("{}: config must be an object", o.config));
    for (const auto& [key, value] : cfg.items()) {
      if (key != "meta_estimands" && key != "endpoints" && key != "reference" && key != "ci_level") {
        throw DataError(fmt::format("{}: unknown config key '{}'", o.config, key));
      }
    }
    try {
      if (cfg.contains("meta_estimands")) {
        ctx.metas.clear();
        const auto& arr = cfg.at("meta_estimands");
        for (std::size_t k = 0; k < arr.size(); ++k) {
          ctx.metas.push_back(meta_estimand_from_json(arr.at(k), fmt::format("meta_estimands[{}]", k)));
        }
      }
      if (cfg.contains("endpoints")) ctx.endpoints = cfg.at("endpoints").get<std::vector<std::string>>();
      if (cfg.contains("reference")) ctx.reference = cfg.at("reference").get<std::string>();
      if (cfg.contains("ci_level") && cmd.count("--level") == 0) ctx.level = cfg.at("ci_level").get<double>();
    } catch (const json::exception& e) {
      throw DataError(fmt::format("{}: {}", o.config, e.what()));
    }
    if (!(ctx.level > 0.0 && ctx.level < 1.0)) throw DataError(fmt::format("{}: ci_level outside (0, 1)", o.config));
  }

  if (!o.endpoints.empty()) ctx.endpoints = o.endpoints;
  if (!o.reference.empty()) ctx.reference = o.reference;
  for (auto& m : ctx.metas) {
    if (o.strict) m.matching_mode = MatchingMode::Strict;
    if (o.lenient) m.matching_mode = MatchingMode::Lenient;
    if (o.tolerance) m.timepoint_tolerance_weeks = *o.tolerance;
    m.validate();
  }
  return ctx;
}

std::vector<std::string> labels_of(const std::vector<MetaEstimand>& metas) {
  std::vector<std::string> labels;
  for (const auto& m : metas) {
    if (std::find(labels.begin(), labels.end(), m.label()) == labels.end()) labels.push_back(m.label());
  }
  return labels;
}

const MetaEstimand* find_meta(const std::vector<MetaEstimand>& metas, std::string_view label,
                              std::string_view endpoint) {
  for (const auto& m : metas) {
    if (m.label() == label && m.target.endpoint.name == endpoint) return &m;
  }
  return nullptr;
}

struct Slice {
  const MetaEstimand* meta;
  std::string endpoint;
};

// (label, endpoint) pairs in label order, endpoints sorted within a label.
std::vector<Slice> slices_for(const Context& ctx, const std::vector<std::string>& labels) {
  if (ctx.metas.empty()) throw DataError("no meta-estimands declared (add a #meta_estimands section or --config)");
  std::vector<Slice> out;
  for (const auto& label : labels) {
    bool known = false;
    std::vector<std::string> eps;
    for (const auto& m : ctx.metas) {
      if (m.label() != label) continue;
      known = true;
      const auto& ep = m.target.endpoint.name;
      if (!ctx.endpoints.empty() && std::find(ctx.endpoints.begin(), ctx.endpoints.end(), ep) == ctx.endpoints.end()) {
        continue;
      }
      eps.push_back(ep);
    }
    if (!known) throw DataError(fmt::format("unknown meta-estimand '{}'", label));
    for (const auto& ep : ctx.endpoints) {
      if (!find_meta(ctx.metas, label, ep)) {
        throw DataError(fmt::format("meta-estimand '{}' is not defined for endpoint '{}'", label, ep));
      }
    }
    std::sort(eps.begin(), eps.end());
    eps.erase(std::unique(eps.begin(), eps.end()), eps.end());
    for (const auto& ep : eps) out.push_back({find_meta(ctx.metas, label, ep), ep});
  }
  return out;
}

std::vector<std::string> requested_labels(const Options& o, const Context& ctx) {
  return o.estimands.empty() ? labels_of(ctx.metas) : o.estimands;
}

int cmd_validate(const Options& o, const Context& ctx, std::ostream& out, std::ostream& err) {
  const auto issues = validate_evidence(ctx.base);
  const bool ok = std::none_of(issues.begin(), issues.end(),
                               [](const Issue& i) { return i.severity == Severity::Error; });
  if (o.format == "json") {
    json j = {{"valid", ok},
              {"trials", ctx.base.trials.size()},
              {"treatments", ctx.base.treatments()},
              {"endpoints", ctx.base.endpoints()},
              {"contrasts", ctx.base.contrasts.size()},
              {"issues", issues_to_json(issues)}};
    out << j.dump(2) << '\n';
  } else if (o.format == "csv") {
    out << "severity,code,message\n";
    for (const auto& i : issues) {
      out << severity_name(i.severity) << ',' << i.code << ",\"";
      for (const char c : i.message) out << (c == '"' ? std::string("\"\"") : std::string(1, c));
      out << "\"\n";
    }
  } else {
    out << fmt::format("{}: {} trials, {} treatments, {} endpoints, {} contrasts\n", ok ? "valid" : "invalid",
                       ctx.base.trials.size(), ctx.base.treatments().size(), ctx.base.endpoints().size(),
                       ctx.base.contrasts.size());
    for (const auto& i : issues) out << fmt::format("  {} [{}] {}\n", severity_name(i.severity), i.code, i.message);
  }
  for (const auto& i : issues) {
    if (i.severity == Severity::Error) err << "error: " << i.message << '\n';
  }
  return ok ? kExitOk : kExitData;
}

int cmd_network(const Options& o, const Context& ctx, std::ostream& out, std::ostream& err) {
  struct NetSlice {
    std::string estimand;
    std::string endpoint;
    std::vector<ContrastEstimate> contrasts;
  };
  std::vector<NetSlice> nets;
  if (o.estimands.empty()) {
    std::vector<std::string> eps = ctx.endpoints.empty() ? ctx.base.endpoints() : ctx.endpoints;
    for (const auto& ep : eps) {
      NetSlice s{"", ep, {}};
      for (const auto& c : ctx.base.contrasts) {
        if (c.endpoint == ep) s.contrasts.push_back(c);
      }
      nets.push_back(std::move(s));
    }
  } else {
    for (const auto& sl : slices_for(ctx, o.estimands)) {
      auto r = restrict_evidence(ctx.base, *sl.meta, sl.endpoint);
      nets.push_back({sl.meta->label(), sl.endpoint, std::move(r.slice.contrasts)});
    }
  }

  bool all_connected = true;
  json arr = json::array();
  if (o.format == "csv") out << "endpoint,estimand,trial_id,treatment,comparator,weight\n";
  for (const auto& s : nets) {
    if (s.contrasts.empty()) {
      all_connected = false;
      err << fmt::format("error: no contrasts for endpoint '{}'{}\n", s.endpoint,
                         s.estimand.empty() ? "" : fmt::format(" under '{}'", s.estimand));
      if (o.format == "json") {
        arr.push_back({{"endpoint", s.endpoint}, {"estimand", s.estimand}, {"connected", false}, {"nodes", json::array()},
                       {"edges", json::array()}});
      } else if (o.format == "text") {
        out << fmt::format("== Network {}{} ==\n  no contrasts\n", s.endpoint,
                           s.estimand.empty() ? "" : fmt::format(" / {}", s.estimand));
      }
      continue;
    }
    const auto net = build_network(s.contrasts);
    const bool connected = is_connected(net);
    if (!connected) {
      all_connected = false;
      std::vector<std::string> parts;
      for (const auto& comp : connected_components(net)) parts.push_back(fmt::format("{{{}}}", fmt::join(comp, ", ")));
      err << fmt::format("error: network for endpoint '{}'{} is disconnected: {}\n", s.endpoint,
                         s.estimand.empty() ? "" : fmt::format(" under '{}'", s.estimand), fmt::join(parts, " | "));
    }
    if (o.format == "json") {
      json j = network_to_json(net);
      j["endpoint"] = s.endpoint;
      j["estimand"] = s.estimand;
      arr.push_back(std::move(j));
    } else if (o.format == "csv") {
      for (const auto& e : net.edges()) {
        out << fmt::format("{},{},{},{},{},{}\n", s.endpoint, s.estimand, e.trial_id, e.treatment, e.comparator,
                           e.weight);
      }
    } else {
      out << fmt::format("== Network {}{} ==\n", s.endpoint, s.estimand.empty() ? "" : fmt::format(" / {}", s.estimand));
      write_network_text(out, net);
    }
  }
  if (o.format == "json") out << arr.dump(2) << '\n';
  return all_connected ? kExitOk : kExitInfeasible;
}

// Runs one slice; returns nullopt after reporting failure to `err`.
std::optional<AnalysisResult> analyse_slice(const Context& ctx, const Slice& sl, bool force, std::ostream& err,
                                            int& code) {
  RunOptions ro;
  ro.reference = ctx.reference;
  ro.ci_level = ctx.level;
  ro.force = force;
  try {
    auto res = run_analysis(ctx.base, *sl.meta, sl.endpoint, ro);
    for (const auto& i : res.feasibility.items) {
      if (!i.blocking) err << fmt::format("warning: {} / {}: [{}] {}\n", sl.meta->label(), sl.endpoint, i.code, i.message);
    }
    for (const auto& w : res.warnings) err << fmt::format("warning: {} / {}: {}\n", sl.meta->label(), sl.endpoint, w);
    return res;
  } catch (const InfeasibleError& e) {
    err << "error: " << e.what() << '\n';
    code = std::max(code, static_cast<int>(kExitInfeasible));
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    code = std::max(code, static_cast<int>(kExitNumerical));
  }
  return std::nullopt;
}

int cmd_analyze(const Options& o, const Context& ctx, std::ostream& out, std::ostream& err) {
  int code = kExitOk;
  json arr = json::array();
  if (o.format == "csv") write_comparisons_csv_header(out);
  for (const auto& sl : slices_for(ctx, requested_labels(o, ctx))) {
    auto res = analyse_slice(ctx, sl, o.force, err, code);
    if (!res) continue;
    if (o.format == "json") {
      arr.push_back(analysis_to_json(*res, ctx.level));
    } else if (o.format == "csv") {
      const auto table = league_table(res->nma, ctx.level);
      write_comparisons_csv(out, res->meta_label, res->endpoint, table);
    } else {
      write_analysis_text(out, *res, ctx.level);
    }
  }
  if (o.format == "json") out << arr.dump(2) << '\n';
  return code;
}

int cmd_compare(const Options& o, const Context& ctx, std::ostream& out, std::ostream& err) {
  const auto labels = requested_labels(o, ctx);
  if (labels.size() < 2) throw UsageError("compare needs at least two estimand labels");
  const auto slices = slices_for(ctx, labels);
  std::vector<std::string> eps;
  for (const auto& s : slices) {
    if (std::find(eps.begin(), eps.end(), s.endpoint) == eps.end()) eps.push_back(s.endpoint);
  }
  std::sort(eps.begin(), eps.end());

  int code = kExitOk;
  json arr = json::array();
  if (o.format == "csv") write_strategy_csv_header(out);
  for (const auto& ep : eps) {
    std::vector<LabelledResult> results;
    bool complete = true;
    for (const auto& label : labels) {
      const MetaEstimand* meta = find_meta(ctx.metas, label, ep);
      if (!meta) {
        err << fmt::format("error: meta-estimand '{}' is not defined for endpoint '{}'\n", label, ep);
        code = std::max(code, static_cast<int>(kExitData));
        complete = false;
        continue;
      }
      auto res = analyse_slice(ctx, {meta, ep}, o.force, err, code);
      if (!res) {
        complete = false;
        continue;
      }
      results.push_back({label, std::move(res->nma)});
    }
    if (!complete) continue;
    const auto sc = compare_strategies(results, ep, ctx.level);
    if (o.format == "json") {
      arr.push_back(strategy_comparison_to_json(sc));
    } else if (o.format == "csv") {
      write_strategy_csv(out, sc);
    } else {
      write_strategy_text(out, sc);
    }
  }
  if (o.format == "json") out << arr.dump(2) << '\n';
  return code;
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Estimand-aware fixed-effects network meta-analysis", "estnma"};
  app.require_subcommand(1);
  Options o;

  auto* validate = app.add_subcommand("validate", "Parse and check an evidence file");
  auto* network = app.add_subcommand("network", "Build the evidence network and check connectivity");
  auto* analyze = app.add_subcommand("analyze", "Run the NMA per meta-estimand and endpoint");
  auto* compare = app.add_subcommand("compare", "Compare pooled effects across meta-estimands");
  for (auto* cmd : {validate, network, analyze, compare}) add_common(cmd, o);

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();

  std::ofstream file;
  std::ostringstream buffer;
  try {
    const Context ctx = load(o, *cmd);
    int code = kExitOk;
    if (cmd == validate) code = cmd_validate(o, ctx, buffer, err);
    if (cmd == network) code = cmd_network(o, ctx, buffer, err);
    if (cmd == analyze) code = cmd_analyze(o, ctx, buffer, err);
    if (cmd == compare) code = cmd_compare(o, ctx, buffer, err);
    if (o.output.empty()) {
      out << buffer.str();
    } else {
      file.open(o.output, std::ios::binary);
      if (!file) throw DataError(fmt::format("{}: cannot open for writing", o.output));
      file << buffer.str();
    }
    return code;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const InfeasibleError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace estnma
