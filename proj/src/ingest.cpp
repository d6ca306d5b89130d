#include "estnma/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "csv.hpp"
#include "estnma/errors.hpp"
#include "estnma/normal.hpp"

namespace estnma {

using nlohmann::json;

double se_from_ci(double lower, double upper, double level) {
  if (!std::isfinite(lower) || !std::isfinite(upper) || !std::isfinite(level)) {
    throw DataError("confidence interval has non-finite bounds or level");
  }
  if (!(lower < upper)) {
    throw DataError(fmt::format("confidence interval lower bound {} is not below upper bound {}",
                                lower, upper));
  }
  if (!(level > 0.0 && level < 1.0)) {
    throw DataError(fmt::format("confidence level {} outside (0, 1)", level));
  }
  return (upper - lower) / (2.0 * critical_value(level));
}

double ArmSummary::variance() const {
  const double s = se();
  return s * s;
}

void ArmSummary::validate() const {
  if (trial_id.empty() || treatment.empty() || endpoint.empty() || estimand_label.empty()) {
    throw DataError("arm summary has an empty identifier");
  }
  if (n_randomized < 1) {
    throw DataError(fmt::format("arm {}/{}: n_randomized must be >= 1", trial_id, treatment));
  }
  if (!std::isfinite(mean_change)) {
    throw DataError(fmt::format("arm {}/{}: mean_change is not finite", trial_id, treatment));
  }
  se_from_ci(ci);
}

std::string_view se_source_token(SeSource s) {
  switch (s) {
    case SeSource::ReportedSe: return "reported_se";
    case SeSource::FromCi: return "from_ci";
    case SeSource::FromArms: return "from_arms";
  }
  return "?";
}

void ContrastEstimate::validate() const {
  if (trial_id.empty() || treatment.empty() || comparator.empty() || endpoint.empty() ||
      estimand_label.empty()) {
    throw DataError("contrast has an empty identifier");
  }
  if (treatment == comparator) {
    throw DataError(fmt::format("contrast in {}: treatment equals comparator ({})", trial_id, treatment));
  }
  if (!std::isfinite(md)) {
    throw DataError(fmt::format("contrast {} vs {} in {}: md is not finite", treatment, comparator, trial_id));
  }
  if (!(se > 0.0) || !std::isfinite(se)) {
    throw DataError(fmt::format("contrast {} vs {} in {}: se must be positive", treatment, comparator, trial_id));
  }
}

ContrastEstimate contrast_from_arms(const ArmSummary& a, const ArmSummary& b) {
  if (a.trial_id != b.trial_id) {
    throw DataError(fmt::format("arms come from different trials ({}, {})", a.trial_id, b.trial_id));
  }
  if (a.endpoint != b.endpoint) {
    throw DataError(fmt::format("arms measure different endpoints ({}, {})", a.endpoint, b.endpoint));
  }
  if (a.estimand_label != b.estimand_label) {
    throw DataError(fmt::format("arms target different estimands ({}, {})", a.estimand_label,
                                b.estimand_label));
  }
  if (a.treatment == b.treatment) {
    throw DataError(fmt::format("both arms have treatment {}", a.treatment));
  }
  ContrastEstimate c;
  c.trial_id = a.trial_id;
  c.treatment = a.treatment;
  c.comparator = b.treatment;
  c.endpoint = a.endpoint;
  c.estimand_label = a.estimand_label;
  c.md = a.mean_change - b.mean_change;
  c.se = std::sqrt(a.variance() + b.variance());
  c.source = SeSource::FromArms;
  return c;
}

bool Trial::has_arm(std::string_view treatment) const {
  return std::ranges::find(arms, treatment) != arms.end();
}

const Estimand* EvidenceBase::find_estimand(std::string_view trial_id, std::string_view label,
                                            std::string_view endpoint) const {
  const auto t = trials.find(std::string(trial_id));
  if (t == trials.end()) return nullptr;
  const auto e = t->second.estimands.find(EstimandKey{std::string(label), std::string(endpoint)});
  return e == t->second.estimands.end() ? nullptr : &e->second;
}

const ArmSummary* EvidenceBase::find_arm(std::string_view trial_id, std::string_view label,
                                         std::string_view endpoint,
                                         std::string_view treatment) const {
  for (const auto& a : arm_summaries) {
    if (a.trial_id == trial_id && a.estimand_label == label && a.endpoint == endpoint &&
        a.treatment == treatment) {
      return &a;
    }
  }
  return nullptr;
}

const MetaEstimand* EvidenceBase::find_meta(std::string_view label, std::string_view endpoint) const {
  for (const auto& m : meta_estimands) {
    if (m.label() == label && m.target.endpoint.name == endpoint) return &m;
  }
  return nullptr;
}

std::vector<std::string> EvidenceBase::treatments() const {
  std::set<std::string> s;
  for (const auto& [id, t] : trials) s.insert(t.arms.begin(), t.arms.end());
  return {s.begin(), s.end()};
}

std::vector<std::string> EvidenceBase::endpoints() const {
  std::set<std::string> s;
  for (const auto& [id, t] : trials) {
    for (const auto& [key, e] : t.estimands) s.insert(key.endpoint);
  }
  for (const auto& c : contrasts) s.insert(c.endpoint);
  return {s.begin(), s.end()};
}

std::vector<std::string> EvidenceBase::meta_labels() const {
  std::vector<std::string> out;
  for (const auto& m : meta_estimands) {
    if (std::ranges::find(out, m.label()) == out.end()) out.push_back(m.label());
  }
  return out;
}

void EvidenceBase::check_invariants() const {
  for (const auto& [id, t] : trials) {
    if (id != t.id) throw DataError(fmt::format("trial keyed '{}' has id '{}'", id, t.id));
    std::set<std::string> seen;
    for (const auto& a : t.arms) {
      if (!seen.insert(a).second) throw DataError(fmt::format("trial {}: arm {} listed twice", id, a));
    }
    if (t.arms.size() < 2) throw DataError(fmt::format("trial {}: needs at least two arms", id));
    for (const auto& [key, e] : t.estimands) {
      if (key.label != e.label || key.endpoint != e.endpoint.name) {
        throw DataError(fmt::format("trial {}: estimand key ({}, {}) does not match its content", id,
                                    key.label, key.endpoint));
      }
      e.validate();
    }
  }

  auto require_arm = [&](std::string_view trial_id, std::string_view treatment, std::string_view what) {
    const auto t = trials.find(std::string(trial_id));
    if (t == trials.end()) throw DataError(fmt::format("{}: unknown trial '{}'", what, trial_id));
    if (!t->second.has_arm(treatment)) {
      throw DataError(fmt::format("{}: treatment '{}' is not an arm of trial {}", what, treatment, trial_id));
    }
  };

  std::set<std::tuple<std::string, std::string, std::string, std::string, std::string>> keys;
  for (const auto& c : contrasts) {
    const std::string what = fmt::format("contrast {} vs {} ({}, {}, {})", c.treatment, c.comparator,
                                         c.trial_id, c.estimand_label, c.endpoint);
    c.validate();
    require_arm(c.trial_id, c.treatment, what);
    require_arm(c.trial_id, c.comparator, what);
    if (find_estimand(c.trial_id, c.estimand_label, c.endpoint) == nullptr) {
      throw DataError(fmt::format("{}: trial declares no estimand '{}' for endpoint '{}'", what,
                                  c.estimand_label, c.endpoint));
    }
    if (!keys.emplace(c.trial_id, c.treatment, c.comparator, c.endpoint, c.estimand_label).second) {
      throw DataError(fmt::format("duplicate {}", what));
    }
  }

  std::set<std::tuple<std::string, std::string, std::string, std::string>> arm_keys;
  for (const auto& a : arm_summaries) {
    const std::string what = fmt::format("arm summary {} ({}, {}, {})", a.treatment, a.trial_id,
                                         a.estimand_label, a.endpoint);
    a.validate();
    require_arm(a.trial_id, a.treatment, what);
    if (find_estimand(a.trial_id, a.estimand_label, a.endpoint) == nullptr) {
      throw DataError(fmt::format("{}: trial declares no estimand '{}' for endpoint '{}'", what,
                                  a.estimand_label, a.endpoint));
    }
    if (!arm_keys.emplace(a.trial_id, a.treatment, a.endpoint, a.estimand_label).second) {
      throw DataError(fmt::format("duplicate {}", what));
    }
  }

  std::set<std::pair<std::string, std::string>> meta_keys;
  for (const auto& m : meta_estimands) {
    m.validate();
    if (!meta_keys.emplace(m.label(), m.target.endpoint.name).second) {
      throw DataError(fmt::format("duplicate meta-estimand ({}, {})", m.label(), m.target.endpoint.name));
    }
  }
}

namespace {

// ---------------------------------------------------------------------------
// Shared assembly for both file representations.

struct RawTrial {
  std::string id;
  std::vector<std::string> arms;
  std::string where;
};

struct RawEstimand {
  std::string trial_id;
  Estimand estimand;
  bool treatments_given = false;
  std::string where;
};

struct RawContrast {
  ContrastEstimate c;
  std::optional<double> md;
  std::optional<double> se;
  std::string where;
};

class Builder {
 public:
  std::vector<RawTrial> trials;
  std::vector<RawEstimand> estimands;
  std::vector<RawContrast> contrasts;
  std::vector<std::pair<ArmSummary, std::string>> arms;
  std::vector<std::pair<MetaEstimand, std::string>> metas;

  EvidenceBase finish() {
    EvidenceBase base;
    for (auto& t : trials) {
      if (base.trials.contains(t.id)) throw DataError(fmt::format("{}: duplicate trial '{}'", t.where, t.id));
      base.trials.emplace(t.id, Trial{t.id, t.arms, {}});
    }
    for (auto& re : estimands) {
      const auto it = base.trials.find(re.trial_id);
      if (it == base.trials.end()) {
        throw DataError(fmt::format("{}: estimand refers to unknown trial '{}'", re.where, re.trial_id));
      }
      if (!re.treatments_given) re.estimand.treatments = {it->second.arms.begin(), it->second.arms.end()};
      try {
        re.estimand.validate();
      } catch (const DataError& e) {
        throw DataError(fmt::format("{}: {}", re.where, e.what()));
      }
      EstimandKey key{re.estimand.label, re.estimand.endpoint.name};
      if (!it->second.estimands.emplace(key, re.estimand).second) {
        throw DataError(fmt::format("{}: duplicate estimand ({}, {}) for trial {}", re.where, key.label,
                                    key.endpoint, re.trial_id));
      }
    }
    for (auto& [a, where] : arms) {
      try {
        a.validate();
      } catch (const DataError& e) {
        throw DataError(fmt::format("{}: {}", where, e.what()));
      }
      base.arm_summaries.push_back(a);
    }
    for (auto& rc : contrasts) base.contrasts.push_back(derive(base, rc));
    for (auto& [m, where] : metas) {
      try {
        m.validate();
      } catch (const DataError& e) {
        throw DataError(fmt::format("{}: {}", where, e.what()));
      }
      base.meta_estimands.push_back(m);
    }
    base.check_invariants();
    return base;
  }

 private:
  static ContrastEstimate derive(const EvidenceBase& base, RawContrast& rc) {
    ContrastEstimate c = rc.c;
    const ArmSummary* a = base.find_arm(c.trial_id, c.estimand_label, c.endpoint, c.treatment);
    const ArmSummary* b = base.find_arm(c.trial_id, c.estimand_label, c.endpoint, c.comparator);
    try {
      if (rc.md) {
        c.md = *rc.md;
      } else if (a && b) {
        c.md = a->mean_change - b->mean_change;
      } else {
        throw DataError("md is missing and arm summaries for both treatments are not available");
      }
      if (rc.se) {
        c.se = *rc.se;
        c.source = SeSource::ReportedSe;
      } else if (c.reported_ci) {
        c.se = se_from_ci(*c.reported_ci);
        c.source = SeSource::FromCi;
      } else if (a && b) {
        c.se = contrast_from_arms(*a, *b).se;
        c.source = SeSource::FromArms;
      } else {
        throw DataError("no se, no confidence interval, and no arm summaries for both treatments");
      }
      if (c.reported_ci) se_from_ci(*c.reported_ci);
      c.validate();
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}: {}", rc.where, e.what()));
    }
    return c;
  }
};

std::vector<std::string> split_list(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t pos = s.find(sep, start);
    const std::string item = csv::trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (!item.empty()) out.push_back(item);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<IntercurrentEventHandling> parse_ie_list(std::string_view s) {
  std::vector<IntercurrentEventHandling> out;
  for (const auto& item : split_list(s, ';')) {
    const std::size_t colon = item.rfind(':');
    if (colon == std::string::npos) {
      throw DataError(fmt::format("intercurrent event '{}' lacks ':strategy'", item));
    }
    out.push_back(IntercurrentEventHandling::make(item.substr(0, colon),
                                                  parse_strategy(csv::trim(item.substr(colon + 1)))));
  }
  return out;
}

std::string format_ie_list(const std::vector<IntercurrentEventHandling>& ies) {
  std::vector<std::string> parts;
  for (const auto& h : ies) parts.push_back(fmt::format("{}:{}", h.event_name, strategy_token(h.strategy)));
  return fmt::format("{}", fmt::join(parts, ";"));
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) {
    throw DataError(fmt::format("'{}' is not a number", s));
  }
  if (!std::isfinite(v)) throw DataError(fmt::format("'{}' is not finite", s));
  return v;
}

int parse_int(std::string_view s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw DataError(fmt::format("'{}' is not an integer", s));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Tabular (.csv) representation.

struct SectionSchema {
  std::string_view name;
  std::vector<std::string_view> required;
  std::vector<std::string_view> optional;
};

const std::vector<SectionSchema>& schemas() {
  static const std::vector<SectionSchema> s = {
      {"trials", {"trial_id", "arms"}, {}},
      {"estimands",
       {"trial_id", "label", "population", "endpoint_name", "units", "timepoint_weeks",
        "summary_measure", "ie_strategies"},
       {"direction", "treatments"}},
      {"contrasts",
       {"trial_id", "estimand_label", "endpoint_name", "treatment", "comparator"},
       {"md", "se", "ci_lower", "ci_upper", "ci_level"}},
      {"arms",
       {"trial_id", "estimand_label", "endpoint_name", "treatment", "n", "mean_change", "ci_lower",
        "ci_upper"},
       {"ci_level"}},
      {"meta_estimands",
       {"label", "population", "treatments", "endpoint_name", "units", "timepoint_weeks",
        "summary_measure", "ie_strategies"},
       {"direction", "tolerance_weeks", "matching_mode"}},
  };
  return s;
}

class CsvRow {
 public:
  CsvRow(const std::vector<std::string>& header, std::vector<std::string> fields, std::string where)
      : header_(header), fields_(std::move(fields)), where_(std::move(where)) {}

  const std::string& where() const { return where_; }

  std::string_view get(std::string_view col) const {
    for (std::size_t i = 0; i < header_.size(); ++i) {
      if (header_[i] == col) return fields_[i];
    }
    return {};
  }
  std::string text(std::string_view col) const {
    const auto v = get(col);
    if (v.empty()) fail(col, "required value is empty");
    return std::string(v);
  }
  double number(std::string_view col) const { return wrap(col, [&] { return parse_double(text(col)); }); }
  std::optional<double> opt_number(std::string_view col) const {
    if (get(col).empty()) return std::nullopt;
    return number(col);
  }
  int integer(std::string_view col) const { return wrap(col, [&] { return parse_int(text(col)); }); }

  template <class F>
  auto wrap(std::string_view col, F&& f) const -> decltype(f()) {
    try {
      return f();
    } catch (const DataError& e) {
      fail(col, e.what());
    }
  }

  [[noreturn]] void fail(std::string_view col, std::string_view msg) const {
    throw DataError(fmt::format("{}: field '{}': {}", where_, col, msg));
  }

 private:
  const std::vector<std::string>& header_;
  std::vector<std::string> fields_;
  std::string where_;
};

EndpointSpec endpoint_from_row(const CsvRow& r) {
  EndpointSpec ep;
  ep.name = r.text("endpoint_name");
  ep.units = r.text("units");
  ep.timepoint_weeks = r.integer("timepoint_weeks");
  if (!r.get("direction").empty()) {
    ep.direction = r.wrap("direction", [&] { return parse_direction(r.get("direction")); });
  }
  return ep;
}

Estimand estimand_from_row(const CsvRow& r, std::string label) {
  Estimand e;
  e.label = std::move(label);
  e.population = std::string(r.get("population"));
  e.endpoint = endpoint_from_row(r);
  e.summary_measure = r.wrap("summary_measure", [&] { return parse_summary_measure(r.text("summary_measure")); });
  e.ie_handlings = r.wrap("ie_strategies", [&] { return parse_ie_list(r.get("ie_strategies")); });
  const auto tr = split_list(r.get("treatments"), ';');
  e.treatments = {tr.begin(), tr.end()};
  return e;
}

void consume_csv_row(Builder& b, std::string_view section, const CsvRow& r) {
  if (section == "trials") {
    b.trials.push_back({r.text("trial_id"), split_list(r.get("arms"), ';'), r.where()});
  } else if (section == "estimands") {
    RawEstimand re;
    re.trial_id = r.text("trial_id");
    re.estimand = estimand_from_row(r, r.text("label"));
    re.treatments_given = !r.get("treatments").empty();
    re.where = r.where();
    b.estimands.push_back(std::move(re));
  } else if (section == "contrasts") {
    RawContrast rc;
    rc.c.trial_id = r.text("trial_id");
    rc.c.estimand_label = r.text("estimand_label");
    rc.c.endpoint = r.text("endpoint_name");
    rc.c.treatment = r.text("treatment");
    rc.c.comparator = r.text("comparator");
    rc.md = r.opt_number("md");
    rc.se = r.opt_number("se");
    const auto lo = r.opt_number("ci_lower");
    const auto hi = r.opt_number("ci_upper");
    if (lo.has_value() != hi.has_value()) r.fail(lo ? "ci_upper" : "ci_lower", "interval bound missing");
    if (lo) {
      rc.c.reported_ci = ConfidenceInterval{*lo, *hi, r.opt_number("ci_level").value_or(0.95)};
    }
    if (rc.se && !(*rc.se > 0.0)) r.fail("se", "must be positive");
    rc.where = r.where();
    b.contrasts.push_back(std::move(rc));
  } else if (section == "arms") {
    ArmSummary a;
    a.trial_id = r.text("trial_id");
    a.estimand_label = r.text("estimand_label");
    a.endpoint = r.text("endpoint_name");
    a.treatment = r.text("treatment");
    a.n_randomized = r.integer("n");
    a.mean_change = r.number("mean_change");
    a.ci = {r.number("ci_lower"), r.number("ci_upper"), r.opt_number("ci_level").value_or(0.95)};
    b.arms.emplace_back(std::move(a), r.where());
  } else if (section == "meta_estimands") {
    MetaEstimand m;
    m.target = estimand_from_row(r, r.text("label"));
    if (!r.get("tolerance_weeks").empty()) m.timepoint_tolerance_weeks = r.integer("tolerance_weeks");
    if (!r.get("matching_mode").empty()) {
      m.matching_mode = r.wrap("matching_mode", [&] { return parse_matching_mode(r.get("matching_mode")); });
    }
    b.metas.emplace_back(std::move(m), r.where());
  }
}

// ---------------------------------------------------------------------------
// Structured (.json) representation.

class JsonField {
 public:
  JsonField(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw DataError(fmt::format("{}: expected an object", where_));
  }
  bool has(std::string_view k) const {
    const auto it = obj_.find(std::string(k));
    return it != obj_.end() && !it->is_null() && !(it->is_string() && it->get<std::string>().empty());
  }
  std::string text(std::string_view k) const {
    const auto& v = at(k);
    if (!v.is_string() || v.get<std::string>().empty()) fail(k, "expected a nonempty string");
    return v.get<std::string>();
  }
  std::string opt_text(std::string_view k) const { return has(k) ? text(k) : std::string(); }
  double number(std::string_view k) const {
    const auto& v = at(k);
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      try {
        return parse_double(v.get<std::string>());
      } catch (const DataError& e) {
        fail(k, e.what());
      }
    }
    fail(k, "expected a number");
  }
  std::optional<double> opt_number(std::string_view k) const {
    if (!has(k)) return std::nullopt;
    return number(k);
  }
  int integer(std::string_view k) const {
    const auto& v = at(k);
    if (!v.is_number_integer()) fail(k, "expected an integer");
    return v.get<int>();
  }
  std::vector<std::string> strings(std::string_view k) const {
    if (!has(k)) return {};
    const auto& v = at(k);
    if (v.is_string()) return split_list(v.get<std::string>(), ';');
    if (!v.is_array()) fail(k, "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& s : v) {
      if (!s.is_string()) fail(k, "expected an array of strings");
      out.push_back(s.get<std::string>());
    }
    return out;
  }
  const json& at(std::string_view k) const {
    const auto it = obj_.find(std::string(k));
    if (it == obj_.end() || it->is_null()) fail(k, "missing");
    return *it;
  }
  template <class F>
  auto wrap(std::string_view k, F&& f) const -> decltype(f()) {
    try {
      return f();
    } catch (const DataError& e) {
      fail(k, e.what());
    }
  }
  [[noreturn]] void fail(std::string_view k, std::string_view msg) const {
    throw DataError(fmt::format("{}.{}: {}", where_, k, msg));
  }
  const std::string& where() const { return where_; }

 private:
  const json& obj_;
  std::string where_;
};

std::vector<IntercurrentEventHandling> ie_from_json(const JsonField& f) {
  if (!f.has("ie_strategies")) return {};
  const json& v = f.at("ie_strategies");
  if (v.is_string()) return f.wrap("ie_strategies", [&] { return parse_ie_list(v.get<std::string>()); });
  if (!v.is_array()) f.fail("ie_strategies", "expected an array");
  std::vector<IntercurrentEventHandling> out;
  std::size_t i = 0;
  for (const auto& item : v) {
    JsonField g(item, fmt::format("{}.ie_strategies[{}]", f.where(), i++));
    const std::string strategy = g.text("strategy");
    out.push_back(g.wrap("event", [&] {
      return IntercurrentEventHandling::make(g.text("event"), parse_strategy(strategy));
    }));
  }
  return out;
}

Estimand estimand_from_json(const JsonField& f) {
  Estimand e;
  e.label = f.text("label");
  e.population = f.opt_text("population");
  e.endpoint.name = f.text("endpoint_name");
  e.endpoint.units = f.text("units");
  e.endpoint.timepoint_weeks = f.integer("timepoint_weeks");
  if (f.has("direction")) {
    e.endpoint.direction = f.wrap("direction", [&] { return parse_direction(f.text("direction")); });
  }
  e.summary_measure = f.wrap("summary_measure", [&] { return parse_summary_measure(f.text("summary_measure")); });
  e.ie_handlings = ie_from_json(f);
  const auto tr = f.strings("treatments");
  e.treatments = {tr.begin(), tr.end()};
  return e;
}

const json& json_array(const json& doc, std::string_view key) {
  static const json empty = json::array();
  const auto it = doc.find(std::string(key));
  if (it == doc.end() || it->is_null()) return empty;
  if (!it->is_array()) throw DataError(fmt::format("{}: expected an array", key));
  return *it;
}

json ie_to_json(const std::vector<IntercurrentEventHandling>& ies) {
  json arr = json::array();
  for (const auto& h : ies) arr.push_back({{"event", h.event_name}, {"strategy", strategy_token(h.strategy)}});
  return arr;
}

void write_csv_line(std::ostream& out, std::initializer_list<std::string> fields) {
  bool first = true;
  for (const auto& f : fields) {
    if (!first) out << ',';
    out << csv::quote_field(f);
    first = false;
  }
  out << '\n';
}

std::string num(double v) { return fmt::format("{}", v); }

}  // namespace

EvidenceBase parse_evidence_csv(std::istream& in, std::string_view source) {
  Builder b;
  std::string line;
  int lineno = 0;
  const SectionSchema* schema = nullptr;
  std::vector<std::string> header;
  bool need_header = false;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    const std::string trimmed = csv::trim(line);
    if (trimmed.empty()) continue;
    const std::string where = fmt::format("{}:{}", source, lineno);

    if (trimmed.front() == '#') {
      if (trimmed.size() == 1 || std::isspace(static_cast<unsigned char>(trimmed[1]))) continue;  // comment
      const std::string name = normalize_text(trimmed.substr(1));
      const auto it = std::ranges::find(schemas(), name, &SectionSchema::name);
      if (it == schemas().end()) throw DataError(fmt::format("{}: unknown section '#{}'", where, name));
      schema = &*it;
      need_header = true;
      continue;
    }
    if (schema == nullptr) throw DataError(fmt::format("{}: data before any '#section' tag", where));

    std::vector<std::string> fields;
    try {
      fields = csv::split_record(line);
    } catch (const std::invalid_argument& e) {
      throw DataError(fmt::format("{}: {}", where, e.what()));
    }

    if (need_header) {
      header.clear();
      for (const auto& f : fields) {
        const std::string col = normalize_text(f);
        const bool known = std::ranges::find(schema->required, col) != schema->required.end() ||
                           std::ranges::find(schema->optional, col) != schema->optional.end();
        if (!known) throw DataError(fmt::format("{}: unknown column '{}' in #{}", where, col, schema->name));
        if (std::ranges::find(header, col) != header.end()) {
          throw DataError(fmt::format("{}: column '{}' repeated", where, col));
        }
        header.push_back(col);
      }
      for (const auto& req : schema->required) {
        if (std::ranges::find(header, req) == header.end()) {
          throw DataError(fmt::format("{}: #{} header lacks required column '{}'", where, schema->name, req));
        }
      }
      need_header = false;
      continue;
    }

    if (fields.size() != header.size()) {
      throw DataError(fmt::format("{}: expected {} fields in #{} row, found {}", where, header.size(),
                                  schema->name, fields.size()));
    }
    consume_csv_row(b, schema->name, CsvRow(header, std::move(fields), where));
  }
  return b.finish();
}

EvidenceBase parse_evidence_json(const json& doc) {
  if (!doc.is_object()) throw DataError("evidence document must be a JSON object");
  Builder b;
  std::size_t i = 0;
  for (const auto& t : json_array(doc, "trials")) {
    JsonField f(t, fmt::format("trials[{}]", i++));
    b.trials.push_back({f.text("trial_id"), f.strings("arms"), f.where()});
  }
  i = 0;
  for (const auto& e : json_array(doc, "estimands")) {
    JsonField f(e, fmt::format("estimands[{}]", i++));
    RawEstimand re;
    re.trial_id = f.text("trial_id");
    re.estimand = estimand_from_json(f);
    re.treatments_given = f.has("treatments");
    re.where = f.where();
    b.estimands.push_back(std::move(re));
  }
  i = 0;
  for (const auto& c : json_array(doc, "contrasts")) {
    JsonField f(c, fmt::format("contrasts[{}]", i++));
    RawContrast rc;
    rc.c.trial_id = f.text("trial_id");
    rc.c.estimand_label = f.text("estimand_label");
    rc.c.endpoint = f.text("endpoint_name");
    rc.c.treatment = f.text("treatment");
    rc.c.comparator = f.text("comparator");
    rc.md = f.opt_number("md");
    rc.se = f.opt_number("se");
    const auto lo = f.opt_number("ci_lower");
    const auto hi = f.opt_number("ci_upper");
    if (lo.has_value() != hi.has_value()) f.fail(lo ? "ci_upper" : "ci_lower", "interval bound missing");
    if (lo) rc.c.reported_ci = ConfidenceInterval{*lo, *hi, f.opt_number("ci_level").value_or(0.95)};
    if (rc.se && !(*rc.se > 0.0)) f.fail("se", "must be positive");
    rc.where = f.where();
    b.contrasts.push_back(std::move(rc));
  }
  i = 0;
  for (const auto& a : json_array(doc, "arms")) {
    JsonField f(a, fmt::format("arms[{}]", i++));
    ArmSummary s;
    s.trial_id = f.text("trial_id");
    s.estimand_label = f.text("estimand_label");
    s.endpoint = f.text("endpoint_name");
    s.treatment = f.text("treatment");
    s.n_randomized = f.integer("n");
    s.mean_change = f.number("mean_change");
    s.ci = {f.number("ci_lower"), f.number("ci_upper"), f.opt_number("ci_level").value_or(0.95)};
    b.arms.emplace_back(std::move(s), f.where());
  }
  i = 0;
  for (const auto& m : json_array(doc, "meta_estimands")) {
    const std::string where = fmt::format("meta_estimands[{}]", i++);
    b.metas.emplace_back(meta_estimand_from_json(m, where), where);
  }
  return b.finish();
}

EvidenceBase parse_evidence_json(std::istream& in) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("malformed JSON: {}", e.what()));
  }
  return parse_evidence_json(doc);
}

EvidenceBase parse_evidence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  std::string ext = path.extension().string();
  std::ranges::transform(ext, ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".json") return parse_evidence_json(in);
  if (ext == ".csv") return parse_evidence_csv(in, path.filename().string());
  throw DataError(fmt::format("'{}': unsupported extension (expected .csv or .json)", path.string()));
}

MetaEstimand meta_estimand_from_json(const json& j, std::string_view where) {
  JsonField f(j, std::string(where));
  MetaEstimand m;
  m.target = estimand_from_json(f);
  if (f.has("tolerance_weeks")) m.timepoint_tolerance_weeks = f.integer("tolerance_weeks");
  if (f.has("matching_mode")) {
    m.matching_mode = f.wrap("matching_mode", [&] { return parse_matching_mode(f.text("matching_mode")); });
  }
  return m;
}

json meta_estimand_to_json(const MetaEstimand& m) {
  return {
      {"label", m.target.label},
      {"population", m.target.population},
      {"treatments", std::vector<std::string>(m.target.treatments.begin(), m.target.treatments.end())},
      {"endpoint_name", m.target.endpoint.name},
      {"units", m.target.endpoint.units},
      {"timepoint_weeks", m.target.endpoint.timepoint_weeks},
      {"direction", direction_token(m.target.endpoint.direction)},
      {"summary_measure", summary_measure_token(m.target.summary_measure)},
      {"ie_strategies", ie_to_json(m.target.ie_handlings)},
      {"tolerance_weeks", m.timepoint_tolerance_weeks},
      {"matching_mode", matching_mode_token(m.matching_mode)},
  };
}

void write_evidence_csv(const EvidenceBase& base, std::ostream& out) {
  auto join = [](const auto& range) { return fmt::format("{}", fmt::join(range, ";")); };

  out << "#trials\n";
  write_csv_line(out, {"trial_id", "arms"});
  for (const auto& [id, t] : base.trials) write_csv_line(out, {id, join(t.arms)});

  out << "\n#estimands\n";
  write_csv_line(out, {"trial_id", "label", "population", "endpoint_name", "units", "timepoint_weeks",
                       "direction", "summary_measure", "ie_strategies", "treatments"});
  for (const auto& [id, t] : base.trials) {
    for (const auto& [key, e] : t.estimands) {
      write_csv_line(out, {id, e.label, e.population, e.endpoint.name, e.endpoint.units,
                           std::to_string(e.endpoint.timepoint_weeks),
                           std::string(direction_token(e.endpoint.direction)),
                           std::string(summary_measure_token(e.summary_measure)),
                           format_ie_list(e.ie_handlings), join(e.treatments)});
    }
  }

  out << "\n#contrasts\n";
  write_csv_line(out, {"trial_id", "estimand_label", "endpoint_name", "treatment", "comparator", "md",
                       "se", "ci_lower", "ci_upper", "ci_level"});
  for (const auto& c : base.contrasts) {
    const auto& ci = c.reported_ci;
    write_csv_line(out, {c.trial_id, c.estimand_label, c.endpoint, c.treatment, c.comparator, num(c.md),
                         c.source == SeSource::ReportedSe ? num(c.se) : std::string(),
                         ci ? num(ci->lower) : std::string(), ci ? num(ci->upper) : std::string(),
                         ci ? num(ci->level) : std::string()});
  }

  out << "\n#arms\n";
  write_csv_line(out, {"trial_id", "estimand_label", "endpoint_name", "treatment", "n", "mean_change",
                       "ci_lower", "ci_upper", "ci_level"});
  for (const auto& a : base.arm_summaries) {
    write_csv_line(out, {a.trial_id, a.estimand_label, a.endpoint, a.treatment,
                         std::to_string(a.n_randomized), num(a.mean_change), num(a.ci.lower),
                         num(a.ci.upper), num(a.ci.level)});
  }

  if (!base.meta_estimands.empty()) {
    out << "\n#meta_estimands\n";
    write_csv_line(out, {"label", "population", "treatments", "endpoint_name", "units", "timepoint_weeks",
                         "direction", "summary_measure", "ie_strategies", "tolerance_weeks",
                         "matching_mode"});
    for (const auto& m : base.meta_estimands) {
      const Estimand& e = m.target;
      write_csv_line(out, {e.label, e.population, join(e.treatments), e.endpoint.name, e.endpoint.units,
                           std::to_string(e.endpoint.timepoint_weeks),
                           std::string(direction_token(e.endpoint.direction)),
                           std::string(summary_measure_token(e.summary_measure)),
                           format_ie_list(e.ie_handlings), std::to_string(m.timepoint_tolerance_weeks),
                           std::string(matching_mode_token(m.matching_mode))});
    }
  }
}

json evidence_to_json(const EvidenceBase& base) {
  json doc = json::object();
  doc["trials"] = json::array();
  doc["estimands"] = json::array();
  for (const auto& [id, t] : base.trials) {
    doc["trials"].push_back({{"trial_id", id}, {"arms", t.arms}});
    for (const auto& [key, e] : t.estimands) {
      doc["estimands"].push_back({
          {"trial_id", id},
          {"label", e.label},
          {"population", e.population},
          {"treatments", std::vector<std::string>(e.treatments.begin(), e.treatments.end())},
          {"endpoint_name", e.endpoint.name},
          {"units", e.endpoint.units},
          {"timepoint_weeks", e.endpoint.timepoint_weeks},
          {"direction", direction_token(e.endpoint.direction)},
          {"summary_measure", summary_measure_token(e.summary_measure)},
          {"ie_strategies", ie_to_json(e.ie_handlings)},
      });
    }
  }
  doc["contrasts"] = json::array();
  for (const auto& c : base.contrasts) {
    json j = {{"trial_id", c.trial_id},     {"estimand_label", c.estimand_label},
              {"endpoint_name", c.endpoint}, {"treatment", c.treatment},
              {"comparator", c.comparator}, {"md", c.md}};
    if (c.source == SeSource::ReportedSe) j["se"] = c.se;
    if (c.reported_ci) {
      j["ci_lower"] = c.reported_ci->lower;
      j["ci_upper"] = c.reported_ci->upper;
      j["ci_level"] = c.reported_ci->level;
    }
    doc["contrasts"].push_back(std::move(j));
  }
  doc["arms"] = json::array();
  for (const auto& a : base.arm_summaries) {
    doc["arms"].push_back({{"trial_id", a.trial_id},
                           {"estimand_label", a.estimand_label},
                           {"endpoint_name", a.endpoint},
                           {"treatment", a.treatment},
                           {"n", a.n_randomized},
                           {"mean_change", a.mean_change},
                           {"ci_lower", a.ci.lower},
                           {"ci_upper", a.ci.upper},
                           {"ci_level", a.ci.level}});
  }
  if (!base.meta_estimands.empty()) {
    doc["meta_estimands"] = json::array();
    for (const auto& m : base.meta_estimands) doc["meta_estimands"].push_back(meta_estimand_to_json(m));
  }
  return doc;
}

std::string_view severity_name(Severity s) { return s == Severity::Error ? "error" : "warning"; }

std::vector<Issue> validate_evidence(const EvidenceBase& base) {
  std::vector<Issue> issues;
  try {
    base.check_invariants();
  } catch (const DataError& e) {
    issues.push_back({Severity::Error, "invariant", e.what()});
    return issues;
  }

  // Multi-arm groups need arm-level variances to build their covariance block.
  std::map<std::tuple<std::string, std::string, std::string>, std::set<std::string>> groups;
  std::map<std::tuple<std::string, std::string, std::string>, int> group_sizes;
  for (const auto& c : base.contrasts) {
    const auto key = std::make_tuple(c.trial_id, c.estimand_label, c.endpoint);
    groups[key].insert(c.treatment);
    groups[key].insert(c.comparator);
    ++group_sizes[key];
  }
  for (const auto& [key, arms] : groups) {
    if (group_sizes[key] < 2) continue;
    const auto& [trial, label, endpoint] = key;
    std::vector<std::string> missing;
    for (const auto& a : arms) {
      if (base.find_arm(trial, label, endpoint, a) == nullptr) missing.push_back(a);
    }
    if (!missing.empty()) {
      issues.push_back({Severity::Warning, "covariance_unidentifiable",
                        fmt::format("trial {} ({}, {}): shared-arm variance unidentifiable; no arm "
                                    "summaries for {}",
                                    trial, label, endpoint, fmt::join(missing, ", "))});
    }
  }

  // Endpoint timepoint spread and unit consistency across trials.
  std::map<std::string, std::set<int>> timepoints;
  std::map<std::string, std::set<std::string>> units;
  for (const auto& [id, t] : base.trials) {
    for (const auto& [key, e] : t.estimands) {
      timepoints[e.endpoint.name].insert(e.endpoint.timepoint_weeks);
      units[e.endpoint.name].insert(e.endpoint.units);
    }
  }
  for (const auto& [endpoint, tps] : timepoints) {
    if (tps.size() > 1) {
      issues.push_back({Severity::Warning, "timepoint_spread",
                        fmt::format("endpoint timepoints differ: {} (endpoint {})", fmt::join(tps, ", "),
                                    endpoint)});
    }
  }
  for (const auto& [endpoint, us] : units) {
    if (us.size() > 1) {
      issues.push_back({Severity::Warning, "units_differ",
                        fmt::format("endpoint {} reported in different units: {}", endpoint,
                                    fmt::join(us, ", "))});
    }
  }

  // Intercurrent events declared by some trials only.
  std::map<std::string, std::set<std::string>> declared_by;
  std::set<std::string> trials_with_estimands;
  for (const auto& [id, t] : base.trials) {
    for (const auto& [key, e] : t.estimands) {
      trials_with_estimands.insert(id);
      for (const auto& h : e.ie_handlings) declared_by[canonical_event_name(h.event_name)].insert(id);
    }
  }
  for (const auto& [event, trials] : declared_by) {
    if (trials.size() < trials_with_estimands.size()) {
      issues.push_back({Severity::Warning, "event_coverage",
                        fmt::format("intercurrent event '{}' declared in some trials but not others "
                                    "(declared by: {})",
                                    event, fmt::join(trials, ", "))});
    }
  }
  return issues;
}

}  // namespace estnma
