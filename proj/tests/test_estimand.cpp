#include <doctest.h>

#include <random>

#include "estnma/errors.hpp"
#include "estnma/estimand.hpp"
#include "support.hpp"

using namespace estnma;
using testing::kDiscontinuation;
using testing::kDoseChange;
using testing::kRescue;
using testing::make_estimand;

namespace {

const std::vector<std::string> kFiveArms = {"sema1.0", "sema2.0", "dula1.5", "dula3.0", "dula4.5"};

Estimand forte(Strategy core) {
  return make_estimand(core == Strategy::Hypothetical ? "hypothetical" : "treatment policy",
                       {"sema2.0", "sema1.0"}, "hba1c", 40,
                       {{kRescue, core}, {kDiscontinuation, core}, {kDoseChange, Strategy::TreatmentPolicy}});
}

Estimand sustain7(Strategy core) {
  return make_estimand(core == Strategy::Hypothetical ? "de-jure" : "de-facto", {"sema1.0", "dula1.5"}, "hba1c",
                       40, {{kRescue, core}, {kDiscontinuation, core}});
}

Estimand award11(Strategy core) {
  return make_estimand(core == Strategy::Hypothetical ? "efficacy" : "treatment regimen",
                       {"dula1.5", "dula3.0", "dula4.5"}, "hba1c", 36,
                       {{kRescue, core}, {kDiscontinuation, core}});
}

MetaEstimand target(Strategy core, int tolerance = 4, MatchingMode mode = MatchingMode::Lenient) {
  MetaEstimand m;
  m.target = make_estimand(core == Strategy::Hypothetical ? "hypothetical" : "treatment_policy", kFiveArms, "hba1c",
                           40, {{kRescue, core}, {kDiscontinuation, core}});
  m.timepoint_tolerance_weeks = tolerance;
  m.matching_mode = mode;
  return m;
}

// Random estimand over a small vocabulary so collisions between draws are common.
Estimand random_estimand(std::mt19937_64& rng) {
  static const std::vector<std::string> events = {"rescue", "discontinuation", "dose change", "death"};
  static const std::vector<std::string> pops = {"adults", "adults with t2d", "elderly"};
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> strat(0, 4);
  std::uniform_int_distribution<int> week(30, 44);
  std::uniform_int_distribution<std::size_t> pop(0, pops.size() - 1);
  std::vector<std::pair<std::string, Strategy>> ev;
  for (const auto& e : events) {
    if (coin(rng)) ev.emplace_back(e, static_cast<Strategy>(strat(rng)));
  }
  if (ev.empty()) ev.emplace_back(events[0], Strategy::Hypothetical);
  std::vector<std::string> tr = {"a", "b"};
  if (coin(rng)) tr.push_back("c");
  return make_estimand(coin(rng) ? "x" : "y", tr, "hba1c", week(rng), ev, pops[pop(rng)]);
}

std::string scramble_case(const std::string& s, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::string out = coin(rng) ? "  " : "\t";
  for (const char c : s) {
    out += coin(rng) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : c;
    if (c == ' ' && coin(rng)) out += "  ";
  }
  out += coin(rng) ? " " : "";
  return out;
}

}  // namespace

TEST_SUITE("estimand") {
  TEST_CASE("strategy tokens round-trip") {
    for (const auto s : {Strategy::TreatmentPolicy, Strategy::Hypothetical, Strategy::CompositeVariable,
                         Strategy::WhileOnTreatment, Strategy::PrincipalStratum}) {
      CHECK(parse_strategy(strategy_token(s)) == s);
    }
    CHECK(parse_strategy(" Treatment_Policy ") == Strategy::TreatmentPolicy);
    CHECK_THROWS_AS(parse_strategy("imputation"), DataError);
    CHECK(strategy_name(Strategy::TreatmentPolicy) == "TreatmentPolicy");
  }

  TEST_CASE("event names are canonicalized") {
    CHECK(canonical_event_name("  Change   in\tTreatment Dose ") == "change in treatment dose");
    CHECK_THROWS_AS(canonical_event_name("   "), DataError);
    CHECK(normalize_text("") == "");
  }

  TEST_CASE("strategy_of") {
    CHECK(strategy_of(forte(Strategy::TreatmentPolicy), kDoseChange) == Strategy::TreatmentPolicy);
    CHECK_FALSE(strategy_of(sustain7(Strategy::Hypothetical), kDoseChange).has_value());
    CHECK(strategy_of(sustain7(Strategy::Hypothetical), "PREMATURE treatment  discontinuation") ==
          Strategy::Hypothetical);
    CHECK_THROWS_AS(strategy_of(sustain7(Strategy::Hypothetical), ""), DataError);
  }

  TEST_CASE("estimand validation") {
    auto e = sustain7(Strategy::Hypothetical);
    CHECK_NOTHROW(e.validate());
    auto dup = e;
    dup.ie_handlings.push_back(IntercurrentEventHandling::make(kRescue, Strategy::TreatmentPolicy));
    CHECK_THROWS_AS(dup.validate(), DataError);
    auto no_tr = e;
    no_tr.treatments.clear();
    CHECK_THROWS_AS(no_tr.validate(), DataError);
    auto bad_week = e;
    bad_week.endpoint.timepoint_weeks = 0;
    CHECK_THROWS_AS(bad_week.validate(), DataError);
  }

  TEST_CASE("compare_estimands examples") {
    SUBCASE("dose change only in one trial") {
      const auto d = compare_estimands(sustain7(Strategy::Hypothetical), forte(Strategy::Hypothetical));
      CHECK(d.endpoint == Verdict::Identical);
      REQUIRE(d.events.size() == 1);
      CHECK(d.events[0].event_name == kDoseChange);
      CHECK(d.events[0].kind == EventDifference::Kind::OnlyInB);
    }
    SUBCASE("timepoints 36 vs 40") {
      const auto d = compare_estimands(award11(Strategy::Hypothetical), sustain7(Strategy::Hypothetical));
      CHECK(d.endpoint == Verdict::Overlapping);
      CHECK(d.timepoint_differs);
      CHECK(d.timepoint_a == 36);
      CHECK(d.timepoint_b == 40);
    }
    SUBCASE("reflexive") {
      const auto x = forte(Strategy::Hypothetical);
      const auto d = compare_estimands(x, x);
      CHECK(d.all_identical());
      CHECK(d.events.empty());
    }
    SUBCASE("strategy differences are reported per event") {
      const auto d = compare_estimands(sustain7(Strategy::Hypothetical), sustain7(Strategy::TreatmentPolicy));
      CHECK(d.ie_strategies == Verdict::Disjoint);
      REQUIRE(d.events.size() == 2);
      for (const auto& e : d.events) CHECK(e.kind == EventDifference::Kind::StrategyDiffers);
    }
  }

  TEST_CASE("matches_meta examples") {
    SUBCASE("extra dose-change event is a warning in lenient mode") {
      const auto v = matches_meta(forte(Strategy::Hypothetical), target(Strategy::Hypothetical));
      CHECK(v.compatible);
      CHECK(v.has_reason("extra_event"));
      const auto msgs = v.messages();
      CHECK(std::find(msgs.begin(), msgs.end(), "extra event: change in treatment dose (TreatmentPolicy)") !=
            msgs.end());
    }
    SUBCASE("de-facto against hypothetical target") {
      const auto v = matches_meta(sustain7(Strategy::TreatmentPolicy), target(Strategy::Hypothetical));
      CHECK_FALSE(v.compatible);
      int mismatches = 0;
      for (const auto& r : v.reasons) mismatches += r.code == "strategy_mismatch" && r.blocking;
      CHECK(mismatches == 2);
    }
    SUBCASE("week 36 against tolerance 0") {
      const auto v = matches_meta(award11(Strategy::Hypothetical), target(Strategy::Hypothetical, 0));
      CHECK_FALSE(v.compatible);
      CHECK(v.has_reason("timepoint_exceeds_tolerance"));
      const auto msgs = v.messages();
      CHECK(std::find(msgs.begin(), msgs.end(), "timepoint 36 vs 40 weeks exceeds tolerance 0") != msgs.end());
    }
    SUBCASE("week 36 inside tolerance 4 warns") {
      const auto v = matches_meta(award11(Strategy::Hypothetical), target(Strategy::Hypothetical));
      CHECK(v.compatible);
      CHECK(v.has_reason("timepoint_differs"));
    }
    SUBCASE("missing target event blocks") {
      auto e = sustain7(Strategy::Hypothetical);
      e.ie_handlings.pop_back();
      const auto v = matches_meta(e, target(Strategy::Hypothetical));
      CHECK_FALSE(v.compatible);
      CHECK(v.has_reason("missing_event"));
    }
    SUBCASE("strict mode and the extra event") {
      // Extra event with a strategy outside the target's strategies blocks in strict mode.
      const auto hyp = matches_meta(forte(Strategy::Hypothetical), target(Strategy::Hypothetical, 4, MatchingMode::Strict));
      CHECK_FALSE(hyp.compatible);
      // Its strategy is among the treatment-policy target's strategies, so it does not block there.
      const auto tp =
          matches_meta(forte(Strategy::TreatmentPolicy), target(Strategy::TreatmentPolicy, 4, MatchingMode::Strict));
      CHECK(tp.compatible);
    }
    SUBCASE("endpoint and units must match") {
      auto e = sustain7(Strategy::Hypothetical);
      e.endpoint.units = "mmol/mol";
      CHECK_FALSE(matches_meta(e, target(Strategy::Hypothetical)).compatible);
      e = sustain7(Strategy::Hypothetical);
      e.endpoint.name = "body_weight";
      CHECK(matches_meta(e, target(Strategy::Hypothetical)).has_reason("endpoint_mismatch"));
    }
    SUBCASE("population difference never blocks") {
      auto e = sustain7(Strategy::Hypothetical);
      e.population = "something else entirely";
      const auto v = matches_meta(e, target(Strategy::Hypothetical));
      CHECK(v.compatible);
      CHECK(v.has_reason("population_differs"));
    }
  }

  TEST_CASE("heterogeneity_matrix examples") {
    const std::vector<LabelledEstimand> hyp = {{"sustain_forte", forte(Strategy::Hypothetical)},
                                               {"sustain7", sustain7(Strategy::Hypothetical)},
                                               {"award11", award11(Strategy::Hypothetical)}};
    const auto r = heterogeneity_matrix(hyp, target(Strategy::Hypothetical));
    CHECK(r.feasible);
    REQUIRE(r.rows.size() == 3);
    for (const auto& row : r.rows) CHECK(row.verdict.compatible);
    CHECK(r.rows[0].ie_strategies == CellVerdict::Warning);
    CHECK(r.rows[2].endpoint == CellVerdict::Warning);

    auto mixed = hyp;
    mixed.push_back({"sustain7", sustain7(Strategy::TreatmentPolicy)});
    const auto m = heterogeneity_matrix(mixed, target(Strategy::Hypothetical));
    CHECK_FALSE(m.feasible);
    CHECK(m.rows.back().ie_strategies == CellVerdict::Mismatch);

    auto wrong = hyp;
    for (auto& w : wrong) w.estimand.endpoint.name = "body_weight";
    const auto all_bad = heterogeneity_matrix(wrong, target(Strategy::Hypothetical));
    for (const auto& row : all_bad.rows) CHECK_FALSE(row.verdict.compatible);

    CHECK_THROWS_AS(heterogeneity_matrix({}, target(Strategy::Hypothetical)), std::invalid_argument);
  }

  TEST_CASE("property: self-match") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 500; ++i) {
      const auto x = random_estimand(rng);
      const auto v = matches_meta(x, meta_from(x, 0, MatchingMode::Strict));
      CHECK(v.compatible);
      CHECK(v.reasons.empty());
    }
  }

  TEST_CASE("property: compare_estimands is symmetric up to side labels") {
    std::mt19937_64 rng(12);
    auto flip = [](EventDifference::Kind k) {
      if (k == EventDifference::Kind::OnlyInA) return EventDifference::Kind::OnlyInB;
      if (k == EventDifference::Kind::OnlyInB) return EventDifference::Kind::OnlyInA;
      return k;
    };
    for (int i = 0; i < 500; ++i) {
      const auto a = random_estimand(rng);
      const auto b = random_estimand(rng);
      const auto ab = compare_estimands(a, b);
      const auto ba = compare_estimands(b, a);
      CHECK(ab.population == ba.population);
      CHECK(ab.treatments == ba.treatments);
      CHECK(ab.endpoint == ba.endpoint);
      CHECK(ab.summary_measure == ba.summary_measure);
      CHECK(ab.ie_strategies == ba.ie_strategies);
      REQUIRE(ab.events.size() == ba.events.size());
      for (std::size_t k = 0; k < ab.events.size(); ++k) {
        CHECK(ab.events[k].event_name == ba.events[k].event_name);
        CHECK(ab.events[k].kind == flip(ba.events[k].kind));
        CHECK(ab.events[k].in_a == ba.events[k].in_b);
      }
    }
  }

  TEST_CASE("property: strict compatibility implies lenient compatibility") {
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int> tol(0, 6);
    int strict_ok = 0;
    for (int i = 0; i < 2000; ++i) {
      const auto x = random_estimand(rng);
      auto meta = meta_from(random_estimand(rng), tol(rng), MatchingMode::Strict);
      const bool strict = matches_meta(x, meta).compatible;
      meta.matching_mode = MatchingMode::Lenient;
      const bool lenient = matches_meta(x, meta).compatible;
      if (strict) {
        ++strict_ok;
        CHECK(lenient);
      }
    }
    CHECK(strict_ok > 0);
  }

  TEST_CASE("property: verdicts ignore case and whitespace of event names") {
    std::mt19937_64 rng(14);
    for (int i = 0; i < 500; ++i) {
      const auto x = random_estimand(rng);
      const auto meta = meta_from(random_estimand(rng), 4, MatchingMode::Lenient);
      Estimand y = x;
      for (auto& h : y.ie_handlings) h.event_name = scramble_case(h.event_name, rng);
      for (const auto& h : x.ie_handlings) CHECK(strategy_of(y, h.event_name) == h.strategy);
      const auto vx = matches_meta(x, meta);
      const auto vy = matches_meta(y, meta);
      CHECK(vx.compatible == vy.compatible);
      CHECK(vx.messages() == vy.messages());
    }
  }
}
