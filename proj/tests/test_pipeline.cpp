#include <doctest.h>

#include <random>
#include <set>

#include "estnma/errors.hpp"
#include "estnma/ingest.hpp"
#include "estnma/pipeline.hpp"
#include "support.hpp"

using namespace estnma;

namespace {

const EvidenceBase& case_study() {
  static const auto base = parse_evidence(testing::fixture("case_study.csv"));
  return base;
}

const MetaEstimand& meta(const char* label, const char* endpoint) {
  const auto* m = case_study().find_meta(label, endpoint);
  REQUIRE(m != nullptr);
  return *m;
}

MetaEstimand random_meta() {
  MetaEstimand m;
  m.target = testing::make_estimand("main", {"t0", "t1", "t2", "t3", "t4", "t5"}, "y", 12,
                                    {{testing::kDiscontinuation, Strategy::Hypothetical}});
  return m;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("restrict_evidence examples") {
    const auto hyp = restrict_evidence(case_study(), meta("hypothetical", "hba1c"), "hba1c");
    CHECK(hyp.slice.contrasts.size() == 4);
    std::set<std::string> trials;
    for (const auto& c : hyp.slice.contrasts) {
      trials.insert(c.trial_id);
      const auto* e = case_study().find_estimand(c.trial_id, c.estimand_label, c.endpoint);
      CHECK(strategy_of(*e, testing::kRescue) == Strategy::Hypothetical);
    }
    CHECK(trials.size() == 3);
    CHECK(hyp.excluded.size() == 12);

    const auto tp = restrict_evidence(case_study(), meta("treatment_policy", "body_weight"), "body_weight");
    CHECK(tp.slice.contrasts.size() == 4);
    for (const auto& c : tp.slice.contrasts) {
      const auto* e = case_study().find_estimand(c.trial_id, c.estimand_label, c.endpoint);
      CHECK(strategy_of(*e, testing::kRescue) == Strategy::TreatmentPolicy);
    }

    const auto none = restrict_evidence(case_study(), meta("hypothetical", "hba1c"), "waist");
    CHECK(none.slice.contrasts.empty());
  }

  TEST_CASE("restriction is a subset and idempotent") {
    for (const auto* label : {"hypothetical", "treatment_policy"}) {
      for (const auto* ep : {"hba1c", "body_weight"}) {
        const auto once = restrict_evidence(case_study(), meta(label, ep), ep);
        const auto twice = restrict_evidence(once.slice, meta(label, ep), ep);
        CHECK(twice.slice == once.slice);
        CHECK(twice.excluded.empty());
        for (const auto& u : once.used) {
          CHECK(case_study().contrasts[u.index] == once.slice.contrasts[&u - once.used.data()]);
        }
      }
    }
  }

  TEST_CASE("feasibility_report examples") {
    const auto r = feasibility_report(case_study(), meta("hypothetical", "hba1c"), "hba1c");
    CHECK(r.verdict == Feasibility::FeasibleWithWarnings);
    CHECK(r.has("timepoint_spread"));
    CHECK(r.has("extra_event"));
    CHECK(r.connected);
    CHECK(r.contrasts_used == 4);
    CHECK(r.trials_used == 3);

    const auto cut = testing::without_trial(case_study(), "sustain7");
    for (const auto* label : {"hypothetical", "treatment_policy"}) {
      const auto d = feasibility_report(cut, meta(label, "hba1c"), "hba1c");
      CHECK(d.verdict == Feasibility::Infeasible);
      CHECK(d.has("disconnected"));
      CHECK(d.components.size() == 2);
    }

    const auto empty = feasibility_report(case_study(), meta("hypothetical", "hba1c"), "waist");
    CHECK(empty.verdict == Feasibility::Infeasible);
    CHECK(empty.has("no_evidence"));
  }

  TEST_CASE("run_analysis examples") {
    const auto hyp = run_analysis(case_study(), meta("hypothetical", "hba1c"), "hba1c");
    const auto c = comparison(hyp.nma, "sema2.0", "dula3.0");
    CHECK(std::abs(c.md - -0.47) <= 0.03);
    CHECK(std::abs(c.ci_lower - -0.70) <= 0.05);
    CHECK(std::abs(c.ci_upper - -0.23) <= 0.05);
    CHECK(hyp.nma.reference == "dula1.5");

    const auto tp = run_analysis(case_study(), meta("treatment_policy", "body_weight"), "body_weight");
    const auto w = comparison(tp.nma, "sema2.0", "dula4.5");
    CHECK(std::abs(w.md - -2.50) <= 0.03);

    RunOptions ro;
    ro.reference = "sema2.0";
    const auto moved = run_analysis(case_study(), meta("hypothetical", "hba1c"), "hba1c", ro);
    CHECK(moved.nma.reference == "sema2.0");
    CHECK(comparison(moved.nma, "sema2.0", "dula3.0").md == doctest::Approx(c.md).epsilon(1e-12));

    ro.reference = "placebo";
    CHECK_THROWS_AS(run_analysis(case_study(), meta("hypothetical", "hba1c"), "hba1c", ro), std::out_of_range);

    const auto cut = testing::without_trial(case_study(), "sustain7");
    CHECK_THROWS_AS(run_analysis(cut, meta("hypothetical", "hba1c"), "hba1c"), InfeasibleError);
    RunOptions forced;
    forced.force = true;
    const auto part = run_analysis(cut, meta("hypothetical", "hba1c"), "hba1c", forced);
    CHECK(part.nma.treatments.size() == 3);
    CHECK_FALSE(part.warnings.empty());
  }

  TEST_CASE("single trial base gives its own contrast") {
    const auto ev = testing::to_evidence_base(2, {{"solo", {{0, 0.4, 0.04}, {1, -0.1, 0.05}}}});
    const auto res = run_analysis(ev, random_meta(), "y");
    const auto c = comparison(res.nma, "t1", "t0");
    CHECK(c.md == doctest::Approx(ev.contrasts[0].md));
    CHECK(c.se == doctest::Approx(ev.contrasts[0].se));
  }

  TEST_CASE("provenance covers every contrast exactly once") {
    for (const auto* label : {"hypothetical", "treatment_policy"}) {
      for (const auto* ep : {"hba1c", "body_weight"}) {
        const auto res = run_analysis(case_study(), meta(label, ep), ep);
        REQUIRE(res.provenance.size() == case_study().contrasts.size());
        std::size_t used = 0;
        for (std::size_t i = 0; i < res.provenance.size(); ++i) {
          CHECK(res.provenance[i].index == i);
          CHECK(res.provenance[i].contrast == case_study().contrasts[i]);
          if (res.provenance[i].used) {
            ++used;
          } else {
            CHECK_FALSE(res.provenance[i].notes.empty());
          }
        }
        CHECK(used == 4);
      }
    }
  }

  TEST_CASE("property: restriction is a no-op when everything matches") {
    std::mt19937_64 rng(51);
    for (int i = 0; i < 100; ++i) {
      const auto ev = testing::random_connected_evidence(rng);
      const auto m = random_meta();
      const auto full = run_analysis(ev.base, m, "y");
      const auto slice = restrict_evidence(ev.base, m, "y");
      CHECK(slice.excluded.empty());
      const auto again = run_analysis(slice.slice, m, "y");
      const auto a = league_table(full.nma), b = league_table(again.nma);
      REQUIRE(a.size() == b.size());
      for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].md == b[k].md);
        CHECK(a[k].se == b[k].se);
      }
      for (const auto& p : full.provenance) CHECK(p.used);
    }
  }

  TEST_CASE("compare_strategies examples") {
    for (const auto* ep : {"hba1c", "body_weight"}) {
      std::vector<LabelledResult> results = {
          {"hypothetical", run_analysis(case_study(), meta("hypothetical", ep), ep).nma},
          {"treatment_policy", run_analysis(case_study(), meta("treatment_policy", ep), ep).nma}};
      const auto sc = compare_strategies(results, ep);
      CHECK(sc.labels == std::vector<std::string>{"hypothetical", "treatment_policy"});
      CHECK(sc.rows.size() == 20);
      for (const auto* dula : {"dula3.0", "dula4.5"}) {
        const auto* row = sc.find("sema2.0", dula);
        REQUIRE(row != nullptr);
        CHECK_FALSE(row->attenuated[0]);
        CHECK(row->attenuated[1]);
        CHECK(std::abs(row->by_label[1].md) < std::abs(row->by_label[0].md));
      }
    }

    const auto same = run_analysis(case_study(), meta("hypothetical", "hba1c"), "hba1c").nma;
    std::vector<LabelledResult> twins = {{"a", same}, {"b", same}};
    const auto flat = compare_strategies(twins, "hba1c");
    for (const auto& row : flat.rows) {
      CHECK_FALSE(row.attenuated[1]);
      CHECK(row.by_label[0].md == row.by_label[1].md);
    }

    std::vector<LabelledResult> lonely = {{"a", same}};
    CHECK_THROWS_AS(compare_strategies(lonely, "hba1c"), DataError);
  }

  TEST_CASE("analysis config validation") {
    AnalysisConfig cfg;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg.meta_estimands = case_study().meta_estimands;
    cfg.endpoints = {"hba1c"};
    CHECK_NOTHROW(cfg.validate());
    cfg.ci_level = 1.0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
  }
}
