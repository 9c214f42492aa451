#include <gtest/gtest.h>

#include "skillbank/error.hpp"
#include "skillbank/trajectory.hpp"
#include "support.hpp"

using namespace skillbank;
using namespace skillbank::testing;

namespace {

Trajectory load_log(const std::string& file, LogFormat f) {
  return normalize(slurp(fixtures_dir() / "logs" / file), f);
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::io_error;
}

Trajectory long_trajectory(std::size_t n, std::size_t words_per_step) {
  Trajectory t;
  t.instance_id = "long";
  t.benchmark_scope = "b";
  t.task_context = "Fix it";
  for (std::size_t i = 0; i < n; ++i) {
    Step s;
    s.index = static_cast<int>(i + 1);
    s.reasoning = "step " + std::to_string(i + 1);
    s.action = "cmd" + std::to_string(i + 1);
    for (std::size_t w = 0; w < words_per_step; ++w) s.observation += "word ";
    t.steps.push_back(s);
  }
  t.outcome = Outcome{0.5, true, std::string("done")};
  return t;
}

}  // namespace

TEST(Normalize, MiniSweTranscript) {
  auto t = load_log("mini_swe.json", LogFormat::mini_swe);
  EXPECT_EQ(t.instance_id, "astropy-1001");
  EXPECT_EQ(t.benchmark_scope, "swe-bench");
  ASSERT_EQ(t.steps.size(), 3u);
  EXPECT_EQ(t.steps[0].reasoning, "Find where composite units are scaled.");
  EXPECT_EQ(t.steps[0].action, "grep -rn 'def _to' astropy/units | head");
  // A message without a command folds into the previous observation.
  EXPECT_NE(t.steps[1].observation.find("scale product"), std::string::npos);
  ASSERT_TRUE(t.outcome);
  EXPECT_TRUE(t.outcome->success);
  EXPECT_DOUBLE_EQ(t.outcome->verifier_score, 1.0);
  for (std::size_t i = 0; i < t.steps.size(); ++i) EXPECT_EQ(t.steps[i].index, static_cast<int>(i + 1));
}

TEST(Normalize, ReactEvents) {
  auto t = load_log("react_bash.jsonl", LogFormat::react_bash);
  EXPECT_EQ(t.instance_id, "bugsinpy-0101");
  ASSERT_EQ(t.steps.size(), 3u);
  EXPECT_EQ(t.steps[2].reasoning, "");
  EXPECT_EQ(t.steps[1].action, "python -c 'from tok import tokenize; print(tokenize(\"a b\"))'");
  ASSERT_TRUE(t.outcome);
  EXPECT_FALSE(t.outcome->success);
  EXPECT_DOUBLE_EQ(t.outcome->verifier_score, 0.25);
}

TEST(Normalize, GenericMarkersWithStrayLines) {
  auto t = load_log("generic.log", LogFormat::generic);
  EXPECT_EQ(t.instance_id, "defects-4001");
  ASSERT_EQ(t.steps.size(), 2u);
  EXPECT_NE(t.steps[0].observation.find("stray line"), std::string::npos);
  EXPECT_EQ(t.outcome->summary, "one assertion still failing");
}

TEST(Normalize, IdempotentThroughGenericForm) {
  for (auto [file, fmt] : {std::pair{"mini_swe.json", LogFormat::mini_swe},
                           std::pair{"react_bash.jsonl", LogFormat::react_bash},
                           std::pair{"generic.log", LogFormat::generic}}) {
    auto t = load_log(file, fmt);
    auto once = normalize(to_generic_log(t), LogFormat::generic);
    EXPECT_EQ(once, t) << file;
    EXPECT_EQ(normalize(to_generic_log(once), LogFormat::generic), once) << file;
    EXPECT_EQ(trajectory_digest(once), trajectory_digest(t));
  }
}

TEST(Normalize, JsonRoundTrip) {
  auto t = load_log("mini_swe.json", LogFormat::mini_swe);
  nlohmann::json j = t;
  EXPECT_EQ(j.get<Trajectory>(), t);
  auto path = fresh_dir("traj") / "t.traj.json";
  write_trajectory_file(path, t);
  EXPECT_EQ(read_trajectory_file(path), t);
}

TEST(Normalize, Errors) {
  EXPECT_EQ(code_of([] { normalize("INSTANCE: x\nTASK: nothing happened\n", LogFormat::generic); }),
            ErrorCode::unrecognized_format);
  EXPECT_EQ(code_of([] { normalize("ACTION: ls\nOBSERVATION: a\n", LogFormat::generic); }),
            ErrorCode::missing_instance_id);
  EXPECT_EQ(code_of([] { normalize("not json", LogFormat::mini_swe); }), ErrorCode::unrecognized_format);
  EXPECT_EQ(code_of([] { log_format_from_string("xml"); }), ErrorCode::unrecognized_format);
}

TEST(Evidence, ArityRules) {
  auto t = long_trajectory(5, 3);
  std::vector<Trajectory> two{t, t}, four{t, t, t, t};
  EXPECT_EQ(code_of([&] { assemble_evidence(two, EvidenceMode::single); }), ErrorCode::arity_mismatch);
  EXPECT_EQ(code_of([&] { assemble_evidence(std::span(&t, 1), EvidenceMode::related_set); }),
            ErrorCode::arity_mismatch);
  EXPECT_EQ(code_of([&] { assemble_evidence(four, EvidenceMode::related_set); }), ErrorCode::arity_mismatch);
  auto ev = assemble_evidence(two, EvidenceMode::related_set);
  EXPECT_EQ(ev.instance_ids.size(), 2u);
}

TEST(Evidence, BudgetKeepsEndsAndDropsMiddleSymmetrically) {
  auto t = long_trajectory(40, 200);
  EvidenceConfig cfg{2000.0, true};
  auto ev = assemble_evidence(std::span(&t, 1), EvidenceMode::single, cfg);
  EXPECT_LE(estimate_tokens(ev.text), cfg.max_tokens);
  const auto& kept = ev.kept_steps.at(0);
  ASSERT_GE(kept.size(), 4u);
  EXPECT_LT(kept.size(), 40u);
  EXPECT_EQ(kept[0], 1);
  EXPECT_EQ(kept[1], 2);
  EXPECT_EQ(kept[kept.size() - 2], 39);
  EXPECT_EQ(kept.back(), 40);

  auto small = long_trajectory(6, 2);
  auto all = assemble_evidence(std::span(&small, 1), EvidenceMode::single);
  EXPECT_EQ(all.kept_steps[0].size(), 6u);
  ASSERT_EQ(all.result_summaries.size(), 1u);
  EXPECT_EQ(all.result_summaries[0], "done");
}

TEST(Evidence, StepSelectionOracle) {
  for (std::size_t total = 0; total < 30; ++total) {
    for (std::size_t keep = 0; keep <= total + 2; ++keep) {
      auto pos = select_step_positions(total, keep);
      if (keep >= total) {
        EXPECT_EQ(pos.size(), total);
        continue;
      }
      std::size_t want = std::max<std::size_t>(keep, std::min<std::size_t>(4, total));
      EXPECT_EQ(pos.size(), want) << total << "/" << keep;
      EXPECT_TRUE(std::is_sorted(pos.begin(), pos.end()));
      EXPECT_EQ(std::adjacent_find(pos.begin(), pos.end()), pos.end());
      if (total >= 4 && !pos.empty()) {
        EXPECT_EQ(pos[0], 0u);
        EXPECT_EQ(pos[1], 1u);
        EXPECT_EQ(pos.back(), total - 1);
        EXPECT_EQ(pos[pos.size() - 2], total - 2);
      }
    }
  }
}
