#include <gtest/gtest.h>

#include "skillbank/error.hpp"
#include "skillbank/orchestrator.hpp"
#include "skillbank/reward.hpp"
#include "support.hpp"

using namespace skillbank;
using namespace skillbank::testing;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::io_error;
}

std::shared_ptr<Verifier> verifier(json table) {
  return make_verifier(ProviderSpec{ProviderKind::verifier, Backend::scripted, std::move(table)});
}

std::shared_ptr<PolicyProvider> synth_policy() {
  return make_policy(ProviderSpec{ProviderKind::policy, Backend::scripted, json{{"missing", "synthesize"}}});
}

}  // namespace

TEST(Baseline, MeanOfScriptedScoresAndCaching) {
  TaskInstance inst{"i1", "b", "Fix it", std::nullopt};
  auto policy = synth_policy();
  auto v = verifier(json{{"by_key", {{"i1|", {0.0, 1.0, 0.5, 0.25}}}}});
  BaselineCache cache;
  const auto& rec = cache.get_or_compute(inst, *policy, *v, 4);
  EXPECT_DOUBLE_EQ(rec.baseline, 0.4375);
  EXPECT_EQ(rec.rollouts.size(), 4u);
  cache.get_or_compute(inst, *policy, *v, 4);
  EXPECT_EQ(policy->no_skill_calls(), 4u);
  EXPECT_EQ(cache.size(), 1u);
  EXPECT_EQ(code_of([&] { compute_baseline(inst, *policy, *v, 0); }), ErrorCode::invalid_config);

  json j = rec;
  EXPECT_FALSE(j.contains("rollouts"));
  auto back = j.get<BaselineRecord>();
  EXPECT_EQ(back.rollout_scores, rec.rollout_scores);
}

TEST(Baseline, ExecutionRewardIsScoreMinusBaseline) {
  TaskInstance inst{"i1", "b", "Fix it", std::nullopt};
  Skill s = make_skill(SkillDraft{"T", Granularity::task_level, "W", {"r"}}, Provenance{Origin::extracted_task_level, {}},
                       "b", std::string("i0"));
  auto v = verifier(json{{"by_key", {{"i1|", {0.2, 0.2, 0.4, 0.4}}, {rollout_key("i1", {s.id}), {0.9}}}}});
  auto policy = synth_policy();
  BaselineCache cache;
  auto r = execution_reward(s, inst, *policy, *v, cache, 4);
  EXPECT_NEAR(r.r_e, 0.9 - 0.3, 1e-15);
  EXPECT_EQ(r.conditioned.skill_ids_injected, std::vector<std::string>{s.id});
  EXPECT_EQ(policy->no_skill_calls(), 4u);
  EXPECT_EQ(policy->calls(), 5u);
}

// Three instances, four prompts: the no-skill policy is called 4 times per instance, no more.
TEST(Baseline, RewardLoopCallsNoSkillPolicyOncePerInstanceRollout) {
  auto cfg = random_world(21);
  std::mt19937_64 rng(21);
  cfg.stream = stream_json(rng, {"only"}, 3);
  cfg.phase = Phase::extract_only;
  auto providers = load_run_providers(cfg);
  auto stream = load_stream(cfg);
  BaselineCache baselines;
  fill_from_baselines(stream, cfg, providers, baselines);
  PhaseSources sources{stream, {}, {}, {}};
  auto prompts = assemble_phase_data(Phase::extract_only, sources, *providers.embedder, cfg);
  ASSERT_GE(prompts.size(), 4u);
  prompts.resize(4);
  std::vector<TaskInstance> pool;
  for (const auto& item : stream) pool.push_back(item.instance);
  auto loop = run_reward_loop(cfg, prompts, pool, providers, baselines);
  EXPECT_EQ(providers.policy->no_skill_calls(), 12u);
  std::size_t skill_outputs = 0;
  for (const auto& r : loop.rewards) skill_outputs += r.reward.path == RewardPath::skill_output;
  EXPECT_EQ(providers.policy->calls(), 12u + skill_outputs);
  EXPECT_EQ(loop.batch.size(), 4u);
  for (const auto& b : loop.batch) EXPECT_EQ(b.rewards.size(), cfg.G);
}

TEST(Hybrid, BranchesAndMissingComponents) {
  auto r = hybrid_reward(RewardPath::skill_output, 0.5, 0.5, -0.2);
  EXPECT_DOUBLE_EQ(r.final, 0.25 * 0.5 + 0.5 * -0.2);
  EXPECT_EQ(code_of([] { hybrid_reward(RewardPath::skill_output, 0.5, std::nullopt, 0.1); }),
            ErrorCode::missing_component);
  EXPECT_EQ(code_of([] { hybrid_reward(RewardPath::skill_output, 0.5, 0.1, std::nullopt); }),
            ErrorCode::missing_component);
  auto m = hybrid_reward(RewardPath::malformed, 0.9, 0.9, 0.9);
  EXPECT_EQ(m.final, 0.0);
  EXPECT_EQ(m.r_q, 0.0);
  EXPECT_EQ(path_for(Operation::skip("x")), RewardPath::decision_only);
  EXPECT_EQ(path_for(Operation::drop("x")), RewardPath::decision_only);
  EXPECT_EQ(path_for(std::nullopt), RewardPath::malformed);
}

TEST(Judge, RetriesOnceThenScoresZero) {
  PromptContext ctx;
  ctx.candidate_or_existing_skill =
      make_skill(SkillDraft{"T", Granularity::task_level, "W", {"r"}}, Provenance{Origin::extracted_task_level, {}},
                 "b", std::string("i0"));
  ctx.retrieved_context = {*ctx.candidate_or_existing_skill};
  ctx.proposed_output = R"({"action":"add","reason":"x"})";
  json good{{"target_choice_correct", 3}, {"target_overlap_substantive", 3}, {"merge_integration_quality", 3},
            {"identity_preserved", 3},    {"no_critical_loss_target", 3},   {"no_critical_loss_candidate", 3},
            {"merged_when_to_apply_tightness", 3}, {"format_validity", 1}};
  auto judge = make_completion(
      ProviderSpec{ProviderKind::judge, Backend::scripted, json{{"sequence", {"not json", good.dump()}}}});
  auto out = judge_score(*judge, PromptFamily::judge_merge, ctx, {});
  EXPECT_EQ(out.attempts, 2);
  EXPECT_DOUBLE_EQ(out.score, 1.0);
  EXPECT_FALSE(out.error);

  auto broken = make_completion(ProviderSpec{ProviderKind::judge, Backend::scripted,
                                             json{{"sequence", {"{\"target_choice_correct\": 9}"}}}});
  auto bad = judge_score(*broken, PromptFamily::judge_merge, ctx, {});
  EXPECT_EQ(bad.attempts, 2);
  EXPECT_EQ(bad.score, 0.0);
  EXPECT_TRUE(bad.error);
}

TEST(RewardLog, JsonlRoundTrip) {
  std::vector<RewardRecord> recs{
      {"p#0", "evolve", hybrid_reward(RewardPath::skill_output, 0.5, 0.25, 0.125), std::string("i1"), "tmpl-v1"},
      {"p#1", "maintain", hybrid_reward(RewardPath::decision_only, 0.75, std::nullopt, std::nullopt), std::nullopt,
       "tmpl-v1"}};
  auto path = fresh_dir("rewardlog") / "rewards.jsonl";
  std::ofstream(path) << reward_log_jsonl(recs);
  auto back = read_reward_log(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].reward.final, recs[0].reward.final);
  EXPECT_EQ(back[1].reward.path, RewardPath::decision_only);
  EXPECT_FALSE(back[1].reward.r_a);
  EXPECT_FALSE(back[1].instance_id);
}
