#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillbank/operation.hpp"
#include "skillbank/protocol.hpp"
#include "skillbank/providers.hpp"

namespace skillbank {

// Sum of dimension scores over the family total, in [0, 1].
double score_rubric(const RubricAnswers& answers);

struct BaselineRecord {
  std::string instance_id;
  std::vector<double> rollout_scores;
  double baseline = 0.0;
  std::vector<Trajectory> rollouts;  // kept in memory only, not serialized
};

void to_json(nlohmann::json& j, const BaselineRecord& b);
void from_json(const nlohmann::json& j, BaselineRecord& b);

// Runs n no-skill rollouts and averages their verifier scores. n >= 1.
BaselineRecord compute_baseline(const TaskInstance& instance, PolicyProvider& policy, Verifier& verifier,
                                std::size_t n = 4);

// Baselines keyed by instance id. Each instance is rolled out at most once per cache,
// even under concurrent callers.
class BaselineCache {
 public:
  const BaselineRecord& get_or_compute(const TaskInstance& instance, PolicyProvider& policy, Verifier& verifier,
                                       std::size_t n);
  std::optional<BaselineRecord> find(const std::string& instance_id) const;
  std::size_t size() const;
  std::vector<BaselineRecord> records() const;  // sorted by instance id

 private:
  mutable std::mutex mu_;
  std::map<std::string, BaselineRecord> records_;
};

struct ExecutionResult {
  double r_e = 0.0;          // V - baseline, in [-1, 1]
  double verifier_score = 0.0;
  double baseline = 0.0;
  Trajectory conditioned;    // the single skill-conditioned rollout
};

ExecutionResult execution_reward(const Skill& skill, const TaskInstance& instance, PolicyProvider& policy,
                                 Verifier& verifier, BaselineCache& baselines, std::size_t n = 4);

enum class RewardPath { skill_output, decision_only, malformed };

std::string_view to_string(RewardPath p);
RewardPath reward_path_from_string(std::string_view s);

// generate / evolve / merge -> skill_output; skip / add / drop -> decision_only; no operation -> malformed.
RewardPath path_for(const std::optional<Operation>& op);

struct RewardConfig {
  double lambda = 0.25;
  double lambda_dec = 0.25;
};

struct RewardBreakdown {
  RewardPath path = RewardPath::malformed;
  double r_q = 0.0;
  std::optional<double> r_a;
  std::optional<double> r_e;
  double lambda = 0.25;
  double lambda_dec = 0.25;
  double final = 0.0;
};

void to_json(nlohmann::json& j, const RewardBreakdown& r);
void from_json(const nlohmann::json& j, RewardBreakdown& r);

// skill_output: lambda * r_q + r_a * r_e (Error{missing_component} without r_a or r_e);
// decision_only: lambda_dec * r_q; malformed: 0.
RewardBreakdown hybrid_reward(RewardPath path, double r_q, std::optional<double> r_a, std::optional<double> r_e,
                              const RewardConfig& cfg = {});
RewardBreakdown hybrid_reward(const std::optional<Operation>& op, double r_q, std::optional<double> r_a,
                              std::optional<double> r_e, const RewardConfig& cfg = {});

struct JudgeOutcome {
  double score = 0.0;
  std::optional<RubricAnswers> answers;
  int attempts = 0;
  std::optional<std::string> error;  // set when every attempt failed to parse
};

// Renders the judge prompt, asks the judge, parses the rubric. A reply that
// fails to parse is retried once with seed + 1; a second failure scores 0.
JudgeOutcome judge_score(CompletionProvider& judge, PromptFamily judge_family, const PromptContext& ctx,
                         const SamplingParams& params);

// One line of the reward log.
struct RewardRecord {
  std::string operation_id;
  std::string family;
  RewardBreakdown reward;
  std::optional<std::string> instance_id;
  std::string template_version;
};

void to_json(nlohmann::json& j, const RewardRecord& r);
void from_json(const nlohmann::json& j, RewardRecord& r);

std::string reward_log_jsonl(const std::vector<RewardRecord>& records);
std::vector<RewardRecord> read_reward_log(const std::filesystem::path& path);

}  // namespace skillbank
