#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillbank/bank.hpp"
#include "skillbank/grpo.hpp"
#include "skillbank/protocol.hpp"
#include "skillbank/providers.hpp"
#include "skillbank/retrieval.hpp"
#include "skillbank/reward.hpp"
#include "skillbank/trajectory.hpp"

namespace skillbank {

// Curriculum stage: which manager families may be rendered. Judges are always allowed.
enum class Phase { extract_only, extract_evolve, full };

std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view s);
bool phase_allows(Phase phase, PromptFamily family);

struct RunConfig {
  std::size_t n_baseline = 4;
  std::size_t G = 6;
  double lambda = 0.25;
  double lambda_dec = 0.25;
  double clip_eps = 0.2;
  double kl_beta = 0.02;
  double eps_a = 1e-6;
  std::size_t K_reverse = 3;
  std::size_t k_task = 1;
  std::size_t k_event = 2;
  std::size_t k_maintain = 3;  // similar skills shown to the maintenance prompt
  std::size_t k_evolve = 3;    // injected skills offered to one evolve prompt
  std::size_t task_level_attempts = 1;
  std::size_t event_attempts = 3;
  bool route_evolved_through_maintenance = false;
  double temperature = 0.7;
  double evidence_max_tokens = 7800.0;
  std::uint64_t seed = 0;
  Phase phase = Phase::full;
  // Reward-loop data: per-family quota scale against the reference phase plan
  // (0 = take every available context), then an overall cap (0 = no cap).
  double phase_scale = 0.0;
  std::size_t max_reward_prompts = 0;
  nlohmann::json providers;  // inline providers object, or a path string
  nlohmann::json stream;     // inline stream object, or a path string
  std::filesystem::path base_dir;  // resolves relative paths; not serialized

  void validate() const;  // Error{invalid_config}
  RewardConfig reward() const { return {lambda, lambda_dec}; }
  GrpoLossInputs loss() const { return {clip_eps, kl_beta}; }
  EvidenceConfig evidence() const { return {evidence_max_tokens, true}; }
};

// Unknown keys are rejected.
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

// Stable per-call seed derived from the run seed and a purpose label.
std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view label, std::uint64_t index = 0);

struct StreamItem {
  TaskInstance instance;
  std::vector<Trajectory> trajectories;  // no-skill trajectories; filled from baselines when empty
};

// {"instances": [{instance fields..., "trajectories": [...], "logs": [{"format", "path"}]}]}
std::vector<StreamItem> parse_stream(const nlohmann::json& j, const std::filesystem::path& base_dir);
std::vector<StreamItem> load_stream(const RunConfig& cfg);
ProviderSet load_run_providers(const RunConfig& cfg);

// Pre-caches baselines and supplies missing no-skill trajectories from those rollouts.
void fill_from_baselines(std::vector<StreamItem>& stream, const RunConfig& cfg, ProviderSet& providers,
                         BaselineCache& baselines);

struct RunIssue {
  std::string instance_id;
  std::string stage;
  std::string message;
};

struct ManagementResult {
  SkillBank bank{logical_clock()};
  MaintenanceStats stats;
  std::vector<Trajectory> conditioned;  // skill-conditioned rollouts, in stream order
  std::vector<Skill> candidates;        // every candidate that reached maintenance
  std::vector<RunIssue> issues;         // failed operations, logged and skipped
  std::map<PromptFamily, std::size_t> rendered;  // prompts rendered per family
};

// Processes the stream in order: extract -> maintain -> use -> evolve -> maintain.
ManagementResult run_management_pass(const RunConfig& cfg, const std::vector<StreamItem>& stream,
                                     ProviderSet& providers);

// A manager prompt queued for RL sampling.
struct TrainingPrompt {
  std::string prompt_id;
  PromptFamily family = PromptFamily::extract_task_level;
  PromptContext ctx;
  std::string segment;
  std::optional<std::string> instance_id;
};

// Per-family context quotas for one curriculum phase.
struct PhasePlan {
  std::size_t instances = 0;
  std::size_t task_level = 0;
  std::size_t event_driven = 0;
  std::size_t evolve = 0;
  std::size_t maintain = 0;
  std::size_t total() const { return task_level + event_driven + evolve + maintain; }
};

// Reference per-phase RL data counts, scaled and rounded to nearest.
PhasePlan reference_phase_plan(Phase phase, double scale = 1.0);

// What earlier stages produced.
struct PhaseSources {
  std::vector<StreamItem> stream;
  std::vector<Trajectory> conditioned;
  std::vector<Skill> candidates;
  std::vector<Skill> bank_skills;
};

// Builds prompt contexts for a phase. extract_only emits extraction contexts;
// extract_evolve adds evolve contexts (needs conditioned trajectories);
// full adds one maintain context per candidate (needs candidates).
// With a plan, each family is cut to its quota by even-stride selection.
// Throws Error{missing_predecessor}.
std::vector<TrainingPrompt> assemble_phase_data(Phase phase, const PhaseSources& sources, Embedder& embedder,
                                                const RunConfig& cfg, const std::optional<PhasePlan>& plan = {});

// Picks `count` of `total` indices at an even stride (all when count >= total).
std::vector<std::size_t> even_stride(std::size_t total, std::size_t count);

struct RewardLoopResult {
  BatchHeader header;
  std::vector<BatchRecord> batch;
  std::vector<RewardRecord> rewards;
  std::vector<RunIssue> issues;
};

// Algorithm: pre-cache baselines over the pool, then for each prompt sample G
// outputs, score each, normalize advantages and emit a batch record.
RewardLoopResult run_reward_loop(const RunConfig& cfg, const std::vector<TrainingPrompt>& prompts,
                                 const std::vector<TaskInstance>& task_pool, ProviderSet& providers,
                                 BaselineCache& baselines);

// Config snapshot, seeds, template version, provider spec digests. No timestamps.
nlohmann::json run_manifest(const RunConfig& cfg, const ProviderSet& providers);

struct SimulationOutputs {
  ManagementResult management;
  RewardLoopResult reward;
  std::vector<BaselineRecord> baselines;
};

// Full offline pipeline. Writes manifest.json, ledger.jsonl, stats.csv,
// rewards.jsonl, batch.jsonl, baselines.json and skills/ under out_dir.
SimulationOutputs run_simulation(const RunConfig& cfg, ProviderSet& providers, const std::filesystem::path& out_dir);

}  // namespace skillbank
