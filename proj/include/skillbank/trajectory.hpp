#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace skillbank {

struct Step {
  int index = 1;
  std::string reasoning;
  std::string action;  // shell command or edit description
  std::string observation;
  friend bool operator==(const Step&, const Step&) = default;
};

// No constraint ties `success` to `verifier_score`.
struct Outcome {
  double verifier_score = 0.0;  // in [0, 1]
  bool success = false;
  std::optional<std::string> summary;
  friend bool operator==(const Outcome&, const Outcome&) = default;
};

struct Trajectory {
  std::string instance_id;
  std::string benchmark_scope;
  std::string task_context;
  std::vector<Step> steps;
  std::optional<Outcome> outcome;
  std::vector<std::string> skill_ids_injected;
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct TaskInstance {
  std::string instance_id;
  std::string benchmark_scope;
  std::string goal_text;
  std::optional<std::string> repository_context;
  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

void to_json(nlohmann::json& j, const Step& s);
void from_json(const nlohmann::json& j, Step& s);
void to_json(nlohmann::json& j, const Outcome& o);
void from_json(const nlohmann::json& j, Outcome& o);
void to_json(nlohmann::json& j, const Trajectory& t);
void from_json(const nlohmann::json& j, Trajectory& t);
void to_json(nlohmann::json& j, const TaskInstance& t);
void from_json(const nlohmann::json& j, TaskInstance& t);

// Content hash of the canonical JSON form; used as a script-table key.
std::string trajectory_digest(const Trajectory& t);

enum class LogFormat {
  mini_swe,    // chat transcript JSON: {"instance_id", "messages": [...], "info": {...}}
  react_bash,  // JSON lines of typed events: meta / thought / tool_call / tool_result / final
  generic,     // marker text: INSTANCE: BENCHMARK: TASK: THOUGHT: ACTION: OBSERVATION: SCORE: ...
};

std::string_view to_string(LogFormat f);
LogFormat log_format_from_string(std::string_view s);

// Converts an agent log into a Trajectory with steps numbered 1..T.
// Fragments that fit no step are appended to the nearest step's observation.
// Throws Error{unrecognized_format} when no step boundary exists and
// Error{missing_instance_id} when the log names no instance.
Trajectory normalize(std::string_view raw_log, LogFormat format);

// Renders a trajectory in the generic marker format; normalize(to_generic_log(t), generic) == t
// for any t produced by normalize.
std::string to_generic_log(const Trajectory& t);

// <dir>/<instance_id>/<rollout_idx>.traj.json
std::filesystem::path trajectory_path(const std::filesystem::path& dir, const std::string& instance_id,
                                      std::size_t rollout_idx);
void write_trajectory_file(const std::filesystem::path& path, const Trajectory& t);
Trajectory read_trajectory_file(const std::filesystem::path& path);

enum class EvidenceMode { single, related_set };

struct EvidenceConfig {
  // Approximate tokens: whitespace-delimited words x 1.3. 7800 tokens ~ 6000 words.
  double max_tokens = 7800.0;
  bool include_summaries = true;
};

std::size_t word_count(std::string_view text);
double estimate_tokens(std::string_view text);

struct EvidenceBlock {
  EvidenceMode mode = EvidenceMode::single;
  std::string text;
  std::string task_context;  // of the first trajectory
  std::vector<std::string> instance_ids;
  std::vector<std::vector<int>> kept_steps;  // per trajectory, 1-based step indices
  std::vector<std::optional<std::string>> result_summaries;
};

// Picks `keep` of `total` step positions (0-based): the first two, the last
// two, and keep-4 middle positions at an even stride. keep >= total keeps all.
std::vector<std::size_t> select_step_positions(std::size_t total, std::size_t keep);

// single needs exactly one trajectory, related_set two or three; otherwise
// Error{arity_mismatch}. Middle steps are dropped symmetrically to meet the
// budget; the first two and last two steps always remain.
EvidenceBlock assemble_evidence(std::span<const Trajectory> trajectories, EvidenceMode mode,
                                const EvidenceConfig& cfg = {});

}  // namespace skillbank
