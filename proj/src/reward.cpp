#include "skillbank/reward.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "skillbank/bank.hpp"
#include "skillbank/error.hpp"

namespace skillbank {

using json = nlohmann::json;

double score_rubric(const RubricAnswers& answers) {
  const auto& spec = rubric_spec(answers.family);
  int sum = 0;
  for (const auto& dim : spec.dimensions) {
    if (auto it = answers.per_dimension.find(dim.name); it != answers.per_dimension.end())
      sum += std::clamp(it->second, 0, dim.max_score);
  }
  return static_cast<double>(sum) / static_cast<double>(spec.total());
}

void to_json(json& j, const BaselineRecord& b) {
  j = json{{"instance_id", b.instance_id}, {"rollout_scores", b.rollout_scores}, {"baseline", b.baseline}};
}

void from_json(const json& j, BaselineRecord& b) {
  b.instance_id = j.at("instance_id").get<std::string>();
  b.rollout_scores = j.at("rollout_scores").get<std::vector<double>>();
  b.baseline = j.at("baseline").get<double>();
}

BaselineRecord compute_baseline(const TaskInstance& instance, PolicyProvider& policy, Verifier& verifier,
                                std::size_t n) {
  if (n == 0) throw Error(ErrorCode::invalid_config, "baseline needs n >= 1 rollouts");
  BaselineRecord rec;
  rec.instance_id = instance.instance_id;
  for (std::size_t i = 0; i < n; ++i) {
    auto t = policy.rollout(instance, {});
    rec.rollout_scores.push_back(verifier.verify(t));
    rec.rollouts.push_back(std::move(t));
  }
  rec.baseline = std::accumulate(rec.rollout_scores.begin(), rec.rollout_scores.end(), 0.0) / static_cast<double>(n);
  return rec;
}

const BaselineRecord& BaselineCache::get_or_compute(const TaskInstance& instance, PolicyProvider& policy,
                                                    Verifier& verifier, std::size_t n) {
  // Held across the rollouts so two callers never roll out the same instance.
  std::lock_guard lock(mu_);
  if (auto it = records_.find(instance.instance_id); it != records_.end()) return it->second;
  auto rec = compute_baseline(instance, policy, verifier, n);
  return records_.emplace(instance.instance_id, std::move(rec)).first->second;
}

std::optional<BaselineRecord> BaselineCache::find(const std::string& instance_id) const {
  std::lock_guard lock(mu_);
  if (auto it = records_.find(instance_id); it != records_.end()) return it->second;
  return std::nullopt;
}

std::size_t BaselineCache::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

std::vector<BaselineRecord> BaselineCache::records() const {
  std::lock_guard lock(mu_);
  std::vector<BaselineRecord> out;
  for (const auto& [_, r] : records_) out.push_back(r);
  return out;
}

ExecutionResult execution_reward(const Skill& skill, const TaskInstance& instance, PolicyProvider& policy,
                                 Verifier& verifier, BaselineCache& baselines, std::size_t n) {
  ExecutionResult out;
  out.baseline = baselines.get_or_compute(instance, policy, verifier, n).baseline;
  const Skill injected[] = {skill};
  out.conditioned = policy.rollout(instance, injected);
  out.verifier_score = verifier.verify(out.conditioned);
  out.r_e = out.verifier_score - out.baseline;
  return out;
}

std::string_view to_string(RewardPath p) {
  switch (p) {
    case RewardPath::skill_output: return "skill_output";
    case RewardPath::decision_only: return "decision_only";
    case RewardPath::malformed: return "malformed";
  }
  return "unknown";
}

RewardPath reward_path_from_string(std::string_view s) {
  if (s == "skill_output") return RewardPath::skill_output;
  if (s == "decision_only") return RewardPath::decision_only;
  if (s == "malformed") return RewardPath::malformed;
  throw Error(ErrorCode::invalid_config, "unknown reward path '" + std::string(s) + "'");
}

RewardPath path_for(const std::optional<Operation>& op) {
  if (!op) return RewardPath::malformed;
  return op->emits_skill() ? RewardPath::skill_output : RewardPath::decision_only;
}

void to_json(json& j, const RewardBreakdown& r) {
  j = json{{"path", to_string(r.path)}, {"r_q", r.r_q},       {"r_a", nullptr},
           {"r_e", nullptr},            {"lambda", r.lambda}, {"lambda_dec", r.lambda_dec},
           {"final", r.final}};
  if (r.r_a) j["r_a"] = *r.r_a;
  if (r.r_e) j["r_e"] = *r.r_e;
}

void from_json(const json& j, RewardBreakdown& r) {
  r.path = reward_path_from_string(j.at("path").get<std::string>());
  r.r_q = j.at("r_q").get<double>();
  r.r_a = j.contains("r_a") && !j.at("r_a").is_null() ? std::optional(j.at("r_a").get<double>()) : std::nullopt;
  r.r_e = j.contains("r_e") && !j.at("r_e").is_null() ? std::optional(j.at("r_e").get<double>()) : std::nullopt;
  r.lambda = j.value("lambda", 0.25);
  r.lambda_dec = j.value("lambda_dec", 0.25);
  r.final = j.at("final").get<double>();
}

RewardBreakdown hybrid_reward(RewardPath path, double r_q, std::optional<double> r_a, std::optional<double> r_e,
                              const RewardConfig& cfg) {
  RewardBreakdown out;
  out.path = path;
  out.lambda = cfg.lambda;
  out.lambda_dec = cfg.lambda_dec;
  switch (path) {
    case RewardPath::skill_output:
      if (!r_a || !r_e)
        throw Error(ErrorCode::missing_component,
                    std::string("skill output reward needs ") + (!r_a ? "r_a" : "r_e"));
      out.r_q = r_q;
      out.r_a = r_a;
      out.r_e = r_e;
      out.final = cfg.lambda * r_q + *r_a * *r_e;
      break;
    case RewardPath::decision_only:
      out.r_q = r_q;
      out.final = cfg.lambda_dec * r_q;
      break;
    case RewardPath::malformed:
      out.r_q = 0.0;
      out.final = 0.0;
      break;
  }
  return out;
}

RewardBreakdown hybrid_reward(const std::optional<Operation>& op, double r_q, std::optional<double> r_a,
                              std::optional<double> r_e, const RewardConfig& cfg) {
  return hybrid_reward(path_for(op), r_q, r_a, r_e, cfg);
}

JudgeOutcome judge_score(CompletionProvider& judge, PromptFamily judge_family, const PromptContext& ctx,
                         const SamplingParams& params) {
  auto prompt = render(judge_family, ctx);
  JudgeOutcome out;
  for (int attempt = 0; attempt < 2; ++attempt) {
    ++out.attempts;
    SamplingParams p = params;
    p.seed = params.seed + static_cast<std::uint64_t>(attempt);
    try {
      auto answers = parse_rubric(judge.complete(prompt, p), judge_family);
      out.score = score_rubric(answers);
      out.answers = std::move(answers);
      out.error.reset();
      return out;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::malformed_output && e.code() != ErrorCode::range_violation) throw;
      out.error = e.what();
      spdlog::warn("{} reply unusable (attempt {}): {}", to_string(judge_family), attempt + 1, e.what());
    }
  }
  out.score = 0.0;
  return out;
}

void to_json(json& j, const RewardRecord& r) {
  j = json{{"operation_id", r.operation_id},
           {"family", r.family},
           {"path", to_string(r.reward.path)},
           {"r_q", r.reward.r_q},
           {"r_a", r.reward.r_a ? json(*r.reward.r_a) : json(nullptr)},
           {"r_e", r.reward.r_e ? json(*r.reward.r_e) : json(nullptr)},
           {"lambda", r.reward.lambda},
           {"lambda_dec", r.reward.lambda_dec},
           {"final", r.reward.final},
           {"instance_id", r.instance_id ? json(*r.instance_id) : json(nullptr)},
           {"template_version", r.template_version}};
}

void from_json(const json& j, RewardRecord& r) {
  r.operation_id = j.at("operation_id").get<std::string>();
  r.family = j.value("family", "");
  from_json(j, r.reward);
  r.instance_id = j.contains("instance_id") && !j.at("instance_id").is_null()
                      ? std::optional(j.at("instance_id").get<std::string>())
                      : std::nullopt;
  r.template_version = j.value("template_version", std::string(kTemplateVersion));
}

std::string reward_log_jsonl(const std::vector<RewardRecord>& records) {
  std::string out;
  for (const auto& r : records) out += json(r).dump() + "\n";
  return out;
}

std::vector<RewardRecord> read_reward_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + path.string());
  std::vector<RewardRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(json::parse(line).get<RewardRecord>());
  }
  return out;
}

}  // namespace skillbank
