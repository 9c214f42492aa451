#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillbank/protocol.hpp"
#include "skillbank/reward.hpp"

namespace skillbank {

struct GroupSample {
  std::string prompt_id;
  std::vector<double> rewards;
  std::vector<double> log_probs_new;
  std::vector<double> log_probs_old;
  std::vector<double> log_probs_ref;
  std::vector<std::size_t> actions;  // sampled template index per member (toy policy only)

  std::size_t size() const { return rewards.size(); }
};

struct AdvantageSet {
  std::vector<double> advantages;
  double mu = 0.0;
  double sigma = 0.0;  // population standard deviation
  double eps_a = 1e-6;
};

// A_j = (R_j - mu) / (sigma + eps_a). Identical rewards, or sigma + eps_a == 0,
// give all-zero advantages. Throws Error{group_too_small} for G < 2 and
// Error{non_finite_input} for NaN or infinite rewards.
AdvantageSet normalize_advantages(const std::vector<double>& rewards, double eps_a = 1e-6);

struct GrpoLossInputs {
  double clip_eps = 0.2;
  double kl_beta = 0.02;
};

// D = exp(ref - new) - (ref - new) - 1, non-negative and zero when new == ref.
double kl_k3(double log_prob_new, double log_prob_ref);

// -(1/G) sum_j [min(rho_j A_j, clip(rho_j) A_j) - beta D_j], rho_j = exp(new_j - old_j).
double grpo_loss(const GroupSample& group, const AdvantageSet& adv, const GrpoLossInputs& inputs);

// d loss / d log_probs_new_j for each member.
std::vector<double> grpo_loss_grad_logp(const GroupSample& group, const AdvantageSet& adv,
                                        const GrpoLossInputs& inputs);

// Context-free softmax over a fixed set of operation templates.
struct ToyPolicy {
  std::vector<double> theta;

  std::vector<double> probs() const;
  double log_prob(std::size_t action) const;
};

struct ToyRewardTable {
  std::vector<double> per_action;  // reward of each template
  double noise = 0.0;              // uniform jitter amplitude, seeded
};

// Samples G templates from `policy` (the old policy) with a seeded stream and
// scores them from the table. new == old log-probs; ref uses `reference`.
GroupSample toy_rollout(const ToyPolicy& policy, const ToyPolicy& reference, const ToyRewardTable& table,
                        const std::string& prompt_id, std::size_t G, std::uint64_t rng_seed);

// Loss as a function of the current parameters, with old/ref log-probs and advantages fixed.
double toy_loss(const ToyPolicy& current, const GroupSample& group, const AdvantageSet& adv,
                const GrpoLossInputs& inputs);

// Analytic gradient of toy_loss with respect to current.theta.
std::vector<double> toy_loss_grad(const ToyPolicy& current, const GroupSample& group, const AdvantageSet& adv,
                                  const GrpoLossInputs& inputs);

// Central differences of toy_loss with step h.
std::vector<double> toy_loss_grad_fd(const ToyPolicy& current, const GroupSample& group, const AdvantageSet& adv,
                                     const GrpoLossInputs& inputs, double h = 1e-5);

// ||a - b|| / max(||a||, ||b||), 0 when both are zero.
double relative_error(const std::vector<double>& a, const std::vector<double>& b);

struct GradientCheck {
  std::uint64_t seed = 0;
  double relative_error = 0.0;
};

// Builds a random toy problem per seed and compares analytic and numeric gradients.
std::vector<GradientCheck> run_gradient_check(std::size_t n_seeds, std::uint64_t first_seed = 1,
                                              std::size_t n_templates = 5, std::size_t G = 6);

// Uniform double in [0, 1) from a seeded counter stream.
double unit_double(std::uint64_t seed, std::uint64_t counter);

// ---- batch export ----

struct BatchRecord {
  std::string prompt_id;
  PromptText prompt;
  std::vector<std::string> outputs;
  std::vector<RewardBreakdown> rewards;
  AdvantageSet advantages;
};

struct BatchHeader {
  std::string kl_estimator = "k3";
  double clip_eps = 0.2;
  double kl_beta = 0.02;
  double eps_a = 1e-6;
  std::size_t group_size = 6;
  std::string template_version;
};

void to_json(nlohmann::json& j, const BatchRecord& r);
void from_json(const nlohmann::json& j, BatchRecord& r);
void to_json(nlohmann::json& j, const BatchHeader& h);
void from_json(const nlohmann::json& j, BatchHeader& h);

// First line is the header, then one record per prompt.
std::string batch_jsonl(const BatchHeader& header, const std::vector<BatchRecord>& records);
std::pair<BatchHeader, std::vector<BatchRecord>> read_batch(const std::filesystem::path& path);

}  // namespace skillbank
