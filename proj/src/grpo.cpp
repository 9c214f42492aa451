#include "skillbank/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "skillbank/error.hpp"
#include "skillbank/hash.hpp"

namespace skillbank {

using json = nlohmann::json;

namespace {

void require_finite(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw Error(ErrorCode::non_finite_input, std::string(what) + " contains a non-finite value");
}

void check_group(const GroupSample& g, const AdvantageSet& adv) {
  auto n = g.rewards.size();
  if (n < 2) throw Error(ErrorCode::group_too_small, "group of size " + std::to_string(n));
  if (g.log_probs_new.size() != n || g.log_probs_old.size() != n || g.log_probs_ref.size() != n ||
      adv.advantages.size() != n)
    throw Error(ErrorCode::arity_mismatch, "group lists differ in length");
  require_finite(g.log_probs_new, "log_probs_new");
  require_finite(g.log_probs_old, "log_probs_old");
  require_finite(g.log_probs_ref, "log_probs_ref");
  require_finite(adv.advantages, "advantages");
}

void check_inputs(const GrpoLossInputs& in) {
  if (!(in.clip_eps > 0.0) || !(in.kl_beta >= 0.0) || !std::isfinite(in.clip_eps) || !std::isfinite(in.kl_beta))
    throw Error(ErrorCode::invalid_config, "clip_eps must be > 0 and kl_beta >= 0");
}

double norm(const std::vector<double>& v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); }

}  // namespace

AdvantageSet normalize_advantages(const std::vector<double>& rewards, double eps_a) {
  if (rewards.size() < 2) throw Error(ErrorCode::group_too_small, "group of size " + std::to_string(rewards.size()));
  require_finite(rewards, "rewards");
  if (!(eps_a >= 0.0)) throw Error(ErrorCode::invalid_config, "eps_a must be >= 0");
  AdvantageSet out;
  out.eps_a = eps_a;
  auto G = static_cast<double>(rewards.size());
  out.mu = std::accumulate(rewards.begin(), rewards.end(), 0.0) / G;
  double ss = 0.0;
  for (double r : rewards) ss += (r - out.mu) * (r - out.mu);
  out.sigma = std::sqrt(ss / G);
  out.advantages.assign(rewards.size(), 0.0);
  bool constant = std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); });
  if (constant) {
    out.sigma = 0.0;
    return out;
  }
  double denom = out.sigma + eps_a;
  if (denom == 0.0) return out;
  for (std::size_t j = 0; j < rewards.size(); ++j) out.advantages[j] = (rewards[j] - out.mu) / denom;
  return out;
}

double kl_k3(double log_prob_new, double log_prob_ref) {
  double d = log_prob_ref - log_prob_new;
  return std::exp(d) - d - 1.0;
}

double grpo_loss(const GroupSample& group, const AdvantageSet& adv, const GrpoLossInputs& inputs) {
  check_group(group, adv);
  check_inputs(inputs);
  double sum = 0.0;
  for (std::size_t j = 0; j < group.size(); ++j) {
    double rho = std::exp(group.log_probs_new[j] - group.log_probs_old[j]);
    double rho_clip = std::clamp(rho, 1.0 - inputs.clip_eps, 1.0 + inputs.clip_eps);
    double a = adv.advantages[j];
    sum += std::min(rho * a, rho_clip * a) - inputs.kl_beta * kl_k3(group.log_probs_new[j], group.log_probs_ref[j]);
  }
  double loss = -sum / static_cast<double>(group.size());
  if (!std::isfinite(loss)) throw Error(ErrorCode::non_finite_input, "loss overflowed");
  return loss;
}

std::vector<double> grpo_loss_grad_logp(const GroupSample& group, const AdvantageSet& adv,
                                        const GrpoLossInputs& inputs) {
  check_group(group, adv);
  check_inputs(inputs);
  auto G = static_cast<double>(group.size());
  std::vector<double> grad(group.size());
  for (std::size_t j = 0; j < group.size(); ++j) {
    double rho = std::exp(group.log_probs_new[j] - group.log_probs_old[j]);
    double rho_clip = std::clamp(rho, 1.0 - inputs.clip_eps, 1.0 + inputs.clip_eps);
    double a = adv.advantages[j];
    // The clipped branch is constant in theta outside the clip range.
    double surrogate = rho * a <= rho_clip * a ? rho * a : 0.0;
    double kl = 1.0 - std::exp(group.log_probs_ref[j] - group.log_probs_new[j]);
    grad[j] = -(surrogate - inputs.kl_beta * kl) / G;
  }
  return grad;
}

std::vector<double> ToyPolicy::probs() const {
  std::vector<double> p(theta.size());
  if (theta.empty()) return p;
  double m = *std::max_element(theta.begin(), theta.end());
  double z = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) z += (p[i] = std::exp(theta[i] - m));
  for (auto& x : p) x /= z;
  return p;
}

double ToyPolicy::log_prob(std::size_t action) const {
  double m = *std::max_element(theta.begin(), theta.end());
  double z = 0.0;
  for (double t : theta) z += std::exp(t - m);
  return theta.at(action) - m - std::log(z);
}

double unit_double(std::uint64_t seed, std::uint64_t counter) {
  auto h = splitmix64(splitmix64(seed) ^ (counter * 0x9e3779b97f4a7c15ULL + 1));
  return static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53);
}

GroupSample toy_rollout(const ToyPolicy& policy, const ToyPolicy& reference, const ToyRewardTable& table,
                        const std::string& prompt_id, std::size_t G, std::uint64_t rng_seed) {
  if (G < 2) throw Error(ErrorCode::group_too_small, "group of size " + std::to_string(G));
  if (policy.theta.empty() || reference.theta.size() != policy.theta.size() ||
      table.per_action.size() != policy.theta.size())
    throw Error(ErrorCode::arity_mismatch, "policy, reference and reward table disagree on template count");
  auto p = policy.probs();
  GroupSample g;
  g.prompt_id = prompt_id;
  std::uint64_t counter = 0;
  for (std::size_t j = 0; j < G; ++j) {
    double u = unit_double(rng_seed, counter++);
    std::size_t a = 0;
    double acc = p[0];
    while (u >= acc && a + 1 < p.size()) acc += p[++a];
    double jitter = table.noise * (2.0 * unit_double(rng_seed, counter++) - 1.0);
    g.actions.push_back(a);
    g.rewards.push_back(table.per_action[a] + jitter);
    g.log_probs_old.push_back(policy.log_prob(a));
    g.log_probs_new.push_back(policy.log_prob(a));
    g.log_probs_ref.push_back(reference.log_prob(a));
  }
  return g;
}

double toy_loss(const ToyPolicy& current, const GroupSample& group, const AdvantageSet& adv,
                const GrpoLossInputs& inputs) {
  GroupSample g = group;
  for (std::size_t j = 0; j < g.size(); ++j) g.log_probs_new[j] = current.log_prob(g.actions.at(j));
  return grpo_loss(g, adv, inputs);
}

std::vector<double> toy_loss_grad(const ToyPolicy& current, const GroupSample& group, const AdvantageSet& adv,
                                  const GrpoLossInputs& inputs) {
  GroupSample g = group;
  for (std::size_t j = 0; j < g.size(); ++j) g.log_probs_new[j] = current.log_prob(g.actions.at(j));
  auto dl = grpo_loss_grad_logp(g, adv, inputs);
  auto p = current.probs();
  std::vector<double> grad(current.theta.size(), 0.0);
  // d log p(a) / d theta_k = 1[k == a] - p_k
  for (std::size_t j = 0; j < g.size(); ++j)
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += dl[j] * ((k == g.actions[j] ? 1.0 : 0.0) - p[k]);
  return grad;
}

std::vector<double> toy_loss_grad_fd(const ToyPolicy& current, const GroupSample& group, const AdvantageSet& adv,
                                     const GrpoLossInputs& inputs, double h) {
  std::vector<double> grad(current.theta.size());
  for (std::size_t k = 0; k < grad.size(); ++k) {
    ToyPolicy plus = current, minus = current;
    plus.theta[k] += h;
    minus.theta[k] -= h;
    grad[k] = (toy_loss(plus, group, adv, inputs) - toy_loss(minus, group, adv, inputs)) / (2.0 * h);
  }
  return grad;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b.at(i);
  double scale = std::max(norm(a), norm(b));
  return scale == 0.0 ? 0.0 : norm(d) / scale;
}

std::vector<GradientCheck> run_gradient_check(std::size_t n_seeds, std::uint64_t first_seed, std::size_t n_templates,
                                              std::size_t G) {
  std::vector<GradientCheck> out;
  for (std::uint64_t seed = first_seed; seed < first_seed + n_seeds; ++seed) {
    std::uint64_t c = 1000;
    ToyPolicy old_policy, ref_policy, current;
    ToyRewardTable table;
    for (std::size_t k = 0; k < n_templates; ++k) {
      old_policy.theta.push_back(2.0 * unit_double(seed, c++) - 1.0);
      ref_policy.theta.push_back(2.0 * unit_double(seed, c++) - 1.0);
      table.per_action.push_back(unit_double(seed, c++));
    }
    table.noise = 0.05;
    current = old_policy;
    // A small step away from the old policy keeps ratios inside and near the clip range.
    for (auto& t : current.theta) t += 0.3 * (2.0 * unit_double(seed, c++) - 1.0);
    auto group = toy_rollout(old_policy, ref_policy, table, "toy-" + std::to_string(seed), G, seed);
    auto adv = normalize_advantages(group.rewards, 1e-6);
    GrpoLossInputs inputs{0.2, 0.02 + 0.5 * unit_double(seed, c++)};
    auto ga = toy_loss_grad(current, group, adv, inputs);
    auto gf = toy_loss_grad_fd(current, group, adv, inputs, 1e-5);
    out.push_back({seed, relative_error(ga, gf)});
  }
  return out;
}

void to_json(json& j, const BatchRecord& r) {
  json rewards = json::array();
  for (const auto& b : r.rewards) rewards.push_back(b);
  j = json{{"prompt_id", r.prompt_id},
           {"family", to_string(r.prompt.family)},
           {"prompt", {{"system", r.prompt.system}, {"user", r.prompt.user}}},
           {"template_version", r.prompt.template_version},
           {"outputs", r.outputs},
           {"rewards", rewards},
           {"advantages", r.advantages.advantages},
           {"mu", r.advantages.mu},
           {"sigma", r.advantages.sigma},
           {"eps_a", r.advantages.eps_a}};
}

void from_json(const json& j, BatchRecord& r) {
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.prompt.family = prompt_family_from_string(j.at("family").get<std::string>());
  r.prompt.system = j.at("prompt").at("system").get<std::string>();
  r.prompt.user = j.at("prompt").at("user").get<std::string>();
  r.prompt.template_version = j.value("template_version", "");
  r.outputs = j.at("outputs").get<std::vector<std::string>>();
  r.rewards.clear();
  for (const auto& b : j.at("rewards")) r.rewards.push_back(b.get<RewardBreakdown>());
  r.advantages.advantages = j.at("advantages").get<std::vector<double>>();
  r.advantages.mu = j.at("mu").get<double>();
  r.advantages.sigma = j.at("sigma").get<double>();
  r.advantages.eps_a = j.value("eps_a", 1e-6);
}

void to_json(json& j, const BatchHeader& h) {
  j = json{{"header", true},         {"kl_estimator", h.kl_estimator}, {"clip_eps", h.clip_eps},
           {"kl_beta", h.kl_beta},   {"eps_a", h.eps_a},               {"group_size", h.group_size},
           {"template_version", h.template_version}};
}

void from_json(const json& j, BatchHeader& h) {
  h.kl_estimator = j.at("kl_estimator").get<std::string>();
  h.clip_eps = j.at("clip_eps").get<double>();
  h.kl_beta = j.at("kl_beta").get<double>();
  h.eps_a = j.at("eps_a").get<double>();
  h.group_size = j.at("group_size").get<std::size_t>();
  h.template_version = j.value("template_version", "");
}

std::string batch_jsonl(const BatchHeader& header, const std::vector<BatchRecord>& records) {
  std::string out = json(header).dump() + "\n";
  for (const auto& r : records) out += json(r).dump() + "\n";
  return out;
}

std::pair<BatchHeader, std::vector<BatchRecord>> read_batch(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::io_error, path.string() + " is empty");
  auto header = json::parse(line).get<BatchHeader>();
  std::vector<BatchRecord> records;
  while (std::getline(in, line))
    if (!line.empty()) records.push_back(json::parse(line).get<BatchRecord>());
  return {header, records};
}

}  // namespace skillbank
