#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillbank/protocol.hpp"
#include "skillbank/retrieval.hpp"
#include "skillbank/skill.hpp"
#include "skillbank/trajectory.hpp"

namespace skillbank {

enum class ProviderKind { manager, policy, judge, verifier, embedder };
enum class Backend { scripted, http, hashing };

std::string_view to_string(ProviderKind k);
std::string_view to_string(Backend b);

struct SamplingParams {
  double temperature = 0.7;
  std::uint64_t seed = 0;
};

// One provider's configuration. scripted needs a script (inline or by path);
// http needs an endpoint; hashing (embedder only) needs neither.
struct ProviderSpec {
  ProviderKind kind = ProviderKind::manager;
  Backend backend = Backend::scripted;
  nlohmann::json script;  // inline script table, resolved from script_path when loaded from a file
  std::optional<std::string> script_path;
  std::string endpoint;                 // http://host:port/path
  std::optional<std::string> auth_env;  // env var holding a bearer token
  int connect_timeout_ms = 5000;
  int read_timeout_ms = 120000;
  int retries = 2;
  int backoff_ms = 200;
  std::size_t dims = 256;  // hashing embedder

  void validate() const;  // Error{invalid_config}
};

void to_json(nlohmann::json& j, const ProviderSpec& s);
// `kind` must be set by the caller before or via the "kind" key.
void from_json(const nlohmann::json& j, ProviderSpec& s);

// Content hash of the whitespace-canonicalized system and user messages.
std::string prompt_digest(const PromptText& prompt);

// Key used by scripted policy and verifier tables: "<instance_id>|<sorted skill ids, comma-joined>".
std::string rollout_key(std::string_view instance_id, std::vector<std::string> skill_ids);

class CompletionProvider {
 public:
  virtual ~CompletionProvider() = default;
  std::string complete(const PromptText& prompt, const SamplingParams& params = {});
  std::size_t calls() const { return calls_.load(); }

 protected:
  virtual std::string do_complete(const PromptText& prompt, const SamplingParams& params) = 0;

 private:
  std::atomic<std::size_t> calls_{0};
};

class PolicyProvider {
 public:
  virtual ~PolicyProvider() = default;
  // The result always carries skill_ids_injected equal to the injected ids, in order.
  Trajectory rollout(const TaskInstance& instance, std::span<const Skill> injected_skills);
  std::size_t calls() const { return calls_.load(); }
  std::size_t no_skill_calls() const { return no_skill_calls_.load(); }

 protected:
  virtual Trajectory do_rollout(const TaskInstance& instance, std::span<const Skill> injected_skills) = 0;

 private:
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> no_skill_calls_{0};
};

class Verifier {
 public:
  virtual ~Verifier() = default;
  // Scores outside [0, 1] are clamped with a warning.
  double verify(const Trajectory& trajectory);
  std::size_t calls() const { return calls_.load(); }

 protected:
  virtual double do_verify(const Trajectory& trajectory) = 0;

 private:
  std::atomic<std::size_t> calls_{0};
};

double clamp_score(double v, std::string_view source);

// ---- scripted backends ----
//
// Completion table:
//   {"by_digest": {digest: text | [text...]},
//    "rules": [{"family", "contains", "min_skills", "max_skills", "responses": [text...]}],
//    "by_family": {family: [text...]},
//    "sequence": [text...],
//    "missing": "error" | "default", "default": text}
// Lists cycle. Responses may use {{SKILL_ID:n}} (n-th "skill_id:" in the user
// message, 1-based) and {{CANDIDATE_ID}}.
class ScriptedCompletion final : public CompletionProvider {
 public:
  explicit ScriptedCompletion(nlohmann::json table);

 protected:
  std::string do_complete(const PromptText& prompt, const SamplingParams& params) override;

 private:
  std::string next(const std::string& key, const nlohmann::json& value);
  nlohmann::json table_;
  std::mutex mu_;
  std::map<std::string, std::size_t> cursors_;
};

// Policy table:
//   {"trajectories": {rollout_key | "<instance>|*": trajectory | [trajectory...]},
//    "missing": "error" | "synthesize"}
// "synthesize" builds a deterministic trajectory from the instance and skills.
class ScriptedPolicy final : public PolicyProvider {
 public:
  explicit ScriptedPolicy(nlohmann::json table);

 protected:
  Trajectory do_rollout(const TaskInstance& instance, std::span<const Skill> injected_skills) override;

 private:
  nlohmann::json table_;
  std::mutex mu_;
  std::map<std::string, std::size_t> cursors_;
};

// Deterministic stand-in rollout; its outcome score depends on the instance,
// the injected skills and the call index.
Trajectory synthesize_trajectory(const TaskInstance& instance, std::span<const Skill> injected_skills,
                                 std::size_t call_index);

// Verifier table:
//   {"by_digest": {trajectory digest: score}, "by_key": {rollout_key: score | [score...]},
//    "use_outcome": bool, "missing": "error" | "default", "default": score}
class ScriptedVerifier final : public Verifier {
 public:
  explicit ScriptedVerifier(nlohmann::json table);

 protected:
  double do_verify(const Trajectory& trajectory) override;

 private:
  nlohmann::json table_;
  std::mutex mu_;
  std::map<std::string, std::size_t> cursors_;
};

// ---- network ----

// Every HTTP attempt passes through this guard. Tests deny network and count attempts.
struct NetworkGuard {
  static void allow(bool allowed);
  static bool allowed();
  static std::size_t attempts();
  static void reset_attempts();
  static void check(std::string_view endpoint);  // Error{network_denied}
};

// POSTs JSON to spec.endpoint with retries on transport errors and 5xx.
nlohmann::json http_post_json(const ProviderSpec& spec, const nlohmann::json& body);

// POST {"prompt": {"system", "user", "family"}, "params": {"temperature", "seed"}} -> {"text"}
class HttpCompletion final : public CompletionProvider {
 public:
  explicit HttpCompletion(ProviderSpec spec) : spec_(std::move(spec)) {}

 protected:
  std::string do_complete(const PromptText& prompt, const SamplingParams& params) override;

 private:
  ProviderSpec spec_;
};

// POST {"instance", "skills"} -> {"trajectory"}
class HttpPolicy final : public PolicyProvider {
 public:
  explicit HttpPolicy(ProviderSpec spec) : spec_(std::move(spec)) {}

 protected:
  Trajectory do_rollout(const TaskInstance& instance, std::span<const Skill> injected_skills) override;

 private:
  ProviderSpec spec_;
};

// POST {"trajectory"} -> {"score"}
class HttpVerifier final : public Verifier {
 public:
  explicit HttpVerifier(ProviderSpec spec) : spec_(std::move(spec)) {}

 protected:
  double do_verify(const Trajectory& trajectory) override;

 private:
  ProviderSpec spec_;
};

// POST {"text"} -> {"vector"}
class HttpEmbedder final : public Embedder {
 public:
  HttpEmbedder(ProviderSpec spec) : spec_(std::move(spec)) {}
  Vector embed(std::string_view text) override;
  std::size_t dimension() const override { return spec_.dims; }
  std::string version() const override { return "http:" + spec_.endpoint; }

 private:
  ProviderSpec spec_;
};

struct ProviderSet {
  std::shared_ptr<CompletionProvider> manager;
  std::shared_ptr<CompletionProvider> judge;
  std::shared_ptr<PolicyProvider> policy;
  std::shared_ptr<Verifier> verifier;
  std::shared_ptr<Embedder> embedder;
  std::map<ProviderKind, ProviderSpec> specs;

  bool all_offline() const;
  // Content digests of each spec, recorded in run manifests.
  nlohmann::json spec_digests() const;
};

std::shared_ptr<CompletionProvider> make_completion(const ProviderSpec& spec);
std::shared_ptr<PolicyProvider> make_policy(const ProviderSpec& spec);
std::shared_ptr<Verifier> make_verifier(const ProviderSpec& spec);
std::shared_ptr<Embedder> make_embedder(const ProviderSpec& spec);

// Providers file: {"manager": spec, "judge": spec, "policy": spec, "verifier": spec,
// "embedder": spec}. script_path entries resolve relative to `base_dir`.
ProviderSet make_providers(const nlohmann::json& j, const std::filesystem::path& base_dir);
ProviderSet load_providers(const std::filesystem::path& path);

}  // namespace skillbank
