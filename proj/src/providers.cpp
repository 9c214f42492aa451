#include "skillbank/providers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "skillbank/error.hpp"
#include "skillbank/hash.hpp"

namespace skillbank {

using json = nlohmann::json;

namespace {

std::atomic<bool> g_network_allowed{true};
std::atomic<std::size_t> g_network_attempts{0};

ProviderKind kind_from_string(std::string_view s) {
  for (auto k : {ProviderKind::manager, ProviderKind::policy, ProviderKind::judge, ProviderKind::verifier,
                 ProviderKind::embedder})
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::invalid_config, "unknown provider kind '" + std::string(s) + "'");
}

Backend backend_from_string(std::string_view s) {
  for (auto b : {Backend::scripted, Backend::http, Backend::hashing})
    if (to_string(b) == s) return b;
  throw Error(ErrorCode::invalid_config, "unknown provider backend '" + std::string(s) + "'");
}

// Picks the next entry of a list value (cycling) or returns a scalar as-is.
const json& cycle(std::map<std::string, std::size_t>& cursors, const std::string& key, const json& value) {
  if (!value.is_array()) return value;
  if (value.empty()) throw Error(ErrorCode::invalid_config, "script entry '" + key + "' is an empty list");
  auto& c = cursors[key];
  const json& out = value[c % value.size()];
  ++c;
  return out;
}

std::string as_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::vector<std::string> labelled_values(const std::string& text, std::string_view label) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(label, 0) == 0) out.push_back(canonicalize_whitespace(line.substr(label.size())));
  }
  return out;
}

std::string fill_response(std::string text, const PromptText& prompt) {
  if (text.find("{{") == std::string::npos) return text;
  auto ids = labelled_values(prompt.user, "skill_id:");
  auto cands = labelled_values(prompt.user, "candidate_id:");
  std::string out;
  std::size_t pos = 0;
  while (true) {
    auto open = text.find("{{", pos);
    if (open == std::string::npos) break;
    auto close = text.find("}}", open);
    if (close == std::string::npos) break;
    auto name = text.substr(open + 2, close - open - 2);
    std::string value;
    if (name == "CANDIDATE_ID") {
      value = cands.empty() ? "" : cands.front();
    } else if (name.rfind("SKILL_ID:", 0) == 0) {
      auto n = std::strtoul(name.c_str() + 9, nullptr, 10);
      value = n >= 1 && n <= ids.size() ? ids[n - 1] : "";
    } else {
      value = text.substr(open, close + 2 - open);
    }
    out += text.substr(pos, open - pos) + value;
    pos = close + 2;
  }
  out += text.substr(pos);
  return out;
}

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + needle.size())) ++n;
  return n;
}

double unit_from(std::uint64_t h) { return static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53); }

std::vector<std::string> ids_of(std::span<const Skill> skills) {
  std::vector<std::string> ids;
  for (const auto& s : skills) ids.push_back(s.id);
  return ids;
}

}  // namespace

std::string_view to_string(ProviderKind k) {
  switch (k) {
    case ProviderKind::manager: return "manager";
    case ProviderKind::policy: return "policy";
    case ProviderKind::judge: return "judge";
    case ProviderKind::verifier: return "verifier";
    case ProviderKind::embedder: return "embedder";
  }
  return "unknown";
}

std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::scripted: return "scripted";
    case Backend::http: return "http";
    case Backend::hashing: return "hashing";
  }
  return "unknown";
}

void ProviderSpec::validate() const {
  auto name = std::string(to_string(kind));
  switch (backend) {
    case Backend::scripted:
      if (kind == ProviderKind::embedder)
        throw Error(ErrorCode::invalid_config, "embedder has no scripted backend; use hashing");
      if (!script.is_object()) throw Error(ErrorCode::invalid_config, name + ": scripted backend needs a script table");
      break;
    case Backend::http:
      // TLS is left to a local proxy; the adapter speaks plain HTTP.
      if (endpoint.rfind("http://", 0) != 0)
        throw Error(ErrorCode::invalid_config, name + ": http backend needs an http:// endpoint");
      if (retries < 0 || connect_timeout_ms <= 0 || read_timeout_ms <= 0)
        throw Error(ErrorCode::invalid_config, name + ": invalid retry or timeout settings");
      if (kind == ProviderKind::embedder && dims == 0)
        throw Error(ErrorCode::invalid_config, name + ": http embedder needs dims");
      break;
    case Backend::hashing:
      if (kind != ProviderKind::embedder) throw Error(ErrorCode::invalid_config, name + ": hashing is embedder-only");
      if (dims == 0) throw Error(ErrorCode::invalid_config, "hashing embedder needs dims >= 1");
      break;
  }
}

void to_json(json& j, const ProviderSpec& s) {
  j = json{{"kind", to_string(s.kind)}, {"backend", to_string(s.backend)}};
  switch (s.backend) {
    case Backend::scripted:
      if (s.script_path) j["script_path"] = *s.script_path;
      else j["script"] = s.script;
      break;
    case Backend::http:
      j["endpoint"] = s.endpoint;
      if (s.auth_env) j["auth_env"] = *s.auth_env;
      j["connect_timeout_ms"] = s.connect_timeout_ms;
      j["read_timeout_ms"] = s.read_timeout_ms;
      j["retries"] = s.retries;
      j["backoff_ms"] = s.backoff_ms;
      if (s.kind == ProviderKind::embedder) j["dims"] = s.dims;
      break;
    case Backend::hashing: j["dims"] = s.dims; break;
  }
}

void from_json(const json& j, ProviderSpec& s) {
  static const std::vector<std::string> known{"kind",      "backend",          "script",          "script_path",
                                              "endpoint",  "auth_env",         "connect_timeout_ms",
                                              "read_timeout_ms", "retries",    "backoff_ms",      "dims"};
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "provider spec must be an object");
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw Error(ErrorCode::invalid_config, "unknown provider key '" + k + "'");
  if (j.contains("kind")) s.kind = kind_from_string(j.at("kind").get<std::string>());
  s.backend = backend_from_string(j.at("backend").get<std::string>());
  if (j.contains("script")) s.script = j.at("script");
  if (j.contains("script_path")) s.script_path = j.at("script_path").get<std::string>();
  s.endpoint = j.value("endpoint", "");
  if (j.contains("auth_env")) s.auth_env = j.at("auth_env").get<std::string>();
  s.connect_timeout_ms = j.value("connect_timeout_ms", s.connect_timeout_ms);
  s.read_timeout_ms = j.value("read_timeout_ms", s.read_timeout_ms);
  s.retries = j.value("retries", s.retries);
  s.backoff_ms = j.value("backoff_ms", s.backoff_ms);
  s.dims = j.value("dims", s.dims);
}

std::string prompt_digest(const PromptText& prompt) {
  return sha256_hex(canonicalize_whitespace(prompt.system) + "\n\x1f\n" + canonicalize_whitespace(prompt.user));
}

std::string rollout_key(std::string_view instance_id, std::vector<std::string> skill_ids) {
  std::sort(skill_ids.begin(), skill_ids.end());
  std::string key(instance_id);
  key += "|";
  for (std::size_t i = 0; i < skill_ids.size(); ++i) {
    if (i) key += ",";
    key += skill_ids[i];
  }
  return key;
}

std::string CompletionProvider::complete(const PromptText& prompt, const SamplingParams& params) {
  ++calls_;
  return do_complete(prompt, params);
}

Trajectory PolicyProvider::rollout(const TaskInstance& instance, std::span<const Skill> injected_skills) {
  ++calls_;
  if (injected_skills.empty()) ++no_skill_calls_;
  auto t = do_rollout(instance, injected_skills);
  t.skill_ids_injected = ids_of(injected_skills);
  if (t.instance_id.empty()) t.instance_id = instance.instance_id;
  if (t.benchmark_scope.empty()) t.benchmark_scope = instance.benchmark_scope;
  if (t.task_context.empty()) t.task_context = instance.goal_text;
  return t;
}

double clamp_score(double v, std::string_view source) {
  if (std::isnan(v)) {
    spdlog::warn("{}: verifier returned NaN, using 0", source);
    return 0.0;
  }
  if (v < 0.0 || v > 1.0) {
    double c = std::clamp(v, 0.0, 1.0);
    spdlog::warn("{}: verifier score {} outside [0, 1], clamped to {}", source, v, c);
    return c;
  }
  return v;
}

double Verifier::verify(const Trajectory& trajectory) {
  ++calls_;
  return clamp_score(do_verify(trajectory), trajectory.instance_id);
}

ScriptedCompletion::ScriptedCompletion(json table) : table_(std::move(table)) {
  if (!table_.is_object()) throw Error(ErrorCode::invalid_config, "completion script must be an object");
}

std::string ScriptedCompletion::next(const std::string& key, const json& value) {
  return as_text(cycle(cursors_, key, value));
}

std::string ScriptedCompletion::do_complete(const PromptText& prompt, const SamplingParams&) {
  std::lock_guard lock(mu_);
  auto family = std::string(to_string(prompt.family));
  if (auto it = table_.find("by_digest"); it != table_.end()) {
    auto d = prompt_digest(prompt);
    if (auto e = it->find(d); e != it->end()) return fill_response(next("digest:" + d, *e), prompt);
  }
  if (auto it = table_.find("rules"); it != table_.end()) {
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto& r = (*it)[i];
      if (r.contains("family") && r.at("family").get<std::string>() != family) continue;
      if (r.contains("contains") && prompt.user.find(r.at("contains").get<std::string>()) == std::string::npos)
        continue;
      auto n = count_occurrences(prompt.user, "\nskill_id:") + (prompt.user.rfind("skill_id:", 0) == 0 ? 1 : 0);
      if (r.contains("min_skills") && n < r.at("min_skills").get<std::size_t>()) continue;
      if (r.contains("max_skills") && n > r.at("max_skills").get<std::size_t>()) continue;
      return fill_response(next("rule:" + std::to_string(i), r.at("responses")), prompt);
    }
  }
  if (auto it = table_.find("by_family"); it != table_.end()) {
    if (auto e = it->find(family); e != it->end()) return fill_response(next("family:" + family, *e), prompt);
  }
  if (auto it = table_.find("sequence"); it != table_.end())
    return fill_response(next("sequence", *it), prompt);
  if (table_.value("missing", "error") == "default" && table_.contains("default"))
    return fill_response(as_text(table_.at("default")), prompt);
  throw Error(ErrorCode::script_miss, "no scripted completion for " + family + " prompt " + prompt_digest(prompt));
}

ScriptedPolicy::ScriptedPolicy(json table) : table_(std::move(table)) {
  if (!table_.is_object()) throw Error(ErrorCode::invalid_config, "policy script must be an object");
}

Trajectory ScriptedPolicy::do_rollout(const TaskInstance& instance, std::span<const Skill> injected_skills) {
  std::lock_guard lock(mu_);
  auto key = rollout_key(instance.instance_id, ids_of(injected_skills));
  if (auto it = table_.find("trajectories"); it != table_.end()) {
    for (const auto& k : {key, instance.instance_id + "|*"}) {
      if (auto e = it->find(k); e != it->end()) return cycle(cursors_, k, *e).get<Trajectory>();
    }
  }
  if (table_.value("missing", "error") == "synthesize") {
    auto idx = cursors_["synth:" + key]++;
    return synthesize_trajectory(instance, injected_skills, idx);
  }
  throw Error(ErrorCode::script_miss, "no scripted rollout for " + key);
}

Trajectory synthesize_trajectory(const TaskInstance& instance, std::span<const Skill> injected_skills,
                                 std::size_t call_index) {
  Trajectory t;
  t.instance_id = instance.instance_id;
  t.benchmark_scope = instance.benchmark_scope;
  t.task_context = instance.goal_text;
  auto base_h = fnv1a64(instance.instance_id);
  auto tokens = tokenize(instance.goal_text);
  auto topic = tokens.empty() ? std::string("task") : tokens[base_h % tokens.size()];

  std::vector<std::string> guidance;
  for (const auto& s : injected_skills) guidance.push_back(s.title);
  std::size_t n_steps = 4 + base_h % 4;
  for (std::size_t i = 0; i < n_steps; ++i) {
    Step st;
    st.index = static_cast<int>(i + 1);
    if (i == 0) {
      st.reasoning = "Survey the workspace to locate code related to " + topic + ".";
      st.action = "grep -rn '" + topic + "' . | head -20";
      st.observation = "Found " + std::to_string(2 + base_h % 7) + " candidate locations.";
    } else if (i + 1 == n_steps) {
      st.reasoning = "Run the checks again to confirm the change.";
      st.action = "make test";
      st.observation = "Test run finished.";
    } else {
      std::string why = guidance.empty() ? "Narrow down the failing behaviour."
                                         : "Following prior knowledge: " + guidance[i % guidance.size()] + ".";
      st.reasoning = why;
      st.action = "python -m pytest -x -q -k " + topic + " # attempt " + std::to_string(i);
      st.observation = (i % 2) ? "1 failed, 3 passed" : "Traceback shows an assertion in the " + topic + " path";
    }
    t.steps.push_back(std::move(st));
  }

  double score = 0.2 + 0.4 * unit_from(splitmix64(base_h));
  for (const auto& s : injected_skills)
    score += -0.1 + 0.4 * unit_from(splitmix64(fnv1a64(s.id) ^ base_h));
  score += -0.1 + 0.2 * unit_from(splitmix64(base_h + 0x51ed27ULL * (call_index + 1)));
  score = std::round(std::clamp(score, 0.0, 1.0) * 1000.0) / 1000.0;
  t.outcome = Outcome{score, score >= 0.5, std::string(score >= 0.5 ? "tests passed" : "tests still failing")};
  return t;
}

ScriptedVerifier::ScriptedVerifier(json table) : table_(std::move(table)) {
  if (!table_.is_object()) throw Error(ErrorCode::invalid_config, "verifier script must be an object");
}

double ScriptedVerifier::do_verify(const Trajectory& trajectory) {
  std::lock_guard lock(mu_);
  if (auto it = table_.find("by_digest"); it != table_.end()) {
    auto d = trajectory_digest(trajectory);
    if (auto e = it->find(d); e != it->end()) return cycle(cursors_, "digest:" + d, *e).get<double>();
  }
  if (auto it = table_.find("by_key"); it != table_.end()) {
    auto key = rollout_key(trajectory.instance_id, trajectory.skill_ids_injected);
    for (const auto& k : {key, trajectory.instance_id + "|*"}) {
      if (auto e = it->find(k); e != it->end()) return cycle(cursors_, "key:" + k, *e).get<double>();
    }
  }
  if (table_.value("use_outcome", false) && trajectory.outcome) return trajectory.outcome->verifier_score;
  if (table_.value("missing", "error") == "default") return table_.value("default", 0.0);
  throw Error(ErrorCode::script_miss, "no scripted verifier score for " + trajectory.instance_id);
}

void NetworkGuard::allow(bool allowed) { g_network_allowed = allowed; }
bool NetworkGuard::allowed() { return g_network_allowed.load(); }
std::size_t NetworkGuard::attempts() { return g_network_attempts.load(); }
void NetworkGuard::reset_attempts() { g_network_attempts = 0; }

void NetworkGuard::check(std::string_view endpoint) {
  ++g_network_attempts;
  if (!g_network_allowed) throw Error(ErrorCode::network_denied, "network access denied for " + std::string(endpoint));
}

json http_post_json(const ProviderSpec& spec, const json& body) {
  auto scheme_end = spec.endpoint.find("://");
  auto path_start = spec.endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  std::string base = spec.endpoint.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "/" : spec.endpoint.substr(path_start);

  httplib::Headers headers;
  if (spec.auth_env) {
    if (const char* token = std::getenv(spec.auth_env->c_str()))
      headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  auto payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= spec.retries; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(spec.backoff_ms) << (attempt - 1)));
    NetworkGuard::check(spec.endpoint);
    httplib::Client cli(base);
    cli.set_connection_timeout(std::chrono::milliseconds(spec.connect_timeout_ms));
    cli.set_read_timeout(std::chrono::milliseconds(spec.read_timeout_ms));
    auto res = cli.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      spdlog::warn("{} attempt {}: {}", spec.endpoint, attempt + 1, last_error);
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      spdlog::warn("{} attempt {}: {}", spec.endpoint, attempt + 1, last_error);
      continue;
    }
    if (res->status != 200)
      throw Error(ErrorCode::provider_failure, spec.endpoint + ": HTTP " + std::to_string(res->status));
    auto j = json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw Error(ErrorCode::provider_failure, spec.endpoint + ": response is not a JSON object");
    return j;
  }
  throw Error(ErrorCode::provider_failure,
              spec.endpoint + ": giving up after " + std::to_string(spec.retries + 1) + " attempts, " + last_error);
}

namespace {

template <typename T>
T field(const json& j, const char* key, const std::string& endpoint) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorCode::provider_failure, endpoint + ": response lacks '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::provider_failure, endpoint + ": bad '" + key + "': " + e.what());
  }
}

}  // namespace

std::string HttpCompletion::do_complete(const PromptText& prompt, const SamplingParams& params) {
  json body{{"prompt", {{"family", to_string(prompt.family)}, {"system", prompt.system}, {"user", prompt.user}}},
            {"params", {{"temperature", params.temperature}, {"seed", params.seed}}}};
  return field<std::string>(http_post_json(spec_, body), "text", spec_.endpoint);
}

Trajectory HttpPolicy::do_rollout(const TaskInstance& instance, std::span<const Skill> injected_skills) {
  json body{{"instance", instance}, {"skills", std::vector<Skill>(injected_skills.begin(), injected_skills.end())}};
  return field<Trajectory>(http_post_json(spec_, body), "trajectory", spec_.endpoint);
}

double HttpVerifier::do_verify(const Trajectory& trajectory) {
  return field<double>(http_post_json(spec_, json{{"trajectory", trajectory}}), "score", spec_.endpoint);
}

Vector HttpEmbedder::embed(std::string_view text) {
  try {
    return field<Vector>(http_post_json(spec_, json{{"text", text}}), "vector", spec_.endpoint);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::network_denied) throw;
    throw Error(ErrorCode::embedder_failure, e.what());
  }
}

bool ProviderSet::all_offline() const {
  return std::all_of(specs.begin(), specs.end(), [](const auto& kv) { return kv.second.backend != Backend::http; });
}

json ProviderSet::spec_digests() const {
  json out = json::object();
  for (const auto& [kind, spec] : specs) {
    json j = spec;
    if (spec.backend == Backend::scripted) {
      j.erase("script_path");
      j["script"] = spec.script;
    }
    out[std::string(to_string(kind))] = sha256_hex(j.dump());
  }
  return out;
}

std::shared_ptr<CompletionProvider> make_completion(const ProviderSpec& spec) {
  spec.validate();
  if (spec.backend == Backend::scripted) return std::make_shared<ScriptedCompletion>(spec.script);
  return std::make_shared<HttpCompletion>(spec);
}

std::shared_ptr<PolicyProvider> make_policy(const ProviderSpec& spec) {
  spec.validate();
  if (spec.backend == Backend::scripted) return std::make_shared<ScriptedPolicy>(spec.script);
  return std::make_shared<HttpPolicy>(spec);
}

std::shared_ptr<Verifier> make_verifier(const ProviderSpec& spec) {
  spec.validate();
  if (spec.backend == Backend::scripted) return std::make_shared<ScriptedVerifier>(spec.script);
  return std::make_shared<HttpVerifier>(spec);
}

std::shared_ptr<Embedder> make_embedder(const ProviderSpec& spec) {
  spec.validate();
  std::shared_ptr<Embedder> inner;
  if (spec.backend == Backend::hashing) inner = std::make_shared<HashingEmbedder>(spec.dims);
  else inner = std::make_shared<HttpEmbedder>(spec);
  return std::make_shared<CachingEmbedder>(std::move(inner));
}

ProviderSet make_providers(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "providers must be an object");
  ProviderSet set;
  for (const auto& [key, value] : j.items()) {
    auto kind = kind_from_string(key);
    ProviderSpec spec;
    spec.kind = kind;
    from_json(value, spec);
    if (spec.kind != kind) throw Error(ErrorCode::invalid_config, "provider '" + key + "' declares another kind");
    if (spec.backend == Backend::scripted && spec.script_path) {
      auto p = std::filesystem::path(*spec.script_path);
      if (p.is_relative()) p = base_dir / p;
      std::ifstream in(p);
      if (!in) throw Error(ErrorCode::invalid_config, "cannot read script table " + p.string());
      spec.script = json::parse(in, nullptr, false);
      if (spec.script.is_discarded()) throw Error(ErrorCode::invalid_config, "script table is not JSON: " + p.string());
    }
    set.specs[kind] = spec;
  }
  if (!set.specs.count(ProviderKind::embedder)) {
    ProviderSpec e;
    e.kind = ProviderKind::embedder;
    e.backend = Backend::hashing;
    set.specs[ProviderKind::embedder] = e;
  }
  for (auto k : {ProviderKind::manager, ProviderKind::judge, ProviderKind::policy, ProviderKind::verifier})
    if (!set.specs.count(k)) throw Error(ErrorCode::invalid_config, "missing provider '" + std::string(to_string(k)) + "'");
  set.manager = make_completion(set.specs[ProviderKind::manager]);
  set.judge = make_completion(set.specs[ProviderKind::judge]);
  set.policy = make_policy(set.specs[ProviderKind::policy]);
  set.verifier = make_verifier(set.specs[ProviderKind::verifier]);
  set.embedder = make_embedder(set.specs[ProviderKind::embedder]);
  return set;
}

ProviderSet load_providers(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::invalid_config, "cannot read providers file " + path.string());
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::invalid_config, "providers file is not JSON: " + path.string());
  return make_providers(j, path.parent_path());
}

}  // namespace skillbank
