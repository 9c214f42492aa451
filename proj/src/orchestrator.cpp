#include "skillbank/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "skillbank/error.hpp"
#include "skillbank/hash.hpp"
#include "skillbank/skill_file.hpp"

namespace skillbank {

using json = nlohmann::json;

namespace {

json read_json_file(const std::filesystem::path& path, ErrorCode code) {
  std::ifstream in(path);
  if (!in) throw Error(code, "cannot read " + path.string());
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(code, path.string() + " is not valid JSON");
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << text;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() ? base / path : path;
}

// Up to three trajectories for task-level extraction: this instance's first
// rollout, then the nearest earlier same-benchmark instances by goal
// similarity, then this instance's other rollouts.
std::vector<Trajectory> related_set(const std::vector<StreamItem>& stream, std::size_t idx, Embedder& embedder) {
  const auto& item = stream[idx];
  std::vector<Trajectory> out;
  if (item.trajectories.empty()) return out;
  out.push_back(item.trajectories.front());
  auto goal = embedder.embed(item.instance.goal_text);
  std::vector<std::pair<double, std::size_t>> neighbours;
  for (std::size_t i = 0; i < idx; ++i) {
    const auto& other = stream[i];
    if (other.instance.benchmark_scope != item.instance.benchmark_scope || other.trajectories.empty()) continue;
    if (other.instance.instance_id == item.instance.instance_id) continue;
    neighbours.emplace_back(cosine(goal, embedder.embed(other.instance.goal_text)), i);
  }
  std::stable_sort(neighbours.begin(), neighbours.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return stream[a.second].instance.instance_id < stream[b.second].instance.instance_id;
  });
  for (const auto& [_, i] : neighbours) {
    if (out.size() == 3) break;
    out.push_back(stream[i].trajectories.front());
  }
  for (std::size_t t = 1; t < item.trajectories.size() && out.size() < 3; ++t) out.push_back(item.trajectories[t]);
  return out;
}

// Query text for event-driven retrieval: the last two steps of a trajectory.
std::string event_query_text(const Trajectory& t) {
  std::string text;
  std::size_t start = t.steps.size() > 2 ? t.steps.size() - 2 : 0;
  for (std::size_t i = start; i < t.steps.size(); ++i) {
    const auto& s = t.steps[i];
    text += s.reasoning + "\n" + s.action + "\n" + s.observation + "\n";
  }
  return text;
}

Query query_for(const Skill& s, const std::string& scope) {
  return Query{s.granularity == Granularity::task_level ? QueryKind::task_goal : QueryKind::execution_event,
               retrieval_text(s), scope, std::nullopt};
}

bool is_generate(Action a) { return a == Action::generate_task_level || a == Action::generate_event_driven; }

}  // namespace

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::extract_only: return "extract_only";
    case Phase::extract_evolve: return "extract_evolve";
    case Phase::full: return "full";
  }
  return "unknown";
}

Phase phase_from_string(std::string_view s) {
  if (s == "extract_only" || s == "1") return Phase::extract_only;
  if (s == "extract_evolve" || s == "2") return Phase::extract_evolve;
  if (s == "full" || s == "3") return Phase::full;
  throw Error(ErrorCode::invalid_config, "unknown phase '" + std::string(s) + "'");
}

bool phase_allows(Phase phase, PromptFamily family) {
  switch (family) {
    case PromptFamily::extract_task_level:
    case PromptFamily::extract_event_driven: return true;
    case PromptFamily::evolve: return phase != Phase::extract_only;
    case PromptFamily::maintain: return phase == Phase::full;
    default: return true;  // judges
  }
}

void RunConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw Error(ErrorCode::invalid_config, std::string(name) + " must be >= 1");
  };
  positive(n_baseline, "n_baseline");
  positive(K_reverse, "K_reverse");
  positive(k_task, "k_task");
  positive(k_event, "k_event");
  positive(k_maintain, "k_maintain");
  positive(k_evolve, "k_evolve");
  if (G < 2) throw Error(ErrorCode::invalid_config, "G must be >= 2");
  if (!(clip_eps > 0.0)) throw Error(ErrorCode::invalid_config, "clip_eps must be > 0");
  if (!(kl_beta >= 0.0) || !(eps_a >= 0.0)) throw Error(ErrorCode::invalid_config, "kl_beta and eps_a must be >= 0");
  if (!std::isfinite(lambda) || !std::isfinite(lambda_dec)) throw Error(ErrorCode::invalid_config, "lambda must be finite");
  if (!(temperature >= 0.0)) throw Error(ErrorCode::invalid_config, "temperature must be >= 0");
  if (!(evidence_max_tokens > 0.0)) throw Error(ErrorCode::invalid_config, "evidence_max_tokens must be > 0");
  if (!(phase_scale >= 0.0)) throw Error(ErrorCode::invalid_config, "phase_scale must be >= 0");
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"n_baseline", c.n_baseline},
           {"G", c.G},
           {"lambda", c.lambda},
           {"lambda_dec", c.lambda_dec},
           {"clip_eps", c.clip_eps},
           {"kl_beta", c.kl_beta},
           {"eps_a", c.eps_a},
           {"K_reverse", c.K_reverse},
           {"k_task", c.k_task},
           {"k_event", c.k_event},
           {"k_maintain", c.k_maintain},
           {"k_evolve", c.k_evolve},
           {"task_level_attempts", c.task_level_attempts},
           {"event_attempts", c.event_attempts},
           {"route_evolved_through_maintenance", c.route_evolved_through_maintenance},
           {"temperature", c.temperature},
           {"evidence_max_tokens", c.evidence_max_tokens},
           {"seed", c.seed},
           {"phase", to_string(c.phase)},
           {"phase_scale", c.phase_scale},
           {"max_reward_prompts", c.max_reward_prompts},
           {"providers", c.providers},
           {"stream", c.stream}};
}

void from_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "config must be a JSON object");
  json defaults = RunConfig{};
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key)) throw Error(ErrorCode::invalid_config, "unknown config key '" + key + "'");
  try {
    c.n_baseline = j.value("n_baseline", c.n_baseline);
    c.G = j.value("G", c.G);
    c.lambda = j.value("lambda", c.lambda);
    c.lambda_dec = j.value("lambda_dec", c.lambda_dec);
    c.clip_eps = j.value("clip_eps", c.clip_eps);
    c.kl_beta = j.value("kl_beta", c.kl_beta);
    c.eps_a = j.value("eps_a", c.eps_a);
    c.K_reverse = j.value("K_reverse", c.K_reverse);
    c.k_task = j.value("k_task", c.k_task);
    c.k_event = j.value("k_event", c.k_event);
    c.k_maintain = j.value("k_maintain", c.k_maintain);
    c.k_evolve = j.value("k_evolve", c.k_evolve);
    c.task_level_attempts = j.value("task_level_attempts", c.task_level_attempts);
    c.event_attempts = j.value("event_attempts", c.event_attempts);
    c.route_evolved_through_maintenance =
        j.value("route_evolved_through_maintenance", c.route_evolved_through_maintenance);
    c.temperature = j.value("temperature", c.temperature);
    c.evidence_max_tokens = j.value("evidence_max_tokens", c.evidence_max_tokens);
    c.seed = j.value("seed", c.seed);
    if (j.contains("phase")) c.phase = phase_from_string(j.at("phase").get<std::string>());
    c.phase_scale = j.value("phase_scale", c.phase_scale);
    c.max_reward_prompts = j.value("max_reward_prompts", c.max_reward_prompts);
    if (j.contains("providers")) c.providers = j.at("providers");
    if (j.contains("stream")) c.stream = j.at("stream");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("bad config value: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  auto cfg = read_json_file(path, ErrorCode::invalid_config).get<RunConfig>();
  cfg.base_dir = path.parent_path();
  cfg.validate();
  return cfg;
}

std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view label, std::uint64_t index) {
  return splitmix64(splitmix64(run_seed) ^ fnv1a64(label) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

std::vector<StreamItem> parse_stream(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object() || !j.contains("instances") || !j.at("instances").is_array())
    throw Error(ErrorCode::invalid_config, "stream needs an \"instances\" array");
  std::vector<StreamItem> out;
  std::set<std::string> seen;
  for (const auto& e : j.at("instances")) {
    StreamItem item;
    item.instance = e.get<TaskInstance>();
    if (item.instance.instance_id.empty()) throw Error(ErrorCode::missing_instance_id, "stream entry without instance_id");
    if (!seen.insert(item.instance.instance_id).second)
      throw Error(ErrorCode::invalid_config, "duplicate instance " + item.instance.instance_id);
    if (e.contains("trajectories"))
      for (const auto& t : e.at("trajectories")) item.trajectories.push_back(t.get<Trajectory>());
    if (e.contains("logs")) {
      for (const auto& l : e.at("logs")) {
        auto path = resolve(base_dir, l.at("path").get<std::string>());
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorCode::io_error, "cannot read log " + path.string());
        std::stringstream buf;
        buf << in.rdbuf();
        item.trajectories.push_back(normalize(buf.str(), log_format_from_string(l.at("format").get<std::string>())));
      }
    }
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<StreamItem> load_stream(const RunConfig& cfg) {
  if (cfg.stream.is_string()) {
    auto path = resolve(cfg.base_dir, cfg.stream.get<std::string>());
    return parse_stream(read_json_file(path, ErrorCode::invalid_config), path.parent_path());
  }
  if (cfg.stream.is_object()) return parse_stream(cfg.stream, cfg.base_dir);
  throw Error(ErrorCode::invalid_config, "config has no stream");
}

ProviderSet load_run_providers(const RunConfig& cfg) {
  if (cfg.providers.is_string()) return load_providers(resolve(cfg.base_dir, cfg.providers.get<std::string>()));
  if (cfg.providers.is_object()) return make_providers(cfg.providers, cfg.base_dir);
  throw Error(ErrorCode::invalid_config, "config has no providers");
}

void fill_from_baselines(std::vector<StreamItem>& stream, const RunConfig& cfg, ProviderSet& providers,
                         BaselineCache& baselines) {
  for (auto& item : stream) {
    const auto& rec = baselines.get_or_compute(item.instance, *providers.policy, *providers.verifier, cfg.n_baseline);
    if (item.trajectories.empty()) item.trajectories = rec.rollouts;
  }
}

ManagementResult run_management_pass(const RunConfig& cfg, const std::vector<StreamItem>& stream,
                                     ProviderSet& providers) {
  cfg.validate();
  ManagementResult res;
  SkillBank& bank = res.bank;
  Embedder& embedder = *providers.embedder;
  const auto ecfg = cfg.evidence();

  for (std::size_t idx = 0; idx < stream.size(); ++idx) {
    const auto& item = stream[idx];
    const auto& x = item.instance;
    const std::string& seg = x.benchmark_scope;

    auto issue = [&](const std::string& stage, const std::string& msg) {
      spdlog::warn("{} {}: {}", x.instance_id, stage, msg);
      res.issues.push_back({x.instance_id, stage, msg});
    };

    auto ask = [&](PromptFamily f, const PromptContext& ctx, const std::string& label) -> std::optional<Operation> {
      if (!phase_allows(cfg.phase, f)) return std::nullopt;
      try {
        auto prompt = render(f, ctx);
        ++res.rendered[f];
        auto raw = providers.manager->complete(prompt, {cfg.temperature, derive_seed(cfg.seed, label)});
        return parse_operation(raw, f);
      } catch (const Error& e) {
        issue(label, e.what());
        return std::nullopt;
      }
    };

    auto maintain = [&](const Skill& cand, const std::string& label) {
      res.candidates.push_back(cand);
      ApplyContext ctx{cand, seg, x.instance_id, false};
      std::optional<Operation> op;
      if (!phase_allows(cfg.phase, PromptFamily::maintain)) {
        op = Operation::add("maintenance disabled in this phase");
      } else {
        auto skills = bank.list();
        auto index = index_build(skills, embedder);
        PromptContext pc;
        pc.candidate_or_existing_skill = cand;
        for (auto& hit : retrieve(index, query_for(cand, seg), cfg.k_maintain, embedder))
          pc.retrieved_context.push_back(std::move(hit.skill));
        op = ask(PromptFamily::maintain, pc, label);
      }
      if (!op) return;
      try {
        bank.apply(*op, ctx);
      } catch (const Error& e) {
        issue(label, e.what());
      }
    };

    auto apply_manager_op = [&](const Operation& op, const ApplyContext& ctx, const std::string& label) {
      std::optional<Skill> candidate;
      try {
        const auto& entry = bank.apply(op, ctx);
        if (entry.candidate && (is_generate(op.action) || entry.deferred)) candidate = entry.candidate;
      } catch (const Error& e) {
        issue(label, e.what());
        return;
      }
      if (candidate) maintain(*candidate, label + "/maintain");
    };

    if (item.trajectories.empty()) {
      issue("stream", "no trajectories for instance");
      continue;
    }
    const ApplyContext base_ctx{std::nullopt, seg, x.instance_id, false};

    // Task-level extraction over a related set.
    if (cfg.task_level_attempts > 0) {
      auto related = related_set(stream, idx, embedder);
      if (related.size() >= 2) {
        PromptContext pc;
        pc.evidence = assemble_evidence(related, EvidenceMode::related_set, ecfg);
        for (std::size_t a = 0; a < cfg.task_level_attempts; ++a) {
          auto label = x.instance_id + "/extract_task_level/" + std::to_string(a);
          if (auto op = ask(PromptFamily::extract_task_level, pc, label)) apply_manager_op(*op, base_ctx, label);
        }
      }
    }

    // Event-driven extraction, cycling over the available trajectories.
    for (std::size_t a = 0; a < cfg.event_attempts; ++a) {
      const auto& t = item.trajectories[a % item.trajectories.size()];
      PromptContext pc;
      pc.evidence = assemble_evidence(std::span(&t, 1), EvidenceMode::single, ecfg);
      auto label = x.instance_id + "/extract_event_driven/" + std::to_string(a);
      if (auto op = ask(PromptFamily::extract_event_driven, pc, label)) apply_manager_op(*op, base_ctx, label);
    }

    // Usage: retrieve, inject, roll out.
    if (bank.empty()) continue;
    auto skills = bank.list();
    auto index = index_build(skills, embedder);
    std::vector<Skill> injected;
    auto take = [&](const std::vector<Hit>& hits) {
      for (const auto& h : hits) {
        bool dup = std::any_of(injected.begin(), injected.end(), [&](const Skill& s) { return s.id == h.skill.id; });
        if (!dup) injected.push_back(h.skill);
      }
    };
    take(retrieve(index, Query{QueryKind::task_goal, x.goal_text, seg, x.instance_id}, cfg.k_task, embedder));
    take(retrieve(index,
                  Query{QueryKind::execution_event, event_query_text(item.trajectories.front()), seg, x.instance_id},
                  cfg.k_event, embedder));
    if (injected.empty()) continue;

    Trajectory conditioned;
    try {
      conditioned = providers.policy->rollout(x, injected);
    } catch (const Error& e) {
      issue("rollout", e.what());
      continue;
    }
    res.conditioned.push_back(conditioned);

    // Evolution over the conditioned trajectory.
    if (phase_allows(cfg.phase, PromptFamily::evolve)) {
      PromptContext pc;
      pc.evidence = assemble_evidence(std::span(&conditioned, 1), EvidenceMode::single, ecfg);
      for (std::size_t i = 0; i < injected.size() && i < cfg.k_evolve; ++i) pc.retrieved_context.push_back(injected[i]);
      auto label = x.instance_id + "/evolve";
      if (auto op = ask(PromptFamily::evolve, pc, label)) {
        ApplyContext ctx = base_ctx;
        ctx.defer_evolve = cfg.route_evolved_through_maintenance;
        apply_manager_op(*op, ctx, label);
      }
    }
  }
  res.stats = bank_stats(bank.ledger());
  return res;
}

PhasePlan reference_phase_plan(Phase phase, double scale) {
  auto r = [scale](double v) { return static_cast<std::size_t>(std::llround(v * scale)); };
  switch (phase) {
    case Phase::extract_only: return {r(335), r(335), r(506), 0, 0};
    case Phase::extract_evolve: return {r(513), r(199), r(302), r(487), 0};
    case Phase::full: return {r(632), r(222), r(223), r(384), r(500)};
  }
  return {};
}

std::vector<std::size_t> even_stride(std::size_t total, std::size_t count) {
  std::vector<std::size_t> out;
  if (count >= total) {
    for (std::size_t i = 0; i < total; ++i) out.push_back(i);
    return out;
  }
  for (std::size_t i = 0; i < count; ++i) out.push_back(((2 * i + 1) * total) / (2 * count));
  return out;
}

std::vector<TrainingPrompt> assemble_phase_data(Phase phase, const PhaseSources& sources, Embedder& embedder,
                                                const RunConfig& cfg, const std::optional<PhasePlan>& plan) {
  const auto ecfg = cfg.evidence();
  std::vector<TrainingPrompt> task, event, evolve, maintain;

  for (std::size_t i = 0; i < sources.stream.size(); ++i) {
    const auto& item = sources.stream[i];
    const auto& x = item.instance;
    auto related = related_set(sources.stream, i, embedder);
    if (related.size() >= 2) {
      TrainingPrompt p{"task:" + x.instance_id, PromptFamily::extract_task_level, {}, x.benchmark_scope, x.instance_id};
      p.ctx.evidence = assemble_evidence(related, EvidenceMode::related_set, ecfg);
      task.push_back(std::move(p));
    }
    for (std::size_t t = 0; t < item.trajectories.size(); ++t) {
      TrainingPrompt p{"event:" + x.instance_id + ":" + std::to_string(t), PromptFamily::extract_event_driven, {},
                       x.benchmark_scope, x.instance_id};
      p.ctx.evidence = assemble_evidence(std::span(&item.trajectories[t], 1), EvidenceMode::single, ecfg);
      event.push_back(std::move(p));
    }
  }

  if (phase != Phase::extract_only) {
    if (sources.conditioned.empty())
      throw Error(ErrorCode::missing_predecessor, "evolve contexts need skill-conditioned trajectories");
    std::map<std::string, Skill> known;
    for (const auto& s : sources.candidates) known[s.id] = s;
    for (const auto& s : sources.bank_skills) known[s.id] = s;
    for (std::size_t i = 0; i < sources.conditioned.size(); ++i) {
      const auto& t = sources.conditioned[i];
      TrainingPrompt p{"evolve:" + t.instance_id + ":" + std::to_string(i), PromptFamily::evolve, {},
                       t.benchmark_scope, t.instance_id};
      for (const auto& id : t.skill_ids_injected) {
        if (auto it = known.find(id); it != known.end() && p.ctx.retrieved_context.size() < cfg.k_evolve)
          p.ctx.retrieved_context.push_back(it->second);
      }
      if (p.ctx.retrieved_context.empty()) continue;
      p.ctx.evidence = assemble_evidence(std::span(&t, 1), EvidenceMode::single, ecfg);
      evolve.push_back(std::move(p));
    }
  }

  if (phase == Phase::full) {
    if (sources.candidates.empty())
      throw Error(ErrorCode::missing_predecessor, "maintain contexts need candidate skills from earlier phases");
    auto index = index_build(sources.bank_skills, embedder);
    for (std::size_t i = 0; i < sources.candidates.size(); ++i) {
      const auto& c = sources.candidates[i];
      TrainingPrompt p{"maintain:" + c.id + ":" + std::to_string(i), PromptFamily::maintain, {}, c.benchmark_scope,
                       c.source_instance};
      p.ctx.candidate_or_existing_skill = c;
      for (auto& h : retrieve(index, query_for(c, c.benchmark_scope), cfg.k_maintain + 1, embedder)) {
        if (h.skill.id == c.id || p.ctx.retrieved_context.size() == cfg.k_maintain) continue;
        p.ctx.retrieved_context.push_back(std::move(h.skill));
      }
      maintain.push_back(std::move(p));
    }
  }

  std::vector<TrainingPrompt> out;
  auto emit = [&](std::vector<TrainingPrompt>& v, std::optional<std::size_t> quota) {
    for (auto i : even_stride(v.size(), quota.value_or(v.size()))) out.push_back(std::move(v[i]));
  };
  emit(task, plan ? std::optional(plan->task_level) : std::nullopt);
  emit(event, plan ? std::optional(plan->event_driven) : std::nullopt);
  emit(evolve, plan ? std::optional(plan->evolve) : std::nullopt);
  emit(maintain, plan ? std::optional(plan->maintain) : std::nullopt);
  return out;
}

namespace {

PromptContext judge_context(const TrainingPrompt& p, const Operation& op, const std::string& raw) {
  PromptContext j;
  j.evidence = p.ctx.evidence;
  j.retrieved_context = p.ctx.retrieved_context;
  j.proposed_output = raw;
  if (p.family == PromptFamily::evolve) {
    const auto* ev = std::get_if<EvolveContent>(&op.content);
    const auto& pool = p.ctx.retrieved_context;
    auto it = std::find_if(pool.begin(), pool.end(),
                           [&](const Skill& s) { return ev && s.id == ev->target_skill_id; });
    if (it != pool.end()) j.candidate_or_existing_skill = *it;
    else if (!pool.empty()) j.candidate_or_existing_skill = pool.front();
  } else {
    j.candidate_or_existing_skill = p.ctx.candidate_or_existing_skill;
  }
  return j;
}

Skill materialize(const TrainingPrompt& p, const Operation& op) {
  switch (op.action) {
    case Action::generate_task_level:
      return make_skill(*op.skill_draft(), {Origin::extracted_task_level, {}}, p.segment, p.instance_id);
    case Action::generate_event_driven:
      return make_skill(*op.skill_draft(), {Origin::extracted_event_driven, {}}, p.segment, p.instance_id);
    case Action::evolve:
      return make_skill(*op.skill_draft(), {Origin::evolved, {std::get<EvolveContent>(op.content).target_skill_id}},
                        p.segment, p.instance_id);
    case Action::merge: {
      const auto& cand = p.ctx.candidate_or_existing_skill;
      std::string cand_id = cand ? cand->id : std::string("candidate");
      return make_skill(*op.skill_draft(),
                        {Origin::merged, {cand_id, std::get<MergeContent>(op.content).merge_target_skill_id}},
                        p.segment, cand ? cand->source_instance : p.instance_id);
    }
    default: break;
  }
  throw Error(ErrorCode::invalid_operation, "operation emits no skill");
}

}  // namespace

RewardLoopResult run_reward_loop(const RunConfig& cfg, const std::vector<TrainingPrompt>& prompts,
                                 const std::vector<TaskInstance>& task_pool, ProviderSet& providers,
                                 BaselineCache& baselines) {
  cfg.validate();
  RewardLoopResult out;
  out.header = BatchHeader{"k3", cfg.clip_eps, cfg.kl_beta, cfg.eps_a, cfg.G, kTemplateVersion};
  const auto ecfg = cfg.evidence();
  const auto rcfg = cfg.reward();

  for (const auto& inst : task_pool)
    baselines.get_or_compute(inst, *providers.policy, *providers.verifier, cfg.n_baseline);

  for (const auto& p : prompts) {
    auto issue = [&](const std::string& stage, const std::string& msg) {
      spdlog::warn("{} {}: {}", p.prompt_id, stage, msg);
      out.issues.push_back({p.instance_id.value_or(""), p.prompt_id + "/" + stage, msg});
    };
    if (!phase_allows(cfg.phase, p.family)) {
      issue("gate", std::string(to_string(p.family)) + " is outside phase " + std::string(to_string(cfg.phase)));
      continue;
    }
    PromptText prompt;
    try {
      prompt = render(p.family, p.ctx);
    } catch (const Error& e) {
      issue("render", e.what());
      continue;
    }

    BatchRecord rec;
    rec.prompt_id = p.prompt_id;
    rec.prompt = prompt;
    std::vector<double> finals;
    for (std::size_t j = 0; j < cfg.G; ++j) {
      const auto seed = derive_seed(cfg.seed, p.prompt_id, j);
      RewardRecord rr{p.prompt_id + "#" + std::to_string(j), std::string(to_string(p.family)), {}, p.instance_id,
                      kTemplateVersion};
      std::string raw;
      try {
        raw = providers.manager->complete(prompt, {cfg.temperature, seed});
        std::optional<Operation> op;
        try {
          op = parse_operation(raw, p.family);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::malformed_output && e.code() != ErrorCode::schema_violation) throw;
        }
        if (!op) {
          rr.reward = hybrid_reward(RewardPath::malformed, 0.0, std::nullopt, std::nullopt, rcfg);
        } else {
          auto jq = judge_score(*providers.judge, judge_for(p.family), judge_context(p, *op, raw),
                                {cfg.temperature, derive_seed(seed, "quality")});
          if (op->emits_skill()) {
            Skill s = materialize(p, *op);
            std::vector<TaskInstance> scoped;
            for (const auto& inst : task_pool)
              if (inst.benchmark_scope == s.benchmark_scope) scoped.push_back(inst);
            const auto& pool = scoped.empty() ? task_pool : scoped;
            auto target = reverse_retrieve(s, pool, cfg.K_reverse, derive_seed(seed, "reverse"), *providers.embedder);
            auto ex = execution_reward(s, target, *providers.policy, *providers.verifier, baselines, cfg.n_baseline);
            PromptContext actx;
            actx.evidence = assemble_evidence(std::span(&ex.conditioned, 1), EvidenceMode::single, ecfg);
            actx.candidate_or_existing_skill = s;
            actx.user_prompt = target.goal_text;
            auto ja = judge_score(*providers.judge, PromptFamily::judge_alignment, actx,
                                  {cfg.temperature, derive_seed(seed, "alignment")});
            rr.reward = hybrid_reward(RewardPath::skill_output, jq.score, ja.score, ex.r_e, rcfg);
            rr.instance_id = target.instance_id;
          } else {
            rr.reward = hybrid_reward(RewardPath::decision_only, jq.score, std::nullopt, std::nullopt, rcfg);
          }
        }
      } catch (const Error& e) {
        issue("sample " + std::to_string(j), e.what());
        rr.reward = hybrid_reward(RewardPath::malformed, 0.0, std::nullopt, std::nullopt, rcfg);
      }
      rec.outputs.push_back(raw);
      rec.rewards.push_back(rr.reward);
      finals.push_back(rr.reward.final);
      out.rewards.push_back(std::move(rr));
    }
    rec.advantages = normalize_advantages(finals, cfg.eps_a);
    out.batch.push_back(std::move(rec));
  }
  return out;
}

json run_manifest(const RunConfig& cfg, const ProviderSet& providers) {
  return json{{"config", cfg},
              {"seed", cfg.seed},
              {"phase", to_string(cfg.phase)},
              {"template_version", kTemplateVersion},
              {"kl_estimator", "k3"},
              {"providers", providers.spec_digests()}};
}

SimulationOutputs run_simulation(const RunConfig& cfg, ProviderSet& providers, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "manifest.json", run_manifest(cfg, providers).dump(2) + "\n");

  SimulationOutputs out;
  auto stream = load_stream(cfg);
  BaselineCache baselines;
  fill_from_baselines(stream, cfg, providers, baselines);

  out.management = run_management_pass(cfg, stream, providers);
  const auto& bank = out.management.bank;

  PhaseSources sources{stream, out.management.conditioned, out.management.candidates, bank.list()};
  std::optional<PhasePlan> plan;
  if (cfg.phase_scale > 0.0) plan = reference_phase_plan(cfg.phase, cfg.phase_scale);
  std::vector<TrainingPrompt> prompts;
  try {
    prompts = assemble_phase_data(cfg.phase, sources, *providers.embedder, cfg, plan);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::missing_predecessor) throw;
    spdlog::warn("{}; falling back to extraction contexts", e.what());
    out.management.issues.push_back({"", "assemble", e.what()});
    prompts = assemble_phase_data(Phase::extract_only, sources, *providers.embedder, cfg, plan);
  }
  if (cfg.max_reward_prompts > 0 && prompts.size() > cfg.max_reward_prompts) {
    std::vector<TrainingPrompt> kept;
    for (auto i : even_stride(prompts.size(), cfg.max_reward_prompts)) kept.push_back(prompts[i]);
    prompts = std::move(kept);
  }

  std::vector<TaskInstance> pool;
  for (const auto& item : stream) pool.push_back(item.instance);
  out.reward = run_reward_loop(cfg, prompts, pool, providers, baselines);
  out.baselines = baselines.records();

  write_ledger_file((out_dir / "ledger.jsonl").string(), bank.ledger());
  write_text(out_dir / "stats.csv", stats_csv(out.management.stats));
  write_text(out_dir / "rewards.jsonl", reward_log_jsonl(out.reward.rewards));
  write_text(out_dir / "batch.jsonl", batch_jsonl(out.reward.header, out.reward.batch));
  json baseline_json = json::array();
  for (const auto& b : out.baselines) baseline_json.push_back(b);
  write_text(out_dir / "baselines.json", baseline_json.dump(2) + "\n");
  std::string issues;
  for (const auto* list : {&out.management.issues, &out.reward.issues})
    for (const auto& i : *list)
      issues += json{{"instance_id", i.instance_id}, {"stage", i.stage}, {"message", i.message}}.dump() + "\n";
  write_text(out_dir / "issues.jsonl", issues);
  std::filesystem::remove_all(out_dir / "skills");
  write_skill_directory(out_dir / "skills", bank.list());
  return out;
}

}  // namespace skillbank
