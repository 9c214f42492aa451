// skillbank command-line tool. stdout carries results, stderr diagnostics.
// Exit codes: 0 ok, 1 domain error, 2 usage error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "skillbank/bank.hpp"
#include "skillbank/error.hpp"
#include "skillbank/grpo.hpp"
#include "skillbank/orchestrator.hpp"
#include "skillbank/protocol.hpp"
#include "skillbank/providers.hpp"
#include "skillbank/retrieval.hpp"
#include "skillbank/reward.hpp"
#include "skillbank/skill_file.hpp"
#include "skillbank/trajectory.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace skillbank;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string providers;
  std::string out_dir;
  std::string phase;
  std::string format = "json";
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json read_json(const std::string& path) {
  auto j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::invalid_config, path + " is not valid JSON");
  return j;
}

// A trajectory file is either normalized JSON or a generic marker log.
Trajectory load_trajectory(const std::string& path) {
  auto text = read_file(path);
  auto j = json::parse(text, nullptr, false);
  if (!j.is_discarded() && j.is_object() && j.contains("steps")) return j.get<Trajectory>();
  return normalize(text, LogFormat::generic);
}

std::vector<Skill> load_skills(const std::string& dir, const std::string& ledger) {
  if (!ledger.empty()) return replay(read_ledger_file(ledger)).list();
  std::vector<Skill> out;
  if (dir.empty()) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".md") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.push_back(read_skill_file(f));
  return out;
}

RunConfig make_config(const Globals& g) {
  RunConfig cfg;
  if (!g.config.empty()) cfg = load_run_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.phase.empty()) cfg.phase = phase_from_string(g.phase);
  if (!g.providers.empty()) cfg.providers = fs::absolute(g.providers).string();
  cfg.validate();
  return cfg;
}

ProviderSet make_provider_set(const Globals& g) {
  if (!g.providers.empty()) return load_providers(g.providers);
  if (!g.config.empty()) return load_run_providers(make_config(g));
  throw Error(ErrorCode::invalid_config, "--providers or --config is required");
}

void emit(const Globals& g, const json& j, const std::string& text) {
  if (g.format == "text") std::cout << text;
  else std::cout << j.dump(2) << "\n";
}

std::string operation_text(const Operation& op) {
  std::ostringstream out;
  out << "action: " << to_string(op.action) << "\n";
  if (const auto* d = op.skill_draft()) {
    out << "title: " << d->title << "\nwhen_to_apply: " << d->when_to_apply << "\nrules:\n";
    for (const auto& r : d->rules) out << "- " << r << "\n";
  }
  return out.str();
}

// Samples the manager once and parses its reply.
json ask_manager(const Globals& g, PromptFamily family, const PromptContext& ctx, bool render_only) {
  auto prompt = render(family, ctx);
  if (render_only) return json(prompt);
  auto providers = make_provider_set(g);
  if (providers.all_offline()) NetworkGuard::allow(false);
  RunConfig cfg = g.config.empty() ? RunConfig{} : make_config(g);
  auto raw = providers.manager->complete(prompt, {cfg.temperature, derive_seed(g.seed.value_or(cfg.seed), "cli")});
  return json{{"raw", raw}, {"operation", parse_operation(raw, family)}};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("skillbank"));
  spdlog::set_level(spdlog::level::warn);

  CLI::App app{"Skill bank engine: extraction, maintenance, retrieval, rewards and RL batch export"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "run config (JSON)");
  app.add_option("--seed", g.seed, "run seed");
  app.add_option("--providers", g.providers, "providers file (JSON)");
  app.add_option("--out-dir", g.out_dir, "output directory");
  app.add_option("--phase", g.phase, "extract_only | extract_evolve | full");
  app.add_option("--format", g.format, "json | text")->check(CLI::IsMember({"json", "text"}));
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "log info messages");

  // normalize
  auto* normalize_cmd = app.add_subcommand("normalize", "convert an agent log to a trajectory");
  std::string log_path, log_format = "generic";
  normalize_cmd->add_option("log", log_path, "agent log file")->required();
  normalize_cmd->add_option("--log-format", log_format, "mini_swe | react_bash | generic");

  // extract
  auto* extract_cmd = app.add_subcommand("extract", "extract a candidate skill from trajectories");
  std::string granularity = "event";
  std::vector<std::string> traj_paths;
  bool render_only = false;
  extract_cmd->add_option("--granularity", granularity, "task | event")->check(CLI::IsMember({"task", "event"}));
  extract_cmd->add_option("trajectories", traj_paths, "trajectory files")->required();
  extract_cmd->add_flag("--render-only", render_only, "print the prompt without sampling");

  // maintain
  auto* maintain_cmd = app.add_subcommand("maintain", "decide add / merge / drop for a candidate");
  std::string candidate_path, bank_dir, ledger_path;
  std::size_t k = 3;
  bool apply_flag = false;
  maintain_cmd->add_option("candidate", candidate_path, "candidate skill file (.md)")->required();
  maintain_cmd->add_option("--bank", bank_dir, "directory of skill files");
  maintain_cmd->add_option("--ledger", ledger_path, "ledger to replay as the bank");
  maintain_cmd->add_option("-k", k, "similar skills to show");
  maintain_cmd->add_flag("--apply", apply_flag, "apply the decision and append to --ledger");
  maintain_cmd->add_flag("--render-only", render_only, "print the prompt without sampling");

  // evolve
  auto* evolve_cmd = app.add_subcommand("evolve", "revise an existing skill from a trajectory");
  std::string evolve_traj;
  std::vector<std::string> skill_paths;
  evolve_cmd->add_option("trajectory", evolve_traj, "trajectory file")->required();
  evolve_cmd->add_option("--skill", skill_paths, "relevant skill files (.md)")->required();
  evolve_cmd->add_flag("--render-only", render_only, "print the prompt without sampling");

  // retrieve
  auto* retrieve_cmd = app.add_subcommand("retrieve", "query the skill indexes");
  std::string query_text, query_kind = "task", scope, exclude;
  retrieve_cmd->add_option("query", query_text, "query text")->required();
  retrieve_cmd->add_option("--kind", query_kind, "task | event")->check(CLI::IsMember({"task", "event"}));
  retrieve_cmd->add_option("--scope", scope, "benchmark scope")->required();
  retrieve_cmd->add_option("--exclude-instance", exclude, "drop skills from this instance");
  retrieve_cmd->add_option("--bank", bank_dir, "directory of skill files");
  retrieve_cmd->add_option("--ledger", ledger_path, "ledger to replay as the bank");
  retrieve_cmd->add_option("-k", k, "results");

  // reward
  auto* reward_cmd = app.add_subcommand("reward", "score one manager output from a judge reply");
  std::string family_name, output_path, rubric_path;
  std::optional<double> r_a, r_e;
  reward_cmd->add_option("--family", family_name, "manager prompt family")->required();
  reward_cmd->add_option("--output", output_path, "manager output file")->required();
  reward_cmd->add_option("--rubric", rubric_path, "quality judge reply file")->required();
  reward_cmd->add_option("--r-a", r_a, "alignment reward in [0, 1]");
  reward_cmd->add_option("--r-e", r_e, "execution reward in [-1, 1]");

  // grpo-check
  auto* grpo_cmd = app.add_subcommand("grpo-check", "compare analytic and finite-difference gradients");
  std::size_t n_seeds = 20;
  double tolerance = 1e-4;
  grpo_cmd->add_option("--seeds", n_seeds, "number of seeds");
  grpo_cmd->add_option("--tolerance", tolerance, "maximum relative error");

  // simulate
  auto* simulate_cmd = app.add_subcommand("simulate", "run management pass and reward loop offline");

  // stats
  auto* stats_cmd = app.add_subcommand("stats", "maintenance statistics from a ledger");
  stats_cmd->add_option("--ledger", ledger_path, "ledger file")->required();

  // export-batch
  auto* export_cmd = app.add_subcommand("export-batch", "write the RL batch for the configured phase");
  std::string batch_out;
  export_cmd->add_option("--out", batch_out, "batch file (JSON lines)")->required();

  // bank
  auto* bank_cmd = app.add_subcommand("bank", "inspect a bank");
  bank_cmd->require_subcommand(1);
  auto* bank_list = bank_cmd->add_subcommand("list", "list skills");
  bank_list->add_option("--ledger", ledger_path, "ledger file");
  bank_list->add_option("--bank", bank_dir, "directory of skill files");
  auto* bank_show = bank_cmd->add_subcommand("show", "print one skill");
  std::string skill_id;
  bank_show->add_option("id", skill_id, "skill id")->required();
  bank_show->add_option("--ledger", ledger_path, "ledger file");
  bank_show->add_option("--bank", bank_dir, "directory of skill files");
  auto* bank_verify = bank_cmd->add_subcommand("verify", "check ledger continuity, digests and replay");
  bank_verify->add_option("--ledger", ledger_path, "ledger file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (verbose) spdlog::set_level(spdlog::level::info);

  try {
    if (*normalize_cmd) {
      auto t = normalize(read_file(log_path), log_format_from_string(log_format));
      emit(g, json(t), to_generic_log(t));
    } else if (*extract_cmd) {
      std::vector<Trajectory> ts;
      for (const auto& p : traj_paths) ts.push_back(load_trajectory(p));
      auto family = granularity == "task" ? PromptFamily::extract_task_level : PromptFamily::extract_event_driven;
      PromptContext ctx;
      ctx.evidence = assemble_evidence(ts, granularity == "task" ? EvidenceMode::related_set : EvidenceMode::single);
      auto out = ask_manager(g, family, ctx, render_only);
      emit(g, out, render_only ? out.at("user").get<std::string>() : operation_text(out.at("operation").get<Operation>()));
    } else if (*maintain_cmd) {
      auto cand = read_skill_file(candidate_path);
      auto skills = load_skills(bank_dir, ledger_path);
      HashingEmbedder embedder;
      auto index = index_build(skills, embedder);
      PromptContext ctx;
      ctx.candidate_or_existing_skill = cand;
      auto kind = cand.granularity == Granularity::task_level ? QueryKind::task_goal : QueryKind::execution_event;
      for (auto& h : retrieve(index, Query{kind, retrieval_text(cand), cand.benchmark_scope, std::nullopt}, k, embedder))
        ctx.retrieved_context.push_back(std::move(h.skill));
      auto out = ask_manager(g, PromptFamily::maintain, ctx, render_only);
      if (apply_flag && !render_only) {
        if (ledger_path.empty()) throw Error(ErrorCode::invalid_config, "--apply needs --ledger");
        auto entries = read_ledger_file(ledger_path);
        SkillBank bank = replay(entries);
        const auto& entry =
            bank.apply(out.at("operation").get<Operation>(), ApplyContext{cand, cand.benchmark_scope, cand.source_instance, false});
        append_ledger_file(ledger_path, std::span(&entry, 1));
        out["ledger_entry"] = entry;
      }
      emit(g, out, render_only ? out.at("user").get<std::string>() : operation_text(out.at("operation").get<Operation>()));
    } else if (*evolve_cmd) {
      PromptContext ctx;
      auto t = load_trajectory(evolve_traj);
      ctx.evidence = assemble_evidence(std::span(&t, 1), EvidenceMode::single);
      for (const auto& p : skill_paths) ctx.retrieved_context.push_back(read_skill_file(p));
      auto out = ask_manager(g, PromptFamily::evolve, ctx, render_only);
      emit(g, out, render_only ? out.at("user").get<std::string>() : operation_text(out.at("operation").get<Operation>()));
    } else if (*retrieve_cmd) {
      auto skills = load_skills(bank_dir, ledger_path);
      HashingEmbedder embedder;
      auto index = index_build(skills, embedder);
      Query q{query_kind == "task" ? QueryKind::task_goal : QueryKind::execution_event, query_text, scope,
              exclude.empty() ? std::nullopt : std::optional(exclude)};
      json hits = json::array();
      std::string text;
      for (const auto& h : retrieve(index, q, k, embedder)) {
        hits.push_back({{"skill_id", h.skill.id}, {"title", h.skill.title}, {"score", h.score}});
        text += h.skill.id + "\t" + std::to_string(h.score) + "\t" + h.skill.title + "\n";
      }
      emit(g, hits, text);
    } else if (*reward_cmd) {
      RunConfig cfg = g.config.empty() ? RunConfig{} : make_config(g);
      auto family = prompt_family_from_string(family_name);
      std::optional<Operation> op;
      try {
        op = parse_operation(read_file(output_path), family);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::malformed_output && e.code() != ErrorCode::schema_violation) throw;
        spdlog::warn("{}", e.what());
      }
      double r_q = 0.0;
      if (op) r_q = score_rubric(parse_rubric(read_file(rubric_path), judge_for(family)));
      auto breakdown = hybrid_reward(op, r_q, r_a, r_e, cfg.reward());
      std::ostringstream text;
      text << "path: " << to_string(breakdown.path) << "\nfinal: " << breakdown.final << "\n";
      emit(g, json(breakdown), text.str());
    } else if (*grpo_cmd) {
      auto checks = run_gradient_check(n_seeds);
      double worst = 0.0;
      json per_seed = json::array();
      for (const auto& c : checks) {
        worst = std::max(worst, c.relative_error);
        per_seed.push_back({{"seed", c.seed}, {"relative_error", c.relative_error}});
      }
      json out{{"seeds", n_seeds}, {"max_relative_error", worst}, {"tolerance", tolerance},
               {"pass", worst <= tolerance}, {"per_seed", per_seed}};
      std::ostringstream text;
      text << "max relative gradient error " << worst << " over " << n_seeds << " seeds\n";
      emit(g, out, text.str());
      return worst <= tolerance ? 0 : 1;
    } else if (*simulate_cmd) {
      if (g.config.empty()) throw Error(ErrorCode::invalid_config, "simulate needs --config");
      if (g.out_dir.empty()) throw Error(ErrorCode::invalid_config, "simulate needs --out-dir");
      auto cfg = make_config(g);
      auto providers = load_run_providers(cfg);
      if (providers.all_offline()) NetworkGuard::allow(false);
      auto out = run_simulation(cfg, providers, g.out_dir);
      json summary{{"out_dir", g.out_dir},
                   {"bank_size", out.management.bank.size()},
                   {"ledger_entries", out.management.bank.ledger().size()},
                   {"batch_records", out.reward.batch.size()},
                   {"issues", out.management.issues.size() + out.reward.issues.size()},
                   {"network_attempts", NetworkGuard::attempts()}};
      std::ostringstream text;
      text << "bank size " << out.management.bank.size() << ", " << out.management.bank.ledger().size()
           << " ledger entries, " << out.reward.batch.size() << " batch records -> " << g.out_dir << "\n";
      emit(g, summary, text.str());
    } else if (*stats_cmd) {
      auto stats = bank_stats(read_ledger_file(ledger_path));
      json per_segment = json::object();
      for (const auto& seg : stats.segment_order) {
        const auto& c = stats.per_segment.at(seg);
        per_segment[seg] = {{"add", c.add}, {"merge", c.merge}, {"drop", c.drop}};
      }
      json out{{"points", stats.series.size()},
               {"final_size", stats.series.empty() ? 0 : stats.series.back().bank_size},
               {"per_segment", per_segment},
               {"candidates_per_instance", stats.candidates_per_instance}};
      emit(g, out, stats_csv(stats));
    } else if (*export_cmd) {
      if (g.config.empty()) throw Error(ErrorCode::invalid_config, "export-batch needs --config");
      auto cfg = make_config(g);
      auto providers = load_run_providers(cfg);
      if (providers.all_offline()) NetworkGuard::allow(false);
      auto stream = load_stream(cfg);
      BaselineCache baselines;
      fill_from_baselines(stream, cfg, providers, baselines);
      auto mgmt = run_management_pass(cfg, stream, providers);
      PhaseSources sources{stream, mgmt.conditioned, mgmt.candidates, mgmt.bank.list()};
      std::optional<PhasePlan> plan;
      if (cfg.phase_scale > 0.0) plan = reference_phase_plan(cfg.phase, cfg.phase_scale);
      auto prompts = assemble_phase_data(cfg.phase, sources, *providers.embedder, cfg, plan);
      if (cfg.max_reward_prompts > 0 && prompts.size() > cfg.max_reward_prompts) {
        std::vector<TrainingPrompt> kept;
        for (auto i : even_stride(prompts.size(), cfg.max_reward_prompts)) kept.push_back(prompts[i]);
        prompts = std::move(kept);
      }
      std::vector<TaskInstance> pool;
      for (const auto& item : stream) pool.push_back(item.instance);
      auto result = run_reward_loop(cfg, prompts, pool, providers, baselines);
      std::ofstream out(batch_out, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorCode::io_error, "cannot write " + batch_out);
      out << batch_jsonl(result.header, result.batch);
      emit(g, json{{"out", batch_out}, {"records", result.batch.size()}},
           std::to_string(result.batch.size()) + " records -> " + batch_out + "\n");
    } else if (*bank_list) {
      json arr = json::array();
      std::string text;
      for (const auto& s : load_skills(bank_dir, ledger_path)) {
        arr.push_back({{"id", s.id}, {"title", s.title}, {"granularity", to_label(s.granularity)},
                       {"benchmark_scope", s.benchmark_scope}});
        text += s.id + "\t" + std::string(to_label(s.granularity)) + "\t" + s.benchmark_scope + "\t" + s.title + "\n";
      }
      emit(g, arr, text);
    } else if (*bank_show) {
      auto skills = load_skills(bank_dir, ledger_path);
      auto it = std::find_if(skills.begin(), skills.end(), [&](const Skill& s) { return s.id == skill_id; });
      if (it == skills.end()) throw Error(ErrorCode::unknown_target, "no skill " + skill_id);
      emit(g, json(*it), to_skill_markdown(*it));
    } else if (*bank_verify) {
      VerifyReport report;
      try {
        report = verify_ledger(read_ledger_file(ledger_path));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ledger_tampered) throw;
        report.ok = false;
        report.message = e.what();
        std::string msg = e.what();
        auto pos = msg.find("sequence_no ");
        if (pos != std::string::npos) report.failing_sequence_no = std::stoull(msg.substr(pos + 12));
      }
      json out{{"ok", report.ok}, {"message", report.message}};
      if (report.failing_sequence_no) out["failing_sequence_no"] = *report.failing_sequence_no;
      std::string text = report.ok ? "ledger ok\n"
                                   : "ledger invalid at sequence_no " +
                                         (report.failing_sequence_no ? std::to_string(*report.failing_sequence_no)
                                                                     : std::string("?")) +
                                         ": " + report.message + "\n";
      emit(g, out, text);
      return report.ok ? 0 : 1;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
