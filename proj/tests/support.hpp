#pragma once

// Shared builders for the test binaries: scripted worlds, temp dirs, file reads.

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillbank/orchestrator.hpp"

namespace skillbank::testing {

using json = nlohmann::json;

inline std::filesystem::path fixtures_dir() { return SKILLBANK_FIXTURES_DIR; }
inline std::filesystem::path repo_fixtures_dir() { return SKILLBANK_REPO_FIXTURES_DIR; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("skillbank-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words{
      "parser",  "cache",    "timeout", "unicode", "migration", "import",  "fixture", "traceback", "regex",
      "config",  "encoding", "locale",  "thread",  "socket",    "overflow", "rounding", "schema",  "index",
      "pytest",  "grep",     "patch",   "diff",    "logger",    "path",    "version", "decorator", "iterator",
      "float",   "string",   "buffer",  "quote",   "escape",    "offset",  "timezone", "lookup",  "merge"};
  return words;
}

inline std::string random_phrase(std::mt19937_64& rng, std::size_t n_words) {
  const auto& v = vocabulary();
  std::string out;
  for (std::size_t i = 0; i < n_words; ++i) {
    if (i) out += ' ';
    out += v[rng() % v.size()];
  }
  return out;
}

inline json draft_json(std::mt19937_64& rng, const std::string& granularity, const std::string& tag) {
  return {{"title", "Handle " + random_phrase(rng, 2) + " " + tag},
          {"granularity", granularity},
          {"when_to_apply", "When the run shows " + random_phrase(rng, 4) + " " + tag},
          {"rules", {"Check " + random_phrase(rng, 3) + " first.", "Then verify " + random_phrase(rng, 2) + "."}}};
}

inline json generate_list(std::mt19937_64& rng, const std::string& granularity, const std::string& tag,
                          std::size_t n) {
  json out = json::array();
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({{"action", "generate"}, {"skill", draft_json(rng, granularity, tag + std::to_string(i))}});
  return out;
}

inline json merge_response(std::mt19937_64& rng, const std::string& tag) {
  return {{"action", "merge"},
          {"merge_target_skill_id", "{{SKILL_ID:1}}"},
          {"reason", "same capability"},
          {"skill", draft_json(rng, "general", tag)}};
}

inline json evolve_response(std::mt19937_64& rng, const std::string& tag) {
  return {{"action", "evolve"},
          {"target_skill_id", "{{SKILL_ID:1}}"},
          {"reason", "rollout exposed a gap"},
          {"skill", draft_json(rng, "general | event-driven", tag)}};
}

inline json full_marks_judge() {
  json by_family;
  for (auto f : {PromptFamily::judge_task_level, PromptFamily::judge_event_driven, PromptFamily::judge_evolve,
                 PromptFamily::judge_merge, PromptFamily::judge_alignment}) {
    json one, low;
    int i = 0;
    for (const auto& d : rubric_spec(f).dimensions) {
      one[d.name] = d.max_score;
      low[d.name] = (i++ % 2) ? d.max_score : 0;
    }
    by_family[std::string(to_string(f))] = json::array({one, low});
  }
  return {{"by_family", by_family}};
}

inline json stream_json(std::mt19937_64& rng, const std::vector<std::string>& scopes, std::size_t per_scope) {
  json instances = json::array();
  for (const auto& scope : scopes)
    for (std::size_t i = 0; i < per_scope; ++i)
      instances.push_back({{"instance_id", scope + "-" + std::to_string(i)},
                           {"benchmark_scope", scope},
                           {"goal_text", "Fix " + random_phrase(rng, 5) + " in the " + scope + " project"}});
  return {{"instances", instances}};
}

// A random scripted world: stream, manager mix and run settings derived from one seed.
inline RunConfig random_world(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> scopes;
  std::size_t n_scopes = 1 + rng() % 3;
  for (std::size_t i = 0; i < n_scopes; ++i) scopes.push_back("bench" + std::to_string(i));
  std::size_t per_scope = 2 + rng() % 3;

  json maintain = json::array();
  for (int i = 0; i < 12; ++i) {
    auto pick = rng() % 3;
    if (pick == 0) maintain.push_back({{"action", "add"}, {"reason", "distinct"}});
    else if (pick == 1) maintain.push_back(merge_response(rng, "m" + std::to_string(i)));
    else maintain.push_back({{"action", "drop"}, {"reason", "redundant"}});
  }
  json evolve = json::array();
  for (int i = 0; i < 6; ++i) {
    if (rng() % 2) evolve.push_back(evolve_response(rng, "e" + std::to_string(i)));
    else evolve.push_back({{"action", "skip"}, {"reason", "no change"}});
  }
  json manager = {{"rules",
                   {{{"family", "maintain"},
                     {"contains", "(no similar skills retrieved)"},
                     {"responses", {{{"action", "add"}, {"reason", "first of its kind"}}}}},
                    {{"family", "maintain"}, {"responses", maintain}},
                    {{"family", "evolve"}, {"min_skills", 1}, {"responses", evolve}},
                    {{"family", "extract_task_level"}, {"responses", generate_list(rng, "general", "t", 40)}},
                    {{"family", "extract_event_driven"}, {"responses", generate_list(rng, "event-driven", "v", 80)}}}},
                  {"missing", "default"},
                  {"default", {{"action", "skip"}, {"reason", "nothing to do"}}}};

  RunConfig cfg;
  cfg.seed = seed;
  cfg.event_attempts = 1 + rng() % 3;
  cfg.route_evolved_through_maintenance = rng() % 2;
  cfg.providers = {{"manager", {{"backend", "scripted"}, {"script", manager}}},
                   {"judge", {{"backend", "scripted"}, {"script", full_marks_judge()}}},
                   {"policy", {{"backend", "scripted"}, {"script", {{"missing", "synthesize"}}}}},
                   {"verifier", {{"backend", "scripted"}, {"script", {{"use_outcome", true}}}}}};
  cfg.stream = stream_json(rng, scopes, per_scope);
  return cfg;
}

}  // namespace skillbank::testing
