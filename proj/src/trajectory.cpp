#include "skillbank/trajectory.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "skillbank/error.hpp"
#include "skillbank/hash.hpp"

namespace skillbank {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

void append_text(std::string& dst, std::string_view text) {
  if (text.empty()) return;
  if (!dst.empty()) dst += '\n';
  dst += text;
}

std::optional<std::string> optional_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

// Accumulates thought / action / observation events into numbered steps.
class StepBuilder {
 public:
  void thought(std::string_view text) {
    if (has_action_) flush();
    append_text(reasoning_, text);
    open_ = true;
  }

  void action(std::string_view text) {
    if (has_action_) flush();
    action_ = std::string(text);
    has_action_ = true;
    open_ = true;
  }

  void observation(std::string_view text) {
    if (has_action_) {
      append_text(observation_, text);
    } else {
      fragment(text);
    }
  }

  // Text that belongs to no step goes to the nearest step's observation.
  void fragment(std::string_view text) {
    if (text.empty()) return;
    if (has_action_) {
      append_text(observation_, text);
    } else if (!steps_.empty()) {
      append_text(steps_.back().observation, text);
    } else {
      append_text(orphans_, text);
    }
  }

  std::vector<Step> finish() {
    if (has_action_) {
      flush();
    } else if (open_) {
      std::string dangling = reasoning_;
      reasoning_.clear();
      open_ = false;
      fragment(dangling);
    }
    if (!orphans_.empty() && !steps_.empty()) {
      std::string merged = orphans_;
      append_text(merged, steps_.front().observation);
      steps_.front().observation = std::move(merged);
      orphans_.clear();
    }
    for (auto& s : steps_) {
      s.reasoning = trim(s.reasoning);
      s.action = trim(s.action);
      s.observation = trim(s.observation);
    }
    // Steps whose action trims to nothing are folded into their neighbour.
    std::vector<Step> out;
    for (auto& s : steps_) {
      if (s.action.empty()) {
        std::string text = s.reasoning;
        append_text(text, s.observation);
        if (!out.empty()) append_text(out.back().observation, text);
        continue;
      }
      out.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i].index = static_cast<int>(i + 1);
    return out;
  }

 private:
  void flush() {
    steps_.push_back(Step{0, reasoning_, action_, observation_});
    reasoning_.clear();
    action_.clear();
    observation_.clear();
    has_action_ = false;
    open_ = false;
  }

  std::vector<Step> steps_;
  std::string reasoning_, action_, observation_, orphans_;
  bool has_action_ = false;
  bool open_ = false;
};

bool parse_bool(std::string_view v) {
  std::string s;
  for (char c : v) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  s = trim(s);
  return s == "true" || s == "1" || s == "yes" || s == "pass" || s == "passed";
}

Trajectory finalize(Trajectory t, StepBuilder& builder) {
  t.steps = builder.finish();
  if (t.steps.empty()) throw Error(ErrorCode::unrecognized_format, "no step boundary found in log");
  t.instance_id = trim(t.instance_id);
  if (t.instance_id.empty()) throw Error(ErrorCode::missing_instance_id, "log does not name an instance");
  t.benchmark_scope = trim(t.benchmark_scope);
  t.task_context = trim(t.task_context);
  if (t.outcome && t.outcome->summary) t.outcome->summary = trim(*t.outcome->summary);
  return t;
}

// ---- generic marker format ----

constexpr std::array<std::string_view, 10> kMarkers = {"INSTANCE", "BENCHMARK", "TASK",  "SKILLS",  "THOUGHT",
                                                       "ACTION",   "OBSERVATION", "SCORE", "SUCCESS", "SUMMARY"};

std::optional<std::pair<std::string_view, std::string_view>> match_marker(std::string_view line) {
  for (auto m : kMarkers) {
    if (line.size() > m.size() && line.substr(0, m.size()) == m && line[m.size()] == ':') {
      auto rest = line.substr(m.size() + 1);
      if (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
      return std::make_pair(m, rest);
    }
  }
  return std::nullopt;
}

Trajectory normalize_generic(std::string_view raw) {
  Trajectory t;
  StepBuilder builder;
  Outcome outcome;
  bool has_outcome = false;

  std::string field;  // active marker
  std::string buffer;
  auto commit = [&]() {
    const std::string value = trim(buffer);
    if (field == "INSTANCE") {
      t.instance_id = value;
    } else if (field == "BENCHMARK") {
      t.benchmark_scope = value;
    } else if (field == "TASK") {
      append_text(t.task_context, value);
    } else if (field == "SKILLS") {
      std::stringstream ss(value);
      for (std::string id; std::getline(ss, id, ',');) {
        if (auto clean = trim(id); !clean.empty()) t.skill_ids_injected.push_back(clean);
      }
    } else if (field == "THOUGHT") {
      builder.thought(value);
    } else if (field == "ACTION") {
      builder.action(value);
    } else if (field == "OBSERVATION") {
      builder.observation(value);
    } else if (field == "SCORE") {
      try {
        outcome.verifier_score = std::stod(value);
      } catch (const std::exception&) {
        builder.fragment(value);
      }
      has_outcome = true;
    } else if (field == "SUCCESS") {
      outcome.success = parse_bool(value);
      has_outcome = true;
    } else if (field == "SUMMARY") {
      outcome.summary = value;
      has_outcome = true;
    } else {
      builder.fragment(value);
    }
    buffer.clear();
  };

  std::istringstream in{std::string(raw)};
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() == '\\') {
      buffer += line.substr(1);
      buffer += '\n';
      continue;
    }
    if (auto m = match_marker(line)) {
      commit();
      field = std::string(m->first);
      buffer = std::string(m->second);
      buffer += '\n';
      continue;
    }
    buffer += line;
    buffer += '\n';
  }
  commit();
  if (has_outcome) t.outcome = outcome;
  return finalize(std::move(t), builder);
}

// ---- mini-SWE-agent chat transcript ----

std::string message_text(const nlohmann::json& content) {
  if (content.is_string()) return content.get<std::string>();
  std::string out;
  if (content.is_array()) {
    for (const auto& part : content) {
      if (part.is_string()) {
        append_text(out, part.get<std::string>());
      } else if (part.is_object() && part.contains("text")) {
        append_text(out, part["text"].get<std::string>());
      }
    }
  }
  return out;
}

// Splits an assistant message into (reasoning, command) around its first
// fenced code block. No fence means no action.
std::optional<std::pair<std::string, std::string>> split_fenced(const std::string& text) {
  const auto open = text.find("```");
  if (open == std::string::npos) return std::nullopt;
  const auto body_start = text.find('\n', open);
  if (body_start == std::string::npos) return std::nullopt;
  const auto close = text.find("```", body_start);
  if (close == std::string::npos) return std::nullopt;
  std::string reasoning = text.substr(0, open);
  append_text(reasoning, trim(text.substr(close + 3)));
  reasoning = trim(reasoning);
  if (reasoning.rfind("THOUGHT:", 0) == 0) reasoning = trim(reasoning.substr(8));
  return std::make_pair(reasoning, trim(text.substr(body_start + 1, close - body_start - 1)));
}

Trajectory normalize_mini_swe(std::string_view raw) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::unrecognized_format, std::string("mini_swe log is not JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("messages") || !doc["messages"].is_array()) {
    throw Error(ErrorCode::unrecognized_format, "mini_swe log has no messages array");
  }
  const nlohmann::json info = doc.value("info", nlohmann::json::object());
  Trajectory t;
  t.instance_id = doc.value("instance_id", info.value("instance_id", std::string{}));
  t.benchmark_scope = doc.value("benchmark", info.value("benchmark", std::string{}));

  StepBuilder builder;
  bool seen_task = false;
  for (const auto& msg : doc["messages"]) {
    const std::string role = msg.value("role", std::string{});
    const std::string text = message_text(msg.value("content", nlohmann::json{}));
    if (role == "system") continue;
    if (role == "user" && !seen_task) {
      t.task_context = text;
      seen_task = true;
    } else if (role == "assistant") {
      if (auto parts = split_fenced(text)) {
        builder.thought(parts->first);
        builder.action(parts->second);
      } else {
        builder.fragment(trim(text));
      }
    } else {
      builder.observation(trim(text));
    }
  }

  Outcome outcome;
  bool has_outcome = false;
  for (const char* key : {"verifier_score", "score"}) {
    if (info.contains(key) && info[key].is_number()) {
      outcome.verifier_score = info[key].get<double>();
      has_outcome = true;
      break;
    }
  }
  if (info.contains("resolved") && info["resolved"].is_boolean()) {
    outcome.success = info["resolved"].get<bool>();
    has_outcome = true;
  }
  if (auto status = optional_string(info, "exit_status")) {
    outcome.summary = "exit_status: " + *status;
    has_outcome = true;
  }
  if (auto summary = optional_string(info, "summary")) {
    outcome.summary = *summary;
    has_outcome = true;
  }
  if (has_outcome) t.outcome = outcome;
  return finalize(std::move(t), builder);
}

// ---- ReAct bash agent event stream ----

Trajectory normalize_react_bash(std::string_view raw) {
  Trajectory t;
  StepBuilder builder;
  Outcome outcome;
  bool has_outcome = false;
  bool any_event = false;

  std::istringstream in{std::string(raw)};
  for (std::string line; std::getline(in, line);) {
    if (trim(line).empty()) continue;
    nlohmann::json ev;
    try {
      ev = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      builder.fragment(trim(line));
      continue;
    }
    if (!ev.is_object()) {
      builder.fragment(trim(line));
      continue;
    }
    const std::string type = ev.value("type", std::string{});
    if (type == "meta") {
      any_event = true;
      if (auto v = optional_string(ev, "instance_id")) t.instance_id = *v;
      if (auto v = optional_string(ev, "benchmark")) t.benchmark_scope = *v;
      if (auto v = optional_string(ev, "task")) t.task_context = *v;
    } else if (type == "thought") {
      any_event = true;
      builder.thought(trim(ev.value("content", std::string{})));
    } else if (type == "tool_call") {
      any_event = true;
      std::string cmd = ev.value("input", std::string{});
      if (cmd.empty() && ev.contains("arguments") && ev["arguments"].is_object()) {
        cmd = ev["arguments"].value("command", std::string{});
      }
      builder.action(trim(cmd));
    } else if (type == "tool_result") {
      any_event = true;
      builder.observation(trim(ev.value("content", std::string{})));
    } else if (type == "final") {
      any_event = true;
      if (ev.contains("score") && ev["score"].is_number()) outcome.verifier_score = ev["score"].get<double>();
      if (ev.contains("success") && ev["success"].is_boolean()) outcome.success = ev["success"].get<bool>();
      if (auto v = optional_string(ev, "summary")) outcome.summary = *v;
      has_outcome = true;
    } else {
      builder.fragment(trim(ev.dump()));
    }
  }
  if (!any_event) throw Error(ErrorCode::unrecognized_format, "react_bash log contains no typed events");
  if (has_outcome) t.outcome = outcome;
  return finalize(std::move(t), builder);
}

// Prefixes lines that would otherwise read as markers (or escapes).
std::string escape_block(const std::string& text) {
  std::string out;
  std::istringstream in(text);
  bool first = true;
  for (std::string line; std::getline(in, line);) {
    if (!first) {
      out += '\n';
      if ((!line.empty() && line.front() == '\\') || match_marker(line)) out += '\\';
    }
    out += line;
    first = false;
  }
  return out;
}

std::string format_score(double v) { return nlohmann::json(v).dump(); }

std::string render_step(const Step& s) {
  std::string out = "### Step " + std::to_string(s.index) + "\n";
  if (!s.reasoning.empty()) out += "Reasoning: " + s.reasoning + "\n";
  out += "Action: " + s.action + "\n";
  if (!s.observation.empty()) out += "Observation: " + s.observation + "\n";
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const Step& s) {
  j = nlohmann::json{{"index", s.index}, {"reasoning", s.reasoning}, {"action", s.action},
                     {"observation", s.observation}};
}

void from_json(const nlohmann::json& j, Step& s) {
  s.index = j.at("index").get<int>();
  s.reasoning = j.value("reasoning", std::string{});
  s.action = j.at("action").get<std::string>();
  s.observation = j.value("observation", std::string{});
}

void to_json(nlohmann::json& j, const Outcome& o) {
  j = nlohmann::json{{"verifier_score", o.verifier_score}, {"success", o.success}};
  j["summary"] = o.summary ? nlohmann::json(*o.summary) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, Outcome& o) {
  o.verifier_score = j.at("verifier_score").get<double>();
  o.success = j.value("success", false);
  o.summary = optional_string(j, "summary");
}

void to_json(nlohmann::json& j, const Trajectory& t) {
  j = nlohmann::json{{"instance_id", t.instance_id},     {"benchmark_scope", t.benchmark_scope},
                     {"task_context", t.task_context},   {"steps", t.steps},
                     {"skill_ids_injected", t.skill_ids_injected}};
  j["outcome"] = t.outcome ? nlohmann::json(*t.outcome) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, Trajectory& t) {
  t.instance_id = j.at("instance_id").get<std::string>();
  t.benchmark_scope = j.value("benchmark_scope", std::string{});
  t.task_context = j.value("task_context", std::string{});
  t.steps = j.at("steps").get<std::vector<Step>>();
  if (auto it = j.find("outcome"); it != j.end() && !it->is_null()) {
    t.outcome = it->get<Outcome>();
  } else {
    t.outcome.reset();
  }
  t.skill_ids_injected = j.value("skill_ids_injected", std::vector<std::string>{});
}

void to_json(nlohmann::json& j, const TaskInstance& t) {
  j = nlohmann::json{{"instance_id", t.instance_id}, {"benchmark_scope", t.benchmark_scope}, {"goal_text", t.goal_text}};
  j["repository_context"] = t.repository_context ? nlohmann::json(*t.repository_context) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, TaskInstance& t) {
  t.instance_id = j.at("instance_id").get<std::string>();
  t.benchmark_scope = j.value("benchmark_scope", std::string{});
  t.goal_text = j.value("goal_text", std::string{});
  t.repository_context = optional_string(j, "repository_context");
}

std::string trajectory_digest(const Trajectory& t) { return sha256_hex(nlohmann::json(t).dump()); }

std::string_view to_string(LogFormat f) {
  switch (f) {
    case LogFormat::mini_swe: return "mini_swe";
    case LogFormat::react_bash: return "react_bash";
    case LogFormat::generic: return "generic";
  }
  return "generic";
}

LogFormat log_format_from_string(std::string_view s) {
  if (s == "mini_swe") return LogFormat::mini_swe;
  if (s == "react_bash") return LogFormat::react_bash;
  if (s == "generic") return LogFormat::generic;
  throw Error(ErrorCode::unrecognized_format, "unknown format hint '" + std::string(s) + "'");
}

Trajectory normalize(std::string_view raw_log, LogFormat format) {
  if (trim(raw_log).empty()) throw Error(ErrorCode::unrecognized_format, "empty log");
  switch (format) {
    case LogFormat::mini_swe: return normalize_mini_swe(raw_log);
    case LogFormat::react_bash: return normalize_react_bash(raw_log);
    case LogFormat::generic: return normalize_generic(raw_log);
  }
  throw Error(ErrorCode::unrecognized_format, "unknown format");
}

std::string to_generic_log(const Trajectory& t) {
  std::string out;
  auto field = [&out](std::string_view marker, const std::string& value) {
    if (value.empty()) return;
    out += marker;
    out += ": ";
    out += escape_block(value);
    out += '\n';
  };
  field("INSTANCE", t.instance_id);
  field("BENCHMARK", t.benchmark_scope);
  field("TASK", t.task_context);
  if (!t.skill_ids_injected.empty()) {
    std::string ids;
    for (const auto& id : t.skill_ids_injected) {
      if (!ids.empty()) ids += ',';
      ids += id;
    }
    field("SKILLS", ids);
  }
  for (const auto& s : t.steps) {
    field("THOUGHT", s.reasoning);
    field("ACTION", s.action);
    field("OBSERVATION", s.observation);
  }
  if (t.outcome) {
    field("SCORE", format_score(t.outcome->verifier_score));
    field("SUCCESS", t.outcome->success ? "true" : "false");
    if (t.outcome->summary) field("SUMMARY", *t.outcome->summary);
  }
  return out;
}

std::filesystem::path trajectory_path(const std::filesystem::path& dir, const std::string& instance_id,
                                      std::size_t rollout_idx) {
  return dir / instance_id / (std::to_string(rollout_idx) + ".traj.json");
}

void write_trajectory_file(const std::filesystem::path& path, const Trajectory& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  f << nlohmann::json(t).dump(2) << '\n';
}

Trajectory read_trajectory_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io_error, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(f).get<Trajectory>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::unrecognized_format, path.string() + ": " + e.what());
  }
}

std::size_t word_count(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

double estimate_tokens(std::string_view text) { return 1.3 * static_cast<double>(word_count(text)); }

std::vector<std::size_t> select_step_positions(std::size_t total, std::size_t keep) {
  std::vector<std::size_t> out;
  if (keep >= total || total <= 4) {
    for (std::size_t i = 0; i < total; ++i) out.push_back(i);
    return out;
  }
  out = {0, 1};
  const std::size_t middle = total - 4;
  const std::size_t k = keep > 4 ? keep - 4 : 0;
  for (std::size_t i = 0; i < k; ++i) out.push_back(2 + ((2 * i + 1) * middle) / (2 * k));
  out.push_back(total - 2);
  out.push_back(total - 1);
  return out;
}

EvidenceBlock assemble_evidence(std::span<const Trajectory> trajectories, EvidenceMode mode,
                                const EvidenceConfig& cfg) {
  const std::size_t n = trajectories.size();
  if (mode == EvidenceMode::single && n != 1) {
    throw Error(ErrorCode::arity_mismatch, "single evidence needs exactly 1 trajectory, got " + std::to_string(n));
  }
  if (mode == EvidenceMode::related_set && (n < 2 || n > 3)) {
    throw Error(ErrorCode::arity_mismatch, "related_set evidence needs 2-3 trajectories, got " + std::to_string(n));
  }

  EvidenceBlock block;
  block.mode = mode;
  block.task_context = trajectories.front().task_context;
  const double share = cfg.max_tokens / static_cast<double>(n);

  for (std::size_t t = 0; t < n; ++t) {
    const Trajectory& traj = trajectories[t];
    block.instance_ids.push_back(traj.instance_id);
    std::optional<std::string> summary;
    if (cfg.include_summaries && traj.outcome && traj.outcome->summary && !traj.outcome->summary->empty()) {
      summary = traj.outcome->summary;
    }
    block.result_summaries.push_back(summary);

    std::string header = mode == EvidenceMode::single ? std::string("## Trajectory\n")
                                                      : "## Trajectory " + std::to_string(t + 1) + "\n";
    header += "Instance: " + traj.instance_id + "\n";
    if (!traj.task_context.empty()) header += "Task: " + traj.task_context + "\n";
    std::string footer;
    if (summary) footer = "### Result Summary\n" + *summary + "\n";

    std::vector<std::string> rendered;
    std::vector<double> cost;
    for (const auto& s : traj.steps) {
      rendered.push_back(render_step(s));
      cost.push_back(estimate_tokens(rendered.back()));
    }
    const double budget = share - estimate_tokens(header) - estimate_tokens(footer);
    const std::size_t total = rendered.size();
    std::vector<std::size_t> kept = select_step_positions(total, total);
    for (std::size_t keep = total; keep > 4; --keep) {
      kept = select_step_positions(total, keep);
      double used = 0.0;
      for (auto p : kept) used += cost[p];
      if (used <= budget) break;
      if (keep == 5) kept = select_step_positions(total, 4);
    }

    std::string section = header;
    std::vector<int> kept_indices;
    std::size_t prev = 0;
    bool first = true;
    for (auto p : kept) {
      if (!first && p > prev + 1) section += "... [" + std::to_string(p - prev - 1) + " steps omitted] ...\n";
      section += rendered[p];
      kept_indices.push_back(traj.steps[p].index);
      prev = p;
      first = false;
    }
    section += footer;
    block.kept_steps.push_back(std::move(kept_indices));
    if (!block.text.empty()) block.text += "\n";
    block.text += section;
  }
  return block;
}

}  // namespace skillbank
