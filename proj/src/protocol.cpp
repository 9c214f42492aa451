#include "skillbank/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "skillbank/bank.hpp"
#include "skillbank/error.hpp"

namespace skillbank {

namespace {

using json = nlohmann::json;

constexpr std::string_view kNoRetrieved = "(no similar skills retrieved)";
constexpr std::string_view kNotProvided = "(not provided)";

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Replaces every {{NAME}} in one left-to-right pass. Substituted text is never rescanned.
std::string substitute(std::string_view tmpl, const std::function<std::string(std::string_view)>& lookup) {
  std::string out;
  out.reserve(tmpl.size() * 2);
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) break;
    auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) break;
    out.append(tmpl.substr(pos, open - pos));
    out += lookup(tmpl.substr(open + 2, close - open - 2));
    pos = close + 2;
  }
  out.append(tmpl.substr(pos));
  return out;
}

std::string render_skill_list(const std::vector<Skill>& skills) {
  if (skills.empty()) return std::string(kNoRetrieved);
  std::string out;
  for (std::size_t i = 0; i < skills.size(); ++i) {
    if (i) out += "\n";
    out += render_skill_block(skills[i]);
  }
  return out;
}

const EvidenceBlock& need_evidence(const PromptContext& ctx, PromptFamily f, std::optional<EvidenceMode> mode) {
  if (!ctx.evidence || ctx.evidence->text.empty())
    throw Error(ErrorCode::missing_context, std::string(to_string(f)) + " needs trajectory evidence");
  const auto& ev = *ctx.evidence;
  if (mode == EvidenceMode::single && ev.instance_ids.size() != 1)
    throw Error(ErrorCode::missing_context, std::string(to_string(f)) + " needs exactly one trajectory, got " +
                                                std::to_string(ev.instance_ids.size()));
  if (mode == EvidenceMode::related_set && (ev.instance_ids.size() < 2 || ev.instance_ids.size() > 3))
    throw Error(ErrorCode::missing_context, std::string(to_string(f)) + " needs 2-3 trajectories, got " +
                                                std::to_string(ev.instance_ids.size()));
  return ev;
}

const Skill& need_candidate(const PromptContext& ctx, PromptFamily f) {
  if (!ctx.candidate_or_existing_skill)
    throw Error(ErrorCode::missing_context, std::string(to_string(f)) + " needs a candidate skill");
  return *ctx.candidate_or_existing_skill;
}

const std::string& need_proposed(const PromptContext& ctx, PromptFamily f) {
  if (!ctx.proposed_output || trim(*ctx.proposed_output).empty())
    throw Error(ErrorCode::missing_context, std::string(to_string(f)) + " needs the proposed output");
  return *ctx.proposed_output;
}

std::string result_summary_text(const EvidenceBlock& ev) {
  std::string out;
  for (const auto& s : ev.result_summaries) {
    if (!s || s->empty()) continue;
    if (!out.empty()) out += "\n";
    out += *s;
  }
  return out.empty() ? std::string(kNotProvided) : out;
}

// Manager system text with its schema block in place.
std::string manager_system(PromptFamily f) {
  const auto& t = prompt_template(f);
  return substitute(t.system, [&](std::string_view name) -> std::string {
    if (name == "OUTPUT_SCHEMA") return std::string(t.output_schema);
    throw Error(ErrorCode::missing_context, "unknown placeholder {{" + std::string(name) + "}}");
  });
}

// ---- operation schema checks ----

[[noreturn]] void violation(PromptFamily f, const std::string& msg) {
  throw Error(ErrorCode::schema_violation, std::string(to_string(f)) + ": " + msg);
}

std::string required_string(const json& obj, const char* key, PromptFamily f, bool non_empty) {
  auto it = obj.find(key);
  if (it == obj.end()) violation(f, std::string("missing field '") + key + "'");
  if (!it->is_string()) violation(f, std::string("field '") + key + "' is not a string");
  auto v = it->get<std::string>();
  if (non_empty && trim(v).empty()) violation(f, std::string("field '") + key + "' is empty");
  return v;
}

// "general | event-driven" is the printed placeholder for either value; the first listed option is taken.
std::optional<Granularity> parse_granularity_field(const std::string& raw) {
  std::string_view rest = raw;
  while (true) {
    auto bar = rest.find('|');
    auto label = trim(rest.substr(0, bar));
    if (auto g = try_granularity_from_label(label)) return g;
    if (bar == std::string_view::npos) return std::nullopt;
    rest = rest.substr(bar + 1);
  }
}

SkillDraft parse_draft(const json& obj, PromptFamily f, std::optional<Granularity> forced) {
  auto it = obj.find("skill");
  if (it == obj.end()) violation(f, "missing field 'skill'");
  if (!it->is_object()) violation(f, "field 'skill' is not an object");
  const auto& s = *it;
  SkillDraft d;
  d.title = trim(required_string(s, "title", f, true));
  auto gran_raw = trim(required_string(s, "granularity", f, true));
  d.when_to_apply = trim(required_string(s, "when_to_apply", f, true));
  if (forced) {
    auto g = try_granularity_from_label(gran_raw);
    if (!g || *g != *forced)
      violation(f, "granularity '" + gran_raw + "' not allowed, expected '" + std::string(to_label(*forced)) + "'");
    d.granularity = *g;
  } else {
    auto g = parse_granularity_field(gran_raw);
    if (!g) violation(f, "unknown granularity '" + gran_raw + "'");
    d.granularity = *g;
  }
  auto rit = s.find("rules");
  if (rit == s.end()) violation(f, "missing field 'rules'");
  if (!rit->is_array()) violation(f, "field 'rules' is not an array");
  if (rit->empty()) violation(f, "rules are empty");
  for (const auto& r : *rit) {
    if (!r.is_string()) violation(f, "rule is not a string");
    auto text = trim(r.get<std::string>());
    if (text.empty()) violation(f, "empty rule");
    d.rules.push_back(std::move(text));
  }
  return d;
}

bool allowed(PromptFamily f, std::string_view action) {
  switch (f) {
    case PromptFamily::extract_task_level:
    case PromptFamily::extract_event_driven: return action == "generate" || action == "skip";
    case PromptFamily::evolve: return action == "evolve" || action == "skip";
    case PromptFamily::maintain: return action == "add" || action == "drop" || action == "merge";
    default: return false;
  }
}

}  // namespace

std::string_view to_string(PromptFamily f) {
  switch (f) {
    case PromptFamily::extract_task_level: return "extract_task_level";
    case PromptFamily::extract_event_driven: return "extract_event_driven";
    case PromptFamily::evolve: return "evolve";
    case PromptFamily::maintain: return "maintain";
    case PromptFamily::judge_task_level: return "judge_task_level";
    case PromptFamily::judge_event_driven: return "judge_event_driven";
    case PromptFamily::judge_evolve: return "judge_evolve";
    case PromptFamily::judge_merge: return "judge_merge";
    case PromptFamily::judge_alignment: return "judge_alignment";
  }
  return "unknown";
}

PromptFamily prompt_family_from_string(std::string_view s) {
  for (auto f : {PromptFamily::extract_task_level, PromptFamily::extract_event_driven, PromptFamily::evolve,
                 PromptFamily::maintain, PromptFamily::judge_task_level, PromptFamily::judge_event_driven,
                 PromptFamily::judge_evolve, PromptFamily::judge_merge, PromptFamily::judge_alignment}) {
    if (to_string(f) == s) return f;
  }
  throw Error(ErrorCode::invalid_config, "unknown prompt family '" + std::string(s) + "'");
}

bool is_judge(PromptFamily f) { return !is_manager(f); }

bool is_manager(PromptFamily f) {
  return f == PromptFamily::extract_task_level || f == PromptFamily::extract_event_driven ||
         f == PromptFamily::evolve || f == PromptFamily::maintain;
}

PromptFamily judge_for(PromptFamily manager_family) {
  switch (manager_family) {
    case PromptFamily::extract_task_level: return PromptFamily::judge_task_level;
    case PromptFamily::extract_event_driven: return PromptFamily::judge_event_driven;
    case PromptFamily::evolve: return PromptFamily::judge_evolve;
    // add, merge and drop are all scored with the maintenance rubric
    case PromptFamily::maintain: return PromptFamily::judge_merge;
    default: break;
  }
  throw Error(ErrorCode::invalid_operation, "no judge for " + std::string(to_string(manager_family)));
}

void to_json(nlohmann::json& j, const PromptText& p) {
  j = json{{"family", to_string(p.family)},
           {"system", p.system},
           {"user", p.user},
           {"template_version", p.template_version}};
}

void from_json(const nlohmann::json& j, PromptText& p) {
  p.family = prompt_family_from_string(j.at("family").get<std::string>());
  p.system = j.at("system").get<std::string>();
  p.user = j.at("user").get<std::string>();
  p.template_version = j.value("template_version", std::string(kTemplateVersion));
}

std::string render_skill_block(const Skill& skill, std::string_view id_label) {
  std::ostringstream out;
  out << id_label << ": " << skill.id << "\n";
  out << "title: " << skill.title << "\n";
  out << "granularity: " << to_label(skill.granularity) << "\n";
  out << "when_to_apply: " << skill.when_to_apply << "\n";
  out << "rules:\n";
  for (const auto& r : skill.rules) out << "- " << r << "\n";
  return out.str();
}

PromptText render(PromptFamily family, const PromptContext& ctx) {
  const auto& t = prompt_template(family);
  PromptText out;
  out.family = family;
  out.template_version = std::string(kTemplateVersion);

  // Validate required slots up front so that missing context is reported regardless of template order.
  std::map<std::string, std::string, std::less<>> slots;
  switch (family) {
    case PromptFamily::extract_task_level: {
      const auto& ev = need_evidence(ctx, family, EvidenceMode::related_set);
      slots["TASK_CONTEXT"] = ev.task_context;
      slots["TRAJECTORY_EVIDENCE"] = ev.text;
      break;
    }
    case PromptFamily::extract_event_driven: {
      const auto& ev = need_evidence(ctx, family, EvidenceMode::single);
      slots["TASK_CONTEXT"] = ev.task_context;
      slots["TRAJECTORY_EVIDENCE"] = ev.text;
      break;
    }
    case PromptFamily::evolve: {
      if (ctx.retrieved_context.empty())
        throw Error(ErrorCode::missing_context, "evolve needs at least one relevant skill");
      const auto& ev = need_evidence(ctx, family, EvidenceMode::single);
      slots["RELEVANT_SKILLS"] = render_skill_list(ctx.retrieved_context);
      slots["TRAJECTORY_EVIDENCE"] = ev.text;
      break;
    }
    case PromptFamily::maintain: {
      slots["CANDIDATE_SKILL"] = render_skill_block(need_candidate(ctx, family), "candidate_id");
      slots["RETRIEVED_SKILLS"] = render_skill_list(ctx.retrieved_context);
      break;
    }
    case PromptFamily::judge_task_level:
    case PromptFamily::judge_event_driven: {
      const auto& ev = need_evidence(ctx, family, std::nullopt);
      slots["TRAJECTORY_EVIDENCE"] = ev.text;
      slots["PROPOSED_OUTPUT"] = need_proposed(ctx, family);
      break;
    }
    case PromptFamily::judge_evolve: {
      std::string existing;
      if (ctx.candidate_or_existing_skill) {
        existing = render_skill_block(*ctx.candidate_or_existing_skill);
      } else if (!ctx.retrieved_context.empty()) {
        existing = render_skill_list(ctx.retrieved_context);
      } else {
        throw Error(ErrorCode::missing_context, "judge_evolve needs the existing skill");
      }
      const auto& ev = need_evidence(ctx, family, std::nullopt);
      slots["SYSTEM_PROMPT"] = manager_system(PromptFamily::evolve);
      slots["EXISTING_PRIOR_KNOWLEDGE"] = existing;
      slots["TRAJECTORY_EVIDENCE"] = ev.text;
      slots["PROPOSED_OUTPUT"] = need_proposed(ctx, family);
      break;
    }
    case PromptFamily::judge_merge: {
      slots["CANDIDATE_PRIOR_KNOWLEDGE"] = render_skill_block(need_candidate(ctx, family), "candidate_id");
      slots["EXISTING_PRIOR_KNOWLEDGE"] = render_skill_list(ctx.retrieved_context);
      slots["PROPOSED_OUTPUT"] = need_proposed(ctx, family);
      break;
    }
    case PromptFamily::judge_alignment: {
      std::string prior;
      if (ctx.candidate_or_existing_skill) {
        prior = render_skill_block(*ctx.candidate_or_existing_skill);
      } else if (!ctx.retrieved_context.empty()) {
        prior = render_skill_list(ctx.retrieved_context);
      } else {
        throw Error(ErrorCode::missing_context, "judge_alignment needs the injected skill");
      }
      const auto& ev = need_evidence(ctx, family, std::nullopt);
      slots["TASK_CONTEXT"] = ev.task_context.empty() ? std::string(kNotProvided) : ev.task_context;
      slots["USER_PROMPT"] =
          ctx.user_prompt && !ctx.user_prompt->empty() ? *ctx.user_prompt : std::string(kNotProvided);
      slots["PRIOR_KNOWLEDGE"] = prior;
      slots["TRAJECTORY_EVIDENCE"] = ev.text;
      slots["RESULT_SUMMARY"] = result_summary_text(ev);
      break;
    }
  }
  slots["OUTPUT_SCHEMA"] = std::string(t.output_schema);

  auto lookup = [&](std::string_view name) -> std::string {
    auto it = slots.find(name);
    if (it == slots.end())
      throw Error(ErrorCode::missing_context,
                  std::string(to_string(family)) + ": no value for {{" + std::string(name) + "}}");
    return it->second;
  };
  out.system = substitute(t.system, lookup);
  out.user = substitute(t.user, lookup);
  return out;
}

std::optional<nlohmann::json> first_json_object(std::string_view raw) {
  for (std::size_t start = raw.find('{'); start != std::string_view::npos; start = raw.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    std::size_t end = std::string_view::npos;
    for (std::size_t i = start; i < raw.size(); ++i) {
      char c = raw[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        end = i;
        break;
      }
    }
    if (end == std::string_view::npos) continue;
    auto parsed = json::parse(raw.substr(start, end - start + 1), nullptr, false);
    if (!parsed.is_discarded() && parsed.is_object()) return parsed;
  }
  return std::nullopt;
}

Operation parse_operation(std::string_view raw, PromptFamily family) {
  if (!is_manager(family))
    throw Error(ErrorCode::invalid_operation, std::string(to_string(family)) + " is not a manager family");
  auto obj = first_json_object(raw);
  if (!obj) throw Error(ErrorCode::malformed_output, std::string(to_string(family)) + ": no JSON object found");
  auto action = required_string(*obj, "action", family, true);
  if (!allowed(family, action)) violation(family, "action '" + action + "' not allowed");

  if (action == "skip") return Operation::skip(required_string(*obj, "reason", family, false));
  if (action == "add") return Operation::add(required_string(*obj, "reason", family, false));
  if (action == "drop") return Operation::drop(required_string(*obj, "reason", family, false));
  if (action == "generate") {
    auto g = family == PromptFamily::extract_task_level ? Granularity::task_level : Granularity::event_driven;
    return Operation::generate(g, parse_draft(*obj, family, g));
  }
  if (action == "evolve") {
    auto target = trim(required_string(*obj, "target_skill_id", family, true));
    auto reason = required_string(*obj, "reason", family, false);
    return Operation::evolve(std::move(target), parse_draft(*obj, family, std::nullopt), std::move(reason));
  }
  // merge
  auto target = trim(required_string(*obj, "merge_target_skill_id", family, true));
  auto reason = required_string(*obj, "reason", family, false);
  return Operation::merge(std::move(target), parse_draft(*obj, family, std::nullopt), std::move(reason));
}

int RubricSpec::total() const {
  return std::accumulate(dimensions.begin(), dimensions.end(), 0,
                         [](int acc, const RubricDimension& d) { return acc + d.max_score; });
}

int RubricSpec::listed_question_total() const {
  return std::accumulate(dimensions.begin(), dimensions.end(), 0,
                         [](int acc, const RubricDimension& d) { return acc + d.listed_questions; });
}

RubricAnswers parse_rubric(std::string_view raw, PromptFamily judge_family) {
  const auto& spec = rubric_spec(judge_family);
  auto obj = first_json_object(raw);
  auto fam = std::string(to_string(judge_family));
  if (!obj) throw Error(ErrorCode::malformed_output, fam + ": no JSON object found");
  RubricAnswers out;
  out.family = judge_family;
  for (const auto& dim : spec.dimensions) {
    auto it = obj->find(dim.name);
    if (it == obj->end()) throw Error(ErrorCode::malformed_output, fam + ": missing dimension '" + dim.name + "'");
    long long v = 0;
    if (it->is_number_integer()) {
      v = it->get<long long>();
    } else if (it->is_number_float() && std::isfinite(it->get<double>()) &&
               it->get<double>() == std::floor(it->get<double>())) {
      v = static_cast<long long>(it->get<double>());
    } else {
      throw Error(ErrorCode::malformed_output, fam + ": dimension '" + dim.name + "' is not an integer");
    }
    if (v < 0 || v > dim.max_score)
      throw Error(ErrorCode::range_violation, fam + ": " + dim.name + "=" + std::to_string(v) + " outside [0, " +
                                                  std::to_string(dim.max_score) + "]");
    out.per_dimension[dim.name] = static_cast<int>(v);
  }
  if (auto r = obj->find("reason"); r != obj->end() && r->is_string()) out.reason = r->get<std::string>();
  return out;
}

}  // namespace skillbank
