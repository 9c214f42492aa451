#include "skillbank/operation.hpp"

#include "skillbank/error.hpp"

namespace skillbank {

std::string_view to_string(Action action) {
  switch (action) {
    case Action::generate_task_level: return "generate_task_level";
    case Action::generate_event_driven: return "generate_event_driven";
    case Action::skip: return "skip";
    case Action::evolve: return "evolve";
    case Action::add: return "add";
    case Action::merge: return "merge";
    case Action::drop: return "drop";
  }
  return "unknown";
}

Action action_from_string(std::string_view s) {
  if (s == "generate_task_level") return Action::generate_task_level;
  if (s == "generate_event_driven") return Action::generate_event_driven;
  if (s == "skip") return Action::skip;
  if (s == "evolve") return Action::evolve;
  if (s == "add") return Action::add;
  if (s == "merge") return Action::merge;
  if (s == "drop") return Action::drop;
  throw Error(ErrorCode::invalid_operation, "unknown action '" + std::string(s) + "'");
}

bool Operation::well_formed() const {
  switch (action) {
    case Action::generate_task_level:
      return std::holds_alternative<GenerateContent>(content) &&
             std::get<GenerateContent>(content).draft.granularity == Granularity::task_level;
    case Action::generate_event_driven:
      return std::holds_alternative<GenerateContent>(content) &&
             std::get<GenerateContent>(content).draft.granularity == Granularity::event_driven;
    case Action::skip:
    case Action::add:
    case Action::drop: return std::holds_alternative<DecisionContent>(content);
    case Action::evolve: return std::holds_alternative<EvolveContent>(content);
    case Action::merge: return std::holds_alternative<MergeContent>(content);
  }
  return false;
}

bool Operation::emits_skill() const {
  return action == Action::generate_task_level || action == Action::generate_event_driven ||
         action == Action::evolve || action == Action::merge;
}

const SkillDraft* Operation::skill_draft() const {
  if (const auto* g = std::get_if<GenerateContent>(&content)) return &g->draft;
  if (const auto* e = std::get_if<EvolveContent>(&content)) return &e->draft;
  if (const auto* m = std::get_if<MergeContent>(&content)) return &m->draft;
  return nullptr;
}

Operation Operation::generate(Granularity g, SkillDraft draft) {
  draft.granularity = g;
  return {g == Granularity::task_level ? Action::generate_task_level : Action::generate_event_driven,
          GenerateContent{std::move(draft)}};
}
Operation Operation::skip(std::string reason) { return {Action::skip, DecisionContent{std::move(reason)}}; }
Operation Operation::add(std::string reason) { return {Action::add, DecisionContent{std::move(reason)}}; }
Operation Operation::drop(std::string reason) { return {Action::drop, DecisionContent{std::move(reason)}}; }
Operation Operation::evolve(std::string target, SkillDraft draft, std::string reason) {
  return {Action::evolve, EvolveContent{std::move(target), std::move(draft), std::move(reason)}};
}
Operation Operation::merge(std::string target, SkillDraft draft, std::string reason) {
  return {Action::merge, MergeContent{std::move(target), std::move(draft), std::move(reason)}};
}

void to_json(nlohmann::json& j, const Operation& op) {
  j = nlohmann::json{{"action", to_string(op.action)}};
  std::visit(
      [&j](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, GenerateContent>) {
          j["skill"] = c.draft;
        } else if constexpr (std::is_same_v<T, DecisionContent>) {
          j["reason"] = c.reason;
        } else if constexpr (std::is_same_v<T, EvolveContent>) {
          j["target_skill_id"] = c.target_skill_id;
          j["reason"] = c.reason;
          j["skill"] = c.draft;
        } else {
          j["merge_target_skill_id"] = c.merge_target_skill_id;
          j["reason"] = c.reason;
          j["skill"] = c.draft;
        }
      },
      op.content);
}

void from_json(const nlohmann::json& j, Operation& op) {
  op.action = action_from_string(j.at("action").get<std::string>());
  switch (op.action) {
    case Action::generate_task_level:
    case Action::generate_event_driven:
      op.content = GenerateContent{j.at("skill").get<SkillDraft>()};
      break;
    case Action::skip:
    case Action::add:
    case Action::drop:
      op.content = DecisionContent{j.value("reason", std::string{})};
      break;
    case Action::evolve:
      op.content = EvolveContent{j.at("target_skill_id").get<std::string>(), j.at("skill").get<SkillDraft>(),
                                 j.value("reason", std::string{})};
      break;
    case Action::merge:
      op.content = MergeContent{j.at("merge_target_skill_id").get<std::string>(), j.at("skill").get<SkillDraft>(),
                                j.value("reason", std::string{})};
      break;
  }
}

}  // namespace skillbank
