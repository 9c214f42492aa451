#pragma once

#include <string>
#include <string_view>
#include <variant>

#include <nlohmann/json.hpp>

#include "skillbank/skill.hpp"

namespace skillbank {

enum class Action { generate_task_level, generate_event_driven, skip, evolve, add, merge, drop };

std::string_view to_string(Action action);
Action action_from_string(std::string_view s);

struct GenerateContent {
  SkillDraft draft;
  friend bool operator==(const GenerateContent&, const GenerateContent&) = default;
};

// skip, add and drop carry only a reason.
struct DecisionContent {
  std::string reason;
  friend bool operator==(const DecisionContent&, const DecisionContent&) = default;
};

struct EvolveContent {
  std::string target_skill_id;
  SkillDraft draft;
  std::string reason;
  friend bool operator==(const EvolveContent&, const EvolveContent&) = default;
};

struct MergeContent {
  std::string merge_target_skill_id;
  SkillDraft draft;
  std::string reason;
  friend bool operator==(const MergeContent&, const MergeContent&) = default;
};

using OperationContent = std::variant<GenerateContent, DecisionContent, EvolveContent, MergeContent>;

// A manager decision u = (action, content).
struct Operation {
  Action action = Action::skip;
  OperationContent content = DecisionContent{};

  // True when the content alternative matches the action.
  bool well_formed() const;

  // Operations that emit an injectable skill: generate, evolve, merge.
  bool emits_skill() const;

  // The emitted draft, if any.
  const SkillDraft* skill_draft() const;

  static Operation generate(Granularity g, SkillDraft draft);
  static Operation skip(std::string reason);
  static Operation add(std::string reason);
  static Operation drop(std::string reason);
  static Operation evolve(std::string target, SkillDraft draft, std::string reason);
  static Operation merge(std::string target, SkillDraft draft, std::string reason);

  friend bool operator==(const Operation&, const Operation&) = default;
};

void to_json(nlohmann::json& j, const Operation& op);
void from_json(const nlohmann::json& j, Operation& op);

}  // namespace skillbank
