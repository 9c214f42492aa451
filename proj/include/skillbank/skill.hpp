#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace skillbank {

enum class Granularity { task_level, event_driven };

// Wire labels follow the manager output schema: "general" and "event-driven".
std::string_view to_label(Granularity g);
Granularity granularity_from_label(std::string_view label);
std::optional<Granularity> try_granularity_from_label(std::string_view label);

enum class Origin { extracted_task_level, extracted_event_driven, evolved, merged };

std::string_view to_string(Origin origin);
Origin origin_from_string(std::string_view s);

// parent_ids: none for extracted, {target} for evolved,
// {candidate lineage, merge target} for merged.
struct Provenance {
  Origin origin = Origin::extracted_task_level;
  std::vector<std::string> parent_ids;

  bool valid() const;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

// The model-authored part of a skill, as carried inside operations.
struct SkillDraft {
  std::string title;
  Granularity granularity = Granularity::task_level;
  std::string when_to_apply;
  std::vector<std::string> rules;

  friend bool operator==(const SkillDraft&, const SkillDraft&) = default;
};

struct Skill {
  std::string id;
  std::string title;
  Granularity granularity = Granularity::task_level;
  std::string when_to_apply;
  std::vector<std::string> rules;
  Provenance provenance;
  std::optional<std::string> source_instance;
  std::string benchmark_scope;

  SkillDraft draft() const { return {title, granularity, when_to_apply, rules}; }

  // Non-empty title and rules, non-empty id, consistent provenance.
  bool valid() const;

  friend bool operator==(const Skill&, const Skill&) = default;
};

// Content-derived id over (title, granularity, when_to_apply, rules, parent_ids).
std::string content_id(const SkillDraft& draft, const std::vector<std::string>& parent_ids);

// Builds a skill from a draft and assigns its content id.
Skill make_skill(const SkillDraft& draft, Provenance provenance, std::string benchmark_scope,
                 std::optional<std::string> source_instance);

// Text used as the dense-retrieval document: title, when_to_apply, rules.
std::string retrieval_text(const Skill& skill);

void to_json(nlohmann::json& j, const SkillDraft& d);
void from_json(const nlohmann::json& j, SkillDraft& d);
void to_json(nlohmann::json& j, const Provenance& p);
void from_json(const nlohmann::json& j, Provenance& p);
void to_json(nlohmann::json& j, const Skill& s);
void from_json(const nlohmann::json& j, Skill& s);

}  // namespace skillbank
