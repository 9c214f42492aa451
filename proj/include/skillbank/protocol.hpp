#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillbank/operation.hpp"
#include "skillbank/skill.hpp"
#include "skillbank/trajectory.hpp"

namespace skillbank {

enum class PromptFamily {
  extract_task_level,
  extract_event_driven,
  evolve,
  maintain,
  judge_task_level,
  judge_event_driven,
  judge_evolve,
  judge_merge,
  judge_alignment,
};

std::string_view to_string(PromptFamily f);
PromptFamily prompt_family_from_string(std::string_view s);
bool is_judge(PromptFamily f);
bool is_manager(PromptFamily f);

// The rubric that scores a manager family's outputs.
PromptFamily judge_for(PromptFamily manager_family);

// Inputs a template may draw on. Which fields are required depends on the family.
struct PromptContext {
  std::optional<EvidenceBlock> evidence;
  std::optional<Skill> candidate_or_existing_skill;
  std::vector<Skill> retrieved_context;
  std::optional<std::string> proposed_output;  // judges
  std::optional<std::string> user_prompt;      // alignment judge: the downstream policy's prompt
};

struct PromptText {
  PromptFamily family = PromptFamily::extract_task_level;
  std::string system;
  std::string user;
  std::string template_version;
  friend bool operator==(const PromptText&, const PromptText&) = default;
};

void to_json(nlohmann::json& j, const PromptText& p);
void from_json(const nlohmann::json& j, PromptText& p);

// Raw template pieces for a family, before substitution.
struct PromptTemplate {
  std::string_view system;
  std::string_view user;
  std::string_view output_schema;  // embedded verbatim in system (manager) or user (judge)
};

const PromptTemplate& prompt_template(PromptFamily f);

// Substitutes every {{PLACEHOLDER}} in one pass. Throws Error{missing_context}
// when a slot the family requires is empty.
PromptText render(PromptFamily family, const PromptContext& ctx);

// Skill block as it appears inside prompts.
std::string render_skill_block(const Skill& skill, std::string_view id_label = "skill_id");

// Locates the first syntactically complete JSON object in free text.
std::optional<nlohmann::json> first_json_object(std::string_view raw);

// Decodes a manager reply for an extract / evolve / maintain family.
// Throws Error{malformed_output} when no JSON object is present and
// Error{schema_violation} when the object does not fit the family's schema.
Operation parse_operation(std::string_view raw, PromptFamily family);

struct RubricDimension {
  std::string name;
  int max_score = 0;
  int listed_questions = 0;  // sub-questions printed for the dimension
};

struct RubricSpec {
  PromptFamily family;
  std::vector<RubricDimension> dimensions;
  int total() const;               // sum of max_score
  int listed_question_total() const;
};

// Dimension tables for the five judge families (totals 16, 16, 16, 22, 9).
const RubricSpec& rubric_spec(PromptFamily judge_family);

struct RubricAnswers {
  PromptFamily family = PromptFamily::judge_task_level;
  std::map<std::string, int> per_dimension;
  std::string reason;
};

// Throws Error{malformed_output} (no object, missing or non-integer dimension)
// or Error{range_violation} (score outside [0, max]).
RubricAnswers parse_rubric(std::string_view raw, PromptFamily judge_family);

}  // namespace skillbank
