#include "skillbank/skill.hpp"

#include "skillbank/error.hpp"
#include "skillbank/hash.hpp"

namespace skillbank {

std::string_view to_label(Granularity g) {
  return g == Granularity::task_level ? "general" : "event-driven";
}

std::optional<Granularity> try_granularity_from_label(std::string_view label) {
  if (label == "general" || label == "task_level") return Granularity::task_level;
  if (label == "event-driven" || label == "event_driven") return Granularity::event_driven;
  return std::nullopt;
}

Granularity granularity_from_label(std::string_view label) {
  if (auto g = try_granularity_from_label(label)) return *g;
  throw Error(ErrorCode::invalid_operation, "unknown granularity '" + std::string(label) + "'");
}

std::string_view to_string(Origin origin) {
  switch (origin) {
    case Origin::extracted_task_level: return "extracted_task_level";
    case Origin::extracted_event_driven: return "extracted_event_driven";
    case Origin::evolved: return "evolved";
    case Origin::merged: return "merged";
  }
  return "unknown";
}

Origin origin_from_string(std::string_view s) {
  if (s == "extracted_task_level") return Origin::extracted_task_level;
  if (s == "extracted_event_driven") return Origin::extracted_event_driven;
  if (s == "evolved") return Origin::evolved;
  if (s == "merged") return Origin::merged;
  throw Error(ErrorCode::invalid_operation, "unknown provenance origin '" + std::string(s) + "'");
}

bool Provenance::valid() const {
  switch (origin) {
    case Origin::extracted_task_level:
    case Origin::extracted_event_driven: return parent_ids.empty();
    case Origin::evolved: return parent_ids.size() == 1;
    case Origin::merged: return parent_ids.size() == 2;
  }
  return false;
}

bool Skill::valid() const {
  if (id.empty() || title.empty() || rules.empty()) return false;
  for (const auto& r : rules) {
    if (r.empty()) return false;
  }
  return provenance.valid();
}

std::string content_id(const SkillDraft& draft, const std::vector<std::string>& parent_ids) {
  // Length-prefixed fields so no two distinct tuples share a preimage.
  std::string buf;
  auto put = [&buf](std::string_view field) {
    buf += std::to_string(field.size());
    buf += ':';
    buf += field;
  };
  put(draft.title);
  put(to_label(draft.granularity));
  put(draft.when_to_apply);
  buf += "R" + std::to_string(draft.rules.size());
  for (const auto& r : draft.rules) put(r);
  buf += "P" + std::to_string(parent_ids.size());
  for (const auto& p : parent_ids) put(p);
  return "sk-" + sha256_hex(buf).substr(0, 16);
}

Skill make_skill(const SkillDraft& draft, Provenance provenance, std::string benchmark_scope,
                 std::optional<std::string> source_instance) {
  Skill s;
  s.id = content_id(draft, provenance.parent_ids);
  s.title = draft.title;
  s.granularity = draft.granularity;
  s.when_to_apply = draft.when_to_apply;
  s.rules = draft.rules;
  s.provenance = std::move(provenance);
  s.benchmark_scope = std::move(benchmark_scope);
  s.source_instance = std::move(source_instance);
  return s;
}

std::string retrieval_text(const Skill& skill) {
  std::string text = skill.title;
  text += "\n";
  text += skill.when_to_apply;
  for (const auto& r : skill.rules) {
    text += "\n";
    text += r;
  }
  return text;
}

void to_json(nlohmann::json& j, const SkillDraft& d) {
  j = nlohmann::json{{"title", d.title},
                     {"granularity", to_label(d.granularity)},
                     {"when_to_apply", d.when_to_apply},
                     {"rules", d.rules}};
}

void from_json(const nlohmann::json& j, SkillDraft& d) {
  d.title = j.at("title").get<std::string>();
  d.granularity = granularity_from_label(j.at("granularity").get<std::string>());
  d.when_to_apply = j.at("when_to_apply").get<std::string>();
  d.rules = j.at("rules").get<std::vector<std::string>>();
}

void to_json(nlohmann::json& j, const Provenance& p) {
  j = nlohmann::json{{"origin", to_string(p.origin)}, {"parent_ids", p.parent_ids}};
}

void from_json(const nlohmann::json& j, Provenance& p) {
  p.origin = origin_from_string(j.at("origin").get<std::string>());
  p.parent_ids = j.at("parent_ids").get<std::vector<std::string>>();
}

void to_json(nlohmann::json& j, const Skill& s) {
  j = nlohmann::json{{"id", s.id},
                     {"title", s.title},
                     {"granularity", to_label(s.granularity)},
                     {"when_to_apply", s.when_to_apply},
                     {"rules", s.rules},
                     {"provenance", s.provenance},
                     {"benchmark_scope", s.benchmark_scope}};
  j["source_instance"] = s.source_instance ? nlohmann::json(*s.source_instance) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, Skill& s) {
  s.id = j.at("id").get<std::string>();
  s.title = j.at("title").get<std::string>();
  s.granularity = granularity_from_label(j.at("granularity").get<std::string>());
  s.when_to_apply = j.at("when_to_apply").get<std::string>();
  s.rules = j.at("rules").get<std::vector<std::string>>();
  s.provenance = j.at("provenance").get<Provenance>();
  s.benchmark_scope = j.value("benchmark_scope", std::string{});
  if (auto it = j.find("source_instance"); it != j.end() && !it->is_null()) {
    s.source_instance = it->get<std::string>();
  } else {
    s.source_instance.reset();
  }
}

}  // namespace skillbank
