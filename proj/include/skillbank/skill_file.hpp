#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "skillbank/skill.hpp"

namespace skillbank {

// Markdown skill file: a front-matter block (id, title, granularity,
// when_to_apply, benchmark_scope, provenance, optional source_instance),
// then the title heading, a "When to Apply" section, and rules as a bullet
// list under "## Instructions". parse_skill_markdown(to_skill_markdown(s)) == s.
std::string to_skill_markdown(const Skill& skill);
Skill parse_skill_markdown(const std::string& text);

Skill read_skill_file(const std::filesystem::path& path);
void write_skill_file(const std::filesystem::path& path, const Skill& skill);

// Writes <dir>/<id>.md for every skill.
void write_skill_directory(const std::filesystem::path& dir, const std::vector<Skill>& skills);

}  // namespace skillbank
