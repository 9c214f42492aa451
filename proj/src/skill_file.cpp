#include "skillbank/skill_file.hpp"

#include <fstream>
#include <sstream>

#include "skillbank/error.hpp"
#include "skillbank/hash.hpp"

namespace skillbank {

namespace {

constexpr std::string_view kFence = "---";
constexpr std::string_view kInstructions = "## Instructions";

// Plain when it survives a "key: value" line unchanged; JSON-quoted otherwise.
std::string encode_value(const std::string& v) {
  const bool plain = !v.empty() && v.find_first_of("\n\r") == std::string::npos && v.front() != ' ' &&
                     v.back() != ' ' && v.front() != '"' && v.front() != '\t' && v.back() != '\t';
  return plain ? v : nlohmann::json(v).dump();
}

std::string decode_value(const std::string& v) {
  if (!v.empty() && v.front() == '"') {
    try {
      return nlohmann::json::parse(v).get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::invalid_operation, "bad quoted front-matter value: " + v);
    }
  }
  return v;
}

std::string encode_provenance(const Provenance& p) {
  std::string out(to_string(p.origin));
  for (const auto& id : p.parent_ids) {
    if (id.empty() || id.find_first_of(" \t\n") != std::string::npos) {
      throw Error(ErrorCode::invalid_operation, "parent id '" + id + "' is not serializable");
    }
    out += ' ';
    out += id;
  }
  return out;
}

Provenance decode_provenance(const std::string& v) {
  std::istringstream in(v);
  std::string origin;
  in >> origin;
  Provenance p;
  p.origin = origin_from_string(origin);
  for (std::string id; in >> id;) p.parent_ids.push_back(id);
  return p;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::string to_skill_markdown(const Skill& skill) {
  std::ostringstream out;
  out << kFence << '\n';
  out << "id: " << encode_value(skill.id) << '\n';
  out << "title: " << encode_value(skill.title) << '\n';
  out << "granularity: " << to_label(skill.granularity) << '\n';
  out << "when_to_apply: " << encode_value(skill.when_to_apply) << '\n';
  out << "benchmark_scope: " << encode_value(skill.benchmark_scope) << '\n';
  out << "provenance: " << encode_provenance(skill.provenance) << '\n';
  if (skill.source_instance) out << "source_instance: " << encode_value(*skill.source_instance) << '\n';
  out << kFence << "\n\n";
  out << "# " << canonicalize_whitespace(skill.title) << "\n\n";
  out << "## When to Apply\n\n" << skill.when_to_apply << "\n\n";
  out << kInstructions << "\n\n";
  for (const auto& rule : skill.rules) {
    // Continuation lines of a multi-line rule are indented by two spaces.
    std::istringstream in(rule);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      out << (first ? "- " : "  ") << line << '\n';
      first = false;
    }
    if (first) out << "- \n";
    if (!rule.empty() && rule.back() == '\n') out << "  \n";
  }
  return out.str();
}

Skill parse_skill_markdown(const std::string& text) {
  const auto lines = split_lines(text);
  std::size_t i = 0;
  while (i < lines.size() && lines[i].empty()) ++i;
  if (i >= lines.size() || lines[i] != kFence) {
    throw Error(ErrorCode::invalid_operation, "skill file must start with a front-matter block");
  }
  ++i;
  Skill s;
  bool have_id = false, have_title = false, have_gran = false, have_when = false, have_prov = false;
  for (; i < lines.size() && lines[i] != kFence; ++i) {
    const auto& line = lines[i];
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw Error(ErrorCode::invalid_operation, "bad front-matter line: " + line);
    const std::string key = line.substr(0, colon);
    std::string value = line.substr(colon + 1);
    if (!value.empty() && value.front() == ' ') value.erase(0, 1);
    if (key == "id") {
      s.id = decode_value(value);
      have_id = true;
    } else if (key == "title") {
      s.title = decode_value(value);
      have_title = true;
    } else if (key == "granularity") {
      s.granularity = granularity_from_label(value);
      have_gran = true;
    } else if (key == "when_to_apply") {
      s.when_to_apply = decode_value(value);
      have_when = true;
    } else if (key == "benchmark_scope") {
      s.benchmark_scope = decode_value(value);
    } else if (key == "provenance") {
      s.provenance = decode_provenance(value);
      have_prov = true;
    } else if (key == "source_instance") {
      s.source_instance = decode_value(value);
    } else {
      throw Error(ErrorCode::invalid_operation, "unknown front-matter key '" + key + "'");
    }
  }
  if (i >= lines.size()) throw Error(ErrorCode::invalid_operation, "unterminated front-matter block");
  if (!(have_id && have_title && have_gran && have_when && have_prov)) {
    throw Error(ErrorCode::invalid_operation, "front-matter is missing a required key");
  }
  // The last heading wins: the human-readable sections above it may echo arbitrary text.
  std::size_t heading = lines.size();
  for (std::size_t k = i + 1; k < lines.size(); ++k) {
    if (lines[k] == kInstructions) heading = k;
  }
  if (heading == lines.size()) throw Error(ErrorCode::invalid_operation, "missing '## Instructions' section");
  i = heading + 1;
  for (; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.rfind("- ", 0) == 0) {
      s.rules.push_back(line.substr(2));
    } else if (line == "-") {
      s.rules.emplace_back();
    } else if (line.rfind("  ", 0) == 0 && !s.rules.empty()) {
      s.rules.back() += '\n';
      s.rules.back() += line.substr(2);
    } else if (line.rfind("#", 0) == 0) {
      break;
    }
  }
  if (!s.valid()) throw Error(ErrorCode::invalid_operation, "skill file violates skill invariants");
  return s;
}

Skill read_skill_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io_error, "cannot read skill file " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_skill_markdown(buf.str());
}

void write_skill_file(const std::filesystem::path& path, const Skill& skill) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::io_error, "cannot write skill file " + path.string());
  f << to_skill_markdown(skill);
}

void write_skill_directory(const std::filesystem::path& dir, const std::vector<Skill>& skills) {
  std::filesystem::create_directories(dir);
  for (const auto& s : skills) write_skill_file(dir / (s.id + ".md"), s);
}

}  // namespace skillbank
