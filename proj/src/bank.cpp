#include "skillbank/bank.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include "skillbank/error.hpp"
#include "skillbank/hash.hpp"

namespace skillbank {

namespace {

nlohmann::json optional_json(const std::optional<std::string>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<std::string> optional_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

nlohmann::json digest_payload(const LedgerEntry& e) {
  nlohmann::json j = e;
  j.erase("timestamp_ms");
  j.erase("digest");
  return j;
}

void require_candidate_identity(const Skill& c) {
  if (!c.valid()) throw Error(ErrorCode::invalid_operation, "candidate skill violates skill invariants");
  if (c.id != content_id(c.draft(), c.provenance.parent_ids)) {
    throw Error(ErrorCode::invalid_operation, "candidate id " + c.id + " does not match its content");
  }
}

}  // namespace

std::string LedgerEntry::compute_digest() const { return sha256_hex(digest_payload(*this).dump()); }

bool LedgerEntry::same_content(const LedgerEntry& other) const {
  nlohmann::json a = *this;
  nlohmann::json b = other;
  a.erase("timestamp_ms");
  b.erase("timestamp_ms");
  return a == b;
}

void to_json(nlohmann::json& j, const LedgerEntry& e) {
  j = nlohmann::json{{"sequence_no", e.sequence_no},
                     {"operation", e.operation},
                     {"candidate", e.candidate ? nlohmann::json(*e.candidate) : nlohmann::json(nullptr)},
                     {"segment", e.segment},
                     {"instance_id", optional_json(e.instance_id)},
                     {"deferred", e.deferred},
                     {"pre_revision", e.pre_revision},
                     {"post_revision", e.post_revision},
                     {"result_skill_id", optional_json(e.result_skill_id)},
                     {"template_version", e.template_version},
                     {"timestamp_ms", e.timestamp_ms},
                     {"prev_digest", e.prev_digest},
                     {"digest", e.digest}};
}

void from_json(const nlohmann::json& j, LedgerEntry& e) {
  e.sequence_no = j.at("sequence_no").get<std::uint64_t>();
  e.operation = j.at("operation").get<Operation>();
  if (auto it = j.find("candidate"); it != j.end() && !it->is_null()) {
    e.candidate = it->get<Skill>();
  } else {
    e.candidate.reset();
  }
  e.segment = j.value("segment", std::string{});
  e.instance_id = optional_string(j, "instance_id");
  e.deferred = j.value("deferred", false);
  e.pre_revision = j.at("pre_revision").get<std::uint64_t>();
  e.post_revision = j.at("post_revision").get<std::uint64_t>();
  e.result_skill_id = optional_string(j, "result_skill_id");
  e.template_version = j.value("template_version", std::string{});
  e.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
  e.prev_digest = j.value("prev_digest", std::string{});
  e.digest = j.value("digest", std::string{});
}

LedgerClock wall_clock() {
  return [](std::uint64_t) {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  };
}

LedgerClock logical_clock() {
  return [](std::uint64_t seq) { return static_cast<std::int64_t>(seq); };
}

const Skill* SkillBank::find(const std::string& id) const {
  auto it = skills_.find(id);
  return it == skills_.end() ? nullptr : &it->second;
}

std::vector<Skill> SkillBank::list() const {
  std::vector<Skill> out;
  out.reserve(skills_.size());
  for (const auto& [id, s] : skills_) out.push_back(s);
  return out;
}

const LedgerEntry& SkillBank::apply(const Operation& op, const ApplyContext& ctx) {
  if (!op.well_formed()) {
    throw Error(ErrorCode::invalid_operation,
                "content does not match action " + std::string(to_string(op.action)));
  }

  LedgerEntry entry;
  entry.sequence_no = ledger_.size() + 1;
  entry.operation = op;
  entry.segment = ctx.segment;
  entry.instance_id = ctx.instance_id;
  entry.pre_revision = revision_;
  entry.prev_digest = ledger_.empty() ? std::string{} : ledger_.back().digest;

  // Mutations are staged and committed only after every check passes.
  std::optional<std::string> erase_id;
  std::optional<Skill> insert;

  switch (op.action) {
    case Action::generate_task_level:
    case Action::generate_event_driven: {
      const auto& draft = std::get<GenerateContent>(op.content).draft;
      const Origin origin = op.action == Action::generate_task_level ? Origin::extracted_task_level
                                                                     : Origin::extracted_event_driven;
      Skill candidate = make_skill(draft, Provenance{origin, {}}, ctx.segment, ctx.instance_id);
      if (!candidate.valid()) throw Error(ErrorCode::invalid_operation, "generated draft violates skill invariants");
      entry.candidate = std::move(candidate);
      break;
    }
    case Action::skip:
      break;
    case Action::drop:
      if (ctx.candidate) entry.candidate = ctx.candidate;
      break;
    case Action::add: {
      if (!ctx.candidate) throw Error(ErrorCode::invalid_operation, "add requires a pending candidate");
      require_candidate_identity(*ctx.candidate);
      if (skills_.count(ctx.candidate->id)) {
        throw Error(ErrorCode::invalid_operation, "skill id " + ctx.candidate->id + " already in bank");
      }
      entry.candidate = ctx.candidate;
      insert = *ctx.candidate;
      break;
    }
    case Action::merge: {
      const auto& m = std::get<MergeContent>(op.content);
      const Skill* target = find(m.merge_target_skill_id);
      if (!target) throw Error(ErrorCode::unknown_target, "merge target " + m.merge_target_skill_id + " not in bank");
      if (!ctx.candidate) throw Error(ErrorCode::invalid_operation, "merge requires a pending candidate");
      require_candidate_identity(*ctx.candidate);
      Skill merged = make_skill(m.draft, Provenance{Origin::merged, {ctx.candidate->id, target->id}},
                                target->benchmark_scope, ctx.candidate->source_instance);
      if (!merged.valid()) throw Error(ErrorCode::invalid_operation, "merged draft violates skill invariants");
      if (skills_.count(merged.id)) {
        throw Error(ErrorCode::invalid_operation, "merged skill id " + merged.id + " already in bank");
      }
      entry.candidate = ctx.candidate;
      erase_id = target->id;
      insert = std::move(merged);
      break;
    }
    case Action::evolve: {
      const auto& ev = std::get<EvolveContent>(op.content);
      const Skill* target = find(ev.target_skill_id);
      if (!target) throw Error(ErrorCode::unknown_target, "evolve target " + ev.target_skill_id + " not in bank");
      if (ctx.defer_evolve) {
        Skill candidate = make_skill(ev.draft, Provenance{Origin::evolved, {target->id}}, target->benchmark_scope,
                                     target->source_instance);
        if (!candidate.valid()) throw Error(ErrorCode::invalid_operation, "evolved draft violates skill invariants");
        entry.candidate = std::move(candidate);
        entry.deferred = true;
      } else {
        Skill revised = *target;
        revised.title = ev.draft.title;
        revised.granularity = ev.draft.granularity;
        revised.when_to_apply = ev.draft.when_to_apply;
        revised.rules = ev.draft.rules;
        revised.provenance = Provenance{Origin::evolved, {target->id}};
        if (!revised.valid()) throw Error(ErrorCode::invalid_operation, "evolved draft violates skill invariants");
        erase_id = target->id;
        insert = std::move(revised);
      }
      break;
    }
  }

  if (erase_id) skills_.erase(*erase_id);
  if (insert) {
    entry.result_skill_id = insert->id;
    skills_.emplace(insert->id, std::move(*insert));
    ++revision_;
  }
  entry.post_revision = revision_;
  entry.timestamp_ms = clock_ ? clock_(entry.sequence_no) : 0;
  entry.digest = entry.compute_digest();
  ledger_.push_back(std::move(entry));
  return ledger_.back();
}

namespace {

// Replays `entries`; on failure fills `report` and returns the bank so far.
SkillBank replay_checked(std::span<const LedgerEntry> entries, VerifyReport* report) {
  SkillBank bank(logical_clock());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const LedgerEntry& e = entries[i];
    const std::uint64_t expected = i + 1;
    auto fail = [&](ErrorCode code, const std::string& msg) {
      if (!report) throw Error(code, "sequence_no " + std::to_string(e.sequence_no) + ": " + msg);
      report->ok = false;
      report->failing_sequence_no = e.sequence_no;
      report->message = std::string(to_string(code)) + ": " + msg;
    };
    if (e.sequence_no != expected) {
      fail(ErrorCode::sequence_gap, "expected sequence_no " + std::to_string(expected));
      if (report) report->failing_sequence_no = expected;
      return bank;
    }
    if (e.digest != e.compute_digest()) {
      fail(ErrorCode::ledger_tampered, "entry digest does not match its content");
      return bank;
    }
    ApplyContext ctx;
    ctx.segment = e.segment;
    ctx.instance_id = e.instance_id;
    ctx.defer_evolve = e.deferred;
    const Action a = e.operation.action;
    if (a == Action::add || a == Action::merge || a == Action::drop) ctx.candidate = e.candidate;
    try {
      const LedgerEntry& produced = bank.apply(e.operation, ctx);
      if (!produced.same_content(e)) {
        fail(ErrorCode::ledger_tampered, "recorded entry differs from its replay");
        return bank;
      }
    } catch (const Error& err) {
      if (!report) throw;
      fail(err.code(), err.what());
      return bank;
    }
  }
  return bank;
}

}  // namespace

SkillBank replay(std::span<const LedgerEntry> entries) { return replay_checked(entries, nullptr); }

VerifyReport verify_ledger(std::span<const LedgerEntry> entries) {
  VerifyReport report;
  replay_checked(entries, &report);
  return report;
}

MaintenanceStats bank_stats(std::span<const LedgerEntry> entries) {
  MaintenanceStats stats;
  std::size_t size = stats.initial_size;
  std::size_t cum_add = 0, cum_merge = 0, cum_drop = 0;
  for (const auto& e : entries) {
    const Action a = e.operation.action;
    const bool produced_candidate =
        a == Action::generate_task_level || a == Action::generate_event_driven || (a == Action::evolve && e.deferred);
    if (produced_candidate) {
      std::string key = e.instance_id.value_or(e.candidate && e.candidate->source_instance
                                                   ? *e.candidate->source_instance
                                                   : std::string{});
      ++stats.candidates_per_instance[key];
    }
    if (a != Action::add && a != Action::merge && a != Action::drop) continue;
    auto& seg = stats.per_segment[e.segment];
    if (std::find(stats.segment_order.begin(), stats.segment_order.end(), e.segment) == stats.segment_order.end()) {
      stats.segment_order.push_back(e.segment);
    }
    if (a == Action::add) {
      ++cum_add;
      ++seg.add;
      ++size;
    } else if (a == Action::merge) {
      ++cum_merge;
      ++seg.merge;
    } else {
      ++cum_drop;
      ++seg.drop;
    }
    stats.series.push_back(StatsPoint{e.segment, stats.series.size() + 1, a, cum_add, cum_merge, cum_drop, size});
  }
  return stats;
}

std::string stats_csv(const MaintenanceStats& stats) {
  std::ostringstream out;
  out << "segment,step,cum_add,cum_merge,cum_drop,bank_size\n";
  for (const auto& p : stats.series) {
    out << p.segment << ',' << p.step << ',' << p.cum_add << ',' << p.cum_merge << ',' << p.cum_drop << ','
        << p.bank_size << '\n';
  }
  return out.str();
}

std::string ledger_to_jsonl(std::span<const LedgerEntry> entries) {
  std::string out;
  for (const auto& e : entries) {
    out += nlohmann::json(e).dump();
    out += '\n';
  }
  return out;
}

void append_ledger_file(const std::string& path, std::span<const LedgerEntry> entries) {
  std::ofstream f(path, std::ios::binary | std::ios::app);
  if (!f) throw Error(ErrorCode::io_error, "cannot open ledger " + path);
  f << ledger_to_jsonl(entries);
  if (!f) throw Error(ErrorCode::io_error, "write failed for ledger " + path);
}

void write_ledger_file(const std::string& path, std::span<const LedgerEntry> entries) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::io_error, "cannot open ledger " + path);
  f << ledger_to_jsonl(entries);
  if (!f) throw Error(ErrorCode::io_error, "write failed for ledger " + path);
}

std::vector<LedgerEntry> parse_ledger_jsonl(const std::string& text) {
  std::vector<LedgerEntry> entries;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::uint64_t expected = entries.size() + 1;
    try {
      entries.push_back(nlohmann::json::parse(line).get<LedgerEntry>());
    } catch (const Error&) {
      throw Error(ErrorCode::ledger_tampered, "sequence_no " + std::to_string(expected) + ": invalid entry");
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::ledger_tampered,
                  "sequence_no " + std::to_string(expected) + ": unparseable entry (" + ex.what() + ")");
    }
  }
  return entries;
}

std::vector<LedgerEntry> read_ledger_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io_error, "cannot read ledger " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_ledger_jsonl(buf.str());
}

}  // namespace skillbank
