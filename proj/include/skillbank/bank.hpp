#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillbank/operation.hpp"
#include "skillbank/skill.hpp"

namespace skillbank {

// Bumped whenever a prompt or judge template changes; stamped on ledger entries.
inline constexpr const char* kTemplateVersion = "tmpl-v1";

struct LedgerEntry {
  std::uint64_t sequence_no = 0;
  Operation operation;
  // generate / deferred evolve: the candidate produced.
  // add / merge / drop: the candidate under maintenance.
  std::optional<Skill> candidate;
  std::string segment;
  std::optional<std::string> instance_id;
  bool deferred = false;  // evolve routed through maintenance instead of applied in place
  std::uint64_t pre_revision = 0;
  std::uint64_t post_revision = 0;
  std::optional<std::string> result_skill_id;
  std::string template_version = kTemplateVersion;
  std::int64_t timestamp_ms = 0;  // informational, excluded from equality and digests
  std::string prev_digest;
  std::string digest;

  bool mutating() const { return post_revision != pre_revision; }

  // Digest over every field except timestamp_ms and digest itself.
  std::string compute_digest() const;

  // Field-for-field equality ignoring timestamp_ms.
  bool same_content(const LedgerEntry& other) const;
};

void to_json(nlohmann::json& j, const LedgerEntry& e);
void from_json(const nlohmann::json& j, LedgerEntry& e);

struct ApplyContext {
  std::optional<Skill> candidate;
  std::string segment;
  std::optional<std::string> instance_id;
  bool defer_evolve = false;
};

// Returns a timestamp for the entry with the given sequence number.
using LedgerClock = std::function<std::int64_t(std::uint64_t sequence_no)>;

LedgerClock wall_clock();
LedgerClock logical_clock();  // timestamp == sequence_no

// The skill set plus its append-only operation ledger. Single writer.
class SkillBank {
 public:
  SkillBank() = default;
  explicit SkillBank(LedgerClock clock) : clock_(std::move(clock)) {}

  // Applies `op`, appends and returns the ledger entry.
  // generate records a candidate only; add/merge insert; evolve replaces in place
  // unless ctx.defer_evolve; skip/drop leave skills unchanged.
  // Throws Error{unknown_target} or Error{invalid_operation}; the bank is untouched on throw.
  const LedgerEntry& apply(const Operation& op, const ApplyContext& ctx = {});

  std::size_t size() const { return skills_.size(); }
  std::uint64_t revision() const { return revision_; }
  bool empty() const { return skills_.empty(); }

  const Skill* find(const std::string& id) const;
  const std::map<std::string, Skill>& skills() const { return skills_; }
  std::vector<Skill> list() const;
  const std::vector<LedgerEntry>& ledger() const { return ledger_; }

  // Equal skills and revision; ledgers are not compared.
  bool same_skills(const SkillBank& other) const {
    return revision_ == other.revision_ && skills_ == other.skills_;
  }

 private:
  std::map<std::string, Skill> skills_;
  std::uint64_t revision_ = 0;
  std::vector<LedgerEntry> ledger_;
  LedgerClock clock_ = wall_clock();
};

// Rebuilds the bank from an empty start. Each entry is re-applied and checked
// against what it records. Throws Error{sequence_gap}, Error{ledger_tampered},
// or the apply errors.
SkillBank replay(std::span<const LedgerEntry> entries);

struct VerifyReport {
  bool ok = true;
  std::optional<std::uint64_t> failing_sequence_no;
  std::string message;
};

// Checks sequence continuity, the digest chain, and replay consistency.
VerifyReport verify_ledger(std::span<const LedgerEntry> entries);

struct SegmentCounts {
  std::size_t add = 0;
  std::size_t merge = 0;
  std::size_t drop = 0;
  friend bool operator==(const SegmentCounts&, const SegmentCounts&) = default;
};

// One point per maintenance decision (add, merge, drop).
struct StatsPoint {
  std::string segment;
  std::size_t step = 0;
  Action decision = Action::add;
  std::size_t cum_add = 0;
  std::size_t cum_merge = 0;
  std::size_t cum_drop = 0;
  std::size_t bank_size = 0;
  friend bool operator==(const StatsPoint&, const StatsPoint&) = default;
};

struct MaintenanceStats {
  std::size_t initial_size = 0;
  std::vector<StatsPoint> series;
  std::vector<std::string> segment_order;
  std::map<std::string, SegmentCounts> per_segment;
  std::map<std::string, std::size_t> candidates_per_instance;
  friend bool operator==(const MaintenanceStats&, const MaintenanceStats&) = default;
};

MaintenanceStats bank_stats(std::span<const LedgerEntry> entries);

// CSV with header: segment,step,cum_add,cum_merge,cum_drop,bank_size
std::string stats_csv(const MaintenanceStats& stats);

// Line-delimited JSON, one entry per line.
std::string ledger_to_jsonl(std::span<const LedgerEntry> entries);
void append_ledger_file(const std::string& path, std::span<const LedgerEntry> entries);
void write_ledger_file(const std::string& path, std::span<const LedgerEntry> entries);

// Unparseable lines raise Error{ledger_tampered} naming the expected sequence_no.
std::vector<LedgerEntry> read_ledger_file(const std::string& path);
std::vector<LedgerEntry> parse_ledger_jsonl(const std::string& text);

}  // namespace skillbank
