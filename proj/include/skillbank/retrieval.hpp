#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "skillbank/skill.hpp"
#include "skillbank/trajectory.hpp"

namespace skillbank {

using Vector = std::vector<double>;

// Turns text into a fixed-length vector. Implementations may return any
// scale; the index normalizes. Errors surface as Error{embedder_failure}.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Vector embed(std::string_view text) = 0;
  virtual std::size_t dimension() const = 0;
  // Changes whenever the mapping from text to vector changes; keys the index cache.
  virtual std::string version() const = 0;
};

// Feature hashing of lowercased alphanumeric tokens into `dims` buckets, L2-normalized.
// Empty or token-free text maps to the zero vector.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dims = 256) : dims_(dims) {}
  Vector embed(std::string_view text) override;
  std::size_t dimension() const override { return dims_; }
  std::string version() const override;

 private:
  std::size_t dims_;
};

std::vector<std::string> tokenize(std::string_view text);

// Memoizes another embedder by exact text. Thread-safe.
class CachingEmbedder final : public Embedder {
 public:
  explicit CachingEmbedder(std::shared_ptr<Embedder> inner) : inner_(std::move(inner)) {}
  Vector embed(std::string_view text) override;
  std::size_t dimension() const override { return inner_->dimension(); }
  std::string version() const override { return inner_->version(); }
  std::size_t calls_forwarded() const;

 private:
  std::shared_ptr<Embedder> inner_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, Vector> memo_;
  std::size_t forwarded_ = 0;
};

// Scales to unit length; the zero vector stays zero.
Vector l2_normalize(Vector v);
bool is_zero(const Vector& v);
double dot(const Vector& a, const Vector& b);
// Cosine of two arbitrary vectors; 0 when either is zero.
double cosine(const Vector& a, const Vector& b);

struct RetrievalDoc {
  std::string skill_id;
  std::string text;
  Granularity granularity = Granularity::task_level;
  std::string benchmark_scope;
  std::optional<std::string> source_instance;
};

RetrievalDoc make_doc(const Skill& skill);

enum class QueryKind { task_goal, execution_event };

struct Query {
  QueryKind kind = QueryKind::task_goal;
  std::string text;
  std::string benchmark_scope;
  std::optional<std::string> exclude_instance;
};

Granularity granularity_for(QueryKind kind);

struct Hit {
  Skill skill;
  double score = 0.0;
};

struct PartitionKey {
  std::string benchmark_scope;
  Granularity granularity = Granularity::task_level;
  auto operator<=>(const PartitionKey&) const = default;
};

// Exact index partitioned by (benchmark_scope, granularity). Immutable after build.
class Index {
 public:
  struct Entry {
    Skill skill;
    Vector vector;  // unit length, or zero when the doc embeds to nothing
  };

  Index() = default;
  Index(std::map<PartitionKey, std::vector<Entry>> parts, std::string embedder_version)
      : parts_(std::move(parts)), embedder_version_(std::move(embedder_version)) {}

  std::size_t size() const;
  const std::map<PartitionKey, std::vector<Entry>>& partitions() const { return parts_; }
  const std::string& embedder_version() const { return embedder_version_; }

 private:
  std::map<PartitionKey, std::vector<Entry>> parts_;
  std::string embedder_version_;
};

Index index_build(std::span<const Skill> skills, Embedder& embedder);

// Reuses vectors from `cached` (skill id -> vector) when present.
Index index_build(std::span<const Skill> skills, Embedder& embedder,
                  const std::map<std::string, Vector>& cached);

// k >= 1. Ranking is (score desc, skill id asc); zero-vector queries and docs never match.
std::vector<Hit> retrieve(const Index& index, const Query& q, std::size_t k, Embedder& embedder);

// Samples uniformly among the top min(K, |pool|) instances by cosine between
// the skill's document and each goal text. Throws Error{empty_pool}.
TaskInstance reverse_retrieve(const Skill& skill, std::span<const TaskInstance> task_pool, std::size_t K,
                              std::uint64_t rng_seed, Embedder& embedder);

// Ranked pool as used by reverse_retrieve; ties by instance id.
std::vector<std::pair<TaskInstance, double>> rank_pool(const Skill& skill, std::span<const TaskInstance> task_pool,
                                                       Embedder& embedder);

// Index cache: one JSON file per partition, {"embedder_version", "benchmark_scope",
// "granularity", "entries": [{"skill_id", "vector"}]}.
std::filesystem::path cache_path(const std::filesystem::path& dir, const PartitionKey& key);
void write_index_cache(const std::filesystem::path& dir, const Index& index);
// Returns skill id -> vector for partitions whose version matches; stale files are ignored.
std::map<std::string, Vector> read_index_cache(const std::filesystem::path& dir, const std::string& embedder_version);

}  // namespace skillbank
