#include "skillbank/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "skillbank/error.hpp"
#include "skillbank/hash.hpp"

namespace skillbank {

namespace {

Vector checked(Vector v, const Embedder& e) {
  if (v.size() != e.dimension())
    throw Error(ErrorCode::embedder_failure, "embedder " + e.version() + " returned " + std::to_string(v.size()) +
                                                 " values, expected " + std::to_string(e.dimension()));
  for (double x : v)
    if (!std::isfinite(x)) throw Error(ErrorCode::embedder_failure, "embedder " + e.version() + " returned non-finite value");
  return v;
}

Vector embed_unit(Embedder& e, std::string_view text) { return l2_normalize(checked(e.embed(text), e)); }

// Scores are snapped to a 1e-12 grid so mathematically equal cosines computed
// along different float paths still tie and fall through to the id order.
double snap(double score) { return std::round(score * 1e12) / 1e12; }

bool ranks_before(double sa, const std::string& ia, double sb, const std::string& ib) {
  if (sa != sb) return sa > sb;
  return ia < ib;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vector HashingEmbedder::embed(std::string_view text) {
  Vector v(dims_, 0.0);
  for (const auto& tok : tokenize(text)) v[fnv1a64(tok) % dims_] += 1.0;
  return l2_normalize(std::move(v));
}

std::string HashingEmbedder::version() const { return "hash-fnv1a-" + std::to_string(dims_) + "-v1"; }

Vector CachingEmbedder::embed(std::string_view text) {
  {
    std::lock_guard lock(mu_);
    if (auto it = memo_.find(std::string(text)); it != memo_.end()) return it->second;
  }
  auto v = inner_->embed(text);
  std::lock_guard lock(mu_);
  ++forwarded_;
  return memo_.emplace(std::string(text), std::move(v)).first->second;
}

std::size_t CachingEmbedder::calls_forwarded() const {
  std::lock_guard lock(mu_);
  return forwarded_;
}

Vector l2_normalize(Vector v) {
  double n = std::sqrt(dot(v, v));
  if (n == 0.0) return v;
  for (auto& x : v) x /= n;
  return v;
}

bool is_zero(const Vector& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double cosine(const Vector& a, const Vector& b) {
  double na = std::sqrt(dot(a, a));
  double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

RetrievalDoc make_doc(const Skill& skill) {
  return {skill.id, retrieval_text(skill), skill.granularity, skill.benchmark_scope, skill.source_instance};
}

Granularity granularity_for(QueryKind kind) {
  return kind == QueryKind::task_goal ? Granularity::task_level : Granularity::event_driven;
}

std::size_t Index::size() const {
  std::size_t n = 0;
  for (const auto& [_, entries] : parts_) n += entries.size();
  return n;
}

Index index_build(std::span<const Skill> skills, Embedder& embedder) { return index_build(skills, embedder, {}); }

Index index_build(std::span<const Skill> skills, Embedder& embedder, const std::map<std::string, Vector>& cached) {
  std::map<PartitionKey, std::vector<Index::Entry>> parts;
  for (const auto& s : skills) {
    Vector v;
    if (auto it = cached.find(s.id); it != cached.end() && it->second.size() == embedder.dimension()) {
      v = l2_normalize(it->second);
    } else {
      v = embed_unit(embedder, make_doc(s).text);
    }
    parts[{s.benchmark_scope, s.granularity}].push_back({s, std::move(v)});
  }
  for (auto& [_, entries] : parts)
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.skill.id < b.skill.id; });
  return Index(std::move(parts), embedder.version());
}

std::vector<Hit> retrieve(const Index& index, const Query& q, std::size_t k, Embedder& embedder) {
  std::vector<Hit> out;
  if (k == 0) return out;
  auto it = index.partitions().find({q.benchmark_scope, granularity_for(q.kind)});
  if (it == index.partitions().end()) return out;
  auto qv = embed_unit(embedder, q.text);
  if (is_zero(qv)) return out;

  std::vector<std::pair<double, const Index::Entry*>> scored;
  for (const auto& e : it->second) {
    if (q.exclude_instance && e.skill.source_instance == q.exclude_instance) continue;
    if (is_zero(e.vector)) continue;
    scored.emplace_back(snap(dot(qv, e.vector)), &e);
  }
  auto cmp = [](const auto& a, const auto& b) {
    return ranks_before(a.first, a.second->skill.id, b.first, b.second->skill.id);
  };
  std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), cmp);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({scored[i].second->skill, scored[i].first});
  return out;
}

std::vector<std::pair<TaskInstance, double>> rank_pool(const Skill& skill, std::span<const TaskInstance> task_pool,
                                                       Embedder& embedder) {
  auto sv = embed_unit(embedder, make_doc(skill).text);
  std::vector<std::pair<TaskInstance, double>> ranked;
  ranked.reserve(task_pool.size());
  for (const auto& inst : task_pool) ranked.emplace_back(inst, snap(dot(sv, embed_unit(embedder, inst.goal_text))));
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return ranks_before(a.second, a.first.instance_id, b.second, b.first.instance_id);
  });
  return ranked;
}

TaskInstance reverse_retrieve(const Skill& skill, std::span<const TaskInstance> task_pool, std::size_t K,
                              std::uint64_t rng_seed, Embedder& embedder) {
  if (task_pool.empty()) throw Error(ErrorCode::empty_pool, "reverse retrieval over an empty task pool");
  if (K == 0) throw Error(ErrorCode::invalid_config, "reverse retrieval needs K >= 1");
  auto ranked = rank_pool(skill, task_pool, embedder);
  std::size_t n = std::min(K, ranked.size());
  return ranked[splitmix64(rng_seed) % n].first;
}

std::filesystem::path cache_path(const std::filesystem::path& dir, const PartitionKey& key) {
  return dir / (sha256_hex(key.benchmark_scope).substr(0, 12) + "." + std::string(to_label(key.granularity)) +
                ".index.json");
}

void write_index_cache(const std::filesystem::path& dir, const Index& index) {
  std::filesystem::create_directories(dir);
  for (const auto& [key, entries] : index.partitions()) {
    nlohmann::json j{{"embedder_version", index.embedder_version()},
                     {"benchmark_scope", key.benchmark_scope},
                     {"granularity", to_label(key.granularity)},
                     {"entries", nlohmann::json::array()}};
    for (const auto& e : entries) j["entries"].push_back({{"skill_id", e.skill.id}, {"vector", e.vector}});
    std::ofstream out(cache_path(dir, key));
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + cache_path(dir, key).string());
    out << j.dump() << "\n";
  }
}

std::map<std::string, Vector> read_index_cache(const std::filesystem::path& dir, const std::string& embedder_version) {
  std::map<std::string, Vector> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto name = entry.path().filename().string();
    if (name.size() < 11 || name.substr(name.size() - 11) != ".index.json") continue;
    std::ifstream in(entry.path());
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || j.value("embedder_version", "") != embedder_version) continue;
    for (const auto& e : j.value("entries", nlohmann::json::array()))
      out[e.at("skill_id").get<std::string>()] = e.at("vector").get<Vector>();
  }
  return out;
}

}  // namespace skillbank
