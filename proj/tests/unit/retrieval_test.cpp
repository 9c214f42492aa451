#include <gtest/gtest.h>

#include <cmath>

#include "skillbank/error.hpp"
#include "skillbank/retrieval.hpp"
#include "support.hpp"

using namespace skillbank;
using namespace skillbank::testing;

namespace {

Skill skill(const std::string& title, const std::string& scope, Granularity g, const std::string& src) {
  return make_skill(SkillDraft{title, g, "When " + title, {"Rule about " + title}},
                    Provenance{g == Granularity::task_level ? Origin::extracted_task_level
                                                            : Origin::extracted_event_driven,
                               {}},
                    scope, src);
}

class CountingEmbedder final : public Embedder {
 public:
  Vector embed(std::string_view text) override {
    ++calls;
    return inner.embed(text);
  }
  std::size_t dimension() const override { return inner.dimension(); }
  std::string version() const override { return inner.version(); }
  HashingEmbedder inner;
  std::size_t calls = 0;
};

class BrokenEmbedder final : public Embedder {
 public:
  Vector embed(std::string_view) override { return {std::nan(""), 0.0}; }
  std::size_t dimension() const override { return 2; }
  std::string version() const override { return "broken"; }
};

}  // namespace

TEST(Embedding, HashingIsUnitLengthAndTokenized) {
  HashingEmbedder e;
  auto v = e.embed("Run the FAILING test, then rerun!");
  double n = 0.0;
  for (double x : v) n += x * x;
  EXPECT_NEAR(n, 1.0, 1e-12);
  EXPECT_TRUE(is_zero(e.embed("  ,,, ")));
  EXPECT_EQ(tokenize("Run the FAILING test"), (std::vector<std::string>{"run", "the", "failing", "test"}));
  EXPECT_NEAR(cosine(e.embed("alpha beta"), e.embed("beta alpha")), 1.0, 1e-12);
}

TEST(Embedding, CachingForwardsOnce) {
  auto inner = std::make_shared<HashingEmbedder>();
  CachingEmbedder c(inner);
  c.embed("x y");
  c.embed("x y");
  c.embed("z");
  EXPECT_EQ(c.calls_forwarded(), 2u);
}

TEST(Retrieve, ScopesGranularityAndExclusion) {
  std::vector<Skill> skills{skill("rerun failing test", "a", Granularity::event_driven, "i1"),
                            skill("rerun failing test quickly", "a", Granularity::event_driven, "i2"),
                            skill("rerun failing test", "b", Granularity::event_driven, "i3"),
                            skill("rerun failing test plan", "a", Granularity::task_level, "i4")};
  HashingEmbedder e;
  auto index = index_build(skills, e);
  EXPECT_EQ(index.size(), 4u);
  auto hits = retrieve(index, Query{QueryKind::execution_event, "failing test", "a", std::string("i1")}, 5, e);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].skill.source_instance, "i2");
  EXPECT_TRUE(retrieve(index, Query{QueryKind::task_goal, "failing", "c", std::nullopt}, 5, e).empty());
  EXPECT_TRUE(retrieve(index, Query{QueryKind::task_goal, "failing", "a", std::nullopt}, 0, e).empty());
  EXPECT_TRUE(retrieve(index, Query{QueryKind::task_goal, "!!!", "a", std::nullopt}, 3, e).empty());
}

TEST(Retrieve, EmbedderFailureIsReported) {
  BrokenEmbedder b;
  std::vector<Skill> skills{skill("x", "a", Granularity::task_level, "i")};
  try {
    index_build(skills, b);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::embedder_failure);
  }
}

TEST(Retrieve, IndexCacheSkipsReembedding) {
  std::vector<Skill> skills{skill("alpha", "a", Granularity::task_level, "i1"),
                            skill("beta", "a", Granularity::event_driven, "i2"),
                            skill("gamma", "b", Granularity::task_level, "i3")};
  CountingEmbedder e;
  auto index = index_build(skills, e);
  EXPECT_EQ(e.calls, 3u);
  auto dir = fresh_dir("index-cache");
  write_index_cache(dir, index);
  EXPECT_TRUE(std::filesystem::exists(cache_path(dir, {"a", Granularity::task_level})));
  auto cached = read_index_cache(dir, e.version());
  EXPECT_EQ(cached.size(), 3u);
  EXPECT_TRUE(read_index_cache(dir, "other-version").empty());
  auto again = index_build(skills, e, cached);
  EXPECT_EQ(e.calls, 3u);
  auto h1 = retrieve(index, Query{QueryKind::task_goal, "alpha", "a", std::nullopt}, 1, e);
  auto h2 = retrieve(again, Query{QueryKind::task_goal, "alpha", "a", std::nullopt}, 1, e);
  ASSERT_EQ(h1.size(), 1u);
  EXPECT_EQ(h1[0].skill.id, h2[0].skill.id);
  EXPECT_EQ(h1[0].score, h2[0].score);
}

TEST(Reverse, PicksAmongTopKDeterministically) {
  HashingEmbedder e;
  std::vector<TaskInstance> pool;
  for (int i = 0; i < 10; ++i)
    pool.push_back({"t" + std::to_string(i), "a", "task " + std::to_string(i) + (i < 3 ? " parser crash" : " other"),
                    std::nullopt});
  auto s = skill("parser crash", "a", Granularity::task_level, "src");
  auto ranked = rank_pool(s, pool, e);
  std::set<std::string> top3;
  for (int i = 0; i < 3; ++i) top3.insert(ranked[i].first.instance_id);
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto pick = reverse_retrieve(s, pool, 3, seed, e);
    EXPECT_TRUE(top3.count(pick.instance_id));
    EXPECT_EQ(pick.instance_id, reverse_retrieve(s, pool, 3, seed, e).instance_id);
    seen.insert(pick.instance_id);
  }
  EXPECT_EQ(seen.size(), 3u);
  EXPECT_THROW(reverse_retrieve(s, {}, 3, 1, e), Error);
  EXPECT_THROW(reverse_retrieve(s, pool, 0, 1, e), Error);
  EXPECT_EQ(reverse_retrieve(s, std::span(pool.data(), 1), 3, 9, e).instance_id, "t0");
}
