#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "classlm/clustering.hpp"
#include "test_support.hpp"

namespace classlm {
namespace {

using testing::scratch_criterion;

// Contexts c1=(0), c2=(1); words a=0, b=1.
// N(c1,a)=2, N(c1,b)=1, N(c2,a)=1, N(c2,b)=2.
std::shared_ptr<const EventTable> two_context_table() {
  std::vector<EventTable::Event> ev{{{0}, 0, 2}, {{0}, 1, 1}, {{1}, 0, 1}, {{1}, 1, 2}};
  return std::make_shared<const EventTable>(EventTable::from_events(testing::word_slots(1, 2), 2, ev));
}

TEST(Criterion, HandComputedValues) {
  auto t = two_context_table();
  auto joint = Clustering::from_assignment(t, 2, 1, {0, 1}, {0, 0});
  EXPECT_NEAR(criterion(joint), -6 * std::log(6.0), 1e-12);
  EXPECT_NEAR(criterion(joint), -10.7506, 5e-5);
  auto split = Clustering::from_assignment(t, 2, 2, {0, 1}, {0, 1});
  EXPECT_NEAR(criterion(split), 4 * std::log(2.0) - 12 * std::log(3.0), 1e-12);
  // The published decimals are truncated, not rounded (-10.41076 and 0.33980).
  EXPECT_NEAR(criterion(split), -10.4107, 2e-4);
  auto one = Clustering::from_assignment(t, 1, 1, {0, 0}, {0, 0});
  EXPECT_NEAR(criterion(one), -6 * std::log(6.0), 1e-12);
}

TEST(Criterion, SingleClusterIsMinusNLogN) {
  std::mt19937_64 rng(1);
  auto t = testing::random_table(rng, 2, 8, 20, 60);
  auto cl = Clustering::from_assignment(t, 1, 1, std::vector<StateId>(t->num_contexts(), 0),
                                        std::vector<CategoryId>(t->vocab_size(), 0));
  const double n = double(t->total());
  EXPECT_NEAR(cl.criterion(), -n * std::log(n), 1e-9 * n * std::log(n));
}

TEST(Criterion, LikelihoodIdentityOnRandomInstances) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto t = testing::random_table(rng, 1 + trial % 3, 12, 30, 150);
    auto cl = testing::random_clustering(rng, t, 1 + trial % 5, 1 + trial % 4);
    const double ll = testing::direct_loglik(*t, cl.states(), cl.categories());
    const double lhs = cl.criterion() + testing::sum_word_nlogn(*t);
    EXPECT_NEAR(lhs, ll, 1e-9 * std::abs(ll));
  }
}

TEST(Delta, NoOpMoveIsExactlyZero) {
  auto t = two_context_table();
  auto cl = Clustering::from_assignment(t, 2, 2, {0, 1}, {0, 0});
  EXPECT_EQ(cl.delta_move_word(1, 0), 0.0);
  const ContextId c = 0;
  EXPECT_EQ(cl.delta_move_context_group(std::span(&c, 1), 0), 0.0);
}

TEST(Delta, SplittingTheJointCategory) {
  auto t = two_context_table();
  auto cl = Clustering::from_assignment(t, 2, 2, {0, 1}, {0, 0});
  const double d = cl.delta_move_word(1, 1);
  EXPECT_NEAR(d, (4 * std::log(2.0) - 12 * std::log(3.0)) - (-6 * std::log(6.0)), 1e-12);
  EXPECT_NEAR(d, 0.3399, 2e-4);
}

TEST(Delta, WordMovesMatchScratch) {
  std::mt19937_64 rng(3);
  auto t = testing::random_table(rng, 2, 20, 40, 300);
  auto cl = testing::random_clustering(rng, t, 5, 6);
  std::uniform_int_distribution<WordId> w(0, 19);
  std::uniform_int_distribution<CategoryId> g(0, 5);
  const double base = scratch_criterion(*t, cl.states(), cl.categories());
  for (int i = 0; i < 1000; ++i) {
    const auto word = w(rng);
    const auto target = g(rng);
    auto G = cl.categories();
    G[word] = target;
    const double expect = scratch_criterion(*t, cl.states(), G) - base;
    EXPECT_NEAR(cl.delta_move_word(word, target), expect, 1e-9 * std::max(1.0, std::abs(base)));
  }
}

TEST(Delta, GroupMovesMatchScratch) {
  std::mt19937_64 rng(4);
  auto t = testing::random_table(rng, 3, 6, 60, 400);
  auto tree = build_suffix_tree(*t);
  for (std::size_t level = 1; level <= 3; ++level) {
    // A state map that is coherent on this level's nodes.
    auto nodes = tree.nodes_at_level(level);
    std::uniform_int_distribution<StateId> s(0, 4);
    std::vector<StateId> S(t->num_contexts());
    for (const auto &n : nodes) {
      const auto st = s(rng);
      for (auto c : n.contexts) S[c] = st;
    }
    auto cl = Clustering::from_assignment(t, 5, 3, S, std::vector<CategoryId>(t->vocab_size(), 0));
    auto G = cl.categories();
    for (auto &g : G) g = CategoryId(rng() % 3);
    cl = Clustering::from_assignment(t, 5, 3, S, G);
    const double base = scratch_criterion(*t, S, G);
    std::uniform_int_distribution<std::size_t> pick(0, nodes.size() - 1);
    for (int i = 0; i < 1000; ++i) {
      const auto &n = nodes[pick(rng)];
      const auto target = s(rng);
      auto S2 = S;
      for (auto c : n.contexts) S2[c] = target;
      const double expect = scratch_criterion(*t, S2, G) - base;
      EXPECT_NEAR(cl.delta_move_context_group(n.contexts, target), expect, 1e-9 * std::max(1.0, std::abs(base)));
    }
  }
}

TEST(Delta, SingleLeafGroupEqualsContextMove) {
  std::mt19937_64 rng(5);
  auto t = testing::random_table(rng, 2, 10, 30, 200);
  auto cl = testing::random_clustering(rng, t, 4, 4);
  for (ContextId c = 0; c < t->num_contexts(); ++c) {
    std::vector<ContextId> one{c};
    auto S = cl.states();
    S[c] = (S[c] + 1) % 4;
    const double expect = scratch_criterion(*t, S, cl.categories()) - cl.criterion();
    EXPECT_NEAR(cl.delta_move_context_group(one, S[c]), expect, 1e-9 * std::abs(cl.criterion()));
  }
}

TEST(Delta, FragmentedNodeIsAContractViolation) {
  auto t = two_context_table();
  auto cl = Clustering::from_assignment(t, 2, 1, {0, 1}, {0, 0});
  std::vector<ContextId> both{0, 1};
  try {
    cl.delta_move_context_group(both, 1);
    FAIL();
  } catch (const Error &e) {
    EXPECT_STREQ(e.what(), "fragmented node");
  }
}

void expect_stats_match_recount(const Clustering &cl) {
  auto r = testing::recount(cl.table(), cl.states(), cl.categories());
  for (StateId s = 0; s < cl.num_states(); ++s) {
    EXPECT_EQ(cl.state_count(s), r.states[s]);
    for (CategoryId g = 0; g < cl.num_categories(); ++g) EXPECT_EQ(cl.joint(s, g), (r.joint[{s, g}]));
  }
  for (CategoryId g = 0; g < cl.num_categories(); ++g) EXPECT_EQ(cl.category_count(g), r.categories[g]);
  const double f = scratch_criterion(cl.table(), cl.states(), cl.categories());
  EXPECT_NEAR(cl.criterion(), f, 1e-9 * std::max(1.0, std::abs(f)));
}

TEST(ApplyMove, IncrementalEqualsRecountAndInverseRestores) {
  std::mt19937_64 rng(6);
  auto t = testing::random_table(rng, 2, 15, 40, 250);
  auto cl = testing::random_clustering(rng, t, 5, 5);
  auto tree = build_suffix_tree(*t);
  for (int i = 0; i < 300; ++i) {
    if (i % 2 == 0) {
      const WordId w = WordId(rng() % 15);
      const CategoryId target = CategoryId(rng() % 5);
      const auto before = cl;
      const auto source = cl.category_of(w);
      cl.apply({w, source, target, cl.delta_move_word(w, target)});
      expect_stats_match_recount(cl);
      cl.apply({w, target, source, cl.delta_move_word(w, source)});
      EXPECT_EQ(cl.categories(), before.categories());
      for (StateId s = 0; s < 5; ++s)
        for (CategoryId g = 0; g < 5; ++g) EXPECT_EQ(cl.joint(s, g), before.joint(s, g));
      EXPECT_NEAR(cl.criterion(), before.criterion(), 1e-9 * std::abs(before.criterion()));
      cl.apply({w, source, target, cl.delta_move_word(w, target)});
    } else {
      const ContextId c = ContextId(rng() % t->num_contexts());
      std::vector<ContextId> one{c};
      const StateId target = StateId(rng() % 5);
      cl.apply({ContextGroup{one}, cl.state_of(c), target, cl.delta_move_context_group(one, target)});
      expect_stats_match_recount(cl);
    }
  }
}

TEST(ApplyMove, EmptyingACategory) {
  auto t = two_context_table();
  auto cl = Clustering::from_assignment(t, 2, 2, {0, 1}, {0, 1});
  cl.apply({WordId{1}, 1, 0, cl.delta_move_word(1, 0)});
  EXPECT_EQ(cl.category_count(1), 0);
  EXPECT_NEAR(cl.criterion(), -6 * std::log(6.0), 1e-12);
  expect_stats_match_recount(cl);
}

TEST(Init, RankRule) {
  // Five words with frequencies 10, 8, 6, 4, 2 under one context.
  std::vector<EventTable::Event> ev{{{0}, 0, 10}, {{0}, 1, 8}, {{0}, 2, 6}, {{0}, 3, 4}, {{0}, 4, 2}};
  auto t = std::make_shared<const EventTable>(EventTable::from_events(testing::word_slots(1, 5), 5, ev));
  ClusterParams p;
  p.num_states = 1;
  p.num_categories = 3;
  auto cl = init_clustering(t, p);
  EXPECT_EQ(cl.categories(), (std::vector<CategoryId>{0, 1, 2, 2, 2}));
  p.num_categories = 5;
  auto id = init_clustering(t, p);
  EXPECT_EQ(id.categories(), (std::vector<CategoryId>{0, 1, 2, 3, 4}));
  p.num_categories = 6;
  EXPECT_THROW(init_clustering(t, p), Error);
  auto empty = std::make_shared<const EventTable>(EventTable::from_events(testing::word_slots(1, 5), 5, {}));
  p.num_categories = 2;
  EXPECT_THROW(init_clustering(empty, p), Error);
}

TEST(Init, StatisticsMatchRecount) {
  std::mt19937_64 rng(7);
  auto t = testing::random_table(rng, 2, 25, 50, 300);
  ClusterParams p;
  p.num_states = 8;
  p.num_categories = 6;
  auto cl = init_clustering(t, p);
  expect_stats_match_recount(cl);
  // More states than contexts leaves some states empty.
  p.num_states = t->num_contexts() + 5;
  expect_stats_match_recount(init_clustering(t, p));
}

TEST(Params, Validation) {
  ClusterParams p;
  EXPECT_NO_THROW(p.validate());
  p.conv_threshold = 1.0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.num_states = 0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.min_count = 0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(Convergence, StopsAtFirstSmallRelativeImprovement) {
  ConvergenceMonitor m(0.01, 20);
  EXPECT_TRUE(m.record(-100.0, -90.0));   // 10%
  EXPECT_TRUE(m.record(-90.0, -88.0));    // 2.2%
  EXPECT_FALSE(m.record(-88.0, -87.5));   // 0.57%
  EXPECT_EQ(m.iterations(), 3u);
  EXPECT_NEAR(m.last_relative_improvement(), 0.5 / 88.0, 1e-15);

  ConvergenceMonitor exact(0.01, 20);
  EXPECT_TRUE(exact.record(-100.0, -99.0)); // exactly 1% continues
  EXPECT_FALSE(exact.record(-99.0, -99.0));

  ConvergenceMonitor capped(0.01, 2);
  EXPECT_TRUE(capped.record(-100.0, -50.0));
  EXPECT_FALSE(capped.record(-50.0, -25.0));
}

/// Brute-force check of every decision: the chosen target must be the best strictly-improving
/// target by scratch recomputation (ties to the lowest id), or no move if none improves.
struct OracleChecker {
  const ContextTree *tree = nullptr;
  std::vector<ContextTree::Node> singles;
  std::size_t decisions = 0, moves = 0;
  double last_f = -INFINITY;

  void operator()(const Clustering &cl, const MoveDecision &d) {
    ++decisions;
    const auto &t = cl.table();
    const double base = scratch_criterion(t, cl.states(), cl.categories());
    EXPECT_NEAR(cl.criterion(), base, 1e-9 * std::abs(base));
    EXPECT_GE(cl.criterion(), last_f - 1e-9 * std::abs(base));
    last_f = cl.criterion();
    std::vector<double> gains;
    std::size_t targets = d.is_word ? cl.num_categories() : cl.num_states();
    std::span<const ContextId> group;
    if (!d.is_word) group = tree ? tree->nodes_at_level(d.level)[d.element].contexts : singles[d.element].contexts;
    if (d.is_word) EXPECT_GE(t.word_count(d.element), cl.params().min_count);
    for (std::uint32_t k = 0; k < targets; ++k) {
      auto S = cl.states();
      auto G = cl.categories();
      if (d.is_word) G[d.element] = k;
      else
        for (auto c : group) S[c] = k;
      gains.push_back(scratch_criterion(t, S, G) - base);
    }
    const double tol = 1e-9 * std::max(1.0, std::abs(base));
    const double best = *std::max_element(gains.begin(), gains.end());
    if (best <= tol) {
      EXPECT_FALSE(d.applied && d.delta > tol);
      return;
    }
    std::uint32_t expect = 0;
    while (gains[expect] < best - tol) ++expect;
    ASSERT_TRUE(d.applied);
    EXPECT_EQ(d.target, expect);
    EXPECT_NEAR(d.delta, gains[d.target], tol);
    ++moves;
  }
};

ClusterParams tiny_params(Count min_count) {
  ClusterParams p;
  p.num_states = 3;
  p.num_categories = 3;
  p.min_count = min_count;
  return p;
}

TEST(RunFlat, EveryMoveIsTheExhaustiveBest) {
  std::mt19937_64 rng(8);
  std::size_t total_moves = 0;
  for (int trial = 0; trial < 30; ++trial) {
    auto t = testing::random_table(rng, 1 + trial % 2, 10, 12, 40);
    OracleChecker check;
    check.singles = detail::singleton_groups(*t);
    ClusterHooks hooks;
    hooks.on_decision = std::ref(check);
    auto cl = run_flat(t, tiny_params(trial % 3 == 0 ? 6 : 1), hooks);
    total_moves += check.moves;
    const double f = scratch_criterion(*t, cl.states(), cl.categories());
    EXPECT_NEAR(cl.criterion(), f, 1e-9 * std::abs(f));
  }
  EXPECT_GT(total_moves, 20u);
}

TEST(RunTree, EveryMoveIsTheExhaustiveBestAndGroupsStayCoherent) {
  std::mt19937_64 rng(9);
  std::size_t total_moves = 0;
  for (int trial = 0; trial < 30; ++trial) {
    auto t = testing::random_table(rng, 2 + trial % 2, 10, 12, 40);
    auto tree = build_suffix_tree(*t);
    OracleChecker check;
    check.tree = &tree;
    ClusterHooks hooks;
    hooks.on_decision = [&](const Clustering &cl, const MoveDecision &d) {
      for (const auto &n : tree.nodes_at_level(d.level))
        for (auto c : n.contexts) EXPECT_EQ(cl.state_of(c), cl.state_of(n.contexts.front()));
      if (!d.is_word) EXPECT_GE(tree.nodes_at_level(d.level)[d.element].aggregate, cl.params().min_count);
      check(cl, d);
    };
    run_tree(t, tree, tiny_params(trial % 3 == 0 ? 6 : 1), hooks);
    total_moves += check.moves;
  }
  EXPECT_GT(total_moves, 20u);
}

TEST(RunFlat, FrozenWhenEverythingIsRare) {
  std::mt19937_64 rng(10);
  auto t = testing::random_table(rng, 2, 10, 20, 60);
  ClusterParams p = tiny_params(1'000'000);
  auto init = init_clustering(t, p);
  auto out = run_flat(t, p);
  EXPECT_EQ(out.states(), init.states());
  EXPECT_EQ(out.categories(), init.categories());
}

TEST(RunFlat, RareElementsNeverMove) {
  std::mt19937_64 rng(11);
  auto t = testing::random_table(rng, 2, 30, 80, 400, 4);
  ClusterParams p;
  p.num_states = 6;
  p.num_categories = 6;
  p.min_count = 6;
  auto init = init_clustering(t, p);
  auto out = run_flat(t, p);
  for (WordId w = 0; w < t->vocab_size(); ++w)
    if (t->word_count(w) < 6) EXPECT_EQ(out.category_of(w), init.category_of(w));
  for (ContextId c = 0; c < t->num_contexts(); ++c)
    if (t->context_count(c) < 6) EXPECT_EQ(out.state_of(c), init.state_of(c));
}

TEST(RunFlat, DeterministicRerun) {
  std::mt19937_64 rng(12);
  auto t = testing::random_table(rng, 2, 30, 60, 500);
  ClusterParams p = tiny_params(2);
  p.num_states = 5;
  auto a = run_flat(t, p);
  auto b = run_flat(t, p);
  EXPECT_EQ(a.states(), b.states());
  EXPECT_EQ(a.categories(), b.categories());
  EXPECT_EQ(a.criterion(), b.criterion());
}

TEST(RunTree, DepthOneTreeEqualsFlat) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    auto t = testing::random_table(rng, 1, 25, 25, 300);
    auto tree = build_suffix_tree(*t);
    ClusterParams p = tiny_params(3);
    p.num_states = 4;
    p.num_categories = 4;
    auto a = run_flat(t, p);
    auto b = run_tree(t, tree, p);
    EXPECT_EQ(a.states(), b.states());
    EXPECT_EQ(a.categories(), b.categories());
    EXPECT_EQ(a.criterion(), b.criterion());
  }
}

TEST(RunTree, RareContextsMoveTogetherThroughTheirSuffixGroup) {
  // Nearest values b=1, d=2 predict word 5; e=3, f=4 predict word 6. Every trigram context
  // occurs twice (rare), every suffix group at least 12 times.
  std::vector<EventTable::Event> ev;
  auto add_group = [&](FeatureId nearest, WordId next, int contexts) {
    for (int x = 0; x < contexts; ++x) ev.push_back({{FeatureId(7 + x), nearest}, next, 2});
  };
  add_group(1, 5, 6);
  add_group(2, 5, 7);
  add_group(3, 6, 6);
  add_group(4, 6, 6);
  auto t = std::make_shared<const EventTable>(EventTable::from_events(testing::word_slots(2, 16), 16, ev));
  auto tree = build_suffix_tree(*t);
  ClusterParams p;
  p.num_states = 2;
  p.num_categories = 2;
  p.min_count = 6;
  bool b_moved = false;
  ClusterHooks hooks;
  hooks.on_decision = [&](const Clustering &, const MoveDecision &d) {
    if (d.level == 1 && !d.is_word && tree.nodes_at_level(1)[d.element].key == ContextTuple{1} && d.applied)
      b_moved = true;
  };
  auto tree_run = run_tree(t, tree, p, hooks);
  auto flat_run = run_flat(t, p);
  EXPECT_TRUE(b_moved);
  EXPECT_GE(tree_run.criterion(), flat_run.criterion());
  EXPECT_GT(tree_run.criterion(), flat_run.criterion() + 1.0);
}

TEST(RunTree, CriterionNeverDecreases) {
  testing::SyntheticCorpusSpec spec;
  spec.tokens = 8000;
  spec.vocab = 200;
  auto text = testing::synthetic_corpus(spec);
  auto v = build_vocabulary(flatten(text), 100000);
  auto t = std::make_shared<const EventTable>(
      extract_events(encode_corpus(text, v), testing::word_context(2, v.size()), v));
  auto tree = build_suffix_tree(*t);
  ClusterParams p;
  p.num_states = 20;
  p.num_categories = 15;
  double last = -INFINITY;
  ClusterHooks hooks;
  hooks.on_decision = [&](const Clustering &cl, const MoveDecision &d) {
    EXPECT_GE(cl.criterion(), last);
    last = cl.criterion();
    if (d.applied) EXPECT_GT(d.delta, 0.0);
  };
  std::vector<LevelTrace> trace;
  hooks.trace = &trace;
  auto cl = run_tree(t, tree, p, hooks);
  ASSERT_EQ(trace.size(), 2u);
  for (const auto &lt : trace) {
    EXPECT_TRUE(std::is_sorted(lt.criterion.begin(), lt.criterion.end()));
    EXPECT_EQ(lt.criterion.size(), lt.iterations + 1);
  }
  const double ll = testing::direct_loglik(*t, cl.states(), cl.categories());
  EXPECT_NEAR(cl.criterion() + testing::sum_word_nlogn(*t), ll, 1e-9 * std::abs(ll));
}

TEST(ExportCategories, IdentityAndRoundTrip) {
  std::mt19937_64 rng(14);
  auto t = testing::random_table(rng, 1, 6, 6, 30);
  std::vector<CategoryId> G{0, 1, 2, 3, 4, 5};
  auto cl = Clustering::from_assignment(t, 2, 6, std::vector<StateId>(t->num_contexts(), 0), G);
  auto m = export_categories(cl);
  EXPECT_EQ(m.arity(), 6u);
  EXPECT_EQ(m.kind(), FeatureKind::class_map);
  for (WordId w = 0; w < 6; ++w) EXPECT_EQ(m(w), w);

  Vocabulary v;
  for (int i = 0; i < 3; ++i) v.add("x" + std::to_string(i));
  v.ensure_specials();
  auto cl2 = Clustering::from_assignment(t, 2, 4, std::vector<StateId>(t->num_contexts(), 0), {3, 1, 1, 0, 2, 3});
  auto exported = export_categories(cl2);
  std::vector<std::string> lines;
  const auto text = exported.serialize(v);
  for (auto l : detail::split_char(text, '\n'))
    if (!l.empty()) lines.emplace_back(l);
  auto back = parse_feature_map(lines, v, FeatureKind::class_map, "classes");
  EXPECT_EQ(back.table(), exported.table());
  EXPECT_LE(back.arity(), 4u);
}

TEST(ClusteringFile, RoundTrip) {
  std::mt19937_64 rng(15);
  auto t = testing::random_table(rng, 2, 12, 30, 200);
  ClusterParams p = tiny_params(2);
  auto cl = run_flat(t, p);
  auto text = serialize_clustering(cl);
  std::vector<std::string> lines;
  for (auto l : detail::split_char(text, '\n'))
    if (!l.empty()) lines.emplace_back(l);
  auto back = parse_clustering(lines, t);
  EXPECT_EQ(back.states(), cl.states());
  EXPECT_EQ(back.categories(), cl.categories());
  EXPECT_NEAR(back.criterion(), cl.criterion(), 1e-9 * std::abs(cl.criterion()));
  EXPECT_EQ(back.params().min_count, 2);
  EXPECT_EQ(serialize_clustering(back).substr(text.find("G\n")), text.substr(text.find("G\n")));
}

} // namespace
} // namespace classlm
