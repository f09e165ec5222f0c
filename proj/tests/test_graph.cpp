#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "pidgen/errors.hpp"
#include "pidgen/graph.hpp"
#include "pidgen/graph_json.hpp"
#include "pidgen/sfiles.hpp"
#include "pidgen/tokenizer.hpp"

using namespace pidgen;

namespace {

UnitNode unit(int id, std::string cls) { return UnitNode{id, std::move(cls), std::nullopt, std::nullopt, std::nullopt}; }
UnitNode control(int id, std::string code) { return UnitNode{id, "C", std::nullopt, std::move(code), std::nullopt}; }
UnitNode hex(int id, int group, int compartment) { return UnitNode{id, "hex", compartment, std::nullopt, group}; }
FlowEdge mat(int s, int d, std::vector<std::string> tags = {}) { return {s, d, EdgeKind::kMaterial, std::move(tags)}; }
FlowEdge sig(int s, int d) { return {s, d, EdgeKind::kSignal, {}}; }

// Exhaustive isomorphism test over all node bijections.
bool brute_force_isomorphic(const FlowsheetGraph& a, const FlowsheetGraph& b) {
  if (a.size() != b.size() || a.edges().size() != b.edges().size()) return false;
  const std::size_t n = a.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto edge_multiset = [](const FlowsheetGraph& g, const std::vector<std::size_t>& map) {
    std::multiset<std::tuple<std::size_t, std::size_t, int, std::vector<std::string>>> out;
    for (const auto& e : g.edges()) {
      out.insert({map[g.index_of(e.src)], map[g.index_of(e.dst)], static_cast<int>(e.kind), e.tags});
    }
    return out;
  };
  std::vector<std::size_t> ident(n);
  std::iota(ident.begin(), ident.end(), std::size_t{0});
  const auto eb = edge_multiset(b, ident);
  do {
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      const auto& x = a.nodes()[i];
      const auto& y = b.nodes()[perm[i]];
      ok = x.unit_class == y.unit_class && x.letter_code == y.letter_code &&
           x.equipment_group.has_value() == y.equipment_group.has_value();
    }
    for (std::size_t i = 0; i < n && ok; ++i) {
      for (std::size_t j = 0; j < n && ok; ++j) {
        const auto& gi = a.nodes()[i].equipment_group;
        const auto& gj = a.nodes()[j].equipment_group;
        const auto& hi = b.nodes()[perm[i]].equipment_group;
        const auto& hj = b.nodes()[perm[j]].equipment_group;
        const bool same_a = gi && gj && *gi == *gj;
        const bool same_b = hi && hj && *hi == *hj;
        ok = same_a == same_b;
      }
    }
    if (ok && edge_multiset(a, perm) == eb) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

FlowsheetGraph random_graph(std::mt19937_64& rng, std::size_t n) {
  const std::vector<std::string> classes{"raw", "v", "mix", "splt", "r", "hex", "C"};
  std::uniform_int_distribution<std::size_t> pick_class(0, classes.size() - 1);
  std::vector<UnitNode> nodes;
  int group = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = classes[pick_class(rng)];
    const int id = static_cast<int>(i) * 3 + 1;
    if (c == "C") nodes.push_back(control(id, rng() % 2 ? "TC" : "LC"));
    else if (c == "hex") nodes.push_back(hex(id, rng() % 2 ? group : ++group, 1));
    else nodes.push_back(unit(id, c));
  }
  std::vector<FlowEdge> edges;
  const std::size_t n_edges = n + rng() % n;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t k = 0; k < n_edges; ++k) {
    const auto s = pick(rng), d = pick(rng);
    if (s == d) continue;
    if (nodes[s].is_control() || nodes[d].is_control()) {
      edges.push_back(sig(nodes[s].id, nodes[d].id));
    } else {
      std::vector<std::string> tags;
      if (rng() % 4 == 0) tags.push_back(rng() % 2 ? "tout" : "bout");
      edges.push_back(mat(nodes[s].id, nodes[d].id, tags));
    }
  }
  return FlowsheetGraph(nodes, edges);
}

FlowsheetGraph relabel(const FlowsheetGraph& g, std::mt19937_64& rng) {
  std::vector<int> ids;
  for (const auto& n : g.nodes()) ids.push_back(n.id);
  std::vector<int> fresh(ids.size());
  std::iota(fresh.begin(), fresh.end(), 100);
  std::shuffle(fresh.begin(), fresh.end(), rng);
  std::map<int, int> m;
  for (std::size_t i = 0; i < ids.size(); ++i) m[ids[i]] = fresh[i];
  std::vector<UnitNode> nodes = g.nodes();
  for (auto& n : nodes) n.id = m[n.id];
  std::shuffle(nodes.begin(), nodes.end(), rng);
  std::vector<FlowEdge> edges = g.edges();
  for (auto& e : edges) {
    e.src = m[e.src];
    e.dst = m[e.dst];
  }
  std::shuffle(edges.begin(), edges.end(), rng);
  return FlowsheetGraph(nodes, edges);
}

}  // namespace

TEST(FlowsheetGraph, RejectsDuplicateIds) {
  EXPECT_THROW(FlowsheetGraph({unit(1, "raw"), unit(1, "prod")}, {}), GraphError);
}

TEST(FlowsheetGraph, RejectsUnknownEndpointsAndSelfLoops) {
  EXPECT_THROW(FlowsheetGraph({unit(1, "raw")}, {mat(1, 2)}), GraphError);
  EXPECT_THROW(FlowsheetGraph({unit(1, "raw")}, {mat(1, 1)}), GraphError);
}

TEST(FlowsheetGraph, LetterCodeOnlyOnControls) {
  EXPECT_THROW(FlowsheetGraph({UnitNode{1, "raw", std::nullopt, "TC", std::nullopt}}, {}), GraphError);
  EXPECT_THROW(FlowsheetGraph({unit(1, "C")}, {}), GraphError);
  EXPECT_NO_THROW(FlowsheetGraph({control(1, "TC")}, {}));
}

TEST(FlowsheetGraph, SignalNeedsControlEndpointAndNoTags) {
  EXPECT_THROW(FlowsheetGraph({unit(1, "raw"), unit(2, "v")}, {sig(1, 2)}), GraphError);
  EXPECT_THROW(FlowsheetGraph({control(1, "FC"), unit(2, "v")}, {{1, 2, EdgeKind::kSignal, {"tout"}}}), GraphError);
  // Transmitter to controller links join two control units.
  EXPECT_NO_THROW(FlowsheetGraph({control(1, "FT"), control(2, "FFC")}, {sig(1, 2)}));
}

TEST(FlowsheetGraph, CompartmentOnlyOnMultiStreamUnits) {
  EXPECT_THROW(FlowsheetGraph({UnitNode{1, "r", 1, std::nullopt, 1}}, {}), GraphError);
  EXPECT_NO_THROW(FlowsheetGraph({hex(1, 1, 1), hex(2, 1, 2)}, {}));
}

TEST(FlowsheetGraph, DegreesCountMaterialOnly) {
  FlowsheetGraph g({unit(1, "raw"), unit(2, "v"), control(3, "FC"), unit(4, "prod")},
                   {mat(1, 2), mat(2, 4), sig(3, 2), mat(1, 4)});
  EXPECT_EQ(g.material_in_degree(g.index_of(2)), 1u);
  EXPECT_EQ(g.material_out_degree(g.index_of(1)), 2u);
  EXPECT_EQ(g.in_edges(g.index_of(2)).size(), 2u);
  EXPECT_THROW(g.index_of(9), GraphError);
}

TEST(Isomorphism, RelabelledGraphsAreIsomorphic) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = random_graph(rng, 3 + trial % 5);
    EXPECT_TRUE(isomorphic(g, relabel(g, rng)));
  }
}

TEST(Isomorphism, AgreesWithBruteForce) {
  std::mt19937_64 rng(17);
  int positives = 0, negatives = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = 3 + trial % 4;
    const auto a = random_graph(rng, n);
    FlowsheetGraph b = trial % 2 ? relabel(a, rng) : random_graph(rng, n);
    if (trial % 4 == 1 && !b.edges().empty()) {
      // Small mutation of an isomorphic copy: flip one edge.
      auto edges = b.edges();
      std::swap(edges[0].src, edges[0].dst);
      b = FlowsheetGraph(b.nodes(), edges);
    }
    const bool expected = brute_force_isomorphic(a, b);
    EXPECT_EQ(isomorphic(a, b), expected) << "trial " << trial;
    (expected ? positives : negatives)++;
  }
  EXPECT_GT(positives, 50);
  EXPECT_GT(negatives, 50);
}

TEST(Isomorphism, DistinguishesTagsAndGroups) {
  FlowsheetGraph a({unit(1, "raw"), unit(2, "prod")}, {mat(1, 2, {"tout"})});
  FlowsheetGraph b({unit(1, "raw"), unit(2, "prod")}, {mat(1, 2, {"bout"})});
  EXPECT_FALSE(isomorphic(a, b));
  FlowsheetGraph c({hex(1, 1, 1), hex(2, 1, 2)}, {});
  FlowsheetGraph d({hex(1, 1, 1), hex(2, 2, 1)}, {});
  EXPECT_FALSE(isomorphic(c, d));
}

TEST(RefineColors, InvariantUnderRelabelling) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = random_graph(rng, 6);
    const auto h = relabel(g, rng);
    auto cg = refine_colors(g);
    auto ch = refine_colors(h);
    std::sort(cg.begin(), cg.end());
    std::sort(ch.begin(), ch.end());
    EXPECT_EQ(cg, ch);
  }
}

TEST(StripControls, SplicesInlineControlAndDropsDangling) {
  // raw -> C{FC} -> v -> prod, FC signals v; LC dangles from v.
  FlowsheetGraph g({unit(1, "raw"), control(2, "FC"), unit(3, "v"), unit(4, "prod"), control(5, "LC")},
                   {mat(1, 2), mat(2, 3), mat(3, 4), sig(2, 3), mat(3, 5)});
  const auto p = strip_controls(g, false);
  FlowsheetGraph expect({unit(1, "raw"), unit(3, "v"), unit(4, "prod")}, {mat(1, 3), mat(3, 4)});
  EXPECT_TRUE(isomorphic(p, expect));
  for (const auto& n : p.nodes()) EXPECT_FALSE(n.is_control());
}

TEST(StripControls, ConcatenatesTagsOnSplice) {
  FlowsheetGraph g({unit(1, "col"), control(2, "TC"), unit(3, "cond")}, {mat(1, 2, {"tout"}), mat(2, 3)});
  const auto p = strip_controls(g, false);
  ASSERT_EQ(p.edges().size(), 1u);
  EXPECT_EQ(p.edges()[0].tags, std::vector<std::string>{"tout"});
}

TEST(StripControls, RemovesValvesOnRequest) {
  FlowsheetGraph g({unit(1, "raw"), unit(2, "v"), unit(3, "prod")}, {mat(1, 2), mat(2, 3)});
  EXPECT_EQ(strip_controls(g, false).size(), 3u);
  const auto p = strip_controls(g, true);
  EXPECT_EQ(p.size(), 2u);
  ASSERT_EQ(p.edges().size(), 1u);
  EXPECT_EQ(p.edges()[0].src, 1);
  EXPECT_EQ(p.edges()[0].dst, 3);
}

TEST(StripControls, ThrowsForBranchingControl) {
  FlowsheetGraph g({unit(1, "raw"), control(2, "FC"), unit(3, "v"), unit(4, "prod")},
                   {mat(1, 2), mat(2, 3), mat(2, 4)});
  EXPECT_THROW(strip_controls(g, false), StripError);
}

TEST(StripControls, IdempotentAndControlFree) {
  const auto g = parse("(raw)(hex){1}(C){TC}_1(mix)<1(r)[(C){LC}_2](v)<_2(splt)[(prod)](C){FC}_3(v)1<_3n|(raw)(v)<_1(hex){1}(prod)");
  const auto once = strip_controls(g, false);
  EXPECT_TRUE(isomorphic(once, strip_controls(once, false)));
  for (const auto& e : once.edges()) EXPECT_EQ(e.kind, EdgeKind::kMaterial);
}

TEST(Stats, MeanAndPopulationStd) {
  std::vector<FlowsheetGraph> gs{FlowsheetGraph({unit(1, "raw")}, {}),
                                 FlowsheetGraph({unit(1, "raw"), unit(2, "v"), unit(3, "prod")}, {})};
  Vocabulary v(std::vector<std::string>{"(raw)", "(v)"});
  const auto s = stats(gs, v);
  EXPECT_EQ(s.n_samples, 2u);
  EXPECT_DOUBLE_EQ(s.mean_nodes, 2.0);
  EXPECT_DOUBLE_EQ(s.std_nodes, 1.0);
  EXPECT_EQ(s.vocab_size, v.size());
  EXPECT_EQ(s.regular_vocab_size, v.size() - 4);
  EXPECT_THROW(stats(std::span<const FlowsheetGraph>{}, v), EmptyDataset);
}

TEST(GraphJson, RoundTripsRandomGraphs) {
  std::mt19937_64 rng(9);
  std::vector<FlowsheetGraph> gs;
  for (int i = 0; i < 30; ++i) gs.push_back(random_graph(rng, 2 + i % 6));
  std::stringstream ss;
  write_graphs_jsonl(ss, gs);
  const auto back = read_graphs_jsonl(ss);
  ASSERT_EQ(back.size(), gs.size());
  for (std::size_t i = 0; i < gs.size(); ++i) {
    EXPECT_EQ(back[i].nodes(), gs[i].nodes());
    EXPECT_EQ(back[i].edges(), gs[i].edges());
  }
}

TEST(GraphJson, RejectsBadSchema) {
  EXPECT_THROW(graph_from_json(nlohmann::json::parse(R"({"nodes":[{"id":1}],"edges":[]})")), GraphError);
  EXPECT_THROW(graph_from_json(nlohmann::json::parse(
                   R"({"nodes":[{"id":1,"class":"raw"}],"edges":[{"src":1,"dst":1,"kind":"material","tags":[]}]})")),
               GraphError);
  EXPECT_THROW(graph_from_json(nlohmann::json::parse(
                   R"({"nodes":[{"id":1,"class":"raw"},{"id":2,"class":"v"}],"edges":[{"src":1,"dst":2,"kind":"pipe","tags":[]}]})")),
               GraphError);
  std::stringstream bad("{not json\n");
  EXPECT_THROW(read_graphs_jsonl(bad), GraphError);
}
