#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <fstream>
#include <set>

#include "pidgen/errors.hpp"
#include "pidgen/generator.hpp"
#include "pidgen/sfiles.hpp"

using namespace pidgen;
using nlohmann::json;

namespace {

json default_json() { return json::parse(default_pattern_library_json()); }

json& pattern_named(json& lib, const std::string& name) {
  for (auto& p : lib["patterns"])
    if (p["name"] == name) return p;
  throw std::runtime_error("no pattern " + name);
}

}  // namespace

TEST(Generator, SameSeedSameDataset) {
  GeneratorConfig cfg;
  cfg.seed = 42;
  const auto a = generate_dataset(cfg, 60);
  const auto b = generate_dataset(cfg, 60);
  EXPECT_EQ(a, b);
  cfg.seed = 43;
  EXPECT_NE(generate_dataset(cfg, 60), a);
}

TEST(Generator, IndependentOfThreadCount) {
  GeneratorConfig cfg;
  cfg.seed = 5;
  const int before = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto serial = generate_dataset(cfg, 40);
  omp_set_num_threads(3);
  const auto parallel = generate_dataset(cfg, 40);
  omp_set_num_threads(before);
  EXPECT_EQ(serial, parallel);
}

TEST(Generator, PairsAreConsistent) {
  GeneratorConfig cfg;
  cfg.seed = 8;
  const auto pairs = generate_dataset(cfg, 150);
  ASSERT_EQ(pairs.size(), 150u);
  std::set<std::string> pids;
  std::set<int> ids;
  for (const auto& p : pairs) {
    const auto pid = parse(p.pid_sfiles);
    EXPECT_EQ(serialize(pid).text, p.pid_sfiles.text);
    EXPECT_EQ(serialize(strip_controls(pid, false)).text, p.pfd_sfiles.text);
    EXPECT_TRUE(pids.insert(p.pid_sfiles.text).second);
    EXPECT_TRUE(ids.insert(p.id).second);
  }
}

TEST(Generator, ControlsAreWiredAndStripBackToBase) {
  const std::set<std::string> codes{"TC", "LC", "FC", "FFC", "PC", "FT"};
  GeneratorConfig cfg;
  for (std::uint64_t k = 0; k < 200; ++k) {
    cfg.seed = candidate_seed(77, k);
    const auto r = generate_pid(cfg);
    EXPECT_TRUE(isomorphic(r.pfd, r.base));
    EXPECT_TRUE(isomorphic(strip_controls(r.pid, false), r.base));
    EXPECT_LE(r.pid.size(), cfg.graph_node_cap);
    for (std::size_t i = 0; i < r.pid.size(); ++i) {
      const auto& n = r.pid.nodes()[i];
      if (!n.is_control()) continue;
      EXPECT_TRUE(codes.contains(*n.letter_code)) << *n.letter_code;
      bool has_signal = false;
      for (auto e : r.pid.out_edges(i)) has_signal |= r.pid.edges()[e].kind == EdgeKind::kSignal;
      for (auto e : r.pid.in_edges(i)) has_signal |= r.pid.edges()[e].kind == EdgeKind::kSignal;
      EXPECT_TRUE(has_signal) << "control " << *n.letter_code << " without signal line";
    }
  }
}

TEST(Generator, StripValvesOption) {
  GeneratorConfig cfg;
  cfg.strip_valves_in_input = true;
  for (std::uint64_t k = 0; k < 50; ++k) {
    cfg.seed = k;
    const auto r = generate_pid(cfg);
    for (const auto& n : r.pfd.nodes()) {
      EXPECT_NE(n.unit_class, "v");
      EXPECT_NE(n.unit_class, "C");
    }
  }
}

TEST(Generator, RespectsNodeCap) {
  GeneratorConfig cfg;
  cfg.graph_node_cap = 40;
  cfg.branch_node_cap = 25;
  for (std::uint64_t k = 0; k < 100; ++k) {
    cfg.seed = k;
    EXPECT_LE(generate_pid(cfg).pid.size(), 40u);
  }
}

TEST(Generator, SizeDistributionIsPlausible) {
  GeneratorConfig cfg;
  cfg.seed = 3;
  const auto pairs = generate_dataset(cfg, 600);
  double sum = 0.0;
  std::size_t mx = 0, mn = SIZE_MAX;
  for (const auto& p : pairs) {
    const auto n = parse(p.pid_sfiles).size();
    sum += static_cast<double>(n);
    mx = std::max(mx, n);
    mn = std::min(mn, n);
  }
  const double mean = sum / static_cast<double>(pairs.size());
  EXPECT_GT(mean, 35.0);
  EXPECT_LT(mean, 70.0);
  EXPECT_LE(mx, 100u);
  EXPECT_LT(mn, 30u);
}

TEST(GeneratorConfig, ValidationRejectsBadSettings) {
  GeneratorConfig cfg;
  EXPECT_NO_THROW(validate(cfg));
  auto bad = cfg;
  bad.max_feeds = 0;
  EXPECT_THROW(validate(bad), GenerationError);
  bad = cfg;
  bad.max_feeds = 4;
  EXPECT_THROW(validate(bad), GenerationError);
  bad = cfg;
  bad.graph_node_cap = 0;
  EXPECT_THROW(validate(bad), GenerationError);
  bad = cfg;
  bad.n_reactor_patterns = 5;
  EXPECT_THROW(validate(bad), GenerationError);
  bad = cfg;
  bad.n_column_control_schemes = 6;
  EXPECT_THROW(validate(bad), GenerationError);
  bad = cfg;
  bad.library.transitions["reaction"]["separation"] += 0.2;
  EXPECT_THROW(validate(bad), GenerationError);
  bad = cfg;
  bad.library.transitions.erase("start");
  EXPECT_THROW(validate(bad), GenerationError);
  bad = cfg;
  bad.library.options.p_feed_valve = 1.5;
  EXPECT_THROW(validate(bad), GenerationError);
  EXPECT_THROW(generate_pid(bad), GenerationError);
}

TEST(PatternLibrary, DefaultParsesWithExpectedContents) {
  const auto& lib = default_pattern_library();
  EXPECT_EQ(lib.of_kind(PatternKind::kReactor).size(), 6u);
  for (const auto* p : lib.of_kind(PatternKind::kSeparation)) {
    if (p->column) {
      EXPECT_EQ(p->control_schemes.size(), 7u);
    }
  }
  EXPECT_FALSE(lib.of_kind(PatternKind::kUnitOp).empty());
  EXPECT_FALSE(lib.of_kind(PatternKind::kConditioning).empty());
}

TEST(PatternLibrary, RejectsSchemaErrors) {
  {
    auto j = default_json();
    pattern_named(j, "pump")["kind"] = "blender";
    EXPECT_THROW(pattern_library_from_json(j), GenerationError);
  }
  {
    auto j = default_json();
    pattern_named(j, "pump")["edges"][0]["dst"] = "nowhere";
    EXPECT_THROW(pattern_library_from_json(j), GenerationError);
  }
  {
    auto j = default_json();
    pattern_named(j, "pump")["control_schemes"][0][0]["place"] = "floating";
    EXPECT_THROW(pattern_library_from_json(j), GenerationError);
  }
  {
    auto j = default_json();
    pattern_named(j, "pump")["control_schemes"][0][0]["signals_to"] = json::array();
    EXPECT_THROW(pattern_library_from_json(j), GenerationError);
  }
  {
    auto j = default_json();
    pattern_named(j, "pump")["exits"] = json::array();
    EXPECT_THROW(pattern_library_from_json(j), GenerationError);
  }
  EXPECT_THROW(load_pattern_library("/nonexistent/patterns.json"), GenerationError);
}

TEST(PatternLibrary, FileLoadMatchesBuiltIn) {
  const std::string path = ::testing::TempDir() + "patterns_copy.json";
  std::ofstream(path) << default_pattern_library_json();
  GeneratorConfig a, b;
  b.library = load_pattern_library(path);
  a.seed = b.seed = 12;
  EXPECT_EQ(generate_dataset(a, 20), generate_dataset(b, 20));
}
