#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "pidgen/dataset.hpp"
#include "pidgen/errors.hpp"
#include "pidgen/generator.hpp"

using namespace pidgen;

namespace {

const std::string kPid =
    "(raw)(hex){1}(C){TC}_1(mix)<1(r)[(C){LC}_2](v)<_2(splt)[(prod)](C){FC}_3(v)1<_3n|(raw)(v)<_1(hex){1}(prod)";
const std::string kPfd = "(raw)(hex){1}(mix)<1(r)(v)(splt)[(prod)](v)1n|(raw)(v)(hex){1}(prod)";
// Same graph as kPid with the splitter branches written in the other order.
const std::string kPidReordered =
    "(raw)(hex){1}(C){TC}_1(mix)<1(r)[(C){LC}_2](v)<_2(splt)[(C){FC}_3(v)1<_3](prod)n|(raw)(v)<_1(hex){1}(prod)";

std::vector<DatasetPair> make_pairs(std::size_t n, std::uint64_t seed) {
  GeneratorConfig cfg;
  cfg.seed = seed;
  return generate_dataset(cfg, n);
}

std::set<int> ids(const std::vector<DatasetPair>& v) {
  std::set<int> s;
  for (const auto& p : v) s.insert(p.id);
  return s;
}

}  // namespace

TEST(Split, SizesArePartitionAndDisjoint) {
  const auto pairs = make_pairs(97, 1);
  const auto s = split(pairs, {}, 7);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  EXPECT_EQ(s.train.size(), 77u);
  std::set<int> all;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const auto& p : *part) EXPECT_TRUE(all.insert(p.id).second);
  EXPECT_EQ(all, ids(pairs));
}

TEST(Split, DeterministicPerSeed) {
  const auto pairs = make_pairs(50, 2);
  const auto a = split(pairs, {}, 3), b = split(pairs, {}, 3), c = split(pairs, {}, 4);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(ids(a.test), ids(c.test));
}

TEST(Split, RejectsBadFractions) {
  const auto pairs = make_pairs(20, 2);
  EXPECT_THROW(split(pairs, {0.5, 0.2, 0.2}, 0), SplitError);
  EXPECT_THROW(split(pairs, {1.2, -0.1, -0.1}, 0), SplitError);
  EXPECT_THROW(split(std::span(pairs).first(3), {}, 0), SplitError);
  const auto only_train = split(pairs, {1.0, 0.0, 0.0}, 0);
  EXPECT_EQ(only_train.train.size(), 20u);
  EXPECT_TRUE(only_train.val.empty());
}

TEST(AugmentDataset, AddsEquivalentVariants) {
  const auto pairs = make_pairs(60, 5);
  const auto aug = augment_dataset(pairs, 9);
  EXPECT_GT(aug.size(), pairs.size());
  EXPECT_LE(aug.size(), 2 * pairs.size());
  std::set<std::pair<std::string, std::string>> seen;
  std::set<int> seen_ids;
  for (const auto& p : aug) {
    EXPECT_TRUE(seen.insert({p.pfd_sfiles.text, p.pid_sfiles.text}).second);
    EXPECT_TRUE(seen_ids.insert(p.id).second);
    const auto pid = parse(p.pid_sfiles);
    EXPECT_TRUE(isomorphic(strip_controls(pid, false), parse(p.pfd_sfiles)));
  }
  // Originals come first and unchanged.
  for (std::size_t i = 0; i < pairs.size(); ++i) EXPECT_EQ(aug[i], pairs[i]);
  // Every variant canonicalizes to one of the originals.
  std::set<std::string> originals;
  for (const auto& p : pairs) originals.insert(p.pid_sfiles.text);
  for (std::size_t i = pairs.size(); i < aug.size(); ++i)
    EXPECT_TRUE(originals.contains(canonicalize(aug[i].pid_sfiles).text));
  EXPECT_EQ(augment_dataset(pairs, 9), aug);
}

TEST(AugmentDataset, KeepsValveConvention) {
  GeneratorConfig cfg;
  cfg.seed = 6;
  cfg.strip_valves_in_input = true;
  const auto pairs = generate_dataset(cfg, 30);
  for (const auto& p : augment_dataset(pairs, 1)) {
    EXPECT_TRUE(isomorphic(strip_controls(parse(p.pid_sfiles), true), parse(p.pfd_sfiles)));
  }
}

TEST(EvaluateTopK, HandComputedReport) {
  const std::vector<SfilesString> targets{{kPid, true}, {kPid, true}, {kPid, true}, {kPid, true}};
  const std::vector<SfilesString> inputs(4, SfilesString{kPfd, true});
  const std::vector<std::vector<SfilesString>> preds{
      {{kPid, true}, {kPfd, true}},                            // exact at rank 1
      {{kPfd, true}, {kPidReordered, false}},                  // canonical match at rank 2
      {{"(raw)(v)1(prod)", false}, {"(raw)(C){FC}_4(prod)", false}, {"(raw)(v", false}},
      {},
  };
  const auto r = evaluate_top_k(preds, targets, 3, inputs);
  EXPECT_EQ(r.n_samples, 4u);
  EXPECT_DOUBLE_EQ(r.top_k_accuracy.at(1), 0.25);
  EXPECT_DOUBLE_EQ(r.top_k_accuracy.at(2), 0.5);
  EXPECT_DOUBLE_EQ(r.top_k_accuracy.at(3), 0.5);
  EXPECT_DOUBLE_EQ(r.top_k_raw_accuracy.at(1), 0.25);
  EXPECT_DOUBLE_EQ(r.top_k_raw_accuracy.at(3), 0.25);
  EXPECT_EQ(r.n_predictions, 7u);
  EXPECT_EQ(r.n_invalid_predictions, 3u);
  // kPfd as a P&ID has all units of the input, so it is wrong but not a unit mismatch.
  EXPECT_EQ(r.error_breakdown.at(ErrorCategory::kDanglingRecycle), 1u);
  EXPECT_EQ(r.error_breakdown.at(ErrorCategory::kDanglingSignal), 1u);
  EXPECT_EQ(r.error_breakdown.at(ErrorCategory::kInvalidSfiles), 1u);
  EXPECT_EQ(r.error_breakdown.at(ErrorCategory::kUnitMismatch), 0u);
}

TEST(EvaluateTopK, UnitMismatchNeedsInputs) {
  const std::vector<SfilesString> targets{{kPid, true}};
  const std::vector<std::vector<SfilesString>> preds{{{"(raw)(pump)(prod)", false}}};
  const std::vector<SfilesString> inputs{{kPfd, true}};
  EXPECT_EQ(evaluate_top_k(preds, targets, 1, inputs).error_breakdown.at(ErrorCategory::kUnitMismatch), 1u);
  EXPECT_EQ(evaluate_top_k(preds, targets, 1).error_breakdown.at(ErrorCategory::kUnitMismatch), 0u);
}

TEST(EvaluateTopK, AccuracyIsMonotoneInK) {
  const auto pairs = make_pairs(40, 11);
  std::vector<SfilesString> targets;
  std::vector<std::vector<SfilesString>> preds;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    targets.push_back(pairs[i].pid_sfiles);
    std::vector<SfilesString> list;
    for (std::size_t r = 0; r < 5; ++r) list.push_back(pairs[(i + r * (i % 3)) % pairs.size()].pid_sfiles);
    preds.push_back(list);
  }
  const auto rep = evaluate_top_k(preds, targets, 5);
  for (std::size_t k = 2; k <= 5; ++k) EXPECT_GE(rep.top_k_accuracy.at(k), rep.top_k_accuracy.at(k - 1));
  EXPECT_DOUBLE_EQ(rep.top_k_accuracy.at(1), 1.0);
}

TEST(EvaluateTopK, LengthChecks) {
  const std::vector<SfilesString> targets{{kPid, true}};
  EXPECT_THROW(evaluate_top_k({}, targets, 1), LengthMismatch);
  EXPECT_THROW(evaluate_top_k({{{kPid, true}, {kPid, true}}}, targets, 1), LengthMismatch);
  const std::vector<SfilesString> two_inputs(2, SfilesString{kPfd, true});
  EXPECT_THROW(evaluate_top_k({{}}, targets, 1, two_inputs), LengthMismatch);
  EXPECT_THROW(evaluate_top_k({{}}, targets, 0), LengthMismatch);
}

TEST(EvalReport, JsonAndTable) {
  const std::vector<SfilesString> targets{{kPid, true}};
  const auto r = evaluate_top_k({{{kPid, true}}}, targets, 2);
  const auto j = r.to_json();
  EXPECT_EQ(j["n_samples"], 1);
  EXPECT_NE(r.to_table().find("100.0%"), std::string::npos);
  EXPECT_NE(r.to_table().find("top-2"), std::string::npos);
}

TEST(Jsonl, RoundTripAndErrors) {
  const auto pairs = make_pairs(10, 3);
  std::stringstream ss;
  write_pairs_jsonl(ss, pairs);
  const auto back = read_pairs_jsonl(ss);
  ASSERT_EQ(back.size(), pairs.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, pairs[i].id);
    EXPECT_EQ(back[i].pfd_sfiles.text, pairs[i].pfd_sfiles.text);
    EXPECT_EQ(back[i].pid_sfiles.text, pairs[i].pid_sfiles.text);
  }
  std::stringstream bad("{\"id\": 1, \"pfd\": \"(raw)(prod)\"}\n");
  EXPECT_THROW(read_pairs_jsonl(bad), GraphError);
  std::stringstream garbage("not json\n");
  EXPECT_THROW(read_pairs_jsonl(garbage), GraphError);
}
