#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pidgen/dataset_pair.hpp"

namespace pidgen {

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<DatasetPair> train;
  std::vector<DatasetPair> val;
  std::vector<DatasetPair> test;
};

/// Shuffles with the seed, rounds the val and test sizes and gives the
/// remainder to train. Throws SplitError when fractions are invalid or a
/// split with a positive fraction ends up empty.
DatasetSplit split(std::span<const DatasetPair> pairs, const SplitFractions& fractions, std::uint64_t seed);

/// One extra pair per source pair: the P&ID is re-serialized with random
/// branch priorities and the PFD is the stripped P&ID written with the same
/// priorities. Pairs identical to an existing one are dropped.
std::vector<DatasetPair> augment_dataset(std::span<const DatasetPair> pairs, std::uint64_t seed);

enum class ErrorCategory { kInvalidSfiles, kDanglingRecycle, kDanglingSignal, kUnitMismatch };
inline constexpr std::array<ErrorCategory, 4> kErrorCategories{
    ErrorCategory::kInvalidSfiles, ErrorCategory::kDanglingRecycle, ErrorCategory::kDanglingSignal,
    ErrorCategory::kUnitMismatch};
const char* to_string(ErrorCategory c);

struct EvalReport {
  std::size_t k_max = 0;
  std::size_t n_samples = 0;
  /// k -> fraction of samples with a canonical match within the first k predictions.
  std::map<std::size_t, double> top_k_accuracy;
  /// Same with plain string equality.
  std::map<std::size_t, double> top_k_raw_accuracy;
  std::size_t n_predictions = 0;
  std::size_t n_invalid_predictions = 0;
  /// Counted over all non-matching predictions.
  std::map<ErrorCategory, std::size_t> error_breakdown;

  nlohmann::json to_json() const;
  /// Columns top-1 .. top-k in percent.
  std::string to_table() const;
};

/// predictions[i] is the ranked list for sample i. inputs, when non-empty,
/// holds the source PFDs used to detect added or missing units; valves in
/// the prediction are kept or dropped to match the input's convention.
/// Throws LengthMismatch on inconsistent sizes or over-long lists.
EvalReport evaluate_top_k(const std::vector<std::vector<SfilesString>>& predictions,
                          std::span<const SfilesString> targets, std::size_t k_max,
                          std::span<const SfilesString> inputs = {});

nlohmann::json pair_to_json(const DatasetPair& p);
DatasetPair pair_from_json(const nlohmann::json& j);
/// One {"id","pfd","pid"} object per line.
void write_pairs_jsonl(std::ostream& os, std::span<const DatasetPair> pairs);
std::vector<DatasetPair> read_pairs_jsonl(std::istream& is);

}  // namespace pidgen
