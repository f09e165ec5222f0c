#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pidgen/dataset_pair.hpp"
#include "pidgen/graph.hpp"
#include "pidgen/patterns.hpp"

namespace pidgen {

struct GeneratorConfig {
  std::uint64_t seed = 0;
  /// Sub-process patterns, control schemes and the Markov transition table
  /// (`library.transitions`, state -> next state -> probability).
  PatternLibrary library = default_pattern_library();
  std::size_t max_feeds = 3;
  std::size_t branch_node_cap = 65;
  std::size_t graph_node_cap = 100;
  std::size_t n_reactor_patterns = 6;
  std::size_t n_column_control_schemes = 7;
  bool strip_valves_in_input = false;
};

/// Throws GenerationError describing the first violated constraint.
void validate(const GeneratorConfig& cfg);

struct GeneratedPid {
  FlowsheetGraph pid;
  /// Model input: strip_controls(pid, strip_valves_in_input).
  FlowsheetGraph pfd;
  /// Flowsheet as assembled before any control unit was placed.
  FlowsheetGraph base;
};

/// One P&ID from cfg.seed. Oversized or unserializable draws are retried
/// internally with the continuing random stream.
GeneratedPid generate_pid(const GeneratorConfig& cfg);

/// n pairs unique by canonical P&ID string. Candidate k is drawn with a seed
/// derived from (cfg.seed, k), so the output does not depend on thread count.
/// Throws GenerationError when 20 n candidates do not yield n unique pairs.
std::vector<DatasetPair> generate_dataset(const GeneratorConfig& cfg, std::size_t n);

/// Seed of the k-th candidate in generate_dataset.
std::uint64_t candidate_seed(std::uint64_t seed, std::uint64_t k);

}  // namespace pidgen
