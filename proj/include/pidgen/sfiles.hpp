#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pidgen/graph.hpp"

namespace pidgen {

struct SfilesString {
  std::string text;
  bool canonical = false;

  friend bool operator==(const SfilesString&, const SfilesString&) = default;
};

enum class BranchMode { kCanonical, kRandom };

struct BranchOrderPolicy {
  BranchMode mode = BranchMode::kCanonical;
  /// Required for kRandom.
  std::optional<std::uint64_t> seed;

  static BranchOrderPolicy canonical() { return {}; }
  static BranchOrderPolicy random(std::uint64_t seed) { return {BranchMode::kRandom, seed}; }
};

/// Writes the graph as SFILES 2.0. Canonical mode ranks branches by an
/// isomorphism-invariant key, random mode draws branch order from the seed.
/// Throws SerializeError for topologies outside the supported grammar
/// (more than nine material recycles, tagged recycle edges).
SfilesString serialize(const FlowsheetGraph& g, const BranchOrderPolicy& policy = {});

/// Random-mode serialization with caller-supplied branch priorities keyed by
/// node id (lower priority is written first). Two graphs sharing node ids
/// get consistent branch decisions where their topology coincides.
std::string serialize_with_priorities(const FlowsheetGraph& g,
                                      const std::function<std::uint64_t(int node_id)>& priority);

/// Throws ParseError with the byte offset of the offending token.
FlowsheetGraph parse(std::string_view sfiles);
inline FlowsheetGraph parse(const SfilesString& s) { return parse(s.text); }

SfilesString canonicalize(const SfilesString& s);
inline SfilesString canonicalize(std::string_view s) { return canonicalize(SfilesString{std::string(s), false}); }

/// n_variants random re-serializations of the same flowsheet. Variants are
/// distinct while enough of them exist; the list is padded with repeats
/// when the flowsheet has too little branching freedom.
std::vector<SfilesString> augment(const SfilesString& s, std::size_t n_variants, std::uint64_t seed);

}  // namespace pidgen
