#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace pidgen {

inline constexpr std::string_view kControlClass = "C";
inline constexpr std::string_view kValveClass = "v";

/// Classes whose nodes may be compartments of one physical multi-stream device.
bool is_multi_stream_class(std::string_view unit_class);

struct UnitNode {
  int id = 0;
  std::string unit_class;
  /// 1-based compartment index within the equipment group.
  std::optional<int> compartment;
  /// Control function of a control unit, e.g. TC or FFC.
  std::optional<std::string> letter_code;
  /// Nodes sharing a group id are compartments of one device.
  std::optional<int> equipment_group;

  bool is_control() const { return unit_class == kControlClass; }
  friend bool operator==(const UnitNode&, const UnitNode&) = default;
};

enum class EdgeKind { kMaterial, kSignal };

struct FlowEdge {
  int src = 0;
  int dst = 0;
  EdgeKind kind = EdgeKind::kMaterial;
  std::vector<std::string> tags;

  friend bool operator==(const FlowEdge&, const FlowEdge&) = default;
};

/// Directed multigraph of unit operations, control units, material streams
/// and signal lines. Validated on construction and immutable afterwards.
class FlowsheetGraph {
 public:
  FlowsheetGraph() = default;
  FlowsheetGraph(std::vector<UnitNode> nodes, std::vector<FlowEdge> edges);

  const std::vector<UnitNode>& nodes() const { return nodes_; }
  const std::vector<FlowEdge>& edges() const { return edges_; }
  std::size_t size() const { return nodes_.size(); }

  bool contains(int id) const { return index_.contains(id); }
  /// Position of node `id` in nodes(). Throws GraphError if absent.
  std::size_t index_of(int id) const;
  const UnitNode& node(int id) const { return nodes_[index_of(id)]; }

  /// Edge indices leaving / entering the node at position `idx`.
  const std::vector<std::size_t>& out_edges(std::size_t idx) const { return out_[idx]; }
  const std::vector<std::size_t>& in_edges(std::size_t idx) const { return in_[idx]; }

  std::size_t material_in_degree(std::size_t idx) const;
  std::size_t material_out_degree(std::size_t idx) const;

 private:
  std::vector<UnitNode> nodes_;
  std::vector<FlowEdge> edges_;
  std::unordered_map<int, std::size_t> index_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::vector<std::size_t>> in_;
};

/// Isomorphism-invariant node colours from iterated neighbourhood hashing.
/// Colours from different graphs are directly comparable.
std::vector<std::uint64_t> refine_colors(const FlowsheetGraph& g, int max_rounds = 12);

/// True iff a bijection between the nodes preserves class, letter codes,
/// equipment-group partition, edge direction, edge kind and edge tags.
bool isomorphic(const FlowsheetGraph& a, const FlowsheetGraph& b);

/// Removes control units and signal lines (and valves when requested).
/// In-line units are spliced out; dangling units are dropped with their edge.
FlowsheetGraph strip_controls(const FlowsheetGraph& g, bool remove_valves);

class Vocabulary;

struct DatasetStats {
  std::size_t n_samples = 0;
  double mean_nodes = 0.0;
  double std_nodes = 0.0;
  /// Including the four special tokens.
  std::size_t vocab_size = 0;
  std::size_t regular_vocab_size = 0;
};

/// Node-count statistics (population standard deviation).
DatasetStats stats(std::span<const FlowsheetGraph> graphs, const Vocabulary& vocab);

}  // namespace pidgen
