#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pidgen/graph.hpp"

namespace pidgen {

nlohmann::json graph_to_json(const FlowsheetGraph& g);
/// Throws GraphError on schema violations or invalid topology.
FlowsheetGraph graph_from_json(const nlohmann::json& j);

/// One graph per line.
void write_graphs_jsonl(std::ostream& os, const std::vector<FlowsheetGraph>& graphs);
std::vector<FlowsheetGraph> read_graphs_jsonl(std::istream& is);

}  // namespace pidgen
