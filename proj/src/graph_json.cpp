#include "pidgen/graph_json.hpp"

#include <string>

#include "pidgen/errors.hpp"

namespace pidgen {

using nlohmann::json;

json graph_to_json(const FlowsheetGraph& g) {
  json nodes = json::array();
  for (const auto& n : g.nodes()) {
    json jn{{"id", n.id}, {"class", n.unit_class}};
    if (n.compartment) jn["compartment"] = *n.compartment;
    if (n.letter_code) jn["letter_code"] = *n.letter_code;
    if (n.equipment_group) jn["equipment_group"] = *n.equipment_group;
    nodes.push_back(std::move(jn));
  }
  json edges = json::array();
  for (const auto& e : g.edges()) {
    edges.push_back({{"src", e.src},
                     {"dst", e.dst},
                     {"kind", e.kind == EdgeKind::kMaterial ? "material" : "signal"},
                     {"tags", e.tags}});
  }
  return json{{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

FlowsheetGraph graph_from_json(const json& j) {
  try {
    std::vector<UnitNode> nodes;
    for (const auto& jn : j.at("nodes")) {
      UnitNode n;
      n.id = jn.at("id").get<int>();
      n.unit_class = jn.at("class").get<std::string>();
      if (jn.contains("compartment") && !jn["compartment"].is_null()) n.compartment = jn["compartment"].get<int>();
      if (jn.contains("letter_code") && !jn["letter_code"].is_null()) {
        n.letter_code = jn["letter_code"].get<std::string>();
      }
      if (jn.contains("equipment_group") && !jn["equipment_group"].is_null()) {
        n.equipment_group = jn["equipment_group"].get<int>();
      }
      nodes.push_back(std::move(n));
    }
    std::vector<FlowEdge> edges;
    for (const auto& je : j.at("edges")) {
      FlowEdge e;
      e.src = je.at("src").get<int>();
      e.dst = je.at("dst").get<int>();
      const auto kind = je.at("kind").get<std::string>();
      if (kind == "material") {
        e.kind = EdgeKind::kMaterial;
      } else if (kind == "signal") {
        e.kind = EdgeKind::kSignal;
      } else {
        throw GraphError("unknown edge kind '" + kind + "'");
      }
      if (je.contains("tags")) e.tags = je["tags"].get<std::vector<std::string>>();
      edges.push_back(std::move(e));
    }
    return FlowsheetGraph(std::move(nodes), std::move(edges));
  } catch (const json::exception& ex) {
    throw GraphError(std::string("malformed graph json: ") + ex.what());
  }
}

void write_graphs_jsonl(std::ostream& os, const std::vector<FlowsheetGraph>& graphs) {
  for (const auto& g : graphs) os << graph_to_json(g).dump() << '\n';
}

std::vector<FlowsheetGraph> read_graphs_jsonl(std::istream& is) {
  std::vector<FlowsheetGraph> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(graph_from_json(json::parse(line)));
    } catch (const json::parse_error& ex) {
      throw GraphError(std::string("malformed graph json line: ") + ex.what());
    }
  }
  return out;
}

}  // namespace pidgen
