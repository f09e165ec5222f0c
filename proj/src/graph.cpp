#include "pidgen/graph.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <unordered_set>

#include "pidgen/errors.hpp"
#include "pidgen/hash.hpp"
#include "pidgen/tokenizer.hpp"

namespace pidgen {

bool is_multi_stream_class(std::string_view unit_class) { return unit_class == "hex"; }

FlowsheetGraph::FlowsheetGraph(std::vector<UnitNode> nodes, std::vector<FlowEdge> edges)
    : nodes_(std::move(nodes)), edges_(std::move(edges)) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (!index_.emplace(n.id, i).second) {
      throw GraphError("duplicate node id " + std::to_string(n.id));
    }
    if (n.unit_class.empty()) throw GraphError("node " + std::to_string(n.id) + " has no class");
    if (n.letter_code.has_value() != n.is_control()) {
      throw GraphError("node " + std::to_string(n.id) +
                       ": letter code must be present exactly for control units");
    }
    if ((n.compartment || n.equipment_group) && !is_multi_stream_class(n.unit_class)) {
      throw GraphError("node " + std::to_string(n.id) + ": class '" + n.unit_class +
                       "' cannot carry a compartment");
    }
    if (n.compartment && *n.compartment < 1) {
      throw GraphError("node " + std::to_string(n.id) + ": compartment must be positive");
    }
  }
  out_.resize(nodes_.size());
  in_.resize(nodes_.size());
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto& edge = edges_[e];
    auto s = index_.find(edge.src);
    auto d = index_.find(edge.dst);
    if (s == index_.end() || d == index_.end()) {
      throw GraphError("edge references unknown node");
    }
    if (edge.src == edge.dst) throw GraphError("self-loop on node " + std::to_string(edge.src));
    if (edge.kind == EdgeKind::kSignal) {
      if (!edge.tags.empty()) throw GraphError("signal edge carries stream tags");
      // Control-to-control signals (e.g. FT feeding FFC) are allowed.
      if (!nodes_[s->second].is_control() && !nodes_[d->second].is_control()) {
        throw GraphError("signal edge without a control unit endpoint");
      }
    }
    out_[s->second].push_back(e);
    in_[d->second].push_back(e);
  }
}

std::size_t FlowsheetGraph::index_of(int id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw GraphError("unknown node id " + std::to_string(id));
  return it->second;
}

std::size_t FlowsheetGraph::material_in_degree(std::size_t idx) const {
  return static_cast<std::size_t>(std::count_if(in_[idx].begin(), in_[idx].end(), [&](std::size_t e) {
    return edges_[e].kind == EdgeKind::kMaterial;
  }));
}

std::size_t FlowsheetGraph::material_out_degree(std::size_t idx) const {
  return static_cast<std::size_t>(std::count_if(out_[idx].begin(), out_[idx].end(), [&](std::size_t e) {
    return edges_[e].kind == EdgeKind::kMaterial;
  }));
}

namespace {

std::uint64_t node_label(const UnitNode& n) {
  std::uint64_t h = hash_string(n.unit_class);
  if (n.letter_code) h = hash_combine(h, hash_string(*n.letter_code));
  h = hash_combine(h, n.equipment_group ? 1 : 0);
  return h;
}

std::uint64_t edge_label(const FlowEdge& e) {
  std::uint64_t h = e.kind == EdgeKind::kMaterial ? 0x6d : 0x73;
  for (const auto& t : e.tags) h = hash_combine(h, hash_string(t));
  return h;
}

// Group mates per node index.
std::vector<std::vector<std::size_t>> group_mates(const FlowsheetGraph& g) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.nodes()[i].equipment_group) groups[*g.nodes()[i].equipment_group].push_back(i);
  }
  std::vector<std::vector<std::size_t>> mates(g.size());
  for (const auto& [gid, members] : groups) {
    for (auto a : members) {
      for (auto b : members) {
        if (a != b) mates[a].push_back(b);
      }
    }
  }
  return mates;
}

}  // namespace

std::vector<std::uint64_t> refine_colors(const FlowsheetGraph& g, int max_rounds) {
  const std::size_t n = g.size();
  std::vector<std::uint64_t> color(n);
  for (std::size_t i = 0; i < n; ++i) color[i] = node_label(g.nodes()[i]);
  const auto mates = group_mates(g);

  auto distinct = [](std::vector<std::uint64_t> c) {
    std::sort(c.begin(), c.end());
    return static_cast<std::size_t>(std::unique(c.begin(), c.end()) - c.begin());
  };
  std::size_t classes = distinct(color);
  std::vector<std::uint64_t> sig;
  for (int round = 0; round < max_rounds; ++round) {
    std::vector<std::uint64_t> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      sig.clear();
      for (auto e : g.out_edges(i)) {
        const auto& edge = g.edges()[e];
        sig.push_back(hash_combine(hash_combine(1, edge_label(edge)), color[g.index_of(edge.dst)]));
      }
      for (auto e : g.in_edges(i)) {
        const auto& edge = g.edges()[e];
        sig.push_back(hash_combine(hash_combine(2, edge_label(edge)), color[g.index_of(edge.src)]));
      }
      for (auto m : mates[i]) sig.push_back(hash_combine(3, color[m]));
      std::sort(sig.begin(), sig.end());
      std::uint64_t h = color[i];
      for (auto s : sig) h = hash_combine(h, s);
      next[i] = h;
    }
    color.swap(next);
    std::size_t now = distinct(color);
    // Refinement is monotone; once the partition is stable further rounds only rename.
    if (now == classes && round > 0) break;
    classes = now;
  }
  return color;
}

namespace {

struct IsoIndex {
  const FlowsheetGraph* g;
  // For the node at position i: neighbour position -> sorted edge labels (outgoing).
  std::vector<std::map<std::size_t, std::vector<std::uint64_t>>> out;
  std::vector<int> group;  // -1 when ungrouped

  explicit IsoIndex(const FlowsheetGraph& graph) : g(&graph), out(graph.size()), group(graph.size(), -1) {
    for (const auto& e : graph.edges()) {
      out[graph.index_of(e.src)][graph.index_of(e.dst)].push_back(edge_label(e));
    }
    for (auto& m : out) {
      for (auto& [k, v] : m) std::sort(v.begin(), v.end());
    }
    for (std::size_t i = 0; i < graph.size(); ++i) {
      if (graph.nodes()[i].equipment_group) group[i] = *graph.nodes()[i].equipment_group;
    }
  }

  const std::vector<std::uint64_t>* edges_between(std::size_t a, std::size_t b) const {
    auto it = out[a].find(b);
    return it == out[a].end() ? nullptr : &it->second;
  }
};

bool same_edges(const std::vector<std::uint64_t>* x, const std::vector<std::uint64_t>* y) {
  if (!x || !y) return x == y;
  return *x == *y;
}

}  // namespace

bool isomorphic(const FlowsheetGraph& a, const FlowsheetGraph& b) {
  if (a.size() != b.size() || a.edges().size() != b.edges().size()) return false;
  const std::size_t n = a.size();
  auto ca = refine_colors(a);
  auto cb = refine_colors(b);
  {
    auto sa = ca, sb = cb;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    if (sa != sb) return false;
  }
  IsoIndex ia(a), ib(b);

  // Match nodes in order of rarest colour first, then by connectivity to already ordered nodes.
  std::map<std::uint64_t, std::size_t> class_size;
  for (auto c : ca) ++class_size[c];
  std::vector<std::size_t> order;
  std::vector<bool> placed(n, false);
  std::vector<std::vector<std::size_t>> neigh(n);
  for (const auto& e : a.edges()) {
    auto s = a.index_of(e.src), d = a.index_of(e.dst);
    neigh[s].push_back(d);
    neigh[d].push_back(s);
  }
  while (order.size() < n) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (placed[i]) continue;
      if (best == n) {
        best = i;
        continue;
      }
      auto connected = [&](std::size_t v) {
        return std::any_of(neigh[v].begin(), neigh[v].end(), [&](std::size_t w) { return placed[w]; });
      };
      bool ci = connected(i), cbest = connected(best);
      if (ci != cbest) {
        if (ci) best = i;
        continue;
      }
      if (class_size[ca[i]] < class_size[ca[best]]) best = i;
    }
    placed[best] = true;
    order.push_back(best);
  }

  std::vector<long> map_ab(n, -1), map_ba(n, -1);
  std::function<bool(std::size_t)> extend = [&](std::size_t depth) -> bool {
    if (depth == n) return true;
    const std::size_t u = order[depth];
    for (std::size_t v = 0; v < n; ++v) {
      if (map_ba[v] != -1 || cb[v] != ca[u]) continue;
      bool ok = true;
      for (std::size_t k = 0; k < depth && ok; ++k) {
        const std::size_t up = order[k];
        const auto vp = static_cast<std::size_t>(map_ab[up]);
        ok = same_edges(ia.edges_between(u, up), ib.edges_between(v, vp)) &&
             same_edges(ia.edges_between(up, u), ib.edges_between(vp, v));
        if (ok) {
          bool ga = ia.group[u] != -1 && ia.group[u] == ia.group[up];
          bool gb = ib.group[v] != -1 && ib.group[v] == ib.group[vp];
          ok = ga == gb;
        }
      }
      if (!ok) continue;
      map_ab[u] = static_cast<long>(v);
      map_ba[v] = static_cast<long>(u);
      if (extend(depth + 1)) return true;
      map_ab[u] = -1;
      map_ba[v] = -1;
    }
    return false;
  };
  return extend(0);
}

FlowsheetGraph strip_controls(const FlowsheetGraph& g, bool remove_valves) {
  std::vector<UnitNode> nodes = g.nodes();
  std::vector<FlowEdge> edges;
  for (const auto& e : g.edges()) {
    if (e.kind == EdgeKind::kMaterial) edges.push_back(e);
  }

  auto remove_class = [&](std::string_view cls) {
    std::vector<int> doomed;
    for (const auto& n : nodes) {
      if (n.unit_class == cls) doomed.push_back(n.id);
    }
    for (int id : doomed) {
      std::vector<std::size_t> ins, outs;
      for (std::size_t e = 0; e < edges.size(); ++e) {
        if (edges[e].dst == id) ins.push_back(e);
        if (edges[e].src == id) outs.push_back(e);
      }
      if (ins.size() > 1 || outs.size() > 1) {
        throw StripError("cannot splice " + std::string(cls) + " node " + std::to_string(id) + " with " +
                         std::to_string(ins.size()) + " inlets and " + std::to_string(outs.size()) +
                         " outlets");
      }
      std::optional<FlowEdge> spliced;
      if (ins.size() == 1 && outs.size() == 1) {
        const auto& in = edges[ins[0]];
        const auto& out = edges[outs[0]];
        if (in.src != out.dst) {
          FlowEdge e{in.src, out.dst, EdgeKind::kMaterial, in.tags};
          e.tags.insert(e.tags.end(), out.tags.begin(), out.tags.end());
          spliced = std::move(e);
        }
      }
      // Keep the spliced edge at the position of the inlet edge so edge order stays stable.
      std::vector<FlowEdge> kept;
      kept.reserve(edges.size());
      for (std::size_t e = 0; e < edges.size(); ++e) {
        if (edges[e].src == id || edges[e].dst == id) {
          if (spliced && !ins.empty() && e == ins[0]) kept.push_back(*spliced);
          continue;
        }
        kept.push_back(edges[e]);
      }
      edges.swap(kept);
    }
    std::erase_if(nodes, [&](const UnitNode& n) { return n.unit_class == cls; });
  };

  remove_class(kControlClass);
  if (remove_valves) remove_class(kValveClass);
  return FlowsheetGraph(std::move(nodes), std::move(edges));
}

DatasetStats stats(std::span<const FlowsheetGraph> graphs, const Vocabulary& vocab) {
  if (graphs.empty()) throw EmptyDataset("stats of an empty dataset");
  DatasetStats s;
  s.n_samples = graphs.size();
  double sum = 0.0;
  for (const auto& g : graphs) sum += static_cast<double>(g.size());
  s.mean_nodes = sum / static_cast<double>(graphs.size());
  double sq = 0.0;
  for (const auto& g : graphs) {
    const double d = static_cast<double>(g.size()) - s.mean_nodes;
    sq += d * d;
  }
  s.std_nodes = std::sqrt(sq / static_cast<double>(graphs.size()));
  s.vocab_size = vocab.size();
  s.regular_vocab_size = vocab.regular_size();
  return s;
}

}  // namespace pidgen
