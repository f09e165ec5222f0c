#include <algorithm>
#include <deque>
#include <map>
#include <numeric>
#include <unordered_set>

#include "pidgen/errors.hpp"
#include "pidgen/hash.hpp"
#include "pidgen/sfiles.hpp"

namespace pidgen {

namespace {

constexpr int kMaxRecycles = 9;

enum class ItemKind { kUnit, kText };

struct Item {
  ItemKind kind;
  std::size_t node = 0;  // kUnit
  std::string text;      // kText
};

using Items = std::vector<Item>;

struct NodeKey {
  std::string label;
  std::uint64_t color;
  auto operator<=>(const NodeKey&) const = default;
};

class Serializer {
 public:
  Serializer(const FlowsheetGraph& g, const std::function<std::uint64_t(int)>* priority)
      : g_(g), priority_(priority), n_(g.size()), visited_(n_, false), tree_(g.edges().size(), false) {
    const auto colors = refine_colors(g);
    keys_.reserve(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      const auto& node = g.nodes()[i];
      std::string label = node.unit_class;
      if (node.letter_code) label += "{" + *node.letter_code + "}";
      keys_.push_back(NodeKey{std::move(label), colors[i]});
    }
    for (std::size_t e = 0; e < g.edges().size(); ++e) {
      const auto& edge = g.edges()[e];
      if (edge.kind != EdgeKind::kMaterial) continue;
      for (const auto& tag : edge.tags) {
        const bool digits = !tag.empty() && std::all_of(tag.begin(), tag.end(), [](char c) { return c >= '0' && c <= '9'; });
        if (tag.empty() || digits || tag.find_first_of("{}") != std::string::npos) {
          throw SerializeError("stream tag '" + tag + "' cannot be written");
        }
      }
    }
  }

  std::string run() {
    Items items;
    auto components = weak_components();
    std::vector<bool> comp_done(components.size(), false);
    bool first_stream = true;
    for (std::size_t done = 0; done < components.size(); ++done) {
      const std::size_t c = next_component(components, comp_done);
      comp_done[c] = true;
      for (;;) {
        auto start = pick_start(components[c]);
        if (!start) break;
        if (!first_stream) items.push_back(Item{ItemKind::kText, 0, "n|"});
        first_stream = false;
        Items sub = visit(*start);
        items.insert(items.end(), sub.begin(), sub.end());
      }
    }
    return render(items);
  }

 private:
  const FlowsheetGraph& g_;
  const std::function<std::uint64_t(int)>* priority_;
  std::size_t n_;
  std::vector<NodeKey> keys_;
  std::vector<bool> visited_;
  std::vector<bool> tree_;
  std::vector<int> group_order_;  // equipment groups in order of first emission

  std::size_t idx(int id) const { return g_.index_of(id); }

  bool randomized() const { return priority_ != nullptr; }
  std::uint64_t prio(std::size_t i) const { return (*priority_)(g_.nodes()[i].id); }

  std::vector<std::vector<std::size_t>> weak_components() const {
    std::vector<int> comp(n_, -1);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n_; ++s) {
      if (comp[s] != -1) continue;
      std::vector<std::size_t> members;
      std::deque<std::size_t> q{s};
      comp[s] = static_cast<int>(out.size());
      while (!q.empty()) {
        auto u = q.front();
        q.pop_front();
        members.push_back(u);
        auto touch = [&](std::size_t v) {
          if (comp[v] == -1) {
            comp[v] = static_cast<int>(out.size());
            q.push_back(v);
          }
        };
        for (auto e : g_.out_edges(u)) {
          if (g_.edges()[e].kind == EdgeKind::kMaterial) touch(idx(g_.edges()[e].dst));
        }
        for (auto e : g_.in_edges(u)) {
          if (g_.edges()[e].kind == EdgeKind::kMaterial) touch(idx(g_.edges()[e].src));
        }
      }
      out.push_back(std::move(members));
    }
    return out;
  }

  std::uint64_t component_hash(const std::vector<std::size_t>& members) const {
    std::vector<std::uint64_t> colors;
    for (auto m : members) colors.push_back(keys_[m].color);
    std::sort(colors.begin(), colors.end());
    std::uint64_t h = 0;
    for (auto c : colors) h = hash_combine(h, c);
    return h;
  }

  // Components sharing an already written equipment group come next, in the
  // order those groups first appeared; otherwise the largest component.
  std::size_t next_component(const std::vector<std::vector<std::size_t>>& comps,
                             const std::vector<bool>& done) const {
    std::size_t best = comps.size();
    std::size_t best_group_rank = SIZE_MAX;
    for (std::size_t c = 0; c < comps.size(); ++c) {
      if (done[c]) continue;
      for (auto m : comps[c]) {
        const auto& grp = g_.nodes()[m].equipment_group;
        if (!grp) continue;
        auto it = std::find(group_order_.begin(), group_order_.end(), *grp);
        if (it == group_order_.end()) continue;
        auto rank = static_cast<std::size_t>(it - group_order_.begin());
        if (rank < best_group_rank) {
          best_group_rank = rank;
          best = c;
        }
      }
    }
    if (best != comps.size()) return best;
    for (std::size_t c = 0; c < comps.size(); ++c) {
      if (done[c]) continue;
      if (best == comps.size()) {
        best = c;
        continue;
      }
      const auto& a = comps[c];
      const auto& b = comps[best];
      if (a.size() != b.size()) {
        if (a.size() > b.size()) best = c;
        continue;
      }
      if (component_hash(a) < component_hash(b)) best = c;
    }
    return best;
  }

  std::size_t reach(std::size_t from) const {
    std::vector<bool> seen(n_, false);
    std::vector<std::size_t> stack{from};
    seen[from] = true;
    std::size_t count = 0;
    while (!stack.empty()) {
      auto u = stack.back();
      stack.pop_back();
      ++count;
      for (auto e : g_.out_edges(u)) {
        const auto& edge = g_.edges()[e];
        if (edge.kind != EdgeKind::kMaterial) continue;
        auto v = idx(edge.dst);
        if (!seen[v] && !visited_[v]) {
          seen[v] = true;
          stack.push_back(v);
        }
      }
    }
    return count;
  }

  std::optional<std::size_t> pick_start(const std::vector<std::size_t>& members) const {
    std::optional<std::size_t> best;
    std::size_t best_reach = 0;
    bool best_source = false;
    for (auto m : members) {
      if (visited_[m]) continue;
      const bool source = g_.material_in_degree(m) == 0;
      const std::size_t r = reach(m);
      if (!best) {
        best = m;
        best_reach = r;
        best_source = source;
        continue;
      }
      if (source != best_source) {
        if (source) {
          best = m;
          best_reach = r;
          best_source = source;
        }
        continue;
      }
      if (r != best_reach) {
        if (r > best_reach) {
          best = m;
          best_reach = r;
        }
        continue;
      }
      if (keys_[m] < keys_[*best]) best = m;
    }
    return best;
  }

  // Feed chain ending in `p` that can be written as an incoming branch into `u`.
  std::optional<std::vector<std::size_t>> incoming_chain(std::size_t p, std::size_t u) const {
    std::vector<std::size_t> chain;
    std::unordered_set<std::size_t> on_chain;
    std::size_t c = p;
    for (;;) {
      if (visited_[c] || c == u || on_chain.contains(c)) return std::nullopt;
      if (g_.material_out_degree(c) != 1) return std::nullopt;
      chain.push_back(c);
      on_chain.insert(c);
      const std::size_t in = g_.material_in_degree(c);
      if (in == 0) break;
      if (in > 1) return std::nullopt;
      for (auto e : g_.in_edges(c)) {
        if (g_.edges()[e].kind == EdgeKind::kMaterial) {
          c = idx(g_.edges()[e].src);
          break;
        }
      }
    }
    std::reverse(chain.begin(), chain.end());
    return chain;
  }

  std::optional<std::size_t> material_edge(std::size_t from, std::size_t to) const {
    for (auto e : g_.out_edges(from)) {
      const auto& edge = g_.edges()[e];
      if (edge.kind == EdgeKind::kMaterial && idx(edge.dst) == to && !tree_[e]) return e;
    }
    return std::nullopt;
  }

  void emit_unit(Items& items, std::size_t u) {
    visited_[u] = true;
    const auto& grp = g_.nodes()[u].equipment_group;
    if (grp && std::find(group_order_.begin(), group_order_.end(), *grp) == group_order_.end()) {
      group_order_.push_back(*grp);
    }
    items.push_back(Item{ItemKind::kUnit, u, {}});
  }

  static void emit_tags(Items& items, const FlowEdge& e) {
    for (const auto& t : e.tags) items.push_back(Item{ItemKind::kText, 0, "{" + t + "}"});
  }

  Items visit(std::size_t u) {
    Items items;
    emit_unit(items, u);

    // Incoming feed chains.
    std::vector<std::pair<std::size_t, std::size_t>> ins;  // (edge, pred)
    for (auto e : g_.in_edges(u)) {
      const auto& edge = g_.edges()[e];
      if (edge.kind != EdgeKind::kMaterial || !edge.tags.empty()) continue;
      auto p = idx(edge.src);
      if (!visited_[p]) ins.emplace_back(e, p);
    }
    sort_by_order(ins, /*use_reach=*/false);
    for (auto [e, p] : ins) {
      if (tree_[e] || visited_[p]) continue;
      auto chain = incoming_chain(p, u);
      if (!chain) continue;
      items.push_back(Item{ItemKind::kText, 0, "<&|"});
      for (std::size_t k = 0; k < chain->size(); ++k) {
        const std::size_t c = (*chain)[k];
        if (k > 0) {
          auto ce = *material_edge((*chain)[k - 1], c);
          tree_[ce] = true;
          emit_tags(items, g_.edges()[ce]);
        }
        emit_unit(items, c);
      }
      tree_[e] = true;
      items.push_back(Item{ItemKind::kText, 0, "&|"});
    }

    // Outgoing branches.
    std::vector<std::pair<std::size_t, std::size_t>> outs;  // (edge, succ)
    std::unordered_set<std::size_t> seen_succ;
    for (auto e : g_.out_edges(u)) {
      const auto& edge = g_.edges()[e];
      if (edge.kind != EdgeKind::kMaterial) continue;
      auto w = idx(edge.dst);
      if (visited_[w] || !seen_succ.insert(w).second) continue;
      outs.emplace_back(e, w);
    }
    sort_by_order(outs, /*use_reach=*/true);
    std::vector<Items> children;
    for (auto [e, w] : outs) {
      if (visited_[w]) continue;
      tree_[e] = true;
      Items child;
      emit_tags(child, g_.edges()[e]);
      Items sub = visit(w);
      child.insert(child.end(), sub.begin(), sub.end());
      children.push_back(std::move(child));
    }
    for (std::size_t k = 0; k < children.size(); ++k) {
      const bool last = k + 1 == children.size();
      if (!last) items.push_back(Item{ItemKind::kText, 0, "["});
      items.insert(items.end(), children[k].begin(), children[k].end());
      if (!last) items.push_back(Item{ItemKind::kText, 0, "]"});
    }
    return items;
  }

  void sort_by_order(std::vector<std::pair<std::size_t, std::size_t>>& v, bool use_reach) const {
    if (randomized()) {
      std::stable_sort(v.begin(), v.end(), [&](const auto& a, const auto& b) { return prio(a.second) < prio(b.second); });
      return;
    }
    std::vector<std::size_t> r(n_, 0);
    if (use_reach) {
      for (const auto& [e, w] : v) r[w] = reach(w);
    }
    std::stable_sort(v.begin(), v.end(), [&](const auto& a, const auto& b) {
      if (r[a.second] != r[b.second]) return r[a.second] < r[b.second];
      return keys_[a.second] < keys_[b.second];
    });
  }

  std::string render(const Items& items) {
    std::vector<std::size_t> position(n_, 0);
    for (std::size_t k = 0; k < items.size(); ++k) {
      if (items[k].kind == ItemKind::kUnit) position[items[k].node] = k;
    }
    // Per node: numbered connection endpoints as (other endpoint position, edge).
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> rec_in(n_), rec_out(n_), sig_out(n_), sig_in(n_);
    for (std::size_t e = 0; e < g_.edges().size(); ++e) {
      const auto& edge = g_.edges()[e];
      const auto s = idx(edge.src), d = idx(edge.dst);
      if (edge.kind == EdgeKind::kSignal) {
        sig_out[s].emplace_back(position[d], e);
        sig_in[d].emplace_back(position[s], e);
      } else if (!tree_[e]) {
        if (!edge.tags.empty()) throw SerializeError("tagged stream closes a recycle");
        rec_out[s].emplace_back(position[d], e);
        rec_in[d].emplace_back(position[s], e);
      }
    }
    std::vector<int> number(g_.edges().size(), 0);
    int next_recycle = 1, next_signal = 1;
    std::map<int, int> group_label;
    std::string out;

    auto write = [&](std::vector<std::pair<std::size_t, std::size_t>>& ends, const char* prefix, int& counter,
                     bool recycle) {
      std::sort(ends.begin(), ends.end());
      for (auto [pos, e] : ends) {
        if (number[e] == 0) {
          number[e] = counter++;
          if (recycle && number[e] > kMaxRecycles) throw SerializeError("more than nine material recycles");
        }
        out += prefix;
        out += std::to_string(number[e]);
      }
    };

    for (const auto& item : items) {
      if (item.kind == ItemKind::kText) {
        out += item.text;
        continue;
      }
      const auto u = item.node;
      const auto& node = g_.nodes()[u];
      out += "(" + node.unit_class + ")";
      if (node.equipment_group) {
        auto [it, inserted] = group_label.emplace(*node.equipment_group, static_cast<int>(group_label.size()) + 1);
        out += "{" + std::to_string(it->second) + "}";
      }
      if (node.letter_code) out += "{" + *node.letter_code + "}";
      write(rec_in[u], "<", next_recycle, true);
      write(rec_out[u], "", next_recycle, true);
      write(sig_out[u], "_", next_signal, false);
      write(sig_in[u], "<_", next_signal, false);
    }
    return out;
  }
};

}  // namespace

SfilesString serialize(const FlowsheetGraph& g, const BranchOrderPolicy& policy) {
  if (g.size() == 0) throw SerializeError("empty flowsheet");
  if (policy.mode == BranchMode::kCanonical) {
    return SfilesString{Serializer(g, nullptr).run(), true};
  }
  if (!policy.seed) throw SerializeError("random branch order requires a seed");
  const std::uint64_t seed = *policy.seed;
  std::function<std::uint64_t(int)> prio = [seed](int id) {
    return mix64(seed ^ mix64(static_cast<std::uint64_t>(id) + 0x51ed2701ULL));
  };
  return SfilesString{Serializer(g, &prio).run(), false};
}

std::string serialize_with_priorities(const FlowsheetGraph& g, const std::function<std::uint64_t(int)>& priority) {
  if (g.size() == 0) throw SerializeError("empty flowsheet");
  return Serializer(g, &priority).run();
}

SfilesString canonicalize(const SfilesString& s) { return serialize(parse(s.text), BranchOrderPolicy::canonical()); }

std::vector<SfilesString> augment(const SfilesString& s, std::size_t n_variants, std::uint64_t seed) {
  if (n_variants == 0) throw SerializeError("n_variants must be at least 1");
  const FlowsheetGraph g = parse(s.text);
  std::vector<SfilesString> out;
  std::unordered_set<std::string> seen;
  const std::size_t budget = 8 * n_variants + 8;
  for (std::size_t attempt = 0; attempt < budget && out.size() < n_variants; ++attempt) {
    auto v = serialize(g, BranchOrderPolicy::random(mix64(seed + attempt)));
    if (seen.insert(v.text).second) out.push_back(std::move(v));
  }
  for (std::size_t k = 0; out.size() < n_variants; ++k) out.push_back(out[k % seen.size()]);
  return out;
}

}  // namespace pidgen
