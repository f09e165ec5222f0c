#include "pidgen/generator.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <unordered_set>

#include "pidgen/errors.hpp"
#include "pidgen/hash.hpp"

namespace pidgen {

namespace {

constexpr const char* kStates[] = {"start", "reaction", "separation"};
constexpr const char* kTargets[] = {"reaction", "separation", "conditioning"};

// Portable draws on top of the raw engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  bool bernoulli(double p) { return uniform() < p; }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  std::size_t weighted(const std::vector<double>& w) {
    double total = 0.0;
    for (double x : w) total += x;
    double r = uniform() * total;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (r < w[i]) return i;
      r -= w[i];
    }
    return w.size() - 1;
  }

 private:
  std::mt19937_64 engine_;
};

struct SignalTarget {
  bool is_control = false;
  int node = -1;              // base node id
  std::size_t control = 0;    // index within the same control group
};

enum class Where { kEdge, kDangle, kContinuation };

struct ControlRequest {
  std::string letter;
  Where where = Where::kDangle;
  std::size_t edge = 0;  // kEdge
  int node = -1;         // kDangle anchor or kContinuation exit
  std::vector<SignalTarget> targets;
};

using ControlGroup = std::vector<ControlRequest>;

class Builder {
 public:
  Builder(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg), lib_(cfg.library), rng_(rng) {}

  void build() {
    const int stream = build_feeds();
    struct Open {
      int node;
      std::string state;
    };
    std::vector<Open> queue{{stream, "start"}};
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const Open open = queue[head];
      if (current_size() > cfg_.branch_node_cap) {
        connect(open.node, add_node("prod"));
        continue;
      }
      const std::string next = sample_transition(open.state);
      if (next == "conditioning") {
        instantiate(pick(PatternKind::kConditioning), open.node);
      } else if (next == "reaction") {
        for (int x : build_reaction(open.node)) queue.push_back({x, "reaction"});
      } else {
        for (int x : instantiate(pick(PatternKind::kSeparation), open.node).exits) queue.push_back({x, "separation"});
      }
    }
  }

  FlowsheetGraph base_graph() const { return FlowsheetGraph(nodes_, edges_); }

  FlowsheetGraph pid_graph() const {
    std::vector<UnitNode> nodes = nodes_;
    std::vector<FlowEdge> edges = edges_;
    std::map<std::size_t, std::size_t> tail;  // original edge -> edge currently ending at its target
    auto tail_of = [&](std::size_t e) {
      auto it = tail.find(e);
      return it == tail.end() ? e : it->second;
    };
    for (const auto& group : controls_) {
      std::vector<int> ids;
      for (const auto& req : group) {
        const int c = static_cast<int>(nodes.size());
        UnitNode n;
        n.id = c;
        n.unit_class = std::string(kControlClass);
        n.letter_code = req.letter;
        nodes.push_back(std::move(n));
        ids.push_back(c);
        if (req.where == Where::kDangle) {
          edges.push_back(FlowEdge{req.node, c, EdgeKind::kMaterial, {}});
          continue;
        }
        const std::size_t original = req.where == Where::kEdge ? req.edge : continuation_.at(req.node);
        const std::size_t t = tail_of(original);
        const int dst = edges[t].dst;
        edges[t].dst = c;
        edges.push_back(FlowEdge{c, dst, EdgeKind::kMaterial, {}});
        tail[original] = edges.size() - 1;
      }
      for (std::size_t k = 0; k < group.size(); ++k) {
        for (const auto& t : group[k].targets) {
          const int dst = t.is_control ? ids.at(t.control) : t.node;
          edges.push_back(FlowEdge{ids[k], dst, EdgeKind::kSignal, {}});
        }
      }
    }
    return FlowsheetGraph(std::move(nodes), std::move(edges));
  }

 private:
  struct Instance {
    std::map<std::string, int> ids;
    std::vector<int> exits;
    std::size_t inlet_edge = 0;
  };

  const GeneratorConfig& cfg_;
  const PatternLibrary& lib_;
  Rng& rng_;
  std::vector<UnitNode> nodes_;
  std::vector<FlowEdge> edges_;
  std::map<int, std::size_t> continuation_;  // exit node -> edge leaving it into the next sub-process
  std::vector<ControlGroup> controls_;
  std::size_t n_controls_ = 0;
  int next_group_ = 1;

  std::size_t current_size() const { return nodes_.size() + n_controls_; }

  int add_node(const std::string& cls, std::optional<int> group = std::nullopt) {
    UnitNode n;
    n.id = static_cast<int>(nodes_.size());
    n.unit_class = cls;
    if (group) {
      n.equipment_group = *group;
      n.compartment = 1 + static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(), [&](const UnitNode& m) {
                        return m.equipment_group == group;
                      }));
    }
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
  }

  std::size_t add_edge(int src, int dst, std::vector<std::string> tags = {}) {
    edges_.push_back(FlowEdge{src, dst, EdgeKind::kMaterial, std::move(tags)});
    return edges_.size() - 1;
  }

  // Edge from a stream end into the next unit; remembered as that end's continuation.
  std::size_t connect(int from, int to) {
    const std::size_t e = add_edge(from, to);
    continuation_.emplace(from, e);
    return e;
  }

  void add_controls(ControlGroup group) {
    n_controls_ += group.size();
    controls_.push_back(std::move(group));
  }

  std::size_t edge_between(int src, int dst) const {
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      if (edges_[e].src == src && edges_[e].dst == dst) return e;
    }
    throw GenerationError("internal: missing template edge");
  }

  std::string sample_transition(const std::string& state) {
    const auto& row = lib_.transitions.at(state);
    std::vector<std::string> names;
    std::vector<double> w;
    for (const auto& [k, p] : row) {
      names.push_back(k);
      w.push_back(p);
    }
    return names[rng_.weighted(w)];
  }

  const SubProcessPattern& pick(PatternKind kind) {
    auto candidates = lib_.of_kind(kind);
    std::vector<double> w;
    for (const auto* p : candidates) w.push_back(p->weight);
    return *candidates[rng_.weighted(w)];
  }

  Instance instantiate(const SubProcessPattern& p, int upstream) {
    Instance inst;
    std::map<std::string, int> groups;
    for (const auto& tn : p.nodes) {
      std::optional<int> g;
      if (!tn.group.empty()) {
        auto [it, inserted] = groups.emplace(tn.group, next_group_);
        if (inserted) ++next_group_;
        g = it->second;
      }
      inst.ids[tn.key] = add_node(tn.unit_class, g);
    }
    for (const auto& te : p.edges) add_edge(inst.ids.at(te.src), inst.ids.at(te.dst), te.tags);
    inst.inlet_edge = connect(upstream, inst.ids.at(p.inlet));
    for (const auto& x : p.exits) inst.exits.push_back(inst.ids.at(x));

    const auto& scheme = p.control_schemes[rng_.below(p.control_schemes.size())];
    std::map<std::string, std::size_t> local;
    for (std::size_t k = 0; k < scheme.size(); ++k) local[scheme[k].key] = k;
    ControlGroup group;
    for (const auto& slot : scheme) {
      ControlRequest req;
      req.letter = slot.letter_code;
      switch (slot.placement) {
        case ControlPlacement::kInline:
          req.where = Where::kEdge;
          req.edge = edge_between(inst.ids.at(slot.after), inst.ids.at(slot.before));
          break;
        case ControlPlacement::kDangle:
          req.where = Where::kDangle;
          req.node = inst.ids.at(slot.at);
          break;
        case ControlPlacement::kOutlet:
          req.where = Where::kContinuation;
          req.node = inst.ids.at(slot.at);
          break;
        case ControlPlacement::kInlet:
          req.where = Where::kEdge;
          req.edge = inst.inlet_edge;
          break;
      }
      for (const auto& t : slot.signals_to) {
        SignalTarget st;
        if (auto it = local.find(t); it != local.end()) {
          st.is_control = true;
          st.control = it->second;
        } else {
          st.node = inst.ids.at(t);
        }
        req.targets.push_back(st);
      }
      group.push_back(std::move(req));
    }
    if (!group.empty()) add_controls(std::move(group));
    return inst;
  }

  static ControlRequest flow_control(const std::string& letter, std::size_t edge) {
    ControlRequest r;
    r.letter = letter;
    r.where = Where::kEdge;
    r.edge = edge;
    return r;
  }

  static SignalTarget to_node(int node) { return SignalTarget{false, node, 0}; }

  // Returns the stream leaving the feed section.
  int build_feeds() {
    const auto& opt = lib_.options;
    std::vector<double> fw(opt.feed_count_weights.begin(),
                           opt.feed_count_weights.begin() +
                               static_cast<long>(std::min(cfg_.max_feeds, opt.feed_count_weights.size())));
    const std::size_t n_feeds = 1 + rng_.weighted(fw);
    struct Feed {
      int end;
      int valve = -1;
      std::size_t valve_edge = 0;
    };
    std::vector<Feed> feeds;
    for (std::size_t f = 0; f < n_feeds; ++f) {
      int end = add_node("raw");
      const std::size_t ops = rng_.weighted(opt.pretreat_count_weights);
      for (std::size_t k = 0; k < ops; ++k) end = instantiate(pick(PatternKind::kUnitOp), end).exits.front();
      Feed feed{end};
      if (f > 0 || rng_.bernoulli(opt.p_feed_valve)) {
        const int v = add_node("v");
        feed.valve_edge = connect(end, v);
        feed.valve = v;
        feed.end = v;
      }
      feeds.push_back(feed);
    }
    if (n_feeds == 1) {
      const Feed& f = feeds.front();
      if (f.valve >= 0 && rng_.bernoulli(opt.p_reactant_flow_control)) {
        ControlRequest fc = flow_control("FC", f.valve_edge);
        fc.targets.push_back(to_node(f.valve));
        add_controls({fc});
      }
      return f.end;
    }
    const int mix = add_node("mix");
    std::vector<std::size_t> into_mix;
    for (const auto& f : feeds) into_mix.push_back(connect(f.end, mix));
    if (rng_.bernoulli(opt.p_ratio_control)) {
      ControlRequest ft = flow_control("FT", into_mix[0]);
      ft.targets.push_back(SignalTarget{true, -1, 1});
      ControlRequest ffc = flow_control("FFC", feeds[1].valve_edge);
      ffc.targets.push_back(to_node(feeds[1].valve));
      add_controls({ft, ffc});
    } else {
      ControlRequest fc = flow_control("FC", feeds[1].valve_edge);
      fc.targets.push_back(to_node(feeds[1].valve));
      add_controls({fc});
    }
    for (std::size_t f = 2; f < feeds.size(); ++f) {
      ControlRequest fc = flow_control("FC", feeds[f].valve_edge);
      fc.targets.push_back(to_node(feeds[f].valve));
      add_controls({fc});
    }
    return mix;
  }

  std::vector<int> build_reaction(int upstream) {
    const auto& opt = lib_.options;
    int end = upstream;
    std::optional<int> integrated_group;
    const std::size_t ops = rng_.weighted(opt.upstream_count_weights);
    for (std::size_t k = 0; k < ops; ++k) {
      const auto& p = pick(PatternKind::kUnitOp);
      const bool exchanger = std::any_of(p.nodes.begin(), p.nodes.end(), [&](const TemplateNode& n) {
        return n.key == p.inlet && is_multi_stream_class(n.unit_class);
      });
      if (exchanger && !integrated_group && rng_.bernoulli(opt.p_heat_integration)) {
        // Feed-effluent exchanger: the second compartment is placed on the reactor outlet.
        integrated_group = next_group_++;
        const int h = add_node("hex", integrated_group);
        connect(end, h);
        end = h;
        continue;
      }
      end = instantiate(p, end).exits.front();
    }
    int mix = -1;
    if (rng_.bernoulli(opt.p_reactor_recycle)) {
      mix = add_node("mix");
      connect(end, mix);
      end = mix;
    }
    const auto& reactor = pick(PatternKind::kReactor);
    Instance inst = instantiate(reactor, end);

    const std::size_t extra = rng_.weighted(opt.extra_reactant_weights);
    const int port = inst.ids.at(reactor.reactant_port.empty() ? reactor.inlet : reactor.reactant_port);
    for (std::size_t k = 0; k < extra; ++k) {
      const int raw = add_node("raw");
      const int v = add_node("v");
      const std::size_t e = connect(raw, v);
      connect(v, port);
      if (rng_.bernoulli(opt.p_reactant_flow_control)) {
        ControlRequest fc = flow_control("FC", e);
        fc.targets.push_back(to_node(v));
        add_controls({fc});
      }
    }

    std::vector<int> exits = inst.exits;
    int out = exits.front();
    if (integrated_group) {
      const int h2 = add_node("hex", integrated_group);
      connect(out, h2);
      out = h2;
    }
    if (mix >= 0) {
      const int s = add_node("splt");
      connect(out, s);
      const int rv = add_node("v");
      const std::size_t e = add_edge(s, rv);
      add_edge(rv, mix);
      ControlRequest fc = flow_control("FC", e);
      fc.targets.push_back(to_node(rv));
      add_controls({fc});
      out = s;
    }
    exits.front() = out;
    return exits;
  }
};

}  // namespace

void validate(const GeneratorConfig& cfg) {
  if (cfg.max_feeds < 1 || cfg.max_feeds > 3) throw GenerationError("max_feeds must be in 1..3");
  if (cfg.branch_node_cap == 0 || cfg.graph_node_cap == 0) throw GenerationError("node caps must be positive");
  const auto& lib = cfg.library;
  for (const char* s : kStates) {
    auto it = lib.transitions.find(s);
    if (it == lib.transitions.end()) throw GenerationError(std::string("transition row '") + s + "' missing");
    double sum = 0.0;
    for (const auto& [target, p] : it->second) {
      if (std::find_if(std::begin(kTargets), std::end(kTargets), [&](const char* t) { return target == t; }) ==
          std::end(kTargets)) {
        throw GenerationError("unknown transition target '" + target + "'");
      }
      if (p < 0.0) throw GenerationError("negative transition probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw GenerationError(std::string("transition row '") + s + "' does not sum to 1");
  }
  if (lib.of_kind(PatternKind::kUnitOp).empty() || lib.of_kind(PatternKind::kSeparation).empty() ||
      lib.of_kind(PatternKind::kConditioning).empty()) {
    throw GenerationError("pattern library needs unit_op, separation and conditioning patterns");
  }
  if (lib.of_kind(PatternKind::kReactor).size() != cfg.n_reactor_patterns) {
    throw GenerationError("pattern library has " + std::to_string(lib.of_kind(PatternKind::kReactor).size()) +
                          " reactor patterns, expected " + std::to_string(cfg.n_reactor_patterns));
  }
  for (const auto& p : lib.patterns) {
    if (p.column && p.control_schemes.size() != cfg.n_column_control_schemes) {
      throw GenerationError("column pattern '" + p.name + "' has " + std::to_string(p.control_schemes.size()) +
                            " control schemes, expected " + std::to_string(cfg.n_column_control_schemes));
    }
    if (p.kind != PatternKind::kConditioning && p.exits.empty()) {
      throw GenerationError("pattern '" + p.name + "' has no exit");
    }
  }
  const auto& o = lib.options;
  for (double p : {o.p_feed_valve, o.p_ratio_control, o.p_heat_integration, o.p_reactor_recycle,
                   o.p_reactant_flow_control}) {
    if (p < 0.0 || p > 1.0) throw GenerationError("option probability outside [0, 1]");
  }
}

GeneratedPid generate_pid(const GeneratorConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Builder b(cfg, rng);
    b.build();
    FlowsheetGraph pid = b.pid_graph();
    if (pid.size() > cfg.graph_node_cap) continue;
    try {
      (void)serialize(pid);
    } catch (const SerializeError&) {
      continue;
    }
    FlowsheetGraph pfd = strip_controls(pid, cfg.strip_valves_in_input);
    return GeneratedPid{std::move(pid), std::move(pfd), b.base_graph()};
  }
  throw GenerationError("no P&ID within the node cap after 10000 draws");
}

std::uint64_t candidate_seed(std::uint64_t seed, std::uint64_t k) { return mix64(seed ^ mix64(k + 1)); }

std::vector<DatasetPair> generate_dataset(const GeneratorConfig& cfg, std::size_t n) {
  if (n == 0) throw GenerationError("dataset size must be at least 1");
  validate(cfg);
  const std::size_t budget = 20 * n;
  std::vector<DatasetPair> out;
  std::unordered_set<std::string> seen;
  std::size_t next = 0;
  while (out.size() < n && next < budget) {
    const std::size_t batch = std::min(budget - next, std::max<std::size_t>(n - out.size(), 64));
    std::vector<DatasetPair> drawn(batch);
#pragma omp parallel for schedule(dynamic, 8)
    for (std::size_t k = 0; k < batch; ++k) {
      GeneratorConfig c = cfg;
      c.seed = candidate_seed(cfg.seed, next + k);
      GeneratedPid g = generate_pid(c);
      drawn[k].pid_sfiles = serialize(g.pid);
      drawn[k].pfd_sfiles = serialize(g.pfd);
    }
    next += batch;
    for (auto& d : drawn) {
      if (out.size() == n) break;
      if (!seen.insert(d.pid_sfiles.text).second) continue;
      d.id = static_cast<int>(out.size());
      out.push_back(std::move(d));
    }
  }
  if (out.size() < n) {
    throw GenerationError("only " + std::to_string(out.size()) + " unique pairs in " + std::to_string(budget) +
                          " draws");
  }
  return out;
}

}  // namespace pidgen
