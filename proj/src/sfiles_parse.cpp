#include <algorithm>
#include <map>
#include <optional>

#include "pidgen/errors.hpp"
#include "pidgen/sfiles.hpp"
#include "pidgen/tokenizer.hpp"

namespace pidgen {

const char* to_string(ParseFailure f) {
  switch (f) {
    case ParseFailure::kUnknownToken: return "unknown_token";
    case ParseFailure::kUnbalancedBracket: return "unbalanced_bracket";
    case ParseFailure::kDanglingRecycle: return "dangling_recycle";
    case ParseFailure::kDanglingSignal: return "dangling_signal";
    case ParseFailure::kMisplacedToken: return "misplaced_token";
    case ParseFailure::kInvalidGraph: return "invalid_graph";
  }
  return "unknown";
}

namespace {

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

struct Endpoint {
  int node = -1;
  std::size_t offset = 0;
};

// Open/close bookkeeping for numbered connections (material recycles or signal lines).
class Connections {
 public:
  Connections(ParseFailure failure, const char* what) : failure_(failure), what_(what) {}

  void open(int number, int node, std::size_t offset) { add(opens_, number, node, offset, "opener"); }
  void close(int number, int node, std::size_t offset) { add(closes_, number, node, offset, "closer"); }

  // Resolved (src, dst) pairs in number order.
  std::vector<std::pair<int, int>> resolve() const {
    std::vector<std::pair<int, int>> out;
    for (const auto& [num, ep] : opens_) {
      auto it = closes_.find(num);
      if (it == closes_.end()) {
        throw ParseError(failure_, ep.offset, std::string(what_) + " " + std::to_string(num) + " is never closed");
      }
      out.emplace_back(ep.node, it->second.node);
    }
    for (const auto& [num, ep] : closes_) {
      if (!opens_.contains(num)) {
        throw ParseError(failure_, ep.offset,
                         std::string(what_) + " " + std::to_string(num) + " references no opener");
      }
    }
    return out;
  }

 private:
  void add(std::map<int, Endpoint>& m, int number, int node, std::size_t offset, const char* role) {
    if (!m.emplace(number, Endpoint{node, offset}).second) {
      throw ParseError(failure_, offset, std::string("duplicate ") + what_ + " " + role + " " + std::to_string(number));
    }
  }

  ParseFailure failure_;
  const char* what_;
  std::map<int, Endpoint> opens_;
  std::map<int, Endpoint> closes_;
};

struct IncomingContext {
  int target;
  std::size_t bracket_depth;
  std::size_t offset;
};

}  // namespace

FlowsheetGraph parse(std::string_view sfiles) {
  if (sfiles.empty()) throw ParseError(ParseFailure::kMisplacedToken, 0, "empty SFILES string");
  TokenSequence toks;
  try {
    toks = tokenize(sfiles);
  } catch (const TokenizeError& e) {
    throw ParseError(ParseFailure::kUnknownToken, e.offset(), e.what());
  }

  std::vector<UnitNode> nodes;
  std::vector<FlowEdge> edges;
  Connections recycles(ParseFailure::kDanglingRecycle, "recycle");
  Connections signals(ParseFailure::kDanglingSignal, "signal");
  std::map<int, int> group_members;

  std::optional<int> prev;       // unit the next unit connects from
  int last_unit = -1;            // unit annotations attach to, -1 for none
  bool after_unit = false;       // braces still describe last_unit
  std::vector<std::string> pending_tags;
  std::size_t pending_offset = 0;
  std::vector<std::optional<int>> branches;
  std::vector<IncomingContext> incoming;

  auto misplaced = [](std::size_t off, const std::string& why) {
    return ParseError(ParseFailure::kMisplacedToken, off, why);
  };
  auto require_unit = [&](std::size_t off, const std::string& tok) -> int {
    if (last_unit < 0) throw misplaced(off, "'" + tok + "' does not follow a unit");
    return last_unit;
  };
  auto require_no_tags = [&](std::size_t off) {
    if (!pending_tags.empty()) throw misplaced(pending_offset, "stream tag is not followed by a unit");
    (void)off;
  };

  for (std::size_t t = 0; t < toks.size(); ++t) {
    const std::string& tok = toks.tokens[t];
    const std::size_t off = toks.offsets[t];
    const char c = tok[0];

    if (c == '(') {
      const int id = static_cast<int>(nodes.size());
      UnitNode n;
      n.id = id;
      n.unit_class = tok.substr(1, tok.size() - 2);
      nodes.push_back(std::move(n));
      if (prev) {
        edges.push_back(FlowEdge{*prev, id, EdgeKind::kMaterial, std::move(pending_tags)});
        pending_tags.clear();
      } else if (!pending_tags.empty()) {
        throw misplaced(pending_offset, "stream tag without an upstream unit");
      }
      prev = id;
      last_unit = id;
      after_unit = true;
    } else if (c == '{') {
      std::string content = tok.substr(1, tok.size() - 2);
      if (after_unit && last_unit >= 0) {
        auto& n = nodes[static_cast<std::size_t>(last_unit)];
        if (n.is_control() && !n.letter_code) {
          n.letter_code = std::move(content);
          continue;
        }
        if (is_multi_stream_class(n.unit_class) && !n.equipment_group && all_digits(content)) {
          const int gid = std::stoi(content);
          n.equipment_group = gid;
          n.compartment = ++group_members[gid];
          continue;
        }
      }
      if (pending_tags.empty()) pending_offset = off;
      pending_tags.push_back(std::move(content));
      after_unit = false;
    } else if (c == '[') {
      require_no_tags(off);
      if (!prev) throw misplaced(off, "branch without a branching unit");
      branches.push_back(prev);
      after_unit = false;
    } else if (c == ']') {
      require_no_tags(off);
      const std::size_t floor = incoming.empty() ? 0 : incoming.back().bracket_depth;
      if (branches.size() <= floor) throw ParseError(ParseFailure::kUnbalancedBracket, off, "unmatched ']'");
      prev = branches.back();
      last_unit = *prev;
      branches.pop_back();
      after_unit = false;
    } else if (tok == "n|") {
      require_no_tags(off);
      if (!branches.empty()) throw ParseError(ParseFailure::kUnbalancedBracket, off, "stream separator inside a branch");
      if (!incoming.empty()) throw ParseError(ParseFailure::kUnbalancedBracket, off, "stream separator inside an incoming branch");
      prev.reset();
      last_unit = -1;
      after_unit = false;
    } else if (tok == "<&|") {
      require_no_tags(off);
      if (!prev) throw misplaced(off, "incoming branch without a receiving unit");
      incoming.push_back(IncomingContext{*prev, branches.size(), off});
      prev.reset();
      last_unit = -1;
      after_unit = false;
    } else if (tok == "&|") {
      require_no_tags(off);
      if (incoming.empty()) throw ParseError(ParseFailure::kUnbalancedBracket, off, "'&|' without '<&|'");
      if (branches.size() != incoming.back().bracket_depth) {
        throw ParseError(ParseFailure::kUnbalancedBracket, off, "unclosed branch inside incoming branch");
      }
      if (!prev) throw misplaced(off, "empty incoming branch");
      const int target = incoming.back().target;
      edges.push_back(FlowEdge{*prev, target, EdgeKind::kMaterial, {}});
      incoming.pop_back();
      prev = target;
      last_unit = target;
      after_unit = false;
    } else if (c >= '0' && c <= '9') {
      recycles.open(c - '0', require_unit(off, tok), off);
      after_unit = false;
    } else if (c == '<' || c == '_' || c == '%') {
      std::size_t p = 0;
      while (p < tok.size() && !(tok[p] >= '0' && tok[p] <= '9')) ++p;
      const std::string prefix = tok.substr(0, p);
      const int number = std::stoi(tok.substr(p));
      if (prefix == "<") {
        recycles.close(number, require_unit(off, tok), off);
      } else if (prefix == "_") {
        signals.open(number, require_unit(off, tok), off);
      } else if (prefix == "<_") {
        signals.close(number, require_unit(off, tok), off);
      } else {
        throw ParseError(ParseFailure::kUnknownToken, off, "unsupported connection token '" + tok + "'");
      }
      after_unit = false;
    } else {
      throw ParseError(ParseFailure::kUnknownToken, off, "reserved token '" + tok + "'");
    }
  }

  const std::size_t end = sfiles.size();
  if (!pending_tags.empty()) throw misplaced(pending_offset, "stream tag is not followed by a unit");
  if (!incoming.empty()) throw ParseError(ParseFailure::kUnbalancedBracket, incoming.back().offset, "unclosed '<&|'");
  if (!branches.empty()) throw ParseError(ParseFailure::kUnbalancedBracket, end, "unclosed '['");

  for (auto [src, dst] : recycles.resolve()) edges.push_back(FlowEdge{src, dst, EdgeKind::kMaterial, {}});
  for (auto [src, dst] : signals.resolve()) edges.push_back(FlowEdge{src, dst, EdgeKind::kSignal, {}});

  try {
    return FlowsheetGraph(std::move(nodes), std::move(edges));
  } catch (const GraphError& e) {
    throw ParseError(ParseFailure::kInvalidGraph, 0, e.what());
  }
}

}  // namespace pidgen
