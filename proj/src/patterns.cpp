#include "pidgen/patterns.hpp"

#include <fstream>
#include <set>

#include "pidgen/errors.hpp"

namespace pidgen {

using nlohmann::json;

namespace {

PatternKind parse_kind(const std::string& s) {
  if (s == "unit_op") return PatternKind::kUnitOp;
  if (s == "reactor") return PatternKind::kReactor;
  if (s == "separation") return PatternKind::kSeparation;
  if (s == "conditioning") return PatternKind::kConditioning;
  throw GenerationError("unknown pattern kind '" + s + "'");
}

ControlPlacement parse_placement(const std::string& s) {
  if (s == "inline") return ControlPlacement::kInline;
  if (s == "dangle") return ControlPlacement::kDangle;
  if (s == "outlet") return ControlPlacement::kOutlet;
  if (s == "inlet") return ControlPlacement::kInlet;
  throw GenerationError("unknown control placement '" + s + "'");
}

std::vector<double> weights(const json& j, const char* key, const std::vector<double>& fallback) {
  if (!j.contains(key)) return fallback;
  auto w = j.at(key).get<std::vector<double>>();
  if (w.empty()) throw GenerationError(std::string(key) + " must not be empty");
  return w;
}

void validate(const SubProcessPattern& p) {
  std::set<std::string> keys;
  for (const auto& n : p.nodes) {
    if (!keys.insert(n.key).second) throw GenerationError(p.name + ": duplicate node key '" + n.key + "'");
  }
  auto known = [&](const std::string& k, const char* what) {
    if (!keys.contains(k)) throw GenerationError(p.name + ": " + what + " references unknown node '" + k + "'");
  };
  for (const auto& e : p.edges) {
    known(e.src, "edge");
    known(e.dst, "edge");
  }
  known(p.inlet, "inlet");
  for (const auto& x : p.exits) known(x, "exit");
  if (!p.reactant_port.empty()) known(p.reactant_port, "reactant_port");
  if (p.exits.empty() && p.kind != PatternKind::kConditioning) {
    throw GenerationError(p.name + ": only conditioning patterns may lack exits");
  }
  if (p.control_schemes.empty()) throw GenerationError(p.name + ": at least one (possibly empty) control scheme");
  for (const auto& scheme : p.control_schemes) {
    std::set<std::string> control_keys;
    for (const auto& c : scheme) control_keys.insert(c.key);
    for (const auto& c : scheme) {
      switch (c.placement) {
        case ControlPlacement::kInline: {
          known(c.after, "control");
          known(c.before, "control");
          bool found = false;
          for (const auto& e : p.edges) found = found || (e.src == c.after && e.dst == c.before);
          if (!found) throw GenerationError(p.name + ": inline control " + c.key + " is not on a template edge");
          break;
        }
        case ControlPlacement::kDangle:
          known(c.at, "control");
          break;
        case ControlPlacement::kOutlet:
          if (std::find(p.exits.begin(), p.exits.end(), c.at) == p.exits.end()) {
            throw GenerationError(p.name + ": outlet control " + c.key + " is not placed at an exit");
          }
          break;
        case ControlPlacement::kInlet:
          break;
      }
      if (c.signals_to.empty()) throw GenerationError(p.name + ": control " + c.key + " has no signal line");
      for (const auto& t : c.signals_to) {
        if (!keys.contains(t) && !control_keys.contains(t)) {
          throw GenerationError(p.name + ": control " + c.key + " signals unknown target '" + t + "'");
        }
      }
    }
  }
}

}  // namespace

std::vector<const SubProcessPattern*> PatternLibrary::of_kind(PatternKind kind) const {
  std::vector<const SubProcessPattern*> out;
  for (const auto& p : patterns) {
    if (p.kind == kind) out.push_back(&p);
  }
  return out;
}

PatternLibrary pattern_library_from_json(const json& j) {
  try {
    PatternLibrary lib;
    lib.transitions = j.at("transitions").get<std::map<std::string, std::map<std::string, double>>>();
    if (j.contains("options")) {
      const auto& o = j.at("options");
      GenerationOptions d;
      lib.options.feed_count_weights = weights(o, "feed_count_weights", d.feed_count_weights);
      lib.options.pretreat_count_weights = weights(o, "pretreat_count_weights", d.pretreat_count_weights);
      lib.options.upstream_count_weights = weights(o, "upstream_count_weights", d.upstream_count_weights);
      lib.options.extra_reactant_weights = weights(o, "extra_reactant_weights", d.extra_reactant_weights);
      lib.options.p_feed_valve = o.value("p_feed_valve", d.p_feed_valve);
      lib.options.p_ratio_control = o.value("p_ratio_control", d.p_ratio_control);
      lib.options.p_heat_integration = o.value("p_heat_integration", d.p_heat_integration);
      lib.options.p_reactor_recycle = o.value("p_reactor_recycle", d.p_reactor_recycle);
      lib.options.p_reactant_flow_control = o.value("p_reactant_flow_control", d.p_reactant_flow_control);
    }
    for (const auto& jp : j.at("patterns")) {
      SubProcessPattern p;
      p.name = jp.at("name").get<std::string>();
      p.kind = parse_kind(jp.at("kind").get<std::string>());
      p.weight = jp.value("weight", 1.0);
      p.column = jp.value("column", false);
      for (const auto& jn : jp.at("nodes")) {
        p.nodes.push_back(TemplateNode{jn.at("key").get<std::string>(), jn.at("class").get<std::string>(),
                                       jn.value("group", std::string{})});
      }
      for (const auto& je : jp.at("edges")) {
        p.edges.push_back(TemplateEdge{je.at("src").get<std::string>(), je.at("dst").get<std::string>(),
                                       je.value("tags", std::vector<std::string>{})});
      }
      p.inlet = jp.at("inlet").get<std::string>();
      p.exits = jp.value("exits", std::vector<std::string>{});
      p.reactant_port = jp.value("reactant_port", std::string{});
      for (const auto& js : jp.at("control_schemes")) {
        ControlScheme scheme;
        for (const auto& jc : js) {
          ControlSlot c;
          c.key = jc.at("key").get<std::string>();
          c.letter_code = jc.at("letter").get<std::string>();
          c.placement = parse_placement(jc.at("place").get<std::string>());
          c.at = jc.value("at", std::string{});
          c.after = jc.value("after", std::string{});
          c.before = jc.value("before", std::string{});
          c.signals_to = jc.value("signals_to", std::vector<std::string>{});
          scheme.push_back(std::move(c));
        }
        p.control_schemes.push_back(std::move(scheme));
      }
      if (p.weight <= 0.0) throw GenerationError(p.name + ": weight must be positive");
      validate(p);
      lib.patterns.push_back(std::move(p));
    }
    return lib;
  } catch (const json::exception& e) {
    throw GenerationError(std::string("malformed pattern library: ") + e.what());
  }
}

PatternLibrary load_pattern_library(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw GenerationError("cannot open pattern library '" + path + "'");
  try {
    return pattern_library_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw GenerationError("pattern library '" + path + "' is not valid JSON: " + e.what());
  }
}

const std::string& default_pattern_library_json() {
  static const std::string text =
#include "default_patterns.inc"
      ;
  return text;
}

const PatternLibrary& default_pattern_library() {
  static const PatternLibrary lib = pattern_library_from_json(json::parse(default_pattern_library_json()));
  return lib;
}

}  // namespace pidgen
