#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace pidgen {

enum class PatternKind { kUnitOp, kReactor, kSeparation, kConditioning };

struct TemplateNode {
  std::string key;
  std::string unit_class;
  /// Nodes sharing a non-empty group key become compartments of one device.
  std::string group;
};

struct TemplateEdge {
  std::string src;
  std::string dst;
  std::vector<std::string> tags;
};

enum class ControlPlacement {
  kInline,  // on the internal edge after -> before
  kDangle,  // branch off `at`
  kOutlet,  // on the continuation stream leaving exit `at`
  kInlet,   // on the stream entering the pattern inlet
};

struct ControlSlot {
  std::string key;
  std::string letter_code;
  ControlPlacement placement = ControlPlacement::kDangle;
  std::string at;      // kDangle / kOutlet anchor
  std::string after;   // kInline
  std::string before;  // kInline
  /// Template node keys or keys of other controls in the same scheme.
  std::vector<std::string> signals_to;
};

using ControlScheme = std::vector<ControlSlot>;

/// A P&ID fragment of one sub-process with its alternative control schemes.
struct SubProcessPattern {
  std::string name;
  PatternKind kind = PatternKind::kUnitOp;
  double weight = 1.0;
  bool column = false;
  std::vector<TemplateNode> nodes;
  std::vector<TemplateEdge> edges;
  std::string inlet;
  /// Nodes whose outlet continues into the next sub-process.
  std::vector<std::string> exits;
  /// Reactor node that additional reactant feeds enter.
  std::string reactant_port;
  std::vector<ControlScheme> control_schemes;
};

/// Probabilities of optional generation steps.
struct GenerationOptions {
  std::vector<double> feed_count_weights{0.5, 0.35, 0.15};
  std::vector<double> pretreat_count_weights{0.45, 0.4, 0.15};
  std::vector<double> upstream_count_weights{0.4, 0.4, 0.2};
  double p_feed_valve = 0.5;
  double p_ratio_control = 0.8;
  double p_heat_integration = 0.2;
  double p_reactor_recycle = 0.35;
  std::vector<double> extra_reactant_weights{0.6, 0.3, 0.1};
  double p_reactant_flow_control = 0.8;
};

struct PatternLibrary {
  std::map<std::string, std::map<std::string, double>> transitions;
  GenerationOptions options;
  std::vector<SubProcessPattern> patterns;

  std::vector<const SubProcessPattern*> of_kind(PatternKind kind) const;
};

/// Throws GenerationError on schema violations.
PatternLibrary pattern_library_from_json(const nlohmann::json& j);
PatternLibrary load_pattern_library(const std::string& path);
/// Library compiled into the binary from data/patterns.json.
const PatternLibrary& default_pattern_library();
const std::string& default_pattern_library_json();

}  // namespace pidgen
