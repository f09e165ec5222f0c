#include "pidgen/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string_view>
#include <utility>

#include "pidgen/errors.hpp"
#include "pidgen/hash.hpp"

namespace pidgen {

using nlohmann::json;

DatasetSplit split(std::span<const DatasetPair> pairs, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0) throw SplitError("split fractions must be non-negative");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw SplitError("split fractions must sum to 1");

  const std::size_t n = pairs.size();
  const auto n_val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(f.test * static_cast<double>(n)));
  if (n_val + n_test > n) throw SplitError("split fractions leave no room for the train set");
  const std::size_t n_train = n - n_val - n_test;
  if ((f.train > 0 && n_train == 0) || (f.val > 0 && n_val == 0) || (f.test > 0 && n_test == 0)) {
    throw SplitError("split of " + std::to_string(n) + " pairs leaves a non-zero fraction empty");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with explicit draws so the permutation does not depend on
  // the standard library's shuffle.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }

  DatasetSplit out;
  for (std::size_t r = 0; r < n; ++r) {
    const auto& p = pairs[order[r]];
    if (r < n_train) out.train.push_back(p);
    else if (r < n_train + n_val) out.val.push_back(p);
    else out.test.push_back(p);
  }
  return out;
}

namespace {

bool has_class(const FlowsheetGraph& g, std::string_view cls) {
  return std::any_of(g.nodes().begin(), g.nodes().end(), [&](const UnitNode& n) { return n.unit_class == cls; });
}

// Whether the PFD of this pair was produced with valves removed.
std::optional<bool> valve_convention(const FlowsheetGraph& pid, const SfilesString& pfd) {
  const auto target = canonicalize(pfd).text;
  for (bool remove : {false, true}) {
    try {
      if (serialize(strip_controls(pid, remove)).text == target) return remove;
    } catch (const StripError&) {
    }
  }
  return std::nullopt;
}

}  // namespace

std::vector<DatasetPair> augment_dataset(std::span<const DatasetPair> pairs, std::uint64_t seed) {
  std::vector<DatasetPair> out(pairs.begin(), pairs.end());
  std::set<std::pair<std::string, std::string>> seen;
  int next_id = 0;
  for (const auto& p : pairs) {
    seen.emplace(p.pfd_sfiles.text, p.pid_sfiles.text);
    next_id = std::max(next_id, p.id + 1);
  }

  constexpr int kAttempts = 4;
  for (const auto& p : pairs) {
    const auto pid = parse(p.pid_sfiles);
    const auto remove = valve_convention(pid, p.pfd_sfiles);
    std::optional<FlowsheetGraph> pfd_graph;
    if (remove) pfd_graph = strip_controls(pid, *remove);

    for (int attempt = 0; attempt < kAttempts; ++attempt) {
      const std::uint64_t s = mix64(seed ^ mix64(static_cast<std::uint64_t>(p.id) * 8 + attempt));
      auto prio = [s](int id) { return mix64(s ^ mix64(static_cast<std::uint64_t>(id) + 0x51ed2701ULL)); };
      DatasetPair aug;
      aug.pid_sfiles = {serialize_with_priorities(pid, prio), false};
      if (pfd_graph) {
        aug.pfd_sfiles = {serialize_with_priorities(*pfd_graph, prio), false};
      } else {
        // PFD does not derive from this P&ID; augment it on its own.
        aug.pfd_sfiles = augment(p.pfd_sfiles, 1, s).front();
      }
      if (!seen.emplace(aug.pfd_sfiles.text, aug.pid_sfiles.text).second) continue;
      aug.id = next_id++;
      out.push_back(std::move(aug));
      break;
    }
  }
  return out;
}

const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kInvalidSfiles: return "invalid_sfiles";
    case ErrorCategory::kDanglingRecycle: return "dangling_recycle";
    case ErrorCategory::kDanglingSignal: return "dangling_signal";
    case ErrorCategory::kUnitMismatch: return "unit_mismatch";
  }
  return "unknown";
}

namespace {

struct SampleOutcome {
  std::size_t first_canonical = SIZE_MAX;  // 0-based rank of the first match
  std::size_t first_raw = SIZE_MAX;
  std::size_t n_predictions = 0;
  std::size_t n_invalid = 0;
  std::array<std::size_t, 4> errors{};
};

SampleOutcome evaluate_sample(const std::vector<SfilesString>& preds, const std::string& target_raw,
                              const std::string& target_canon, const std::optional<FlowsheetGraph>& input) {
  SampleOutcome out;
  std::optional<bool> strip_valves;
  if (input) strip_valves = !has_class(*input, kValveClass);
  for (std::size_t r = 0; r < preds.size(); ++r) {
    ++out.n_predictions;
    const auto& text = preds[r].text;
    if (text == target_raw) out.first_raw = std::min(out.first_raw, r);

    std::optional<ErrorCategory> err;
    std::optional<FlowsheetGraph> g;
    try {
      g = parse(text);
    } catch (const ParseError& ex) {
      ++out.n_invalid;
      switch (ex.kind()) {
        case ParseFailure::kDanglingRecycle: err = ErrorCategory::kDanglingRecycle; break;
        case ParseFailure::kDanglingSignal: err = ErrorCategory::kDanglingSignal; break;
        default: err = ErrorCategory::kInvalidSfiles; break;
      }
    }
    if (g) {
      std::string canon;
      try {
        canon = serialize(*g).text;
      } catch (const SerializeError&) {
        canon.clear();
      }
      if (!canon.empty() && canon == target_canon) {
        out.first_canonical = std::min(out.first_canonical, r);
        continue;
      }
      if (input) {
        bool same_units = false;
        try {
          same_units = isomorphic(strip_controls(*g, *strip_valves), *input);
        } catch (const StripError&) {
        }
        if (!same_units) err = ErrorCategory::kUnitMismatch;
      }
    }
    if (err) ++out.errors[static_cast<std::size_t>(*err)];
  }
  return out;
}

}  // namespace

EvalReport evaluate_top_k(const std::vector<std::vector<SfilesString>>& predictions,
                          std::span<const SfilesString> targets, std::size_t k_max,
                          std::span<const SfilesString> inputs) {
  if (predictions.size() != targets.size()) {
    throw LengthMismatch("got " + std::to_string(predictions.size()) + " prediction lists for " +
                         std::to_string(targets.size()) + " targets");
  }
  if (!inputs.empty() && inputs.size() != targets.size()) {
    throw LengthMismatch("got " + std::to_string(inputs.size()) + " inputs for " + std::to_string(targets.size()) +
                         " targets");
  }
  if (k_max == 0) throw LengthMismatch("k_max must be positive");
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].size() > k_max) {
      throw LengthMismatch("sample " + std::to_string(i) + " has " + std::to_string(predictions[i].size()) +
                           " predictions, more than k_max");
    }
  }

  const std::size_t n = targets.size();
  std::vector<SampleOutcome> outcomes(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const auto canon = canonicalize(targets[i]).text;
      std::optional<FlowsheetGraph> input;
      if (!inputs.empty()) input = parse(inputs[i]);
      outcomes[i] = evaluate_sample(predictions[i], targets[i].text, canon, input);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
  }

  EvalReport rep;
  rep.k_max = k_max;
  rep.n_samples = n;
  for (auto c : kErrorCategories) rep.error_breakdown[c] = 0;
  std::vector<std::size_t> hits(k_max, 0), raw_hits(k_max, 0);
  for (const auto& o : outcomes) {
    if (o.first_canonical < k_max) ++hits[o.first_canonical];
    if (o.first_raw < k_max) ++raw_hits[o.first_raw];
    rep.n_predictions += o.n_predictions;
    rep.n_invalid_predictions += o.n_invalid;
    for (auto c : kErrorCategories) rep.error_breakdown[c] += o.errors[static_cast<std::size_t>(c)];
  }
  std::size_t acc = 0, raw_acc = 0;
  for (std::size_t k = 1; k <= k_max; ++k) {
    acc += hits[k - 1];
    raw_acc += raw_hits[k - 1];
    rep.top_k_accuracy[k] = n ? static_cast<double>(acc) / static_cast<double>(n) : 0.0;
    rep.top_k_raw_accuracy[k] = n ? static_cast<double>(raw_acc) / static_cast<double>(n) : 0.0;
  }
  return rep;
}

json EvalReport::to_json() const {
  json top = json::object(), raw = json::object(), errs = json::object();
  for (const auto& [k, v] : top_k_accuracy) top[std::to_string(k)] = v;
  for (const auto& [k, v] : top_k_raw_accuracy) raw[std::to_string(k)] = v;
  for (const auto& [c, v] : error_breakdown) errs[to_string(c)] = v;
  return json{{"k_max", k_max},
              {"n_samples", n_samples},
              {"top_k_accuracy", top},
              {"top_k_raw_accuracy", raw},
              {"n_predictions", n_predictions},
              {"n_invalid_predictions", n_invalid_predictions},
              {"error_breakdown", errs}};
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(10) << "metric";
  for (std::size_t k = 1; k <= k_max; ++k) os << std::right << std::setw(9) << ("top-" + std::to_string(k));
  os << '\n';
  auto row = [&](const char* name, const std::map<std::size_t, double>& m) {
    os << std::left << std::setw(10) << name << std::fixed << std::setprecision(1);
    for (std::size_t k = 1; k <= k_max; ++k) {
      auto it = m.find(k);
      os << std::right << std::setw(8) << (it == m.end() ? 0.0 : 100.0 * it->second) << '%';
    }
    os << '\n';
  };
  row("canonical", top_k_accuracy);
  row("raw", top_k_raw_accuracy);
  os << "samples " << n_samples << ", predictions " << n_predictions << ", invalid " << n_invalid_predictions << '\n';
  for (const auto& [c, v] : error_breakdown) os << "  " << to_string(c) << ": " << v << '\n';
  return os.str();
}

json pair_to_json(const DatasetPair& p) {
  return json{{"id", p.id}, {"pfd", p.pfd_sfiles.text}, {"pid", p.pid_sfiles.text}};
}

DatasetPair pair_from_json(const json& j) {
  try {
    DatasetPair p;
    p.id = j.at("id").get<int>();
    p.pfd_sfiles = {j.at("pfd").get<std::string>(), false};
    p.pid_sfiles = {j.at("pid").get<std::string>(), false};
    return p;
  } catch (const json::exception& ex) {
    throw GraphError(std::string("malformed dataset pair: ") + ex.what());
  }
}

void write_pairs_jsonl(std::ostream& os, std::span<const DatasetPair> pairs) {
  for (const auto& p : pairs) os << pair_to_json(p).dump() << '\n';
}

std::vector<DatasetPair> read_pairs_jsonl(std::istream& is) {
  std::vector<DatasetPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(pair_from_json(json::parse(line)));
    } catch (const json::parse_error& ex) {
      throw GraphError("line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace pidgen
