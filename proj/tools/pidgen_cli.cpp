#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "pidgen/checkpoint.hpp"
#include "pidgen/dataset.hpp"
#include "pidgen/decode.hpp"
#include "pidgen/digest.hpp"
#include "pidgen/errors.hpp"
#include "pidgen/generator.hpp"
#include "pidgen/graph_json.hpp"
#include "pidgen/manifest.hpp"
#include "pidgen/patterns.hpp"
#include "pidgen/sfiles.hpp"
#include "pidgen/tokenizer.hpp"
#include "pidgen/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pidgen;

namespace {

// Bad flags, unreadable inputs or invalid configuration: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Run {
  RunManifest manifest;
  std::string manifest_path;
};

std::vector<DatasetPair> read_pairs_file(const std::string& path, Run& run) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open " + path);
  run.manifest.add_input(path);
  try {
    return read_pairs_jsonl(is);
  } catch (const GraphError& ex) {
    throw UsageError(path + ": " + ex.what());
  }
}

Checkpoint read_checkpoint(const std::string& path, Run& run) {
  if (!fs::is_regular_file(path)) throw UsageError("cannot open " + path);
  run.manifest.add_input(path);
  try {
    return load_checkpoint(path);
  } catch (const CheckpointError& ex) {
    throw UsageError(ex.what());
  }
}

// Each argument is either a file holding one SFILES string per line or a
// literal SFILES string; no arguments reads lines from stdin.
std::vector<std::string> gather_inputs(const std::vector<std::string>& args, Run& run) {
  std::vector<std::string> out;
  auto read_lines = [&](std::istream& is) {
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) out.push_back(line);
    }
  };
  if (args.empty()) {
    read_lines(std::cin);
    return out;
  }
  for (const auto& a : args) {
    std::error_code ec;
    if (fs::is_regular_file(a, ec)) {
      std::ifstream is(a);
      run.manifest.add_input(a);
      read_lines(is);
    } else {
      out.push_back(a);
    }
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw UsageError("cannot write " + path);
  return os;
}

std::string ids_to_sfiles(std::span<const int> ids, const Vocabulary& v) {
  return detokenize(decode(strip_eos(ids), v));
}

// ---- generate ----

struct GenerateArgs {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string patterns;
  bool strip_valves = false;
  std::string out;
};

void cmd_generate(const GenerateArgs& a, Run& run) {
  GeneratorConfig cfg;
  cfg.seed = a.seed;
  cfg.strip_valves_in_input = a.strip_valves;
  std::string patterns = a.patterns;
  if (patterns.empty()) {
    if (const char* env = std::getenv("PID_SYNTH_PATTERNS"); env && *env) patterns = env;
  }
  try {
    if (!patterns.empty()) {
      if (!fs::is_regular_file(patterns)) throw UsageError("cannot open pattern file " + patterns);
      run.manifest.add_input(patterns);
      cfg.library = load_pattern_library(patterns);
    }
    validate(cfg);
  } catch (const GenerationError& ex) {
    throw UsageError(std::string("invalid pattern library: ") + ex.what());
  }
  run.manifest.config = {{"n", a.n}, {"strip_valves", a.strip_valves}, {"patterns", patterns.empty() ? "builtin" : patterns}};
  run.manifest.seeds = {{"seed", a.seed}};

  const auto pairs = generate_dataset(cfg, a.n);
  auto os = open_out(a.out);
  write_pairs_jsonl(os, pairs);
  run.manifest.outputs.push_back(a.out);
  std::cerr << "wrote " << pairs.size() << " pairs to " << a.out << '\n';
}

// ---- train ----

struct TrainArgs {
  std::string data, val, init, out, history;
  double lr = 3e-4;
  std::size_t batch = 32, eval_every = 500, patience = 10, max_steps = 1'000'000;
  double clip = 1.0;
  double min_delta = 0.0;
  std::uint64_t seed = 0;
  bool finetune = false;
  ModelConfig model;
  int max_len = 0;
};

int auto_max_len(std::span<const TokenizedPair> a, std::span<const TokenizedPair> b) {
  std::size_t m = 0;
  for (auto set : {a, b})
    for (const auto& p : set) m = std::max({m, p.src.size(), p.tgt.size() + 1});
  return static_cast<int>(std::ceil(static_cast<double>(m) * 1.25)) + 8;
}

void cmd_train(const TrainArgs& a, Run& run) {
  const auto train_pairs = read_pairs_file(a.data, run);
  const auto val_pairs = read_pairs_file(a.val, run);
  if (train_pairs.empty()) throw UsageError(a.data + " holds no pairs");
  if (val_pairs.empty()) throw UsageError(a.val + " holds no pairs");

  std::optional<Checkpoint> init;
  if (!a.init.empty()) init = read_checkpoint(a.init, run);

  Vocabulary vocab;
  if (init) {
    vocab = init->vocabulary();
  } else {
    std::vector<TokenSequence> corpus;
    for (const auto* set : {&train_pairs, &val_pairs}) {
      for (const auto& p : *set) {
        corpus.push_back(tokenize(p.pfd_sfiles.text));
        corpus.push_back(tokenize(p.pid_sfiles.text));
      }
    }
    vocab = build_vocab(corpus);
  }
  const auto train_set = encode_pairs(train_pairs, vocab);
  const auto val_set = encode_pairs(val_pairs, vocab);

  std::optional<Transformer> model;
  if (init) {
    model.emplace(init->model());
    const int need = auto_max_len(train_set, val_set) - 8;
    if (need > model->config().max_len) {
      throw UsageError("data holds sequences longer than the checkpoint's max_len");
    }
  } else {
    ModelConfig mc = a.model;
    mc.vocab_size = static_cast<int>(vocab.size());
    mc.max_len = a.max_len > 0 ? a.max_len : auto_max_len(train_set, val_set);
    try {
      mc.validate();
    } catch (const ShapeError& ex) {
      throw UsageError(ex.what());
    }
    model.emplace(mc, a.seed);
  }

  TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch;
  tc.eval_every = a.eval_every;
  tc.patience = a.patience;
  tc.seed = a.seed;
  tc.max_steps = a.max_steps;
  tc.clip_norm = a.clip;
  tc.min_delta = a.min_delta;
  try {
    tc.validate();
  } catch (const std::invalid_argument& ex) {
    throw UsageError(ex.what());
  }
  tc.on_eval = [](const LossPoint& p) {
    std::cerr << "step " << p.step << " epoch " << p.epoch << " loss_train " << p.loss_train << " loss_val "
              << p.loss_val << std::endl;
  };

  run.manifest.config = {{"model", config_to_json(model->config())},
                         {"parameters", model->num_parameters()},
                         {"lr", tc.learning_rate},
                         {"batch", tc.batch_size},
                         {"eval_every", tc.eval_every},
                         {"patience", tc.patience},
                         {"max_steps", tc.max_steps},
                         {"clip_norm", tc.clip_norm},
                         {"min_delta", tc.min_delta},
                         {"finetune", a.finetune},
                         {"vocab_hash", vocab.hash()}};
  run.manifest.seeds = {{"seed", a.seed}};
  std::cerr << "model has " << model->num_parameters() << " parameters, vocabulary " << vocab.size() << " tokens\n";

  const auto res = train(*model, vocab, train_set, val_set, tc);
  save_checkpoint(a.out, res.checkpoint);
  run.manifest.outputs.push_back(a.out);
  const std::string history = a.history.empty() ? a.out + ".loss.csv" : a.history;
  auto hs = open_out(history);
  write_loss_history(hs, res.history);
  run.manifest.outputs.push_back(history);
  std::cerr << (res.early_stopped ? "early stop" : "step budget reached") << " after " << res.steps_run
            << " steps, best val loss " << res.checkpoint.best_val_loss << " at step " << res.checkpoint.step << '\n';
}

// ---- predict / eval ----

struct Predicted {
  std::string raw;
  double log_prob;
  bool finished;
};

std::vector<Predicted> predict_one(const Transformer& m, const Vocabulary& v, const std::string& pfd, int beam,
                                   int top_k, int max_len) {
  const auto enc = encode(tokenize(pfd), v);
  BeamOptions opt;
  opt.beam_width = beam;
  opt.max_len = max_len > 0 ? max_len : m.config().max_len;
  auto hyps = decode_beam(m, enc.ids, opt);
  if (static_cast<int>(hyps.size()) > top_k) hyps.resize(static_cast<std::size_t>(top_k));
  std::vector<Predicted> out;
  for (const auto& h : hyps) out.push_back({ids_to_sfiles(h.token_ids, v), h.log_prob, h.finished});
  return out;
}

struct PredictArgs {
  std::string model;
  std::vector<std::string> in;
  int beam = 5, top_k = 5, max_len = 0;
  std::string emit = "sfiles";
  std::string out;
};

void cmd_predict(const PredictArgs& a, Run& run) {
  if (a.top_k < 1 || a.beam < 1) throw UsageError("--beam and --top-k must be positive");
  const auto ck = read_checkpoint(a.model, run);
  const auto model = ck.model();
  const auto vocab = ck.vocabulary();
  const auto inputs = gather_inputs(a.in, run);
  if (inputs.empty()) throw UsageError("no input SFILES given");
  run.manifest.config = {{"beam", a.beam}, {"top_k", a.top_k}, {"emit", a.emit}, {"max_len", a.max_len}};

  std::ofstream file;
  if (!a.out.empty()) {
    file = open_out(a.out);
    run.manifest.outputs.push_back(a.out);
  }
  std::ostream& os = a.out.empty() ? std::cout : file;

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<Predicted> preds;
    try {
      preds = predict_one(model, vocab, inputs[i], a.beam, std::min(a.top_k, a.beam), a.max_len);
    } catch (const TokenizeError& ex) {
      throw UsageError("input " + std::to_string(i + 1) + ": " + ex.what());
    }
    json jpreds = json::array();
    if (a.emit == "sfiles") os << "# input " << i + 1 << ": " << inputs[i] << '\n';
    for (std::size_t r = 0; r < preds.size(); ++r) {
      const auto& p = preds[r];
      std::optional<FlowsheetGraph> g;
      std::string error;
      try {
        g = parse(p.raw);
      } catch (const ParseError& ex) {
        error = std::string(to_string(ex.kind())) + ": " + ex.what();
      }
      // Valid predictions are emitted in canonical form so the sfiles and
      // graph outputs describe the same string.
      std::string text = p.raw;
      if (g) {
        try {
          text = serialize(*g).text;
        } catch (const SerializeError& ex) {
          error = std::string("unserializable: ") + ex.what();
          g.reset();
        }
      }
      if (a.emit == "sfiles") {
        os << r + 1 << '\t' << p.log_prob << '\t' << (g ? "valid" : "invalid") << '\t' << text << '\n';
      } else {
        json jp{{"rank", r + 1}, {"log_prob", p.log_prob}, {"finished", p.finished}, {"sfiles", text},
                {"raw", p.raw}, {"valid", g.has_value()}};
        if (g) jp["graph"] = graph_to_json(*g);
        else jp["error"] = error;
        jpreds.push_back(std::move(jp));
      }
    }
    if (a.emit != "sfiles") os << json{{"input", inputs[i]}, {"predictions", jpreds}}.dump() << '\n';
  }
}

struct EvalArgs {
  std::string model, test, json_out;
  int k = 5, beam = 0, max_len = 0;
};

void cmd_eval(const EvalArgs& a, Run& run) {
  if (a.k < 1) throw UsageError("--k must be positive");
  const int beam = a.beam > 0 ? a.beam : a.k;
  const auto ck = read_checkpoint(a.model, run);
  const auto model = ck.model();
  const auto vocab = ck.vocabulary();
  const auto test = read_pairs_file(a.test, run);
  if (test.empty()) throw UsageError(a.test + " holds no pairs");
  run.manifest.config = {{"k", a.k}, {"beam", beam}, {"max_len", a.max_len}};

  std::vector<std::vector<SfilesString>> preds(test.size());
  std::vector<SfilesString> targets, inputs;
  for (const auto& p : test) {
    targets.push_back(p.pid_sfiles);
    inputs.push_back(p.pfd_sfiles);
  }
  std::vector<std::string> failures(test.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < test.size(); ++i) {
    try {
      for (auto& p : predict_one(model, vocab, test[i].pfd_sfiles.text, beam, std::min(a.k, beam), a.max_len)) {
        preds[i].push_back({p.raw, false});
      }
    } catch (const std::exception& ex) {
      failures[i] = ex.what();
    }
  }
  for (std::size_t i = 0; i < failures.size(); ++i) {
    if (!failures[i].empty()) throw UsageError("test pair " + std::to_string(test[i].id) + ": " + failures[i]);
  }

  const auto rep = evaluate_top_k(preds, targets, static_cast<std::size_t>(a.k), inputs);
  std::cout << rep.to_table();
  if (!a.json_out.empty()) {
    auto os = open_out(a.json_out);
    os << rep.to_json().dump(2) << '\n';
    run.manifest.outputs.push_back(a.json_out);
  }
}

// ---- tools ----

struct ToolArgs {
  std::vector<std::string> in;
  std::size_t n = 5;
  std::uint64_t seed = 0;
  bool remove_valves = false;
};

void cmd_canonicalize(const ToolArgs& a, Run& run) {
  for (const auto& s : gather_inputs(a.in, run)) std::cout << canonicalize(s).text << '\n';
}

void cmd_augment(const ToolArgs& a, Run& run) {
  run.manifest.seeds = {{"seed", a.seed}};
  run.manifest.config = {{"n", a.n}};
  for (const auto& s : gather_inputs(a.in, run)) {
    for (const auto& v : augment(SfilesString{s, false}, a.n, a.seed)) std::cout << v.text << '\n';
  }
}

void cmd_tokenize(const ToolArgs& a, Run& run) {
  for (const auto& s : gather_inputs(a.in, run)) {
    const auto t = tokenize(s);
    for (std::size_t i = 0; i < t.tokens.size(); ++i) std::cout << (i ? " " : "") << t.tokens[i];
    std::cout << '\n';
  }
}

void cmd_strip(const ToolArgs& a, Run& run) {
  run.manifest.config = {{"remove_valves", a.remove_valves}};
  for (const auto& s : gather_inputs(a.in, run)) {
    std::cout << serialize(strip_controls(parse(s), a.remove_valves)).text << '\n';
  }
}

std::string default_manifest_path(const std::string& out) { return out.empty() ? std::string() : out + ".manifest.json"; }

int run_cli(const std::vector<std::string>& args);

int replay(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    std::cerr << "error: cannot open " << path << '\n';
    return 2;
  }
  RunManifest m;
  try {
    m = RunManifest::from_json(json::parse(is));
  } catch (const std::exception& ex) {
    std::cerr << "error: bad manifest " << path << ": " << ex.what() << '\n';
    return 2;
  }
  for (const auto& in : m.inputs) {
    if (git_blob_hash_file(in.path) != in.hash) std::cerr << "warning: input " << in.path << " changed since the recorded run\n";
  }
  if (m.argv.empty()) {
    std::cerr << "error: manifest has no argv\n";
    return 2;
  }
  return run_cli(m.argv);
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"pidgen: synthetic P&ID generation and control-structure prediction"};
  app.require_subcommand(1);
  int threads = 0;
  std::string manifest_path;
  app.add_option("--threads", threads, "Maximum number of worker threads")->check(CLI::NonNegativeNumber);
  app.add_option("--manifest", manifest_path, "Where to write the run manifest");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Generate PFD/P&ID training pairs");
  gen->add_option("--n", ga.n, "Number of pairs")->required();
  gen->add_option("--seed", ga.seed, "Random seed");
  gen->add_option("--patterns", ga.patterns, "Pattern library JSON (default: $PID_SYNTH_PATTERNS or built-in)");
  gen->add_flag("--strip-valves", ga.strip_valves, "Remove valves from the PFD side");
  gen->add_option("--out", ga.out, "Output JSONL")->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train or fine-tune a model");
  tr->add_option("--data", ta.data, "Training pairs JSONL")->required();
  tr->add_option("--val", ta.val, "Validation pairs JSONL")->required();
  auto* lr_opt = tr->add_option("--lr", ta.lr, "Learning rate (3e-4, fine-tune 0.5e-4)");
  auto* batch_opt = tr->add_option("--batch", ta.batch, "Batch size (32, fine-tune 2)");
  auto* eval_opt = tr->add_option("--eval-every", ta.eval_every, "Steps between validations (500, fine-tune 20)");
  auto* pat_opt = tr->add_option("--patience", ta.patience, "Validations without improvement (10, fine-tune 40)");
  tr->add_option("--min-delta", ta.min_delta, "Smallest validation loss drop that resets patience");
  tr->add_option("--max-steps", ta.max_steps, "Hard step limit");
  tr->add_option("--clip", ta.clip, "Gradient norm cap, 0 disables");
  tr->add_option("--seed", ta.seed, "Initialization and shuffling seed");
  tr->add_option("--init", ta.init, "Start from this checkpoint");
  tr->add_flag("--finetune", ta.finetune, "Use the fine-tuning defaults");
  tr->add_option("--out", ta.out, "Checkpoint to write")->required();
  tr->add_option("--history", ta.history, "Loss history CSV (default: <out>.loss.csv)");
  tr->add_option("--d-model", ta.model.d_model, "Embedding size");
  tr->add_option("--heads", ta.model.n_heads, "Attention heads");
  tr->add_option("--enc-layers", ta.model.n_encoder_layers, "Encoder layers");
  tr->add_option("--dec-layers", ta.model.n_decoder_layers, "Decoder layers");
  tr->add_option("--d-ff", ta.model.d_ff, "Feed-forward width (default 4 * d-model)");
  tr->add_option("--dropout", ta.model.dropout, "Dropout rate");
  tr->add_option("--max-len", ta.max_len, "Longest sequence (default: from data)");

  PredictArgs pa;
  auto* pr = app.add_subcommand("predict", "Predict P&IDs for PFD strings");
  pr->add_option("--model", pa.model, "Checkpoint")->required();
  pr->add_option("--in", pa.in, "SFILES string or file with one per line (default: stdin)");
  pr->add_option("--beam", pa.beam, "Beam width");
  pr->add_option("--top-k", pa.top_k, "Predictions to print per input");
  pr->add_option("--emit", pa.emit, "Output format")->check(CLI::IsMember({"sfiles", "graph-json"}));
  pr->add_option("--max-len", pa.max_len, "Longest prediction in tokens");
  pr->add_option("--out", pa.out, "Output file (default: stdout)");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Top-k accuracy on a test set");
  ev->add_option("--model", ea.model, "Checkpoint")->required();
  ev->add_option("--test", ea.test, "Test pairs JSONL")->required();
  ev->add_option("--k", ea.k, "Largest k");
  ev->add_option("--beam", ea.beam, "Beam width (default: k)");
  ev->add_option("--max-len", ea.max_len, "Longest prediction in tokens");
  ev->add_option("--json", ea.json_out, "Write the report as JSON");

  ToolArgs tool;
  auto* tools = app.add_subcommand("tools", "SFILES utilities");
  tools->require_subcommand(1);
  auto* t_canon = tools->add_subcommand("canonicalize", "Canonical form of each input");
  auto* t_aug = tools->add_subcommand("augment", "Random re-serializations of each input");
  auto* t_tok = tools->add_subcommand("tokenize", "Space-separated tokens of each input");
  auto* t_strip = tools->add_subcommand("strip", "Remove control structure from P&ID strings");
  for (auto* t : {t_canon, t_aug, t_tok, t_strip}) t->add_option("input", tool.in, "SFILES strings or files");
  t_aug->add_option("--n", tool.n, "Variants per input");
  t_aug->add_option("--seed", tool.seed, "Random seed");
  t_strip->add_flag("--remove-valves", tool.remove_valves, "Also splice out valves");

  auto* rp = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  std::string replay_path;
  rp->add_option("manifest", replay_path, "Manifest JSON")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (rp->parsed()) return replay(replay_path);
  if (threads > 0) omp_set_num_threads(threads);

  if (ta.finetune) {
    if (!lr_opt->count()) ta.lr = 0.5e-4;
    if (!batch_opt->count()) ta.batch = 2;
    if (!eval_opt->count()) ta.eval_every = 20;
    if (!pat_opt->count()) ta.patience = 40;
  }

  Run run;
  run.manifest.argv = args;
  run.manifest.started_at = utc_timestamp();
  std::string primary_out;
  std::function<void()> body;
  if (gen->parsed()) {
    run.manifest.command = "generate";
    primary_out = ga.out;
    body = [&] { cmd_generate(ga, run); };
  } else if (tr->parsed()) {
    run.manifest.command = "train";
    primary_out = ta.out;
    body = [&] { cmd_train(ta, run); };
  } else if (pr->parsed()) {
    run.manifest.command = "predict";
    primary_out = pa.out;
    body = [&] { cmd_predict(pa, run); };
  } else if (ev->parsed()) {
    run.manifest.command = "eval";
    primary_out = ea.json_out;
    body = [&] { cmd_eval(ea, run); };
  } else {
    const std::pair<CLI::App*, void (*)(const ToolArgs&, Run&)> table[] = {
        {t_canon, cmd_canonicalize}, {t_aug, cmd_augment}, {t_tok, cmd_tokenize}, {t_strip, cmd_strip}};
    for (const auto& [sub, fn] : table) {
      if (sub->parsed()) {
        run.manifest.command = "tools " + sub->get_name();
        body = [&, fn = fn] { fn(tool, run); };
      }
    }
  }
  int code = 0;
  try {
    body();
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    code = 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    code = 1;
  }
  if (threads > 0) run.manifest.config["threads"] = threads;
  run.manifest.finished_at = utc_timestamp();
  run.manifest.exit_code = code;

  const std::string mpath = manifest_path.empty() ? default_manifest_path(primary_out) : manifest_path;
  if (mpath.empty()) {
    std::cerr << "manifest: " << run.manifest.to_json().dump() << '\n';
  } else {
    std::ofstream ms(mpath);
    if (ms) ms << run.manifest.to_json().dump(2) << '\n';
    else std::cerr << "warning: cannot write manifest " << mpath << '\n';
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc)); }
