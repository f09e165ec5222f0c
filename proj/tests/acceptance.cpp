// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Pass criterion numbers as arguments to
// run a subset. Criterion 9 needs PIDGEN_SCALED=1 and otherwise reports SKIP.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "pidgen/checkpoint.hpp"
#include "pidgen/dataset.hpp"
#include "pidgen/decode.hpp"
#include "pidgen/errors.hpp"
#include "pidgen/generator.hpp"
#include "pidgen/sfiles.hpp"
#include "pidgen/tokenizer.hpp"
#include "pidgen/train.hpp"
#include "pidgen/transformer.hpp"

using namespace pidgen;

namespace {

const std::string kPid =
    "(raw)(hex){1}(C){TC}_1(mix)<1(r)[(C){LC}_2](v)<_2(splt)[(prod)](C){FC}_3(v)1<_3n|(raw)(v)<_1(hex){1}(prod)";
const std::string kPfd = "(raw)(hex){1}(mix)<1(r)(v)(splt)[(prod)](v)1n|(raw)(v)(hex){1}(prod)";

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Shared {
  std::optional<Transformer> overfit_model;
  std::optional<Vocabulary> overfit_vocab;
  std::vector<DatasetPair> overfit_pairs;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << x;
  return os.str();
}

std::vector<TokenSequence> corpus_of(std::span<const DatasetPair> pairs) {
  std::vector<TokenSequence> c;
  for (const auto& p : pairs) {
    c.push_back(tokenize(p.pfd_sfiles.text));
    c.push_back(tokenize(p.pid_sfiles.text));
  }
  return c;
}

int max_len_for(std::span<const TokenizedPair> data) {
  std::size_t m = 0;
  for (const auto& p : data) m = std::max({m, p.src.size(), p.tgt.size() + 1});
  return static_cast<int>(std::ceil(static_cast<double>(m) * 1.25)) + 8;
}

// Beam search with width k over the PFD side, scored against the P&ID side.
EvalReport beam_report(const Transformer& m, const Vocabulary& v, std::span<const DatasetPair> pairs, int k) {
  std::vector<std::vector<SfilesString>> preds(pairs.size());
  std::vector<SfilesString> targets, inputs;
  for (const auto& p : pairs) {
    targets.push_back(p.pid_sfiles);
    inputs.push_back(p.pfd_sfiles);
  }
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto src = encode(tokenize(pairs[i].pfd_sfiles.text), v).ids;
    for (const auto& h : decode_beam(m, src, {k, m.config().max_len, false}))
      preds[i].push_back({detokenize(decode(strip_eos(h.token_ids), v)), false});
  }
  return evaluate_top_k(preds, targets, static_cast<std::size_t>(k), inputs);
}

Outcome golden_tokenization() {
  const std::vector<std::string> expect{"(raw)", "(hex)", "{1}",  "(C)",  "{TC}",   "_1",   "(mix)", "<1",  "(r)",
                                        "[",     "(C)",   "{LC}", "_2",   "]",      "(v)",  "<_2",   "(splt)", "[",
                                        "(prod)", "]",    "(C)",  "{FC}", "_3",     "(v)",  "1",     "<_3", "n|",
                                        "(raw)", "(v)",   "<_1",  "(hex)", "{1}",   "(prod)"};
  const auto t = tokenize(kPid);
  return {t.tokens == expect, std::to_string(t.tokens.size()) + " tokens"};
}

Outcome golden_strip() {
  const auto got = serialize(strip_controls(parse(kPid), false)).text;
  return {got == kPfd, got};
}

Outcome round_trip() {
  GeneratorConfig cfg;
  std::size_t failures = 0;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    cfg.seed = candidate_seed(2024, k);
    const auto g = generate_pid(cfg).pid;
    const auto s = serialize(g);
    bool ok = isomorphic(parse(s), g);
    const auto canon = canonicalize(s).text;
    for (const auto& v : augment(s, 5, k)) ok = ok && canonicalize(v).text == canon;
    failures += !ok;
  }
  return {failures == 0, std::to_string(failures) + " of 1000 failed"};
}

Outcome generator_statistics() {
  GeneratorConfig cfg;
  cfg.seed = 1;
  const auto pairs = generate_dataset(cfg, 10000);
  std::vector<FlowsheetGraph> graphs;
  std::vector<TokenSequence> pid_side;
  std::set<std::string> canon;
  std::size_t max_nodes = 0;
  for (const auto& p : pairs) {
    graphs.push_back(parse(p.pid_sfiles));
    max_nodes = std::max(max_nodes, graphs.back().size());
    pid_side.push_back(tokenize(p.pid_sfiles.text));
    canon.insert(canonicalize(p.pid_sfiles).text);
  }
  const auto st = stats(graphs, build_vocab(pid_side));
  const std::size_t dups = pairs.size() - canon.size();
  const bool ok = st.mean_nodes >= 42 && st.mean_nodes <= 62 && st.vocab_size >= 93 && st.vocab_size <= 133 &&
                  st.regular_vocab_size >= 93 && st.regular_vocab_size <= 133 &&
                  max_nodes <= 100 && dups == 0;
  return {ok, "mean nodes " + fmt(st.mean_nodes) + ", std " + fmt(st.std_nodes) + ", vocab " +
                  std::to_string(st.regular_vocab_size) + " (" + std::to_string(st.vocab_size) + " with specials)" + ", max nodes " + std::to_string(max_nodes) + ", duplicates " +
                  std::to_string(dups)};
}

Outcome gradient_check() {
  GeneratorConfig gc;
  gc.seed = 5;
  const auto pairs = generate_dataset(gc, 2);
  const auto vocab = build_vocab(corpus_of(pairs));
  const auto data = encode_pairs(pairs, vocab);
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.max_len = max_len_for(data);
  double worst = 0.0;
  std::size_t checked = 0, hinges = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto r = grad_check_report(Transformer(mc, seed), data, 200, seed);
    worst = std::max(worst, r.max_rel_error);
    checked += r.n_checked;
    hinges += r.n_nonsmooth;
  }
  const bool ok = worst < 1e-3 && hinges * 10 <= checked + hinges;
  return {ok, "max relative error " + fmt(worst, 3) + " over " + std::to_string(checked) + " parameters, " +
                  std::to_string(hinges) + " on ReLU hinges skipped"};
}

Outcome causality_and_normalization() {
  GeneratorConfig gc;
  gc.seed = 6;
  const auto pairs = generate_dataset(gc, 4);
  const auto vocab = build_vocab(corpus_of(pairs));
  const auto data = encode_pairs(pairs, vocab);
  ModelConfig mc;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.max_len = max_len_for(data);
  const Transformer m(mc, 3);
  double worst_leak = 0.0, worst_norm = 0.0;
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> tok(Vocabulary::kNumSpecial, mc.vocab_size - 1);
  for (const auto& p : data) {
    std::vector<int> tin{Vocabulary::kBos};
    tin.insert(tin.end(), p.tgt.begin(), p.tgt.end());
    ForwardCache c;
    const auto base = m.forward(p.src, tin, c, nullptr);
    for (const auto& blk : c.dec_blocks)
      for (const auto& pr : blk.attn.probs)
        for (std::size_t i = 0; i < pr.rows; ++i) {
          double s = 0;
          for (std::size_t j = 0; j < pr.cols; ++j) s += pr(i, j);
          worst_norm = std::max(worst_norm, std::abs(s - 1.0));
        }
    for (const auto& blk : c.enc_blocks)
      for (const auto& pr : blk.attn.probs)
        for (std::size_t i = 0; i < pr.rows; ++i) {
          double s = 0;
          for (std::size_t j = 0; j < pr.cols; ++j) s += pr(i, j);
          worst_norm = std::max(worst_norm, std::abs(s - 1.0));
        }
    for (std::size_t cut : {std::size_t{1}, tin.size() / 2, tin.size() - 1}) {
      auto pert = tin;
      for (std::size_t t = cut; t < pert.size(); ++t) pert[t] = tok(rng);
      const auto l = m.forward(p.src, pert);
      for (std::size_t i = 0; i < cut; ++i)
        for (std::size_t j = 0; j < l.cols; ++j) worst_leak = std::max(worst_leak, std::abs(l(i, j) - base(i, j)));
    }
  }
  return {worst_leak <= 1e-9 && worst_norm <= 1e-6,
          "max prefix change " + fmt(worst_leak, 3) + ", max row-sum error " + fmt(worst_norm, 3)};
}

Outcome overfit(Shared& sh) {
  GeneratorConfig gc;
  gc.seed = 1;
  sh.overfit_pairs = generate_dataset(gc, 100);
  const auto vocab = build_vocab(corpus_of(sh.overfit_pairs));
  const auto data = encode_pairs(sh.overfit_pairs, vocab);
  ModelConfig mc;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.max_len = max_len_for(data);
  Transformer m(mc, 1);
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 8;
  tc.eval_every = 60;
  tc.patience = 10;
  tc.max_steps = 2400;
  tc.min_delta = 1e-3;
  tc.seed = 1;
  tc.on_eval = [](const LossPoint& p) {
    std::cerr << "  [7] step " << p.step << " epoch " << p.epoch << " val loss " << p.loss_val << std::endl;
  };
  const auto res = train(m, vocab, data, data, tc);
  const auto rep = beam_report(m, vocab, sh.overfit_pairs, 5);
  const double top1 = rep.top_k_accuracy.at(1), acc = rep.top_k_accuracy.at(5);
  sh.overfit_model.emplace(m);
  sh.overfit_vocab.emplace(vocab);
  return {top1 >= 0.95, "top-1 " + fmt(100 * top1) + "%, top-5 " + fmt(100 * acc) + "% after " +
                            std::to_string(res.steps_run) + " steps" + (res.early_stopped ? " (early stop)" : " (step cap)")};
}

Outcome beam_consistency(Shared& sh) {
  GeneratorConfig gc;
  gc.seed = 77;
  auto inputs = generate_dataset(gc, 60);
  inputs.insert(inputs.end(), sh.overfit_pairs.begin(), sh.overfit_pairs.begin() + std::min<std::size_t>(50, sh.overfit_pairs.size()));
  std::optional<Transformer> fallback;
  Vocabulary vocab = sh.overfit_vocab ? *sh.overfit_vocab : build_vocab(corpus_of(inputs));
  if (!sh.overfit_model) {
    ModelConfig mc;
    mc.d_model = 32;
    mc.n_heads = 4;
    mc.vocab_size = static_cast<int>(vocab.size());
    mc.max_len = 300;
    fallback.emplace(mc, 4);
  }
  const Transformer& m = sh.overfit_model ? *sh.overfit_model : *fallback;
  const int max_len = std::min(m.config().max_len, 160);
  std::size_t mismatches = 0, unsorted = 0, inputs_used = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size() && inputs_used < 100; ++i) {
    const auto src = encode(tokenize(inputs[i].pfd_sfiles.text), vocab).ids;
    if (static_cast<int>(src.size()) > m.config().max_len) continue;
    ++inputs_used;
    const auto g = decode_greedy(m, src, max_len);
    const auto b1 = decode_beam(m, src, {1, max_len, false});
    mismatches += b1.size() != 1 || b1[0].token_ids != g;
    const auto b5 = decode_beam(m, src, {5, max_len, false});
    for (std::size_t r = 0; r < b5.size(); ++r) {
      if (r > 0 && b5[r].log_prob > b5[r - 1].log_prob) ++unsorted;
      worst = std::max(worst, std::abs(b5[r].log_prob - sequence_log_prob(m, src, b5[r].token_ids)));
    }
  }
  return {inputs_used == 100 && mismatches == 0 && unsorted == 0 && worst <= 1e-5,
          std::to_string(inputs_used) + " inputs, " + std::to_string(mismatches) + " greedy mismatches, " +
              std::to_string(unsorted) + " ordering violations, max rescoring error " + fmt(worst, 3)};
}

Outcome scaled_reproduction() {
  GeneratorConfig gc;
  gc.seed = 10;
  const auto all = generate_dataset(gc, 12000);
  const auto parts = split(all, {10000.0 / 12000.0, 1000.0 / 12000.0, 1000.0 / 12000.0}, 10);
  const auto vocab = build_vocab(corpus_of(all));
  const auto val = encode_pairs(parts.val, vocab);
  auto run = [&](std::size_t n_train) {
    const auto train_set = encode_pairs(std::span(parts.train).first(n_train), vocab);
    ModelConfig mc;
    mc.vocab_size = static_cast<int>(vocab.size());
    mc.max_len = std::max(max_len_for(train_set), max_len_for(val));
    Transformer m(mc, 1);
    TrainConfig tc;
    tc.on_eval = [n_train](const LossPoint& p) {
      std::cerr << "  [9:" << n_train << "] step " << p.step << " val loss " << p.loss_val << std::endl;
    };
    train(m, vocab, train_set, val, tc);
    return beam_report(m, vocab, parts.test, 5).top_k_accuracy.at(5);
  };
  const double big = run(10000);
  const double small = run(1000);
  return {big >= 0.60 && big <= 0.85 && big > small,
          "top-5 10k model " + fmt(100 * big) + "%, 1k model " + fmt(100 * small) + "%"};
}

Outcome finetune(Shared& sh) {
  // Held-out "pseudo-real" set: different seed, valves stripped from the input.
  GeneratorConfig gc;
  gc.seed = 555;
  gc.strip_valves_in_input = true;
  const auto pseudo = generate_dataset(gc, 50);
  const auto parts = split(pseudo, {0.8, 0.2, 0.0}, 3);
  Checkpoint ck;
  if (sh.overfit_model) {
    ck = make_checkpoint(*sh.overfit_model, *sh.overfit_vocab, 0, 0.0);
  } else {
    const auto vocab = build_vocab(corpus_of(pseudo));
    ModelConfig mc;
    mc.d_model = 32;
    mc.n_heads = 4;
    mc.vocab_size = static_cast<int>(vocab.size());
    mc.max_len = 400;
    ck = make_checkpoint(Transformer(mc, 2), vocab, 0, 0.0);
  }
  const std::string path = "acceptance_pretrained.ckpt";
  save_checkpoint(path, ck);
  const auto loaded = load_checkpoint(path);
  std::remove(path.c_str());
  Transformer m = loaded.model();
  const auto vocab = loaded.vocabulary();
  const auto train_set = encode_pairs(parts.train, vocab);
  const auto val_set = encode_pairs(parts.val, vocab);
  TrainConfig tc;
  tc.learning_rate = 0.5e-4;
  tc.batch_size = 2;
  tc.patience = 40;
  tc.eval_every = 20;
  tc.max_steps = 20000;
  const auto res = train(m, vocab, train_set, val_set, tc);
  const bool ok = res.early_stopped && std::isfinite(res.checkpoint.best_val_loss) &&
                  res.checkpoint.best_val_loss <= res.history.front().loss_val;
  return {ok, std::to_string(res.steps_run) + " steps, val loss " + fmt(res.history.front().loss_val) + " -> " +
                  fmt(res.checkpoint.best_val_loss) + (res.early_stopped ? ", early stop" : ", no early stop")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const char* scaled = std::getenv("PIDGEN_SCALED");
  const bool run_scaled = scaled && std::string(scaled) == "1";

  Shared sh;
  struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria{
      {1, "golden tokenization", 1, golden_tokenization},
      {2, "golden strip", 1, golden_strip},
      {3, "round-trip property", 60, round_trip},
      {4, "generator statistics", 600, generator_statistics},
      {5, "gradient check", 60, gradient_check},
      {6, "decoder causality and attention normalization", 60, causality_and_normalization},
      {7, "overfit sanity", 1800, [&] { return overfit(sh); }},
      {8, "beam/greedy consistency", 300, [&] { return beam_consistency(sh); }},
      {9, "scaled reproduction", 0, scaled_reproduction},
      {10, "fine-tuning code path", 0, [&] { return finetune(sh); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    if (c.id == 9 && !run_scaled) {
      std::cout << "SKIP " << c.id << " " << c.name << ": multi-hour run, set PIDGEN_SCALED=1" << std::endl;
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    const double t = seconds_since(t0);
    if (c.budget_s > 0 && t > c.budget_s) {
      o.pass = false;
      o.detail += ", over the " + fmt(c.budget_s) + " s budget";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.id << " " << c.name << ": " << o.detail << " (" << fmt(t, 3)
              << " s)" << std::endl;
  }
  return failed ? 1 : 0;
}
