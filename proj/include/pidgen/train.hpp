#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "pidgen/checkpoint.hpp"
#include "pidgen/dataset_pair.hpp"
#include "pidgen/tokenizer.hpp"
#include "pidgen/transformer.hpp"

namespace pidgen {

/// Token ids of one pair without BOS/EOS; src is the PFD, tgt the P&ID.
struct TokenizedPair {
  std::vector<int> src;
  std::vector<int> tgt;
};

/// Throws TokenizeError on malformed strings.
std::vector<TokenizedPair> encode_pairs(std::span<const DatasetPair> pairs, const Vocabulary& v);

struct LossPoint {
  std::size_t step = 0;
  double epoch = 0.0;
  double loss_train = 0.0;
  double loss_val = 0.0;
};

struct TrainConfig {
  double learning_rate = 3e-4;
  std::size_t batch_size = 32;
  /// Steps between validation passes.
  std::size_t eval_every = 500;
  /// Validation passes without improvement before stopping.
  std::size_t patience = 10;
  /// A validation pass counts as an improvement only when it beats the best
  /// loss by more than this.
  double min_delta = 0.0;
  std::uint64_t seed = 0;
  std::size_t max_steps = 1'000'000;
  /// Global gradient norm cap; 0 disables clipping.
  double clip_norm = 1.0;
  std::function<void(const LossPoint&)> on_eval;

  /// Throws std::invalid_argument.
  void validate() const;
};

struct TrainResult {
  /// Weights at the best validation loss.
  Checkpoint checkpoint;
  std::vector<LossPoint> history;
  std::size_t steps_run = 0;
  bool early_stopped = false;
};

/// Token-mean cross-entropy over the batch with teacher forcing; adds the
/// gradient to grad when it is non-empty.
double batch_loss(const Transformer& m, std::span<const TokenizedPair> batch, std::span<double> grad,
                  std::mt19937_64* dropout_rng = nullptr);

double dataset_loss(const Transformer& m, std::span<const TokenizedPair> data);

/// Adam with a fixed learning rate and early stopping on validation loss.
/// Leaves the best weights in model. Throws EmptyDataset and
/// DivergenceError when the loss stops being finite.
TrainResult train(Transformer& model, const Vocabulary& vocab, std::span<const TokenizedPair> train_set,
                  std::span<const TokenizedPair> val_set, const TrainConfig& tc);

/// CSV with columns epochs,loss_train,loss_val.
void write_loss_history(std::ostream& os, std::span<const LossPoint> history);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t n_checked = 0;
  /// Sampled parameters whose difference stencil straddles a ReLU hinge.
  std::size_t n_nonsmooth = 0;
};

/// Compares analytic gradients with central differences (h = 1e-4) on up to
/// n_samples random parameters, using |a - n| / max(|a| + |n|, 1e-6).
/// Parameters where the h and h/4 estimates disagree sit on a hinge of the
/// loss and are counted instead of compared. Dropout is disabled.
GradCheckReport grad_check_report(const Transformer& model, std::span<const TokenizedPair> batch,
                                  std::size_t n_samples = 200, std::uint64_t seed = 0);

/// grad_check_report(...).max_rel_error
double grad_check(const Transformer& model, std::span<const TokenizedPair> batch, std::size_t n_samples = 200,
                  std::uint64_t seed = 0);

}  // namespace pidgen
