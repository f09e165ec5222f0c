#pragma once

#include <span>
#include <vector>

#include "pidgen/transformer.hpp"

namespace pidgen {

struct BeamHypothesis {
  /// Generated ids; ends with EOS exactly when finished.
  std::vector<int> token_ids;
  double log_prob = 0.0;
  bool finished = false;
};

/// Picks the most probable token at every step (lowest id on ties). Stops
/// after EOS or max_len generated tokens; the EOS is kept in the output.
std::vector<int> decode_greedy(const Transformer& m, std::span<const int> src, int max_len);

struct BeamOptions {
  int beam_width = 5;
  int max_len = 512;
  /// Rank finished hypotheses by log_prob / length instead of log_prob.
  bool length_normalization = false;
};

/// Keeps the beam_width best live hypotheses per step. A candidate ending in
/// EOS that ranks within the top beam_width joins the finished set; search
/// stops at beam_width finished hypotheses or max_len. Returns the finished
/// hypotheses best first, or the live ones when none finished.
std::vector<BeamHypothesis> decode_beam(const Transformer& m, std::span<const int> src, const BeamOptions& opt);

/// Sum of per-step log-probabilities of tokens under a full forward pass
/// with BOS prepended to the decoder input.
double sequence_log_prob(const Transformer& m, std::span<const int> src, std::span<const int> tokens);

/// Drops a trailing EOS.
std::vector<int> strip_eos(std::span<const int> tokens);

}  // namespace pidgen
