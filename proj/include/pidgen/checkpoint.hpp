#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "pidgen/tokenizer.hpp"
#include "pidgen/transformer.hpp"

namespace pidgen {

struct Checkpoint {
  ModelConfig config;
  std::vector<double> weights;
  /// Full token list of the training vocabulary, specials first.
  std::vector<std::string> vocab_tokens;
  std::string vocab_hash;
  std::size_t step = 0;
  double best_val_loss = 0.0;

  Transformer model() const { return Transformer(config, weights); }
  Vocabulary vocabulary() const;
};

Checkpoint make_checkpoint(const Transformer& m, const Vocabulary& v, std::size_t step, double best_val_loss);

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

/// One JSON header line (config, tensor layout, vocabulary, metadata)
/// followed by the weights as raw little-endian doubles.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
/// Throws CheckpointError on malformed files, layout or hash mismatches.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pidgen
