#include "pidgen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "pidgen/errors.hpp"

namespace pidgen {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "pidgen-checkpoint-1";

}  // namespace

Vocabulary Checkpoint::vocabulary() const {
  if (vocab_tokens.size() < static_cast<std::size_t>(Vocabulary::kNumSpecial)) {
    throw CheckpointError("checkpoint vocabulary lacks the special tokens");
  }
  for (int i = 0; i < Vocabulary::kNumSpecial; ++i) {
    if (vocab_tokens[i] != Vocabulary::kSpecialTokens[i]) throw CheckpointError("checkpoint vocabulary specials differ");
  }
  std::vector<std::string> regular(vocab_tokens.begin() + Vocabulary::kNumSpecial, vocab_tokens.end());
  Vocabulary v(regular);
  if (!vocab_hash.empty() && v.hash() != vocab_hash) throw CheckpointError("vocabulary hash mismatch");
  return v;
}

Checkpoint make_checkpoint(const Transformer& m, const Vocabulary& v, std::size_t step, double best_val_loss) {
  Checkpoint ck;
  ck.config = m.config();
  ck.weights.assign(m.parameters().begin(), m.parameters().end());
  ck.vocab_tokens = v.tokens();
  ck.vocab_hash = v.hash();
  ck.step = step;
  ck.best_val_loss = best_val_loss;
  return ck;
}

json config_to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"n_encoder_layers", c.n_encoder_layers},
              {"n_decoder_layers", c.n_decoder_layers},
              {"d_ff", c.ff()},
              {"vocab_size", c.vocab_size},
              {"max_len", c.max_len},
              {"dropout", c.dropout}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_encoder_layers = j.at("n_encoder_layers").get<int>();
  c.n_decoder_layers = j.at("n_decoder_layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  json layout = json::array();
  for (const auto& t : parameter_layout(ck.config)) {
    layout.push_back({{"name", t.name}, {"offset", t.offset}, {"shape", {t.rows, t.cols}}});
  }
  const json header{{"format", kFormat},
                    {"config", config_to_json(ck.config)},
                    {"layout", layout},
                    {"n_weights", ck.weights.size()},
                    {"vocab", ck.vocab_tokens},
                    {"vocab_hash", ck.vocab_hash},
                    {"step", ck.step},
                    {"best_val_loss", ck.best_val_loss}};
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write " + path);
  os << header.dump() << '\n';
  os.write(reinterpret_cast<const char*>(ck.weights.data()),
           static_cast<std::streamsize>(ck.weights.size() * sizeof(double)));
  if (!os) throw CheckpointError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw CheckpointError(path + ": missing header");
  Checkpoint ck;
  std::size_t n = 0;
  try {
    const json h = json::parse(line);
    if (h.at("format").get<std::string>() != kFormat) throw CheckpointError(path + ": unknown format");
    ck.config = config_from_json(h.at("config"));
    ck.vocab_tokens = h.at("vocab").get<std::vector<std::string>>();
    ck.vocab_hash = h.at("vocab_hash").get<std::string>();
    ck.step = h.at("step").get<std::size_t>();
    ck.best_val_loss = h.at("best_val_loss").get<double>();
    n = h.at("n_weights").get<std::size_t>();
    const auto expected = parameter_layout(ck.config);
    const auto& layout = h.at("layout");
    if (layout.size() != expected.size()) throw CheckpointError(path + ": tensor layout differs from config");
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& t = layout[i];
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      if (t.at("name").get<std::string>() != expected[i].name || t.at("offset").get<std::size_t>() != expected[i].offset ||
          shape != std::vector<std::size_t>{expected[i].rows, expected[i].cols}) {
        throw CheckpointError(path + ": tensor " + expected[i].name + " does not match config");
      }
    }
    if (n != parameter_count(ck.config)) throw CheckpointError(path + ": weight count does not match config");
  } catch (const json::exception& ex) {
    throw CheckpointError(path + ": bad header: " + ex.what());
  } catch (const ShapeError& ex) {
    throw CheckpointError(path + ": bad config: " + ex.what());
  }
  ck.weights.resize(n);
  is.read(reinterpret_cast<char*>(ck.weights.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (static_cast<std::size_t>(is.gcount()) != n * sizeof(double)) throw CheckpointError(path + ": truncated weights");
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError(path + ": trailing bytes after weights");
  if (ck.vocab_tokens.size() != static_cast<std::size_t>(ck.config.vocab_size)) {
    throw CheckpointError(path + ": vocabulary size does not match config");
  }
  ck.vocabulary();  // validates specials and hash
  return ck;
}

}  // namespace pidgen
