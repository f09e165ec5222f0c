#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace pidgen {

struct ModelConfig {
  int d_model = 128;
  int n_heads = 8;
  int n_encoder_layers = 2;
  int n_decoder_layers = 2;
  /// 0 selects 4 * d_model.
  int d_ff = 0;
  int vocab_size = 0;
  /// Longest source or decoder input sequence accepted.
  int max_len = 512;
  double dropout = 0.0;

  int d_k() const { return d_model / n_heads; }
  int ff() const { return d_ff > 0 ? d_ff : 4 * d_model; }
  /// Throws ShapeError.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
};

/// Named slice of the flat parameter vector; all tensors are row-major.
struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
  friend bool operator==(const TensorInfo&, const TensorInfo&) = default;
};

std::vector<TensorInfo> parameter_layout(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);

/// Sinusoidal absolute position code for one position.
void positional_encoding(int pos, int d_model, double* out);

/// Intermediate values kept by a training forward pass for backward().
struct LayerNormCache {
  Matrix xhat;
  std::vector<double> rstd;
};

struct AttentionCache {
  Matrix q, k, v;
  /// probs[h] is Tq x Tk; rows are softmax distributions.
  std::vector<Matrix> probs;
  Matrix ctx;
};

struct ResidualBlockCache {
  LayerNormCache ln;
  Matrix normed;
  AttentionCache attn;  // unused for feed-forward blocks
  Matrix ff_pre, ff_act;
  Matrix drop_mask;  // empty when dropout is off
};

struct ForwardCache {
  std::vector<int> src, tgt_in;
  Matrix enc_in_mask, dec_in_mask;
  /// Encoder layer l uses blocks [2l, 2l+1]; decoder layer l uses [3l, 3l+2].
  std::vector<ResidualBlockCache> enc_blocks, dec_blocks;
  LayerNormCache enc_final, dec_final;
  Matrix memory;   // encoder output after the final norm
  Matrix dec_out;  // decoder output after the final norm
  Matrix logits;
};

/// Precomputed encoder output and cross-attention keys and values.
struct EncoderState {
  Matrix memory;
  std::vector<Matrix> cross_k, cross_v;
};

/// Self-attention keys and values of the tokens fed so far.
struct DecoderState {
  std::vector<Matrix> self_k, self_v;
  int length = 0;
};

/// Encoder-decoder transformer with pre-norm residual blocks, scale-only
/// layer norms, ReLU feed-forward layers and no bias terms.
class Transformer {
 public:
  Transformer(const ModelConfig& cfg, std::uint64_t seed);
  /// Throws ShapeError when the weight count does not match the config.
  Transformer(const ModelConfig& cfg, std::vector<double> weights);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorInfo>& layout() const { return layout_; }
  std::size_t num_parameters() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  /// Throws std::out_of_range for unknown names.
  std::span<double> tensor(const std::string& name);
  std::span<const double> tensor(const std::string& name) const;

  /// Logits, one row per decoder input position. Throws ShapeError on
  /// out-of-vocabulary ids, empty inputs or sequences beyond max_len.
  Matrix forward(std::span<const int> src, std::span<const int> tgt_in) const;
  /// Training forward pass; dropout is applied when rng is non-null.
  Matrix forward(std::span<const int> src, std::span<const int> tgt_in, ForwardCache& cache,
                 std::mt19937_64* rng) const;
  /// Accumulates d(loss)/d(params) into grads given d(loss)/d(logits).
  void backward(const ForwardCache& cache, const Matrix& dlogits, std::span<double> grads) const;

  EncoderState encode(std::span<const int> src) const;
  DecoderState start_decoder() const;
  /// Feeds one token and returns log-probabilities of the next one.
  std::vector<double> decode_step(const EncoderState& enc, DecoderState& dec, int token) const;

 private:
  struct AttnIdx {
    std::size_t wq, wk, wv, wo;
  };
  struct EncIdx {
    std::size_t ln1, ln2, w1, w2;
    AttnIdx attn;
  };
  struct DecIdx {
    std::size_t ln1, ln2, ln3, w1, w2;
    AttnIdx self, cross;
  };

  void index_layout();
  void check_ids(std::span<const int> ids, const char* what) const;
  const double* p(std::size_t off) const { return params_.data() + off; }

  Matrix embed(std::span<const int> ids, Matrix* mask, std::mt19937_64* rng) const;
  void attention_block(Matrix& h, const Matrix* memory, std::size_t ln_off, const AttnIdx& w, bool causal,
                       ResidualBlockCache& c, std::mt19937_64* rng) const;
  void ff_block(Matrix& h, std::size_t ln_off, std::size_t w1, std::size_t w2, ResidualBlockCache& c,
                std::mt19937_64* rng) const;
  void attention_block_backward(Matrix& dh, Matrix* dmemory, const Matrix* memory, std::size_t ln_off,
                                const AttnIdx& w, const ResidualBlockCache& c, std::span<double> g) const;
  void ff_block_backward(Matrix& dh, std::size_t ln_off, std::size_t w1, std::size_t w2, const ResidualBlockCache& c,
                         std::span<double> g) const;
  void embed_backward(std::span<const int> ids, const Matrix& dx, const Matrix& mask, std::span<double> g) const;

  ModelConfig cfg_;
  std::vector<TensorInfo> layout_;
  std::vector<double> params_;
  std::size_t embed_ = 0, out_proj_ = 0, enc_final_ = 0, dec_final_ = 0;
  std::vector<EncIdx> enc_;
  std::vector<DecIdx> dec_;
};

/// Mean token cross-entropy of one pair under teacher forcing. The decoder
/// input is BOS followed by tgt and the expected output is tgt followed by EOS.
double sequence_loss(const Transformer& m, std::span<const int> src, std::span<const int> tgt);

}  // namespace pidgen
