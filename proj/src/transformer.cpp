#include "pidgen/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pidgen/errors.hpp"
#include "pidgen/kernels.hpp"
#include "pidgen/tokenizer.hpp"

namespace pidgen {

namespace {

constexpr double kNormEps = 1e-6;

// Y = X * W with W stored rows x cols at w.
Matrix mm(const Matrix& x, const double* w, std::size_t cols) {
  Matrix y(x.rows, cols);
  kernels::gemm_nn(x.rows, cols, x.cols, x.data.data(), w, y.data.data());
  return y;
}

// dW += X^T dY
void acc_weight_grad(const Matrix& x, const Matrix& dy, double* dw) {
  kernels::gemm_tn(x.cols, dy.cols, x.rows, x.data.data(), dy.data.data(), dw);
}

// dX += dY W^T with W stored x_cols x dy.cols.
void acc_input_grad(const Matrix& dy, const double* w, Matrix& dx) {
  kernels::gemm_nt(dy.rows, dx.cols, dy.cols, dy.data.data(), w, dx.data.data());
}

void layer_norm(const Matrix& x, const double* gain, Matrix& y, LayerNormCache* c) {
  const std::size_t d = x.cols;
  y = Matrix(x.rows, d);
  if (c) {
    c->xhat = Matrix(x.rows, d);
    c->rstd.assign(x.rows, 0.0);
  }
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xr = x.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kNormEps);
    double* yr = y.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (xr[j] - mean) * rstd;
      yr[j] = gain[j] * xh;
      if (c) c->xhat(i, j) = xh;
    }
    if (c) c->rstd[i] = rstd;
  }
}

// dx += d(norm)/dx applied to dy.
void layer_norm_backward(const Matrix& dy, const double* gain, const LayerNormCache& c, Matrix& dx, double* dgain) {
  const std::size_t d = dy.cols;
  const double inv_d = 1.0 / static_cast<double>(d);
  std::vector<double> dxh(d);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    const double* dyr = dy.row(i);
    const double* xh = c.xhat.row(i);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dgain[j] += dyr[j] * xh[j];
      dxh[j] = dyr[j] * gain[j];
      s1 += dxh[j];
      s2 += dxh[j] * xh[j];
    }
    s1 *= inv_d;
    s2 *= inv_d;
    double* dxr = dx.row(i);
    const double rstd = c.rstd[i];
    for (std::size_t j = 0; j < d; ++j) dxr[j] += rstd * (dxh[j] - s1 - xh[j] * s2);
  }
}

// Multi-head scaled dot-product attention. With causal set, query i sees
// keys 0..i only.
void attend(const Matrix& q, const Matrix& k, const Matrix& v, int n_heads, bool causal, Matrix& ctx,
            std::vector<Matrix>* probs) {
  const std::size_t tq = q.rows, tk = k.rows, d = q.cols;
  const std::size_t dk = d / static_cast<std::size_t>(n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  ctx = Matrix(tq, d);
  if (probs) probs->assign(static_cast<std::size_t>(n_heads), Matrix(tq, tk));
  std::vector<double> s(tk);
  for (int h = 0; h < n_heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dk;
    for (std::size_t i = 0; i < tq; ++i) {
      const std::size_t visible = causal ? std::min(i + 1, tk) : tk;
      const double* qi = q.row(i) + off;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < visible; ++j) {
        const double* kj = k.row(j) + off;
        double dot = 0.0;
        for (std::size_t t = 0; t < dk; ++t) dot += qi[t] * kj[t];
        s[j] = dot * scale;
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < visible; ++j) {
        s[j] = std::exp(s[j] - mx);
        z += s[j];
      }
      double* ci = ctx.row(i) + off;
      for (std::size_t j = 0; j < visible; ++j) {
        const double pj = s[j] / z;
        if (probs) (*probs)[static_cast<std::size_t>(h)](i, j) = pj;
        const double* vj = v.row(j) + off;
        for (std::size_t t = 0; t < dk; ++t) ci[t] += pj * vj[t];
      }
    }
  }
}

void attend_backward(const Matrix& q, const Matrix& k, const Matrix& v, const std::vector<Matrix>& probs,
                     const Matrix& dctx, Matrix& dq, Matrix& dk, Matrix& dv) {
  const std::size_t tq = q.rows, tk = k.rows, d = q.cols;
  const std::size_t n_heads = probs.size();
  const std::size_t hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  dq = Matrix(tq, d);
  dk = Matrix(tk, d);
  dv = Matrix(tk, d);
  std::vector<double> dp(tk);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    const Matrix& P = probs[h];
    for (std::size_t i = 0; i < tq; ++i) {
      const double* dci = dctx.row(i) + off;
      const double* pi = P.row(i);
      double dot_pdp = 0.0;
      for (std::size_t j = 0; j < tk; ++j) {
        if (pi[j] == 0.0) {
          dp[j] = 0.0;
          continue;
        }
        const double* vj = v.row(j) + off;
        double acc = 0.0;
        for (std::size_t t = 0; t < hd; ++t) acc += dci[t] * vj[t];
        dp[j] = acc;
        dot_pdp += pi[j] * acc;
        double* dvj = dv.row(j) + off;
        for (std::size_t t = 0; t < hd; ++t) dvj[t] += pi[j] * dci[t];
      }
      const double* qi = q.row(i) + off;
      double* dqi = dq.row(i) + off;
      for (std::size_t j = 0; j < tk; ++j) {
        if (pi[j] == 0.0) continue;
        const double ds = pi[j] * (dp[j] - dot_pdp) * scale;
        const double* kj = k.row(j) + off;
        double* dkj = dk.row(j) + off;
        for (std::size_t t = 0; t < hd; ++t) {
          dqi[t] += ds * kj[t];
          dkj[t] += ds * qi[t];
        }
      }
    }
  }
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double p, std::mt19937_64* rng) {
  if (!rng || p <= 0.0) return {};
  Matrix m(rows, cols);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep = 1.0 / (1.0 - p);
  for (auto& x : m.data) x = u(*rng) < p ? 0.0 : keep;
  return m;
}

void apply_mask(Matrix& x, const Matrix& mask) {
  if (mask.data.empty()) return;
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] *= mask.data[i];
}

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

void append_row(Matrix& m, const Matrix& r) {
  m.cols = r.cols;
  m.data.insert(m.data.end(), r.data.begin(), r.data.end());
  m.rows += 1;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0) throw ShapeError("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) throw ShapeError("d_model must be divisible by n_heads");
  if (n_encoder_layers <= 0 || n_decoder_layers <= 0) throw ShapeError("layer counts must be positive");
  if (d_ff < 0) throw ShapeError("d_ff must be positive (or 0 for the default)");
  if (vocab_size <= Vocabulary::kNumSpecial) throw ShapeError("vocab_size must exceed the special tokens");
  if (max_len <= 0) throw ShapeError("max_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ShapeError("dropout must lie in [0, 1)");
}

std::vector<TensorInfo> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto ff = static_cast<std::size_t>(cfg.ff());
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  std::vector<TensorInfo> out;
  std::size_t off = 0;
  auto add = [&](std::string name, std::size_t r, std::size_t c) {
    out.push_back({std::move(name), off, r, c});
    off += r * c;
  };
  auto attn = [&](const std::string& pre) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) add(pre + "." + w, d, d);
  };
  add("embed", v, d);
  for (int l = 0; l < cfg.n_encoder_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    add(pre + ".ln1", 1, d);
    attn(pre + ".attn");
    add(pre + ".ln2", 1, d);
    add(pre + ".ff.w1", d, ff);
    add(pre + ".ff.w2", ff, d);
  }
  add("enc.final_ln", 1, d);
  for (int l = 0; l < cfg.n_decoder_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    add(pre + ".ln1", 1, d);
    attn(pre + ".self");
    add(pre + ".ln2", 1, d);
    attn(pre + ".cross");
    add(pre + ".ln3", 1, d);
    add(pre + ".ff.w1", d, ff);
    add(pre + ".ff.w2", ff, d);
  }
  add("dec.final_ln", 1, d);
  add("out_proj", d, v);
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const auto layout = parameter_layout(cfg);
  return layout.back().offset + layout.back().size();
}

void positional_encoding(int pos, int d_model, double* out) {
  for (int i = 0; i < d_model; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / d_model);
    out[i] = std::sin(pos * freq);
    if (i + 1 < d_model) out[i + 1] = std::cos(pos * freq);
  }
}

Transformer::Transformer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  layout_ = parameter_layout(cfg_);
  params_.assign(parameter_count(cfg_), 0.0);
  std::mt19937_64 rng(seed);
  for (const auto& t : layout_) {
    double* w = params_.data() + t.offset;
    if (t.rows == 1) {
      std::fill(w, w + t.size(), 1.0);
      continue;
    }
    const double sd = t.name == "embed" ? 1.0 / std::sqrt(static_cast<double>(cfg_.d_model))
                                        : 1.0 / std::sqrt(static_cast<double>(t.rows));
    std::normal_distribution<double> nd(0.0, sd);
    for (std::size_t i = 0; i < t.size(); ++i) w[i] = nd(rng);
  }
  index_layout();
}

Transformer::Transformer(const ModelConfig& cfg, std::vector<double> weights) : cfg_(cfg) {
  layout_ = parameter_layout(cfg_);
  if (weights.size() != parameter_count(cfg_)) {
    throw ShapeError("expected " + std::to_string(parameter_count(cfg_)) + " weights, got " +
                     std::to_string(weights.size()));
  }
  params_ = std::move(weights);
  index_layout();
}

void Transformer::index_layout() {
  auto at = [&](const std::string& name) {
    for (const auto& t : layout_)
      if (t.name == name) return t.offset;
    throw std::out_of_range("no tensor " + name);
  };
  auto attn = [&](const std::string& pre) {
    return AttnIdx{at(pre + ".wq"), at(pre + ".wk"), at(pre + ".wv"), at(pre + ".wo")};
  };
  embed_ = at("embed");
  out_proj_ = at("out_proj");
  enc_final_ = at("enc.final_ln");
  dec_final_ = at("dec.final_ln");
  enc_.clear();
  dec_.clear();
  for (int l = 0; l < cfg_.n_encoder_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    enc_.push_back({at(pre + ".ln1"), at(pre + ".ln2"), at(pre + ".ff.w1"), at(pre + ".ff.w2"), attn(pre + ".attn")});
  }
  for (int l = 0; l < cfg_.n_decoder_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    dec_.push_back({at(pre + ".ln1"), at(pre + ".ln2"), at(pre + ".ln3"), at(pre + ".ff.w1"), at(pre + ".ff.w2"),
                    attn(pre + ".self"), attn(pre + ".cross")});
  }
}

std::span<double> Transformer::tensor(const std::string& name) {
  for (const auto& t : layout_)
    if (t.name == name) return {params_.data() + t.offset, t.size()};
  throw std::out_of_range("no tensor " + name);
}

std::span<const double> Transformer::tensor(const std::string& name) const {
  return const_cast<Transformer*>(this)->tensor(name);
}

void Transformer::check_ids(std::span<const int> ids, const char* what) const {
  if (ids.empty()) throw ShapeError(std::string(what) + " sequence is empty");
  if (ids.size() > static_cast<std::size_t>(cfg_.max_len)) {
    throw ShapeError(std::string(what) + " sequence of length " + std::to_string(ids.size()) + " exceeds max_len " +
                     std::to_string(cfg_.max_len));
  }
  for (int id : ids) {
    if (id < 0 || id >= cfg_.vocab_size) throw ShapeError(std::string(what) + " id " + std::to_string(id) + " out of vocabulary");
  }
}

Matrix Transformer::embed(std::span<const int> ids, Matrix* mask, std::mt19937_64* rng) const {
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const double scale = std::sqrt(static_cast<double>(d));
  Matrix x(ids.size(), d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const double* e = p(embed_) + static_cast<std::size_t>(ids[t]) * d;
    double* xr = x.row(t);
    positional_encoding(static_cast<int>(t), cfg_.d_model, xr);
    for (std::size_t j = 0; j < d; ++j) xr[j] += scale * e[j];
  }
  Matrix m = dropout_mask(x.rows, x.cols, cfg_.dropout, rng);
  apply_mask(x, m);
  if (mask) *mask = std::move(m);
  return x;
}

void Transformer::attention_block(Matrix& h, const Matrix* memory, std::size_t ln_off, const AttnIdx& w, bool causal,
                                  ResidualBlockCache& c, std::mt19937_64* rng) const {
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  layer_norm(h, p(ln_off), c.normed, &c.ln);
  const Matrix& kv_src = memory ? *memory : c.normed;
  c.attn.q = mm(c.normed, p(w.wq), d);
  c.attn.k = mm(kv_src, p(w.wk), d);
  c.attn.v = mm(kv_src, p(w.wv), d);
  attend(c.attn.q, c.attn.k, c.attn.v, cfg_.n_heads, causal, c.attn.ctx, &c.attn.probs);
  Matrix out = mm(c.attn.ctx, p(w.wo), d);
  c.drop_mask = dropout_mask(out.rows, out.cols, cfg_.dropout, rng);
  apply_mask(out, c.drop_mask);
  add_into(h, out);
}

void Transformer::ff_block(Matrix& h, std::size_t ln_off, std::size_t w1, std::size_t w2, ResidualBlockCache& c,
                           std::mt19937_64* rng) const {
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto ff = static_cast<std::size_t>(cfg_.ff());
  layer_norm(h, p(ln_off), c.normed, &c.ln);
  c.ff_pre = mm(c.normed, p(w1), ff);
  c.ff_act = c.ff_pre;
  for (auto& x : c.ff_act.data) x = std::max(x, 0.0);
  Matrix out = mm(c.ff_act, p(w2), d);
  c.drop_mask = dropout_mask(out.rows, out.cols, cfg_.dropout, rng);
  apply_mask(out, c.drop_mask);
  add_into(h, out);
}

Matrix Transformer::forward(std::span<const int> src, std::span<const int> tgt_in) const {
  ForwardCache cache;
  return forward(src, tgt_in, cache, nullptr);
}

Matrix Transformer::forward(std::span<const int> src, std::span<const int> tgt_in, ForwardCache& c,
                            std::mt19937_64* rng) const {
  check_ids(src, "source");
  check_ids(tgt_in, "decoder input");
  c.src.assign(src.begin(), src.end());
  c.tgt_in.assign(tgt_in.begin(), tgt_in.end());
  c.enc_blocks.assign(2 * enc_.size(), {});
  c.dec_blocks.assign(3 * dec_.size(), {});

  Matrix x = embed(src, &c.enc_in_mask, rng);
  for (std::size_t l = 0; l < enc_.size(); ++l) {
    attention_block(x, nullptr, enc_[l].ln1, enc_[l].attn, false, c.enc_blocks[2 * l], rng);
    ff_block(x, enc_[l].ln2, enc_[l].w1, enc_[l].w2, c.enc_blocks[2 * l + 1], rng);
  }
  layer_norm(x, p(enc_final_), c.memory, &c.enc_final);

  Matrix y = embed(tgt_in, &c.dec_in_mask, rng);
  for (std::size_t l = 0; l < dec_.size(); ++l) {
    attention_block(y, nullptr, dec_[l].ln1, dec_[l].self, true, c.dec_blocks[3 * l], rng);
    attention_block(y, &c.memory, dec_[l].ln2, dec_[l].cross, false, c.dec_blocks[3 * l + 1], rng);
    ff_block(y, dec_[l].ln3, dec_[l].w1, dec_[l].w2, c.dec_blocks[3 * l + 2], rng);
  }
  layer_norm(y, p(dec_final_), c.dec_out, &c.dec_final);
  c.logits = mm(c.dec_out, p(out_proj_), static_cast<std::size_t>(cfg_.vocab_size));
  return c.logits;
}

void Transformer::attention_block_backward(Matrix& dh, Matrix* dmemory, const Matrix* memory, std::size_t ln_off,
                                           const AttnIdx& w, const ResidualBlockCache& c, std::span<double> g) const {
  Matrix dout = dh;
  apply_mask(dout, c.drop_mask);
  acc_weight_grad(c.attn.ctx, dout, g.data() + w.wo);
  Matrix dctx(dout.rows, dout.cols);
  acc_input_grad(dout, p(w.wo), dctx);

  Matrix dq, dk, dv;
  attend_backward(c.attn.q, c.attn.k, c.attn.v, c.attn.probs, dctx, dq, dk, dv);

  const Matrix& kv_src = memory ? *memory : c.normed;
  acc_weight_grad(c.normed, dq, g.data() + w.wq);
  acc_weight_grad(kv_src, dk, g.data() + w.wk);
  acc_weight_grad(kv_src, dv, g.data() + w.wv);
  Matrix dnormed(c.normed.rows, c.normed.cols);
  acc_input_grad(dq, p(w.wq), dnormed);
  Matrix& dkv = memory ? *dmemory : dnormed;
  acc_input_grad(dk, p(w.wk), dkv);
  acc_input_grad(dv, p(w.wv), dkv);
  layer_norm_backward(dnormed, p(ln_off), c.ln, dh, g.data() + ln_off);
}

void Transformer::ff_block_backward(Matrix& dh, std::size_t ln_off, std::size_t w1, std::size_t w2,
                                    const ResidualBlockCache& c, std::span<double> g) const {
  Matrix dout = dh;
  apply_mask(dout, c.drop_mask);
  acc_weight_grad(c.ff_act, dout, g.data() + w2);
  Matrix dpre(c.ff_pre.rows, c.ff_pre.cols);
  acc_input_grad(dout, p(w2), dpre);
  for (std::size_t i = 0; i < dpre.data.size(); ++i)
    if (c.ff_pre.data[i] <= 0.0) dpre.data[i] = 0.0;
  acc_weight_grad(c.normed, dpre, g.data() + w1);
  Matrix dnormed(c.normed.rows, c.normed.cols);
  acc_input_grad(dpre, p(w1), dnormed);
  layer_norm_backward(dnormed, p(ln_off), c.ln, dh, g.data() + ln_off);
}

void Transformer::embed_backward(std::span<const int> ids, const Matrix& dx, const Matrix& mask,
                                 std::span<double> g) const {
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const double scale = std::sqrt(static_cast<double>(d));
  for (std::size_t t = 0; t < ids.size(); ++t) {
    double* ge = g.data() + embed_ + static_cast<std::size_t>(ids[t]) * d;
    const double* dr = dx.row(t);
    for (std::size_t j = 0; j < d; ++j) {
      const double m = mask.data.empty() ? 1.0 : mask(t, j);
      ge[j] += scale * m * dr[j];
    }
  }
}

void Transformer::backward(const ForwardCache& c, const Matrix& dlogits, std::span<double> g) const {
  if (g.size() != params_.size()) throw ShapeError("gradient buffer has the wrong size");
  if (dlogits.rows != c.logits.rows || dlogits.cols != c.logits.cols) throw ShapeError("dlogits shape mismatch");
  const auto d = static_cast<std::size_t>(cfg_.d_model);

  acc_weight_grad(c.dec_out, dlogits, g.data() + out_proj_);
  Matrix ddec(c.dec_out.rows, d);
  acc_input_grad(dlogits, p(out_proj_), ddec);
  Matrix dy(ddec.rows, d);
  layer_norm_backward(ddec, p(dec_final_), c.dec_final, dy, g.data() + dec_final_);

  Matrix dmemory(c.memory.rows, d);
  for (std::size_t l = dec_.size(); l-- > 0;) {
    ff_block_backward(dy, dec_[l].ln3, dec_[l].w1, dec_[l].w2, c.dec_blocks[3 * l + 2], g);
    attention_block_backward(dy, &dmemory, &c.memory, dec_[l].ln2, dec_[l].cross, c.dec_blocks[3 * l + 1], g);
    attention_block_backward(dy, nullptr, nullptr, dec_[l].ln1, dec_[l].self, c.dec_blocks[3 * l], g);
  }
  embed_backward(c.tgt_in, dy, c.dec_in_mask, g);

  Matrix dx(c.memory.rows, d);
  layer_norm_backward(dmemory, p(enc_final_), c.enc_final, dx, g.data() + enc_final_);
  for (std::size_t l = enc_.size(); l-- > 0;) {
    ff_block_backward(dx, enc_[l].ln2, enc_[l].w1, enc_[l].w2, c.enc_blocks[2 * l + 1], g);
    attention_block_backward(dx, nullptr, nullptr, enc_[l].ln1, enc_[l].attn, c.enc_blocks[2 * l], g);
  }
  embed_backward(c.src, dx, c.enc_in_mask, g);
}

EncoderState Transformer::encode(std::span<const int> src) const {
  check_ids(src, "source");
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  Matrix x = embed(src, nullptr, nullptr);
  ResidualBlockCache scratch;
  for (const auto& layer : enc_) {
    attention_block(x, nullptr, layer.ln1, layer.attn, false, scratch, nullptr);
    ff_block(x, layer.ln2, layer.w1, layer.w2, scratch, nullptr);
  }
  EncoderState st;
  layer_norm(x, p(enc_final_), st.memory, nullptr);
  for (const auto& layer : dec_) {
    st.cross_k.push_back(mm(st.memory, p(layer.cross.wk), d));
    st.cross_v.push_back(mm(st.memory, p(layer.cross.wv), d));
  }
  return st;
}

DecoderState Transformer::start_decoder() const {
  DecoderState st;
  st.self_k.assign(dec_.size(), Matrix());
  st.self_v.assign(dec_.size(), Matrix());
  return st;
}

std::vector<double> Transformer::decode_step(const EncoderState& enc, DecoderState& dec, int token) const {
  if (token < 0 || token >= cfg_.vocab_size) throw ShapeError("token " + std::to_string(token) + " out of vocabulary");
  if (dec.length >= cfg_.max_len) throw ShapeError("decoder input exceeds max_len");
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const double scale = std::sqrt(static_cast<double>(d));

  Matrix x(1, d);
  positional_encoding(dec.length, cfg_.d_model, x.row(0));
  const double* e = p(embed_) + static_cast<std::size_t>(token) * d;
  for (std::size_t j = 0; j < d; ++j) x(0, j) += scale * e[j];

  Matrix normed, ctx;
  for (std::size_t l = 0; l < dec_.size(); ++l) {
    const auto& layer = dec_[l];
    layer_norm(x, p(layer.ln1), normed, nullptr);
    Matrix q = mm(normed, p(layer.self.wq), d);
    append_row(dec.self_k[l], mm(normed, p(layer.self.wk), d));
    append_row(dec.self_v[l], mm(normed, p(layer.self.wv), d));
    attend(q, dec.self_k[l], dec.self_v[l], cfg_.n_heads, false, ctx, nullptr);
    add_into(x, mm(ctx, p(layer.self.wo), d));

    layer_norm(x, p(layer.ln2), normed, nullptr);
    q = mm(normed, p(layer.cross.wq), d);
    attend(q, enc.cross_k[l], enc.cross_v[l], cfg_.n_heads, false, ctx, nullptr);
    add_into(x, mm(ctx, p(layer.cross.wo), d));

    layer_norm(x, p(layer.ln3), normed, nullptr);
    Matrix act = mm(normed, p(layer.w1), static_cast<std::size_t>(cfg_.ff()));
    for (auto& a : act.data) a = std::max(a, 0.0);
    add_into(x, mm(act, p(layer.w2), d));
  }
  ++dec.length;
  layer_norm(x, p(dec_final_), normed, nullptr);
  Matrix logits = mm(normed, p(out_proj_), static_cast<std::size_t>(cfg_.vocab_size));

  std::vector<double> lp(logits.data);
  const double mx = *std::max_element(lp.begin(), lp.end());
  double z = 0.0;
  for (double v : lp) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  for (auto& v : lp) v -= lse;
  return lp;
}

double sequence_loss(const Transformer& m, std::span<const int> src, std::span<const int> tgt) {
  std::vector<int> tin{Vocabulary::kBos};
  tin.insert(tin.end(), tgt.begin(), tgt.end());
  std::vector<int> tout(tgt.begin(), tgt.end());
  tout.push_back(Vocabulary::kEos);
  const Matrix logits = m.forward(src, tin);
  double loss = 0.0;
  for (std::size_t t = 0; t < tout.size(); ++t) {
    const double* r = logits.row(t);
    const double mx = *std::max_element(r, r + logits.cols);
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(r[j] - mx);
    loss += mx + std::log(z) - r[tout[t]];
  }
  return loss / static_cast<double>(tout.size());
}

}  // namespace pidgen
