#include "pidgen/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "pidgen/errors.hpp"

namespace pidgen {

std::vector<TokenizedPair> encode_pairs(std::span<const DatasetPair> pairs, const Vocabulary& v) {
  std::vector<TokenizedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({encode(tokenize(p.pfd_sfiles.text), v).ids, encode(tokenize(p.pid_sfiles.text), v).ids});
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (eval_every == 0) throw std::invalid_argument("eval_every must be positive");
  if (patience == 0) throw std::invalid_argument("patience must be positive");
  if (clip_norm < 0.0) throw std::invalid_argument("clip_norm must be non-negative");
  if (!(min_delta >= 0.0)) throw std::invalid_argument("min_delta must be non-negative");
}

double batch_loss(const Transformer& m, std::span<const TokenizedPair> batch, std::span<double> grad,
                  std::mt19937_64* dropout_rng) {
  std::size_t n_tokens = 0;
  for (const auto& p : batch) n_tokens += p.tgt.size() + 1;
  if (n_tokens == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(n_tokens);

  double total = 0.0;
  ForwardCache cache;
  std::vector<int> tin, tout;
  for (const auto& p : batch) {
    tin.assign(1, Vocabulary::kBos);
    tin.insert(tin.end(), p.tgt.begin(), p.tgt.end());
    tout.assign(p.tgt.begin(), p.tgt.end());
    tout.push_back(Vocabulary::kEos);
    Matrix dlogits = m.forward(p.src, tin, cache, dropout_rng);
    for (std::size_t t = 0; t < tout.size(); ++t) {
      double* r = dlogits.row(t);
      const double mx = *std::max_element(r, r + dlogits.cols);
      double z = 0.0;
      for (std::size_t j = 0; j < dlogits.cols; ++j) z += std::exp(r[j] - mx);
      const double lse = mx + std::log(z);
      total += lse - r[tout[t]];
      for (std::size_t j = 0; j < dlogits.cols; ++j) r[j] = std::exp(r[j] - lse) * inv;
      r[tout[t]] -= inv;
    }
    if (!grad.empty()) m.backward(cache, dlogits, grad);
  }
  return total * inv;
}

double dataset_loss(const Transformer& m, std::span<const TokenizedPair> data) {
  double total = 0.0;
  std::size_t n_tokens = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t n = data[i].tgt.size() + 1;
    total += batch_loss(m, data.subspan(i, 1), {}) * static_cast<double>(n);
    n_tokens += n;
  }
  return n_tokens ? total / static_cast<double>(n_tokens) : 0.0;
}

TrainResult train(Transformer& model, const Vocabulary& vocab, std::span<const TokenizedPair> train_set,
                  std::span<const TokenizedPair> val_set, const TrainConfig& tc) {
  tc.validate();
  if (train_set.empty()) throw EmptyDataset("training set is empty");
  if (val_set.empty()) throw EmptyDataset("validation set is empty");
  if (static_cast<std::size_t>(model.config().vocab_size) != vocab.size()) {
    throw ShapeError("model vocab_size does not match the vocabulary");
  }

  const std::size_t n = train_set.size();
  const std::size_t n_params = model.num_parameters();
  std::mt19937_64 rng(tc.seed);
  std::mt19937_64 dropout_rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto reshuffle = [&] {
    for (std::size_t i = n; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
  };
  reshuffle();
  std::size_t cursor = 0;

  TrainResult res;
  auto record = [&](std::size_t step, double lt, double lv) {
    LossPoint pt{step, static_cast<double>(step * tc.batch_size) / static_cast<double>(n), lt, lv};
    res.history.push_back(pt);
    if (tc.on_eval) tc.on_eval(pt);
  };

  const double init_val = dataset_loss(model, val_set);
  if (!std::isfinite(init_val)) throw DivergenceError("initial validation loss is not finite");
  record(0, dataset_loss(model, train_set.subspan(0, std::min<std::size_t>(n, 64))), init_val);
  double best = init_val;
  std::size_t best_step = 0;
  std::vector<double> best_params(model.parameters().begin(), model.parameters().end());

  std::vector<double> grad(n_params), m1(n_params, 0.0), m2(n_params, 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double b1t = 1.0, b2t = 1.0;
  double running = 0.0;
  std::size_t running_n = 0, wait = 0;
  std::vector<TokenizedPair> batch;
  const bool use_dropout = model.config().dropout > 0.0;

  for (std::size_t step = 1; step <= tc.max_steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < std::min(tc.batch_size, n); ++b) {
      if (cursor == n) {
        reshuffle();
        cursor = 0;
      }
      batch.push_back(train_set[order[cursor++]]);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = batch_loss(model, batch, grad, use_dropout ? &dropout_rng : nullptr);
    if (!std::isfinite(loss)) throw DivergenceError("training loss became non-finite at step " + std::to_string(step));

    if (tc.clip_norm > 0.0) {
      double sq = 0.0;
      for (double g : grad) sq += g * g;
      const double norm = std::sqrt(sq);
      if (!std::isfinite(norm)) throw DivergenceError("gradient became non-finite at step " + std::to_string(step));
      if (norm > tc.clip_norm) {
        const double s = tc.clip_norm / norm;
        for (double& g : grad) g *= s;
      }
    }
    b1t *= kBeta1;
    b2t *= kBeta2;
    const double lr_t = tc.learning_rate * std::sqrt(1.0 - b2t) / (1.0 - b1t);
    auto w = model.parameters();
    for (std::size_t i = 0; i < n_params; ++i) {
      m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * grad[i];
      m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      w[i] -= lr_t * m1[i] / (std::sqrt(m2[i]) + kEps);
    }
    running += loss;
    ++running_n;
    res.steps_run = step;

    if (step % tc.eval_every == 0) {
      const double val = dataset_loss(model, val_set);
      if (!std::isfinite(val)) throw DivergenceError("validation loss became non-finite at step " + std::to_string(step));
      record(step, running / static_cast<double>(running_n), val);
      running = 0.0;
      running_n = 0;
      if (val < best - tc.min_delta) {
        best = val;
        best_step = step;
        std::copy(w.begin(), w.end(), best_params.begin());
        wait = 0;
      } else if (++wait >= tc.patience) {
        res.early_stopped = true;
        break;
      }
    }
  }

  std::copy(best_params.begin(), best_params.end(), model.parameters().begin());
  res.checkpoint = make_checkpoint(model, vocab, best_step, best);
  return res;
}

void write_loss_history(std::ostream& os, std::span<const LossPoint> history) {
  os << "epochs,loss_train,loss_val\n";
  os << std::setprecision(10);
  for (const auto& p : history) os << p.epoch << ',' << p.loss_train << ',' << p.loss_val << '\n';
}

GradCheckReport grad_check_report(const Transformer& model, std::span<const TokenizedPair> batch,
                                  std::size_t n_samples, std::uint64_t seed) {
  constexpr double kH = 1e-4;
  // Two central-difference estimates at h and h/4 differ by O(h^2) on smooth
  // stretches; a larger gap means the stencil crosses a ReLU hinge.
  constexpr double kSmoothTol = 1e-4;
  Transformer probe = model;
  std::vector<double> grad(probe.num_parameters(), 0.0);
  batch_loss(probe, batch, grad);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> idx(probe.num_parameters());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t k = std::min(n_samples, idx.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }

  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-6); };
  GradCheckReport rep;
  auto w = probe.parameters();
  auto central = [&](std::size_t i, double h) {
    const double orig = w[i];
    w[i] = orig + h;
    const double up = batch_loss(probe, batch, {});
    w[i] = orig - h;
    const double down = batch_loss(probe, batch, {});
    w[i] = orig;
    return (up - down) / (2.0 * h);
  };
  for (std::size_t s = 0; s < k; ++s) {
    const std::size_t i = idx[s];
    const double numeric = central(i, kH);
    if (rel(numeric, central(i, kH / 4)) > kSmoothTol) {
      ++rep.n_nonsmooth;
      continue;
    }
    ++rep.n_checked;
    rep.max_rel_error = std::max(rep.max_rel_error, rel(grad[i], numeric));
  }
  return rep;
}

double grad_check(const Transformer& model, std::span<const TokenizedPair> batch, std::size_t n_samples,
                  std::uint64_t seed) {
  return grad_check_report(model, batch, n_samples, seed).max_rel_error;
}

}  // namespace pidgen
