#include "pidgen/decode.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "pidgen/tokenizer.hpp"

namespace pidgen {

namespace {

int clamp_len(const Transformer& m, int max_len) { return std::max(0, std::min(max_len, m.config().max_len)); }

}  // namespace

std::vector<int> decode_greedy(const Transformer& m, std::span<const int> src, int max_len) {
  max_len = clamp_len(m, max_len);
  const EncoderState enc = m.encode(src);
  DecoderState dec = m.start_decoder();
  std::vector<int> out;
  int tok = Vocabulary::kBos;
  while (static_cast<int>(out.size()) < max_len) {
    const auto lp = m.decode_step(enc, dec, tok);
    tok = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    out.push_back(tok);
    if (tok == Vocabulary::kEos) break;
  }
  return out;
}

std::vector<BeamHypothesis> decode_beam(const Transformer& m, std::span<const int> src, const BeamOptions& opt) {
  const auto width = static_cast<std::size_t>(std::max(1, opt.beam_width));
  const int max_len = clamp_len(m, opt.max_len);
  const EncoderState enc = m.encode(src);

  struct Live {
    BeamHypothesis hyp;
    DecoderState state;
    std::vector<double> next;
  };
  std::vector<Live> alive;
  {
    Live root{{}, m.start_decoder(), {}};
    root.next = m.decode_step(enc, root.state, Vocabulary::kBos);
    alive.push_back(std::move(root));
  }
  std::vector<BeamHypothesis> finished;

  struct Cand {
    double score;
    std::size_t beam;
    int token;
  };
  std::vector<Cand> cands;
  for (int step = 0; step < max_len && !alive.empty(); ++step) {
    cands.clear();
    for (std::size_t b = 0; b < alive.size(); ++b) {
      const auto& nx = alive[b].next;
      for (std::size_t v = 0; v < nx.size(); ++v) {
        cands.push_back({alive[b].hyp.log_prob + nx[v], b, static_cast<int>(v)});
      }
    }
    // EOS appears at most once per live beam, so the best 2N candidates hold
    // at least N that continue.
    const std::size_t keep = std::min(cands.size(), 2 * width);
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.score != b.score) return a.score > b.score;
                        return std::tie(a.beam, a.token) < std::tie(b.beam, b.token);
                      });

    std::vector<Cand> grow;
    for (std::size_t r = 0; r < keep; ++r) {
      const Cand& c = cands[r];
      if (c.token == Vocabulary::kEos) {
        if (r < width) {
          BeamHypothesis h = alive[c.beam].hyp;
          h.token_ids.push_back(c.token);
          h.log_prob = c.score;
          h.finished = true;
          finished.push_back(std::move(h));
        }
        continue;
      }
      if (grow.size() < width) grow.push_back(c);
    }
    if (finished.size() >= width) {
      alive.clear();
      break;
    }

    const bool last = step + 1 == max_len;
    std::vector<Live> next;
    next.reserve(grow.size());
    for (const Cand& c : grow) {
      Live child{alive[c.beam].hyp, {}, {}};
      child.hyp.token_ids.push_back(c.token);
      child.hyp.log_prob = c.score;
      if (!last) {
        child.state = alive[c.beam].state;
        child.next = m.decode_step(enc, child.state, c.token);
      }
      next.push_back(std::move(child));
    }
    alive = std::move(next);
  }

  auto key = [&](const BeamHypothesis& h) {
    if (!opt.length_normalization || h.token_ids.empty()) return h.log_prob;
    return h.log_prob / static_cast<double>(h.token_ids.size());
  };
  auto by_key = [&](const BeamHypothesis& a, const BeamHypothesis& b) { return key(a) > key(b); };

  std::vector<BeamHypothesis> out;
  if (!finished.empty()) {
    std::stable_sort(finished.begin(), finished.end(), by_key);
    if (finished.size() > width) finished.resize(width);
    out = std::move(finished);
  } else {
    for (auto& l : alive) out.push_back(std::move(l.hyp));
    std::stable_sort(out.begin(), out.end(), by_key);
  }
  return out;
}

double sequence_log_prob(const Transformer& m, std::span<const int> src, std::span<const int> tokens) {
  if (tokens.empty()) return 0.0;
  std::vector<int> tin{Vocabulary::kBos};
  tin.insert(tin.end(), tokens.begin(), tokens.end() - 1);
  const Matrix logits = m.forward(src, tin);
  double total = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const double* r = logits.row(t);
    const double mx = *std::max_element(r, r + logits.cols);
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(r[j] - mx);
    total += r[tokens[t]] - mx - std::log(z);
  }
  return total;
}

std::vector<int> strip_eos(std::span<const int> tokens) {
  std::vector<int> out(tokens.begin(), tokens.end());
  if (!out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
  return out;
}

}  // namespace pidgen
