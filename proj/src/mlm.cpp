#include "fusecap/mlm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fusecap/checksum.hpp"
#include "fusecap/decoder.hpp"
#include "fusecap/errors.hpp"
#include "fusecap/optim.hpp"

namespace fusecap {
namespace {

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

ToyMLM::ToyMLM(const MlmConfig& config) : config_(config) {
  if (config.vocab_size < 2) throw ConfigError("MLM vocabulary too small");
  Rng rng(config.seed);
  const auto V = config.vocab_size, E = config.embed_dim, H = config.hidden_dim;
  embedding_ = &store_.add("mlm.embed", {V, E}, uniform_embedding(V, E, rng));
  forward_ = LSTMStack(store_, "mlm.fwd", E, H, config.num_layers, rng);
  backward_ = LSTMStack(store_, "mlm.bwd", E, H, config.num_layers, rng);
  combine_w_ = &store_.add("mlm.combine.W", {2 * H, H}, xavier_uniform(2 * H, H, rng));
  combine_b_ = &store_.add("mlm.combine.b", {H}, std::vector<double>(H, 0.0));
  head_w_ = &store_.add("mlm.head.W", {H, V}, xavier_uniform(H, V, rng));
  head_b_ = &store_.add("mlm.head.b", {V}, std::vector<double>(V, 0.0));
}

Tensor ToyMLM::encode(std::span<const TokenId> tokens) const {
  const auto masks = std::count(tokens.begin(), tokens.end(), kMask);
  if (masks != 1) {
    throw InputError("MLM input must contain exactly one [MASK], found " + std::to_string(masks));
  }
  const std::size_t at = std::find(tokens.begin(), tokens.end(), kMask) - tokens.begin();
  const std::size_t which[1] = {at};
  Tensor h = encode_batch({TokenSeq(tokens.begin(), tokens.end())}, which);
  auto v = h.values();
  return Tensor({config_.hidden_dim}, {v.begin(), v.end()});
}

Tensor ToyMLM::encode_batch(const std::vector<TokenSeq>& seqs,
                            std::span<const std::size_t> masked_at) const {
  if (seqs.empty() || masked_at.size() != seqs.size()) {
    throw InputError("encode_batch: one read position per sequence required");
  }
  const std::size_t B = seqs.size(), L = seqs.front().size();
  for (const auto& s : seqs) {
    if (s.size() != L || L == 0) throw InputError("encode_batch: sequences must share a non-zero length");
  }
  const std::size_t lo = *std::min_element(masked_at.begin(), masked_at.end());
  const std::size_t hi = *std::max_element(masked_at.begin(), masked_at.end());
  if (hi >= L) throw IndexError("encode_batch: read position beyond sequence end");

  std::vector<TokenId> column(B);
  auto embed_column = [&](std::size_t t) {
    for (std::size_t r = 0; r < B; ++r) column[r] = seqs[r][t];
    return nn::embedding(embedding_->tensor, column);
  };

  std::vector<Tensor> fwd;
  LSTMState state = forward_.zeros(B);
  for (std::size_t t = 0; t <= hi; ++t) {
    auto [h, next] = forward_.step(embed_column(t), state);
    fwd.push_back(h);
    state = std::move(next);
  }
  std::vector<Tensor> bwd(L - lo);
  state = backward_.zeros(B);
  for (std::size_t t = L; t-- > lo;) {
    auto [h, next] = backward_.step(embed_column(t), state);
    bwd[t - lo] = h;
    state = std::move(next);
  }
  std::vector<std::size_t> bwd_sel(B);
  for (std::size_t r = 0; r < B; ++r) bwd_sel[r] = masked_at[r] - lo;
  Tensor hf = nn::pick_rows(fwd, masked_at);
  Tensor hb = nn::pick_rows(bwd, bwd_sel);
  return nn::affine(nn::concat_last(hf, hb), combine_w_->tensor, combine_b_->tensor);
}

Tensor ToyMLM::encode_all_masks(std::span<const TokenId> seq) const {
  return encode_all_masks_batch({TokenSeq(seq.begin(), seq.end())}).front();
}

std::vector<Tensor> ToyMLM::encode_all_masks_batch(const std::vector<TokenSeq>& seqs) const {
  if (seqs.empty()) throw InputError("encode_all_masks: no sequences");
  const std::size_t B = seqs.size(), L = seqs.front().size();
  if (L < 2) throw InputError("encode_all_masks: sequence needs at least 2 tokens");
  for (const auto& s : seqs) {
    if (s.size() != L) throw InputError("encode_all_masks: sequences must share one length");
  }
  const std::size_t N = L - 1, H = config_.hidden_dim;

  std::vector<TokenId> column(B);
  auto embed_column = [&](std::size_t t) {
    for (std::size_t r = 0; r < B; ++r) column[r] = seqs[r][t];
    return nn::embedding(embedding_->tensor, column);
  };
  // Unmasked prefix states: fwd_states[t] is the state after reading tokens 0..t.
  std::vector<LSTMState> fwd_states;
  LSTMState state = forward_.zeros(B);
  for (std::size_t t = 0; t + 1 < L; ++t) {
    state = forward_.step(embed_column(t), state).second;
    fwd_states.push_back(state);
  }
  // Unmasked suffix states: bwd_states[t] is the state after reading tokens L-1..t.
  std::vector<LSTMState> bwd_states(L);
  state = backward_.zeros(B);
  for (std::size_t t = L; t-- > 2;) {
    state = backward_.step(embed_column(t), state).second;
    bwd_states[t] = state;
  }

  // One batched mask step; row r*N + (p-1) masks position p of sequence r.
  const std::size_t layers = config_.num_layers;
  auto gather = [&](bool forward) {
    LSTMState out;
    for (std::size_t l = 0; l < layers; ++l) {
      std::vector<double> h(B * N * H, 0.0), c(B * N * H, 0.0);
      for (std::size_t r = 0; r < B; ++r) {
        for (std::size_t p = 1; p < L; ++p) {
          const LSTMState* src = forward ? &fwd_states[p - 1]
                                         : (p + 1 < L ? &bwd_states[p + 1] : nullptr);
          if (!src) continue;
          const std::size_t dst = (r * N + p - 1) * H;
          auto hv = src->h[l].values().subspan(r * H, H);
          auto cv = src->c[l].values().subspan(r * H, H);
          std::copy(hv.begin(), hv.end(), h.begin() + static_cast<std::ptrdiff_t>(dst));
          std::copy(cv.begin(), cv.end(), c.begin() + static_cast<std::ptrdiff_t>(dst));
        }
      }
      out.h.emplace_back(Shape{B * N, H}, std::move(h));
      out.c.emplace_back(Shape{B * N, H}, std::move(c));
    }
    return out;
  };
  const std::vector<TokenId> masks(B * N, kMask);
  Tensor x = nn::embedding(embedding_->tensor, masks);
  Tensor hf = forward_.step(x, gather(true)).first;
  Tensor hb = backward_.step(x, gather(false)).first;
  Tensor combined = nn::affine(nn::concat_last(hf, hb), combine_w_->tensor, combine_b_->tensor);

  std::vector<Tensor> out;
  auto v = combined.values();
  for (std::size_t r = 0; r < B; ++r) {
    auto rows = v.subspan(r * N * H, N * H);
    out.emplace_back(Shape{N, H}, std::vector<double>(rows.begin(), rows.end()));
  }
  return out;
}

Tensor ToyMLM::predict_logits(const Tensor& hidden) const {
  return nn::affine(hidden, head_w_->tensor, head_b_->tensor);
}

void ToyMLM::freeze() {
  for (auto* p : store_.all()) p->freeze();
}

bool ToyMLM::frozen() const {
  const auto all = store_.all();
  return std::all_of(all.begin(), all.end(), [](const Parameter* p) { return p->frozen; });
}

std::string ToyMLM::checksum() const { return parameter_checksum(store_); }

MlmPretrainReport mlm_pretrain(ToyMLM& mlm, const std::vector<TokenSeq>& corpus,
                               const MlmPretrainConfig& config) {
  if (corpus.empty()) throw InputError("mlm_pretrain: empty corpus");
  for (const auto& s : corpus) {
    if (s.size() < 2) throw InputError("mlm_pretrain: sequences need at least 2 tokens");
  }
  if (mlm.frozen()) throw StateError("mlm_pretrain: model is already frozen");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");

  Rng rng(config.seed);
  AdamState adam(AdamConfig{config.lr});
  auto params = mlm.params().all();

  // Equal-length buckets so every batch row shares one time axis.
  auto make_batches = [&]() {
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return corpus[a].size() < corpus[b].size();
    });
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size();) {
      std::vector<std::size_t> batch{order[i++]};
      while (i < order.size() && batch.size() < config.batch_size &&
             corpus[order[i]].size() == corpus[batch.front()].size()) {
        batch.push_back(order[i++]);
      }
      batches.push_back(std::move(batch));
    }
    std::shuffle(batches.begin(), batches.end(), rng.engine());
    return batches;
  };

  struct Pass {
    double loss = 0.0;
    std::size_t correct = 0;
  };
  auto run_batch = [&](const std::vector<std::size_t>& batch, bool train) {
    const std::size_t L = corpus[batch.front()].size();
    std::vector<TokenSeq> masked;
    std::vector<std::size_t> at;
    std::vector<TokenId> targets;
    for (auto idx : batch) {
      const std::size_t p = 1 + rng.index(L - 1);
      TokenSeq s = corpus[idx];
      targets.push_back(s[p]);
      s[p] = kMask;
      masked.push_back(std::move(s));
      at.push_back(p);
    }
    Tensor logits = mlm.predict_logits(mlm.encode_batch(masked, at));
    Tensor loss = nn::softmax_xent(logits, targets);
    Pass out{loss.item(), 0};
    const std::size_t V = logits.cols();
    for (std::size_t r = 0; r < batch.size(); ++r) {
      if (argmax_row(logits.values().subspan(r * V, V)) == static_cast<std::size_t>(targets[r])) {
        ++out.correct;
      }
    }
    if (train) {
      nn::scale(loss, 1.0 / static_cast<double>(batch.size())).backward();
      adam_step(params, adam);
    }
    return out;
  };

  MlmPretrainReport report;
  {
    // Loss of the untrained model; parameters are temporarily frozen so no graph is built.
    for (auto* p : params) p->tensor.set_requires_grad(false);
    double total = 0.0;
    for (const auto& batch : make_batches()) total += run_batch(batch, false).loss;
    for (auto* p : params) p->tensor.set_requires_grad(true);
    report.initial_loss = total / static_cast<double>(corpus.size());
  }
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double total = 0.0;
    std::size_t correct = 0;
    for (const auto& batch : make_batches()) {
      auto pass = run_batch(batch, true);
      total += pass.loss;
      correct += pass.correct;
    }
    report.epochs.push_back({total / static_cast<double>(corpus.size()),
                             static_cast<double>(correct) / static_cast<double>(corpus.size())});
  }
  mlm.freeze();
  return report;
}

double mlm_masked_accuracy(const ToyMLM& mlm, const std::vector<TokenSeq>& corpus) {
  std::size_t total = 0, correct = 0;
  for (const auto& seq : corpus) {
    if (seq.size() < 2) continue;
    Tensor logits = mlm.predict_logits(mlm.encode_all_masks(seq));
    const std::size_t V = logits.cols();
    for (std::size_t p = 1; p < seq.size(); ++p) {
      ++total;
      if (argmax_row(logits.values().subspan((p - 1) * V, V)) == static_cast<std::size_t>(seq[p])) {
        ++correct;
      }
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace fusecap
