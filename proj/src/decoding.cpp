#include "fusecap/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fusecap/errors.hpp"

namespace fusecap {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct LstmHypState : StepModel::State {
  LSTMState lstm;
};

// Row `r` of every layer tensor of a batched state, as a batch-1 state.
LSTMState take_row(const LSTMState& batched, std::size_t r) {
  LSTMState out;
  for (std::size_t l = 0; l < batched.h.size(); ++l) {
    const std::size_t H = batched.h[l].cols();
    auto hv = batched.h[l].values().subspan(r * H, H);
    auto cv = batched.c[l].values().subspan(r * H, H);
    out.h.emplace_back(Shape{1, H}, std::vector<double>(hv.begin(), hv.end()));
    out.c.emplace_back(Shape{1, H}, std::vector<double>(cv.begin(), cv.end()));
  }
  return out;
}

Tensor repeat_rows(std::span<const double> row, std::size_t n) {
  std::vector<double> out;
  out.reserve(row.size() * n);
  for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), row.begin(), row.end());
  return Tensor({n, row.size()}, std::move(out));
}

LSTMState stack(std::span<const StepModel::StatePtr> states) {
  LSTMState out;
  const auto& first = static_cast<const LstmHypState&>(*states.front()).lstm;
  for (std::size_t l = 0; l < first.h.size(); ++l) {
    const std::size_t H = first.h[l].cols();
    std::vector<double> h, c;
    h.reserve(states.size() * H);
    c.reserve(states.size() * H);
    for (const auto& s : states) {
      const auto& st = static_cast<const LstmHypState&>(*s).lstm;
      auto hv = st.h[l].values();
      auto cv = st.c[l].values();
      h.insert(h.end(), hv.begin(), hv.end());
      c.insert(c.end(), cv.begin(), cv.end());
    }
    out.h.emplace_back(Shape{states.size(), H}, std::move(h));
    out.c.emplace_back(Shape{states.size(), H}, std::move(c));
  }
  return out;
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

struct Hyp {
  TokenSeq tokens;  // generated tokens only
  double score = 0.0;
  StepModel::StatePtr state;
};

double final_score(const Hyp& h, bool normalize) {
  return normalize ? h.score / static_cast<double>(std::max<std::size_t>(1, h.tokens.size()))
                   : h.score;
}

// True when a ranks before b: higher score, then shorter, then lexicographically smaller ids.
bool better(const Hyp& a, const Hyp& b, bool normalize) {
  const double sa = final_score(a, normalize), sb = final_score(b, normalize);
  if (sa != sb) return sa > sb;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

DecodeResult to_result(const Hyp& h, bool finished) {
  DecodeResult r;
  r.tokens.push_back(kStart);
  r.tokens.insert(r.tokens.end(), h.tokens.begin(), h.tokens.end());
  r.log_prob = h.score;
  r.finished = finished;
  return r;
}

}  // namespace

void BeamConfig::validate() const {
  if (beam_width < 1) throw ConfigError("beam width must be at least 1");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
}

DecodeResult greedy_decode(const StepModel& model, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  Hyp hyp{{}, 0.0, model.initial_state()};
  TokenId prev = kStart;
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<StepModel::StatePtr> next;
    const StepModel::StatePtr states[1] = {hyp.state};
    const TokenId prevs[1] = {prev};
    auto rows = model.advance(states, prevs, step, next);
    const auto best = static_cast<TokenId>(argmax(rows[0]));
    hyp.score += rows[0][best];
    hyp.tokens.push_back(best);
    hyp.state = next[0];
    prev = best;
    if (best == kEos) return to_result(hyp, true);
  }
  return to_result(hyp, false);
}

DecodeResult beam_search(const StepModel& model, const BeamConfig& config) {
  config.validate();
  const bool norm = config.length_normalization;
  std::vector<Hyp> active{{{}, 0.0, model.initial_state()}};
  std::vector<Hyp> finished;
  std::size_t width = config.beam_width;

  struct Candidate {
    double score;
    TokenId token;
    std::size_t parent;
  };

  for (std::size_t step = 0; step < config.max_len && !active.empty() && width > 0; ++step) {
    std::vector<StepModel::StatePtr> states;
    std::vector<TokenId> prev;
    for (const auto& h : active) {
      states.push_back(h.state);
      prev.push_back(h.tokens.empty() ? kStart : h.tokens.back());
    }
    std::vector<StepModel::StatePtr> next;
    auto rows = model.advance(states, prev, step, next);

    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < active.size(); ++i) {
      for (std::size_t v = 0; v < rows[i].size(); ++v) {
        if (rows[i][v] == kNegInf) continue;
        cands.push_back({active[i].score + rows[i][v], static_cast<TokenId>(v), i});
      }
    }
    const std::size_t keep = std::min(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.token != b.token) return a.token < b.token;
                        return a.parent < b.parent;
                      });

    std::vector<Hyp> survivors;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      Hyp h{active[cand.parent].tokens, cand.score, next[cand.parent]};
      h.tokens.push_back(cand.token);
      if (cand.token == kEos) {
        finished.push_back(std::move(h));
        --width;
      } else {
        survivors.push_back(std::move(h));
      }
    }
    active = std::move(survivors);

    // Scores only decrease, so once a finished hypothesis matches the best live
    // one nothing left in the beam can overtake it.
    if (!norm && !finished.empty() && !active.empty()) {
      double best_done = kNegInf, best_live = kNegInf;
      for (const auto& f : finished) best_done = std::max(best_done, f.score);
      for (const auto& a : active) best_live = std::max(best_live, a.score);
      if (best_done >= best_live) break;
    }
  }

  if (!finished.empty()) {
    const Hyp* best = &finished.front();
    for (const auto& f : finished) {
      if (better(f, *best, norm)) best = &f;
    }
    return to_result(*best, true);
  }
  if (active.empty()) throw StateError("beam search produced no hypothesis");
  const Hyp* best = &active.front();
  for (const auto& a : active) {
    if (better(a, *best, norm)) best = &a;
  }
  return to_result(*best, false);
}

CaptionStepModel::CaptionStepModel(const CaptionModel& model, std::span<const double> features)
    : model_(model),
      features_(Shape{1, features.size()}, std::vector<double>(features.begin(), features.end())) {
  if (features.size() != model.config().decoder.feature_dim) {
    throw ConfigError("feature width " + std::to_string(features.size()) +
                      " does not match the model's " +
                      std::to_string(model.config().decoder.feature_dim));
  }
}

std::size_t CaptionStepModel::vocab_size() const { return model_.config().decoder.vocab_size; }

StepModel::StatePtr CaptionStepModel::initial_state() const {
  auto s = std::make_shared<LstmHypState>();
  s->lstm = model_.decoder().initial_state(1);
  return s;
}

std::vector<std::vector<double>> CaptionStepModel::advance(std::span<const StatePtr> states,
                                                           std::span<const TokenId> prev,
                                                           std::size_t step,
                                                           std::vector<StatePtr>& next) const {
  nn::NoGradGuard no_grad;
  const std::size_t K = states.size();
  const auto& decoder = model_.decoder();
  Tensor input = step == 0 ? decoder.encode_image(repeat_rows(features_.values(), K))
                           : decoder.embed(prev);
  auto [h_top, state] = decoder.step(input, stack(states));

  Tensor logits;
  if (model_.fused()) {
    if (!mlm_provider_) throw StateError("fusion model decoding needs an MLM state provider");
    const Tensor h_mlm = mlm_provider_(step);
    const Tensor rows = repeat_rows(h_mlm.values(), K);
    logits = model_.logits(h_top, &rows, false, nullptr);
  } else {
    logits = model_.logits(h_top, nullptr, false, nullptr);
  }

  const std::size_t V = logits.cols();
  std::vector<std::vector<double>> out;
  next.clear();
  for (std::size_t r = 0; r < K; ++r) {
    auto row = nn::log_softmax(logits.values().subspan(r * V, V));
    row[kPad] = row[kStart] = row[kMask] = kNegInf;
    out.push_back(std::move(row));
    auto s = std::make_shared<LstmHypState>();
    s->lstm = K == 1 ? state : take_row(state, r);
    next.push_back(std::move(s));
  }
  return out;
}

DecodeResult greedy_decode(const CaptionModel& model, std::span<const double> features,
                           std::size_t max_len) {
  if (model.fused()) throw ConfigError("fusion models decode through emend()");
  return greedy_decode(CaptionStepModel(model, features), max_len);
}

DecodeResult beam_search(const CaptionModel& model, std::span<const double> features,
                         const BeamConfig& config) {
  if (model.fused()) throw ConfigError("fusion models decode through emend()");
  return beam_search(CaptionStepModel(model, features), config);
}

TokenSeq masked_draft(std::span<const TokenId> draft, std::size_t step) {
  const TokenSeq words = strip_specials(draft);
  TokenSeq seq{kStart};
  seq.insert(seq.end(), words.begin(), words.end());
  seq.push_back(kEos);
  const std::size_t pos = step + 1;
  if (pos < seq.size()) {
    seq[pos] = kMask;
  } else {
    seq.back() = kMask;
    seq.push_back(kEos);
  }
  return seq;
}

DecodeResult emend(const CaptionModel& model, const ToyMLM& mlm, std::span<const double> features,
                   std::span<const TokenId> draft, const BeamConfig& config,
                   const EmendOptions& options) {
  if (!model.fused()) throw ConfigError("emend needs a fusion model, got the baseline");
  if (strip_specials(draft).empty()) throw InputError("emend: empty draft caption");
  const std::size_t mlm_dim = model.config().mlm_dim;
  if (mlm.config().hidden_dim != mlm_dim) {
    throw ConfigError("MLM hidden size " + std::to_string(mlm.config().hidden_dim) +
                      " does not match the fusion model's " + std::to_string(mlm_dim));
  }
  CaptionStepModel step_model(model, features);
  if (options.constant_mlm_state) {
    if (options.constant_mlm_state->size() != mlm_dim) {
      throw ConfigError("constant MLM state has the wrong width");
    }
    const Tensor fixed = Tensor::vector(*options.constant_mlm_state);
    step_model.set_mlm_provider([fixed](std::size_t) { return fixed; });
  } else {
    // Steps 0..n mask draft positions 1..n+1, which is one encode_all_masks
    // pass; every later step reads the same appended-mask sequence.
    nn::NoGradGuard no_grad;
    const TokenSeq words = strip_specials(draft);
    TokenSeq full{kStart};
    full.insert(full.end(), words.begin(), words.end());
    full.push_back(kEos);
    const Tensor inside = mlm.encode_all_masks(full);
    std::vector<Tensor> rows;
    for (std::size_t r = 0; r < inside.rows(); ++r) {
      auto v = inside.values().subspan(r * mlm_dim, mlm_dim);
      rows.push_back(Tensor::vector({v.begin(), v.end()}));
    }
    rows.push_back(mlm.encode(masked_draft(draft, rows.size())));
    step_model.set_mlm_provider([rows = std::move(rows)](std::size_t step) {
      return rows[std::min(step, rows.size() - 1)];
    });
  }
  return config.beam_width == 1 ? greedy_decode(step_model, config.max_len)
                                : beam_search(step_model, config);
}

}  // namespace fusecap
