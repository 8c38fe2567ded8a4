#include "fusecap/training.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <numeric>

#include "fusecap/decoding.hpp"
#include "fusecap/errors.hpp"
#include "fusecap/metrics.hpp"
#include "fusecap/optim.hpp"

namespace fusecap {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (halve_patience == 0) throw ConfigError("halve_patience must be positive");
  if (stop_patience < halve_patience) throw ConfigError("stop_patience must be >= halve_patience");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (embed_dim == 0 || hidden_dim == 0 || num_layers == 0) {
    throw ConfigError("model dimensions must be positive");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"halve_patience", halve_patience},
          {"stop_patience", stop_patience},
          {"strict_improvement", strict_improvement},
          {"seed", seed},
          {"fusion", to_string(fusion)},
          {"dropout", dropout},
          {"clip_norm", clip_norm},
          {"embed_dim", embed_dim},
          {"hidden_dim", hidden_dim},
          {"num_layers", num_layers},
          {"val_max_len", val_max_len}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& base) {
  TrainConfig c = base;
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("lr", c.lr);
  take("batch_size", c.batch_size);
  take("max_epochs", c.max_epochs);
  take("halve_patience", c.halve_patience);
  take("stop_patience", c.stop_patience);
  take("strict_improvement", c.strict_improvement);
  take("seed", c.seed);
  take("dropout", c.dropout);
  take("clip_norm", c.clip_norm);
  take("embed_dim", c.embed_dim);
  take("hidden_dim", c.hidden_dim);
  take("num_layers", c.num_layers);
  take("val_max_len", c.val_max_len);
  if (j.contains("fusion")) c.fusion = parse_fusion_kind(j.at("fusion").get<std::string>());
  return c;
}

ScheduleDecision schedule_step(std::span<const double> history, double lr,
                               std::size_t halve_patience, std::size_t stop_patience,
                               bool strict) {
  if (history.empty()) throw InputError("schedule_step: empty validation history");
  std::size_t stale = 0;
  double best = history.front();
  for (std::size_t i = 1; i < history.size(); ++i) {
    const bool improved = strict ? history[i] > best : history[i] >= best;
    if (improved) {
      stale = 0;
    } else {
      ++stale;
    }
    best = std::max(best, history[i]);
  }
  ScheduleDecision d;
  d.stale_epochs = stale;
  d.halved = stale == halve_patience;
  d.lr = d.halved ? lr / 2.0 : lr;
  d.stop = stale >= stop_patience;
  return d;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : epochs) {
    eps.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"val_bleu4", e.val_bleu4},
                   {"lr", e.lr},
                   {"lr_halved", e.lr_halved},
                   {"seconds", e.seconds}});
  }
  nlohmann::json j{{"fusion", fusion},
                   {"seed", seed},
                   {"initial_loss", initial_loss},
                   {"epochs", eps},
                   {"stop_reason", stop_reason},
                   {"best_epoch", best_epoch},
                   {"wall_seconds", wall_seconds}};
  if (!mlm_checksum_before.empty()) {
    j["mlm_checksum_before"] = mlm_checksum_before;
    j["mlm_checksum_after"] = mlm_checksum_after;
  }
  return j;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Sample {
  std::size_t example;
  TokenSeq tokens;
  Tensor mlm_states;  // [(L-1)×H_m] rows for steps 0..L-2; fusion only
};

std::vector<Sample> make_samples(const std::vector<CaptionExample>& examples, const Vocab& vocab) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    for (const auto& ref : examples[i].references) {
      Sample s{i, tokenize(ref, vocab), {}};
      if (s.tokens.size() >= 2) out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<Tensor> mlm_states(const std::vector<Sample>& samples, const ToyMLM& mlm) {
  nn::NoGradGuard no_grad;
  std::vector<Tensor> out(samples.size());
  // Equal-length references share one batched MLM pass.
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t k = 0; k < samples.size(); ++k) by_length[samples[k].tokens.size()].push_back(k);
  for (const auto& [len, idx] : by_length) {
    for (std::size_t start = 0; start < idx.size(); start += 64) {
      std::vector<TokenSeq> seqs;
      const std::size_t stop = std::min(idx.size(), start + 64);
      for (std::size_t k = start; k < stop; ++k) seqs.push_back(samples[idx[k]].tokens);
      auto states = mlm.encode_all_masks_batch(seqs);
      for (std::size_t k = start; k < stop; ++k) out[idx[k]] = std::move(states[k - start]);
    }
  }
  return out;
}

void attach(std::vector<Sample>& samples, const std::vector<Tensor>& states) {
  if (states.size() != samples.size()) throw StateError("MLM cache does not match the samples");
  for (std::size_t k = 0; k < samples.size(); ++k) samples[k].mlm_states = states[k];
}

// Summed cross-entropy of a padded batch; `targets` receives the number of
// scored tokens.
Tensor batch_loss(const CaptionModel& model, const std::vector<const Sample*>& batch,
                  const std::vector<CaptionExample>& examples, bool training, Rng* rng,
                  std::size_t& targets) {
  const std::size_t B = batch.size();
  const auto& decoder = model.decoder();
  const std::size_t F = decoder.config().feature_dim;
  std::size_t steps = 0;
  std::vector<double> feats;
  feats.reserve(B * F);
  for (const auto* s : batch) {
    steps = std::max(steps, s->tokens.size() - 1);
    const auto& f = examples[s->example].features;
    if (f.size() != F) throw ConfigError("example feature width does not match the model");
    feats.insert(feats.end(), f.begin(), f.end());
  }
  const std::size_t Hm = model.config().mlm_dim;

  LSTMState state = decoder.initial_state(B);
  Tensor total;
  targets = 0;
  std::vector<TokenId> column(B), target(B);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor input;
    if (t == 0) {
      input = decoder.encode_image(Tensor({B, F}, feats));
    } else {
      for (std::size_t r = 0; r < B; ++r) {
        column[r] = t < batch[r]->tokens.size() ? batch[r]->tokens[t] : kPad;
      }
      input = decoder.embed(column);
    }
    auto [h, next] = decoder.step(input, state);
    state = std::move(next);
    for (std::size_t r = 0; r < B; ++r) {
      const bool live = t + 1 < batch[r]->tokens.size();
      target[r] = live ? batch[r]->tokens[t + 1] : nn::kIgnoreTarget;
      targets += live ? 1 : 0;
    }
    Tensor logits;
    if (model.fused()) {
      std::vector<double> rows(B * Hm, 0.0);
      for (std::size_t r = 0; r < B; ++r) {
        if (t + 1 < batch[r]->tokens.size()) {
          auto v = batch[r]->mlm_states.values().subspan(t * Hm, Hm);
          std::copy(v.begin(), v.end(), rows.begin() + static_cast<std::ptrdiff_t>(r * Hm));
        }
      }
      const Tensor h_mlm({B, Hm}, std::move(rows));
      logits = model.logits(h, &h_mlm, training, rng);
    } else {
      logits = model.logits(h, nullptr, training, rng);
    }
    Tensor step_loss = nn::softmax_xent(logits, target);
    total = t == 0 ? step_loss : nn::add(total, step_loss);
  }
  return total;
}

double mean_loss(const CaptionModel& model, const std::vector<Sample>& samples,
                 const std::vector<CaptionExample>& examples, std::size_t batch_size) {
  nn::NoGradGuard no_grad;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    std::vector<const Sample*> batch;
    for (std::size_t j = i; j < std::min(samples.size(), i + batch_size); ++j) {
      batch.push_back(&samples[j]);
    }
    std::size_t n = 0;
    sum += batch_loss(model, batch, examples, false, nullptr, n).item();
    count += n;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

std::vector<References> reference_words(const std::vector<CaptionExample>& examples) {
  std::vector<References> out;
  for (const auto& e : examples) {
    References refs;
    for (const auto& r : e.references) refs.push_back(split_words(r));
    out.push_back(std::move(refs));
  }
  return out;
}

Words to_words(const TokenSeq& seq, const Vocab& vocab) {
  Words w;
  for (TokenId id : strip_specials(seq)) w.push_back(vocab.token(id));
  return w;
}

// Shuffled batches of equal-length samples (no padding), in shuffled order.
std::vector<std::vector<std::size_t>> length_buckets(const std::vector<Sample>& samples,
                                                     std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].tokens.size() < samples[b].tokens.size();
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size();) {
    std::vector<std::size_t> batch{order[i++]};
    while (i < order.size() && batch.size() < batch_size &&
           samples[order[i]].tokens.size() == samples[batch.front()].tokens.size()) {
      batch.push_back(order[i++]);
    }
    batches.push_back(std::move(batch));
  }
  std::shuffle(batches.begin(), batches.end(), rng.engine());
  return batches;
}

using ValidateFn = std::function<double(const CaptionModel&)>;

TrainResult run_training(const TrainData& data, const TrainConfig& config, const ToyMLM* mlm,
                         const FusionCache* cache, const ValidateFn& validate,
                         const EpochCallback& on_epoch) {
  const auto t_start = Clock::now();
  if (data.train.empty()) throw InputError("training split is empty");
  if (data.val.empty()) throw InputError("validation split is empty");

  CaptionModelConfig mc;
  mc.decoder.vocab_size = data.vocab.size();
  mc.decoder.embed_dim = config.embed_dim;
  mc.decoder.hidden_dim = config.hidden_dim;
  mc.decoder.feature_dim = data.train.front().features.size();
  mc.decoder.num_layers = config.num_layers;
  mc.decoder.dropout = config.dropout;
  mc.fusion = config.fusion;
  mc.mlm_dim = mlm ? mlm->config().hidden_dim : 0;
  mc.fusion_dropout = config.dropout;
  mc.seed = config.seed;
  mc.vocab = data.vocab.tokens();
  CaptionModel model(mc);

  auto samples = make_samples(data.train, data.vocab);
  if (samples.empty()) throw InputError("training split has no usable captions");
  auto val_samples = make_samples(data.val, data.vocab);
  if (mlm) {
    if (cache) {
      attach(samples, cache->train);
      attach(val_samples, cache->val);
    } else {
      attach(samples, mlm_states(samples, *mlm));
      attach(val_samples, mlm_states(val_samples, *mlm));
    }
  }

  TrainReport report;
  report.fusion = to_string(config.fusion);
  report.seed = config.seed;
  report.initial_loss = mean_loss(model, val_samples, data.val, config.batch_size);

  auto params = model.params().all();
  AdamState adam(AdamConfig{config.lr});
  Rng rng = Rng::derive(config.seed, 0x7472, 0);  // shuffling and dropout
  std::vector<double> history;
  std::vector<std::vector<double>> best_params = model.params().snapshot();
  double best_score = 0.0;
  report.stop_reason = "max_epochs";

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto t_epoch = Clock::now();
    double loss_sum = 0.0;
    std::size_t token_count = 0;
    for (const auto& indices : length_buckets(samples, config.batch_size, rng)) {
      std::vector<const Sample*> batch;
      for (auto j : indices) batch.push_back(&samples[j]);
      std::size_t n = 0;
      Tensor loss = batch_loss(model, batch, data.train, true, &rng, n);
      loss_sum += loss.item();
      token_count += n;
      nn::scale(loss, 1.0 / static_cast<double>(n)).backward();
      clip_grad_norm(params, config.clip_norm);
      adam_step(params, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(token_count);
    rec.lr = adam.config.lr;
    rec.val_bleu4 = validate(model);
    history.push_back(rec.val_bleu4);
    const bool improved =
        history.size() == 1 ||
        (config.strict_improvement ? rec.val_bleu4 > best_score : rec.val_bleu4 >= best_score);
    if (improved) {
      best_score = rec.val_bleu4;
      report.best_epoch = epoch;
      best_params = model.params().snapshot();
    }
    const auto decision = schedule_step(history, adam.config.lr, config.halve_patience,
                                        config.stop_patience, config.strict_improvement);
    rec.lr_halved = decision.halved;
    adam.config.lr = decision.lr;
    rec.seconds = seconds_since(t_epoch);
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (decision.stop) {
      report.stop_reason = "early_stop";
      break;
    }
  }
  model.params().restore(best_params);
  report.wall_seconds = seconds_since(t_start);
  return {std::move(model), std::move(report)};
}

}  // namespace

std::size_t longest_caption(const TrainData& data) {
  std::size_t longest = 2;
  for (const auto& e : data.train) {
    for (const auto& r : e.references) longest = std::max(longest, split_words(r).size() + 2);
  }
  return longest;
}

TrainResult train_baseline(const TrainData& data, const TrainConfig& config,
                           const EpochCallback& on_epoch) {
  config.validate();
  if (config.fusion != FusionKind::None) {
    throw ConfigError("train_baseline needs fusion kind none, got " + to_string(config.fusion));
  }
  const std::size_t max_len = config.val_max_len ? config.val_max_len : 2 * longest_caption(data);
  const auto refs = reference_words(data.val);
  auto validate = [&](const CaptionModel& model) {
    std::vector<Words> hyps;
    for (const auto& e : data.val) {
      hyps.push_back(to_words(greedy_decode(model, e.features, max_len).tokens, data.vocab));
    }
    return bleu(hyps, refs, 4);
  };
  return run_training(data, config, nullptr, nullptr, validate, on_epoch);
}

TrainResult train_fusion(const TrainData& data, const ToyMLM& mlm,
                         const std::vector<TokenSeq>& val_drafts, const TrainConfig& config,
                         const EpochCallback& on_epoch, const FusionCache* cache) {
  config.validate();
  if (config.fusion == FusionKind::None) {
    throw ConfigError("train_fusion needs a fusion kind (simple, cold or hier)");
  }
  if (!mlm.frozen()) throw StateError("train_fusion: the MLM must be frozen before fusion training");
  if (mlm.config().vocab_size != data.vocab.size()) {
    throw ConfigError("MLM vocabulary size does not match the dataset vocabulary");
  }
  if (val_drafts.size() != data.val.size()) {
    throw InputError("train_fusion: need one validation draft per validation example");
  }
  const std::string before = mlm.checksum();
  if (cache && cache->mlm_checksum != before) {
    throw StateError("train_fusion: the MLM cache was built from a different MLM");
  }
  const std::size_t max_len = config.val_max_len ? config.val_max_len : 2 * longest_caption(data);
  const auto refs = reference_words(data.val);
  BeamConfig greedy{1, max_len, false};
  auto validate = [&](const CaptionModel& model) {
    std::vector<Words> hyps;
    for (std::size_t i = 0; i < data.val.size(); ++i) {
      if (strip_specials(val_drafts[i]).empty()) {
        hyps.emplace_back();
        continue;
      }
      hyps.push_back(to_words(emend(model, mlm, data.val[i].features, val_drafts[i], greedy).tokens,
                              data.vocab));
    }
    return bleu(hyps, refs, 4);
  };
  TrainResult result = run_training(data, config, &mlm, cache, validate, on_epoch);
  result.report.mlm_checksum_before = before;
  result.report.mlm_checksum_after = mlm.checksum();
  if (result.report.mlm_checksum_after != before) {
    throw StateError("train_fusion: MLM parameters changed during training");
  }
  return result;
}

FusionCache build_fusion_cache(const TrainData& data, const ToyMLM& mlm) {
  FusionCache cache;
  cache.train = mlm_states(make_samples(data.train, data.vocab), mlm);
  cache.val = mlm_states(make_samples(data.val, data.vocab), mlm);
  cache.mlm_checksum = mlm.checksum();
  return cache;
}

double evaluate_loss(const CaptionModel& model, const ToyMLM* mlm,
                     const std::vector<CaptionExample>& examples, const Vocab& vocab) {
  if (model.fused() && !mlm) throw StateError("evaluate_loss: fusion model needs the MLM");
  auto samples = make_samples(examples, vocab);
  if (model.fused()) attach(samples, mlm_states(samples, *mlm));
  return mean_loss(model, samples, examples, 64);
}

}  // namespace fusecap
