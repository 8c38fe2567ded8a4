#include "fusecap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "fusecap/errors.hpp"

namespace fusecap {
namespace {

using NgramCounts = std::map<Words, double>;

NgramCounts ngrams(const Words& w, std::size_t n) {
  NgramCounts out;
  if (w.size() < n) return out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) {
    out[Words(w.begin() + static_cast<std::ptrdiff_t>(i),
              w.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1.0;
  }
  return out;
}

void check_corpus(const std::vector<Words>& hyps, const std::vector<References>& refs) {
  if (hyps.empty()) throw InputError("empty corpus");
  if (hyps.size() != refs.size()) {
    throw InputError("corpus has " + std::to_string(hyps.size()) + " hypotheses but " +
                     std::to_string(refs.size()) + " reference sets");
  }
  for (const auto& r : refs) {
    if (r.empty()) throw InputError("every hypothesis needs at least one reference");
  }
}

std::size_t lcs_length(const Words& a, const Words& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// TF-IDF vectors per n-gram order, their norms, and the bigram count used for
// the length penalty.
struct CiderVec {
  std::vector<NgramCounts> vec;
  std::vector<double> norm;
  double length = 0.0;
};

}  // namespace

double bleu(const std::vector<Words>& hyps, const std::vector<References>& refs, std::size_t n,
            bool smoothing) {
  check_corpus(hyps, refs);
  if (n == 0) throw ConfigError("BLEU order must be at least 1");
  std::vector<double> matched(n, 0.0), total(n, 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const Words& h = hyps[i];
    hyp_len += static_cast<double>(h.size());
    std::size_t best = refs[i].front().size();
    for (const auto& r : refs[i]) {
      const auto d = [&](std::size_t len) {
        return len > h.size() ? len - h.size() : h.size() - len;
      };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);
    for (std::size_t k = 1; k <= n; ++k) {
      const NgramCounts hc = ngrams(h, k);
      NgramCounts max_ref;
      for (const auto& r : refs[i]) {
        for (const auto& [g, c] : ngrams(r, k)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : hc) {
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[k - 1] += std::min(c, it->second);
      }
      if (h.size() >= k) total[k - 1] += static_cast<double>(h.size() - k + 1);
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double m = matched[k], t = total[k];
    if (smoothing && k > 0) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0 || t == 0.0) return 0.0;
    log_sum += std::log(m / t);
  }
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(n));
}

double rouge_l(const Words& hyp, const References& refs) {
  if (refs.empty()) throw InputError("ROUGE-L needs at least one reference");
  constexpr double beta = 1.2;
  double best_p = 0.0, best_r = 0.0;
  for (const auto& r : refs) {
    const double lcs = static_cast<double>(lcs_length(hyp, r));
    if (!hyp.empty()) best_p = std::max(best_p, lcs / static_cast<double>(hyp.size()));
    if (!r.empty()) best_r = std::max(best_r, lcs / static_cast<double>(r.size()));
  }
  if (best_p == 0.0 || best_r == 0.0) return 0.0;
  const double b2 = beta * beta;
  return 100.0 * (1.0 + b2) * best_p * best_r / (best_r + b2 * best_p);
}

double rouge_l(const std::vector<Words>& hyps, const std::vector<References>& refs) {
  check_corpus(hyps, refs);
  double sum = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) sum += rouge_l(hyps[i], refs[i]);
  return sum / static_cast<double>(hyps.size());
}

std::vector<double> cider_d_per_image(const std::vector<Words>& hyps,
                                      const std::vector<References>& refs,
                                      const CiderConfig& config) {
  check_corpus(hyps, refs);
  if (hyps.size() < 2) {
    throw InputError("CIDEr-D needs at least 2 images: with one image every IDF is log(1/1) = 0");
  }
  const std::size_t N = config.max_n;

  // Raw n-gram counts (all orders in one map).
  auto cook = [&](const Words& w) {
    NgramCounts all;
    for (std::size_t k = 1; k <= N; ++k) {
      for (const auto& [g, c] : ngrams(w, k)) all[g] += c;
    }
    return all;
  };
  std::vector<NgramCounts> hyp_counts;
  std::vector<std::vector<NgramCounts>> ref_counts(refs.size());
  std::map<Words, double> df;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    hyp_counts.push_back(cook(hyps[i]));
    std::set<Words> seen;
    for (const auto& r : refs[i]) {
      ref_counts[i].push_back(cook(r));
      for (const auto& [g, c] : ref_counts[i].back()) seen.insert(g);
    }
    for (const auto& g : seen) df[g] += 1.0;
  }
  const double log_images = std::log(static_cast<double>(hyps.size()));

  auto to_vec = [&](const NgramCounts& counts) {
    CiderVec v{std::vector<NgramCounts>(N), std::vector<double>(N, 0.0), 0.0};
    for (const auto& [g, tf] : counts) {
      const std::size_t k = g.size() - 1;
      auto it = df.find(g);
      const double dfv = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
      const double w = tf * (log_images - dfv);
      v.vec[k][g] = w;
      v.norm[k] += w * w;
      if (k == 1) v.length += tf;
    }
    for (auto& x : v.norm) x = std::sqrt(x);
    return v;
  };
  auto sim = [&](const CiderVec& h, const CiderVec& r) {
    const double delta = h.length - r.length;
    std::vector<double> val(N, 0.0);
    for (std::size_t k = 0; k < N; ++k) {
      for (const auto& [g, w] : h.vec[k]) {
        auto it = r.vec[k].find(g);
        if (it != r.vec[k].end()) val[k] += std::min(w, it->second) * it->second;
      }
      if (h.norm[k] != 0.0 && r.norm[k] != 0.0) val[k] /= h.norm[k] * r.norm[k];
      val[k] *= std::exp(-(delta * delta) / (2.0 * config.sigma * config.sigma));
    }
    return val;
  };

  std::vector<double> scores;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const CiderVec hv = to_vec(hyp_counts[i]);
    std::vector<double> acc(N, 0.0);
    for (const auto& rc : ref_counts[i]) {
      const auto s = sim(hv, to_vec(rc));
      for (std::size_t k = 0; k < N; ++k) acc[k] += s[k];
    }
    double mean = 0.0;
    for (double a : acc) mean += a;
    mean /= static_cast<double>(N);
    mean /= static_cast<double>(ref_counts[i].size());
    scores.push_back(mean * 10.0);
  }
  return scores;
}

double cider_d(const std::vector<Words>& hyps, const std::vector<References>& refs,
               const CiderConfig& config) {
  const auto per = cider_d_per_image(hyps, refs, config);
  double sum = 0.0;
  for (double s : per) sum += s;
  return sum / static_cast<double>(per.size());
}

namespace {

nlohmann::json scores_json(const MetricScores& s) {
  return {{"B-1", s.bleu[0]}, {"B-2", s.bleu[1]}, {"B-3", s.bleu[2]},
          {"B-4", s.bleu[3]}, {"ROUGE-L", s.rouge_l}, {"CIDEr", s.cider}};
}

MetricScores scores_from_json(const nlohmann::json& j) {
  MetricScores s;
  for (std::size_t k = 0; k < 4; ++k) s.bleu[k] = j.at("B-" + std::to_string(k + 1)).get<double>();
  s.rouge_l = j.at("ROUGE-L").get<double>();
  s.cider = j.at("CIDEr").get<double>();
  return s;
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : per_seed) seeds.push_back(scores_json(s));
  return {{"label", label},
          {"count", count},
          {"mean", scores_json(mean)},
          {"per_seed", seeds},
          {"scale", "BLEU and ROUGE-L x100; CIDEr-D x100 (0.95 reads as 95)"}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.label = j.value("label", "");
  r.count = j.at("count").get<std::size_t>();
  r.mean = scores_from_json(j.at("mean"));
  for (const auto& s : j.at("per_seed")) r.per_seed.push_back(scores_from_json(s));
  return r;
}

MetricsReport evaluate_corpus(const std::vector<Words>& hyps, const std::vector<References>& refs,
                              const std::string& label, bool smoothing) {
  MetricsReport r;
  r.label = label;
  r.count = hyps.size();
  for (std::size_t k = 0; k < 4; ++k) r.mean.bleu[k] = bleu(hyps, refs, k + 1, smoothing);
  r.mean.rouge_l = rouge_l(hyps, refs);
  r.mean.cider = 100.0 * cider_d(hyps, refs);
  r.per_seed = {r.mean};
  return r;
}

MetricsReport aggregate_seeds(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw InputError("aggregate_seeds: no reports");
  MetricsReport out;
  out.label = reports.front().label;
  out.count = reports.front().count;
  for (const auto& r : reports) {
    if (r.count != out.count) throw InputError("aggregate_seeds: reports cover different corpora");
    out.per_seed.insert(out.per_seed.end(), r.per_seed.begin(), r.per_seed.end());
  }
  // Sorted summation keeps the mean independent of report order.
  auto mean_of = [&](auto get) {
    std::vector<double> v;
    for (const auto& s : out.per_seed) v.push_back(get(s));
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
  };
  for (std::size_t k = 0; k < 4; ++k) {
    out.mean.bleu[k] = mean_of([k](const MetricScores& s) { return s.bleu[k]; });
  }
  out.mean.rouge_l = mean_of([](const MetricScores& s) { return s.rouge_l; });
  out.mean.cider = mean_of([](const MetricScores& s) { return s.cider; });
  return out;
}

std::string format_table(const std::vector<MetricsReport>& rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %6s %6s %6s %6s %6s %7s %6s %5s\n", "model", "B-1", "B-2",
                "B-3", "B-4", "R-L", "C", "seeds", "n");
  os << line;
  for (const auto& r : rows) {
    const auto& m = r.mean;
    std::snprintf(line, sizeof line, "%-8s %6.2f %6.2f %6.2f %6.2f %6.2f %7.2f %6zu %5zu\n",
                  r.label.empty() ? "-" : r.label.c_str(), m.bleu[0], m.bleu[1], m.bleu[2],
                  m.bleu[3], m.rouge_l, m.cider, r.per_seed.size(), r.count);
    os << line;
  }
  return os.str();
}

}  // namespace fusecap
