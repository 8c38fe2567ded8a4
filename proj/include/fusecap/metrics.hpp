#pragma once
// Corpus caption metrics. Inputs are word lists with specials already removed.
//
// bleu() and rouge_l() return scores scaled to 0..100. cider_d() returns the
// usual CIDEr-D value (0..10 scale, the x10 factor included); MetricsReport
// stores it multiplied by 100 so a value of 0.95 reads as 95.

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fusecap {

using Words = std::vector<std::string>;
using References = std::vector<Words>;

/// Corpus BLEU-n: clipped n-gram counts summed over the corpus, geometric mean
/// of orders 1..n, brevity penalty against the closest reference length
/// (ties -> shorter). Any zero precision gives 0 unless `smoothing` adds one to
/// the numerator and denominator of orders >= 2.
double bleu(const std::vector<Words>& hyps, const std::vector<References>& refs, std::size_t n,
            bool smoothing = false);

/// LCS F-measure with beta = 1.2 using the best precision and best recall over
/// the references. Throws InputError on an empty reference set.
double rouge_l(const Words& hyp, const References& refs);
/// Mean of rouge_l over the corpus.
double rouge_l(const std::vector<Words>& hyps, const std::vector<References>& refs);

struct CiderConfig {
  std::size_t max_n = 4;
  double sigma = 6.0;
};

/// CIDEr-D with document frequencies over the reference corpus. Throws
/// InputError for corpora of fewer than two images (every IDF is zero).
double cider_d(const std::vector<Words>& hyps, const std::vector<References>& refs,
               const CiderConfig& config = {});
/// Per-image CIDEr-D values under the same corpus statistics.
std::vector<double> cider_d_per_image(const std::vector<Words>& hyps,
                                      const std::vector<References>& refs,
                                      const CiderConfig& config = {});

struct MetricScores {
  std::array<double, 4> bleu{};  // B-1..B-4
  double rouge_l = 0.0;
  double cider = 0.0;  // CIDEr-D x 100
};

struct MetricsReport {
  std::string label;  // row label, e.g. BL / SF / CF / HF
  std::size_t count = 0;
  MetricScores mean;
  std::vector<MetricScores> per_seed;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// Scores one corpus; per_seed holds the single run.
MetricsReport evaluate_corpus(const std::vector<Words>& hyps, const std::vector<References>& refs,
                              const std::string& label = "", bool smoothing = false);

/// Mean of every metric over runs on the same corpus; per-seed values are kept.
/// Throws InputError on an empty list or differing corpus sizes.
MetricsReport aggregate_seeds(const std::vector<MetricsReport>& reports);

/// Aligned plain-text table, one row per report:
///   model   B-1   B-2   B-3   B-4   R-L     C     n
std::string format_table(const std::vector<MetricsReport>& rows);

}  // namespace fusecap
