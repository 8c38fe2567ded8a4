#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusecap/metrics.hpp"

namespace fusecap {

struct EditOp {
  enum class Kind { Substitute, Insert, Delete };
  Kind kind = Kind::Substitute;
  std::size_t position = 0;  // index into the draft (insertions: before this draft token)
  std::string old_token;     // empty for insertions
  std::string new_token;     // empty for deletions

  bool operator==(const EditOp&) const = default;
};

std::string to_string(EditOp::Kind kind);

struct EditRecord {
  std::string id;
  Words draft;
  Words emended;
  std::size_t count = 0;
  std::vector<EditOp> ops;

  nlohmann::json to_json() const;
};

/// Unit-cost token Levenshtein distance.
std::size_t edit_distance(const Words& a, const Words& b);

/// Levenshtein alignment of draft -> emended. The backtrace prefers a
/// substitution over an insert/delete pair when both are optimal.
EditRecord token_edits(const Words& draft, const Words& emended, const std::string& id = "");

struct EditHistogram {
  std::map<std::size_t, std::size_t> counts;  // edit count (>= 1) -> frequency
  std::size_t unchanged = 0;

  std::size_t total() const;
  /// "edit_count,frequency" rows followed by "unchanged,N".
  std::string to_csv() const;
  /// Horizontal bar chart, one row per edit count.
  std::string to_chart(std::size_t width = 50) const;
};

EditHistogram edit_histogram(const std::vector<EditRecord>& records);

}  // namespace fusecap
