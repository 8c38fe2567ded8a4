#include "fusecap/edits.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace fusecap {
namespace {

std::vector<std::vector<std::size_t>> distance_table(const Words& a, const Words& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t diag = d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      d[i][j] = std::min({diag, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }
  return d;
}

}  // namespace

std::string to_string(EditOp::Kind kind) {
  switch (kind) {
    case EditOp::Kind::Substitute:
      return "substitute";
    case EditOp::Kind::Insert:
      return "insert";
    case EditOp::Kind::Delete:
      return "delete";
  }
  return "?";
}

nlohmann::json EditRecord::to_json() const {
  nlohmann::json j_ops = nlohmann::json::array();
  for (const auto& op : ops) {
    j_ops.push_back({{"op", to_string(op.kind)},
                     {"position", op.position},
                     {"old", op.old_token},
                     {"new", op.new_token}});
  }
  return {{"id", id}, {"draft", draft}, {"emended", emended}, {"edits", count}, {"ops", j_ops}};
}

std::size_t edit_distance(const Words& a, const Words& b) {
  return distance_table(a, b)[a.size()][b.size()];
}

EditRecord token_edits(const Words& draft, const Words& emended, const std::string& id) {
  const auto d = distance_table(draft, emended);
  EditRecord rec{id, draft, emended, d[draft.size()][emended.size()], {}};
  std::size_t i = draft.size(), j = emended.size();
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && draft[i - 1] == emended[j - 1] && d[i][j] == d[i - 1][j - 1]) {
      --i;
      --j;
    } else if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1) {
      rec.ops.push_back({EditOp::Kind::Substitute, i - 1, draft[i - 1], emended[j - 1]});
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      rec.ops.push_back({EditOp::Kind::Delete, i - 1, draft[i - 1], ""});
      --i;
    } else {
      rec.ops.push_back({EditOp::Kind::Insert, i, "", emended[j - 1]});
      --j;
    }
  }
  std::reverse(rec.ops.begin(), rec.ops.end());
  return rec;
}

std::size_t EditHistogram::total() const {
  std::size_t n = unchanged;
  for (const auto& [k, c] : counts) n += c;
  return n;
}

std::string EditHistogram::to_csv() const {
  std::ostringstream os;
  os << "edit_count,frequency\n";
  for (const auto& [k, c] : counts) os << k << ',' << c << '\n';
  os << "unchanged," << unchanged << '\n';
  return os.str();
}

std::string EditHistogram::to_chart(std::size_t width) const {
  std::size_t peak = unchanged;
  for (const auto& [k, c] : counts) peak = std::max(peak, c);
  std::ostringstream os;
  auto bar = [&](std::size_t c) {
    const std::size_t len = peak ? (c * width + peak - 1) / peak : 0;
    return std::string(len, '#');
  };
  char head[64];
  std::snprintf(head, sizeof head, "%9s | %5s |\n", "edits", "freq");
  os << head;
  for (const auto& [k, c] : counts) {
    std::snprintf(head, sizeof head, "%9zu | %5zu | ", k, c);
    os << head << bar(c) << '\n';
  }
  std::snprintf(head, sizeof head, "%9s | %5zu | ", "unchanged", unchanged);
  os << head << bar(unchanged) << '\n';
  return os.str();
}

EditHistogram edit_histogram(const std::vector<EditRecord>& records) {
  EditHistogram h;
  for (const auto& r : records) {
    if (r.count == 0) {
      ++h.unchanged;
    } else {
      ++h.counts[r.count];
    }
  }
  return h;
}

}  // namespace fusecap
