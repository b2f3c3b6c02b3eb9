#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include "spherevlad/common/error.hpp"
#include "spherevlad/eval/index.hpp"

namespace spherevlad::eval {

struct RecallReport {
  std::vector<double> recall;  // recall[n - 1] = recall@n
  double ar1 = 0;
  double ar1_percent = 0;
  std::size_t one_percent_cutoff = 1;
  std::size_t queries = 0;
};

/// Number of database entries inspected for recall@1%.
inline std::size_t one_percent_cutoff(std::size_t database_size) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.01 * static_cast<double>(database_size))));
}

/// A query counts as recalled at n if any of its first n matches lies within
/// threshold_m of its ground-truth pose. Rankings must be at least
/// max(max_n, cutoff) long for the figures to be exact.
inline RecallReport recall_at_n(std::span<const RetrievalResult> results, double threshold_m, std::size_t database_size,
                                std::size_t max_n = 25) {
  RecallReport r;
  r.queries = results.size();
  r.one_percent_cutoff = one_percent_cutoff(database_size);
  r.recall.assign(max_n, 0.0);
  if (results.empty()) return r;
  std::size_t hits_percent = 0;
  for (const auto& q : results) {
    const auto rank = q.first_true_rank(threshold_m);
    if (!rank) continue;
    for (std::size_t n = *rank; n <= max_n; ++n) r.recall[n - 1] += 1;
    if (*rank <= r.one_percent_cutoff) ++hits_percent;
  }
  const double total = static_cast<double>(results.size());
  for (auto& v : r.recall) v /= total;
  r.ar1 = max_n > 0 ? r.recall[0] : 0.0;
  r.ar1_percent = static_cast<double>(hits_percent) / total;
  return r;
}

inline void write_recall_csv(const std::filesystem::path& path, const RecallReport& r) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write " + path.string());
  out << "n,recall\n";
  for (std::size_t n = 0; n < r.recall.size(); ++n) out << n + 1 << ',' << r.recall[n] << '\n';
}

}  // namespace spherevlad::eval
