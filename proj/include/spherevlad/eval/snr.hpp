#pragma once

// Centroid activity diagnostics. A centroid is active when it is the argmax
// assignment of at least min_argmax_fraction of all local descriptors, and
//   SNR = N_active / (N_total - N_active).

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "spherevlad/common/error.hpp"
#include "spherevlad/ingest/frame.hpp"
#include "spherevlad/model/network.hpp"
#include "spherevlad/sphere/panorama.hpp"

namespace spherevlad::eval {

struct ActivityRule {
  double min_argmax_fraction = 0.01;
};

struct SNRReport {
  std::size_t n_total = 0;
  std::size_t n_active = 0;
  double snr = 0;
  bool degenerate = false;  // every centroid active, denominator zero
  std::vector<std::size_t> histogram;
  double min_argmax_fraction = 0.01;
};

inline double snr_value(std::size_t n_active, std::size_t n_total) {
  if (n_active >= n_total) return std::numeric_limits<double>::infinity();
  return static_cast<double>(n_active) / static_cast<double>(n_total - n_active);
}

/// Adds each row's argmax to counts; ties go to the lowest cluster index.
template <typename Derived>
void accumulate_argmax(const Eigen::MatrixBase<Derived>& assign, std::vector<std::size_t>& counts) {
  if (counts.size() != static_cast<std::size_t>(assign.cols()))
    throw Error(ErrorCode::ShapeMismatch, "assignment has " + std::to_string(assign.cols()) + " clusters, expected " +
                                              std::to_string(counts.size()));
  for (Eigen::Index i = 0; i < assign.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < assign.cols(); ++k)
      if (assign(i, k) > assign(i, best)) best = k;
    ++counts[static_cast<std::size_t>(best)];
  }
}

inline SNRReport snr_from_counts(const std::vector<std::size_t>& counts, const ActivityRule& rule = {}) {
  SNRReport r;
  r.n_total = counts.size();
  r.histogram = counts;
  r.min_argmax_fraction = rule.min_argmax_fraction;
  std::size_t total = 0;
  for (auto c : counts) total += c;
  for (auto c : counts)
    if (total > 0 && static_cast<double>(c) >= rule.min_argmax_fraction * static_cast<double>(total)) ++r.n_active;
  r.degenerate = r.n_active == r.n_total;
  r.snr = snr_value(r.n_active, r.n_total);
  return r;
}

template <typename Derived>
SNRReport snr_from_assignments(const Eigen::MatrixBase<Derived>& assign, const ActivityRule& rule = {}) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(assign.cols()), 0);
  accumulate_argmax(assign, counts);
  return snr_from_counts(counts, rule);
}

/// Argmax histogram over every local descriptor of every frame.
template <typename T>
std::vector<std::size_t> cluster_assignment_summary(model::Model<T>& net, const std::vector<ingest::SubmapFrame>& frames,
                                                    double max_range_m = 50.0) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(net.config().clusters), 0);
  const int b0 = net.config().encoder.input_bandwidth;
  for (const auto& f : frames)
    accumulate_argmax(net.assignment(sphere::project(f, max_range_m, b0).template to_signal<T>()), counts);
  return counts;
}

template <typename T>
SNRReport snr_report(model::Model<T>& net, const std::vector<ingest::SubmapFrame>& frames, const ActivityRule& rule = {},
                     double max_range_m = 50.0) {
  return snr_from_counts(cluster_assignment_summary(net, frames, max_range_m), rule);
}

/// Soft-assignment rows from CSV, one local descriptor per line. A header
/// line is skipped when its first field is not numeric.
inline model::Matrix<double> load_assignment_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::UnreadableFile, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue;
      throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": not a number");
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": ragged row");
    double sum = 0;
    for (double v : row) sum += v;
    if (std::abs(sum - 1.0) > 1e-6)
      throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": row does not sum to 1");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, path.string() + ": no assignment rows");
  model::Matrix<double> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  return m;
}

inline void write_histogram_csv(const std::filesystem::path& path, const std::vector<std::size_t>& counts) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write " + path.string());
  out << "cluster,count\n";
  for (std::size_t k = 0; k < counts.size(); ++k) out << k << ',' << counts[k] << '\n';
}

inline void write_snr_csv(const std::filesystem::path& path, const SNRReport& r) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write " + path.string());
  out << "n_total,n_active,snr,degenerate,min_argmax_fraction\n"
      << r.n_total << ',' << r.n_active << ',' << r.snr << ',' << (r.degenerate ? 1 : 0) << ',' << r.min_argmax_fraction
      << '\n';
}

}  // namespace spherevlad::eval
