#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "fovreg/common.hpp"

namespace fovreg {

/// Immutable store of unit-norm descriptors, searched exhaustively.
struct DescriptorIndex {
  std::vector<std::uint32_t> ids;
  Eigen::MatrixXd descriptors;  // n x d, unit-norm rows
};

struct IndexBuildReport {
  std::vector<std::uint32_t> renormalized_ids;
};

inline constexpr double kUnitNormTolerance = 1e-6;

/// Rows within 1e-6 of unit norm are ingested as-is; others are re-normalized
/// and reported. Zero rows cannot be normalized and are rejected.
inline DescriptorIndex build_index(const Eigen::MatrixXd& descriptors,
                                   const std::vector<std::uint32_t>& ids,
                                   IndexBuildReport* report = nullptr) {
  if (static_cast<Eigen::Index>(ids.size()) != descriptors.rows())
    throw std::invalid_argument("build_index: ids/descriptors row count mismatch");
  std::unordered_set<std::uint32_t> seen;
  for (std::uint32_t id : ids)
    if (!seen.insert(id).second)
      throw std::invalid_argument("build_index: duplicate id " + std::to_string(id));
  DescriptorIndex index;
  index.ids = ids;
  index.descriptors = descriptors;
  for (Eigen::Index r = 0; r < index.descriptors.rows(); ++r) {
    const double n = index.descriptors.row(r).norm();
    if (std::fabs(n - 1.0) <= kUnitNormTolerance) continue;
    if (n < 1e-12)
      throw std::invalid_argument("build_index: id " + std::to_string(ids[static_cast<std::size_t>(r)]) +
                                  " has a zero descriptor");
    index.descriptors.row(r) /= n;
    if (report) report->renormalized_ids.push_back(ids[static_cast<std::size_t>(r)]);
  }
  return index;
}

struct RankedList {
  std::uint32_t query_id = 0;
  std::vector<std::uint32_t> ids;       // ascending distance
  std::vector<double> distances;        // non-decreasing
  bool truncated = false;               // k exceeded the index size
};

/// Exact k nearest neighbours by Euclidean distance; ties rank by ascending
/// id. k larger than the index returns the full ranking with the truncation
/// flag set.
inline RankedList search(const DescriptorIndex& index, const Eigen::VectorXd& query, int k,
                         std::uint32_t query_id = 0) {
  if (k < 1) throw std::invalid_argument("search: k must be >= 1");
  if (query.size() != index.descriptors.cols())
    throw std::invalid_argument("search: query dimension mismatch");
  const Eigen::Index n = index.descriptors.rows();
  std::vector<std::pair<double, std::uint32_t>> order;
  order.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const double d = (index.descriptors.row(r).transpose() - query).norm();
    order.emplace_back(d, index.ids[static_cast<std::size_t>(r)]);
  }
  std::sort(order.begin(), order.end());
  RankedList out;
  out.query_id = query_id;
  out.truncated = static_cast<Eigen::Index>(k) > n;
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  out.ids.reserve(take);
  out.distances.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.distances.push_back(order[i].first);
    out.ids.push_back(order[i].second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA whitening

struct PcaWhitening {
  Eigen::VectorXd mean;         // input dim d
  Eigen::VectorXd eigenvalues;  // top r, descending, >= 0
  Eigen::MatrixXd components;   // r x d, orthonormal rows
  int r = 0;
  double epsilon = 1e-8;
};

/// Mean-centering plus eigendecomposition of the sample covariance (divisor
/// n - 1). Component signs are canonicalized (largest-magnitude entry made
/// positive) so fits are reproducible across solver builds.
inline PcaWhitening fit_pca_whitening(const Eigen::MatrixXd& descriptors, int r,
                                      double epsilon = 1e-8) {
  const Eigen::Index n = descriptors.rows();
  const Eigen::Index d = descriptors.cols();
  if (n < 2) throw std::invalid_argument("fit_pca_whitening: need at least 2 rows");
  if (r < 1 || r > std::min<Eigen::Index>(n - 1, d))
    throw std::invalid_argument("fit_pca_whitening: r must be in [1, min(n-1, d)], got " +
                                std::to_string(r));
  if (!(epsilon >= 0.0))
    throw std::invalid_argument("fit_pca_whitening: epsilon must be >= 0");
  PcaWhitening w;
  w.r = r;
  w.epsilon = epsilon;
  w.mean = descriptors.colwise().mean();
  Eigen::MatrixXd centered = descriptors.rowwise() - w.mean.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("fit_pca_whitening: eigendecomposition failed");
  // solver returns ascending eigenvalues; take the top r in descending order
  w.eigenvalues.resize(r);
  w.components.resize(r, d);
  for (int i = 0; i < r; ++i) {
    const Eigen::Index src = d - 1 - i;
    w.eigenvalues(i) = std::max(0.0, solver.eigenvalues()(src));
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    Eigen::Index arg_max = 0;
    v.cwiseAbs().maxCoeff(&arg_max);
    if (v(arg_max) < 0.0) v = -v;
    w.components.row(i) = v.transpose();
  }
  return w;
}

/// Whitening map without the output re-normalization: scale(components *
/// (x - mean)) with scale 1/sqrt(lambda + eps). The fit-set covariance of
/// this map is the identity at full rank with eps = 0.
inline Eigen::VectorXd whiten_raw(const PcaWhitening& w, const Eigen::VectorXd& x) {
  if (x.size() != w.mean.size())
    throw std::invalid_argument("whiten_raw: input dimension mismatch");
  Eigen::VectorXd z = w.components * (x - w.mean);
  for (int i = 0; i < w.r; ++i) z(i) /= std::sqrt(w.eigenvalues(i) + w.epsilon);
  return z;
}

/// Whitened, dimensionality-reduced, re-normalized descriptor. A descriptor
/// that whitens to (near) zero cannot be normalized; the documented sentinel
/// is the first basis vector, with *degenerate set when provided.
inline Eigen::VectorXd apply_whitening(const PcaWhitening& w, const Eigen::VectorXd& x,
                                       bool* degenerate = nullptr) {
  if (degenerate) *degenerate = false;
  Eigen::VectorXd z = whiten_raw(w, x);
  const double n = z.norm();
  if (!(n > 1e-12) || !std::isfinite(n)) {
    if (degenerate) *degenerate = true;
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(w.r);
    e1(0) = 1.0;
    return e1;
  }
  return z / n;
}

inline nlohmann::json whitening_to_json(const PcaWhitening& w) {
  nlohmann::json j;
  j["mean"] = std::vector<double>(w.mean.data(), w.mean.data() + w.mean.size());
  j["eigenvalues"] =
      std::vector<double>(w.eigenvalues.data(), w.eigenvalues.data() + w.eigenvalues.size());
  std::vector<double> comp;
  comp.reserve(static_cast<std::size_t>(w.components.size()));
  for (Eigen::Index r = 0; r < w.components.rows(); ++r)
    for (Eigen::Index c = 0; c < w.components.cols(); ++c) comp.push_back(w.components(r, c));
  j["components"] = std::move(comp);  // row-major
  j["r"] = w.r;
  j["eps"] = w.epsilon;
  return j;
}

inline PcaWhitening whitening_from_json(const nlohmann::json& j) {
  PcaWhitening w;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto eig = j.at("eigenvalues").get<std::vector<double>>();
  const auto comp = j.at("components").get<std::vector<double>>();
  w.r = j.at("r").get<int>();
  w.epsilon = j.at("eps").get<double>();
  if (w.r < 1 || eig.size() != static_cast<std::size_t>(w.r) || mean.empty() ||
      comp.size() != static_cast<std::size_t>(w.r) * mean.size())
    throw std::runtime_error("whitening: inconsistent dimensions");
  w.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  w.eigenvalues = Eigen::Map<const Eigen::VectorXd>(eig.data(), w.r);
  w.components.resize(w.r, static_cast<Eigen::Index>(mean.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < w.components.rows(); ++r)
    for (Eigen::Index c = 0; c < w.components.cols(); ++c) w.components(r, c) = comp[k++];
  return w;
}

inline void save_whitening(const PcaWhitening& w, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << whitening_to_json(w).dump() << "\n";
}

inline PcaWhitening load_whitening(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open whitening file: " + path);
  nlohmann::json j;
  in >> j;
  return whitening_from_json(j);
}

}  // namespace fovreg
