#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "fovreg/dataset.hpp"
#include "fovreg/encoder.hpp"
#include "fovreg/retrieval.hpp"
#include "fovreg/rng.hpp"

namespace fovreg {

/// Positive map ids per query id. Queries without positives are simply absent;
/// metric denominators count only queries present here.
struct GroundTruthRelation {
  std::map<std::uint32_t, std::vector<std::uint32_t>> positives;

  bool has_positives(std::uint32_t query_id) const {
    auto it = positives.find(query_id);
    return it != positives.end() && !it->second.empty();
  }
};

inline GroundTruthRelation ground_truth_from_poses(const Dataset& ds, double dist_thresh,
                                                   double angle_thresh) {
  GroundTruthRelation gt;
  for (const auto& q : ds.images) {
    if (q.role != Role::query) continue;
    std::vector<std::uint32_t> pos;
    for (const auto& m : ds.images) {
      if (m.role != Role::map) continue;
      if (is_positive(q.pose, m.pose, dist_thresh, angle_thresh)) pos.push_back(m.id);
    }
    if (pos.empty()) continue;
    std::sort(pos.begin(), pos.end());
    gt.positives.emplace(q.id, std::move(pos));
  }
  return gt;
}

inline nlohmann::json gt_to_json(const GroundTruthRelation& gt) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [qid, pos] : gt.positives) j[std::to_string(qid)] = pos;
  return j;
}

inline GroundTruthRelation gt_from_json(const nlohmann::json& j) {
  GroundTruthRelation gt;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::uint32_t qid = static_cast<std::uint32_t>(std::stoul(it.key()));
    auto pos = it.value().get<std::vector<std::uint32_t>>();
    std::sort(pos.begin(), pos.end());
    gt.positives.emplace(qid, std::move(pos));
  }
  return gt;
}

inline void save_gt(const GroundTruthRelation& gt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << gt_to_json(gt).dump() << "\n";
}

inline GroundTruthRelation load_gt(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open ground-truth file: " + path);
  nlohmann::json j;
  in >> j;
  return gt_from_json(j);
}

// ---------------------------------------------------------------------------
// Ranking metrics

namespace detail {

inline const std::vector<std::uint32_t>* positives_of(const GroundTruthRelation& gt,
                                                      std::uint32_t query_id) {
  auto it = gt.positives.find(query_id);
  if (it == gt.positives.end() || it->second.empty()) return nullptr;
  return &it->second;
}

}  // namespace detail

/// Fraction of queries with at least one positive in the top k. Queries with
/// no positives are excluded; the metric is undefined without any.
inline double recall_at_k(const std::vector<RankedList>& ranked, const GroundTruthRelation& gt,
                          int k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  std::size_t denom = 0;
  std::size_t hits = 0;
  for (const auto& list : ranked) {
    const auto* pos = detail::positives_of(gt, list.query_id);
    if (!pos) continue;
    ++denom;
    const std::unordered_set<std::uint32_t> pos_set(pos->begin(), pos->end());
    const std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(k), list.ids.size());
    for (std::size_t i = 0; i < depth; ++i) {
      if (pos_set.count(list.ids[i])) {
        ++hits;
        break;
      }
    }
  }
  if (denom == 0) throw std::runtime_error("recall_at_k: no queries with positives");
  return static_cast<double>(hits) / static_cast<double>(denom);
}

/// Mean of (6 - rank)/5 over the first positive's rank within the top 5
/// (0 when no positive appears there), over queries with positives.
inline double mrr_at_5(const std::vector<RankedList>& ranked, const GroundTruthRelation& gt) {
  std::size_t denom = 0;
  double total = 0.0;
  for (const auto& list : ranked) {
    const auto* pos = detail::positives_of(gt, list.query_id);
    if (!pos) continue;
    ++denom;
    const std::unordered_set<std::uint32_t> pos_set(pos->begin(), pos->end());
    const std::size_t depth = std::min<std::size_t>(5, list.ids.size());
    for (std::size_t i = 0; i < depth; ++i) {
      if (pos_set.count(list.ids[i])) {
        total += (6.0 - static_cast<double>(i + 1)) / 5.0;
        break;
      }
    }
  }
  if (denom == 0) throw std::runtime_error("mrr_at_5: no queries with positives");
  return total / static_cast<double>(denom);
}

// ---------------------------------------------------------------------------
// KL divergence between distance and similarity distributions

struct KlConfig {
  int bins = 100;
  double smoothing = 1e-10;
  std::size_t max_pairs = 1000000;
  std::uint64_t seed = 0;
};

/// KL(P||Q) in nats between additive-smoothed histograms of two samples on
/// [0,1] with equal-width bins. Out-of-range values clamp into [0,1].
inline double kl_from_samples(const std::vector<double>& p_samples,
                              const std::vector<double>& q_samples, int bins,
                              double smoothing) {
  if (bins < 2) throw std::invalid_argument("kl_from_samples: bins must be >= 2");
  if (p_samples.empty() || q_samples.empty())
    throw std::invalid_argument("kl_from_samples: empty sample set");
  auto histogram = [bins](const std::vector<double>& samples) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (double v : samples) {
      const double c = std::clamp(v, 0.0, 1.0);
      const int b = std::min(bins - 1, static_cast<int>(std::floor(c * bins)));
      h[static_cast<std::size_t>(b)] += 1.0;
    }
    for (double& x : h) x /= static_cast<double>(samples.size());
    return h;
  };
  const std::vector<double> p = histogram(p_samples);
  const std::vector<double> q = histogram(q_samples);
  const double renorm = 1.0 + smoothing * bins;
  double kl = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double pb = (p[static_cast<std::size_t>(b)] + smoothing) / renorm;
    const double qb = (q[static_cast<std::size_t>(b)] + smoothing) / renorm;
    kl += pb * std::log(pb / qb);
  }
  return kl;
}

/// P = histogram of query-map descriptor distances rescaled by the maximum
/// unit-vector distance 2; Q = histogram of 1 - psi over the same pairs. The
/// pair population is the full query x map cross product (psi indexed
/// q * n_map + m), subsampled to cfg.max_pairs with cfg.seed when larger.
inline double kl_divergence_distance_vs_similarity(const Eigen::MatrixXd& query_descs,
                                                   const Eigen::MatrixXd& map_descs,
                                                   const std::vector<double>& psi,
                                                   const KlConfig& cfg) {
  const std::size_t nq = static_cast<std::size_t>(query_descs.rows());
  const std::size_t nm = static_cast<std::size_t>(map_descs.rows());
  if (nq == 0 || nm == 0)
    throw std::invalid_argument("kl_divergence: need at least one query and one map descriptor");
  if (query_descs.cols() != map_descs.cols())
    throw std::invalid_argument("kl_divergence: descriptor dimension mismatch");
  if (psi.size() != nq * nm)
    throw std::invalid_argument("kl_divergence: psi size must be n_query * n_map");
  std::vector<std::size_t> selected(nq * nm);
  for (std::size_t i = 0; i < selected.size(); ++i) selected[i] = i;
  if (selected.size() > cfg.max_pairs) {
    Rng rng(cfg.seed);
    for (std::size_t k = 0; k < cfg.max_pairs; ++k) {
      const std::size_t j = k + rng.uniform_index(selected.size() - k);
      std::swap(selected[k], selected[j]);
    }
    selected.resize(cfg.max_pairs);
  }
  std::vector<double> p_samples, q_samples;
  p_samples.reserve(selected.size());
  q_samples.reserve(selected.size());
  for (std::size_t idx : selected) {
    const std::size_t q = idx / nm;
    const std::size_t m = idx % nm;
    const double d = (query_descs.row(static_cast<Eigen::Index>(q)) -
                      map_descs.row(static_cast<Eigen::Index>(m)))
                         .norm();
    p_samples.push_back(d / 2.0);
    q_samples.push_back(1.0 - psi[idx]);
  }
  return kl_from_samples(p_samples, q_samples, cfg.bins, cfg.smoothing);
}

// ---------------------------------------------------------------------------
// Feature covariance diagnostic

struct CovarianceSummary {
  Eigen::MatrixXd cov;
  double mean_abs_offdiag = 0.0;
};

inline CovarianceSummary feature_covariance(const Eigen::MatrixXd& descriptors) {
  const Eigen::Index n = descriptors.rows();
  const Eigen::Index d = descriptors.cols();
  if (n < 2) throw std::invalid_argument("feature_covariance: need at least 2 rows");
  CovarianceSummary out;
  const Eigen::RowVectorXd mean = descriptors.colwise().mean();
  const Eigen::MatrixXd centered = descriptors.rowwise() - mean;
  out.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  for (Eigen::Index i = 0; i < d; ++i)  // exact symmetry regardless of product kernel
    for (Eigen::Index j = i + 1; j < d; ++j) out.cov(j, i) = out.cov(i, j);
  if (d > 1) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        if (i != j) acc += std::fabs(out.cov(i, j));
    out.mean_abs_offdiag = acc / static_cast<double>(d * (d - 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// One-pass evaluation

struct EvalConfig {
  int search_k = 10;
  int kl_bins = 100;
  double kl_smoothing = 1e-10;
  std::size_t kl_max_pairs = 1000000;
  std::uint64_t kl_seed = 0;
  bool whiten = false;
  int pca_dim = 0;  // 0 keeps the full dimension when whitening
  double pca_eps = 1e-8;
};

struct EvalReport {
  double r_at_1 = 0.0;
  double r_at_5 = 0.0;
  double r_at_10 = 0.0;
  double mrr5 = 0.0;
  double kldiv = 0.0;
  double cov_mean_abs_offdiag = 0.0;
  int descriptor_dim = 0;
  bool whitened = false;
};

inline Eigen::MatrixXd compute_descriptors(const EncoderModel& model, const Dataset& ds) {
  if (ds.d_in != model.input_dim())
    throw std::invalid_argument("compute_descriptors: dataset d_in " + std::to_string(ds.d_in) +
                                " does not match encoder input dim " +
                                std::to_string(model.input_dim()));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ds.images.size()), model.output_dim());
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) =
        encoder_forward(model, ds.images[i].observation).transpose();
  return out;
}

/// Full evaluation over per-image descriptor rows aligned with ds.images:
/// optional map-fitted PCA whitening, exhaustive retrieval, R@k / MRR@5 /
/// KL divergence / covariance summary.
inline EvalReport evaluate_descriptors(const Dataset& ds, const Eigen::MatrixXd& descriptors,
                                       const GroundTruthRelation& gt, const EvalConfig& cfg) {
  if (descriptors.rows() != static_cast<Eigen::Index>(ds.images.size()))
    throw std::invalid_argument("evaluate_descriptors: descriptor row count mismatch");
  const auto map_idx = ds.map_indices();
  const auto query_idx = ds.query_indices();
  if (map_idx.empty()) throw std::invalid_argument("evaluate_descriptors: no map images");
  if (query_idx.empty()) throw std::invalid_argument("evaluate_descriptors: no query images");

  Eigen::MatrixXd final_descs = descriptors;
  bool whitened = false;
  if (cfg.whiten) {
    Eigen::MatrixXd map_rows(static_cast<Eigen::Index>(map_idx.size()), descriptors.cols());
    for (std::size_t i = 0; i < map_idx.size(); ++i)
      map_rows.row(static_cast<Eigen::Index>(i)) =
          descriptors.row(static_cast<Eigen::Index>(map_idx[i]));
    const int r = cfg.pca_dim > 0 ? cfg.pca_dim : static_cast<int>(descriptors.cols());
    const PcaWhitening w = fit_pca_whitening(map_rows, r, cfg.pca_eps);
    Eigen::MatrixXd transformed(descriptors.rows(), r);
    for (Eigen::Index i = 0; i < descriptors.rows(); ++i)
      transformed.row(i) = apply_whitening(w, descriptors.row(i).transpose()).transpose();
    final_descs = std::move(transformed);
    whitened = true;
  }

  std::vector<std::uint32_t> map_ids;
  Eigen::MatrixXd map_descs(static_cast<Eigen::Index>(map_idx.size()), final_descs.cols());
  for (std::size_t i = 0; i < map_idx.size(); ++i) {
    map_ids.push_back(ds.images[map_idx[i]].id);
    map_descs.row(static_cast<Eigen::Index>(i)) =
        final_descs.row(static_cast<Eigen::Index>(map_idx[i]));
  }
  const DescriptorIndex index = build_index(map_descs, map_ids);

  const int depth = std::max(cfg.search_k, 10);
  std::vector<RankedList> ranked;
  ranked.reserve(query_idx.size());
  Eigen::MatrixXd query_descs(static_cast<Eigen::Index>(query_idx.size()), final_descs.cols());
  for (std::size_t i = 0; i < query_idx.size(); ++i) {
    const auto& img = ds.images[query_idx[i]];
    const Eigen::VectorXd qd = final_descs.row(static_cast<Eigen::Index>(query_idx[i])).transpose();
    query_descs.row(static_cast<Eigen::Index>(i)) = qd.transpose();
    ranked.push_back(search(index, qd, depth, img.id));
  }

  std::vector<double> psi(query_idx.size() * map_idx.size());
  for (std::size_t q = 0; q < query_idx.size(); ++q)
    for (std::size_t m = 0; m < map_idx.size(); ++m)
      psi[q * map_idx.size() + m] =
          fov_overlap(ds.images[query_idx[q]].pose, ds.images[map_idx[m]].pose);

  EvalReport rep;
  rep.r_at_1 = recall_at_k(ranked, gt, 1);
  rep.r_at_5 = recall_at_k(ranked, gt, 5);
  rep.r_at_10 = recall_at_k(ranked, gt, 10);
  rep.mrr5 = mrr_at_5(ranked, gt);
  KlConfig kl{cfg.kl_bins, cfg.kl_smoothing, cfg.kl_max_pairs, cfg.kl_seed};
  rep.kldiv = kl_divergence_distance_vs_similarity(query_descs, map_descs, psi, kl);
  rep.cov_mean_abs_offdiag = feature_covariance(final_descs).mean_abs_offdiag;
  rep.descriptor_dim = static_cast<int>(final_descs.cols());
  rep.whitened = whitened;
  return rep;
}

inline EvalReport evaluate(const EncoderModel& model, const Dataset& ds,
                           const GroundTruthRelation& gt, const EvalConfig& cfg) {
  return evaluate_descriptors(ds, compute_descriptors(model, ds), gt, cfg);
}

inline nlohmann::json report_to_json(const EvalReport& rep, const EvalConfig& cfg) {
  nlohmann::json j;
  j["r_at_1"] = rep.r_at_1;
  j["r_at_5"] = rep.r_at_5;
  j["r_at_10"] = rep.r_at_10;
  j["mrr5"] = rep.mrr5;
  j["kldiv"] = rep.kldiv;
  j["cov_mean_abs_offdiag"] = rep.cov_mean_abs_offdiag;
  j["descriptor_dim"] = rep.descriptor_dim;
  j["whitened"] = rep.whitened;
  nlohmann::json c;
  c["k_list"] = std::vector<int>{1, 5, 10};
  c["search_k"] = cfg.search_k;
  c["kl_bins"] = cfg.kl_bins;
  c["kl_smoothing"] = cfg.kl_smoothing;
  c["kl_max_pairs"] = cfg.kl_max_pairs;
  c["kl_seed"] = cfg.kl_seed;
  c["whiten"] = cfg.whiten;
  c["pca_dim"] = cfg.pca_dim;
  c["pca_eps"] = cfg.pca_eps;
  j["config"] = std::move(c);
  return j;
}

inline void save_report(const EvalReport& rep, const EvalConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << report_to_json(rep, cfg).dump(2) << "\n";
}

}  // namespace fovreg
