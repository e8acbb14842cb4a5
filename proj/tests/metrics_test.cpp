#include "fovreg/metrics.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using fovreg::Dataset;
using fovreg::deg_to_rad;
using fovreg::EvalConfig;
using fovreg::EvalReport;
using fovreg::feature_covariance;
using fovreg::GroundTruthRelation;
using fovreg::kl_from_samples;
using fovreg::KlConfig;
using fovreg::mrr_at_5;
using fovreg::PlaceImage;
using fovreg::RankedList;
using fovreg::recall_at_k;
using fovreg::Role;

RankedList ranked(std::uint32_t query_id, std::vector<std::uint32_t> ids) {
  RankedList list;
  list.query_id = query_id;
  list.ids = std::move(ids);
  list.distances.assign(list.ids.size(), 0.0);
  std::iota(list.distances.begin(), list.distances.end(), 0.0);
  return list;
}

PlaceImage image_at(std::uint32_t id, double x, double y, double heading_deg, Role role) {
  PlaceImage img;
  img.id = id;
  img.pose = fovreg::make_pose(id, x, y, deg_to_rad(heading_deg), deg_to_rad(90.0), 10.0);
  img.role = role;
  return img;
}

TEST(GroundTruth, FromPosesUsesPositiveRule) {
  Dataset ds;
  ds.images.push_back(image_at(0, 0.0, 0.0, 0.0, Role::map));
  ds.images.push_back(image_at(1, 30.0, 0.0, 0.0, Role::map));
  ds.images.push_back(image_at(2, 24.0, 0.0, 0.0, Role::map));
  ds.images.push_back(image_at(10, 0.0, 0.0, 10.0, Role::query));   // near 0 and 2
  ds.images.push_back(image_at(11, 200.0, 0.0, 0.0, Role::query));  // no positives
  const GroundTruthRelation gt = fovreg::ground_truth_from_poses(ds, 25.0, deg_to_rad(40.0));
  ASSERT_EQ(gt.positives.size(), 1u);
  ASSERT_TRUE(gt.has_positives(10));
  EXPECT_FALSE(gt.has_positives(11));
  EXPECT_EQ(gt.positives.at(10), (std::vector<std::uint32_t>{0, 2}));  // sorted

  const GroundTruthRelation empty = fovreg::ground_truth_from_poses(ds, 0.0, 0.0);
  EXPECT_TRUE(empty.positives.empty());
}

TEST(GroundTruth, JsonRoundTrip) {
  GroundTruthRelation gt;
  gt.positives[10] = {3, 1, 2};
  std::sort(gt.positives[10].begin(), gt.positives[10].end());
  gt.positives[42] = {7};
  const auto path = std::filesystem::temp_directory_path() /
                    ("fovreg_gt_" + std::to_string(::getpid()) + ".json");
  fovreg::save_gt(gt, path.string());
  const GroundTruthRelation back = fovreg::load_gt(path.string());
  std::filesystem::remove(path);
  ASSERT_EQ(back.positives.size(), 2u);
  EXPECT_EQ(back.positives.at(10), (std::vector<std::uint32_t>{1, 2, 3}));
  EXPECT_EQ(back.positives.at(42), (std::vector<std::uint32_t>{7}));

  const nlohmann::json j = fovreg::gt_to_json(gt);
  EXPECT_TRUE(j.contains("10"));
  EXPECT_TRUE(j.contains("42"));
}

TEST(RecallAtK, CountsFirstHitWithinK) {
  GroundTruthRelation gt;
  gt.positives[100] = {1};
  gt.positives[101] = {2};
  std::vector<RankedList> lists;
  lists.push_back(ranked(100, {1, 5, 6, 7, 8, 9}));  // hit at rank 1
  lists.push_back(ranked(101, {5, 6, 7, 8, 9, 2}));  // hit at rank 6
  EXPECT_DOUBLE_EQ(recall_at_k(lists, gt, 1), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k(lists, gt, 5), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k(lists, gt, 6), 1.0);

  // 10 queries, 7 with a positive in the top 5.
  GroundTruthRelation gt10;
  std::vector<RankedList> lists10;
  for (std::uint32_t q = 0; q < 10; ++q) {
    gt10.positives[q] = {77};
    if (q < 7)
      lists10.push_back(ranked(q, {50, 51, 77, 52, 53}));
    else
      lists10.push_back(ranked(q, {50, 51, 52, 53, 54}));
  }
  EXPECT_DOUBLE_EQ(recall_at_k(lists10, gt10, 5), 0.7);
}

TEST(RecallAtK, ExcludesQueriesWithoutPositivesAndErrorsWhenNoneQualify) {
  GroundTruthRelation gt;
  gt.positives[7] = {3};
  std::vector<RankedList> lists;
  lists.push_back(ranked(7, {3, 4, 5}));
  lists.push_back(ranked(8, {4, 5, 6}));  // no positives: excluded from denominator
  EXPECT_DOUBLE_EQ(recall_at_k(lists, gt, 1), 1.0);

  GroundTruthRelation empty;
  EXPECT_THROW(recall_at_k(lists, empty, 5), std::runtime_error);
  EXPECT_THROW(mrr_at_5(lists, empty), std::runtime_error);
  EXPECT_THROW(recall_at_k(lists, gt, 0), std::invalid_argument);
}

TEST(MrrAt5, FixtureValues) {
  GroundTruthRelation gt;
  gt.positives[0] = {9};
  EXPECT_DOUBLE_EQ(mrr_at_5({ranked(0, {9, 1, 2, 3, 4, 5})}, gt), 1.0);
  EXPECT_DOUBLE_EQ(mrr_at_5({ranked(0, {1, 9, 2, 3, 4, 5})}, gt), 0.8);
  EXPECT_DOUBLE_EQ(mrr_at_5({ranked(0, {1, 2, 3, 4, 5, 9})}, gt), 0.0);
  EXPECT_DOUBLE_EQ(mrr_at_5({ranked(0, {1, 2, 3, 4, 9, 5})}, gt), 0.2);

  GroundTruthRelation gt3;
  gt3.positives[0] = {9};
  gt3.positives[1] = {9};
  gt3.positives[2] = {9};
  const std::vector<RankedList> lists = {ranked(0, {9, 1, 2, 3, 4}),
                                         ranked(1, {1, 9, 2, 3, 4}),
                                         ranked(2, {1, 2, 3, 4, 5})};
  EXPECT_DOUBLE_EQ(mrr_at_5(lists, gt3), 0.6);  // mean of 1, 0.8, 0
}

TEST(RankingMetrics, MonotoneInKAndMrrBoundedByRecall5) {
  std::mt19937_64 eng(2);
  GroundTruthRelation gt;
  std::vector<RankedList> lists;
  std::vector<std::uint32_t> map_ids(50);
  std::iota(map_ids.begin(), map_ids.end(), 0u);
  for (std::uint32_t q = 0; q < 40; ++q) {
    std::shuffle(map_ids.begin(), map_ids.end(), eng);
    lists.push_back(ranked(1000 + q, std::vector<std::uint32_t>(map_ids.begin(),
                                                                map_ids.begin() + 10)));
    std::vector<std::uint32_t> pos;
    for (std::uint32_t m = 0; m < 50; ++m)
      if (eng() % 10 == 0) pos.push_back(m);
    if (!pos.empty()) gt.positives[1000 + q] = pos;
  }
  double prev = 0.0;
  for (int k = 1; k <= 10; ++k) {
    const double r = recall_at_k(lists, gt, k);
    EXPECT_GE(r, prev);
    prev = r;
  }
  EXPECT_LE(mrr_at_5(lists, gt), recall_at_k(lists, gt, 5));
}

TEST(KlFromSamples, TwoBinHandComputedValue) {
  const std::vector<double> p = {0.25, 0.75};
  const std::vector<double> q = {0.25, 0.75, 0.75, 0.75};
  const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  EXPECT_NEAR(kl_from_samples(p, q, 2, 1e-10), expected, 1e-6);
  EXPECT_NEAR(expected, 0.14384103622589045, 1e-12);
}

TEST(KlFromSamples, IdenticalSamplesGiveZero) {
  std::mt19937_64 eng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(5000);
  for (auto& v : s) v = u(eng);
  EXPECT_EQ(kl_from_samples(s, s, 100, 1e-10), 0.0);
}

TEST(KlFromSamples, ValidatesArguments) {
  const std::vector<double> s = {0.5};
  EXPECT_THROW(kl_from_samples(s, s, 1, 1e-10), std::invalid_argument);
  EXPECT_THROW(kl_from_samples({}, s, 10, 1e-10), std::invalid_argument);
  EXPECT_THROW(kl_from_samples(s, {}, 10, 1e-10), std::invalid_argument);
  // Out-of-range samples clamp instead of throwing.
  EXPECT_NO_THROW(kl_from_samples({-0.5, 1.5}, {0.0, 1.0}, 10, 1e-10));
}

TEST(KlDivergence, PerfectDistanceSimilarityMatchIsAtFloor) {
  // Descriptors on the unit circle; for every query-map pair set
  // psi = 1 - d/2 exactly, so both histograms see identical samples.
  const int nq = 40, nm = 30;
  std::mt19937_64 eng(4);
  std::uniform_real_distribution<double> u(0.0, 2.0 * 3.14159265358979);
  MatrixXd qd(nq, 2), md(nm, 2);
  for (int i = 0; i < nq; ++i) {
    const double a = u(eng);
    qd(i, 0) = std::cos(a);
    qd(i, 1) = std::sin(a);
  }
  for (int i = 0; i < nm; ++i) {
    const double a = u(eng);
    md(i, 0) = std::cos(a);
    md(i, 1) = std::sin(a);
  }
  std::vector<double> psi(static_cast<std::size_t>(nq * nm));
  for (int q = 0; q < nq; ++q)
    for (int m = 0; m < nm; ++m) {
      const double d = (qd.row(q) - md.row(m)).norm();
      psi[static_cast<std::size_t>(q * nm + m)] = 1.0 - d / 2.0;
    }
  KlConfig cfg;
  const double kl = fovreg::kl_divergence_distance_vs_similarity(qd, md, psi, cfg);
  EXPECT_EQ(kl, 0.0);
}

TEST(KlDivergence, SubsamplingIsSeededAndDeterministic) {
  const int nq = 12, nm = 12;
  std::mt19937_64 eng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd qd(nq, 4), md(nm, 4);
  for (int i = 0; i < nq; ++i) {
    for (int c = 0; c < 4; ++c) qd(i, c) = g(eng);
    qd.row(i).normalize();
  }
  for (int i = 0; i < nm; ++i) {
    for (int c = 0; c < 4; ++c) md(i, c) = g(eng);
    md.row(i).normalize();
  }
  std::vector<double> psi(static_cast<std::size_t>(nq * nm));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : psi) v = u(eng);

  KlConfig cfg;
  cfg.bins = 20;
  cfg.max_pairs = 60;  // forces subsampling of the 144 pairs
  cfg.seed = 5;
  const double a = fovreg::kl_divergence_distance_vs_similarity(qd, md, psi, cfg);
  const double b = fovreg::kl_divergence_distance_vs_similarity(qd, md, psi, cfg);
  EXPECT_EQ(a, b);
  cfg.seed = 6;
  const double c = fovreg::kl_divergence_distance_vs_similarity(qd, md, psi, cfg);
  EXPECT_NE(a, c);

  EXPECT_THROW(
      fovreg::kl_divergence_distance_vs_similarity(qd, md, std::vector<double>(10, 0.5), cfg),
      std::invalid_argument);
}

TEST(FeatureCovariance, MatchesBruteForceDoubleLoop) {
  std::mt19937_64 eng(21);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n = 40, d = 6;
  MatrixXd m(n, d);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) m(r, c) = g(eng);
  const auto summary = feature_covariance(m);

  MatrixXd expected(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double mi = 0.0, mj = 0.0;
      for (int r = 0; r < n; ++r) {
        mi += m(r, i);
        mj += m(r, j);
      }
      mi /= n;
      mj /= n;
      double acc = 0.0;
      for (int r = 0; r < n; ++r) acc += (m(r, i) - mi) * (m(r, j) - mj);
      expected(i, j) = acc / (n - 1);
    }
  }
  EXPECT_LT((summary.cov - expected).cwiseAbs().maxCoeff(), 1e-12);

  double off = 0.0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j) off += std::abs(expected(i, j));
  off /= d * (d - 1);
  EXPECT_NEAR(summary.mean_abs_offdiag, off, 1e-12);
}

TEST(FeatureCovariance, StructuralProperties) {
  std::mt19937_64 eng(22);
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd m(30, 5);
  for (int r = 0; r < 30; ++r)
    for (int c = 0; c < 5; ++c) m(r, c) = g(eng);
  const auto summary = feature_covariance(m);
  // Exact symmetry and positive semi-definiteness.
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) EXPECT_EQ(summary.cov(i, j), summary.cov(j, i));
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(summary.cov);
  EXPECT_GE(solver.eigenvalues().minCoeff(), -1e-12);

  // Identical rows have exactly zero covariance.
  MatrixXd same = MatrixXd::Ones(10, 4) * 0.37;
  const auto zero = feature_covariance(same);
  EXPECT_EQ(zero.cov.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(zero.mean_abs_offdiag, 0.0);

  // Basis-vector rows have the closed-form covariance.
  const int n = 8;
  const auto basis = feature_covariance(MatrixXd::Identity(n, n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double expected = i == j ? 1.0 / n : -1.0 / (n * (n - 1.0));
      EXPECT_NEAR(basis.cov(i, j), expected, 1e-15);
    }
  EXPECT_NEAR(basis.mean_abs_offdiag, 1.0 / (n * (n - 1.0)), 1e-15);

  EXPECT_THROW(feature_covariance(MatrixXd::Ones(1, 3)), std::invalid_argument);
  const auto single = feature_covariance(MatrixXd::Ones(5, 1));
  EXPECT_EQ(single.mean_abs_offdiag, 0.0);
}

Dataset synthetic_eval_dataset(int n_map, int n_query) {
  Dataset ds;
  for (int m = 0; m < n_map; ++m)
    ds.images.push_back(image_at(static_cast<std::uint32_t>(m), 5.0 * m, 0.0, 0.0, Role::map));
  for (int q = 0; q < n_query; ++q)
    ds.images.push_back(image_at(static_cast<std::uint32_t>(n_map + q), 5.0 * q + 2.0, 0.0, 0.0,
                                 Role::query));
  return ds;
}

TEST(Evaluate, OracleDescriptorsScorePerfectly) {
  Dataset ds = synthetic_eval_dataset(4, 2);
  MatrixXd descs(6, 3);
  descs << 1, 0, 0,
      0, 1, 0,
      0, 0, 1,
      -1, 0, 0,
      1, 0, 0,   // query 4 identical to map 0
      0, 1, 0;   // query 5 identical to map 1
  GroundTruthRelation gt;
  gt.positives[4] = {0};
  gt.positives[5] = {1};
  EvalConfig cfg;
  cfg.kl_bins = 10;
  const EvalReport rep = fovreg::evaluate_descriptors(ds, descs, gt, cfg);
  EXPECT_DOUBLE_EQ(rep.r_at_1, 1.0);
  EXPECT_DOUBLE_EQ(rep.r_at_5, 1.0);
  EXPECT_DOUBLE_EQ(rep.r_at_10, 1.0);
  EXPECT_DOUBLE_EQ(rep.mrr5, 1.0);
  EXPECT_EQ(rep.descriptor_dim, 3);
  EXPECT_FALSE(rep.whitened);
  EXPECT_GE(rep.kldiv, 0.0);
}

TEST(Evaluate, RandomDescriptorsSitAtPermutationChanceLevel) {
  const int n_map = 100, n_query = 1000, d = 16;
  std::mt19937_64 eng(31);
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd maps(n_map, d), queries(n_query, d);
  for (int r = 0; r < n_map; ++r) {
    for (int c = 0; c < d; ++c) maps(r, c) = g(eng);
    maps.row(r).normalize();
  }
  for (int r = 0; r < n_query; ++r) {
    for (int c = 0; c < d; ++c) queries(r, c) = g(eng);
    queries.row(r).normalize();
  }
  std::vector<std::uint32_t> map_ids(n_map);
  std::iota(map_ids.begin(), map_ids.end(), 0u);
  const auto index = fovreg::build_index(maps, map_ids);
  GroundTruthRelation gt;
  std::vector<RankedList> lists;
  for (int q = 0; q < n_query; ++q) {
    const std::uint32_t qid = static_cast<std::uint32_t>(10000 + q);
    gt.positives[qid] = {static_cast<std::uint32_t>(q % n_map)};
    lists.push_back(fovreg::search(index, queries.row(q).transpose(), 5, qid));
  }
  const double measured = recall_at_k(lists, gt, 5);

  // Permutation oracle: a random ranking of 100 maps with one positive.
  std::mt19937_64 perm_eng(32);
  std::vector<int> order(n_map);
  std::iota(order.begin(), order.end(), 0);
  int hits = 0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    std::shuffle(order.begin(), order.end(), perm_eng);
    for (int i = 0; i < 5; ++i)
      if (order[i] == 42) {
        ++hits;
        break;
      }
  }
  const double simulated = static_cast<double>(hits) / trials;
  EXPECT_NEAR(simulated, 0.05, 0.01);
  EXPECT_NEAR(measured, simulated, 0.025);
}

TEST(Evaluate, ReportIsInternallyConsistentAndDeterministic) {
  Dataset ds = synthetic_eval_dataset(30, 12);
  std::mt19937_64 eng(41);
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd descs(42, 8);
  for (int r = 0; r < 42; ++r) {
    for (int c = 0; c < 8; ++c) descs(r, c) = g(eng);
    descs.row(r).normalize();
  }
  const GroundTruthRelation gt = fovreg::ground_truth_from_poses(ds, 25.0, deg_to_rad(40.0));
  ASSERT_FALSE(gt.positives.empty());
  EvalConfig cfg;
  cfg.kl_bins = 50;
  const EvalReport a = fovreg::evaluate_descriptors(ds, descs, gt, cfg);
  const EvalReport b = fovreg::evaluate_descriptors(ds, descs, gt, cfg);
  EXPECT_LE(a.r_at_1, a.r_at_5);
  EXPECT_LE(a.r_at_5, a.r_at_10);
  EXPECT_LE(a.mrr5, a.r_at_5);
  EXPECT_GE(a.kldiv, 0.0);
  EXPECT_GE(a.cov_mean_abs_offdiag, 0.0);
  EXPECT_EQ(a.r_at_1, b.r_at_1);
  EXPECT_EQ(a.kldiv, b.kldiv);
  EXPECT_EQ(a.cov_mean_abs_offdiag, b.cov_mean_abs_offdiag);

  // Whitening down to 4 dimensions is reflected in the report.
  EvalConfig wcfg = cfg;
  wcfg.whiten = true;
  wcfg.pca_dim = 4;
  const EvalReport w = fovreg::evaluate_descriptors(ds, descs, gt, wcfg);
  EXPECT_TRUE(w.whitened);
  EXPECT_EQ(w.descriptor_dim, 4);

  const nlohmann::json j = fovreg::report_to_json(w, wcfg);
  EXPECT_EQ(j.at("descriptor_dim").get<int>(), 4);
  EXPECT_TRUE(j.at("whitened").get<bool>());
  EXPECT_EQ(j.at("config").at("k_list"), nlohmann::json({1, 5, 10}));
  EXPECT_EQ(j.at("config").at("kl_bins").get<int>(), 50);
  EXPECT_TRUE(j.at("config").at("whiten").get<bool>());
  EXPECT_EQ(j.at("config").at("pca_dim").get<int>(), 4);
  EXPECT_EQ(j.dump(2), fovreg::report_to_json(w, wcfg).dump(2));
}

TEST(Evaluate, RequiresMapsAndQueries) {
  Dataset no_queries;
  no_queries.images.push_back(image_at(0, 0, 0, 0, Role::map));
  MatrixXd one = MatrixXd::Ones(1, 3).rowwise().normalized();
  GroundTruthRelation gt;
  gt.positives[9] = {0};
  EXPECT_THROW(fovreg::evaluate_descriptors(no_queries, one, gt, EvalConfig{}),
               std::invalid_argument);
  Dataset no_maps;
  no_maps.images.push_back(image_at(9, 0, 0, 0, Role::query));
  EXPECT_THROW(fovreg::evaluate_descriptors(no_maps, one, gt, EvalConfig{}),
               std::invalid_argument);
}

}  // namespace
