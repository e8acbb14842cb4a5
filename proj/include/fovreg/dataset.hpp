#pragma once

#include <Eigen/Core>
#include <bit>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fovreg/common.hpp"
#include "fovreg/geometry.hpp"
#include "fovreg/rng.hpp"

namespace fovreg {

enum class Role { map, query };

inline std::string role_name(Role r) { return r == Role::map ? "map" : "query"; }

inline Role role_from_name(const std::string& name) {
  if (name == "map") return Role::map;
  if (name == "query") return Role::query;
  throw std::invalid_argument("unknown role: " + name);
}

struct PlaceImage {
  std::uint32_t id = 0;
  CameraPose pose;
  Eigen::VectorXd observation;  // size 0 until synthesized or loaded
  Role role = Role::map;
};

struct Dataset {
  std::vector<PlaceImage> images;
  int d_in = 0;  // 0 while observations are absent

  std::vector<std::size_t> map_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < images.size(); ++i)
      if (images[i].role == Role::map) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> query_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < images.size(); ++i)
      if (images[i].role == Role::query) out.push_back(i);
    return out;
  }
  const PlaceImage* find(std::uint32_t id) const {
    for (const auto& img : images)
      if (img.id == id) return &img;
    return nullptr;
  }
};

struct SimilarityPair {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  double psi = 0.0;
};

struct SyntheticWorldConfig {
  int n_landmarks = 400;
  int landmark_feature_dim = 16;
  int n_map = 64;
  int n_query = 32;
  double trajectory_length = 200.0;  // meters
  double fov_angle = deg_to_rad(90.0);
  double range = 15.0;
  double noise_sigma = 0.05;
  double heading_jitter_std = 0.2;  // radians
  int d_in = 32;
  std::uint64_t seed = 0;
};

inline void validate(const SyntheticWorldConfig& cfg) {
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (cfg.n_landmarks <= 0) throw std::invalid_argument("world.n_landmarks must be > 0");
  if (cfg.landmark_feature_dim <= 0)
    throw std::invalid_argument("world.landmark_feature_dim must be > 0");
  if (cfg.n_map <= 0) throw std::invalid_argument("world.n_map must be > 0");
  if (cfg.n_query <= 0) throw std::invalid_argument("world.n_query must be > 0");
  if (cfg.d_in <= 0) throw std::invalid_argument("world.d_in must be > 0");
  if (!positive(cfg.trajectory_length))
    throw std::invalid_argument("world.trajectory_length must be > 0");
  if (!(cfg.fov_angle > 0.0 && cfg.fov_angle < kPi))
    throw std::invalid_argument("world.fov_deg must be in (0, 180)");
  if (!positive(cfg.range)) throw std::invalid_argument("world.range_m must be > 0");
  if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.noise_sigma))
    throw std::invalid_argument("world.noise_sigma must be >= 0");
  if (!(cfg.heading_jitter_std >= 0.0) || !std::isfinite(cfg.heading_jitter_std))
    throw std::invalid_argument("world.heading_jitter must be >= 0");
}

// ---------------------------------------------------------------------------
// poses.csv

inline constexpr const char* kPosesHeader = "id,x,y,heading_deg,fov_deg,range_m,role";

namespace detail {

inline double parse_csv_double(const std::string& field, const std::string& path,
                               std::size_t line) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw std::runtime_error(path + ":" + std::to_string(line) + ": invalid number '" + field +
                             "'");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

/// Parses poses.csv. Observations stay absent; headings are normalized and
/// angles converted to radians. Errors carry "path:line".
inline Dataset load_poses(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open poses file: " + path);
  Dataset ds;
  std::unordered_set<std::uint32_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kPosesHeader)
        throw std::runtime_error(path + ":1: expected header '" + std::string(kPosesHeader) +
                                 "'");
      continue;
    }
    if (line.empty()) continue;
    auto fields = detail::split_csv(line);
    if (fields.size() != 7)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 7 fields, got " +
                               std::to_string(fields.size()));
    std::uint32_t id = 0;
    {
      const char* first = fields[0].data();
      const char* last = fields[0].data() + fields[0].size();
      auto res = std::from_chars(first, last, id);
      if (res.ec != std::errc{} || res.ptr != last)
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": invalid id '" +
                                 fields[0] + "'");
    }
    if (!seen.insert(id).second)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": duplicate id " +
                               std::to_string(id));
    const double x = detail::parse_csv_double(fields[1], path, line_no);
    const double y = detail::parse_csv_double(fields[2], path, line_no);
    const double heading = deg_to_rad(detail::parse_csv_double(fields[3], path, line_no));
    const double fov = deg_to_rad(detail::parse_csv_double(fields[4], path, line_no));
    const double range = detail::parse_csv_double(fields[5], path, line_no);
    PlaceImage img;
    try {
      img.pose = make_pose(id, x, y, heading, fov, range);
      img.role = role_from_name(fields[6]);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    img.id = id;
    ds.images.push_back(std::move(img));
  }
  if (line_no == 0) throw std::runtime_error(path + ":1: missing header");
  return ds;
}

inline void save_poses(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << kPosesHeader << "\n";
  for (const auto& img : ds.images) {
    out << img.id << ',' << format_double(img.pose.x) << ',' << format_double(img.pose.y) << ','
        << format_double(rad_to_deg(img.pose.heading)) << ','
        << format_double(rad_to_deg(img.pose.fov_angle)) << ','
        << format_double(img.pose.range) << ',' << role_name(img.role) << "\n";
  }
}

// ---------------------------------------------------------------------------
// FOVR binary vector files (observations and descriptors share the format)

namespace detail {

inline void append_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

struct FovrData {
  std::vector<std::uint32_t> ids;
  Eigen::MatrixXd vectors;  // one row per id; float32 precision on disk
};

inline void save_fovr(const std::string& path, const std::vector<std::uint32_t>& ids,
                      const Eigen::MatrixXd& vectors) {
  if (static_cast<Eigen::Index>(ids.size()) != vectors.rows())
    throw std::invalid_argument("save_fovr: ids/vectors row count mismatch");
  std::string buf;
  buf.reserve(16 + ids.size() * (4 + 4 * static_cast<std::size_t>(vectors.cols())));
  buf += "FOVR";
  detail::append_u32_le(buf, 1u);
  detail::append_u32_le(buf, static_cast<std::uint32_t>(ids.size()));
  detail::append_u32_le(buf, static_cast<std::uint32_t>(vectors.cols()));
  for (std::size_t r = 0; r < ids.size(); ++r) {
    detail::append_u32_le(buf, ids[r]);
    for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
      const float f = static_cast<float>(vectors(static_cast<Eigen::Index>(r), c));
      detail::append_u32_le(buf, std::bit_cast<std::uint32_t>(f));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline FovrData load_fovr(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vector file: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 16 || buf.compare(0, 4, "FOVR") != 0)
    throw std::runtime_error(path + ": not a FOVR file");
  const std::uint32_t version = detail::read_u32_le(p + 4);
  if (version != 1)
    throw std::runtime_error(path + ": unsupported FOVR version " + std::to_string(version));
  const std::uint32_t count = detail::read_u32_le(p + 8);
  const std::uint32_t dim = detail::read_u32_le(p + 12);
  const std::size_t expected = 16 + static_cast<std::size_t>(count) * (4 + 4 * static_cast<std::size_t>(dim));
  if (buf.size() != expected)
    throw std::runtime_error(path + ": truncated FOVR file (expected " +
                             std::to_string(expected) + " bytes, got " +
                             std::to_string(buf.size()) + ")");
  FovrData data;
  data.ids.resize(count);
  data.vectors.resize(count, dim);
  std::size_t off = 16;
  for (std::uint32_t r = 0; r < count; ++r) {
    data.ids[r] = detail::read_u32_le(p + off);
    off += 4;
    for (std::uint32_t c = 0; c < dim; ++c) {
      const float f = std::bit_cast<float>(detail::read_u32_le(p + off));
      data.vectors(r, c) = static_cast<double>(f);
      off += 4;
    }
  }
  return data;
}

inline void save_observations(const Dataset& ds, const std::string& path) {
  if (ds.d_in <= 0) throw std::invalid_argument("save_observations: dataset has no observations");
  std::vector<std::uint32_t> ids;
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(ds.images.size()), ds.d_in);
  for (std::size_t r = 0; r < ds.images.size(); ++r) {
    const auto& img = ds.images[r];
    if (img.observation.size() != ds.d_in)
      throw std::invalid_argument("save_observations: image " + std::to_string(img.id) +
                                  " has observation dim " + std::to_string(img.observation.size()));
    ids.push_back(img.id);
    rows.row(static_cast<Eigen::Index>(r)) = img.observation.transpose();
  }
  save_fovr(path, ids, rows);
}

/// Attaches observations from a FOVR file to a loaded pose set, matching by
/// id. Every dataset image must receive a vector.
inline void load_observations(Dataset& ds, const std::string& path) {
  FovrData data = load_fovr(path);
  std::unordered_map<std::uint32_t, Eigen::Index> by_id;
  for (std::size_t r = 0; r < data.ids.size(); ++r)
    by_id.emplace(data.ids[r], static_cast<Eigen::Index>(r));
  for (auto& img : ds.images) {
    auto it = by_id.find(img.id);
    if (it == by_id.end())
      throw std::runtime_error(path + ": no observation for image id " + std::to_string(img.id));
    img.observation = data.vectors.row(it->second).transpose();
  }
  ds.d_in = static_cast<int>(data.vectors.cols());
}

// ---------------------------------------------------------------------------
// Synthetic world

inline constexpr double kTrajectoryTurns = 2.0;

/// Landmark-mixture observation world. Landmarks with fixed Gaussian features
/// fill the trajectory's bounding box (expanded by the sensing range); cameras
/// ride a sinusoidal trajectory facing along it, so nearby cameras share
/// landmarks and FoV overlap controls observation similarity.
///
/// RNG substreams (derived from cfg.seed): 0 landmark positions, 1 landmark
/// features, 2 projection matrix, 3 heading jitter, 4 observation noise.
inline Dataset generate_synthetic_world(const SyntheticWorldConfig& cfg) {
  validate(cfg);
  Rng rng_pos(Rng::derive(cfg.seed, 0));
  Rng rng_feat(Rng::derive(cfg.seed, 1));
  Rng rng_proj(Rng::derive(cfg.seed, 2));
  Rng rng_heading(Rng::derive(cfg.seed, 3));
  Rng rng_noise(Rng::derive(cfg.seed, 4));

  const double amp = cfg.range;
  const double x_lo = -cfg.range, x_hi = cfg.trajectory_length + cfg.range;
  const double y_lo = -amp - cfg.range, y_hi = amp + cfg.range;

  std::vector<Vec2> landmarks(static_cast<std::size_t>(cfg.n_landmarks));
  for (auto& lm : landmarks) {
    lm.x = rng_pos.uniform(x_lo, x_hi);
    lm.y = rng_pos.uniform(y_lo, y_hi);
  }
  Eigen::MatrixXd features(cfg.n_landmarks, cfg.landmark_feature_dim);
  for (int r = 0; r < cfg.n_landmarks; ++r)
    for (int c = 0; c < cfg.landmark_feature_dim; ++c) features(r, c) = rng_feat.normal();

  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(cfg.landmark_feature_dim));
  Eigen::MatrixXd w_proj(cfg.d_in, cfg.landmark_feature_dim);
  for (int r = 0; r < cfg.d_in; ++r)
    for (int c = 0; c < cfg.landmark_feature_dim; ++c)
      w_proj(r, c) = rng_proj.normal() * proj_scale;

  auto traj_point = [&](double t) {
    return Vec2{cfg.trajectory_length * t, amp * std::sin(kTwoPi * kTrajectoryTurns * t)};
  };
  auto traj_heading = [&](double t) {
    const double dy = amp * kTwoPi * kTrajectoryTurns * std::cos(kTwoPi * kTrajectoryTurns * t);
    return std::atan2(dy, cfg.trajectory_length);
  };

  Dataset ds;
  ds.d_in = cfg.d_in;
  auto add_camera = [&](std::uint32_t id, double t, Role role) {
    const Vec2 p = traj_point(t);
    const double heading = traj_heading(t) + rng_heading.normal(0.0, cfg.heading_jitter_std);
    PlaceImage img;
    img.id = id;
    img.pose = make_pose(id, p.x, p.y, heading, cfg.fov_angle, cfg.range);
    img.role = role;
    ds.images.push_back(std::move(img));
  };
  for (int i = 0; i < cfg.n_map; ++i) {
    const double t = cfg.n_map > 1 ? static_cast<double>(i) / (cfg.n_map - 1) : 0.5;
    add_camera(static_cast<std::uint32_t>(i), t, Role::map);
  }
  for (int j = 0; j < cfg.n_query; ++j) {
    const double t = (j + 0.5) / cfg.n_query;
    add_camera(static_cast<std::uint32_t>(cfg.n_map + j), t, Role::query);
  }

  for (auto& img : ds.images) {
    const FrustumPolygon frustum = frustum_polygon(img.pose);
    const Vec2 apex{img.pose.x, img.pose.y};
    Eigen::VectorXd accum = Eigen::VectorXd::Zero(cfg.landmark_feature_dim);
    for (int l = 0; l < cfg.n_landmarks; ++l) {
      if (!point_in_frustum(frustum, landmarks[static_cast<std::size_t>(l)])) continue;
      const double dist = norm(landmarks[static_cast<std::size_t>(l)] - apex);
      accum += (1.0 - dist / cfg.range) * features.row(l).transpose();
    }
    Eigen::VectorXd obs = w_proj * accum;
    for (int k = 0; k < cfg.d_in; ++k) obs(k) += rng_noise.normal(0.0, cfg.noise_sigma);
    obs /= std::max(1.0, obs.norm());
    img.observation = std::move(obs);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Pair construction

/// Uniformly samples n_pairs unordered pairs from map-map and map-query (never
/// query-query); psi is the FoV overlap of the two poses.
inline std::vector<SimilarityPair> build_pairs(const Dataset& ds, std::size_t n_pairs,
                                               std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t a = 0; a < ds.images.size(); ++a) {
    for (std::size_t b = a + 1; b < ds.images.size(); ++b) {
      if (ds.images[a].role == Role::query && ds.images[b].role == Role::query) continue;
      pool.emplace_back(a, b);
    }
  }
  if (n_pairs > pool.size())
    throw std::invalid_argument("build_pairs: requested " + std::to_string(n_pairs) +
                                " pairs but only " + std::to_string(pool.size()) +
                                " distinct pairs exist");
  Rng rng(seed);
  rng.shuffle(pool);
  std::vector<SimilarityPair> pairs;
  pairs.reserve(n_pairs);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const auto& [a, b] = pool[k];
    pairs.push_back({ds.images[a].id, ds.images[b].id,
                     fov_overlap(ds.images[a].pose, ds.images[b].pose)});
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// pairs.jsonl

inline void save_pairs(const std::vector<SimilarityPair>& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["i"] = p.i;
    j["j"] = p.j;
    j["psi"] = p.psi;
    out << j.dump() << "\n";
  }
}

inline std::vector<SimilarityPair> load_pairs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open pairs file: " + path);
  std::vector<SimilarityPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    SimilarityPair p;
    try {
      p.i = j.at("i").get<std::uint32_t>();
      p.j = j.at("j").get<std::uint32_t>();
      p.psi = j.at("psi").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (p.i == p.j)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": pair with i == j");
    if (!(p.psi >= 0.0 && p.psi <= 1.0))
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": psi outside [0,1]");
    pairs.push_back(p);
  }
  return pairs;
}

}  // namespace fovreg
