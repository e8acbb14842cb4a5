#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fovreg/dataset.hpp"
#include "fovreg/rng.hpp"

namespace fovreg {

/// Batch composition over psi strata: high (0.5, 1], mid (0, 0.5], zero {0}.
/// The default fractions are the training distribution (50/25/25); no hard
/// mining anywhere.
struct BatchSpec {
  int batch_size = 16;
  double f_high = 0.5;
  double f_mid = 0.25;
  double f_zero = 0.25;
};

struct BatchCounts {
  int high = 0;
  int mid = 0;
  int zero = 0;
};

/// Per-batch counts: round half-up for high and mid, remainder to zero.
inline BatchCounts batch_counts(const BatchSpec& spec) {
  if (spec.batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (spec.f_high < 0.0 || spec.f_mid < 0.0 || spec.f_zero < 0.0)
    throw std::invalid_argument("train: batch fractions must be non-negative");
  if (std::fabs(spec.f_high + spec.f_mid + spec.f_zero - 1.0) > 1e-9)
    throw std::invalid_argument("train: batch fractions must sum to 1");
  BatchCounts c;
  c.high = static_cast<int>(std::floor(spec.f_high * spec.batch_size + 0.5));
  c.mid = static_cast<int>(std::floor(spec.f_mid * spec.batch_size + 0.5));
  c.zero = spec.batch_size - c.high - c.mid;
  if (c.zero < 0)
    throw std::invalid_argument("train: rounded batch counts exceed batch_size");
  return c;
}

struct Buckets {
  std::vector<SimilarityPair> high;
  std::vector<SimilarityPair> mid;
  std::vector<SimilarityPair> zero;
};

inline Buckets stratify(const std::vector<SimilarityPair>& pairs) {
  Buckets b;
  for (const auto& p : pairs) {
    if (p.psi > 0.5)
      b.high.push_back(p);
    else if (p.psi > 0.0)
      b.mid.push_back(p);
    else
      b.zero.push_back(p);
  }
  return b;
}

/// Deterministic stratified batch stream. Each bucket is consumed without
/// replacement in a shuffled order, reshuffling when exhausted, so every pair
/// in a bucket appears once per cycle. Depends only on (pairs, spec, seed);
/// never on model state.
class BatchSampler {
 public:
  BatchSampler(Buckets buckets, const BatchSpec& spec, std::uint64_t seed)
      : buckets_(std::move(buckets)), counts_(batch_counts(spec)), rng_(seed) {
    require_nonempty(counts_.high, buckets_.high.size(), "high");
    require_nonempty(counts_.mid, buckets_.mid.size(), "mid");
    require_nonempty(counts_.zero, buckets_.zero.size(), "zero");
    init_cursor(high_, buckets_.high.size());
    init_cursor(mid_, buckets_.mid.size());
    init_cursor(zero_, buckets_.zero.size());
  }

  const BatchCounts& counts() const { return counts_; }

  std::vector<SimilarityPair> next_batch() {
    std::vector<SimilarityPair> batch;
    batch.reserve(static_cast<std::size_t>(counts_.high + counts_.mid + counts_.zero));
    draw(high_, buckets_.high, counts_.high, batch);
    draw(mid_, buckets_.mid, counts_.mid, batch);
    draw(zero_, buckets_.zero, counts_.zero, batch);
    return batch;
  }

 private:
  struct Cursor {
    std::vector<std::size_t> order;
    std::size_t pos = 0;
  };

  static void require_nonempty(int quota, std::size_t size, const char* name) {
    if (quota > 0 && size == 0)
      throw std::invalid_argument(std::string("sampler: ") + name +
                                  " bucket is empty but its batch quota is " +
                                  std::to_string(quota));
  }

  void init_cursor(Cursor& c, std::size_t n) {
    c.order.resize(n);
    std::iota(c.order.begin(), c.order.end(), std::size_t{0});
    rng_.shuffle(c.order);
    c.pos = 0;
  }

  void draw(Cursor& c, const std::vector<SimilarityPair>& bucket, int count,
            std::vector<SimilarityPair>& out) {
    for (int k = 0; k < count; ++k) {
      if (c.pos == c.order.size()) {
        rng_.shuffle(c.order);
        c.pos = 0;
      }
      out.push_back(bucket[c.order[c.pos++]]);
    }
  }

  Buckets buckets_;
  BatchCounts counts_;
  Rng rng_;
  Cursor high_, mid_, zero_;
};

}  // namespace fovreg
