#pragma once

// Synthetic descriptor pools: each class owns a unit-vector center, and a
// shared background center is common to every class. Each image places
// ceil(rho * m) background descriptors at fixed spatial positions; the rest
// come from its class center. Both get isotropic Gaussian noise.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tcds/core.hpp"
#include "tcds/train.hpp"

namespace tcds {

struct SyntheticSpec {
  std::size_t classes = 20;
  std::size_t images_per_class = 40;
  std::size_t d = 32;
  std::size_t m = 25;
  double background_ratio = 0.3;
  double noise = 0.1;  // per-component standard deviation
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw InvalidConfig("synthetic pool needs >= 2 classes");
    if (images_per_class < 1) throw InvalidConfig("synthetic pool needs >= 1 image per class");
    if (d < 1) throw InvalidConfig("descriptor dimension must be >= 1");
    if (m < 1) throw InvalidConfig("descriptors per image must be >= 1");
    if (!(background_ratio >= 0.0 && background_ratio < 1.0)) {
      throw InvalidConfig("background ratio must lie in [0, 1)");
    }
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw InvalidConfig("noise must be >= 0");
  }
};

struct SyntheticPool {
  EpisodePool pool;
  std::vector<bool> background;  // per spatial index; true = background position
  std::vector<std::vector<double>> class_centers;
  std::vector<double> background_center;
};

/// Unit vectors spread by Gram-Schmidt over Gaussian draws, in blocks of d:
/// vectors within a block are orthonormal, so any count <= d is mutually
/// orthogonal.
inline std::vector<std::vector<double>> spread_unit_vectors(std::size_t count, std::size_t d,
                                                            Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> out;
  while (out.size() < count) {
    const std::size_t block_start = (out.size() / d) * d;
    std::vector<double> v(d);
    for (double& x : v) x = gauss(rng);
    for (std::size_t b = block_start; b < out.size(); ++b) {
      const double proj = dot(v, out[b]);
      for (std::size_t t = 0; t < d; ++t) v[t] -= proj * out[b][t];
    }
    const double n = norm(v);
    if (n < 1e-8) continue;  // draw landed in the current span; redraw
    for (double& x : v) x /= n;
    out.push_back(std::move(v));
  }
  return out;
}

inline std::size_t background_count(double ratio, std::size_t m) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(m)));
}

/// Pure in (spec). Values are rounded to float32 so a pool survives a trip
/// through an LDPK file unchanged.
inline SyntheticPool generate_synthetic_pool(const SyntheticSpec& spec,
                                             Split split = Split::train) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticPool out;
  out.pool = EpisodePool(split);

  auto centers = spread_unit_vectors(spec.classes + 1, spec.d, rng);
  out.background_center = centers.back();
  centers.pop_back();
  out.class_centers = std::move(centers);

  const std::size_t n_bg = background_count(spec.background_ratio, spec.m);
  std::vector<std::size_t> positions(spec.m);
  for (std::size_t j = 0; j < spec.m; ++j) positions[j] = j;
  for (std::size_t i = 0; i < n_bg; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, spec.m - 1);
    std::swap(positions[i], positions[pick(rng)]);
  }
  out.background.assign(spec.m, false);
  for (std::size_t i = 0; i < n_bg; ++i) out.background[positions[i]] = true;

  std::normal_distribution<double> gauss(0.0, spec.noise);
  auto draw = [&](const std::vector<double>& center) {
    for (;;) {
      std::vector<double> v(spec.d);
      for (std::size_t t = 0; t < spec.d; ++t) {
        const double x = center[t] + (spec.noise > 0.0 ? gauss(rng) : 0.0);
        v[t] = static_cast<double>(static_cast<float>(x));
      }
      if (norm(v) > 0.0) return LocalDescriptor(std::move(v));
    }
  };

  for (std::size_t c = 0; c < spec.classes; ++c) {
    std::vector<LocalDescriptor> descs;
    descs.reserve(spec.images_per_class * spec.m);
    for (std::size_t img = 0; img < spec.images_per_class; ++img) {
      for (std::size_t j = 0; j < spec.m; ++j) {
        descs.push_back(draw(out.background[j] ? out.background_center : out.class_centers[c]));
      }
    }
    char label[64];
    std::snprintf(label, sizeof label, "s%llu-c%03zu", static_cast<unsigned long long>(spec.seed), c);
    out.pool.add_class(label, DescriptorSet(std::move(descs), spec.images_per_class, spec.m));
  }
  return out;
}

}  // namespace tcds
