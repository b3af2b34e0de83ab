#pragma once

// Descriptor containers plus the cosine / softmax / sigmoid kernels that the
// selection and scoring stages are built from. All arithmetic is double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tcds {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between arguments.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A descriptor with zero norm reached a cosine.
class DegenerateDescriptor : public Error {
 public:
  using Error::Error;
};

/// A class pool too small for intra-class similarity (fewer than 2 descriptors).
class DegenerateClass : public Error {
 public:
  using Error::Error;
};

/// Out-of-range configuration value (K fraction, lambda, generator params...).
class InvalidConfig : public Error {
 public:
  using Error::Error;
};

/// Not enough classes or images to sample the requested episode.
class PoolExhausted : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf appeared in a loss or gradient.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// LocalDescriptor
// ---------------------------------------------------------------------------

/// One d-dimensional feature vector taken from a single spatial position.
///
/// Construction enforces d >= 1 and finite entries. A zero vector is a valid
/// value (a class mean can cancel to zero); it is rejected by `cosine` and by
/// `require_nonzero`, which ingestion paths call.
class LocalDescriptor {
 public:
  LocalDescriptor() = default;

  explicit LocalDescriptor(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw InvalidInput("descriptor dimension must be >= 1");
    for (double v : values_) {
      if (!std::isfinite(v)) throw InvalidInput("descriptor entries must be finite");
    }
  }

  LocalDescriptor(std::initializer_list<double> values)
      : LocalDescriptor(std::vector<double>(values)) {}

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  bool operator==(const LocalDescriptor&) const = default;

 private:
  std::vector<double> values_;
};

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

inline double norm(const LocalDescriptor& a) noexcept { return norm(a.values()); }

/// Throws DegenerateDescriptor when `a` has zero norm. `where` is appended to
/// the message so ingestion can report the (class, image, index) location.
inline void require_nonzero(const LocalDescriptor& a, const std::string& where = {}) {
  if (norm(a) == 0.0) {
    throw DegenerateDescriptor("zero-norm descriptor" + (where.empty() ? "" : " at " + where));
  }
}

/// Unit-length copy of `a`. Zero vectors are returned unchanged.
inline std::vector<double> normalized(std::span<const double> a) {
  std::vector<double> out(a.begin(), a.end());
  const double n = norm(a);
  if (n > 0.0) {
    for (double& v : out) v /= n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// DescriptorSet / Episode
// ---------------------------------------------------------------------------

/// The descriptors of `image_count` images, `per_image` descriptors each,
/// stored image-major in input order.
class DescriptorSet {
 public:
  DescriptorSet() = default;

  DescriptorSet(std::vector<LocalDescriptor> descriptors, std::size_t image_count,
                std::size_t per_image)
      : descriptors_(std::move(descriptors)), image_count_(image_count), per_image_(per_image) {
    if (image_count_ == 0 || per_image_ == 0) {
      throw InvalidInput("descriptor set needs image_count >= 1 and m >= 1");
    }
    if (descriptors_.size() != image_count_ * per_image_) {
      throw InvalidInput("descriptor set holds " + std::to_string(descriptors_.size()) +
                         " descriptors, expected image_count * m = " +
                         std::to_string(image_count_ * per_image_));
    }
    const std::size_t d = descriptors_.front().dim();
    for (const auto& desc : descriptors_) {
      if (desc.dim() != d) throw InvalidInput("descriptor set mixes dimensions");
    }
  }

  std::size_t dim() const noexcept { return descriptors_.empty() ? 0 : descriptors_.front().dim(); }
  std::size_t image_count() const noexcept { return image_count_; }
  std::size_t per_image() const noexcept { return per_image_; }
  std::size_t size() const noexcept { return descriptors_.size(); }

  const std::vector<LocalDescriptor>& descriptors() const noexcept { return descriptors_; }
  const LocalDescriptor& operator[](std::size_t i) const noexcept { return descriptors_[i]; }

  std::span<const LocalDescriptor> image(std::size_t i) const noexcept {
    return std::span<const LocalDescriptor>(descriptors_).subspan(i * per_image_, per_image_);
  }

  /// A single-image set holding copies of image `i`.
  DescriptorSet image_set(std::size_t i) const {
    auto img = image(i);
    return DescriptorSet({img.begin(), img.end()}, 1, per_image_);
  }

 private:
  std::vector<LocalDescriptor> descriptors_;
  std::size_t image_count_ = 0;
  std::size_t per_image_ = 0;
};

/// Builds a set by concatenating single- or multi-image sets with matching m.
inline DescriptorSet concat_images(std::span<const DescriptorSet> parts) {
  if (parts.empty()) throw InvalidInput("cannot concatenate zero descriptor sets");
  std::vector<LocalDescriptor> all;
  std::size_t images = 0;
  const std::size_t m = parts.front().per_image();
  for (const auto& p : parts) {
    if (p.per_image() != m) throw InvalidInput("concatenated sets disagree on m");
    all.insert(all.end(), p.descriptors().begin(), p.descriptors().end());
    images += p.image_count();
  }
  return DescriptorSet(std::move(all), images, m);
}

struct Query {
  DescriptorSet image;  // exactly one image
  std::size_t label = 0;  // 0-based class index within the episode
};

/// An n-way k-shot task. Class indices are 0-based.
struct Episode {
  std::size_t way = 0;
  std::size_t shot = 0;
  std::vector<DescriptorSet> support;
  std::vector<Query> queries;
  /// Pool class index of each episode class; empty for hand-built episodes.
  std::vector<std::size_t> source_classes;

  std::size_t dim() const noexcept { return support.empty() ? 0 : support.front().dim(); }
  std::size_t per_image() const noexcept {
    return support.empty() ? 0 : support.front().per_image();
  }

  void validate() const {
    if (way == 0 || shot == 0) throw InvalidInput("episode needs way >= 1 and shot >= 1");
    if (support.size() != way) throw InvalidInput("episode must have exactly `way` support sets");
    const std::size_t d = dim();
    const std::size_t m = per_image();
    for (const auto& s : support) {
      if (s.image_count() != shot) throw InvalidInput("support set image count != shot");
      if (s.dim() != d || s.per_image() != m) throw InvalidInput("support sets disagree on d or m");
    }
    for (const auto& q : queries) {
      if (q.image.image_count() != 1) throw InvalidInput("query set must hold one image");
      if (q.image.dim() != d || q.image.per_image() != m) {
        throw InvalidInput("query disagrees with support on d or m");
      }
      if (q.label >= way) throw InvalidInput("query label out of range");
    }
  }
};

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// Cosine from precomputed norms. Same expression as `cosine`, so the two agree
/// bit-for-bit.
inline double cosine_with_norms(std::span<const double> a, double norm_a,
                                std::span<const double> b, double norm_b) noexcept {
  return std::clamp(dot(a, b) / (norm_a * norm_b), -1.0, 1.0);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw InvalidInput("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                       std::to_string(b.size()) + ")");
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateDescriptor("cosine: zero-norm descriptor");
  return cosine_with_norms(a, na, b, nb);
}

inline double cosine(const LocalDescriptor& a, const LocalDescriptor& b) {
  return cosine(a.values(), b.values());
}

/// Numerically stable logistic function.
inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// exp-normalize with max subtraction.
inline std::vector<double> softmax(std::span<const double> scores) {
  if (scores.empty()) throw InvalidInput("softmax: empty input");
  const double hi = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - hi);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

/// log(sum(exp(x))), computed around the maximum with log1p for the tail.
inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) throw InvalidInput("log_sum_exp: empty input");
  const auto top = std::max_element(x.begin(), x.end());
  double tail = 0.0;
  for (auto it = x.begin(); it != x.end(); ++it) {
    if (it != top) tail += std::exp(*it - *top);
  }
  return *top + std::log1p(tail);
}

/// -log softmax(x)[label], written as (max - x[label]) + log1p(tail) so that a
/// confidently correct prediction keeps its tiny positive loss instead of
/// cancelling to zero.
inline double cross_entropy(std::span<const double> x, std::size_t label) {
  if (label >= x.size()) throw InvalidInput("cross_entropy: label out of range");
  const auto top = std::max_element(x.begin(), x.end());
  double tail = 0.0;
  for (auto it = x.begin(); it != x.end(); ++it) {
    if (it != top) tail += std::exp(*it - *top);
  }
  return (*top - x[label]) + std::log1p(tail);
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> x) noexcept {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] > x[best]) best = i;
  }
  return best;
}

/// Collapses k images to one by averaging the descriptors at each spatial
/// index. The result may contain zero vectors; they surface as
/// DegenerateDescriptor at the first cosine.
inline DescriptorSet mean_descriptorwise(const DescriptorSet& set) {
  const std::size_t k = set.image_count();
  const std::size_t m = set.per_image();
  const std::size_t d = set.dim();
  if (k == 1) return set;
  std::vector<LocalDescriptor> means;
  means.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> acc(d, 0.0);
    for (std::size_t img = 0; img < k; ++img) {
      const auto v = set[img * m + j].values();
      for (std::size_t t = 0; t < d; ++t) acc[t] += v[t];
    }
    for (double& v : acc) v /= static_cast<double>(k);
    means.emplace_back(std::move(acc));
  }
  return DescriptorSet(std::move(means), 1, m);
}

}  // namespace tcds
