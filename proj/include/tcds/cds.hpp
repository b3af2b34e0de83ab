#pragma once

// Contrastive discriminative scoring of support descriptors and per-class
// top-K selection.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tcds/core.hpp"

namespace tcds {

enum class SupportMode { raw, class_mean };

inline const char* to_string(SupportMode mode) noexcept {
  return mode == SupportMode::raw ? "raw" : "class-mean";
}

inline SupportMode parse_support_mode(const std::string& s) {
  if (s == "raw") return SupportMode::raw;
  if (s == "class-mean") return SupportMode::class_mean;
  throw InvalidConfig("unknown mode '" + s + "' (expected raw or class-mean)");
}

/// Per-class descriptor pools that selection runs over. In raw mode a class
/// holds all k*m support descriptors; in class-mean mode it holds the m
/// position-wise means.
class SupportPool {
 public:
  SupportPool() = default;

  SupportPool(std::vector<std::vector<LocalDescriptor>> classes, SupportMode mode)
      : classes_(std::move(classes)), mode_(mode) {
    if (classes_.size() < 2) throw InvalidInput("support pool needs at least 2 classes");
    const std::size_t d = classes_.front().empty() ? 0 : classes_.front().front().dim();
    for (const auto& cls : classes_) {
      if (cls.empty()) throw InvalidInput("support pool class is empty");
      for (const auto& desc : cls) {
        if (desc.dim() != d) throw InvalidInput("support pool mixes dimensions");
      }
    }
  }

  static SupportPool from_episode(const Episode& episode, SupportMode mode) {
    std::vector<std::vector<LocalDescriptor>> classes;
    classes.reserve(episode.support.size());
    for (const auto& set : episode.support) {
      const DescriptorSet& src = mode == SupportMode::raw ? set : mean_descriptorwise(set);
      classes.emplace_back(src.descriptors().begin(), src.descriptors().end());
    }
    return SupportPool(std::move(classes), mode);
  }

  std::size_t num_classes() const noexcept { return classes_.size(); }
  std::size_t class_size(std::size_t c) const noexcept { return classes_[c].size(); }
  std::size_t dim() const noexcept { return classes_.front().front().dim(); }
  SupportMode mode() const noexcept { return mode_; }
  const std::vector<LocalDescriptor>& operator[](std::size_t c) const noexcept {
    return classes_[c];
  }

  std::size_t total_size() const noexcept {
    std::size_t n = 0;
    for (const auto& c : classes_) n += c.size();
    return n;
  }

 private:
  std::vector<std::vector<LocalDescriptor>> classes_;
  SupportMode mode_ = SupportMode::raw;
};

/// Similarity of support descriptor (c, i) to the rest of its own class,
/// averaged over the P_c - 1 other descriptors.
inline double intra_similarity(std::size_t c, std::size_t i, const SupportPool& pool) {
  const auto& cls = pool[c];
  if (cls.size() < 2) {
    throw DegenerateClass("class " + std::to_string(c) + " has fewer than 2 descriptors");
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < cls.size(); ++j) {
    if (j != i) acc += cosine(cls[i], cls[j]);
  }
  return acc / static_cast<double>(cls.size() - 1);
}

/// Similarity of support descriptor (c, i) to every descriptor of every other
/// class, averaged over their total count.
inline double inter_similarity(std::size_t c, std::size_t i, const SupportPool& pool) {
  const auto& self = pool[c][i];
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t other = 0; other < pool.num_classes(); ++other) {
    if (other == c) continue;
    for (const auto& desc : pool[other]) acc += cosine(self, desc);
    count += pool[other].size();
  }
  return acc / static_cast<double>(count);
}

/// Intermediate and final scores for one class, indexed like the class pool.
struct ClassScores {
  std::vector<double> sim_intra;
  std::vector<double> sim_inter;
  std::vector<double> d_intra;  // softmax of sim_intra over the class
  std::vector<double> d_inter;  // softmax of sim_inter over the class
  std::vector<double> cds;      // sigmoid(d_intra / d_inter)
};

namespace detail {

/// All pairwise cosines of a pool, flattened in class-major order. Norms are
/// computed once; the result matches `cosine` bit-for-bit.
class CosineTable {
 public:
  explicit CosineTable(const SupportPool& pool) {
    offsets_.push_back(0);
    for (std::size_t c = 0; c < pool.num_classes(); ++c) {
      for (const auto& desc : pool[c]) flat_.push_back(&desc);
      offsets_.push_back(flat_.size());
    }
    const std::size_t n = flat_.size();
    std::vector<double> norms(n);
    for (std::size_t a = 0; a < n; ++a) {
      norms[a] = norm(*flat_[a]);
      if (norms[a] == 0.0) throw DegenerateDescriptor("cosine: zero-norm descriptor");
    }
    table_.assign(n * n, 1.0);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        const double v =
            cosine_with_norms(flat_[a]->values(), norms[a], flat_[b]->values(), norms[b]);
        table_[a * n + b] = v;
        table_[b * n + a] = v;
      }
    }
  }

  double operator()(std::size_t a, std::size_t b) const noexcept {
    return table_[a * flat_.size() + b];
  }
  std::size_t offset(std::size_t c) const noexcept { return offsets_[c]; }
  std::size_t size() const noexcept { return flat_.size(); }

 private:
  std::vector<const LocalDescriptor*> flat_;
  std::vector<std::size_t> offsets_;
  std::vector<double> table_;
};

}  // namespace detail

/// Scores every support descriptor. Softmax normalization runs over the
/// descriptors of one class, separately for the intra and inter vectors.
inline std::vector<ClassScores> contrastive_scores(const SupportPool& pool) {
  const std::size_t n = pool.num_classes();
  for (std::size_t c = 0; c < n; ++c) {
    if (pool.class_size(c) < 2) {
      throw DegenerateClass("class " + std::to_string(c) + " has fewer than 2 descriptors");
    }
  }
  const detail::CosineTable cos(pool);
  const std::size_t total = cos.size();

  std::vector<ClassScores> out(n);
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t begin = cos.offset(c);
    const std::size_t end = cos.offset(c + 1);
    const std::size_t size = end - begin;
    const double intra_count = static_cast<double>(size - 1);
    const double inter_count = static_cast<double>(total - size);

    ClassScores& s = out[c];
    s.sim_intra.resize(size);
    s.sim_inter.resize(size);
    for (std::size_t i = 0; i < size; ++i) {
      const std::size_t a = begin + i;
      double intra = 0.0;
      for (std::size_t b = begin; b < end; ++b) {
        if (b != a) intra += cos(a, b);
      }
      double inter = 0.0;
      for (std::size_t b = 0; b < total; ++b) {
        if (b < begin || b >= end) inter += cos(a, b);
      }
      s.sim_intra[i] = intra / intra_count;
      s.sim_inter[i] = inter / inter_count;
    }
    s.d_intra = softmax(s.sim_intra);
    s.d_inter = softmax(s.sim_inter);
    s.cds.resize(size);
    for (std::size_t i = 0; i < size; ++i) s.cds[i] = sigmoid(s.d_intra[i] / s.d_inter[i]);
  }
  return out;
}

/// Selected descriptors of one class, sorted by score descending.
struct ClassSelection {
  std::vector<std::size_t> indices;  // into the class pool
  std::vector<double> scores;        // CDS of each selected descriptor
};

struct CdsSelection {
  std::vector<ClassSelection> classes;
  double k_fraction = 1.0;

  std::size_t num_classes() const noexcept { return classes.size(); }
};

/// max(1, round(K * pool_size)) with round-half-away-from-zero.
inline std::size_t selection_size(double k_fraction, std::size_t pool_size) {
  if (!(k_fraction > 0.0 && k_fraction <= 1.0)) {
    throw InvalidConfig("K fraction must lie in (0, 1], got " + std::to_string(k_fraction));
  }
  const auto r = static_cast<std::size_t>(std::round(k_fraction * static_cast<double>(pool_size)));
  return std::clamp<std::size_t>(r, 1, pool_size);
}

/// Top-K selection from already computed scores. Ties go to the lower index.
inline CdsSelection select_top_k(const std::vector<ClassScores>& scores, double k_fraction) {
  CdsSelection sel;
  sel.k_fraction = k_fraction;
  sel.classes.reserve(scores.size());
  for (const auto& s : scores) {
    const std::size_t keep = selection_size(k_fraction, s.cds.size());
    std::vector<std::size_t> order(s.cds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s.cds[a] > s.cds[b]; });
    ClassSelection cls;
    cls.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
    for (std::size_t idx : cls.indices) cls.scores.push_back(s.cds[idx]);
    sel.classes.push_back(std::move(cls));
  }
  return sel;
}

inline CdsSelection select_top_k(const SupportPool& pool, double k_fraction) {
  selection_size(k_fraction, 1);  // validate K before the quadratic work
  return select_top_k(contrastive_scores(pool), k_fraction);
}

}  // namespace tcds
