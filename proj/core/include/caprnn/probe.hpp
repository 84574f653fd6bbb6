#pragma once

// Visual-information retention probe.
//
// How much does the vector feeding the output layer still depend on the
// image after t words of the caption have been consumed? For each qualifying
// (image, caption) pair the probe walks the caption twice — once with the
// true image, once with a randomly drawn replacement image from the same
// split — and records the mean absolute difference between the two
// multimodal vectors at every prefix length 0..caption_len (position 0 is
// the state right after the START token). Each pair is probed against
// `repetitions` independently drawn replacements; the curve averages over
// pairs and repetitions.
//
// For merge models the state half of the multimodal vector never sees the
// image and the image half never sees the words, so the distance is exactly
// constant across positions; inject models mix the two and drift.
//
// Replacements are drawn uniformly from the split's images excluding any
// image bitwise-identical to the original.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "caprnn/error.hpp"
#include "caprnn/model.hpp"
#include "caprnn/perplexity.hpp"
#include "caprnn/rng.hpp"

namespace caprnn {

/// Mean over dimensions of |a_i - b_i|.
template <class T>
double mean_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size())
    throw DimensionError("mean_abs_diff needs two rank-1 tensors of equal "
                         "length (got sizes " +
                         std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + ")");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    total += std::abs(static_cast<double>(a.value(i)) -
                      static_cast<double>(b.value(i)));
  return total / static_cast<double>(a.size());
}

struct RetentionCurve {
  std::vector<double> distances;  // positions 0..caption_len
  std::size_t caption_len = 0;
  std::size_t repetitions = 0;
  std::uint64_t seed = 0;
};

/// Distances between the multimodal vectors under `original` and
/// `replacement` at every prefix length 0..caption.size().
template <class T>
std::vector<double> retention_distances(const CaptionModelT<T>& model,
                                        const TensorT<T>& original,
                                        const TensorT<T>& replacement,
                                        std::span<const TokenId> caption) {
  SequenceRunnerT<T> a(model, nullptr, original);
  SequenceRunnerT<T> b(model, nullptr, replacement);
  TensorT<T> sa = a.advance(a.initial_state(), kStartId);
  TensorT<T> sb = b.advance(b.initial_state(), kStartId);
  std::vector<double> distances;
  distances.reserve(caption.size() + 1);
  distances.push_back(mean_abs_diff(a.multimodal(sa), b.multimodal(sb)));
  for (const TokenId id : caption) {
    sa = a.advance(sa, id);
    sb = b.advance(sb, id);
    distances.push_back(mean_abs_diff(a.multimodal(sa), b.multimodal(sb)));
  }
  return distances;
}

inline RetentionCurve retention_probe(const CaptionModel& model,
                                      std::span<const CaptionExample> split,
                                      std::size_t caption_len = 20,
                                      std::size_t repetitions = 100,
                                      std::uint64_t seed = 0) {
  if (repetitions == 0) throw UsageError("repetitions must be positive");

  std::vector<std::size_t> qualifying;
  std::set<std::size_t> lengths_seen;
  for (std::size_t i = 0; i < split.size(); ++i) {
    lengths_seen.insert(split[i].caption.size());
    if (split[i].caption.size() == caption_len) qualifying.push_back(i);
  }
  if (qualifying.empty()) {
    std::string available;
    for (std::size_t len : lengths_seen)
      available += (available.empty() ? "" : ", ") + std::to_string(len);
    throw UsageError("no caption of length " + std::to_string(caption_len) +
                     " in the split; available lengths: {" + available +
                     "} — try one of those");
  }

  Rng draw(seed);
  RetentionCurve curve;
  curve.caption_len = caption_len;
  curve.repetitions = repetitions;
  curve.seed = seed;
  curve.distances.assign(caption_len + 1, 0.0);

  const auto same_image = [](const Tensor& x, const Tensor& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x.value(i) != y.value(i)) return false;
    return true;
  };

  std::size_t samples = 0;
  for (const std::size_t q : qualifying) {
    const CaptionExample& example = split[q];
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < split.size(); ++j)
      if (!same_image(split[j].image, example.image)) candidates.push_back(j);
    if (candidates.empty())
      throw UsageError(
          "the split needs at least two distinct images for the probe");
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      const Tensor& replacement =
          split[candidates[draw.index(candidates.size())]].image;
      const auto distances = retention_distances<float>(
          model, example.image, replacement, example.caption);
      for (std::size_t t = 0; t <= caption_len; ++t)
        curve.distances[t] += distances[t];
      ++samples;
    }
  }
  for (double& d : curve.distances) d /= static_cast<double>(samples);
  return curve;
}

/// CSV with a "position,mean_distance" header, one row per position.
inline std::string retention_curve_csv(const RetentionCurve& curve) {
  std::ostringstream out;
  out << "position,mean_distance\n";
  for (std::size_t t = 0; t < curve.distances.size(); ++t) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", t, curve.distances[t]);
    out << buf;
  }
  return out.str();
}

}  // namespace caprnn
