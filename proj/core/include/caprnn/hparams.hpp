#pragma once

// The tunable hyperparameter space.
//
// Twelve axes, each with a small finite range (eleven for init-inject,
// whose initial RNN state is structurally the projected image):
//
//   init_method        normal | xavier
//   init_range         0.1 | 0.01
//   layer_size         64 | 128 | 256 | 512   (embedding = projection = state)
//   normalize_image    yes | no
//   image_activation   none | relu
//   rnn_init_state     zeros | learnable      (absent for init-inject)
//   l2_enabled         off | on (1e-8)
//   dropout_image      off | on               (rate 0.5 everywhere)
//   dropout_image_proj off | on
//   dropout_embedding  off | on
//   dropout_rnn_output off | on
//   minibatch_size     32 | 64 | 128
//
// Points are addressable by a mixed-radix index (0..size-1), which gives
// uniform sampling, canonical ordering, and cheap single-axis neighbor
// enumeration. The Hamming distance between two points is the number of
// axes on which they differ (each dropout site counts as its own axis).

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "caprnn/model.hpp"
#include "caprnn/rng.hpp"

namespace caprnn {

struct HparamPoint {
  InitMethod init_method = InitMethod::normal;
  double init_range = 0.1;
  std::size_t layer_size = 64;
  bool normalize_image = true;
  Activation image_activation = Activation::none;
  RnnInitState rnn_init_state = RnnInitState::zeros;  // `image` for init-inject
  bool l2_enabled = false;
  DropoutSites dropout_sites;
  std::size_t minibatch_size = 32;

  bool operator==(const HparamPoint&) const = default;
};

class HparamSpace {
 public:
  explicit HparamSpace(ArchitectureKind kind);

  ArchitectureKind kind() const { return kind_; }
  std::size_t n_axes() const;         // 12, or 11 for init-inject
  std::size_t size() const;           // 12288, or 6144 for init-inject
  std::size_t axis_size(std::size_t axis) const;
  std::string axis_name(std::size_t axis) const;

  /// Mixed-radix decode/encode; decode(i) for i in [0, size()) enumerates
  /// the space without repetition.
  HparamPoint decode(std::size_t index) const;
  std::size_t encode(const HparamPoint& point) const;  // ConfigError if off-grid

  /// Value index of `point` on one axis, and a copy with that axis changed.
  std::size_t axis_value(const HparamPoint& point, std::size_t axis) const;
  HparamPoint with_axis_value(HparamPoint point, std::size_t axis,
                              std::size_t value) const;

  /// All points reachable by changing exactly one axis.
  std::vector<HparamPoint> neighbors(const HparamPoint& point) const;

  /// Uniform point; n distinct uniform points (clamped to size() with a
  /// warning message if the space is smaller, when `warning` is non-null).
  HparamPoint sample(Rng& rng) const;
  std::vector<HparamPoint> sample_unique(std::size_t n, Rng& rng,
                                         std::string* warning = nullptr) const;

 private:
  ArchitectureKind kind_;
};

/// Number of axes on which two points differ.
std::size_t hamming_distance(const HparamSpace& space, const HparamPoint& a,
                             const HparamPoint& b);

/// Concrete model configuration for a point (epochs/beam are set by the
/// evaluation protocol, not the point).
ModelConfig hparam_model_config(const HparamPoint& point,
                                ArchitectureKind kind, std::size_t vocab_size,
                                std::size_t image_dim);

/// Canonical JSON object text (fixed key order) and its strict parse.
std::string hparam_to_json(const HparamPoint& point);
HparamPoint hparam_from_json(const std::string& text);

}  // namespace caprnn
