#include "caprnn/hparams.hpp"

#include <algorithm>
#include <array>
#include <set>

#include <json.hpp>

#include "caprnn/error.hpp"

namespace caprnn {

namespace {

constexpr std::array<std::size_t, 4> kLayerSizes = {64, 128, 256, 512};
constexpr std::array<std::size_t, 3> kMinibatchSizes = {32, 64, 128};
constexpr std::array<double, 2> kInitRanges = {0.1, 0.01};

// Axis order: the rnn_init_state axis (index 5) is skipped for init-inject.
enum Axis : std::size_t {
  kInitMethod = 0,
  kInitRange,
  kLayerSize,
  kNormalizeImage,
  kImageActivation,
  kRnnInitState,
  kL2,
  kDropImage,
  kDropImageProj,
  kDropEmbedding,
  kDropRnnOutput,
  kMinibatch,
  kAxisCount
};

template <class T, std::size_t N>
std::size_t index_of(const std::array<T, N>& values, T value,
                     const char* what) {
  for (std::size_t i = 0; i < N; ++i)
    if (values[i] == value) return i;
  throw ConfigError(std::string(what) + " is off the hyperparameter grid");
}

}  // namespace

HparamSpace::HparamSpace(ArchitectureKind kind) : kind_(kind) {}

std::size_t HparamSpace::n_axes() const {
  return kind_ == ArchitectureKind::init_inject ? kAxisCount - 1 : kAxisCount;
}

std::size_t HparamSpace::size() const {
  std::size_t total = 1;
  for (std::size_t axis = 0; axis < n_axes(); ++axis) total *= axis_size(axis);
  return total;
}

std::size_t HparamSpace::axis_size(std::size_t axis) const {
  if (axis >= n_axes())
    throw IndexError("axis " + std::to_string(axis) + " out of range");
  // Map the dense axis number onto the full enum (init-inject skips
  // kRnnInitState).
  const std::size_t real =
      (kind_ == ArchitectureKind::init_inject && axis >= kRnnInitState)
          ? axis + 1
          : axis;
  switch (real) {
    case kLayerSize: return kLayerSizes.size();
    case kMinibatch: return kMinibatchSizes.size();
    default: return 2;
  }
}

std::string HparamSpace::axis_name(std::size_t axis) const {
  if (axis >= n_axes())
    throw IndexError("axis " + std::to_string(axis) + " out of range");
  const std::size_t real =
      (kind_ == ArchitectureKind::init_inject && axis >= kRnnInitState)
          ? axis + 1
          : axis;
  switch (real) {
    case kInitMethod: return "init_method";
    case kInitRange: return "init_range";
    case kLayerSize: return "layer_size";
    case kNormalizeImage: return "normalize_image";
    case kImageActivation: return "image_activation";
    case kRnnInitState: return "rnn_init_state";
    case kL2: return "l2_enabled";
    case kDropImage: return "dropout_image";
    case kDropImageProj: return "dropout_image_proj";
    case kDropEmbedding: return "dropout_embedding";
    case kDropRnnOutput: return "dropout_rnn_output";
    case kMinibatch: return "minibatch_size";
  }
  throw IndexError("axis " + std::to_string(axis) + " out of range");
}

std::size_t HparamSpace::axis_value(const HparamPoint& p,
                                    std::size_t axis) const {
  if (axis >= n_axes())
    throw IndexError("axis " + std::to_string(axis) + " out of range");
  const std::size_t real =
      (kind_ == ArchitectureKind::init_inject && axis >= kRnnInitState)
          ? axis + 1
          : axis;
  switch (real) {
    case kInitMethod: return p.init_method == InitMethod::normal ? 0 : 1;
    case kInitRange: return index_of(kInitRanges, p.init_range, "init_range");
    case kLayerSize: return index_of(kLayerSizes, p.layer_size, "layer_size");
    case kNormalizeImage: return p.normalize_image ? 0 : 1;
    case kImageActivation:
      if (p.image_activation == Activation::none) return 0;
      if (p.image_activation == Activation::relu) return 1;
      throw ConfigError("image_activation is off the hyperparameter grid");
    case kRnnInitState:
      if (p.rnn_init_state == RnnInitState::zeros) return 0;
      if (p.rnn_init_state == RnnInitState::learnable) return 1;
      throw ConfigError("rnn_init_state is off the hyperparameter grid");
    case kL2: return p.l2_enabled ? 1 : 0;
    case kDropImage: return p.dropout_sites.image ? 1 : 0;
    case kDropImageProj: return p.dropout_sites.image_proj ? 1 : 0;
    case kDropEmbedding: return p.dropout_sites.embedding ? 1 : 0;
    case kDropRnnOutput: return p.dropout_sites.rnn_output ? 1 : 0;
    case kMinibatch:
      return index_of(kMinibatchSizes, p.minibatch_size, "minibatch_size");
  }
  throw IndexError("axis " + std::to_string(axis) + " out of range");
}

HparamPoint HparamSpace::with_axis_value(HparamPoint p, std::size_t axis,
                                         std::size_t value) const {
  if (axis >= n_axes())
    throw IndexError("axis " + std::to_string(axis) + " out of range");
  if (value >= axis_size(axis))
    throw IndexError("value " + std::to_string(value) + " out of range for " +
                     axis_name(axis));
  const std::size_t real =
      (kind_ == ArchitectureKind::init_inject && axis >= kRnnInitState)
          ? axis + 1
          : axis;
  switch (real) {
    case kInitMethod:
      p.init_method =
          value == 0 ? InitMethod::normal : InitMethod::xavier_normal;
      break;
    case kInitRange: p.init_range = kInitRanges[value]; break;
    case kLayerSize: p.layer_size = kLayerSizes[value]; break;
    case kNormalizeImage: p.normalize_image = value == 0; break;
    case kImageActivation:
      p.image_activation = value == 0 ? Activation::none : Activation::relu;
      break;
    case kRnnInitState:
      p.rnn_init_state =
          value == 0 ? RnnInitState::zeros : RnnInitState::learnable;
      break;
    case kL2: p.l2_enabled = value == 1; break;
    case kDropImage: p.dropout_sites.image = value == 1; break;
    case kDropImageProj: p.dropout_sites.image_proj = value == 1; break;
    case kDropEmbedding: p.dropout_sites.embedding = value == 1; break;
    case kDropRnnOutput: p.dropout_sites.rnn_output = value == 1; break;
    case kMinibatch: p.minibatch_size = kMinibatchSizes[value]; break;
  }
  return p;
}

HparamPoint HparamSpace::decode(std::size_t index) const {
  if (index >= size())
    throw IndexError("point index " + std::to_string(index) +
                     " out of range (space size " + std::to_string(size()) +
                     ")");
  HparamPoint p;
  if (kind_ == ArchitectureKind::init_inject)
    p.rnn_init_state = RnnInitState::image;
  for (std::size_t axis = 0; axis < n_axes(); ++axis) {
    p = with_axis_value(p, axis, index % axis_size(axis));
    index /= axis_size(axis);
  }
  return p;
}

std::size_t HparamSpace::encode(const HparamPoint& p) const {
  if (kind_ == ArchitectureKind::init_inject &&
      p.rnn_init_state != RnnInitState::image)
    throw ConfigError("init-inject points must have rnn_init_state = image");
  std::size_t index = 0;
  for (std::size_t axis = n_axes(); axis-- > 0;)
    index = index * axis_size(axis) + axis_value(p, axis);
  return index;
}

std::vector<HparamPoint> HparamSpace::neighbors(const HparamPoint& p) const {
  std::vector<HparamPoint> out;
  for (std::size_t axis = 0; axis < n_axes(); ++axis) {
    const std::size_t current = axis_value(p, axis);
    for (std::size_t v = 0; v < axis_size(axis); ++v)
      if (v != current) out.push_back(with_axis_value(p, axis, v));
  }
  return out;
}

HparamPoint HparamSpace::sample(Rng& rng) const {
  return decode(rng.index(size()));
}

std::vector<HparamPoint> HparamSpace::sample_unique(
    std::size_t n, Rng& rng, std::string* warning) const {
  if (warning) warning->clear();
  if (n > size()) {
    if (warning)
      *warning = "requested " + std::to_string(n) +
                 " unique combinations but the space has only " +
                 std::to_string(size()) + "; using all of them";
    n = size();
  }
  std::set<std::size_t> seen;
  std::vector<HparamPoint> out;
  while (out.size() < n) {
    const std::size_t index = rng.index(size());
    if (seen.insert(index).second) out.push_back(decode(index));
  }
  return out;
}

std::size_t hamming_distance(const HparamSpace& space, const HparamPoint& a,
                             const HparamPoint& b) {
  std::size_t distance = 0;
  for (std::size_t axis = 0; axis < space.n_axes(); ++axis)
    if (space.axis_value(a, axis) != space.axis_value(b, axis)) ++distance;
  return distance;
}

ModelConfig hparam_model_config(const HparamPoint& point,
                                ArchitectureKind kind, std::size_t vocab_size,
                                std::size_t image_dim) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.layer_size = point.layer_size;
  cfg.vocab_size = vocab_size;
  cfg.image_dim = image_dim;
  cfg.init_method = point.init_method;
  cfg.init_range = point.init_range;
  cfg.normalize_image = point.normalize_image;
  cfg.image_activation = point.image_activation;
  if (kind == ArchitectureKind::init_inject &&
      point.rnn_init_state != RnnInitState::image) {
    throw ConfigError(
        "init-inject requires rnn_init_state=image; the point is off the "
        "hyperparameter grid for this architecture");
  }
  cfg.rnn_init_state = point.rnn_init_state;
  cfg.l2_enabled = point.l2_enabled;
  cfg.dropout_sites = point.dropout_sites;
  cfg.minibatch_size = point.minibatch_size;
  cfg.validate();
  return cfg;
}

std::string hparam_to_json(const HparamPoint& p) {
  nlohmann::ordered_json obj = {
      {"init_method", to_string(p.init_method)},
      {"init_range", p.init_range},
      {"layer_size", p.layer_size},
      {"normalize_image", p.normalize_image},
      {"image_activation", to_string(p.image_activation)},
      {"rnn_init_state", to_string(p.rnn_init_state)},
      {"l2_enabled", p.l2_enabled},
      {"dropout_image", p.dropout_sites.image},
      {"dropout_image_proj", p.dropout_sites.image_proj},
      {"dropout_embedding", p.dropout_sites.embedding},
      {"dropout_rnn_output", p.dropout_sites.rnn_output},
      {"minibatch_size", p.minibatch_size},
  };
  return obj.dump();
}

HparamPoint hparam_from_json(const std::string& text) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("hyperparameter JSON does not parse: ") +
                      e.what());
  }
  try {
    HparamPoint p;
    p.init_method =
        parse_init_method(obj.at("init_method").get<std::string>());
    p.init_range = obj.at("init_range").get<double>();
    p.layer_size = obj.at("layer_size").get<std::size_t>();
    p.normalize_image = obj.at("normalize_image").get<bool>();
    p.image_activation =
        parse_activation(obj.at("image_activation").get<std::string>());
    p.rnn_init_state =
        parse_rnn_init_state(obj.at("rnn_init_state").get<std::string>());
    p.l2_enabled = obj.at("l2_enabled").get<bool>();
    p.dropout_sites.image = obj.at("dropout_image").get<bool>();
    p.dropout_sites.image_proj = obj.at("dropout_image_proj").get<bool>();
    p.dropout_sites.embedding = obj.at("dropout_embedding").get<bool>();
    p.dropout_sites.rnn_output = obj.at("dropout_rnn_output").get<bool>();
    p.minibatch_size = obj.at("minibatch_size").get<std::size_t>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("hyperparameter JSON is missing a key: ") +
                      e.what());
  }
}

}  // namespace caprnn
