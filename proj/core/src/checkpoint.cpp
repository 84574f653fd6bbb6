#include "caprnn/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace caprnn {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'C', 'M', 'O', 'D', 'E', 'L', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  Reader(const std::string& data, const std::string& path)
      : data_(data), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
      v = (v << 8) | static_cast<unsigned char>(data_[pos_ + i]);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size())
      throw LoadError("checkpoint '" + path_ + "' is truncated");
  }
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

json config_to_json_obj(const ModelConfig& cfg) {
  return json{{"architecture", to_string(cfg.kind)},
              {"layer_size", cfg.layer_size},
              {"vocab_size", cfg.vocab_size},
              {"image_dim", cfg.image_dim},
              {"init_method", to_string(cfg.init_method)},
              {"init_range", cfg.init_range},
              {"normalize_image", cfg.normalize_image},
              {"image_activation", to_string(cfg.image_activation)},
              {"rnn_init_state", to_string(cfg.rnn_init_state)},
              {"l2_enabled", cfg.l2_enabled},
              {"dropout_image", cfg.dropout_sites.image},
              {"dropout_image_proj", cfg.dropout_sites.image_proj},
              {"dropout_embedding", cfg.dropout_sites.embedding},
              {"dropout_rnn_output", cfg.dropout_sites.rnn_output},
              {"minibatch_size", cfg.minibatch_size},
              {"max_epochs", cfg.max_epochs},
              {"beam_width", cfg.beam_width}};
}

ModelConfig config_from_json_obj(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::vector<std::string> known = {
      "architecture",    "layer_size",        "vocab_size",
      "image_dim",       "init_method",       "init_range",
      "normalize_image", "image_activation",  "rnn_init_state",
      "l2_enabled",      "dropout_image",     "dropout_image_proj",
      "dropout_embedding", "dropout_rnn_output", "minibatch_size",
      "max_epochs",      "beam_width"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown model config key '" + key + "'");
  }
  ModelConfig cfg;
  try {
    cfg.kind = parse_architecture(j.at("architecture").get<std::string>());
    cfg.layer_size = j.at("layer_size").get<std::size_t>();
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.image_dim = j.at("image_dim").get<std::size_t>();
    cfg.init_method = parse_init_method(j.at("init_method").get<std::string>());
    cfg.init_range = j.at("init_range").get<double>();
    cfg.normalize_image = j.at("normalize_image").get<bool>();
    cfg.image_activation =
        parse_activation(j.at("image_activation").get<std::string>());
    cfg.rnn_init_state =
        parse_rnn_init_state(j.at("rnn_init_state").get<std::string>());
    cfg.l2_enabled = j.at("l2_enabled").get<bool>();
    cfg.dropout_sites.image = j.at("dropout_image").get<bool>();
    cfg.dropout_sites.image_proj = j.at("dropout_image_proj").get<bool>();
    cfg.dropout_sites.embedding = j.at("dropout_embedding").get<bool>();
    cfg.dropout_sites.rnn_output = j.at("dropout_rnn_output").get<bool>();
    cfg.minibatch_size = j.at("minibatch_size").get<std::size_t>();
    cfg.max_epochs = j.at("max_epochs").get<std::size_t>();
    cfg.beam_width = j.at("beam_width").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  return config_to_json_obj(cfg).dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  return config_from_json_obj(j);
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw DataError("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void save_checkpoint(const std::string& path, const CaptionModel& model,
                     const Vocabulary& vocabulary) {
  if (vocabulary.size() != model.config.vocab_size)
    throw UsageError("vocabulary size " + std::to_string(vocabulary.size()) +
                     " does not match model vocab_size " +
                     std::to_string(model.config.vocab_size));
  json header = {{"config", config_to_json_obj(model.config)},
                 {"vocabulary",
                  {{"min_frequency", vocabulary.min_frequency()},
                   {"words", vocabulary.words()}}}};
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  for (const auto& p : model.parameters()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.tensor.size()));
    for (float v : p.tensor.values()) put_f32(out, v);
  }
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string data = read_file(path);
  Reader r(data, path);
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw LoadError("'" + path + "' is not a model checkpoint (bad magic)");

  const std::uint32_t header_len = r.u32();
  json header;
  try {
    header = json::parse(r.bytes(header_len));
  } catch (const json::exception& e) {
    throw LoadError("checkpoint '" + path + "' has a malformed header: " +
                    e.what());
  }

  Checkpoint ck;
  try {
    ck.model = make_model_skeleton<float>(config_from_json_obj(header.at("config")));
    const auto& v = header.at("vocabulary");
    ck.vocabulary = Vocabulary(v.at("words").get<std::vector<std::string>>(),
                               v.at("min_frequency").get<std::size_t>());
  } catch (const json::exception& e) {
    throw LoadError("checkpoint '" + path + "' has a malformed header: " +
                    e.what());
  }
  if (ck.vocabulary.size() != ck.model.config.vocab_size)
    throw LoadError("checkpoint '" + path + "' vocabulary size " +
                    std::to_string(ck.vocabulary.size()) +
                    " does not match config vocab_size " +
                    std::to_string(ck.model.config.vocab_size));

  for (auto& p : ck.model.parameters()) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    if (name != p.name)
      throw LoadError("checkpoint '" + path + "' parameter order mismatch: "
                      "expected '" + p.name + "', found '" + name + "'");
    const std::uint32_t count = r.u32();
    auto t = p.tensor;
    if (count != t.size())
      throw LoadError("checkpoint '" + path + "' parameter '" + name +
                      "' has " + std::to_string(count) + " elements, expected " +
                      std::to_string(t.size()));
    auto vals = t.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = r.f32();
  }
  if (!r.at_end())
    throw LoadError("checkpoint '" + path + "' has trailing bytes");
  return ck;
}

}  // namespace caprnn
