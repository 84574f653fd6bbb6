#pragma once

// Versioned binary model checkpoint.
//
// Layout:
//   bytes 0..7   magic "CCMODEL1"
//   u32 LE       length of the UTF-8 JSON header
//   ...          JSON header: {"config": {...}, "vocabulary": {...}}
//   then, for each parameter in the fixed order given by
//   CaptionModel::parameters():
//     u32 LE     name length, followed by the name bytes
//     u32 LE     element count, followed by that many little-endian
//                32-bit IEEE floats
//
// Writes are atomic: data goes to a sibling temp file that is renamed over
// the destination only after a successful write.

#include <string>

#include "caprnn/model.hpp"
#include "caprnn/vocab.hpp"

namespace caprnn {

struct Checkpoint {
  CaptionModel model;
  Vocabulary vocabulary;
};

void save_checkpoint(const std::string& path, const CaptionModel& model,
                     const Vocabulary& vocabulary);

Checkpoint load_checkpoint(const std::string& path);

/// Strict JSON (de)serialization of a model configuration — every field
/// round-trips, unknown keys are rejected.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

/// Writes `content` to `path` via a temp file + rename, so readers never
/// observe a half-written file.
void write_file_atomic(const std::string& path, const std::string& content);

/// Reads a whole file into a string; LoadError if it cannot be opened.
std::string read_file(const std::string& path);

}  // namespace caprnn
