#pragma once

#include <string>
#include <vector>

#include "nn/model.hpp"

namespace advt::nn {

// Checkpoint layout: 8-byte magic "ADVTLAB1", u32-LE header length, UTF-8
// JSON header {version, spec, param_seed, dtype:"f64"}, then all parameters
// concatenated in spec order as little-endian f64. Round-trips bit-exactly.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// In-memory forms, used for digests and the C API.
std::vector<uint8_t> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(const std::vector<uint8_t>& bytes, const std::string& origin);

std::string model_digest(const Model& model);  // sha256 of the serialized form

}  // namespace advt::nn
