#include "nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "core/error.hpp"
#include "core/sha256.hpp"

namespace advt::nn {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'T', 'L', 'A', 'B', '1'};
constexpr int kVersion = 1;

void put_u32_le(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void put_f64_le(std::vector<uint8_t>& out, double d) {
  uint64_t v = std::bit_cast<uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

double get_f64_le(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

std::vector<uint8_t> serialize_checkpoint(const Model& model) {
  json header;
  header["version"] = kVersion;
  header["dtype"] = "f64";
  header["param_seed"] = model.param_seed;
  header["spec"] = json::parse(model.spec.to_json());
  std::string hs = header.dump();

  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u32_le(out, static_cast<uint32_t>(hs.size()));
  out.insert(out.end(), hs.begin(), hs.end());
  for (const auto& [_, t] : model.params)
    for (int64_t i = 0; i < t.size(); ++i) put_f64_le(out, t[i]);
  return out;
}

Model deserialize_checkpoint(const std::vector<uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FormatError(origin + ": not an ADVTLAB1 checkpoint (bad magic)");
  uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i) hlen |= uint32_t(bytes[8 + size_t(i)]) << (8 * i);
  if (bytes.size() < 12 + size_t(hlen))
    throw FormatError(origin + ": truncated header (want " + std::to_string(hlen) + " bytes)");

  json header;
  try {
    header = json::parse(std::string(bytes.begin() + 12, bytes.begin() + 12 + hlen));
  } catch (const std::exception& e) {
    throw FormatError(origin + ": corrupt header json: " + e.what());
  }
  Model m;
  try {
    if (header.at("version").get<int>() != kVersion)
      throw FormatError(origin + ": unsupported checkpoint version " +
                        header.at("version").dump());
    if (header.at("dtype").get<std::string>() != "f64")
      throw FormatError(origin + ": unsupported dtype " + header.at("dtype").dump());
    m.param_seed = header.at("param_seed").get<uint64_t>();
    m.spec = ModelSpec::from_json(header.at("spec").dump());
  } catch (const json::exception& e) {
    throw FormatError(origin + ": header field error: " + e.what());
  }
  m.spec.validate();

  // Rebuild parameter tensors shaped by the spec, then fill from payload.
  Model shaped = init_params(m.spec, 0);
  m.params = std::move(shaped.params);
  size_t off = 12 + hlen;
  for (auto& [name, t] : m.params) {
    size_t need = sizeof(double) * static_cast<size_t>(t.size());
    if (bytes.size() < off + need)
      throw FormatError(origin + ": truncated payload at parameter '" + name + "' (offset " +
                        std::to_string(off) + ")");
    for (int64_t i = 0; i < t.size(); ++i) t[i] = get_f64_le(bytes.data() + off + 8 * size_t(i));
    off += need;
  }
  if (off != bytes.size())
    throw FormatError(origin + ": " + std::to_string(bytes.size() - off) +
                      " trailing bytes after payload");
  return m;
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::vector<uint8_t> bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out.good()) throw IoError("short write to checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path);
}

std::string model_digest(const Model& model) {
  std::vector<uint8_t> bytes = serialize_checkpoint(model);
  return sha256_hex(bytes);
}

}  // namespace advt::nn
