#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace advt {

// Minimal SHA-256 (FIPS 180-4). Used for model-cache keys and the
// frozen-f_b digest check; verified against NIST vectors in the tests.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, size_t len);
  std::string hex_digest();  // finalizes; further updates are invalid

 private:
  void process_block(const uint8_t* block);
  uint32_t state_[8];
  uint64_t total_len_ = 0;
  uint8_t buffer_[64];
  size_t buffer_len_ = 0;
};

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_hex(const std::vector<uint8_t>& v);
std::string sha256_file(const std::string& path);  // throws IoError

}  // namespace advt
