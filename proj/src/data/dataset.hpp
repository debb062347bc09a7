#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace advt::data {

struct Dataset {
  Tensor images;            // N x C x H x W, values in [0,1]
  std::vector<int> labels;  // class indices, one per image
  int class_count = 0;

  int64_t size() const { return images.empty() ? 0 : images.dim(0); }
  void validate() const;  // throws FormatError on broken invariants
};

// IDX container pair (MNIST layout). Big-endian magics 0x803 / 0x801.
// Gzip-compressed files are detected by the 0x1f8b prefix and inflated first.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

enum class SyntheticKind { GaussianBlobs, Ring };
SyntheticKind synthetic_kind_from_string(const std::string& s);

// Class-conditional patterns with seeded noise; classes balanced within 1.
Dataset generate_synthetic(SyntheticKind kind, int n, int classes, int image_side,
                           uint64_t seed);

// Seeded permutation of [0, n) chopped into batches; the final short batch
// is kept.
std::vector<std::vector<int64_t>> batch_indices(int64_t n, int64_t batch_size,
                                                uint64_t epoch_seed);

// Rows of `ds` selected by index, in order.
Dataset gather(const Dataset& ds, const std::vector<int64_t>& indices);

// First `count` examples (all if count >= size).
Dataset take(const Dataset& ds, int64_t count);

std::string dataset_digest(const Dataset& ds);

}  // namespace advt::data
