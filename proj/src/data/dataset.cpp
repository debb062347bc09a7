#include "data/dataset.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/sha256.hpp"

namespace advt::data {

namespace {

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

std::vector<uint8_t> gunzip(const std::vector<uint8_t>& in, const std::string& path) {
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
    throw FormatError(path + ": gzip init failed");
  std::vector<uint8_t> out;
  out.reserve(in.size() * 4);
  uint8_t buf[1 << 15];
  zs.next_in = const_cast<uint8_t*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError(path + ": corrupt gzip stream (zlib rc " + std::to_string(rc) + ")");
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

std::vector<uint8_t> read_maybe_gzip(const std::string& path) {
  std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes, path);
  return bytes;
}

uint32_t be32(const std::vector<uint8_t>& b, size_t off, const std::string& path) {
  if (off + 4 > b.size())
    throw FormatError(path + ": truncated at offset " + std::to_string(off));
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) |
         uint32_t(b[off + 3]);
}

}  // namespace

void Dataset::validate() const {
  if (images.rank() != 4)
    throw FormatError("dataset images must be N x C x H x W, got " + shape_str(images.shape()));
  if (images.dim(0) != static_cast<int64_t>(labels.size()))
    throw FormatError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                      std::to_string(labels.size()) + " labels");
  if (class_count < 1) throw FormatError("dataset class_count must be >= 1");
  for (int l : labels)
    if (l < 0 || l >= class_count)
      throw FormatError("dataset label " + std::to_string(l) + " outside [0," +
                        std::to_string(class_count) + ")");
  for (int64_t i = 0; i < images.size(); ++i)
    if (!(images[i] >= 0.0 && images[i] <= 1.0))
      throw FormatError("dataset pixel outside [0,1]");
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::vector<uint8_t> img = read_maybe_gzip(images_path);
  std::vector<uint8_t> lab = read_maybe_gzip(labels_path);

  uint32_t img_magic = be32(img, 0, images_path);
  if (img_magic != 0x00000803u)
    throw FormatError(images_path + ": bad magic 0x" + std::to_string(img_magic) +
                      " at offset 0 (want 0x803 idx3-ubyte)");
  uint32_t n = be32(img, 4, images_path);
  uint32_t rows = be32(img, 8, images_path);
  uint32_t cols = be32(img, 12, images_path);
  size_t need = 16 + size_t(n) * rows * cols;
  if (img.size() < need)
    throw FormatError(images_path + ": truncated image payload, have " +
                      std::to_string(img.size()) + " bytes, need " + std::to_string(need));

  uint32_t lab_magic = be32(lab, 0, labels_path);
  if (lab_magic != 0x00000801u)
    throw FormatError(labels_path + ": bad magic 0x" + std::to_string(lab_magic) +
                      " at offset 0 (want 0x801 idx1-ubyte)");
  uint32_t ln = be32(lab, 4, labels_path);
  if (ln != n)
    throw FormatError("count mismatch: " + images_path + " has " + std::to_string(n) +
                      " images, " + labels_path + " has " + std::to_string(ln) + " labels");
  if (lab.size() < 8 + size_t(ln))
    throw FormatError(labels_path + ": truncated label payload");

  Dataset ds;
  ds.images = Tensor({int64_t(n), 1, int64_t(rows), int64_t(cols)});
  for (int64_t i = 0; i < ds.images.size(); ++i)
    ds.images[i] = double(img[16 + size_t(i)]) / 255.0;
  ds.labels.resize(n);
  int max_label = 0;
  for (uint32_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = max_label + 1;
  ds.validate();
  return ds;
}

SyntheticKind synthetic_kind_from_string(const std::string& s) {
  if (s == "gaussian-blobs" || s == "blobs") return SyntheticKind::GaussianBlobs;
  if (s == "ring") return SyntheticKind::Ring;
  throw ConfigError("unknown synthetic dataset kind: " + s);
}

Dataset generate_synthetic(SyntheticKind kind, int n, int classes, int image_side,
                           uint64_t seed) {
  if (classes < 2 || n < classes) throw ArgumentError("synthetic dataset needs n >= classes >= 2");
  if (image_side < 2) throw ArgumentError("synthetic dataset needs image_side >= 2");

  const int64_t side = image_side;
  Dataset ds;
  ds.class_count = classes;
  ds.images = Tensor({n, 1, side, side});
  ds.labels.resize(static_cast<size_t>(n));

  const double cx0 = (side - 1) / 2.0;
  for (int i = 0; i < n; ++i) {
    int label = i % classes;  // balanced within 1 by construction
    ds.labels[static_cast<size_t>(i)] = label;
    Rng rng(rng_derive(seed, static_cast<uint64_t>(i)));
    double* px = ds.images.data() + int64_t(i) * side * side;

    if (kind == SyntheticKind::GaussianBlobs) {
      // One bright blob per class, placed on a circle; jittered per example.
      double angle = 2.0 * M_PI * label / classes;
      double r = 0.32 * side;
      double cx = cx0 + r * std::cos(angle) + rng.uniform(-1.0, 1.0);
      double cy = cx0 + r * std::sin(angle) + rng.uniform(-1.0, 1.0);
      double sigma = 0.085 * side;
      for (int64_t y = 0; y < side; ++y)
        for (int64_t x = 0; x < side; ++x) {
          double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          double v = std::exp(-d2 / (2.0 * sigma * sigma)) + rng.uniform(0.0, 0.18);
          px[y * side + x] = std::min(1.0, std::max(0.0, v));
        }
    } else {  // Ring: class selects a radius band around the center.
      double radius = (0.15 + 0.75 * (label + 1.0) / (classes + 1.0)) * 0.5 * side;
      double jitter = rng.uniform(-0.5, 0.5);
      double width = 0.05 * side + 0.6;
      for (int64_t y = 0; y < side; ++y)
        for (int64_t x = 0; x < side; ++x) {
          double d = std::sqrt((x - cx0) * (x - cx0) + (y - cx0) * (y - cx0));
          double band = (d - radius - jitter) / width;
          double v = std::exp(-band * band) + rng.uniform(0.0, 0.18);
          px[y * side + x] = std::min(1.0, std::max(0.0, v));
        }
    }
  }
  return ds;
}

std::vector<std::vector<int64_t>> batch_indices(int64_t n, int64_t batch_size,
                                                uint64_t epoch_seed) {
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(epoch_seed);
  for (int64_t i = n - 1; i > 0; --i) {
    int64_t j = static_cast<int64_t>(rng.below(static_cast<uint64_t>(i + 1)));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  std::vector<std::vector<int64_t>> out;
  for (int64_t start = 0; start < n; start += batch_size) {
    int64_t stop = std::min(n, start + batch_size);
    out.emplace_back(perm.begin() + start, perm.begin() + stop);
  }
  return out;
}

Dataset gather(const Dataset& ds, const std::vector<int64_t>& indices) {
  const int64_t c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
  const int64_t px = c * h * w;
  Dataset out;
  out.class_count = ds.class_count;
  out.images = Tensor({static_cast<int64_t>(indices.size()), c, h, w});
  out.labels.resize(indices.size());
  for (size_t r = 0; r < indices.size(); ++r) {
    int64_t src = indices[r];
    if (src < 0 || src >= ds.size()) throw ArgumentError("gather index out of range");
    std::memcpy(out.images.data() + int64_t(r) * px, ds.images.data() + src * px,
                sizeof(double) * static_cast<size_t>(px));
    out.labels[r] = ds.labels[static_cast<size_t>(src)];
  }
  return out;
}

Dataset take(const Dataset& ds, int64_t count) {
  count = std::min(count, ds.size());
  std::vector<int64_t> idx(static_cast<size_t>(count));
  std::iota(idx.begin(), idx.end(), 0);
  return gather(ds, idx);
}

std::string dataset_digest(const Dataset& ds) {
  Sha256 h;
  h.update(ds.images.data(), sizeof(double) * static_cast<size_t>(ds.images.size()));
  h.update(ds.labels.data(), sizeof(int) * ds.labels.size());
  int cc = ds.class_count;
  h.update(&cc, sizeof(cc));
  return h.hex_digest();
}

}  // namespace advt::data
