#include "specrnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "specrnn/rng.hpp"

namespace specrnn {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw InvalidInputError("truncated IDX header: " + path);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

SequenceBatch load_mnist_idx(const std::string& images_path,
                             const std::string& labels_path,
                             SequenceMode mode) {
  std::ifstream images(images_path, std::ios::binary);
  if (!images) throw InvalidInputError("cannot open images: " + images_path);
  std::uint32_t magic = read_u32_be(images, images_path);
  if (magic != kImagesMagic) {
    throw InvalidInputError("bad image magic in " + images_path);
  }
  std::uint32_t count = read_u32_be(images, images_path);
  std::uint32_t rows = read_u32_be(images, images_path);
  std::uint32_t cols = read_u32_be(images, images_path);

  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw InvalidInputError("cannot open labels: " + labels_path);
  std::uint32_t label_magic = read_u32_be(labels, labels_path);
  if (label_magic != kLabelsMagic) {
    throw InvalidInputError("bad label magic in " + labels_path);
  }
  std::uint32_t label_count = read_u32_be(labels, labels_path);
  if (label_count != count) {
    throw InvalidInputError("image/label count mismatch: " +
                            std::to_string(count) + " vs " +
                            std::to_string(label_count));
  }

  const std::size_t pixels = std::size_t(rows) * cols;
  std::vector<unsigned char> image_bytes(std::size_t(count) * pixels);
  if (!images.read(reinterpret_cast<char*>(image_bytes.data()),
                   static_cast<std::streamsize>(image_bytes.size()))) {
    throw InvalidInputError("truncated image data: " + images_path);
  }
  std::vector<unsigned char> label_bytes(count);
  if (!labels.read(reinterpret_cast<char*>(label_bytes.data()),
                   static_cast<std::streamsize>(label_bytes.size()))) {
    throw InvalidInputError("truncated label data: " + labels_path);
  }

  SequenceBatch batch;
  batch.n = count;
  batch.target_kind = TargetKind::kFinalLabel;
  batch.num_classes = 10;
  batch.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) batch.labels[i] = label_bytes[i];

  if (mode == SequenceMode::kRows) {
    batch.steps = rows;
    batch.d_x = cols;
  } else {
    batch.steps = pixels;
    batch.d_x = 1;
  }
  batch.inputs.assign(batch.steps, Matrix(count, batch.d_x));
  for (std::uint32_t i = 0; i < count; ++i) {
    const unsigned char* img = image_bytes.data() + std::size_t(i) * pixels;
    for (std::size_t p = 0; p < pixels; ++p) {
      double v = static_cast<double>(img[p]) / 255.0;
      std::size_t t = mode == SequenceMode::kRows ? p / cols : p;
      std::size_t k = mode == SequenceMode::kRows ? p % cols : 0;
      batch.inputs[t](i, k) = v;
    }
  }
  return batch;
}

void write_idx_images(const std::string& path,
                      const std::vector<std::vector<std::uint8_t>>& images,
                      std::uint32_t rows, std::uint32_t cols) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_u32_be(out, kImagesMagic);
  write_u32_be(out, static_cast<std::uint32_t>(images.size()));
  write_u32_be(out, rows);
  write_u32_be(out, cols);
  const std::size_t pixels = std::size_t(rows) * cols;
  for (const auto& img : images) {
    if (img.size() != pixels) {
      throw InvalidInputError("image byte count does not match rows*cols");
    }
    out.write(reinterpret_cast<const char*>(img.data()),
              static_cast<std::streamsize>(img.size()));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_idx_labels(const std::string& path,
                      const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_u32_be(out, kLabelsMagic);
  write_u32_be(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

SequenceBatch synthetic_parity(std::size_t n, std::size_t steps,
                               std::uint64_t seed) {
  if (n == 0 || steps == 0) {
    throw InvalidInputError("parity task needs n >= 1 and steps >= 1");
  }
  SplitMix64 rng(seed);
  SequenceBatch batch;
  batch.n = n;
  batch.steps = steps;
  batch.d_x = 1;
  batch.target_kind = TargetKind::kFinalLabel;
  batch.num_classes = 2;
  batch.labels.resize(n);
  batch.inputs.assign(steps, Matrix(n, 1));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t minus_count = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      bool minus = rng.next_double() < 0.5;
      batch.inputs[t](i, 0) = minus ? -1.0 : 1.0;
      if (minus) ++minus_count;
    }
    batch.labels[i] = minus_count % 2;
  }
  return batch;
}

SequenceBatch synthetic_copy(std::size_t n, std::size_t steps,
                             std::size_t num_symbols, std::uint64_t seed) {
  if (n == 0 || steps == 0 || num_symbols < 2) {
    throw InvalidInputError("copy task needs n, steps >= 1, symbols >= 2");
  }
  SplitMix64 rng(seed);
  SequenceBatch batch;
  batch.n = n;
  batch.steps = steps;
  batch.d_x = num_symbols;
  batch.target_kind = TargetKind::kFinalLabel;
  batch.num_classes = num_symbols;
  batch.labels.resize(n);
  batch.inputs.assign(steps, Matrix(n, num_symbols));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t symbol = static_cast<std::size_t>(rng.next_below(num_symbols));
    batch.labels[i] = symbol;
    batch.inputs[0](i, symbol) = 1.0;
    for (std::size_t t = 1; t < steps; ++t) {
      std::size_t distractor =
          static_cast<std::size_t>(rng.next_below(num_symbols));
      batch.inputs[t](i, distractor) = 1.0;
    }
  }
  return batch;
}

void write_surrogate_digits(const std::string& dir, std::size_t n_train,
                            std::size_t n_test, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  constexpr std::uint32_t kSide = 28;
  constexpr std::size_t kPixels = std::size_t(kSide) * kSide;
  constexpr std::size_t kClasses = 10;

  // Each class is a fixed constellation of small strokes; samples translate,
  // rescale and noise it.  The per-sample variation spreads the hidden
  // trajectories over many more directions than a single blob would, which
  // keeps the task's hidden covariance from collapsing to a tiny rank.
  constexpr std::size_t kStrokes = 6;
  struct Stroke {
    double x, y, amp;
  };
  std::vector<std::array<Stroke, kStrokes>> constellations(kClasses);
  for (std::size_t cls = 0; cls < kClasses; ++cls) {
    SplitMix64 class_rng(0xc0deULL * (cls + 1));
    for (std::size_t s = 0; s < kStrokes; ++s) {
      constellations[cls][s] = {class_rng.next_uniform(5.0, 22.0),
                                class_rng.next_uniform(5.0, 22.0),
                                class_rng.next_uniform(0.6, 1.0)};
    }
  }

  auto make_split = [&](std::size_t n, SplitMix64& rng,
                        std::vector<std::vector<std::uint8_t>>& images,
                        std::vector<std::uint8_t>& labels) {
    images.assign(n, std::vector<std::uint8_t>(kPixels, 0));
    labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t cls = i % kClasses;  // balanced by construction
      labels[i] = static_cast<std::uint8_t>(cls);
      double shift_x = rng.next_uniform(-4.0, 4.0);
      double shift_y = rng.next_uniform(-4.0, 4.0);
      double scale = rng.next_uniform(0.85, 1.15);
      std::array<double, kStrokes> sigma, amp;
      for (std::size_t s = 0; s < kStrokes; ++s) {
        sigma[s] = rng.next_uniform(1.3, 2.3);
        amp[s] = constellations[cls][s].amp * rng.next_uniform(0.7, 1.0);
      }
      for (std::uint32_t r = 0; r < kSide; ++r) {
        for (std::uint32_t c = 0; c < kSide; ++c) {
          double v = 0.0;
          for (std::size_t s = 0; s < kStrokes; ++s) {
            const Stroke& st = constellations[cls][s];
            double sx = 13.5 + scale * (st.x - 13.5) + shift_x;
            double sy = 13.5 + scale * (st.y - 13.5) + shift_y;
            double dr = static_cast<double>(r) - sy;
            double dc = static_cast<double>(c) - sx;
            v += 255.0 * amp[s] *
                 std::exp(-(dr * dr + dc * dc) / (2.0 * sigma[s] * sigma[s]));
          }
          v += rng.next_uniform(0.0, 32.0);  // background noise
          images[i][std::size_t(r) * kSide + c] =
              static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, v)));
        }
      }
    }
  };

  SplitMix64 train_rng(seed);
  SplitMix64 test_rng(seed ^ 0x7f4a7c15ULL);
  std::vector<std::vector<std::uint8_t>> images;
  std::vector<std::uint8_t> labels;
  make_split(n_train, train_rng, images, labels);
  write_idx_images((fs::path(dir) / "train-images-idx3-ubyte").string(),
                   images, kSide, kSide);
  write_idx_labels((fs::path(dir) / "train-labels-idx1-ubyte").string(),
                   labels);
  make_split(n_test, test_rng, images, labels);
  write_idx_images((fs::path(dir) / "t10k-images-idx3-ubyte").string(), images,
                   kSide, kSide);
  write_idx_labels((fs::path(dir) / "t10k-labels-idx1-ubyte").string(), labels);
}

}  // namespace specrnn
