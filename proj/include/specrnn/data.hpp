#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "specrnn/rnn.hpp"

namespace specrnn {

enum class SequenceMode {
  kRows,    // T = image rows, d_x = image cols
  kPixels,  // T = rows*cols, d_x = 1
};

// Parses the big-endian IDX pair (magic 0x803 images / 0x801 labels), scales
// pixels to [0,1], and reshapes each image into a sequence.
SequenceBatch load_mnist_idx(const std::string& images_path,
                             const std::string& labels_path,
                             SequenceMode mode = SequenceMode::kRows);

// IDX writers (test fixtures and the bundled surrogate dataset).
void write_idx_images(const std::string& path,
                      const std::vector<std::vector<std::uint8_t>>& images,
                      std::uint32_t rows, std::uint32_t cols);
void write_idx_labels(const std::string& path,
                      const std::vector<std::uint8_t>& labels);

// Temporal parity: d_x = 1 inputs in {-1, +1}; the label is the number of -1
// entries mod 2 (two classes).
SequenceBatch synthetic_parity(std::size_t n, std::size_t steps,
                               std::uint64_t seed);

// Copy-memory: the first step carries a one-hot symbol, later steps carry
// one-hot distractors; the label is the first symbol.
SequenceBatch synthetic_copy(std::size_t n, std::size_t steps,
                             std::size_t num_symbols, std::uint64_t seed);

// Writes a deterministic 10-class 28x28 image set in IDX format (class-coded
// Gaussian blobs with per-sample jitter and noise): four files named
// train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte,
// t10k-labels-idx1-ubyte under `dir`.
void write_surrogate_digits(const std::string& dir, std::size_t n_train,
                            std::size_t n_test, std::uint64_t seed);

}  // namespace specrnn
