#pragma once

#include <string>
#include <vector>

#include "specrnn/baselines.hpp"
#include "specrnn/covariance.hpp"
#include "specrnn/pruning.hpp"
#include "specrnn/rnn.hpp"

namespace specrnn {

// 17-significant-digit decimal, enough to round-trip any binary double
// exactly, so serialized artifacts reload bit-identically.
std::string format_double(double value);

std::string model_to_json(const RnnParams& params);
RnnParams model_from_json(const std::string& text);

std::string covariance_to_json(const HiddenCovariance& cov);
HiddenCovariance covariance_from_json(const std::string& text);

// Compressed-model JSON extended with the selection, reconstruction map,
// losses, and regularizer metadata.
std::string prune_result_to_json(const PruneResult& result);
PruneResult prune_result_from_json(const std::string& text);

// Mask as an index list over the recurrent matrix.
std::string mask_to_json(const WeightMask& mask);
WeightMask mask_from_json(const std::string& text);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace specrnn
