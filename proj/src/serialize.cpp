#include "specrnn/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace specrnn {

namespace {

using nlohmann::json;

void append_vector(std::string& out, const std::vector<double>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  out += ']';
}

void append_matrix(std::string& out, const Matrix& a) {
  out += '[';
  for (std::size_t r = 0; r < a.rows(); ++r) {
    if (r) out += ',';
    out += '[';
    const double* row = a.row_ptr(r);
    for (std::size_t c = 0; c < a.cols(); ++c) {
      if (c) out += ',';
      out += format_double(row[c]);
    }
    out += ']';
  }
  out += ']';
}

void append_indices(std::string& out, const std::vector<std::size_t>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  out += ']';
}

// Serializes the model fields into `out` without the surrounding braces so
// extended records can append their own fields.
void append_model_fields(std::string& out, const RnnParams& params) {
  params.check_consistent();
  out += "\"version\":1,\"dims\":{\"m\":" + std::to_string(params.m()) +
         ",\"d_x\":" + std::to_string(params.d_x()) +
         ",\"d_y\":" + std::to_string(params.d_y()) + "},\"activation\":\"" +
         std::string(activation_name(params.activation)) + "\",\"w_out\":";
  append_matrix(out, params.w_out);
  out += ",\"w_hid\":";
  append_matrix(out, params.w_hid);
  out += ",\"w_in\":";
  append_matrix(out, params.w_in);
  out += ",\"b_out\":";
  append_vector(out, params.b_out);
  out += ",\"b_hid\":";
  append_vector(out, params.b_hid);
}

json parse_object(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw InvalidInputError(std::string(what) + ": malformed JSON");
  }
  return j;
}

void require_version_1(const json& j, const char* what) {
  if (!j.contains("version") || !j["version"].is_number_integer() ||
      j["version"].get<int>() != 1) {
    throw InvalidInputError(std::string(what) + ": unsupported version");
  }
}

Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols,
                        const char* what) {
  if (!j.is_array() || j.size() != rows) {
    throw DimensionError(std::string(what) + ": row count mismatch");
  }
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const json& row = j[r];
    if (!row.is_array() || row.size() != cols) {
      throw DimensionError(std::string(what) + ": column count mismatch");
    }
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = row[c].get<double>();
  }
  return out;
}

std::vector<double> vector_from_json(const json& j, std::size_t size,
                                     const char* what) {
  if (!j.is_array() || j.size() != size) {
    throw DimensionError(std::string(what) + ": length mismatch");
  }
  std::vector<double> out(size);
  for (std::size_t i = 0; i < size; ++i) out[i] = j[i].get<double>();
  return out;
}

RnnParams model_from_object(const json& j) {
  require_version_1(j, "model");
  const json& dims = j.at("dims");
  std::size_t m = dims.at("m").get<std::size_t>();
  std::size_t d_x = dims.at("d_x").get<std::size_t>();
  std::size_t d_y = dims.at("d_y").get<std::size_t>();
  RnnParams params;
  params.activation = activation_from_name(j.at("activation").get<std::string>());
  params.w_out = matrix_from_json(j.at("w_out"), d_y, m, "w_out");
  params.w_hid = matrix_from_json(j.at("w_hid"), m, m, "w_hid");
  params.w_in = matrix_from_json(j.at("w_in"), m, d_x, "w_in");
  params.b_out = vector_from_json(j.at("b_out"), d_y, "b_out");
  params.b_hid = vector_from_json(j.at("b_hid"), m, "b_hid");
  params.check_consistent();
  return params;
}

}  // namespace

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

std::string model_to_json(const RnnParams& params) {
  std::string out = "{";
  append_model_fields(out, params);
  out += "}";
  return out;
}

RnnParams model_from_json(const std::string& text) {
  return model_from_object(parse_object(text, "model"));
}

std::string covariance_to_json(const HiddenCovariance& cov) {
  std::string out = "{\"version\":1,\"m\":" + std::to_string(cov.m) +
                    ",\"samples\":" + std::to_string(cov.samples) +
                    ",\"sigma\":";
  append_matrix(out, cov.sigma);
  out += "}";
  return out;
}

HiddenCovariance covariance_from_json(const std::string& text) {
  json j = parse_object(text, "covariance");
  require_version_1(j, "covariance");
  HiddenCovariance cov;
  cov.m = j.at("m").get<std::size_t>();
  cov.samples = j.at("samples").get<std::size_t>();
  cov.sigma = matrix_from_json(j.at("sigma"), cov.m, cov.m, "sigma");
  return cov;
}

std::string prune_result_to_json(const PruneResult& result) {
  std::string out = "{";
  append_model_fields(out, result.compressed);
  out += ",\"j\":";
  append_indices(out, result.j.indices);
  out += ",\"a_j\":";
  append_matrix(out, result.a_j);
  out += ",\"losses\":{\"input\":" + format_double(result.loss_input) +
         ",\"out_o\":" + format_double(result.loss_out_o) +
         ",\"out_h\":" + format_double(result.loss_out_h) + "}";
  out += ",\"objective\":" + format_double(result.objective);
  const char* mode = result.tau_mode == TauMode::kZero
                         ? "zero"
                         : (result.tau_mode == TauMode::kScalar ? "scalar"
                                                                : "leverage");
  out += ",\"tau_mode\":\"" + std::string(mode) + "\"";
  out += ",\"tau_value\":" + format_double(result.tau_value);
  out += ",\"used_pseudo_inverse_fallback\":";
  out += result.used_pseudo_inverse_fallback ? "true" : "false";
  out += "}";
  return out;
}

PruneResult prune_result_from_json(const std::string& text) {
  json j = parse_object(text, "prune result");
  PruneResult result;
  result.compressed = model_from_object(j);
  std::vector<std::size_t> indices;
  for (const json& v : j.at("j")) indices.push_back(v.get<std::size_t>());
  result.j = IndexSet(indices);
  std::size_t k = result.compressed.m();
  std::size_t full_m = j.at("a_j").size();
  result.a_j = matrix_from_json(j.at("a_j"), full_m, k, "a_j");
  const json& losses = j.at("losses");
  result.loss_input = losses.at("input").get<double>();
  result.loss_out_o = losses.at("out_o").get<double>();
  result.loss_out_h = losses.at("out_h").get<double>();
  result.objective = j.at("objective").get<double>();
  std::string mode = j.at("tau_mode").get<std::string>();
  if (mode == "zero") {
    result.tau_mode = TauMode::kZero;
  } else if (mode == "scalar") {
    result.tau_mode = TauMode::kScalar;
  } else if (mode == "leverage") {
    result.tau_mode = TauMode::kLeverage;
  } else {
    throw InvalidInputError("prune result: unknown tau mode '" + mode + "'");
  }
  result.tau_value = j.at("tau_value").get<double>();
  result.used_pseudo_inverse_fallback =
      j.at("used_pseudo_inverse_fallback").get<bool>();
  return result;
}

std::string mask_to_json(const WeightMask& mask) {
  std::string out = "{\"version\":1,\"rows\":" + std::to_string(mask.rows) +
                    ",\"cols\":" + std::to_string(mask.cols) + ",\"kept\":[";
  bool first = true;
  for (std::size_t r = 0; r < mask.rows; ++r) {
    for (std::size_t c = 0; c < mask.cols; ++c) {
      if (mask.kept(r, c)) {
        if (!first) out += ',';
        out += std::to_string(r * mask.cols + c);
        first = false;
      }
    }
  }
  out += "]}";
  return out;
}

WeightMask mask_from_json(const std::string& text) {
  json j = parse_object(text, "mask");
  require_version_1(j, "mask");
  WeightMask mask(j.at("rows").get<std::size_t>(),
                  j.at("cols").get<std::size_t>());
  for (const json& v : j.at("kept")) {
    std::size_t idx = v.get<std::size_t>();
    if (idx >= mask.rows * mask.cols) {
      throw InvalidInputError("mask: kept index out of range");
    }
    mask.set(idx / mask.cols, idx % mask.cols, true);
  }
  return mask;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(content.data(),
            static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace specrnn
