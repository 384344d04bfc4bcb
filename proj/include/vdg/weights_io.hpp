/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace vdg {

// Weight file layout:
//   bytes 0..3   magic "VDGW"
//   bytes 4..7   little-endian u32 length of the JSON header
//   header       UTF-8 JSON; "tensors" lists {name, rows, cols, offset}
//                with offsets counted in floats from the start of the blob
//   blob         little-endian 32-bit floats, each tensor row-major
struct WeightFile {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;

  const Eigen::MatrixXd& tensor(const std::string& name) const;
};

void write_weights(const std::filesystem::path& path, const WeightFile& file);
WeightFile read_weights(const std::filesystem::path& path);

}  // namespace vdg
