/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/weights_io.hpp"

#include <fstream>
#include <iterator>

#include "vdg/binary_io.hpp"
#include "vdg/error.hpp"

namespace vdg {

namespace {
constexpr char kMagic[4] = {'V', 'D', 'G', 'W'};
}

const Eigen::MatrixXd& WeightFile::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return m;
  throw ValidationError("weight file has no tensor '" + name + "'");
}

void write_weights(const std::filesystem::path& path, const WeightFile& file) {
  nlohmann::json header = file.meta;
  header["tensors"] = nlohmann::json::array();
  size_t offset = 0;
  for (const auto& [name, m] : file.tensors) {
    header["tensors"].push_back(
        {{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += static_cast<size_t>(m.size());
  }
  const std::string text = header.dump();

  std::vector<unsigned char> bytes(8 + text.size() + 4 * offset);
  std::copy(kMagic, kMagic + 4, bytes.begin());
  binary::write_u32_le(static_cast<uint32_t>(text.size()), bytes.data() + 4);
  std::copy(text.begin(), text.end(), bytes.begin() + 8);
  unsigned char* blob = bytes.data() + 8 + text.size();
  for (const auto& [name, m] : file.tensors) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        binary::write_f32_le(static_cast<float>(m(r, c)), blob);
        blob += 4;
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write weights to " + path.string());
}

WeightFile read_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open weights " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw ParseError(path.string() + ": not a weight file");
  }
  const uint32_t header_len = binary::read_u32_le(bytes.data() + 4);
  if (8 + static_cast<size_t>(header_len) > bytes.size()) {
    throw ParseError(path.string() + ": truncated header");
  }
  WeightFile file;
  try {
    file.meta = nlohmann::json::parse(bytes.begin() + 8,
                                      bytes.begin() + 8 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad header: " + e.what());
  }
  const unsigned char* blob = bytes.data() + 8 + header_len;
  const size_t blob_floats = (bytes.size() - 8 - header_len) / 4;
  for (const auto& t : file.meta.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto offset = t.at("offset").get<size_t>();
    if (offset + static_cast<size_t>(rows * cols) > blob_floats) {
      throw ParseError(path.string() + ": tensor data truncated");
    }
    Eigen::MatrixXd m(rows, cols);
    const unsigned char* p = blob + 4 * offset;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        m(r, c) = binary::read_f32_le(p);
        p += 4;
      }
    }
    file.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  file.meta.erase("tensors");
  return file;
}

}  // namespace vdg
