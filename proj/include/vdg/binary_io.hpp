/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <bit>
#include <cstdint>

namespace vdg::binary {

inline float read_f32_le(const unsigned char* p) {
  const uint32_t bits = uint32_t(p[0]) | (uint32_t(p[1]) << 8) |
                        (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

inline void write_f32_le(float v, unsigned char* p) {
  const auto bits = std::bit_cast<uint32_t>(v);
  p[0] = bits & 0xff;
  p[1] = (bits >> 8) & 0xff;
  p[2] = (bits >> 16) & 0xff;
  p[3] = (bits >> 24) & 0xff;
}

inline uint32_t read_u32_le(const unsigned char* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
         (uint32_t(p[3]) << 24);
}

inline void write_u32_le(uint32_t v, unsigned char* p) {
  p[0] = v & 0xff;
  p[1] = (v >> 8) & 0xff;
  p[2] = (v >> 16) & 0xff;
  p[3] = (v >> 24) & 0xff;
}

}  // namespace vdg::binary
