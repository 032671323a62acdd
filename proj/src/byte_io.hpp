#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>

#include "robustmal/pe.hpp"

namespace robustmal::detail {

inline bool in_range(ByteSpan bytes, std::uint64_t offset, std::uint64_t length) {
  return offset <= bytes.size() && length <= bytes.size() - offset;
}

inline std::uint16_t read_u16(ByteSpan b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

inline std::uint32_t read_u32(ByteSpan b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

inline std::uint64_t read_u64(ByteSpan b, std::size_t off) {
  return static_cast<std::uint64_t>(read_u32(b, off)) |
         (static_cast<std::uint64_t>(read_u32(b, off + 4)) << 32);
}

inline std::optional<std::uint32_t> try_u32(ByteSpan b, std::uint64_t off) {
  if (!in_range(b, off, 4)) return std::nullopt;
  return read_u32(b, static_cast<std::size_t>(off));
}

inline void write_u16(Bytes& b, std::size_t off, std::uint16_t v) {
  b[off] = static_cast<std::uint8_t>(v);
  b[off + 1] = static_cast<std::uint8_t>(v >> 8);
}

inline void write_u32(Bytes& b, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

inline void write_u64(Bytes& b, std::size_t off, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

// NUL-terminated string starting at `off`, at most `max_len` characters.
inline std::optional<std::string> read_cstring(ByteSpan b, std::uint64_t off,
                                               std::size_t max_len = 512) {
  if (off >= b.size()) return std::nullopt;
  std::string out;
  for (std::uint64_t i = off; i < b.size() && out.size() <= max_len; ++i) {
    if (b[i] == 0) return out;
    out.push_back(static_cast<char>(b[i]));
  }
  return std::nullopt;
}

inline std::uint64_t align_up(std::uint64_t value, std::uint64_t alignment) {
  return alignment == 0 ? value : (value + alignment - 1) / alignment * alignment;
}

// Offsets of the headers that the parser and the editors share.
struct HeaderLayout {
  std::size_t pe_offset = 0;
  std::size_t coff_offset = 0;
  std::size_t optional_offset = 0;
  std::size_t optional_size = 0;
  std::size_t section_table_offset = 0;
  std::size_t num_sections = 0;
  bool pe32plus = false;
  std::size_t data_dir_offset = 0;  // 0 when absent
  std::size_t num_data_dirs = 0;
};

}  // namespace robustmal::detail
