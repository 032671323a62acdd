#pragma once

#include <optional>
#include <vector>

#include "byte_io.hpp"

namespace robustmal::detail {

struct SectionHeader {
  std::string name;
  std::uint32_t virtual_size = 0;
  std::uint32_t virtual_address = 0;
  std::uint32_t raw_size = 0;
  std::uint32_t raw_pointer = 0;
  std::uint32_t characteristics = 0;
};

// Validates the DOS/PE/COFF headers and returns their offsets. Throws
// Error(kMalformedPE). Section count is clipped to what the file holds;
// `truncated_sections` reports whether clipping happened.
HeaderLayout locate_headers(ByteSpan bytes, bool* truncated_sections = nullptr);

std::vector<SectionHeader> read_section_headers(ByteSpan bytes, const HeaderLayout& layout);

std::optional<std::uint64_t> rva_to_offset(const std::vector<SectionHeader>& sections,
                                           std::uint32_t rva, std::uint64_t file_size);

// End of the furthest section raw data, clipped to the file.
std::uint64_t sections_end(const std::vector<SectionHeader>& sections, std::uint64_t file_size);

}  // namespace robustmal::detail
