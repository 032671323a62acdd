#include <algorithm>
#include <cctype>
#include <cmath>

#include "pe_internal.hpp"
#include "robustmal/error.hpp"
#include "robustmal/pe.hpp"

namespace robustmal {

namespace detail {

namespace {

constexpr std::size_t kDosHeaderSize = 64;
constexpr std::size_t kCoffHeaderSize = 20;
constexpr std::size_t kSectionHeaderSize = 40;
constexpr std::uint16_t kMagicPe32 = 0x10b;
constexpr std::uint16_t kMagicPe32Plus = 0x20b;
constexpr std::size_t kMaxImportedDlls = 4096;
constexpr std::size_t kMaxImportedFunctions = 65536;

[[noreturn]] void malformed(const std::string& why) {
  throw Error(ErrorCode::kMalformedPE, "malformed PE: " + why);
}

}  // namespace

HeaderLayout locate_headers(ByteSpan bytes, bool* truncated_sections) {
  if (bytes.size() < kDosHeaderSize) malformed("input shorter than a DOS header");
  if (bytes[0] != 'M' || bytes[1] != 'Z') malformed("missing MZ magic");

  HeaderLayout layout;
  layout.pe_offset = read_u32(bytes, 0x3c);
  if (!in_range(bytes, layout.pe_offset, 4 + kCoffHeaderSize)) malformed("PE offset out of range");
  if (bytes[layout.pe_offset] != 'P' || bytes[layout.pe_offset + 1] != 'E' ||
      bytes[layout.pe_offset + 2] != 0 || bytes[layout.pe_offset + 3] != 0) {
    malformed("missing PE signature");
  }
  layout.coff_offset = layout.pe_offset + 4;
  const std::size_t declared_sections = read_u16(bytes, layout.coff_offset + 2);
  layout.optional_size = read_u16(bytes, layout.coff_offset + 16);
  layout.optional_offset = layout.coff_offset + kCoffHeaderSize;
  layout.section_table_offset = layout.optional_offset + layout.optional_size;

  if (in_range(bytes, layout.optional_offset, 2) && layout.optional_size >= 2) {
    const std::uint16_t magic = read_u16(bytes, layout.optional_offset);
    layout.pe32plus = magic == kMagicPe32Plus;
    const std::size_t dir_rel = layout.pe32plus ? 112 : 96;
    const std::size_t count_rel = layout.pe32plus ? 108 : 92;
    if ((magic == kMagicPe32 || magic == kMagicPe32Plus) && layout.optional_size >= dir_rel &&
        in_range(bytes, layout.optional_offset, dir_rel)) {
      const std::size_t declared_dirs = read_u32(bytes, layout.optional_offset + count_rel);
      const std::size_t room = (layout.optional_size - dir_rel) / 8;
      layout.num_data_dirs = std::min({declared_dirs, room, kNumDataDirectories});
      layout.data_dir_offset = layout.optional_offset + dir_rel;
    }
  }

  if (declared_sections == 0) malformed("no sections");
  std::size_t available = 0;
  if (layout.section_table_offset < bytes.size()) {
    available = (bytes.size() - layout.section_table_offset) / kSectionHeaderSize;
  }
  if (available == 0) malformed("section table truncated");
  layout.num_sections = std::min(declared_sections, available);
  if (truncated_sections != nullptr) *truncated_sections = layout.num_sections < declared_sections;
  return layout;
}

std::vector<SectionHeader> read_section_headers(ByteSpan bytes, const HeaderLayout& layout) {
  std::vector<SectionHeader> out;
  out.reserve(layout.num_sections);
  for (std::size_t i = 0; i < layout.num_sections; ++i) {
    const std::size_t off = layout.section_table_offset + i * kSectionHeaderSize;
    SectionHeader h;
    for (std::size_t c = 0; c < 8 && bytes[off + c] != 0; ++c) {
      h.name.push_back(static_cast<char>(bytes[off + c]));
    }
    h.virtual_size = read_u32(bytes, off + 8);
    h.virtual_address = read_u32(bytes, off + 12);
    h.raw_size = read_u32(bytes, off + 16);
    h.raw_pointer = read_u32(bytes, off + 20);
    h.characteristics = read_u32(bytes, off + 36);
    out.push_back(std::move(h));
  }
  return out;
}

std::optional<std::uint64_t> rva_to_offset(const std::vector<SectionHeader>& sections,
                                           std::uint32_t rva, std::uint64_t file_size) {
  for (const auto& s : sections) {
    const std::uint64_t extent = std::max(s.virtual_size, s.raw_size);
    if (rva >= s.virtual_address && rva < static_cast<std::uint64_t>(s.virtual_address) + extent) {
      const std::uint64_t delta = rva - s.virtual_address;
      if (delta >= s.raw_size) return std::nullopt;
      const std::uint64_t off = static_cast<std::uint64_t>(s.raw_pointer) + delta;
      if (off >= file_size) return std::nullopt;
      return off;
    }
  }
  return std::nullopt;
}

std::uint64_t sections_end(const std::vector<SectionHeader>& sections, std::uint64_t file_size) {
  std::uint64_t end = 0;
  for (const auto& s : sections) {
    if (s.raw_size == 0) continue;
    end = std::max(end, std::min<std::uint64_t>(static_cast<std::uint64_t>(s.raw_pointer) + s.raw_size,
                                                file_size));
  }
  return end;
}

}  // namespace detail

namespace {

using detail::read_u16;
using detail::read_u32;
using detail::SectionHeader;

void parse_imports(ByteSpan bytes, const std::vector<SectionHeader>& sections, bool pe32plus,
                   const DataDirectory& dir, PEView& view) {
  if (dir.virtual_address == 0 || dir.size == 0) return;
  const auto base = detail::rva_to_offset(sections, dir.virtual_address, bytes.size());
  if (!base) {
    view.warnings.push_back("import directory not mapped to file data");
    return;
  }
  const std::size_t thunk_size = pe32plus ? 8 : 4;
  const std::uint64_t ordinal_flag = pe32plus ? (1ULL << 63) : (1ULL << 31);
  std::size_t total = 0;
  for (std::size_t d = 0; d < detail::kMaxImportedDlls; ++d) {
    const std::uint64_t desc = *base + d * 20;
    if (!detail::in_range(bytes, desc, 20)) {
      view.warnings.push_back("import descriptor table truncated");
      return;
    }
    const std::uint32_t original_first_thunk = read_u32(bytes, desc);
    const std::uint32_t name_rva = read_u32(bytes, desc + 12);
    const std::uint32_t first_thunk = read_u32(bytes, desc + 16);
    if (original_first_thunk == 0 && name_rva == 0 && first_thunk == 0) return;

    std::string dll = "<unknown>";
    if (auto off = detail::rva_to_offset(sections, name_rva, bytes.size())) {
      if (auto s = detail::read_cstring(bytes, *off)) dll = *s;
    } else {
      view.warnings.push_back("import DLL name not mapped");
    }

    const std::uint32_t lookup = original_first_thunk != 0 ? original_first_thunk : first_thunk;
    auto thunk_off = detail::rva_to_offset(sections, lookup, bytes.size());
    if (!thunk_off) {
      view.warnings.push_back("import lookup table of " + dll + " not mapped");
      continue;
    }
    for (std::size_t t = 0;; ++t) {
      const std::uint64_t at = *thunk_off + t * thunk_size;
      if (!detail::in_range(bytes, at, thunk_size)) {
        view.warnings.push_back("import lookup table of " + dll + " truncated");
        break;
      }
      const std::uint64_t thunk = pe32plus ? detail::read_u64(bytes, at) : read_u32(bytes, at);
      if (thunk == 0) break;
      if (++total > detail::kMaxImportedFunctions) {
        view.warnings.push_back("import table too large; truncated");
        return;
      }
      if (thunk & ordinal_flag) {
        view.imports.push_back({dll, "#" + std::to_string(thunk & 0xffff)});
        continue;
      }
      auto name_off = detail::rva_to_offset(sections, static_cast<std::uint32_t>(thunk), bytes.size());
      std::optional<std::string> fn;
      if (name_off) fn = detail::read_cstring(bytes, *name_off + 2);
      if (!fn) {
        view.warnings.push_back("import name of " + dll + " unreadable");
        continue;
      }
      view.imports.push_back({dll, *fn});
    }
  }
}

void parse_exports(ByteSpan bytes, const std::vector<SectionHeader>& sections,
                   const DataDirectory& dir, PEView& view) {
  if (dir.virtual_address == 0 || dir.size == 0) return;
  const auto base = detail::rva_to_offset(sections, dir.virtual_address, bytes.size());
  if (!base || !detail::in_range(bytes, *base, 40)) {
    view.warnings.push_back("export directory not mapped to file data");
    return;
  }
  if (auto off = detail::rva_to_offset(sections, read_u32(bytes, *base + 12), bytes.size())) {
    if (auto s = detail::read_cstring(bytes, *off)) view.export_dll_name = *s;
  }
  const std::uint32_t num_names = read_u32(bytes, *base + 24);
  const std::uint32_t names_rva = read_u32(bytes, *base + 32);
  if (num_names == 0) return;
  if (num_names > 65536) {
    view.warnings.push_back("export name count implausible; ignored");
    return;
  }
  auto names_off = detail::rva_to_offset(sections, names_rva, bytes.size());
  if (!names_off) {
    view.warnings.push_back("export name table not mapped");
    return;
  }
  for (std::uint32_t i = 0; i < num_names; ++i) {
    auto rva = detail::try_u32(bytes, *names_off + 4ULL * i);
    if (!rva) {
      view.warnings.push_back("export name table truncated");
      return;
    }
    auto off = detail::rva_to_offset(sections, *rva, bytes.size());
    std::optional<std::string> name;
    if (off) name = detail::read_cstring(bytes, *off);
    if (!name) {
      view.warnings.push_back("export name unreadable");
      continue;
    }
    view.exports.push_back(*name);
  }
}

}  // namespace

PEView parse_pe(ByteSpan bytes) {
  bool truncated = false;
  const auto layout = detail::locate_headers(bytes, &truncated);
  PEView view;
  if (truncated) view.warnings.push_back("section table truncated; trailing sections dropped");

  view.total_size = bytes.size();
  const std::size_t stub_end = std::min<std::size_t>(layout.pe_offset, bytes.size());
  if (stub_end > 0x40) view.dos_stub_bytes.assign(bytes.begin() + 0x40, bytes.begin() + stub_end);

  view.machine = read_u16(bytes, layout.coff_offset);
  view.timestamp = read_u32(bytes, layout.coff_offset + 4);
  view.characteristics = read_u16(bytes, layout.coff_offset + 18);
  view.is_pe32plus = layout.pe32plus;

  const std::size_t opt = layout.optional_offset;
  if (layout.optional_size >= 64 && detail::in_range(bytes, opt, 64)) {
    view.entry_point = read_u32(bytes, opt + 16);
    view.size_of_image = read_u32(bytes, opt + 56);
    view.size_of_headers = read_u32(bytes, opt + 60);
  } else {
    view.warnings.push_back("optional header truncated; defaults used");
  }
  for (std::size_t i = 0; i < layout.num_data_dirs; ++i) {
    const std::size_t off = layout.data_dir_offset + i * 8;
    if (!detail::in_range(bytes, off, 8)) break;
    view.data_directories[i] = {read_u32(bytes, off), read_u32(bytes, off + 4)};
  }

  const auto headers = detail::read_section_headers(bytes, layout);
  view.sections.reserve(headers.size());
  for (const auto& h : headers) {
    SectionView s;
    s.name = h.name;
    s.virtual_size = h.virtual_size;
    s.virtual_address = h.virtual_address;
    s.raw_pointer = h.raw_pointer;
    s.characteristics = h.characteristics;
    std::uint64_t begin = std::min<std::uint64_t>(h.raw_pointer, bytes.size());
    std::uint64_t end = std::min<std::uint64_t>(begin + h.raw_size, bytes.size());
    if (end - begin < h.raw_size) {
      view.warnings.push_back("section " + h.name + " raw data truncated");
    }
    s.raw_bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(begin),
                       bytes.begin() + static_cast<std::ptrdiff_t>(end));
    s.raw_size = s.raw_bytes.size();
    view.sections.push_back(std::move(s));
  }

  const auto& security = view.data_directories[kDirSecurity];
  view.is_signed = security.virtual_address != 0 && security.size != 0;
  const auto& resources = view.data_directories[kDirResource];
  view.has_resources = resources.virtual_address != 0 && resources.size != 0;

  const std::uint64_t end = detail::sections_end(headers, bytes.size());
  std::uint64_t overlay = bytes.size() > end ? bytes.size() - end : 0;
  if (view.is_signed && security.virtual_address >= end &&
      detail::in_range(bytes, security.virtual_address, security.size)) {
    overlay -= security.size;
  }
  view.overlay_offset = end;
  view.overlay_size = overlay;

  parse_imports(bytes, headers, layout.pe32plus, view.data_directories[kDirImport], view);
  parse_exports(bytes, headers, view.data_directories[kDirExport], view);

  for (std::uint8_t b : bytes) ++view.byte_counts[b];
  view.strings = extract_strings(bytes);
  return view;
}

double shannon_entropy(ByteSpan bytes) {
  if (bytes.empty()) return 0.0;
  std::array<std::uint64_t, 256> counts{};
  for (std::uint8_t b : bytes) ++counts[b];
  const double n = static_cast<double>(bytes.size());
  double h = 0.0;
  for (std::uint64_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return std::clamp(h, 0.0, 8.0);
}

double total_entropy(ByteSpan bytes) {
  return shannon_entropy(bytes) * static_cast<double>(bytes.size());
}

std::vector<std::string> extract_strings(ByteSpan bytes) {
  std::vector<std::string> out;
  std::string run;
  auto flush = [&] {
    if (run.size() >= kMinStringLength) out.push_back(run);
    run.clear();
  };
  for (std::uint8_t b : bytes) {
    if (b >= 0x20 && b <= 0x7e) {
      run.push_back(static_cast<char>(b));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::string normalize_dll_name(std::string_view dll) {
  std::string out(dll);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (out.size() > 4 && out.ends_with(".dll")) out.resize(out.size() - 4);
  return out;
}

}  // namespace robustmal
