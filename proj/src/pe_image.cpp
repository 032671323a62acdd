#include "robustmal/pe_image.hpp"

#include <algorithm>
#include <cstring>

#include "pe_internal.hpp"
#include "robustmal/error.hpp"

namespace robustmal {

namespace {

using detail::align_up;
using detail::write_u16;
using detail::write_u32;
using detail::write_u64;

constexpr std::size_t kPeOffset = 0x80;
constexpr std::size_t kDescriptorSize = 20;

std::size_t optional_header_size(bool pe32plus) { return pe32plus ? 240 : 224; }

struct GeneratedImports {
  Bytes content;
  std::uint32_t descriptors_size = 0;
  std::uint32_t iat_offset = 0;
  std::uint32_t iat_size = 0;
};

GeneratedImports build_imports(const std::vector<ImportedDll>& dlls, std::uint32_t base,
                               bool pe32plus) {
  const std::size_t thunk = pe32plus ? 8 : 4;
  GeneratedImports out;
  out.descriptors_size = static_cast<std::uint32_t>((dlls.size() + 1) * kDescriptorSize);

  std::size_t lookup_total = 0;
  for (const auto& d : dlls) lookup_total += (d.functions.size() + 1) * thunk;
  const std::size_t ilt_begin = out.descriptors_size;
  const std::size_t iat_begin = ilt_begin + lookup_total;
  std::size_t cursor = iat_begin + lookup_total;

  // Hint/name entries, then DLL names; both 2-byte aligned.
  std::vector<std::vector<std::size_t>> name_offsets(dlls.size());
  for (std::size_t i = 0; i < dlls.size(); ++i) {
    for (const auto& fn : dlls[i].functions) {
      name_offsets[i].push_back(cursor);
      cursor = align_up(cursor + 2 + fn.size() + 1, 2);
    }
  }
  std::vector<std::size_t> dll_name_offsets;
  for (const auto& d : dlls) {
    dll_name_offsets.push_back(cursor);
    cursor = align_up(cursor + d.name.size() + 1, 2);
  }

  out.content.assign(cursor, 0);
  Bytes& c = out.content;
  std::size_t ilt = ilt_begin;
  std::size_t iat = iat_begin;
  for (std::size_t i = 0; i < dlls.size(); ++i) {
    const std::size_t desc = i * kDescriptorSize;
    write_u32(c, desc, static_cast<std::uint32_t>(base + ilt));
    write_u32(c, desc + 12, static_cast<std::uint32_t>(base + dll_name_offsets[i]));
    write_u32(c, desc + 16, static_cast<std::uint32_t>(base + iat));
    for (std::size_t f = 0; f < dlls[i].functions.size(); ++f) {
      const std::uint64_t rva = base + name_offsets[i][f];
      if (pe32plus) {
        write_u64(c, ilt, rva);
        write_u64(c, iat, rva);
      } else {
        write_u32(c, ilt, static_cast<std::uint32_t>(rva));
        write_u32(c, iat, static_cast<std::uint32_t>(rva));
      }
      ilt += thunk;
      iat += thunk;
      const auto& fn = dlls[i].functions[f];
      std::memcpy(c.data() + name_offsets[i][f] + 2, fn.data(), fn.size());
    }
    ilt += thunk;
    iat += thunk;
    std::memcpy(c.data() + dll_name_offsets[i], dlls[i].name.data(), dlls[i].name.size());
  }
  out.iat_offset = static_cast<std::uint32_t>(iat_begin);
  out.iat_size = static_cast<std::uint32_t>(lookup_total);
  return out;
}

Bytes build_exports(const std::vector<std::string>& names, const std::string& dll_name,
                    std::uint32_t base, std::uint32_t entry_rva) {
  const std::size_t n = names.size();
  const std::size_t eat = 40;
  const std::size_t npt = eat + 4 * n;
  const std::size_t ord = npt + 4 * n;
  std::size_t cursor = ord + 2 * n;
  const std::size_t dll_name_at = cursor;
  cursor += dll_name.size() + 1;
  std::vector<std::size_t> name_at;
  for (const auto& s : names) {
    name_at.push_back(cursor);
    cursor += s.size() + 1;
  }
  Bytes c(cursor, 0);
  write_u32(c, 12, static_cast<std::uint32_t>(base + dll_name_at));
  write_u32(c, 16, 1);
  write_u32(c, 20, static_cast<std::uint32_t>(n));
  write_u32(c, 24, static_cast<std::uint32_t>(n));
  write_u32(c, 28, static_cast<std::uint32_t>(base + eat));
  write_u32(c, 32, static_cast<std::uint32_t>(base + npt));
  write_u32(c, 36, static_cast<std::uint32_t>(base + ord));
  std::memcpy(c.data() + dll_name_at, dll_name.data(), dll_name.size());
  for (std::size_t i = 0; i < n; ++i) {
    write_u32(c, eat + 4 * i, static_cast<std::uint32_t>(entry_rva + 16 * i));
    write_u32(c, npt + 4 * i, static_cast<std::uint32_t>(base + name_at[i]));
    write_u16(c, ord + 2 * i, static_cast<std::uint16_t>(i));
    std::memcpy(c.data() + name_at[i], names[i].data(), names[i].size());
  }
  return c;
}

struct PlacedSection {
  Bytes content;  // unpadded
  std::uint32_t virtual_size = 0;
  std::uint32_t raw_size = 0;
  std::uint32_t virtual_address = 0;
  std::uint32_t raw_pointer = 0;
  GeneratedImports imports;
};

std::uint32_t raw_size_for(const SectionSpec& spec, std::size_t content_size) {
  if (content_size == 0) return 0;
  if (spec.role == SectionRole::kImports) {
    return static_cast<std::uint32_t>(align_up(content_size, kImportSectionGranularity));
  }
  return static_cast<std::uint32_t>(align_up(content_size, kFileAlignment));
}

void validate(const ImageModel& model) {
  auto bad = [](const std::string& why) {
    throw Error(ErrorCode::kInvalidConfig, "invalid image model: " + why);
  };
  if (model.sections.empty()) bad("no sections");
  if (model.sections.size() > max_canonical_sections(model.pe32plus)) bad("too many sections");
  if (model.dos_stub.size() != 64) bad("DOS stub must be 64 bytes");
  int import_sections = 0;
  int export_sections = 0;
  for (const auto& s : model.sections) {
    if (s.name.size() > 8) bad("section name longer than 8 characters");
    if (s.role == SectionRole::kImports) ++import_sections;
    if (s.role == SectionRole::kExports) ++export_sections;
  }
  if (import_sections > 1 || export_sections > 1) bad("duplicate generated section");
  if (!model.imports.empty() && import_sections == 0) bad("imports without an import section");
  if (model.imports.empty() && import_sections == 1) bad("import section without imports");
  if (!model.exports.empty() && export_sections == 0) bad("exports without an export section");
  if (model.exports.empty() && export_sections == 1) bad("export section without exports");
  for (const auto& d : model.imports) {
    if (d.functions.empty()) bad("imported DLL without functions");
  }
}

}  // namespace

const Bytes& stock_dos_stub() {
  static const Bytes stub = [] {
    Bytes b = {0x0e, 0x1f, 0xba, 0x0e, 0x00, 0xb4, 0x09, 0xcd, 0x21, 0xb8, 0x01, 0x4c, 0xcd, 0x21};
    const char* msg = "This program cannot be run in DOS mode.\r\r\n$";
    b.insert(b.end(), msg, msg + std::strlen(msg));
    b.resize(64, 0);
    return b;
  }();
  return stub;
}

std::size_t max_canonical_sections(bool pe32plus) {
  return (kCanonicalHeaderSize - (kPeOffset + 4 + 20 + optional_header_size(pe32plus))) / 40;
}

Bytes make_certificate(ByteSpan payload) {
  const std::size_t length = 8 + payload.size();
  Bytes rec(align_up(length, 8), 0);
  write_u32(rec, 0, static_cast<std::uint32_t>(length));
  write_u16(rec, 4, 0x0200);
  write_u16(rec, 6, 0x0002);
  std::copy(payload.begin(), payload.end(), rec.begin() + 8);
  return rec;
}

Bytes serialize(const ImageModel& model) {
  validate(model);
  const std::size_t n = model.sections.size();
  std::vector<PlacedSection> placed(n);

  auto build = [&](std::uint32_t entry_rva) {
    std::uint64_t va = kSectionAlignment;
    std::uint64_t ptr = kCanonicalHeaderSize;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& spec = model.sections[i];
      auto& p = placed[i];
      p.virtual_address = static_cast<std::uint32_t>(va);
      switch (spec.role) {
        case SectionRole::kPlain:
          p.content = spec.data;
          p.virtual_size = spec.virtual_size != 0 ? spec.virtual_size
                                                  : static_cast<std::uint32_t>(spec.data.size());
          break;
        case SectionRole::kImports:
          p.imports = build_imports(model.imports, p.virtual_address, model.pe32plus);
          p.content = p.imports.content;
          p.virtual_size = static_cast<std::uint32_t>(p.content.size());
          break;
        case SectionRole::kExports:
          p.content = build_exports(model.exports, model.export_dll_name, p.virtual_address, entry_rva);
          p.virtual_size = static_cast<std::uint32_t>(p.content.size());
          break;
      }
      p.raw_size = raw_size_for(spec, p.content.size());
      p.raw_pointer = p.raw_size == 0 ? 0 : static_cast<std::uint32_t>(ptr);
      ptr += p.raw_size;
      va += align_up(std::max<std::uint64_t>({p.virtual_size, p.raw_size, 1}), kSectionAlignment);
    }
    return std::pair{va, ptr};
  };

  // Section addresses do not depend on the entry point, so a first pass fixes
  // the layout and the second pass fills in export addresses.
  build(0);
  std::uint32_t entry = placed[0].virtual_address;
  std::uint32_t base_of_code = 0;
  std::uint32_t base_of_data = 0;
  std::uint32_t size_of_code = 0;
  std::uint32_t size_of_init = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto flags = model.sections[i].characteristics;
    if ((flags & kScnCode) && base_of_code == 0) base_of_code = entry = placed[i].virtual_address;
    if (!(flags & kScnCode) && base_of_data == 0) base_of_data = placed[i].virtual_address;
    if (flags & kScnCode) size_of_code += placed[i].raw_size;
    if (flags & kScnInitializedData) size_of_init += placed[i].raw_size;
  }
  const auto [image_end, sections_end] = build(entry);

  const std::size_t cert_offset = sections_end;
  Bytes out(sections_end + model.certificate.size() + model.overlay.size(), 0);

  // DOS header and stub.
  out[0] = 'M';
  out[1] = 'Z';
  write_u16(out, 0x02, 0x90);
  write_u16(out, 0x04, 3);
  write_u16(out, 0x08, 4);
  write_u16(out, 0x0c, 0xffff);
  write_u16(out, 0x10, 0xb8);
  write_u16(out, 0x18, 0x40);
  write_u32(out, 0x3c, kPeOffset);
  std::copy(model.dos_stub.begin(), model.dos_stub.end(), out.begin() + 0x40);

  // COFF header.
  out[kPeOffset] = 'P';
  out[kPeOffset + 1] = 'E';
  const std::size_t coff = kPeOffset + 4;
  write_u16(out, coff, model.machine);
  write_u16(out, coff + 2, static_cast<std::uint16_t>(n));
  write_u32(out, coff + 4, model.timestamp);
  write_u16(out, coff + 16, static_cast<std::uint16_t>(optional_header_size(model.pe32plus)));
  write_u16(out, coff + 18, model.characteristics);

  // Optional header.
  const std::size_t opt = coff + 20;
  write_u16(out, opt, model.pe32plus ? 0x20b : 0x10b);
  out[opt + 2] = 14;
  write_u32(out, opt + 4, size_of_code);
  write_u32(out, opt + 8, size_of_init);
  write_u32(out, opt + 16, entry);
  write_u32(out, opt + 20, base_of_code);
  if (model.pe32plus) {
    write_u64(out, opt + 24, 0x140000000ULL);
  } else {
    write_u32(out, opt + 24, base_of_data);
    write_u32(out, opt + 28, 0x400000);
  }
  write_u32(out, opt + 32, kSectionAlignment);
  write_u32(out, opt + 36, kFileAlignment);
  write_u16(out, opt + 40, 6);
  write_u16(out, opt + 48, 6);
  write_u32(out, opt + 56, static_cast<std::uint32_t>(image_end));
  write_u32(out, opt + 60, kCanonicalHeaderSize);
  write_u16(out, opt + 68, 2);
  write_u16(out, opt + 70, 0x8140);
  std::size_t dirs = 0;
  if (model.pe32plus) {
    write_u64(out, opt + 72, 0x100000);
    write_u64(out, opt + 80, 0x1000);
    write_u64(out, opt + 88, 0x100000);
    write_u64(out, opt + 96, 0x1000);
    write_u32(out, opt + 108, kNumDataDirectories);
    dirs = opt + 112;
  } else {
    write_u32(out, opt + 72, 0x100000);
    write_u32(out, opt + 76, 0x1000);
    write_u32(out, opt + 80, 0x100000);
    write_u32(out, opt + 84, 0x1000);
    write_u32(out, opt + 92, kNumDataDirectories);
    dirs = opt + 96;
  }
  auto set_dir = [&](std::size_t index, std::uint32_t va, std::uint32_t size) {
    write_u32(out, dirs + 8 * index, va);
    write_u32(out, dirs + 8 * index + 4, size);
  };

  // Section table and contents.
  const std::size_t table = opt + optional_header_size(model.pe32plus);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& spec = model.sections[i];
    const auto& p = placed[i];
    const std::size_t h = table + 40 * i;
    std::copy(spec.name.begin(), spec.name.end(), out.begin() + static_cast<std::ptrdiff_t>(h));
    write_u32(out, h + 8, p.virtual_size);
    write_u32(out, h + 12, p.virtual_address);
    write_u32(out, h + 16, p.raw_size);
    write_u32(out, h + 20, p.raw_pointer);
    write_u32(out, h + 36, spec.characteristics);
    std::copy(p.content.begin(), p.content.end(), out.begin() + p.raw_pointer);

    switch (spec.role) {
      case SectionRole::kImports:
        set_dir(kDirImport, p.virtual_address, p.imports.descriptors_size);
        set_dir(kDirIat, p.virtual_address + p.imports.iat_offset, p.imports.iat_size);
        break;
      case SectionRole::kExports:
        set_dir(kDirExport, p.virtual_address, p.virtual_size);
        break;
      case SectionRole::kPlain:
        if (spec.directory >= 0) {
          set_dir(static_cast<std::size_t>(spec.directory), p.virtual_address, p.virtual_size);
        }
        break;
    }
  }

  if (!model.certificate.empty()) {
    std::copy(model.certificate.begin(), model.certificate.end(), out.begin() + cert_offset);
    set_dir(kDirSecurity, static_cast<std::uint32_t>(cert_offset),
            static_cast<std::uint32_t>(model.certificate.size()));
  }
  std::copy(model.overlay.begin(), model.overlay.end(),
            out.begin() + static_cast<std::ptrdiff_t>(cert_offset + model.certificate.size()));
  return out;
}

std::optional<ImageModel> model_from_bytes(ByteSpan bytes) {
  PEView view;
  try {
    view = parse_pe(bytes);
  } catch (const Error&) {
    return std::nullopt;
  }
  if (detail::read_u32(bytes, 0x3c) != kPeOffset || view.dos_stub_bytes.size() != 64) {
    return std::nullopt;
  }
  if (!view.warnings.empty()) return std::nullopt;

  ImageModel model;
  model.pe32plus = view.is_pe32plus;
  model.machine = view.machine;
  model.timestamp = view.timestamp;
  model.characteristics = view.characteristics;
  model.dos_stub = view.dos_stub_bytes;
  const auto& dirs = view.data_directories;
  for (const auto& s : view.sections) {
    SectionSpec spec;
    spec.name = s.name;
    spec.characteristics = s.characteristics;
    if (dirs[kDirImport].virtual_address == s.virtual_address && dirs[kDirImport].size != 0) {
      spec.role = SectionRole::kImports;
    } else if (dirs[kDirExport].virtual_address == s.virtual_address && dirs[kDirExport].size != 0) {
      spec.role = SectionRole::kExports;
    } else {
      spec.data = s.raw_bytes;
      spec.virtual_size = static_cast<std::uint32_t>(s.virtual_size);
      for (std::size_t d = 0; d < kNumDataDirectories; ++d) {
        if (d == kDirImport || d == kDirExport || d == kDirSecurity || d == kDirIat) continue;
        if (dirs[d].size != 0 && dirs[d].virtual_address == s.virtual_address) {
          spec.directory = static_cast<int>(d);
          break;
        }
      }
    }
    model.sections.push_back(std::move(spec));
  }
  for (const auto& imp : view.imports) {
    if (model.imports.empty() || model.imports.back().name != imp.dll) {
      model.imports.push_back({imp.dll, {}});
    }
    model.imports.back().functions.push_back(imp.function);
  }
  model.exports = view.exports;
  model.export_dll_name = view.export_dll_name;

  std::uint64_t tail = view.overlay_offset;
  if (view.is_signed) {
    const auto& sec = dirs[kDirSecurity];
    if (sec.virtual_address != tail || !detail::in_range(bytes, sec.virtual_address, sec.size)) {
      return std::nullopt;
    }
    model.certificate.assign(bytes.begin() + sec.virtual_address,
                             bytes.begin() + sec.virtual_address + sec.size);
    tail += sec.size;
  }
  model.overlay.assign(bytes.begin() + static_cast<std::ptrdiff_t>(tail), bytes.end());

  try {
    const Bytes again = serialize(model);
    if (!std::equal(again.begin(), again.end(), bytes.begin(), bytes.end())) return std::nullopt;
  } catch (const Error&) {
    return std::nullopt;
  }
  return model;
}

}  // namespace robustmal
