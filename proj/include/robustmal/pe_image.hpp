#pragma once

#include <optional>
#include <string>
#include <vector>

#include "robustmal/pe.hpp"

namespace robustmal {

// Canonical 64-byte DOS stub emitted by common linkers ("This program cannot
// be run in DOS mode.").
const Bytes& stock_dos_stub();

inline constexpr std::uint16_t kMachineI386 = 0x014c;
inline constexpr std::uint16_t kMachineAmd64 = 0x8664;
inline constexpr std::uint16_t kMachineArm = 0x01c0;
inline constexpr std::uint16_t kMachineArm64 = 0xaa64;

inline constexpr std::uint32_t kFileAlignment = 0x200;
inline constexpr std::uint32_t kSectionAlignment = 0x1000;
inline constexpr std::uint32_t kCanonicalHeaderSize = 0x400;
inline constexpr std::uint32_t kImportSectionGranularity = 0x1000;

struct ImportedDll {
  std::string name;
  std::vector<std::string> functions;
};

enum class SectionRole {
  kPlain,    // raw data supplied by the caller
  kImports,  // contents generated from ImageModel::imports
  kExports,  // contents generated from ImageModel::exports
};

struct SectionSpec {
  std::string name;
  Bytes data;  // ignored for generated roles
  std::uint32_t virtual_size = 0;  // ignored for generated roles
  std::uint32_t characteristics = kScnInitializedData | kScnRead;
  SectionRole role = SectionRole::kPlain;
  int directory = -1;  // data directory pointing at this section (plain role only)
};

// Editable description of a canonical image: the layout produced by
// serialize() is a pure function of this struct, so model edits followed by
// serialization are how structural transformations are realized.
struct ImageModel {
  bool pe32plus = false;
  std::uint16_t machine = kMachineI386;
  std::uint32_t timestamp = 0;
  std::uint16_t characteristics = 0x0102;
  Bytes dos_stub = stock_dos_stub();
  std::vector<SectionSpec> sections;
  std::vector<ImportedDll> imports;
  std::vector<std::string> exports;
  std::string export_dll_name;
  Bytes certificate;  // full WIN_CERTIFICATE record, empty when unsigned
  Bytes overlay;
};

// Maximum number of sections that fit in the canonical header area.
std::size_t max_canonical_sections(bool pe32plus);

Bytes serialize(const ImageModel& model);

// Reconstructs the model of a canonical image. Returns nullopt when the bytes
// are not exactly what serialize() would produce for any model, which is the
// case for most third-party binaries.
std::optional<ImageModel> model_from_bytes(ByteSpan bytes);

// WIN_CERTIFICATE record wrapping `payload`, padded to 8 bytes.
Bytes make_certificate(ByteSpan payload);

}  // namespace robustmal
