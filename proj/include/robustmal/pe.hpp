#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace robustmal {

using Bytes = std::vector<std::uint8_t>;
using ByteSpan = std::span<const std::uint8_t>;

inline constexpr std::size_t kNumDataDirectories = 16;
inline constexpr std::size_t kMinStringLength = 5;

// Data directory indices used throughout the code base.
enum DataDirectoryIndex : std::size_t {
  kDirExport = 0,
  kDirImport = 1,
  kDirResource = 2,
  kDirException = 3,
  kDirSecurity = 4,
  kDirBaseReloc = 5,
  kDirDebug = 6,
  kDirTls = 9,
  kDirIat = 12,
};

// Section characteristic bits.
inline constexpr std::uint32_t kScnCode = 0x00000020;
inline constexpr std::uint32_t kScnInitializedData = 0x00000040;
inline constexpr std::uint32_t kScnExecute = 0x20000000;
inline constexpr std::uint32_t kScnRead = 0x40000000;
inline constexpr std::uint32_t kScnWrite = 0x80000000;

struct SectionView {
  std::string name;
  std::uint64_t raw_size = 0;  // == raw_bytes.size()
  std::uint64_t virtual_size = 0;
  std::uint32_t virtual_address = 0;
  std::uint32_t raw_pointer = 0;
  std::uint32_t characteristics = 0;
  Bytes raw_bytes;
};

struct ImportEntry {
  std::string dll;
  std::string function;

  bool operator==(const ImportEntry&) const = default;
};

struct DataDirectory {
  std::uint32_t virtual_address = 0;
  std::uint32_t size = 0;

  bool operator==(const DataDirectory&) const = default;
};

// Structured, read-only view of a PE image. Every field is derived from the
// bytes; nothing here is authoritative for re-serialization.
struct PEView {
  Bytes dos_stub_bytes;
  bool is_signed = false;
  bool has_resources = false;
  bool is_pe32plus = false;
  std::uint16_t machine = 0;
  std::uint32_t timestamp = 0;
  std::uint16_t characteristics = 0;
  std::uint32_t entry_point = 0;
  std::uint32_t size_of_image = 0;
  std::uint32_t size_of_headers = 0;
  std::vector<SectionView> sections;
  std::vector<ImportEntry> imports;
  std::vector<std::string> exports;
  std::string export_dll_name;
  std::array<DataDirectory, kNumDataDirectories> data_directories{};
  std::uint64_t overlay_offset = 0;
  std::uint64_t overlay_size = 0;
  std::uint64_t total_size = 0;
  std::vector<std::string> strings;
  std::array<std::uint64_t, 256> byte_counts{};
  std::vector<std::string> warnings;
};

// Parses a PE32 or PE32+ image. Throws Error(kMalformedPE) when the input has
// no MZ magic, a PE header offset outside the file, or a section table that
// cannot be recovered. Recoverable problems are reported in `warnings`.
PEView parse_pe(ByteSpan bytes);

// Shannon entropy of the byte-value distribution in bits per byte.
double shannon_entropy(ByteSpan bytes);

// Entropy rate times length; non-decreasing when bytes are appended.
double total_entropy(ByteSpan bytes);

// Printable ASCII runs of at least kMinStringLength characters.
std::vector<std::string> extract_strings(ByteSpan bytes);

// Lower-cased DLL name with a trailing ".dll" removed.
std::string normalize_dll_name(std::string_view dll);

}  // namespace robustmal
