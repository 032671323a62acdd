#include "robustmal/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "robustmal/error.hpp"
#include "robustmal/pe_image.hpp"

namespace robustmal {

namespace {

constexpr double kMaxExactInteger = 9007199254740992.0;  // 2^53

double as_real(std::uint64_t v) {
  return std::min(static_cast<double>(v), kMaxExactInteger);
}

const char* const kManualSections[] = {".text", ".data", ".rsrc", ".rdata"};

const char* const kDirectoryNames[kNumDataDirectories] = {
    "export",    "import",      "resource",     "exception", "security",     "basereloc",
    "debug",     "architecture", "globalptr",   "tls",       "load_config",  "bound_import",
    "iat",       "delay_import", "clr",         "reserved"};

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

struct SchemaBuilder {
  FeatureSchema schema;

  void add(std::string name, FeatureGroup g, bool monotone, bool histogram = false) {
    schema.names.push_back(std::move(name));
    schema.groups.push_back(g);
    schema.monotone_claimed.push_back(monotone);
    schema.normalized_histogram.push_back(histogram);
  }

  FeatureSchema finish(MappingId id) {
    schema.mapping_id = id;
    schema.dimension = schema.names.size();
    return std::move(schema);
  }
};

FeatureSchema build_manual_schema() {
  SchemaBuilder b;
  const auto g = FeatureGroup::kManual;
  b.add("dos_stub_modified", g, true);
  b.add("has_no_signature", g, true);
  b.add("has_resources", g, true);
  b.add("num_sections", g, true);
  for (const char* s : kManualSections) {
    const std::string base = std::string(s).substr(1);
    b.add("size_" + base, g, true);
    b.add("entropy_" + base, g, true);
  }
  for (const auto& dll : manual_tracked_dlls()) b.add("imports_" + dll, g, true);
  b.add("imports_other", g, true);
  b.add("imports_total", g, true);
  for (const auto& kw : manual_keywords()) b.add("kw_" + kw, g, true);
  b.add("num_dlls", g, true);
  b.add("total_section_size", g, true);
  return b.finish(MappingId::kManual);
}

FeatureSchema build_composite_schema() {
  SchemaBuilder b;
  for (std::size_t i = 0; i < kByteGroupSize; ++i) {
    b.add(numbered("byte_hist_", i, 3), FeatureGroup::kByte, false, true);
  }
  for (std::size_t i = 0; i < 96; ++i) {
    b.add(numbered("str_char_hist_", i, 2), FeatureGroup::kStrings, false, true);
  }
  b.add("str_count", FeatureGroup::kStrings, true);
  b.add("str_avg_len", FeatureGroup::kStrings, false);
  b.add("str_max_len", FeatureGroup::kStrings, true);
  b.add("str_entropy", FeatureGroup::kStrings, false);

  const auto gen = FeatureGroup::kGeneral;
  b.add("general_total_size", gen, true);
  b.add("general_overlay_size", gen, true);
  b.add("general_num_imports", gen, true);
  b.add("general_num_exports", gen, true);
  b.add("general_has_signature", gen, false);
  b.add("general_has_resources", gen, false);
  b.add("general_num_strings", gen, true);
  b.add("general_num_sections", gen, true);

  const auto hdr = FeatureGroup::kHeader;
  for (const char* m : {"i386", "amd64", "arm", "arm64", "other"}) {
    b.add(std::string("hdr_machine_") + m, hdr, false);
  }
  b.add("hdr_timestamp", hdr, false);
  for (std::size_t i = 0; i < 16; ++i) b.add(numbered("hdr_char_bit_", i, 2), hdr, false);
  b.add("hdr_size_of_headers", hdr, true);
  b.add("hdr_size_of_image", hdr, true);

  for (std::size_t s = 0; s < kCompositeSectionSlots; ++s) {
    const std::string p = "sec" + std::to_string(s) + "_";
    b.add(p + "raw_size", FeatureGroup::kSection, true);
    b.add(p + "virtual_size", FeatureGroup::kSection, true);
    b.add(p + "entropy", FeatureGroup::kSection, false);
    b.add(p + "write", FeatureGroup::kSection, false);
    b.add(p + "exec", FeatureGroup::kSection, false);
  }
  for (std::size_t i = 0; i < kImportBuckets; ++i) {
    b.add(numbered("imp_bucket_", i, 3), FeatureGroup::kImports, true);
  }
  for (std::size_t i = 0; i < kExportBuckets; ++i) {
    b.add(numbered("exp_bucket_", i, 2), FeatureGroup::kExports, true);
  }
  b.add("exp_count", FeatureGroup::kExports, true);
  for (const char* d : kDirectoryNames) {
    b.add(std::string("dd_") + d + "_size", FeatureGroup::kDataDirectories, true);
    b.add(std::string("dd_") + d + "_present", FeatureGroup::kDataDirectories, false);
  }
  return b.finish(MappingId::kComposite);
}

}  // namespace

std::string_view mapping_name(MappingId id) {
  return id == MappingId::kManual ? "manual" : "composite";
}

MappingId parse_mapping(std::string_view name) {
  if (name == "manual") return MappingId::kManual;
  if (name == "composite") return MappingId::kComposite;
  throw Error(ErrorCode::kUnknownMapping, "unknown feature mapping: " + std::string(name));
}

std::string_view group_name(FeatureGroup g) {
  switch (g) {
    case FeatureGroup::kManual: return "Manual";
    case FeatureGroup::kByte: return "Byte";
    case FeatureGroup::kStrings: return "Strings";
    case FeatureGroup::kGeneral: return "General";
    case FeatureGroup::kHeader: return "Header";
    case FeatureGroup::kSection: return "Section";
    case FeatureGroup::kImports: return "Imports";
    case FeatureGroup::kExports: return "Exports";
    case FeatureGroup::kDataDirectories: return "DataDirectories";
  }
  return "?";
}

std::size_t FeatureSchema::index_of(std::string_view name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    throw Error(ErrorCode::kInvalidConfig, "no feature named " + std::string(name));
  }
  return static_cast<std::size_t>(it - names.begin());
}

const std::vector<std::string>& manual_tracked_dlls() {
  static const std::vector<std::string> dlls = {
      "kernel32", "user32", "shell32", "advapi32", "gdi32",    "ole32",   "oleaut32", "ntdll",
      "winmm",    "wininet", "urlmon", "comctl32", "mscoree", "gdiplus", "msvbvm50"};
  return dlls;
}

const std::vector<std::string>& manual_keywords() {
  static const std::vector<std::string> kws = {"Process", "Thread", "Get",     "Set",   "File",
                                               "Write",   "System", "Console", "Delete"};
  return kws;
}

const FeatureSchema& feature_schema(MappingId id) {
  static const FeatureSchema manual = build_manual_schema();
  static const FeatureSchema composite = build_composite_schema();
  return id == MappingId::kManual ? manual : composite;
}

FeatureVector extract_manual(const PEView& view) {
  std::vector<double> f;
  f.reserve(kManualDimension);
  const Bytes& stock = stock_dos_stub();
  const bool stub_ok = view.dos_stub_bytes.size() >= stock.size() &&
                       std::equal(stock.begin(), stock.end(), view.dos_stub_bytes.begin());
  f.push_back(stub_ok ? 0.0 : 1.0);
  f.push_back(view.is_signed ? 0.0 : 1.0);
  f.push_back(view.has_resources ? 1.0 : 0.0);
  f.push_back(as_real(view.sections.size()));

  for (const char* name : kManualSections) {
    double size = 0.0;
    double entropy = 0.0;
    for (const auto& s : view.sections) {
      if (s.name != name) continue;
      size += as_real(s.raw_size);
      entropy += total_entropy(s.raw_bytes);
    }
    f.push_back(size);
    f.push_back(entropy);
  }

  const auto& tracked = manual_tracked_dlls();
  std::vector<double> per_dll(tracked.size(), 0.0);
  double other = 0.0;
  std::vector<std::string> distinct;
  for (const auto& imp : view.imports) {
    const std::string dll = normalize_dll_name(imp.dll);
    auto it = std::find(tracked.begin(), tracked.end(), dll);
    if (it != tracked.end()) {
      per_dll[static_cast<std::size_t>(it - tracked.begin())] += 1.0;
    } else {
      other += 1.0;
    }
    if (std::find(distinct.begin(), distinct.end(), dll) == distinct.end()) distinct.push_back(dll);
  }
  f.insert(f.end(), per_dll.begin(), per_dll.end());
  f.push_back(other);
  f.push_back(as_real(view.imports.size()));
  for (const auto& kw : manual_keywords()) {
    double count = 0.0;
    for (const auto& imp : view.imports) {
      if (imp.function.find(kw) != std::string::npos) count += 1.0;
    }
    f.push_back(count);
  }
  f.push_back(as_real(distinct.size()));
  double total = 0.0;
  for (const auto& s : view.sections) total += as_real(s.raw_size);
  f.push_back(total);
  return {std::move(f), MappingId::kManual};
}

FeatureVector extract_composite(const PEView& view) {
  std::vector<double> f;
  f.reserve(kCompositeDimension);

  // Byte: normalized histogram over the whole file.
  std::uint64_t total_bytes = 0;
  for (auto c : view.byte_counts) total_bytes += c;
  for (auto c : view.byte_counts) {
    f.push_back(total_bytes == 0 ? 0.0
                                 : static_cast<double>(c) / static_cast<double>(total_bytes));
  }

  // Strings: printable-character histogram plus summary statistics.
  std::array<std::uint64_t, 96> chars{};
  std::uint64_t char_total = 0;
  std::size_t max_len = 0;
  for (const auto& s : view.strings) {
    for (unsigned char c : s) ++chars[static_cast<std::size_t>(c - 0x20)];
    char_total += s.size();
    max_len = std::max(max_len, s.size());
  }
  double char_entropy = 0.0;
  for (auto c : chars) {
    const double p = char_total == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(char_total);
    f.push_back(p);
    if (p > 0.0) char_entropy -= p * std::log2(p);
  }
  f.push_back(as_real(view.strings.size()));
  f.push_back(view.strings.empty() ? 0.0
                                   : static_cast<double>(char_total) /
                                         static_cast<double>(view.strings.size()));
  f.push_back(as_real(max_len));
  f.push_back(char_entropy);

  // General.
  f.push_back(as_real(view.total_size));
  f.push_back(as_real(view.overlay_size));
  f.push_back(as_real(view.imports.size()));
  f.push_back(as_real(view.exports.size()));
  f.push_back(view.is_signed ? 1.0 : 0.0);
  f.push_back(view.has_resources ? 1.0 : 0.0);
  f.push_back(as_real(view.strings.size()));
  f.push_back(as_real(view.sections.size()));

  // Header.
  const std::uint16_t machines[] = {kMachineI386, kMachineAmd64, kMachineArm, kMachineArm64};
  bool known = false;
  for (auto m : machines) {
    f.push_back(view.machine == m ? 1.0 : 0.0);
    known = known || view.machine == m;
  }
  f.push_back(known ? 0.0 : 1.0);
  f.push_back(as_real(view.timestamp));
  for (int bit = 0; bit < 16; ++bit) f.push_back((view.characteristics >> bit) & 1U ? 1.0 : 0.0);
  f.push_back(as_real(view.size_of_headers));
  f.push_back(as_real(view.size_of_image));

  // Section: the first eight sections in table order.
  for (std::size_t i = 0; i < kCompositeSectionSlots; ++i) {
    if (i < view.sections.size()) {
      const auto& s = view.sections[i];
      f.push_back(as_real(s.raw_size));
      f.push_back(as_real(s.virtual_size));
      f.push_back(shannon_entropy(s.raw_bytes));
      f.push_back(s.characteristics & kScnWrite ? 1.0 : 0.0);
      f.push_back(s.characteristics & kScnExecute ? 1.0 : 0.0);
    } else {
      f.insert(f.end(), 5, 0.0);
    }
  }

  // Imports and exports: hashed counts.
  std::vector<double> imports(kImportBuckets, 0.0);
  for (const auto& imp : view.imports) imports[import_bucket(imp.dll, imp.function)] += 1.0;
  f.insert(f.end(), imports.begin(), imports.end());
  std::vector<double> exports(kExportBuckets, 0.0);
  for (const auto& e : view.exports) exports[export_bucket(e)] += 1.0;
  f.insert(f.end(), exports.begin(), exports.end());
  f.push_back(as_real(view.exports.size()));

  for (const auto& d : view.data_directories) {
    f.push_back(as_real(d.size));
    f.push_back(d.size != 0 || d.virtual_address != 0 ? 1.0 : 0.0);
  }
  return {std::move(f), MappingId::kComposite};
}

FeatureVector extract_features(MappingId id, const PEView& view) {
  return id == MappingId::kManual ? extract_manual(view) : extract_composite(view);
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::size_t import_bucket(std::string_view dll, std::string_view function) {
  const std::string key = normalize_dll_name(dll) + ":" + std::string(function);
  return static_cast<std::size_t>(fnv1a64(key) % kImportBuckets);
}

std::size_t export_bucket(std::string_view name) {
  return static_cast<std::size_t>(fnv1a64(name) % kExportBuckets);
}

}  // namespace robustmal
