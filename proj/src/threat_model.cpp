#include "robustmal/threat_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "pe_internal.hpp"
#include "robustmal/digest.hpp"
#include "robustmal/error.hpp"
#include "robustmal/pe_image.hpp"
#include "robustmal/random.hpp"

namespace robustmal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using detail::align_up;
using detail::read_u16;
using detail::read_u32;
using detail::write_u16;
using detail::write_u32;

constexpr std::size_t kMaxSections = 96;

[[noreturn]] void not_applicable(const Transformation& t, const std::string& why) {
  throw Error(ErrorCode::kNotApplicable, t.label() + " not applicable: " + why);
}

std::string to_hex(ByteSpan b) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(b.size() * 2);
  for (auto x : b) {
    s.push_back(digits[x >> 4]);
    s.push_back(digits[x & 15]);
  }
  return s;
}

Bytes from_hex(const std::string& s) {
  if (s.size() % 2 != 0) throw Error(ErrorCode::kInvalidConfig, "odd-length hex payload");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error(ErrorCode::kInvalidConfig, "invalid hex digit in payload");
  };
  Bytes out(s.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(nibble(s[2 * i]) << 4 | nibble(s[2 * i + 1]));
  }
  return out;
}

Bytes seeded_bytes(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng.next() >> 56);
  return b;
}

// Payload bytes for kinds that carry raw data: either "data_hex", or a
// generated block {"size", "seed"} (random) / {"size", "fill"} (constant).
Bytes payload_bytes(const json& j) {
  if (j.contains("data_hex")) return from_hex(j.at("data_hex").get<std::string>());
  const auto size = j.at("size").get<std::size_t>();
  if (j.contains("seed")) return seeded_bytes(size, j.at("seed").get<std::uint64_t>());
  return Bytes(size, static_cast<std::uint8_t>(j.value("fill", 0)));
}

// ---- byte-level editors ---------------------------------------------------

struct Located {
  detail::HeaderLayout layout;
  std::vector<detail::SectionHeader> sections;
};

Located locate(ByteSpan bytes) {
  bool truncated = false;
  Located l;
  l.layout = detail::locate_headers(bytes, &truncated);
  if (truncated) throw Error(ErrorCode::kMalformedPE, "malformed PE: section table truncated");
  l.sections = detail::read_section_headers(bytes, l.layout);
  return l;
}

std::size_t security_dir(const detail::HeaderLayout& layout) {
  if (layout.data_dir_offset == 0 || layout.num_data_dirs <= kDirSecurity) return 0;
  return layout.data_dir_offset + 8 * kDirSecurity;
}

Bytes append_bytes(ByteSpan bytes, ByteSpan tail) {
  Bytes out(bytes.begin(), bytes.end());
  out.insert(out.end(), tail.begin(), tail.end());
  return out;
}

Bytes add_strings(ByteSpan bytes, const Transformation& t) {
  locate(bytes);
  Bytes tail;
  for (const auto& s : t.strings) {
    tail.insert(tail.end(), s.begin(), s.end());
    tail.push_back(0);
  }
  return append_bytes(bytes, tail);
}

Bytes modify_dos_stub(ByteSpan bytes, const Transformation& t) {
  const auto l = locate(bytes);
  const Bytes& stock = stock_dos_stub();
  if (l.layout.pe_offset < 0x40 + stock.size() ||
      !std::equal(stock.begin(), stock.end(), bytes.begin() + 0x40)) {
    not_applicable(t, "DOS stub already modified");
  }
  Bytes out(bytes.begin(), bytes.end());
  const Bytes& stub = replacement_dos_stub();
  std::copy(stub.begin(), stub.end(), out.begin() + 0x40);
  return out;
}

Bytes remove_signature(ByteSpan bytes, const Transformation& t) {
  const auto l = locate(bytes);
  const std::size_t dir = security_dir(l.layout);
  if (dir == 0 || read_u32(bytes, dir + 4) == 0) not_applicable(t, "image is not signed");
  const std::uint64_t offset = read_u32(bytes, dir);
  const std::uint64_t size = read_u32(bytes, dir + 4);
  Bytes out(bytes.begin(), bytes.end());
  write_u32(out, dir, 0);
  write_u32(out, dir + 4, 0);
  const std::uint64_t end = detail::sections_end(l.sections, bytes.size());
  if (offset >= end && detail::in_range(bytes, offset, size)) {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(offset),
              out.begin() + static_cast<std::ptrdiff_t>(offset + size));
  }
  return out;
}

Bytes bump_timestamp(ByteSpan bytes, const Transformation& t) {
  const auto l = locate(bytes);
  const std::uint64_t ts = read_u32(bytes, l.layout.coff_offset + 4);
  if (ts + t.timestamp_delta > 0xffffffffULL) not_applicable(t, "timestamp would overflow");
  Bytes out(bytes.begin(), bytes.end());
  write_u32(out, l.layout.coff_offset + 4, static_cast<std::uint32_t>(ts + t.timestamp_delta));
  return out;
}

Bytes add_section(ByteSpan bytes, const Transformation& t) {
  const auto l = locate(bytes);
  const auto& layout = l.layout;
  if (layout.optional_size < (layout.pe32plus ? 112u : 96u)) not_applicable(t, "no optional header");
  const std::size_t opt = layout.optional_offset;
  const std::uint32_t section_alignment = read_u32(bytes, opt + 32);
  const std::uint32_t file_alignment = read_u32(bytes, opt + 36);
  const std::uint32_t size_of_headers = read_u32(bytes, opt + 60);
  if (section_alignment == 0 || file_alignment == 0) not_applicable(t, "zero alignment");

  std::uint64_t first_raw = size_of_headers;
  std::uint64_t image_end = align_up(size_of_headers, section_alignment);
  for (const auto& s : l.sections) {
    if (s.raw_size != 0) first_raw = std::min<std::uint64_t>(first_raw, s.raw_pointer);
    const std::uint64_t extent = std::max<std::uint64_t>({s.virtual_size, s.raw_size, 1});
    image_end = std::max(image_end, align_up(s.virtual_address + extent, section_alignment));
  }
  const std::size_t header_at = layout.section_table_offset + 40 * layout.num_sections;
  if (header_at + 40 > first_raw || layout.num_sections >= kMaxSections) {
    not_applicable(t, "no room for another section header");
  }

  const std::uint64_t old_end =
      std::max<std::uint64_t>(detail::sections_end(l.sections, bytes.size()), size_of_headers);
  if (old_end > bytes.size()) not_applicable(t, "headers extend past end of file");
  const std::uint64_t raw_pointer = align_up(old_end, file_alignment);
  const std::uint64_t raw_size = align_up(t.data.size(), file_alignment);
  const std::uint64_t inserted = raw_pointer - old_end + raw_size;
  const std::uint64_t va = image_end;
  const std::uint64_t vsize = t.data.size();

  Bytes out;
  out.reserve(bytes.size() + inserted);
  out.insert(out.end(), bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(old_end));
  out.resize(raw_pointer, 0);
  out.insert(out.end(), t.data.begin(), t.data.end());
  out.resize(raw_pointer + raw_size, 0);
  out.insert(out.end(), bytes.begin() + static_cast<std::ptrdiff_t>(old_end), bytes.end());

  std::fill(out.begin() + static_cast<std::ptrdiff_t>(header_at),
            out.begin() + static_cast<std::ptrdiff_t>(header_at + 40), 0);
  std::copy(t.section_name.begin(), t.section_name.end(),
            out.begin() + static_cast<std::ptrdiff_t>(header_at));
  write_u32(out, header_at + 8, static_cast<std::uint32_t>(vsize));
  write_u32(out, header_at + 12, static_cast<std::uint32_t>(va));
  write_u32(out, header_at + 16, static_cast<std::uint32_t>(raw_size));
  write_u32(out, header_at + 20, raw_size == 0 ? 0 : static_cast<std::uint32_t>(raw_pointer));
  write_u32(out, header_at + 36, t.characteristics);

  write_u16(out, layout.coff_offset + 2, static_cast<std::uint16_t>(layout.num_sections + 1));
  if (t.characteristics & kScnCode) {
    write_u32(out, opt + 4, read_u32(out, opt + 4) + static_cast<std::uint32_t>(raw_size));
  }
  if (t.characteristics & kScnInitializedData) {
    write_u32(out, opt + 8, read_u32(out, opt + 8) + static_cast<std::uint32_t>(raw_size));
  }
  const std::uint64_t extent = std::max<std::uint64_t>({vsize, raw_size, 1});
  write_u32(out, opt + 56, static_cast<std::uint32_t>(align_up(va + extent, section_alignment)));

  if (const std::size_t dir = security_dir(layout); dir != 0 && read_u32(bytes, dir + 4) != 0) {
    const std::uint32_t cert = read_u32(bytes, dir);
    if (cert >= old_end) write_u32(out, dir, static_cast<std::uint32_t>(cert + inserted));
  }
  return out;
}

// ---- model-level editors ----------------------------------------------------

ImageModel require_model(ByteSpan bytes, const Transformation& t) {
  auto model = model_from_bytes(bytes);
  if (!model) not_applicable(t, "import table is not in canonical layout");
  return std::move(*model);
}

Bytes add_import(ByteSpan bytes, const Transformation& t) {
  locate(bytes);
  ImageModel m = require_model(bytes, t);
  const std::string want = normalize_dll_name(t.dll);
  auto it = std::find_if(m.imports.begin(), m.imports.end(), [&](const ImportedDll& d) {
    return normalize_dll_name(d.name) == want;
  });
  if (it != m.imports.end()) {
    it->functions.push_back(t.function);
  } else {
    m.imports.push_back({t.dll, {t.function}});
  }
  const bool has_section = std::any_of(m.sections.begin(), m.sections.end(), [](const SectionSpec& s) {
    return s.role == SectionRole::kImports;
  });
  if (!has_section) {
    if (m.sections.size() >= max_canonical_sections(m.pe32plus)) {
      not_applicable(t, "no room for an import section");
    }
    SectionSpec s;
    s.name = ".idata";
    s.role = SectionRole::kImports;
    s.characteristics = kScnInitializedData | kScnRead | kScnWrite;
    m.sections.push_back(std::move(s));
  }
  return serialize(m);
}

Bytes substitute_api(ByteSpan bytes, const Transformation& t) {
  locate(bytes);
  const PEView view = parse_pe(bytes);
  const bool present = std::any_of(view.imports.begin(), view.imports.end(),
                                   [&](const ImportEntry& e) { return e.function == t.from_name; });
  if (!present) not_applicable(t, "no import named " + t.from_name);
  ImageModel m = require_model(bytes, t);
  for (auto& d : m.imports) {
    auto it = std::find(d.functions.begin(), d.functions.end(), t.from_name);
    if (it != d.functions.end()) {
      *it = t.to_name;
      break;
    }
  }
  return serialize(m);
}

std::string delta_key(const std::vector<double>& v) {
  std::string key;
  char buf[32];
  for (double x : v) {
    // Fold negative zero so that -0 and 0 compare equal.
    std::snprintf(buf, sizeof buf, "%.11e,", x == 0.0 ? 0.0 : x);
    key += buf;
  }
  return key;
}

std::string feature_key(const std::vector<double>& v) {
  std::string key(v.size() * sizeof(double), '\0');
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v[i] == 0.0 ? 0.0 : v[i];
    std::memcpy(key.data() + i * sizeof(double), &x, sizeof(double));
  }
  return key;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string_view kind_name(TransformKind kind) {
  switch (kind) {
    case TransformKind::kAddSection: return "add_section";
    case TransformKind::kAppendOverlay: return "append_overlay";
    case TransformKind::kAddImport: return "add_import";
    case TransformKind::kAddStrings: return "add_strings";
    case TransformKind::kModifyDosStub: return "modify_dos_stub";
    case TransformKind::kRemoveSignature: return "remove_signature";
    case TransformKind::kBumpTimestamp: return "bump_timestamp";
    case TransformKind::kSubstituteApi: return "substitute_api";
  }
  return "?";
}

TransformKind parse_kind(std::string_view name) {
  for (int k = 0; k <= static_cast<int>(TransformKind::kSubstituteApi); ++k) {
    const auto kind = static_cast<TransformKind>(k);
    if (kind_name(kind) == name) return kind;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown transformation kind: " + std::string(name));
}

std::string Transformation::label() const {
  std::string out(kind_name(kind));
  switch (kind) {
    case TransformKind::kAddSection:
      return out + "(" + section_name + "," + std::to_string(data.size()) + ")";
    case TransformKind::kAppendOverlay:
      return out + "(" + std::to_string(data.size()) + ")";
    case TransformKind::kAddImport:
      return out + "(" + dll + ":" + function + ")";
    case TransformKind::kAddStrings:
      return out + "(" + std::to_string(strings.size()) + ")";
    case TransformKind::kBumpTimestamp:
      return out + "(+" + std::to_string(timestamp_delta) + ")";
    case TransformKind::kSubstituteApi:
      return out + "(" + from_name + "->" + to_name + ")";
    default:
      return out;
  }
}

Transformation make_add_section(std::string name, Bytes data, std::uint32_t characteristics) {
  if (name.empty() || name.size() > 8) {
    throw Error(ErrorCode::kInvalidConfig, "section name must have 1 to 8 characters");
  }
  Transformation t;
  t.kind = TransformKind::kAddSection;
  t.section_name = std::move(name);
  t.data = std::move(data);
  t.characteristics = characteristics;
  return t;
}

Transformation make_append_overlay(Bytes data) {
  Transformation t;
  t.kind = TransformKind::kAppendOverlay;
  t.data = std::move(data);
  return t;
}

Transformation make_add_import(std::string dll, std::string function) {
  if (dll.empty() || function.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "add_import needs a DLL and a function name");
  }
  Transformation t;
  t.kind = TransformKind::kAddImport;
  t.dll = std::move(dll);
  t.function = std::move(function);
  return t;
}

Transformation make_add_strings(std::vector<std::string> strings) {
  for (const auto& s : strings) {
    if (s.find('\0') != std::string::npos) {
      throw Error(ErrorCode::kInvalidConfig, "add_strings payload contains a NUL character");
    }
  }
  Transformation t;
  t.kind = TransformKind::kAddStrings;
  t.strings = std::move(strings);
  return t;
}

Transformation make_modify_dos_stub() {
  Transformation t;
  t.kind = TransformKind::kModifyDosStub;
  return t;
}

Transformation make_remove_signature() {
  Transformation t;
  t.kind = TransformKind::kRemoveSignature;
  return t;
}

Transformation make_bump_timestamp(std::uint32_t delta) {
  Transformation t;
  t.kind = TransformKind::kBumpTimestamp;
  t.timestamp_delta = delta;
  return t;
}

Transformation make_substitute_api(std::string from, std::string to) {
  if (from.empty() || to.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "substitute_api needs both API names");
  }
  Transformation t;
  t.kind = TransformKind::kSubstituteApi;
  t.from_name = std::move(from);
  t.to_name = std::move(to);
  return t;
}

const Bytes& replacement_dos_stub() {
  static const Bytes stub = [] {
    Bytes b = {0x0e, 0x1f, 0xba, 0x0e, 0x00, 0xb4, 0x09, 0xcd, 0x21, 0xb8, 0x01, 0x4c, 0xcd, 0x21};
    const char* msg = "This program requires Microsoft Windows.\r\n$";
    b.insert(b.end(), msg, msg + std::char_traits<char>::length(msg));
    b.resize(64, 0);
    return b;
  }();
  return stub;
}

void ThreatModel::validate() const {
  if (transformations.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "threat model '" + name + "' has no transformations");
  }
  for (std::size_t i = 0; i < transformations.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (transformations[i] == transformations[j]) {
        throw Error(ErrorCode::kInvalidConfig,
                    "duplicate transformation " + transformations[i].label());
      }
    }
  }
}

const std::vector<std::string>& goodware_strings() {
  static const std::vector<std::string> s = {
      "Microsoft Corporation", "Copyright (C) Microsoft", "All rights reserved.",
      "FileDescription",       "ProductVersion",          "Windows Update Helper",
      "Settings",              "Open File",               "Save As",
      "About this application"};
  return s;
}

ThreatModel default_threat_model() {
  ThreatModel m;
  m.name = "default";
  m.transformations = {
      make_add_section(".adv", seeded_bytes(512, 7)),
      make_append_overlay(Bytes(1024, 0)),
      make_add_import("kernel32.dll", "Sleep"),
      make_add_strings(goodware_strings()),
      make_modify_dos_stub(),
      make_remove_signature(),
      make_bump_timestamp(86400),
      make_substitute_api("CreateFile", "CreateFileEx"),
  };
  return m;
}

void to_json(json& j, const Transformation& t) {
  j = json{{"kind", kind_name(t.kind)}};
  switch (t.kind) {
    case TransformKind::kAddSection:
      j["name"] = t.section_name;
      j["characteristics"] = t.characteristics;
      j["data_hex"] = to_hex(t.data);
      break;
    case TransformKind::kAppendOverlay:
      j["data_hex"] = to_hex(t.data);
      break;
    case TransformKind::kAddImport:
      j["dll"] = t.dll;
      j["function"] = t.function;
      break;
    case TransformKind::kAddStrings:
      j["strings"] = t.strings;
      break;
    case TransformKind::kBumpTimestamp:
      j["delta"] = t.timestamp_delta;
      break;
    case TransformKind::kSubstituteApi:
      j["from"] = t.from_name;
      j["to"] = t.to_name;
      break;
    case TransformKind::kModifyDosStub:
    case TransformKind::kRemoveSignature:
      break;
  }
}

void from_json(const json& j, Transformation& t) {
  try {
    const auto kind = parse_kind(j.at("kind").get<std::string>());
    switch (kind) {
      case TransformKind::kAddSection:
        t = make_add_section(j.at("name").get<std::string>(), payload_bytes(j),
                             j.value("characteristics", 0x40000040u));
        break;
      case TransformKind::kAppendOverlay:
        t = make_append_overlay(payload_bytes(j));
        break;
      case TransformKind::kAddImport:
        t = make_add_import(j.at("dll").get<std::string>(), j.at("function").get<std::string>());
        break;
      case TransformKind::kAddStrings:
        t = make_add_strings(j.at("strings").get<std::vector<std::string>>());
        break;
      case TransformKind::kModifyDosStub:
        t = make_modify_dos_stub();
        break;
      case TransformKind::kRemoveSignature:
        t = make_remove_signature();
        break;
      case TransformKind::kBumpTimestamp:
        t = make_bump_timestamp(j.value("delta", 86400u));
        break;
      case TransformKind::kSubstituteApi:
        t = make_substitute_api(j.at("from").get<std::string>(), j.at("to").get<std::string>());
        break;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("bad transformation entry: ") + e.what());
  }
}

void to_json(json& j, const ThreatModel& m) {
  j = json{{"name", m.name}, {"transformations", m.transformations}};
}

void from_json(const json& j, ThreatModel& m) {
  try {
    m.name = j.value("name", std::string("unnamed"));
    m.transformations = j.at("transformations").get<std::vector<Transformation>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("bad threat model: ") + e.what());
  }
  m.validate();
}

ThreatModel load_threat_model(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read threat model " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("threat model is not JSON: ") + e.what());
  }
  return j.get<ThreatModel>();
}

Bytes apply_transformation(ByteSpan bytes, const Transformation& t) {
  switch (t.kind) {
    case TransformKind::kAddSection: return add_section(bytes, t);
    case TransformKind::kAppendOverlay: locate(bytes); return append_bytes(bytes, t.data);
    case TransformKind::kAddImport: return add_import(bytes, t);
    case TransformKind::kAddStrings: return add_strings(bytes, t);
    case TransformKind::kModifyDosStub: return modify_dos_stub(bytes, t);
    case TransformKind::kRemoveSignature: return remove_signature(bytes, t);
    case TransformKind::kBumpTimestamp: return bump_timestamp(bytes, t);
    case TransformKind::kSubstituteApi: return substitute_api(bytes, t);
  }
  not_applicable(t, "unknown kind");
}

ProgramArtifact apply_transformation(const ProgramArtifact& p, const Transformation& t) {
  ProgramArtifact out;
  out.id = p.id;
  out.label = p.label;
  out.family = p.family;
  out.bytes = apply_transformation(p.bytes, t);
  return out;
}

std::vector<double> features_of(ByteSpan bytes, MappingId mapping) {
  return extract_features(mapping, parse_pe(bytes)).values;
}

PerturbationVector perturbation_vector(const Transformation& t, const ProgramArtifact& p,
                                       MappingId mapping) {
  const Bytes after = apply_transformation(p.bytes, t);
  auto a = features_of(after, mapping);
  const auto b = features_of(p.bytes, mapping);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return {std::move(a), t.kind, mapping};
}

bool insert_delta(std::vector<PerturbationVector>& set, PerturbationVector v) {
  const std::string key = delta_key(v.values);
  for (const auto& existing : set) {
    if (delta_key(existing.values) == key) return false;
  }
  set.push_back(std::move(v));
  return true;
}

std::vector<PerturbationVector> collect_delta_set(const ThreatModel& m,
                                                  const std::vector<ProgramArtifact>& samples,
                                                  MappingId mapping) {
  if (samples.empty()) throw Error(ErrorCode::kInvalidConfig, "collect_delta_set needs samples");
  std::vector<PerturbationVector> out;
  std::unordered_set<std::string> seen;
  for (const auto& p : samples) {
    std::vector<double> base;
    try {
      base = features_of(p.bytes, mapping);
    } catch (const Error&) {
      continue;
    }
    for (const auto& t : m.transformations) {
      Bytes after;
      try {
        after = apply_transformation(p.bytes, t);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kNotApplicable || e.code() == ErrorCode::kMalformedPE) continue;
        throw;
      }
      auto d = features_of(after, mapping);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= base[i];
      if (seen.insert(delta_key(d)).second) out.push_back({std::move(d), t.kind, mapping});
    }
  }
  return out;
}

std::vector<ReachableState> reachable_set(ByteSpan bytes, const ThreatModel& m, MappingId mapping,
                                          int depth, std::size_t node_cap) {
  if (depth < 0) throw Error(ErrorCode::kInvalidConfig, "depth must be non-negative");
  std::vector<ReachableState> states;
  std::unordered_set<std::string> seen;
  ReachableState root{Bytes(bytes.begin(), bytes.end()), features_of(bytes, mapping), {}};
  seen.insert(feature_key(root.features));
  states.push_back(std::move(root));
  std::size_t level_begin = 0;
  for (int d = 0; d < depth; ++d) {
    const std::size_t level_end = states.size();
    for (std::size_t s = level_begin; s < level_end; ++s) {
      for (std::size_t k = 0; k < m.transformations.size(); ++k) {
        Bytes next;
        try {
          next = apply_transformation(states[s].bytes, m.transformations[k]);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::kNotApplicable) continue;
          throw;
        }
        auto f = features_of(next, mapping);
        if (!seen.insert(feature_key(f)).second) continue;
        if (states.size() >= node_cap) {
          throw Error(ErrorCode::kBudgetExceeded,
                      "reachable set exceeds node cap " + std::to_string(node_cap));
        }
        auto path = states[s].path;
        path.push_back(k);
        states.push_back({std::move(next), std::move(f), std::move(path)});
      }
    }
    if (states.size() == level_end) break;
    level_begin = level_end;
  }
  return states;
}

bool preorder_leq(ByteSpan source, ByteSpan target, const ThreatModel& m, MappingId mapping,
                  int depth, std::size_t node_cap) {
  const std::string want = feature_key(features_of(target, mapping));
  for (const auto& s : reachable_set(source, m, mapping, depth, node_cap)) {
    if (feature_key(s.features) == want) return true;
  }
  return false;
}

void write_delta_csv(const fs::path& path, const std::vector<PerturbationVector>& deltas,
                     MappingId mapping, const std::string& config_digest) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  if (!config_digest.empty()) out << "# config_digest: " << config_digest << '\n';
  out << "# mapping: " << mapping_name(mapping) << '\n';
  out << "source_kind";
  for (const auto& n : feature_schema(mapping).names) out << ',' << n;
  out << '\n';
  char buf[40];
  for (const auto& d : deltas) {
    if (d.schema_id != mapping) throw Error(ErrorCode::kDimensionMismatch, "delta schema mismatch");
    out << kind_name(d.source_kind);
    for (double x : d.values) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
}

std::vector<PerturbationVector> read_delta_csv(const fs::path& path, std::string* config_digest) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "missing delta file " + path.string());
  std::string line;
  MappingId mapping = MappingId::kManual;
  bool header_seen = false;
  std::vector<PerturbationVector> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# config_digest: ", 0) == 0) {
      if (config_digest != nullptr) *config_digest = line.substr(17);
      continue;
    }
    if (line.rfind("# mapping: ", 0) == 0) {
      mapping = parse_mapping(line.substr(11));
      continue;
    }
    if (line[0] == '#') continue;
    const auto cells = split_csv(line);
    const std::size_t dim = feature_schema(mapping).dimension;
    if (!header_seen) {
      if (cells.size() != dim + 1) {
        throw Error(ErrorCode::kDimensionMismatch, "delta file header does not match mapping");
      }
      header_seen = true;
      continue;
    }
    if (cells.size() != dim + 1) {
      throw Error(ErrorCode::kDimensionMismatch, "delta row has wrong number of columns");
    }
    PerturbationVector v;
    v.source_kind = parse_kind(cells[0]);
    v.schema_id = mapping;
    v.values.reserve(dim);
    for (std::size_t i = 1; i < cells.size(); ++i) {
      try {
        v.values.push_back(std::stod(cells[i]));
      } catch (const std::exception&) {
        throw Error(ErrorCode::kInvalidConfig, "non-numeric value in delta file");
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<std::vector<double>> delta_rows(const std::vector<PerturbationVector>& deltas) {
  std::vector<std::vector<double>> rows;
  rows.reserve(deltas.size());
  for (const auto& d : deltas) rows.push_back(d.values);
  return rows;
}

std::string delta_digest(const std::vector<std::vector<double>>& rows) {
  std::string text;
  char buf[32];
  for (const auto& r : rows) {
    for (double v : r) {
      std::snprintf(buf, sizeof buf, "%.17g,", v);
      text += buf;
    }
    text += '\n';
  }
  return sha256_hex(std::string_view(text));
}

std::string delta_digest(const std::vector<PerturbationVector>& deltas) {
  return delta_digest(delta_rows(deltas));
}

}  // namespace robustmal
