#include "robustmal/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "robustmal/digest.hpp"
#include "robustmal/error.hpp"
#include "robustmal/random.hpp"

namespace robustmal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

using ApiPool = std::vector<std::pair<std::string, std::vector<std::string>>>;

const ApiPool& malicious_pool() {
  static const ApiPool pool = {
      {"KERNEL32.dll",
       {"CreateFile", "WriteFile", "ReadFile", "CreateProcess", "OpenProcess", "VirtualAlloc",
        "VirtualAllocEx", "VirtualProtect", "WriteProcessMemory", "ReadProcessMemory",
        "CreateRemoteThread", "CreateThread", "GetProcAddress", "LoadLibrary", "GetModuleHandle",
        "GetSystemDirectory", "GetTempPath", "SetFileAttributes", "DeleteFile", "CopyFile",
        "MoveFile", "TerminateProcess", "GetTickCount", "IsDebuggerPresent",
        "CreateToolhelp32Snapshot", "Process32First", "Process32Next", "WinExec",
        "GetCommandLine", "ExitProcess", "CloseHandle", "FindFirstFile", "FindNextFile",
        "SetThreadContext", "ResumeThread", "SuspendThread", "GetThreadContext"}},
      {"ADVAPI32.dll",
       {"RegOpenKeyEx", "RegSetValueEx", "RegCreateKeyEx", "RegDeleteValue", "OpenProcessToken",
        "AdjustTokenPrivileges", "LookupPrivilegeValue", "CryptAcquireContext", "CryptEncrypt",
        "CreateService", "StartService", "OpenSCManager"}},
      {"WININET.dll",
       {"InternetOpen", "InternetOpenUrl", "InternetReadFile", "InternetConnect",
        "HttpSendRequest", "HttpOpenRequest"}},
      {"urlmon.dll", {"URLDownloadToFile"}},
      {"ntdll.dll",
       {"NtUnmapViewOfSection", "NtQueryInformationProcess", "NtWriteVirtualMemory",
        "RtlDecompressBuffer", "ZwSetInformationThread"}},
      {"WS2_32.dll", {"socket", "connect", "send", "recv", "WSAStartup", "gethostbyname"}},
      {"SHELL32.dll", {"ShellExecute", "SHGetFolderPath"}},
      {"USER32.dll", {"GetAsyncKeyState", "SetWindowsHookEx", "GetForegroundWindow", "FindWindow"}},
  };
  return pool;
}

const ApiPool& benign_pool() {
  static const ApiPool pool = {
      {"KERNEL32.dll",
       {"GetModuleHandle", "GetStartupInfo", "HeapAlloc", "HeapFree", "GetProcessHeap",
        "GetLastError", "CloseHandle", "CreateFile", "ReadFile", "GetCurrentProcessId",
        "GetCurrentThreadId", "QueryPerformanceCounter", "GetSystemTimeAsFileTime",
        "InitializeCriticalSection", "EnterCriticalSection", "LeaveCriticalSection",
        "MultiByteToWideChar", "WideCharToMultiByte", "GetCommandLine", "ExitProcess",
        "SetUnhandledExceptionFilter", "IsProcessorFeaturePresent"}},
      {"USER32.dll",
       {"MessageBox", "CreateWindowEx", "ShowWindow", "UpdateWindow", "GetMessage",
        "TranslateMessage", "DispatchMessage", "DefWindowProc", "RegisterClassEx", "LoadIcon",
        "LoadCursor", "PostQuitMessage", "SendMessage", "GetClientRect", "BeginPaint", "EndPaint",
        "SetWindowText", "GetDlgItem"}},
      {"GDI32.dll",
       {"CreateFont", "SelectObject", "DeleteObject", "TextOut", "BitBlt", "CreateCompatibleDC",
        "GetStockObject", "SetBkMode"}},
      {"COMCTL32.dll", {"InitCommonControlsEx", "ImageList_Create"}},
      {"SHELL32.dll", {"SHGetFolderPath", "ShellExecute", "DragQueryFile"}},
      {"ole32.dll", {"CoInitialize", "CoCreateInstance", "CoUninitialize", "CoTaskMemFree"}},
      {"OLEAUT32.dll", {"SysAllocString", "SysFreeString", "VariantInit"}},
      {"msvcrt.dll", {"malloc", "free", "memcpy", "printf", "strlen"}},
      {"WINMM.dll", {"timeGetTime", "PlaySound"}},
      {"gdiplus.dll", {"GdiplusStartup", "GdipCreateBitmapFromFile"}},
      {"mscoree.dll", {"_CorExeMain"}},
  };
  return pool;
}

const std::vector<std::string>& benign_text() {
  static const std::vector<std::string> words = {
      "Microsoft Corporation", "Copyright (C)", "All rights reserved.", "FileDescription",
      "ProductVersion", "CompanyName", "LegalCopyright", "OriginalFilename", "Settings",
      "Open File", "Save As", "Preferences", "Help Topics", "About this application",
      "C:\\Program Files\\Common Files", "Software\\Classes", "Unable to open document",
      "The operation completed successfully", "Print Preview", "Toolbar", "Status Bar",
      "Check for updates", "License Agreement", "Select a folder", "Recent Files"};
  return words;
}

const std::vector<std::string>& malicious_text() {
  static const std::vector<std::string> words = {
      "cmd.exe /c", "http://185.", "SOFTWARE\\Microsoft\\Windows\\CurrentVersion\\Run",
      "vssadmin delete shadows", "\\AppData\\Roaming\\", "svchost.exe", "Global\\Mutex",
      "POST /gate.php", "User-Agent: Mozilla", "%APPDATA%\\update.exe", "SeDebugPrivilege",
      "explorer.exe"};
  return words;
}

Bytes random_bytes(Rng& rng, std::size_t n) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng.next() >> 56);
  return b;
}

Bytes code_like(Rng& rng, std::size_t n) {
  static const std::uint8_t ops[] = {0x8b, 0x89, 0x48, 0xe8, 0xff, 0x55, 0xc3, 0x83, 0x74, 0x75,
                                     0x0f, 0x85, 0x84, 0x33, 0xc0, 0x50, 0x51, 0x52, 0x56, 0x57,
                                     0x5d, 0x5e, 0x5f, 0xcc, 0x90, 0x24, 0x44, 0x45, 0xec, 0x08};
  Bytes b(n);
  for (auto& x : b) {
    const double u = rng.uniform();
    if (u < 0.3) {
      x = 0;
    } else if (u < 0.8) {
      x = ops[rng.index(sizeof ops)];
    } else {
      x = static_cast<std::uint8_t>(rng.next() >> 56);
    }
  }
  return b;
}

Bytes zero_heavy(Rng& rng, std::size_t n) {
  Bytes b(n, 0);
  for (auto& x : b) {
    if (rng.bernoulli(0.3)) x = static_cast<std::uint8_t>(rng.integer(1, 32));
  }
  return b;
}

Bytes text_blob(Rng& rng, const std::vector<std::string>& words, std::size_t count,
                std::size_t pad_to) {
  Bytes b;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& w = words[rng.index(words.size())];
    b.insert(b.end(), w.begin(), w.end());
    b.push_back(0);
    if (rng.bernoulli(0.5)) b.push_back(0);
  }
  if (b.size() < pad_to) {
    Bytes filler = zero_heavy(rng, pad_to - b.size());
    b.insert(b.end(), filler.begin(), filler.end());
  }
  return b;
}

std::size_t jitter(Rng& rng, std::size_t base) {
  return static_cast<std::size_t>(static_cast<double>(base) * rng.uniform(0.7, 1.3));
}

SectionSpec plain_section(std::string name, Bytes data, std::uint32_t flags, int directory = -1) {
  SectionSpec s;
  s.name = std::move(name);
  s.virtual_size = static_cast<std::uint32_t>(data.size());
  s.data = std::move(data);
  s.characteristics = flags;
  s.directory = directory;
  return s;
}

SectionSpec generated_section(std::string name, SectionRole role, std::uint32_t flags) {
  SectionSpec s;
  s.name = std::move(name);
  s.role = role;
  s.characteristics = flags;
  return s;
}

constexpr std::uint32_t kTextFlags = kScnCode | kScnExecute | kScnRead;
constexpr std::uint32_t kRdataFlags = kScnInitializedData | kScnRead;
constexpr std::uint32_t kDataFlags = kScnInitializedData | kScnRead | kScnWrite;
constexpr std::uint32_t kPackedFlags = kScnCode | kScnInitializedData | kScnExecute | kScnRead | kScnWrite;

// Per-family choices shared by all of its samples.
struct FamilyTemplate {
  bool pe32plus = false;
  std::vector<ImportedDll> imports;
  std::vector<std::string> extra_sections;
  std::size_t text_size = 0;
  std::size_t data_size = 0;
  bool has_rsrc = false;
  bool has_tls = false;
  bool has_exports = false;
  std::uint32_t timestamp = 0;
};

std::vector<ImportedDll> draw_imports(Rng& rng, const ApiPool& pool, double dll_rate,
                                      double fn_rate, std::size_t min_functions) {
  std::vector<ImportedDll> out;
  for (std::size_t d = 0; d < pool.size(); ++d) {
    // The first DLL of each pool (kernel32) is always present.
    if (d != 0 && !rng.bernoulli(dll_rate)) continue;
    ImportedDll dll{pool[d].first, {}};
    for (const auto& fn : pool[d].second) {
      if (rng.bernoulli(fn_rate)) dll.functions.push_back(fn);
    }
    while (dll.functions.size() < std::min(min_functions, pool[d].second.size())) {
      const auto& fn = pool[d].second[rng.index(pool[d].second.size())];
      if (std::find(dll.functions.begin(), dll.functions.end(), fn) == dll.functions.end()) {
        dll.functions.push_back(fn);
      }
    }
    out.push_back(std::move(dll));
  }
  return out;
}

void ensure_import(std::vector<ImportedDll>& dlls, const std::string& dll, const std::string& fn) {
  for (auto& d : dlls) {
    if (d.name == dll) {
      if (std::find(d.functions.begin(), d.functions.end(), fn) == d.functions.end()) {
        d.functions.insert(d.functions.begin(), fn);
      }
      return;
    }
  }
  dlls.insert(dlls.begin(), ImportedDll{dll, {fn}});
}

FamilyTemplate malicious_family(Rng& rng, const SyntheticSpec& spec) {
  FamilyTemplate t;
  t.pe32plus = rng.bernoulli(spec.pe32plus_rate);
  t.imports = draw_imports(rng, malicious_pool(), 0.45, 0.45, 3);
  if (rng.bernoulli(0.85)) ensure_import(t.imports, "KERNEL32.dll", "CreateFile");
  static const char* const extras[] = {".upx0", ".upx1", ".packed", ".crt", ".vmp0", ".themida"};
  const int n_extra = static_cast<int>(rng.integer(0, 2));
  for (int i = 0; i < n_extra; ++i) t.extra_sections.push_back(extras[rng.index(6)]);
  t.text_size = static_cast<std::size_t>(rng.integer(8, 24)) * 1024;
  t.data_size = static_cast<std::size_t>(rng.integer(1, 4)) * 1024;
  t.has_rsrc = rng.bernoulli(0.4);
  t.has_tls = rng.bernoulli(0.3);
  t.has_exports = rng.bernoulli(0.1);
  t.timestamp = static_cast<std::uint32_t>(rng.integer(1262304000, 1704067200));
  return t;
}

ImageModel build_image(Rng& rng, const FamilyTemplate& t, bool malicious, const SyntheticSpec& spec) {
  ImageModel m;
  m.pe32plus = t.pe32plus;
  m.machine = t.pe32plus ? kMachineAmd64 : kMachineI386;
  m.characteristics = static_cast<std::uint16_t>(t.pe32plus ? 0x0022 : 0x0102);
  m.timestamp = t.timestamp + static_cast<std::uint32_t>(rng.integer(0, 86400 * 30));

  // .text
  const std::size_t text = jitter(rng, t.text_size);
  m.sections.push_back(plain_section(".text", malicious ? random_bytes(rng, text) : code_like(rng, text),
                                     kTextFlags));
  // .rdata
  if (malicious) {
    m.sections.push_back(plain_section(
        ".rdata", text_blob(rng, malicious_text(), rng.integer(2, 8), jitter(rng, 1024)), kRdataFlags));
  } else {
    m.sections.push_back(plain_section(
        ".rdata", text_blob(rng, benign_text(), rng.integer(20, 60), jitter(rng, 3072)), kRdataFlags));
  }
  // .data
  const std::size_t data = jitter(rng, t.data_size);
  Bytes data_bytes = malicious ? random_bytes(rng, data) : zero_heavy(rng, data);
  if (malicious) {
    // Packed payloads still carry some zero padding.
    Bytes pad = zero_heavy(rng, data / 4);
    data_bytes.insert(data_bytes.end(), pad.begin(), pad.end());
  }
  m.sections.push_back(plain_section(".data", std::move(data_bytes), kDataFlags));
  m.sections.push_back(generated_section(".idata", SectionRole::kImports, kDataFlags));
  for (const auto& name : t.extra_sections) {
    m.sections.push_back(plain_section(name, random_bytes(rng, jitter(rng, 2048)), kPackedFlags));
  }
  if (t.has_exports) {
    m.sections.push_back(generated_section(".edata", SectionRole::kExports, kRdataFlags));
  }
  if (t.has_rsrc) {
    Bytes rsrc = zero_heavy(rng, jitter(rng, 2048));
    Bytes icon = random_bytes(rng, jitter(rng, 1024));
    rsrc.insert(rsrc.end(), icon.begin(), icon.end());
    m.sections.push_back(plain_section(".rsrc", std::move(rsrc), kRdataFlags, kDirResource));
  }
  if (t.has_tls) {
    m.sections.push_back(plain_section(".tls", zero_heavy(rng, 64), kDataFlags, kDirTls));
  }
  if (!malicious && rng.bernoulli(0.6)) {
    m.sections.push_back(plain_section(".reloc", zero_heavy(rng, jitter(rng, 512)),
                                       kRdataFlags | 0x02000000, kDirBaseReloc));
  }

  // Imports: per-sample subset of the family set plus noise.
  const ApiPool& own = malicious ? malicious_pool() : benign_pool();
  for (const auto& dll : t.imports) {
    ImportedDll kept{dll.name, {}};
    for (const auto& fn : dll.functions) {
      if (fn == "CreateFile" || !rng.bernoulli(0.15)) kept.functions.push_back(fn);
    }
    if (kept.functions.empty()) kept.functions.push_back(dll.functions.front());
    m.imports.push_back(std::move(kept));
  }
  const int noise = static_cast<int>(rng.integer(0, 3));
  for (int i = 0; i < noise; ++i) {
    const ApiPool& pool = (!malicious && rng.bernoulli(spec.api_overlap)) ? malicious_pool() : own;
    const auto& dll = pool[rng.index(pool.size())];
    const auto& fn = dll.second[rng.index(dll.second.size())];
    bool placed = false;
    for (auto& d : m.imports) {
      if (d.name == dll.first) {
        if (std::find(d.functions.begin(), d.functions.end(), fn) == d.functions.end()) {
          d.functions.push_back(fn);
        }
        placed = true;
      }
    }
    if (!placed) m.imports.push_back({dll.first, {fn}});
  }

  if (t.has_exports) {
    const int n = static_cast<int>(rng.integer(1, malicious ? 4 : 12));
    for (int i = 0; i < n; ++i) m.exports.push_back("Export" + std::to_string(i) + "_" +
                                                    std::to_string(rng.integer(0, 999)));
    std::sort(m.exports.begin(), m.exports.end());
    m.exports.erase(std::unique(m.exports.begin(), m.exports.end()), m.exports.end());
    m.export_dll_name = malicious ? "payload.dll" : "library.dll";
  }

  const double signed_rate = malicious ? spec.malicious_signed_rate : spec.benign_signed_rate;
  if (rng.bernoulli(signed_rate)) {
    Bytes payload = random_bytes(rng, static_cast<std::size_t>(rng.integer(700, 1600)));
    payload[0] = 0x30;
    payload[1] = 0x82;
    m.certificate = make_certificate(payload);
  }
  const double stub_rate = malicious ? spec.malicious_stub_modified_rate : spec.benign_stub_modified_rate;
  if (rng.bernoulli(stub_rate)) {
    auto msg = random_bytes(rng, 43);
    std::copy(msg.begin(), msg.end(), m.dos_stub.begin() + 14);
  }
  if (rng.bernoulli(malicious ? 0.5 : 0.3)) {
    const auto n = static_cast<std::size_t>(rng.integer(256, 4096));
    m.overlay = malicious ? random_bytes(rng, n) : zero_heavy(rng, n);
  }
  return m;
}

FamilyTemplate benign_template(Rng& rng, const SyntheticSpec& spec) {
  FamilyTemplate t;
  t.pe32plus = rng.bernoulli(spec.pe32plus_rate);
  t.imports = draw_imports(rng, benign_pool(), 0.3, 0.3, 2);
  t.text_size = static_cast<std::size_t>(rng.integer(4, 16)) * 1024;
  t.data_size = static_cast<std::size_t>(rng.integer(1, 4)) * 1024;
  t.has_rsrc = rng.bernoulli(0.7);
  t.has_exports = rng.bernoulli(0.3);
  t.timestamp = static_cast<std::uint32_t>(rng.integer(1420070400, 1704067200));
  return t;
}

// Keeps the generated import table at least kImportSlack bytes below the next
// raw-size step so that small import edits do not change section sizes.
constexpr std::size_t kImportSlack = 512;

void fit_import_slack(ImageModel& m) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    const PEView view = parse_pe(serialize(m));
    std::size_t used = 0;
    for (std::size_t i = 0; i < m.sections.size(); ++i) {
      if (m.sections[i].role == SectionRole::kImports) used = view.sections[i].virtual_size;
    }
    const std::size_t room = (kImportSectionGranularity - used % kImportSectionGranularity) %
                             kImportSectionGranularity;
    if (used == 0 || room >= kImportSlack) return;
    for (auto it = m.imports.rbegin(); it != m.imports.rend(); ++it) {
      if (it->functions.size() > 1 && it->functions.back() != "CreateFile") {
        it->functions.pop_back();
        break;
      }
    }
  }
}

std::string artifact_id(bool malicious, int family, int index) {
  char buf[48];
  if (malicious) {
    std::snprintf(buf, sizeof buf, "mal_f%03d_%03d", family, index);
  } else {
    std::snprintf(buf, sizeof buf, "ben_%04d", index);
  }
  return buf;
}

void validate_spec(const SyntheticSpec& s) {
  if (s.n_families_malicious <= 0 || s.samples_per_family <= 0 || s.n_benign <= 0) {
    throw Error(ErrorCode::kInvalidConfig, "corpus counts must be positive");
  }
  if (s.samples_per_family < 2) {
    throw Error(ErrorCode::kInvalidConfig, "every malicious family needs at least 2 samples");
  }
}

Bytes read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "missing artifact file " + p.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"n_families_malicious", s.n_families_malicious},
           {"samples_per_family", s.samples_per_family},
           {"n_benign", s.n_benign},
           {"seed", s.seed},
           {"malicious_signed_rate", s.malicious_signed_rate},
           {"benign_signed_rate", s.benign_signed_rate},
           {"malicious_stub_modified_rate", s.malicious_stub_modified_rate},
           {"benign_stub_modified_rate", s.benign_stub_modified_rate},
           {"pe32plus_rate", s.pe32plus_rate},
           {"api_overlap", s.api_overlap}};
}

void from_json(const json& j, SyntheticSpec& s) {
  SyntheticSpec d;
  s.n_families_malicious = j.value("n_families_malicious", d.n_families_malicious);
  s.samples_per_family = j.value("samples_per_family", d.samples_per_family);
  s.n_benign = j.value("n_benign", d.n_benign);
  s.seed = j.value("seed", d.seed);
  s.malicious_signed_rate = j.value("malicious_signed_rate", d.malicious_signed_rate);
  s.benign_signed_rate = j.value("benign_signed_rate", d.benign_signed_rate);
  s.malicious_stub_modified_rate = j.value("malicious_stub_modified_rate", d.malicious_stub_modified_rate);
  s.benign_stub_modified_rate = j.value("benign_stub_modified_rate", d.benign_stub_modified_rate);
  s.pe32plus_rate = j.value("pe32plus_rate", d.pe32plus_rate);
  s.api_overlap = j.value("api_overlap", d.api_overlap);
}

std::string spec_digest(const SyntheticSpec& s) { return sha256_hex(json(s).dump()); }

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(artifacts.size());
  for (const auto& a : artifacts) out.push_back(a.label);
  return out;
}

std::vector<int> Dataset::family_ids() const {
  std::vector<int> out;
  out.reserve(artifacts.size());
  for (const auto& a : artifacts) out.push_back(a.family);
  return out;
}

ImageModel minimal_image_model() {
  ImageModel m;
  m.timestamp = 1600000000;
  m.sections.push_back(plain_section(".text", Bytes(512, 0x90), kTextFlags));
  return m;
}

std::vector<GeneratedSample> generate_samples(const SyntheticSpec& spec) {
  validate_spec(spec);
  Rng root(spec.seed);
  std::vector<GeneratedSample> out;
  out.reserve(static_cast<std::size_t>(spec.n_families_malicious * spec.samples_per_family + spec.n_benign));
  for (int f = 0; f < spec.n_families_malicious; ++f) {
    Rng fam_rng(root.fork());
    const FamilyTemplate t = malicious_family(fam_rng, spec);
    for (int i = 0; i < spec.samples_per_family; ++i) {
      GeneratedSample g;
      g.model = build_image(fam_rng, t, true, spec);
      fit_import_slack(g.model);
      g.artifact = {artifact_id(true, f, i), serialize(g.model), 1, f};
      out.push_back(std::move(g));
    }
  }
  Rng benign_rng(root.fork());
  for (int i = 0; i < spec.n_benign; ++i) {
    const FamilyTemplate t = benign_template(benign_rng, spec);
    GeneratedSample g;
    g.model = build_image(benign_rng, t, false, spec);
    fit_import_slack(g.model);
    g.artifact = {artifact_id(false, kBenignFamily, i), serialize(g.model), 0, kBenignFamily};
    out.push_back(std::move(g));
  }
  return out;
}

Dataset generate_corpus(const SyntheticSpec& spec) {
  Dataset ds;
  ds.spec = spec;
  ds.spec_digest = spec_digest(spec);
  for (auto& g : generate_samples(spec)) ds.artifacts.push_back(std::move(g.artifact));
  return ds;
}

std::pair<Dataset, Dataset> family_split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "train_fraction must be in (0, 1)");
  }
  std::set<int> family_set;
  std::vector<std::size_t> benign;
  for (std::size_t i = 0; i < ds.artifacts.size(); ++i) {
    if (ds.artifacts[i].label == 1) {
      family_set.insert(ds.artifacts[i].family);
    } else {
      benign.push_back(i);
    }
  }
  if (family_set.size() < 2) {
    throw Error(ErrorCode::kSingleFamily, "family split needs at least two malicious families");
  }
  std::vector<int> families(family_set.begin(), family_set.end());
  Rng rng(seed);
  rng.shuffle(families);
  const auto n_fam = families.size();
  const auto n_train_fam = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(n_fam))), 1, n_fam - 1);
  const std::set<int> train_families(families.begin(), families.begin() + static_cast<std::ptrdiff_t>(n_train_fam));

  rng.shuffle(benign);
  const auto n_train_benign =
      static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(benign.size())));
  const std::set<std::size_t> train_benign(benign.begin(), benign.begin() + static_cast<std::ptrdiff_t>(n_train_benign));

  std::pair<Dataset, Dataset> out;
  out.first.spec = out.second.spec = ds.spec;
  out.first.spec_digest = out.second.spec_digest = ds.spec_digest;
  for (std::size_t i = 0; i < ds.artifacts.size(); ++i) {
    const auto& a = ds.artifacts[i];
    const bool to_train = a.label == 1 ? train_families.count(a.family) > 0 : train_benign.count(i) > 0;
    (to_train ? out.first : out.second).artifacts.push_back(a);
  }
  return out;
}

void save_dataset(const Dataset& ds, const fs::path& dir, const std::string& config_digest) {
  std::error_code ec;
  fs::create_directories(dir / "artifacts", ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
  json files = json::array();
  for (const auto& a : ds.artifacts) {
    const std::string rel = "artifacts/" + a.id + ".bin";
    std::ofstream out(dir / rel, std::ios::binary);
    out.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + (dir / rel).string());
    files.push_back({{"path", rel}, {"id", a.id}, {"label", a.label}, {"family", a.family},
                     {"sha256", sha256_hex(a.bytes)}});
  }
  json manifest = {{"format_version", kManifestVersion},
                   {"spec", ds.spec},
                   {"seed", ds.spec.seed},
                   {"spec_digest", ds.spec_digest},
                   {"files", files}};
  manifest["manifest_digest"] = sha256_hex(manifest.dump());
  if (!config_digest.empty()) manifest["config_digest"] = config_digest;
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIoError, "cannot write manifest in " + dir.string());
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorCode::kMissingArtifact, "no manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIntegrityError, std::string("unreadable manifest: ") + e.what());
  }
  json body = manifest;
  body.erase("manifest_digest");
  body.erase("config_digest");
  if (manifest.value("manifest_digest", std::string()) != sha256_hex(body.dump())) {
    throw Error(ErrorCode::kIntegrityError, "manifest digest mismatch in " + dir.string());
  }
  Dataset ds;
  ds.spec = manifest.at("spec").get<SyntheticSpec>();
  ds.spec_digest = manifest.at("spec_digest").get<std::string>();
  for (const auto& f : manifest.at("files")) {
    const fs::path p = dir / f.at("path").get<std::string>();
    if (!fs::exists(p)) throw Error(ErrorCode::kMissingArtifact, "missing artifact " + p.string());
    ProgramArtifact a;
    a.bytes = read_file(p);
    if (sha256_hex(a.bytes) != f.at("sha256").get<std::string>()) {
      throw Error(ErrorCode::kIntegrityError, "checksum mismatch for " + p.string());
    }
    a.id = f.at("id").get<std::string>();
    a.label = f.at("label").get<int>();
    a.family = f.at("family").get<int>();
    ds.artifacts.push_back(std::move(a));
  }
  return ds;
}

}  // namespace robustmal
