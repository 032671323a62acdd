#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace robustmal {

// Throws kMissingArtifact when the file does not exist and kIntegrityError
// when it is not valid JSON.
nlohmann::json read_json_file(const std::filesystem::path& path);
// Writes `j` indented by two spaces; creates parent directories.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace robustmal
