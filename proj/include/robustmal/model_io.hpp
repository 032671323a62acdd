#pragma once

#include <filesystem>
#include <memory>

#include "json.hpp"
#include "robustmal/detectors.hpp"

namespace robustmal {

// Rebuilds any serialized detector from its versioned record. Throws
// kIntegrityError on an unknown kind or version.
std::unique_ptr<Detector> load_detector(const nlohmann::json& record);
std::unique_ptr<Detector> load_detector_file(const std::filesystem::path& path);
void save_detector(const Detector& d, const std::filesystem::path& path);

}  // namespace robustmal
