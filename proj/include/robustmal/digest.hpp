#pragma once

#include <string>
#include <string_view>

#include "robustmal/pe.hpp"

namespace robustmal {

std::string sha256_hex(ByteSpan data);
std::string sha256_hex(std::string_view text);

}  // namespace robustmal
