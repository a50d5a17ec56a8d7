#pragma once

#include "lfsr/image.hpp"

#include <filesystem>
#include <vector>

namespace lfsr::png {

/// Reads an 8- or 16-bit grayscale PNG. Values are returned unscaled.
Pixels read(const std::filesystem::path& path);

/// Writes integer-valued pixels as 16-bit grayscale; values are rounded and
/// clamped to [0, 65535].
void write16(const std::filesystem::path& path, const Pixels& pixels);

/// Writes pixels as 8-bit grayscale; values are rounded and clamped to [0, 255].
void write8(const std::filesystem::path& path, const Pixels& pixels);
std::vector<unsigned char> encode8(const Pixels& pixels);

}  // namespace lfsr::png
