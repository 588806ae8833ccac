#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace spncf::data {

// Binary PGM (P5), 8-bit. Values in [0,1] are quantized to 0..255 on write.
void write_pgm(const std::filesystem::path& path, std::span<const double> pixels,
               int width, int height);
std::vector<double> read_pgm(const std::filesystem::path& path, int* width,
                             int* height);

// Binary PPM (P6), 8-bit RGB interleaved.
void write_ppm(const std::filesystem::path& path,
               std::span<const std::uint8_t> rgb, int width, int height);

}  // namespace spncf::data
