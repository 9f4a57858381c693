#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nvsd/render.hpp"

namespace nvsd {

// Binary PPM (P6), 8-bit, no comments. Round-half-up quantization.
void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);

// Binary PGM (P5) for masks.
void write_pgm(const std::string& path, const std::vector<std::uint8_t>& mask,
               int res);
std::vector<std::uint8_t> read_pgm(const std::string& path, int& res);

std::uint8_t quantize8(float v);

}  // namespace nvsd
