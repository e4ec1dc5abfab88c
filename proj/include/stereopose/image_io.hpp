#pragma once

#include <string>
#include <vector>

#include "stereopose/geometry.hpp"

namespace stereopose::geom {

// 8-bit binary PGM (P5, 1 channel) / PPM (P6, 3 channels).
void write_pnm(const std::string& path, const Image& img);
Image read_pnm(const std::string& path);

// Grayscale PFM ("Pf"), float32 rows bottom-to-top, scale -1.0 (little-endian).
// Invalid pixels are stored as +inf.
void write_pfm(const std::string& path, const DisparityMap& disp);
DisparityMap read_pfm(const std::string& path);

void write_mask_pgm(const std::string& path, const std::vector<uint8_t>& mask, int width, int height);
std::vector<uint8_t> read_mask_pgm(const std::string& path, int& width, int& height);

}  // namespace stereopose::geom
