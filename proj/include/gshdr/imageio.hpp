#pragma once

#include <string>

#include "gshdr/tensor.hpp"

// Image file IO. Images are CHW float tensors with shape (3, H, W), row 0
// at the top. LDR files (PPM) are normalized to [0, 1] on read; HDR files
// (PFM, Radiance RGBE) carry float radiance as stored.

namespace gshdr::io {

using Image = Tensor<float>;

// Binary PPM (P6), maxval 255 or 65535; 16-bit samples are big-endian.
Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img, int maxval = 255);

// Color PFM ("PF"), negative scale (little-endian), bottom row first.
// Writing always uses scale -1.0.
Image read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Image& img);

// Radiance picture (.hdr), "-Y H +X W" orientation, flat or new-style RLE
// scanlines. Read-only.
Image read_rgbe(const std::string& path);

// Dispatches on the magic bytes: P6, PF, or #?.
Image read_image(const std::string& path);

}  // namespace gshdr::io
