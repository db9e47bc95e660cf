#pragma once

#include <string>

#include "tensor.hpp"

namespace ffabic {

// 8-bit PNG in, [3,H,W] floats in [0,1] out. Missing/unreadable file -> io
// error; undecodable content -> format error.
Tensor read_png(const std::string& path);

// [3,H,W] -> RGB, [1,H,W] -> grayscale. Values clamped to [0,1], then rounded
// to 8 bits, so write(read(p)) is lossless for 8-bit sources.
void write_png(const std::string& path, const Tensor& img);

}  // namespace ffabic
