#pragma once

#include <string>

#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary PPM (P6, maxval 255). Image tensors are [3,H,W] with values in
// [0,1]; writing quantizes with round(v*255) after clamping.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// Binary PGM (P5, maxval 255) for [H,W] or [1,H,W] tensors.
void write_pgm(const std::string& path, const Tensor& image);

}  // namespace glyphdiff
