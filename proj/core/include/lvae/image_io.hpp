#pragma once

#include <cstdint>
#include <string>

#include "lvae/tensor.hpp"

namespace lvae {

// Images are [C,H,W] in [-1,1] (byte b <-> b/127.5 - 1); masks are [1,H,W]
// in [0,1] (byte b <-> b/255). Binary P6/P5, 8-bit, no codec dependence.

uint8_t image_byte(float v);          // clamp + round to the image grid
float image_value(uint8_t b);
uint8_t mask_byte(float v);
float mask_value(uint8_t b);

void write_ppm(const std::string& path, const Tensor& img);
Tensor read_ppm(const std::string& path);

void write_pgm(const std::string& path, const Tensor& mask);
Tensor read_pgm(const std::string& path);

}  // namespace lvae
