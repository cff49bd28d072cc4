#pragma once

#include <stdexcept>
#include <string>

#include "flashdet/inference.hpp"
#include "flashdet/network.hpp"
#include "flashdet/tensor.hpp"

namespace flashdet {

// Malformed or unsupported file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Payload bytes do not match the stored CRC32.
class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Model checkpoint ("FLSH", version 1): little-endian, layers in the fixed
// parameter order, weights then biases as 32-bit floats, trailing CRC32
// (IEEE) of all preceding bytes. Round-trips are bit-exact; see
// docs/formats.md for the byte layout.
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

// 8-bit RGB images as PNG or binary PPM (P6), picked by file signature on
// read and by extension on write. Values are mapped to [0, 1] on read.
Tensor3 read_image(const std::string& path);
void write_image(const Tensor3& image, const std::string& path);

// Masks as 8-bit grayscale PNG: 0 = non-tumor, 255 = tumor; values >= 128
// read as tumor.
Mask read_mask(const std::string& path);
void write_mask(const Mask& mask, const std::string& path);

// Probability maps in the raw "FPRB" format: 16-byte header (magic, u32
// height, u32 width, u32 reserved) followed by row-major little-endian
// 32-bit floats. Round-trips are bit-exact.
Tensor3 read_prob_map(const std::string& path);
void write_prob_map(const Tensor3& prob_map, const std::string& path);

}  // namespace flashdet
