#pragma once

#include <stdexcept>
#include <string>

#include "mkd/core_types.hpp"

namespace mkd {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit RGB PNG -> 1 x H x W x 3 batch scaled to [0, 1].
ImageBatch read_png_rgb(const std::string& path);
/// Writes item b of x as 8-bit RGB (values rounded to the nearest level).
void write_png_rgb(const std::string& path, const ImageBatch& x, int b = 0);

/// 8-bit single-channel (grey or palette index) PNG -> 1 x H x W label map.
LabelMap read_png_labels(const std::string& path);
void write_png_labels(const std::string& path, const LabelMap& y, int b = 0);

}  // namespace mkd
