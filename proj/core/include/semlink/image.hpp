#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace semlink {

// 8-bit image, row-major with interleaved channels: pixel (y, x, c) lives at
// ((y * width) + x) * channels + c.
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::size_t size() const { return pixels.size(); }

  static ImageTensor filled(int h, int w, int c, std::uint8_t value);
};

struct Box {
  int class_id = 0;  // COCO index, 1..80
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
};

struct RegionAnnotation {
  std::vector<Box> boxes;

  // Fraction of image pixels covered by the union of all boxes.
  double area_fraction(int img_h, int img_w) const;
};

// Binary PPM (P6) for 3-channel, PGM (P5) for single-channel. Maxval 255.
ImageTensor read_pnm(const std::string& path);
void write_pnm(const ImageTensor& img, const std::string& path);

// Annotation text format: one box per line, "class_id x y w h", decimal
// integers in pixel units. Boxes must lie inside [0,w)x[0,h) when validated
// against an image.
RegionAnnotation read_annotation(const std::string& path);
void write_annotation(const RegionAnnotation& ann, const std::string& path);
void validate_annotation(const RegionAnnotation& ann, const ImageTensor& img);

}  // namespace semlink
