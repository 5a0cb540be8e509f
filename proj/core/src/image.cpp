#include "semlink/image.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace semlink {

ImageTensor ImageTensor::filled(int h, int w, int c, std::uint8_t value) {
  ImageTensor img;
  img.height = h;
  img.width = w;
  img.channels = c;
  img.pixels.assign(static_cast<std::size_t>(h) * w * c, value);
  return img;
}

double RegionAnnotation::area_fraction(int img_h, int img_w) const {
  if (boxes.empty() || img_h <= 0 || img_w <= 0) return 0.0;
  // Union via a coverage bitmap; box counts are tiny so this is fine.
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(img_h) * img_w, 0);
  for (const Box& b : boxes) {
    int x0 = std::max(0, b.x);
    int y0 = std::max(0, b.y);
    int x1 = std::min(img_w, b.x + b.w);
    int y1 = std::min(img_h, b.y + b.h);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) covered[static_cast<std::size_t>(y) * img_w + x] = 1;
  }
  std::size_t n = 0;
  for (std::uint8_t v : covered) n += v;
  return static_cast<double>(n) / (static_cast<double>(img_h) * img_w);
}

namespace {

// Skips whitespace and '#' comments between PNM header tokens.
int next_pnm_int(std::istream& in) {
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int v = 0;
  if (!(in >> v)) throw std::runtime_error("pnm: malformed header");
  return v;
}

}  // namespace

ImageTensor read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pnm: cannot open " + path);
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6'))
    throw std::runtime_error("pnm: " + path + " is not binary PGM/PPM");
  ImageTensor img;
  img.channels = (kind == '6') ? 3 : 1;
  img.width = next_pnm_int(in);
  img.height = next_pnm_int(in);
  int maxval = next_pnm_int(in);
  if (maxval != 255) throw std::runtime_error("pnm: only maxval 255 supported");
  in.get();  // single whitespace after maxval
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.pixels.size())
    throw std::runtime_error("pnm: truncated pixel data in " + path);
  return img;
}

void write_pnm(const ImageTensor& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3)
    throw std::runtime_error("pnm: channels must be 1 or 3");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pnm: cannot write " + path);
  out << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
}

RegionAnnotation read_annotation(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("annotation: cannot open " + path);
  RegionAnnotation ann;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Box b;
    if (!(ss >> b.class_id >> b.x >> b.y >> b.w >> b.h))
      throw std::runtime_error("annotation: malformed line '" + line + "'");
    ann.boxes.push_back(b);
  }
  return ann;
}

void write_annotation(const RegionAnnotation& ann, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("annotation: cannot write " + path);
  for (const Box& b : ann.boxes)
    out << b.class_id << " " << b.x << " " << b.y << " " << b.w << " " << b.h << "\n";
}

void validate_annotation(const RegionAnnotation& ann, const ImageTensor& img) {
  for (const Box& b : ann.boxes) {
    if (b.class_id < 1 || b.class_id > 80)
      throw std::runtime_error("annotation: class_id out of [1,80]");
    if (b.w <= 0 || b.h <= 0 || b.x < 0 || b.y < 0 || b.x + b.w > img.width ||
        b.y + b.h > img.height)
      throw std::runtime_error("annotation: box outside image bounds");
  }
}

}  // namespace semlink
