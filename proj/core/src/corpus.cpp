#include "semlink/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "semlink/rng.hpp"

namespace semlink {

namespace {

struct Shade {
  double base[3];
  double gx[3];
  double gy[3];
};

double smoothstep(double e0, double e1, double x) {
  double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

std::vector<CorpusItem> make_corpus(int count, int size, int channels, std::uint64_t seed) {
  if (channels != 1 && channels != 3)
    throw std::invalid_argument("corpus: channels must be 1 or 3");
  std::vector<CorpusItem> out;
  out.reserve(count);

  for (int idx = 0; idx < count; ++idx) {
    CounterRng rng(derive_seed(seed, 0xC0, static_cast<std::uint64_t>(idx)));
    CorpusItem item;
    ImageTensor img = ImageTensor::filled(size, size, channels, 0);

    Shade bg;
    for (int c = 0; c < 3; ++c) {
      bg.base[c] = 60.0 + 140.0 * rng.next_unit();
      bg.gx[c] = (rng.next_unit() - 0.5) * 80.0 / size;
      bg.gy[c] = (rng.next_unit() - 0.5) * 80.0 / size;
    }

    // Low-frequency ripple: cheap for a transform codec, but patch-mean
    // infill of a masked patch loses it, so masking has a visible cost.
    double fx = (1.5 + rng.next_unit() * 2.0) * 2.0 * M_PI / size;
    double fy = (1.5 + rng.next_unit() * 2.0) * 2.0 * M_PI / size;
    double amp = 11.0 + 8.0 * rng.next_unit();
    double phase = rng.next_unit() * 2.0 * M_PI;

    std::vector<double> px(static_cast<std::size_t>(size) * size * 3);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double ripple = amp * std::sin(fx * x + phase) * std::cos(fy * y);
        for (int c = 0; c < 3; ++c)
          px[(static_cast<std::size_t>(y) * size + x) * 3 + c] =
              bg.base[c] + bg.gx[c] * x * size / 64.0 + bg.gy[c] * y * size / 64.0 + ripple;
      }

    // One or two objects: filled rectangles or discs with distinct color
    // and a light texture so keypoints concentrate there.
    int n_objects = 1 + static_cast<int>(rng.next_u64() % 2);
    for (int o = 0; o < n_objects; ++o) {
      int w = size / 4 + static_cast<int>(rng.next_u64() % (size / 4));
      int h = size / 4 + static_cast<int>(rng.next_u64() % (size / 4));
      int x0 = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(size - w));
      int y0 = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(size - h));
      bool disc = rng.next_u64() & 1;
      double col[3];
      for (int c = 0; c < 3; ++c) col[c] = 30.0 + 200.0 * rng.next_unit();
      double tex_f = 2.0 * M_PI * (2.0 + 3.0 * rng.next_unit()) / std::max(w, h);
      double cx = x0 + w / 2.0, cy = y0 + h / 2.0;

      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) {
          double inside = 1.0;
          if (disc) {
            double dx = (x - cx) / (w / 2.0), dy = (y - cy) / (h / 2.0);
            inside = 1.0 - smoothstep(0.85, 1.0, std::sqrt(dx * dx + dy * dy));
          }
          if (inside <= 0.0) continue;
          double tex = 28.0 * std::sin(tex_f * (x - x0)) * std::sin(tex_f * (y - y0));
          for (int c = 0; c < 3; ++c) {
            auto& v = px[(static_cast<std::size_t>(y) * size + x) * 3 + c];
            v = v * (1.0 - inside) + (col[c] + tex) * inside;
          }
        }

      // A few high-contrast speckles so feature points concentrate on the
      // object rather than the background.
      int n_dots = 2 + static_cast<int>(rng.next_u64() % 3);
      for (int dnum = 0; dnum < n_dots; ++dnum) {
        int dx0 = x0 + 2 + static_cast<int>(rng.next_u64() % std::max(1, w - 6));
        int dy0 = y0 + 2 + static_cast<int>(rng.next_u64() % std::max(1, h - 6));
        double delta = (rng.next_u64() & 1) ? 95.0 : -95.0;
        for (int y = dy0; y < std::min(size, dy0 + 3); ++y)
          for (int x = dx0; x < std::min(size, dx0 + 3); ++x)
            for (int c = 0; c < 3; ++c)
              px[(static_cast<std::size_t>(y) * size + x) * 3 + c] += delta;
      }

      Box b;
      b.class_id = 1 + static_cast<int>(rng.next_u64() % 80);
      b.x = x0;
      b.y = y0;
      b.w = w;
      b.h = h;
      item.annotation.boxes.push_back(b);
    }

    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        for (int c = 0; c < channels; ++c) {
          double v = px[(static_cast<std::size_t>(y) * size + x) * 3 + (channels == 3 ? c : 0)];
          img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
    item.image = std::move(img);
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<std::string> write_corpus(const std::vector<CorpusItem>& corpus,
                                      const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> stems;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "image_%03zu", i);
    std::string stem = dir + "/" + name;
    write_pnm(corpus[i].image, stem + (corpus[i].image.channels == 3 ? ".ppm" : ".pgm"));
    write_annotation(corpus[i].annotation, stem + ".txt");
    stems.push_back(stem);
  }
  return stems;
}

std::vector<CorpusItem> load_corpus(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto ext = entry.path().extension();
    if (ext == ".ppm" || ext == ".pgm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("corpus: no .ppm/.pgm files in " + dir);

  std::vector<CorpusItem> out;
  for (const auto& f : files) {
    CorpusItem item;
    item.image = read_pnm(f.string());
    std::filesystem::path ann = f;
    ann.replace_extension(".txt");
    if (std::filesystem::exists(ann)) {
      item.annotation = read_annotation(ann.string());
      validate_annotation(item.annotation, item.image);
    }
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<ImageTensor> corpus_images(const std::vector<CorpusItem>& corpus) {
  std::vector<ImageTensor> imgs;
  imgs.reserve(corpus.size());
  for (const CorpusItem& c : corpus) imgs.push_back(c.image);
  return imgs;
}

}  // namespace semlink
