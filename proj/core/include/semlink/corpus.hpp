#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semlink/image.hpp"

namespace semlink {

struct CorpusItem {
  ImageTensor image;
  RegionAnnotation annotation;
};

// Deterministic synthetic test corpus: smooth shaded backgrounds with a few
// textured geometric objects, each annotated with its bounding box and a
// COCO-style class id. Stands in for photographic data in tests and the
// default experiment pipelines.
std::vector<CorpusItem> make_corpus(int count, int size, int channels, std::uint64_t seed);

// Writes image_%03d.ppm / image_%03d.txt pairs; returns file stems.
std::vector<std::string> write_corpus(const std::vector<CorpusItem>& corpus,
                                      const std::string& dir);

// Loads every image_*.ppm (and its .txt annotation when present) from dir.
std::vector<CorpusItem> load_corpus(const std::string& dir);

std::vector<ImageTensor> corpus_images(const std::vector<CorpusItem>& corpus);

}  // namespace semlink
