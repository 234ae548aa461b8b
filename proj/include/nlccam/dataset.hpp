#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "nlccam/localization.hpp"
#include "nlccam/storage.hpp"
#include "nlccam/tensor.hpp"

namespace nlccam {

struct Sample {
  std::string id;
  Tensor image;  // C x H x W
  std::size_t label = 0;
  std::vector<Box> boxes;
};

using Dataset = std::vector<Sample>;

// Loads every entry of a manifest; tensor paths resolve against the
// manifest's directory unless absolute.
inline Dataset load_split(const std::filesystem::path& manifest) {
  const auto entries = read_manifest(manifest);
  const auto root = manifest.parent_path();
  Dataset out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    std::filesystem::path p(e.tensor_path);
    if (p.is_relative()) p = root / p;
    out.push_back({e.id, load_tensor(p), e.label, e.boxes});
  }
  return out;
}

// Writes `<dir>/<split>/<id>.tensor` files and `<dir>/<split>.tsv`.
inline void save_split(const std::filesystem::path& dir, const std::string& split, const Dataset& data) {
  std::vector<ManifestEntry> entries;
  entries.reserve(data.size());
  for (const auto& s : data) {
    const std::string rel = split + "/" + s.id + ".tensor";
    save_tensor(dir / rel, s.image);
    entries.push_back({s.id, rel, s.label, s.boxes});
  }
  write_manifest(dir / (split + ".tsv"), entries);
}

}  // namespace nlccam
