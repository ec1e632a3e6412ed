#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "speckle.hpp"

namespace despeckler {

struct DatasetOptions {
  std::size_t patch_size = 256;
  double looks = 1.0;
  std::uint64_t seed = 0;
  std::size_t train_count = 450;
  std::size_t val_count = 50;
};

struct ManifestEntry {
  std::string id;     // "<split>-NNNN"
  std::filesystem::path clean;     // relative to the manifest directory
  std::filesystem::path speckled;
  std::uint64_t seed = 0;
  double looks = 1.0;

  std::string split() const;
};

/// Line-oriented, tab-separated list of (id, clean, speckled, seed, looks).
/// Lines starting with '#' are comments; the first comment records the
/// generation options, including that speckled values are not clipped.
struct Manifest {
  std::filesystem::path directory;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(const std::string& name) const;
  std::size_t count(const std::string& name) const;
};

Manifest read_manifest(const std::filesystem::path& path);

/// Centre-crops each readable corpus image (sorted by file name) to the patch
/// size, applies speckle with a per-image seed derived from (seed, index) and
/// writes clean/speckled float tensors, PNG previews and `manifest.txt`.
/// Unreadable or too-small images are skipped with a warning.
Manifest build_dataset(const std::filesystem::path& corpus_dir,
                       const std::filesystem::path& out_dir, const DatasetOptions& opts);

ImagePair load_pair(const Manifest& manifest, const ManifestEntry& entry);

}  // namespace despeckler
