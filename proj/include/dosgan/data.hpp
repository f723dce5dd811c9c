#pragma once

#include "dosgan/image_io.hpp"
#include "dosgan/networks.hpp"
#include "dosgan/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace dosgan {

class ImageCache;

struct DomainEntry {
  std::string name;
  std::vector<std::filesystem::path> images;
};

/// Images grouped by domain. Domain index i is domains[i]; order is
/// lexicographic by directory name. Immutable once built; the decoded-image
/// cache behind it is internally synchronized.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<DomainEntry> domains;
  int image_h = 0;
  int image_w = 0;
  int channels = 3;
  PixelRange normalization;
  std::shared_ptr<ImageCache> cache;

  int num_domains() const { return int(domains.size()); }
  std::size_t total_images() const;
  std::vector<std::size_t> counts() const;
  /// Stable hash of geometry, domain names and image paths.
  std::uint64_t fingerprint() const;
  /// Decoded normalized CHW pixels of one image.
  const std::vector<float>& pixels(const std::filesystem::path& image) const;
};

struct ImageBatch {
  Tensor<float> pixels;     ///< [K, C, H, W] in the manifest's pixel range
  std::vector<int> labels;  ///< domain index of each image
};

/// Scans `root/<domain>/<image>`; see DatasetManifest for ordering.
/// Undecodable files are skipped with a warning on stderr.
DatasetManifest load_manifest(const std::filesystem::path& root, int image_h, int image_w, int channels);

/// K images drawn uniformly with replacement from one domain.
ImageBatch sample_batch(const DatasetManifest& manifest, int domain, int k, Rng& rng);

/// K images drawn uniformly with replacement from the union of all domains.
ImageBatch sample_pooled_batch(const DatasetManifest& manifest, int k, Rng& rng);

/// Every image of one domain, in manifest order.
ImageBatch domain_images(const DatasetManifest& manifest, int domain);

/// Specific images as a batch; labels are set to `label`.
ImageBatch load_batch(const DatasetManifest& manifest, const std::vector<std::filesystem::path>& images, int label);

/// Desk-scale multi-domain data: each domain has its own background colour
/// (the domain-specific factor); each image has an independently placed
/// shape (the domain-independent factor).
struct SyntheticSpec {
  int num_domains = 4;
  int per_domain = 256;
  int image_size = 32;
  std::uint64_t seed = 7;
  std::filesystem::path out;
};

/// One row of `<root>/factors.tsv`.
struct FactorRow {
  std::string path;  ///< relative to the dataset root
  int domain = 0;
  int content_shape = 0;  ///< 0 circle, 1 square, 2 triangle
  double content_x = 0;   ///< shape centre, pixels
  double content_y = 0;
};

DatasetManifest make_synthetic_domains(const SyntheticSpec& spec);
std::vector<FactorRow> read_factor_table(const std::filesystem::path& root);

/// Per-domain disjoint split; returns (train, test).
std::pair<DatasetManifest, DatasetManifest> split_train_test(const DatasetManifest& manifest, double test_fraction,
                                                             Rng& rng);
/// Same, with a fixed number of test images per domain.
std::pair<DatasetManifest, DatasetManifest> split_train_test_count(const DatasetManifest& manifest,
                                                                   int test_per_domain, Rng& rng);

/// Manifest restricted to the listed domains (re-indexed in the given order).
DatasetManifest select_domains(const DatasetManifest& manifest, const std::vector<int>& domains);

}  // namespace dosgan
