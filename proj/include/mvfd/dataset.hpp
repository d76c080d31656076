#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvfd/rng.hpp"

namespace mvfd::dataset {

inline constexpr int kNumClasses = 4;
inline constexpr std::array<const char*, 4> kClassNames = {"Normal", "Crack", "Void",
                                                           "Disengaging"};

/// Single-channel image, row-major, pixel values in [0, 1] quantized to
/// 32-bit float precision (so memory and the on-disk format agree exactly).
struct Image {
  std::size_t h = 0, w = 0;
  std::vector<double> pix;

  Image() = default;
  Image(std::size_t h_, std::size_t w_) : h(h_), w(w_), pix(h_ * w_, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return pix[r * w + c]; }
  double at(std::size_t r, std::size_t c) const { return pix[r * w + c]; }
  bool operator==(const Image&) const = default;
};

/// One two-view sample: main view (travel-depth plane), top view
/// (travel-width plane), class label.
struct MultiViewSample {
  Image main_view;
  Image top_view;
  int label = 0;
  bool operator==(const MultiViewSample&) const = default;
};

struct GenConfig {
  std::array<std::size_t, 4> counts = {200, 286, 173, 23};
  std::size_t main_h = 32, main_w = 32;
  std::size_t top_h = 32, top_w = 24;
  double noise_level = 0.05;
  std::uint64_t seed = 42;
};

/// Deterministic synthetic benchmark. Crack and Void share one main-view
/// pattern family (hyperbola-like arc) and differ only in the top view
/// (thin streak vs compact blob), so separating them requires both views.
std::vector<MultiViewSample> generate(const GenConfig& cfg);

struct DatasetSplit {
  std::vector<MultiViewSample> train;
  std::vector<MultiViewSample> validation;
  std::vector<MultiViewSample> test;
  std::uint64_t seed = 0;
};

/// Stratified per class; leftover samples after flooring go to the split with
/// the largest fractional remainder (ties resolved toward test, then
/// validation).
DatasetSplit split(const std::vector<MultiViewSample>& samples,
                   const std::array<double, 3>& ratios, std::uint64_t seed);

struct AugmentPolicy {
  // base policy: resize (0 = keep current dims) + random horizontal flip
  std::size_t resize_main_h = 0, resize_main_w = 0;
  std::size_t resize_top_h = 0, resize_top_w = 0;
  double flip_prob = 0.5;

  enum class Extra { None, Cutout, GaussianNoise };
  Extra extra = Extra::None;
  std::size_t cutout_size = 8;
  std::size_t cutout_count = 1;
  double noise_sigma = 0.05;

  static AugmentPolicy identity() {
    AugmentPolicy p;
    p.flip_prob = 0.0;
    return p;
  }
};

/// Label-preserving; the horizontal flip uses one coin for both views (they
/// share the travel axis), cutout holes are placed independently per view and
/// always fit inside the image.
MultiViewSample augment(const MultiViewSample& sample, const AugmentPolicy& policy,
                        Rng& rng);

/// Up-samples every class to the majority class count with augmented copies
/// (never raw duplicates) of same-class originals.
std::vector<MultiViewSample> rebalance(const std::vector<MultiViewSample>& train,
                                       const AugmentPolicy& policy, Rng& rng);

std::array<std::size_t, 4> class_counts(const std::vector<MultiViewSample>& samples);

// individual transforms (exposed for tests and the trainer's per-epoch path)
Image flip_horizontal(const Image& img);
Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w);
Image cutout(const Image& img, std::size_t hole, std::size_t count, Rng& rng);
Image add_gaussian_noise(const Image& img, double sigma, Rng& rng);

// --------------------------------------------------------------- persistence
//
// A dataset directory holds manifest.json plus one binary file per sample
// (sample_00000.bin, ...). See docs/formats.md for the exact byte layout.

struct Manifest {
  int format_version = 1;
  GenConfig gen;
  std::size_t n_samples = 0;
  std::string config_hash;
};

void save_dataset(const std::filesystem::path& dir,
                  const std::vector<MultiViewSample>& samples, const GenConfig& cfg,
                  const std::string& config_hash);

struct LoadedDataset {
  Manifest manifest;
  std::vector<MultiViewSample> samples;
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace mvfd::dataset
