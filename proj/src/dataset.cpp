#include "mvfd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mvfd/common.hpp"

namespace mvfd::dataset {

namespace {

void clamp_and_quantize(Image& img) {
  for (auto& v : img.pix) v = quantize_f32(std::clamp(v, 0.0, 1.0));
}

/// Shared deterministic background: low base level with a mild depth ramp.
void paint_background(Image& img) {
  for (std::size_t r = 0; r < img.h; ++r) {
    const double level = 0.12 + 0.06 * static_cast<double>(r) /
                                    static_cast<double>(img.h - 1);
    for (std::size_t c = 0; c < img.w; ++c) img.at(r, c) = level;
  }
}

void add_noise(Image& img, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  for (auto& v : img.pix) v += rng.normal(0.0, sigma);
}

/// Bright downward-opening arc. One sampler serves both Crack and Void main
/// views: their main-view distributions are identical by construction.
void paint_arc(Image& img, Rng& rng) {
  const double h = static_cast<double>(img.h), w = static_cast<double>(img.w);
  const double apex_c = rng.uniform(0.40 * w, 0.60 * w);
  const double apex_r = rng.uniform(0.22 * h, 0.38 * h);
  const double spread = rng.uniform(0.06, 0.12) * 32.0 / w;
  const double amp = rng.uniform(0.65, 0.85);
  const double sigma = 1.0;
  for (std::size_t c = 0; c < img.w; ++c) {
    const double dc = static_cast<double>(c) - apex_c;
    const double yc = apex_r + spread * dc * dc;
    if (yc > h + 3.0) continue;
    const long lo = std::max<long>(0, static_cast<long>(std::floor(yc - 3.0)));
    const long hi = std::min<long>(static_cast<long>(img.h) - 1,
                                   static_cast<long>(std::ceil(yc + 3.0)));
    for (long r = lo; r <= hi; ++r) {
      const double dr = static_cast<double>(r) - yc;
      img.at(static_cast<std::size_t>(r), c) += amp * std::exp(-dr * dr / (2 * sigma * sigma));
    }
  }
}

/// Thin near-horizontal streak confined to the upper band of the top view.
void paint_streak(Image& img, Rng& rng) {
  const double h = static_cast<double>(img.h);
  const double row0 = rng.uniform(0.22 * h, 0.32 * h);
  const double slope = rng.uniform(-0.05, 0.05);
  const double amp = rng.uniform(0.80, 1.00);
  const double sigma = 1.1;
  for (std::size_t c = 0; c < img.w; ++c) {
    const double yc = row0 + slope * static_cast<double>(c);
    const long lo = std::max<long>(0, static_cast<long>(std::floor(yc - 2.0)));
    const long hi = std::min<long>(static_cast<long>(img.h) - 1,
                                   static_cast<long>(std::ceil(yc + 2.0)));
    for (long r = lo; r <= hi; ++r) {
      const double dr = static_cast<double>(r) - yc;
      img.at(static_cast<std::size_t>(r), c) += amp * std::exp(-dr * dr / (2 * sigma * sigma));
    }
  }
}

/// Compact bright blob confined to the lower band of the top view.
void paint_blob(Image& img, Rng& rng) {
  const double h = static_cast<double>(img.h), w = static_cast<double>(img.w);
  const double cr = rng.uniform(0.60 * h, 0.75 * h);
  const double cc = rng.uniform(0.42 * w, 0.58 * w);
  const double sigma = rng.uniform(2.8, 3.4);
  const double amp = rng.uniform(0.85, 1.00);
  for (std::size_t r = 0; r < img.h; ++r) {
    for (std::size_t c = 0; c < img.w; ++c) {
      const double dr = static_cast<double>(r) - cr;
      const double dc = static_cast<double>(c) - cc;
      img.at(r, c) += amp * std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
    }
  }
}

/// Faint horizontal band in the main view (interlayer disengaging).
void paint_band(Image& img, Rng& rng) {
  const std::size_t band_h = 2 + rng.below(3);
  const std::size_t row0 =
      static_cast<std::size_t>(rng.uniform(0.42, 0.58) * static_cast<double>(img.h - band_h));
  const double amp = rng.uniform(0.28, 0.38);
  for (std::size_t r = row0; r < row0 + band_h && r < img.h; ++r)
    for (std::size_t c = 0; c < img.w; ++c) img.at(r, c) += amp;
}

/// Broad dark stain in the top view (below-background intensity).
void paint_stain(Image& img, Rng& rng) {
  const double h = static_cast<double>(img.h), w = static_cast<double>(img.w);
  const double cr = rng.uniform(0.40 * h, 0.60 * h);
  const double cc = rng.uniform(0.40 * w, 0.60 * w);
  const double sigma = rng.uniform(4.5, 6.0);
  const double amp = rng.uniform(0.30, 0.40);
  for (std::size_t r = 0; r < img.h; ++r) {
    for (std::size_t c = 0; c < img.w; ++c) {
      const double dr = static_cast<double>(r) - cr;
      const double dc = static_cast<double>(c) - cc;
      img.at(r, c) -= amp * std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
    }
  }
}

MultiViewSample make_sample(const GenConfig& cfg, int label, Rng& rng) {
  MultiViewSample s;
  s.label = label;
  s.main_view = Image(cfg.main_h, cfg.main_w);
  s.top_view = Image(cfg.top_h, cfg.top_w);
  paint_background(s.main_view);
  paint_background(s.top_view);
  switch (label) {
    case 0:  // Normal: background only
      break;
    case 1:  // Crack: arc in main, streak in top
      paint_arc(s.main_view, rng);
      paint_streak(s.top_view, rng);
      break;
    case 2:  // Void: same arc family in main, blob in top
      paint_arc(s.main_view, rng);
      paint_blob(s.top_view, rng);
      break;
    case 3:  // Disengaging: faint band in main, dark stain in top
      paint_band(s.main_view, rng);
      paint_stain(s.top_view, rng);
      break;
    default:
      fail_invalid(cat("dataset: unknown label ", label));
  }
  add_noise(s.main_view, cfg.noise_level, rng);
  add_noise(s.top_view, cfg.noise_level, rng);
  clamp_and_quantize(s.main_view);
  clamp_and_quantize(s.top_view);
  return s;
}

}  // namespace

std::vector<MultiViewSample> generate(const GenConfig& cfg) {
  for (std::size_t c = 0; c < cfg.counts.size(); ++c)
    if (cfg.counts[c] == 0)
      fail_invalid(cat("dataset: count for class ", kClassNames[c], " must be positive"));
  if (cfg.main_h < 16 || cfg.main_w < 16 || cfg.top_h < 16 || cfg.top_w < 16)
    fail_invalid(cat("dataset: dims too small to contain patterns (need >= 16x16, got main ",
                     cfg.main_h, "x", cfg.main_w, ", top ", cfg.top_h, "x", cfg.top_w, ")"));

  std::vector<MultiViewSample> out;
  out.reserve(cfg.counts[0] + cfg.counts[1] + cfg.counts[2] + cfg.counts[3]);
  for (int label = 0; label < kNumClasses; ++label) {
    for (std::size_t i = 0; i < cfg.counts[static_cast<std::size_t>(label)]; ++i) {
      Rng rng = Rng::stream(cfg.seed, "gen", static_cast<std::uint64_t>(label), i);
      out.push_back(make_sample(cfg, label, rng));
    }
  }
  return out;
}

std::array<std::size_t, 4> class_counts(const std::vector<MultiViewSample>& samples) {
  std::array<std::size_t, 4> counts{};
  for (const auto& s : samples) {
    if (s.label < 0 || s.label >= kNumClasses)
      fail_invalid(cat("dataset: label ", s.label, " out of range"));
    ++counts[static_cast<std::size_t>(s.label)];
  }
  return counts;
}

DatasetSplit split(const std::vector<MultiViewSample>& samples,
                   const std::array<double, 3>& ratios, std::uint64_t seed) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9)
    fail_invalid(cat("split: ratios must sum to 1, got ", sum));
  for (double r : ratios)
    if (r < 0.0) fail_invalid("split: ratios must be non-negative");

  // group indices per class
  std::array<std::vector<std::size_t>, 4> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int label = samples[i].label;
    if (label < 0 || label >= kNumClasses)
      fail_invalid(cat("split: label ", label, " out of range"));
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }

  DatasetSplit out;
  out.seed = seed;
  for (std::size_t cls = 0; cls < by_class.size(); ++cls) {
    auto& idx = by_class[cls];
    if (idx.empty()) continue;
    if (idx.size() < 3)
      fail_invalid(cat("split: class ", kClassNames[cls], " has only ", idx.size(),
                       " samples; at least 3 are required for stratification"));

    Rng rng = Rng::stream(seed, "split", cls);
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.below(i)]);

    // largest-remainder apportionment; ties go to the later split
    const double n = static_cast<double>(idx.size());
    std::array<std::size_t, 3> take{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      const double ideal = ratios[static_cast<std::size_t>(s)] * n;
      take[static_cast<std::size_t>(s)] = static_cast<std::size_t>(std::floor(ideal));
      rem[static_cast<std::size_t>(s)] = ideal - std::floor(ideal);
      assigned += take[static_cast<std::size_t>(s)];
    }
    for (std::size_t left = idx.size() - assigned; left > 0; --left) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (rem[static_cast<std::size_t>(s)] >= rem[static_cast<std::size_t>(best)]) best = s;
      ++take[static_cast<std::size_t>(best)];
      rem[static_cast<std::size_t>(best)] = -1.0;
    }

    std::size_t pos = 0;
    for (std::size_t i = 0; i < take[0]; ++i) out.train.push_back(samples[idx[pos++]]);
    for (std::size_t i = 0; i < take[1]; ++i) out.validation.push_back(samples[idx[pos++]]);
    for (std::size_t i = 0; i < take[2]; ++i) out.test.push_back(samples[idx[pos++]]);
  }
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out(img.h, img.w);
  for (std::size_t r = 0; r < img.h; ++r)
    for (std::size_t c = 0; c < img.w; ++c) out.at(r, c) = img.at(r, img.w - 1 - c);
  return out;
}

Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) fail_invalid("resize: target dims must be positive");
  if (out_h == img.h && out_w == img.w) return img;
  Image out(out_h, out_w);
  const double sy = static_cast<double>(img.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.w) / static_cast<double>(out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    const double fy = (static_cast<double>(r) + 0.5) * sy - 0.5;
    const long y0 = std::clamp<long>(static_cast<long>(std::floor(fy)), 0,
                                     static_cast<long>(img.h) - 1);
    const long y1 = std::min<long>(y0 + 1, static_cast<long>(img.h) - 1);
    const double wy = std::clamp(fy - static_cast<double>(y0), 0.0, 1.0);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double fx = (static_cast<double>(c) + 0.5) * sx - 0.5;
      const long x0 = std::clamp<long>(static_cast<long>(std::floor(fx)), 0,
                                       static_cast<long>(img.w) - 1);
      const long x1 = std::min<long>(x0 + 1, static_cast<long>(img.w) - 1);
      const double wx = std::clamp(fx - static_cast<double>(x0), 0.0, 1.0);
      const double v00 = img.at(static_cast<std::size_t>(y0), static_cast<std::size_t>(x0));
      const double v01 = img.at(static_cast<std::size_t>(y0), static_cast<std::size_t>(x1));
      const double v10 = img.at(static_cast<std::size_t>(y1), static_cast<std::size_t>(x0));
      const double v11 = img.at(static_cast<std::size_t>(y1), static_cast<std::size_t>(x1));
      out.at(r, c) = quantize_f32((1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                  wy * ((1 - wx) * v10 + wx * v11));
    }
  }
  return out;
}

Image cutout(const Image& img, std::size_t hole, std::size_t count, Rng& rng) {
  if (hole == 0 || hole > img.h || hole > img.w)
    fail_invalid(cat("cutout: hole size ", hole, " does not fit inside a ", img.h, "x",
                     img.w, " image"));
  Image out = img;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t r0 = rng.below(img.h - hole + 1);
    const std::size_t c0 = rng.below(img.w - hole + 1);
    for (std::size_t r = r0; r < r0 + hole; ++r)
      for (std::size_t c = c0; c < c0 + hole; ++c) out.at(r, c) = 0.0;
  }
  return out;
}

Image add_gaussian_noise(const Image& img, double sigma, Rng& rng) {
  Image out = img;
  for (auto& v : out.pix) v = quantize_f32(std::clamp(v + rng.normal(0.0, sigma), 0.0, 1.0));
  return out;
}

MultiViewSample augment(const MultiViewSample& sample, const AugmentPolicy& policy,
                        Rng& rng) {
  MultiViewSample out = sample;
  if (policy.resize_main_h && policy.resize_main_w)
    out.main_view = resize_bilinear(out.main_view, policy.resize_main_h, policy.resize_main_w);
  if (policy.resize_top_h && policy.resize_top_w)
    out.top_view = resize_bilinear(out.top_view, policy.resize_top_h, policy.resize_top_w);

  // one coin: the views share the travel axis, so they flip together
  if (policy.flip_prob > 0.0 && rng.coin(policy.flip_prob)) {
    out.main_view = flip_horizontal(out.main_view);
    out.top_view = flip_horizontal(out.top_view);
  }

  switch (policy.extra) {
    case AugmentPolicy::Extra::None:
      break;
    case AugmentPolicy::Extra::Cutout:
      out.main_view = cutout(out.main_view, policy.cutout_size, policy.cutout_count, rng);
      out.top_view = cutout(out.top_view, policy.cutout_size, policy.cutout_count, rng);
      break;
    case AugmentPolicy::Extra::GaussianNoise:
      out.main_view = add_gaussian_noise(out.main_view, policy.noise_sigma, rng);
      out.top_view = add_gaussian_noise(out.top_view, policy.noise_sigma, rng);
      break;
  }
  return out;
}

std::vector<MultiViewSample> rebalance(const std::vector<MultiViewSample>& train,
                                       const AugmentPolicy& policy, Rng& rng) {
  if (train.empty()) fail_invalid("rebalance: train set is empty");
  const auto counts = class_counts(train);
  const std::size_t target = *std::max_element(counts.begin(), counts.end());

  std::array<std::vector<std::size_t>, 4> by_class;
  for (std::size_t i = 0; i < train.size(); ++i)
    by_class[static_cast<std::size_t>(train[i].label)].push_back(i);

  std::vector<MultiViewSample> out = train;
  for (std::size_t cls = 0; cls < by_class.size(); ++cls) {
    const auto& members = by_class[cls];
    if (members.empty()) continue;
    for (std::size_t need = target - members.size(), k = 0; k < need; ++k) {
      const MultiViewSample& src = train[members[k % members.size()]];
      MultiViewSample copy = augment(src, policy, rng);
      if (copy == src) {
        // never emit a raw duplicate: force the flip
        copy.main_view = flip_horizontal(copy.main_view);
        copy.top_view = flip_horizontal(copy.top_view);
      }
      if (copy == src) {
        // perfectly symmetric image; nudge one pixel by one f32 step
        copy.main_view.pix[0] =
            quantize_f32(copy.main_view.pix[0] >= 0.5 ? copy.main_view.pix[0] - 1.0 / 256.0
                                                      : copy.main_view.pix[0] + 1.0 / 256.0);
      }
      out.push_back(std::move(copy));
    }
  }
  return out;
}

}  // namespace mvfd::dataset
