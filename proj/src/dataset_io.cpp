#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "mvfd/binio.hpp"
#include "mvfd/dataset.hpp"

// On-disk layout (see docs/formats.md):
//   sample_NNNNN.bin: 8-byte magic "MVGPR1\0\0", then H_m, W_m, H_t, W_t as
//   little-endian u16, then main view pixels as little-endian f32 (row-major),
//   then top view pixels, then one label byte.
//   manifest.json: counts, dims, noise level, seed, format version, config hash.

namespace mvfd::dataset {

namespace {

constexpr char kMagic[8] = {'M', 'V', 'G', 'P', 'R', '1', '\0', '\0'};
constexpr int kFormatVersion = 1;

std::string sample_filename(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%05zu.bin", index);
  return buf;
}

void write_sample(const std::filesystem::path& path, const MultiViewSample& s) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail_runtime(cat("cannot open ", path.string(), " for writing"));
  binio::write_bytes(os, kMagic, 8);
  binio::write_u16(os, static_cast<std::uint16_t>(s.main_view.h));
  binio::write_u16(os, static_cast<std::uint16_t>(s.main_view.w));
  binio::write_u16(os, static_cast<std::uint16_t>(s.top_view.h));
  binio::write_u16(os, static_cast<std::uint16_t>(s.top_view.w));
  for (double v : s.main_view.pix) binio::write_f32(os, static_cast<float>(v));
  for (double v : s.top_view.pix) binio::write_f32(os, static_cast<float>(v));
  binio::write_u8(os, static_cast<std::uint8_t>(s.label));
  if (!os) fail_runtime(cat("write failed for ", path.string()));
}

MultiViewSample read_sample(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail_runtime(cat("cannot open sample file ", path.string()));
  char magic[8];
  binio::read_bytes(is, magic, 8, "sample magic");
  if (std::memcmp(magic, kMagic, 8) != 0)
    fail_runtime(cat("bad magic in ", path.string(), " (not an MVGPR1 sample file)"));
  MultiViewSample s;
  const std::size_t mh = binio::read_u16(is, "H_m");
  const std::size_t mw = binio::read_u16(is, "W_m");
  const std::size_t th = binio::read_u16(is, "H_t");
  const std::size_t tw = binio::read_u16(is, "W_t");
  s.main_view = Image(mh, mw);
  s.top_view = Image(th, tw);
  for (auto& v : s.main_view.pix) v = static_cast<double>(binio::read_f32(is, "main view"));
  for (auto& v : s.top_view.pix) v = static_cast<double>(binio::read_f32(is, "top view"));
  s.label = binio::read_u8(is, "label");
  if (s.label >= kNumClasses)
    fail_runtime(cat("label ", s.label, " out of range in ", path.string()));
  return s;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir,
                  const std::vector<MultiViewSample>& samples, const GenConfig& cfg,
                  const std::string& config_hash) {
  std::filesystem::create_directories(dir);

  nlohmann::ordered_json m;
  m["format_version"] = kFormatVersion;
  m["magic"] = "MVGPR1";
  m["counts"] = cfg.counts;
  m["main_dims"] = {cfg.main_h, cfg.main_w};
  m["top_dims"] = {cfg.top_h, cfg.top_w};
  m["noise_level"] = cfg.noise_level;
  m["seed"] = cfg.seed;
  m["n_samples"] = samples.size();
  m["config_hash"] = config_hash;
  {
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) fail_runtime(cat("cannot write ", (dir / "manifest.json").string()));
    os << m.dump(2) << "\n";
  }

  for (std::size_t i = 0; i < samples.size(); ++i)
    write_sample(dir / sample_filename(i), samples[i]);
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream is(manifest_path);
  if (!is) fail_runtime(cat("dataset manifest not found: ", manifest_path.string()));

  nlohmann::json m;
  try {
    is >> m;
  } catch (const nlohmann::json::exception& e) {
    fail_runtime(cat("corrupt dataset manifest ", manifest_path.string(), ": ", e.what()));
  }
  if (!m.contains("format_version") || !m["format_version"].is_number_integer())
    fail_runtime(cat("dataset manifest ", manifest_path.string(),
                     " is missing its format version"));
  const int version = m["format_version"].get<int>();
  if (version != kFormatVersion)
    fail_runtime(cat("unsupported dataset format version ", version, " in ",
                     manifest_path.string(), " (expected ", kFormatVersion, ")"));

  LoadedDataset out;
  out.manifest.format_version = version;
  out.manifest.config_hash = m.value("config_hash", "");
  out.manifest.n_samples = m.at("n_samples").get<std::size_t>();
  out.manifest.gen.counts = m.at("counts").get<std::array<std::size_t, 4>>();
  const auto md = m.at("main_dims").get<std::array<std::size_t, 2>>();
  const auto td = m.at("top_dims").get<std::array<std::size_t, 2>>();
  out.manifest.gen.main_h = md[0];
  out.manifest.gen.main_w = md[1];
  out.manifest.gen.top_h = td[0];
  out.manifest.gen.top_w = td[1];
  out.manifest.gen.noise_level = m.at("noise_level").get<double>();
  out.manifest.gen.seed = m.at("seed").get<std::uint64_t>();

  out.samples.reserve(out.manifest.n_samples);
  for (std::size_t i = 0; i < out.manifest.n_samples; ++i) {
    auto s = read_sample(dir / sample_filename(i));
    if (s.main_view.h != out.manifest.gen.main_h || s.main_view.w != out.manifest.gen.main_w ||
        s.top_view.h != out.manifest.gen.top_h || s.top_view.w != out.manifest.gen.top_w)
      fail_runtime(cat("sample ", i, " dims disagree with the manifest in ", dir.string()));
    out.samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace mvfd::dataset
