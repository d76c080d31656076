#include "mvfd/checkpoint.hpp"

#include <fstream>

#include "mvfd/binio.hpp"

// Layout (see docs/formats.md): 8-byte magic "MVFDCKP1", u32 version, then
// three sections (strings, u64 scalars, tensors), each a u32 count followed by
// length-prefixed names and little-endian payloads. Tensor dims are u32,
// values are f64.

namespace mvfd::ckpt {

namespace {
constexpr char kMagic[8] = {'M', 'V', 'F', 'D', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

void write_name(std::ostream& os, const std::string& name) {
  if (name.size() > 0xFFFF) fail_invalid("checkpoint: entry name too long");
  binio::write_u16(os, static_cast<std::uint16_t>(name.size()));
  binio::write_bytes(os, name.data(), name.size());
}

std::string read_name(std::istream& is) {
  const std::size_t n = binio::read_u16(is, "entry name length");
  std::string name(n, '\0');
  binio::read_bytes(is, name.data(), n, "entry name");
  return name;
}
}  // namespace

void Container::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail_runtime(cat("cannot open checkpoint ", path.string(), " for writing"));
  binio::write_bytes(os, kMagic, 8);
  binio::write_u32(os, kVersion);

  binio::write_u32(os, static_cast<std::uint32_t>(strings.size()));
  for (const auto& [name, value] : strings) {
    write_name(os, name);
    binio::write_u32(os, static_cast<std::uint32_t>(value.size()));
    binio::write_bytes(os, value.data(), value.size());
  }

  binio::write_u32(os, static_cast<std::uint32_t>(u64s.size()));
  for (const auto& [name, value] : u64s) {
    write_name(os, name);
    binio::write_u64(os, value);
  }

  binio::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_name(os, name);
    binio::write_u8(os, static_cast<std::uint8_t>(t.ndim()));
    for (std::size_t d : t.shape) binio::write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.data) binio::write_f64(os, v);
  }
  if (!os) fail_runtime(cat("write failed for checkpoint ", path.string()));
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail_runtime(cat("cannot open checkpoint ", path.string()));
  char magic[8];
  binio::read_bytes(is, magic, 8, "checkpoint magic");
  if (std::memcmp(magic, kMagic, 8) != 0)
    fail_runtime(cat(path.string(), " is not an MVFDCKP1 checkpoint"));
  const std::uint32_t version = binio::read_u32(is, "checkpoint version");
  if (version != kVersion)
    fail_runtime(cat("unsupported checkpoint version ", version, " in ", path.string()));

  Container c;
  for (std::uint32_t i = 0, n = binio::read_u32(is, "string count"); i < n; ++i) {
    std::string name = read_name(is);
    std::string value(binio::read_u32(is, "string length"), '\0');
    binio::read_bytes(is, value.data(), value.size(), "string value");
    c.strings.emplace(std::move(name), std::move(value));
  }
  for (std::uint32_t i = 0, n = binio::read_u32(is, "u64 count"); i < n; ++i) {
    std::string name = read_name(is);
    c.u64s.emplace(std::move(name), binio::read_u64(is, "u64 value"));
  }
  for (std::uint32_t i = 0, n = binio::read_u32(is, "tensor count"); i < n; ++i) {
    std::string name = read_name(is);
    const std::size_t ndim = binio::read_u8(is, "tensor rank");
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = binio::read_u32(is, "tensor dim");
    numerics::Tensor t(shape);
    for (auto& v : t.data) v = binio::read_f64(is, "tensor value");
    c.tensors.emplace(std::move(name), std::move(t));
  }
  return c;
}

const numerics::Tensor& Container::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail_runtime(cat("checkpoint is missing tensor ", name));
  return it->second;
}

std::uint64_t Container::u64(const std::string& name) const {
  auto it = u64s.find(name);
  if (it == u64s.end()) fail_runtime(cat("checkpoint is missing value ", name));
  return it->second;
}

const std::string& Container::str(const std::string& name) const {
  auto it = strings.find(name);
  if (it == strings.end()) fail_runtime(cat("checkpoint is missing string ", name));
  return it->second;
}

}  // namespace mvfd::ckpt
