#include "cslab/stns.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace cslab {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'N', 'S'};
constexpr std::uint8_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "STNS I/O assumes a little-endian host");

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

void stns_write(std::ostream& out, const Tensor& t) {
  if (!t.defined()) throw InvalidArgument("stns_write: undefined tensor");
  const Shape& shape = t.shape();
  if (shape.size() > 255) throw InvalidArgument("stns_write: rank exceeds 255");
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  out.put(static_cast<char>(shape.size()));
  for (std::size_t d : shape) {
    if (d > UINT32_MAX) throw InvalidArgument("stns_write: dim exceeds u32");
    write_u32(out, static_cast<std::uint32_t>(d));
  }
  const auto data = t.data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!out) throw IoError("stns_write: stream write failed");
}

Tensor stns_read(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("stns_read: bad magic, not an STNS file");
  const int version = in.get();
  if (version != kVersion)
    throw IoError("stns_read: unsupported version " + std::to_string(version));
  const int rank = in.get();
  if (rank < 0 || !in) throw IoError("stns_read: truncated header");
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) d = read_u32(in);
  if (!in) throw IoError("stns_read: truncated dims");
  std::vector<double> data(shape_numel(shape));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw IoError("stns_read: truncated payload");
  return Tensor::from_data(std::move(shape), std::move(data));
}

void stns_save(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("stns_save: cannot open " + path.string());
  stns_write(out, t);
}

Tensor stns_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("stns_load: cannot open " + path.string());
  return stns_read(in);
}

}  // namespace cslab
