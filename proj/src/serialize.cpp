#include "timedist/serialize.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace timedist::snapshot {

static_assert(std::endian::native == std::endian::little,
              "snapshot IO assumes a little-endian host");

void write_magic(std::ostream& os) { os.write(kMagic, 8); }

void expect_magic(std::istream& is) {
  char buf[8];
  is.read(buf, 8);
  if (!is || std::memcmp(buf, kMagic, 8) != 0)
    throw std::runtime_error("snapshot: bad magic");
}

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw std::runtime_error("snapshot: truncated u32");
  return v;
}

void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) throw std::runtime_error("snapshot: truncated f64");
  return v;
}

void write_tag(std::ostream& os, const char tag[4]) { os.write(tag, 4); }

void expect_tag(std::istream& is, const char tag[4]) {
  char buf[4];
  is.read(buf, 4);
  if (!is || std::memcmp(buf, tag, 4) != 0) throw std::runtime_error("snapshot: bad section tag");
}

void write_mat(std::ostream& os, const Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) write_f64(os, m(r, c));
}

void read_mat(std::istream& is, Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = read_f64(is);
}

void write_stack(std::ostream& os, const DenseStack& stack) {
  const std::vector<int> dims = stack.dims();
  write_u32(os, static_cast<uint32_t>(dims.size()));
  for (int d : dims) write_u32(os, static_cast<uint32_t>(d));
  for (const DenseLayer& layer : stack.layers()) {
    write_mat(os, layer.w);
    write_mat(os, layer.b);
  }
}

DenseStack read_stack(std::istream& is) {
  const uint32_t ndims = read_u32(is);
  if (ndims < 2 || ndims > 64) throw std::runtime_error("snapshot: implausible stack dims");
  std::vector<int> dims(ndims);
  for (auto& d : dims) d = static_cast<int>(read_u32(is));
  Rng unused(0);
  DenseStack stack(dims, unused);
  for (DenseLayer& layer : stack.layers()) {
    read_mat(is, layer.w);
    read_mat(is, layer.b);
  }
  return stack;
}

}  // namespace timedist::snapshot
