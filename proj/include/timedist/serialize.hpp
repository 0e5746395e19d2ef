#pragma once

#include "timedist/numerics.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace timedist::snapshot {

// Flat binary snapshot layout shared by codec and model checkpoints:
// 8-byte magic "DISTIME1", then unsigned 32-bit little-endian dimension
// words, then parameters as 64-bit little-endian floats in declaration
// order (matrices row-major).

inline constexpr char kMagic[9] = "DISTIME1";

void write_magic(std::ostream& os);
void expect_magic(std::istream& is);

void write_u32(std::ostream& os, uint32_t v);
uint32_t read_u32(std::istream& is);

void write_f64(std::ostream& os, double v);
double read_f64(std::istream& is);

void write_tag(std::ostream& os, const char tag[4]);
void expect_tag(std::istream& is, const char tag[4]);

/// Row-major coefficients, no shape header; the caller owns the shape.
void write_mat(std::ostream& os, const Mat& m);
void read_mat(std::istream& is, Mat& m);

/// Dimension chain as u32 words (count then dims) followed by each layer's
/// weight matrix and bias row.
void write_stack(std::ostream& os, const DenseStack& stack);
DenseStack read_stack(std::istream& is);

}  // namespace timedist::snapshot
