#pragma once

#include <filesystem>
#include <iosfwd>

#include "grmc/tensor.hpp"

namespace grmc::io {

// Binary tensor files, little-endian:
//   "GRNT" | u32 rank | u32 dims[rank] | float32 payload (row-major)
// The float64 sibling "GRND" has the same layout with a float64 payload; it
// is what checkpoints use so that resumed runs see bit-identical state.

void write_grnt(std::ostream& os, const ad::Tensor& t);
void write_grnd(std::ostream& os, const ad::Tensor& t);
/// Reads either variant, dispatching on the magic.
ad::Tensor read_tensor(std::istream& is);

void save_grnt(const std::filesystem::path& path, const ad::Tensor& t);
ad::Tensor load_tensor(const std::filesystem::path& path);

/// 2-D CSV: one row per line, comma separated, no header.
void save_csv(const std::filesystem::path& path, const ad::Tensor& t);
ad::Tensor load_csv(const std::filesystem::path& path);

/// Dispatch on extension: ".csv" → CSV, anything else → binary.
ad::Tensor load_any(const std::filesystem::path& path);

}  // namespace grmc::io
