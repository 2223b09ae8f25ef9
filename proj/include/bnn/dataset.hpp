#pragma once

// Synthetic two-class segmentation set: bright shapes on a muted textured
// background. Generation uses only +, -, *, / and sqrt on doubles drawn from a
// splitmix64 stream keyed by (seed, index), so the bytes are reproducible in
// any language with IEEE doubles.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn {

struct Sample {
  FloatTensor image;  // [3,H,W] in [0,1]
  IntTensor mask;     // [H,W] in {0,1}
};

inline constexpr double kMinForeground = 0.02;
inline constexpr double kMaxForeground = 0.6;

Sample generate_sample(std::uint64_t seed, std::uint64_t index, std::size_t size);
std::vector<Sample> gen_dataset(std::uint64_t seed, std::size_t n, std::size_t size, std::uint64_t first_index = 0);

double foreground_fraction(const IntTensor& mask);

// NNNNN.img.btf / NNNNN.mask.btf, numbered from zero.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
// Throws DataError on missing pairs, bad files or inconsistent sizes.
std::vector<Sample> read_dataset(const std::filesystem::path& dir);

}  // namespace bnn
