#include "bnn/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>

#include "bnn/btf.hpp"
#include "bnn/errors.hpp"
#include "bnn/rng.hpp"

namespace bnn {

namespace {

constexpr std::size_t kGrid = 5;
constexpr std::size_t kSuper = 4;
constexpr int kMaxAttempts = 64;

struct Shape2d {
  bool ellipse = false;
  double cx = 0, cy = 0, rx = 0, ry = 0;
  std::array<double, 3> color{};

  bool contains(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    if (ellipse) return dx * dx + dy * dy <= 1.0;
    return dx >= -1.0 && dx <= 1.0 && dy >= -1.0 && dy <= 1.0;
  }
};

// One attempt: consumes draws from rng in a fixed order.
Sample draw(SplitMix64& rng, std::size_t size) {
  const std::size_t n = size;
  const double s = static_cast<double>(size);

  // Muted base colour plus a coarse per-channel grid, bilinearly interpolated.
  const double gray = 0.2 + 0.35 * rng.uniform();
  std::array<double, 3> base{};
  for (auto& b : base) b = gray + 0.1 * (rng.uniform() - 0.5);
  std::array<std::array<double, kGrid * kGrid>, 3> grid{};
  for (auto& ch : grid)
    for (auto& g : ch) g = 0.2 * (rng.uniform() - 0.5);

  std::vector<double> img(3 * n * n);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double gy = (static_cast<double>(y) + 0.5) / s * static_cast<double>(kGrid - 1);
        const double gx = (static_cast<double>(x) + 0.5) / s * static_cast<double>(kGrid - 1);
        const auto y0 = static_cast<std::size_t>(gy), x0 = static_cast<std::size_t>(gx);
        const std::size_t y1 = std::min(y0 + 1, kGrid - 1), x1 = std::min(x0 + 1, kGrid - 1);
        const double fy = gy - static_cast<double>(y0), fx = gx - static_cast<double>(x0);
        const auto& g = grid[c];
        const double top = g[y0 * kGrid + x0] * (1.0 - fx) + g[y0 * kGrid + x1] * fx;
        const double bottom = g[y1 * kGrid + x0] * (1.0 - fx) + g[y1 * kGrid + x1] * fx;
        img[(c * n + y) * n + x] = base[c] + top * (1.0 - fy) + bottom * fy;
      }

  const std::size_t count = 1 + static_cast<std::size_t>(rng.below(3));
  std::vector<Shape2d> shapes(count);
  for (auto& sh : shapes) {
    sh.ellipse = rng.below(2) == 1;
    sh.cx = s * (0.15 + 0.7 * rng.uniform());
    sh.cy = s * (0.15 + 0.7 * rng.uniform());
    sh.rx = s * (0.08 + 0.22 * rng.uniform());
    sh.ry = s * (0.08 + 0.22 * rng.uniform());
    const auto hi = static_cast<std::size_t>(rng.below(3));
    const auto lo = (hi + 1 + static_cast<std::size_t>(rng.below(2))) % 3;
    const std::size_t mid = 3 - hi - lo;
    sh.color[hi] = 0.85 + 0.15 * rng.uniform();
    sh.color[lo] = 0.1 * rng.uniform();
    sh.color[mid] = rng.uniform();
  }

  std::vector<std::int32_t> mask(n * n, 0);
  for (const auto& sh : shapes) {
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        std::size_t hits = 0;
        for (std::size_t sy = 0; sy < kSuper; ++sy)
          for (std::size_t sx = 0; sx < kSuper; ++sx) {
            const double px = static_cast<double>(x) + (static_cast<double>(sx) + 0.5) / kSuper;
            const double py = static_cast<double>(y) + (static_cast<double>(sy) + 0.5) / kSuper;
            hits += sh.contains(px, py) ? 1 : 0;
          }
        if (sh.contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) mask[y * n + x] = 1;
        if (hits == 0) continue;
        const double cov = static_cast<double>(hits) / static_cast<double>(kSuper * kSuper);
        for (std::size_t c = 0; c < 3; ++c) {
          double& v = img[(c * n + y) * n + x];
          v = v * (1.0 - cov) + sh.color[c] * cov;
        }
      }
  }

  std::vector<float> pixels(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = img[i] + 0.06 * (rng.uniform() - 0.5);
    pixels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return Sample{FloatTensor({3, n, n}, std::move(pixels)), IntTensor({n, n}, std::move(mask))};
}

std::string stem(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

}  // namespace

double foreground_fraction(const IntTensor& mask) {
  if (mask.size() == 0) return 0.0;
  std::size_t fg = 0;
  for (auto v : mask.data()) fg += v != 0;
  return static_cast<double>(fg) / static_cast<double>(mask.size());
}

Sample generate_sample(std::uint64_t seed, std::uint64_t index, std::size_t size) {
  if (size == 0 || size % 16 != 0) throw ConfigError("image size must be a positive multiple of 16, got " + std::to_string(size));
  SplitMix64 rng = keyed_stream(seed, index);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Sample s = draw(rng, size);
    const double fg = foreground_fraction(s.mask);
    if (fg > kMinForeground && fg < kMaxForeground) return s;
  }
  throw DataError("no admissible sample for seed " + std::to_string(seed) + " index " + std::to_string(index));
}

std::vector<Sample> gen_dataset(std::uint64_t seed, std::size_t n, std::size_t size, std::uint64_t first_index) {
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(seed, first_index + i, size));
  return out;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    write_file(dir / (stem(i) + ".img.btf"), encode_btf(samples[i].image));
    write_file(dir / (stem(i) + ".mask.btf"), encode_btf(samples[i].mask));
  }
}

std::vector<Sample> read_dataset(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw DataError("not a dataset directory: " + dir.string());
  std::map<std::string, int> seen;  // stem -> bit 1 image, bit 2 mask
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const auto dot = name.find('.');
    if (dot == std::string::npos) continue;
    const std::string tail = name.substr(dot);
    if (tail == ".img.btf") seen[name.substr(0, dot)] |= 1;
    else if (tail == ".mask.btf") seen[name.substr(0, dot)] |= 2;
  }
  if (seen.empty()) throw DataError("no samples in " + dir.string());
  std::vector<Sample> out;
  for (const auto& [name, bits] : seen) {
    if (bits != 3) throw DataError("sample " + name + " lacks its " + std::string(bits == 1 ? "mask" : "image"));
    Sample s;
    try {
      s.image = decode_btf_float(read_file(dir / (name + ".img.btf")));
      s.mask = decode_btf_int(read_file(dir / (name + ".mask.btf")));
    } catch (const FormatError& e) {
      throw DataError("sample " + name + ": " + e.what());
    }
    if (s.image.rank() != 3 || s.image.dim(0) != 3 || s.mask.rank() != 2 || s.mask.dim(0) != s.image.dim(1) ||
        s.mask.dim(1) != s.image.dim(2)) {
      throw DataError("sample " + name + " has image " + shape_string(s.image.dims()) + " and mask " +
                      shape_string(s.mask.dims()));
    }
    if (!out.empty() && s.image.dims() != out.front().image.dims()) throw DataError("sample " + name + " differs in size");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bnn
