#include "bnn/attention.hpp"

#include <Eigen/Dense>

namespace bnn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<double> row_scale(const std::vector<std::uint8_t>& s, std::size_t n) {
  std::vector<double> scale(n, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t sum = 0;
    for (std::size_t c = 0; c < n; ++c) sum += s[r * n + c];
    if (sum != 0) scale[r] = 1.0 / static_cast<double>(sum);
  }
  return scale;
}

template <typename T>
RowMat<T> normalized(const std::vector<std::uint8_t>& s, const std::vector<double>& scale) {
  const auto n = static_cast<Eigen::Index>(scale.size());
  RowMat<T> m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T k = static_cast<T>(scale[r]);
    for (Eigen::Index c = 0; c < n; ++c) m(r, c) = s[r * n + c] ? k : T(0);
  }
  return m;
}

}  // namespace

std::vector<double> AttentionMaps::spatial_row_scale() const { return row_scale(spatial, positions); }
std::vector<double> AttentionMaps::channel_row_scale() const { return row_scale(channel, channels); }

template <typename T>
void attention_context(const AttentionMaps& maps, const T* x, T* context) {
  const auto c = static_cast<Eigen::Index>(maps.channels);
  const auto m = static_cast<Eigen::Index>(maps.positions);
  Eigen::Map<const RowMat<T>> xm(x, c, m);
  Eigen::Map<RowMat<T>> out(context, c, m);
  const RowMat<T> sp = normalized<T>(maps.spatial, maps.spatial_row_scale());
  const RowMat<T> sc = normalized<T>(maps.channel, maps.channel_row_scale());
  out.noalias() = xm * sp.transpose();
  out.noalias() += sc * xm;
}

template <typename T>
void attention_context_adjoint(const AttentionMaps& maps, const T* g, T* grad_x) {
  const auto c = static_cast<Eigen::Index>(maps.channels);
  const auto m = static_cast<Eigen::Index>(maps.positions);
  Eigen::Map<const RowMat<T>> gm(g, c, m);
  Eigen::Map<RowMat<T>> out(grad_x, c, m);
  const RowMat<T> sp = normalized<T>(maps.spatial, maps.spatial_row_scale());
  const RowMat<T> sc = normalized<T>(maps.channel, maps.channel_row_scale());
  out.noalias() += gm * sp;
  out.noalias() += sc.transpose() * gm;
}

template void attention_context<float>(const AttentionMaps&, const float*, float*);
template void attention_context<double>(const AttentionMaps&, const double*, double*);
template void attention_context_adjoint<float>(const AttentionMaps&, const float*, float*);
template void attention_context_adjoint<double>(const AttentionMaps&, const double*, double*);

}  // namespace bnn
