#include "metricgrids/extrapolation_decoder.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "metricgrids/errors.hpp"

namespace metricgrids {

std::size_t DecoderShape::parameter_count() const {
  std::size_t total = 0;
  for (int l = 0; l < layers; ++l) {
    const int in = l == 0 ? input_width() : hidden;
    total += std::size_t(hidden) * std::size_t(in) + std::size_t(hidden);
    total += std::size_t(hidden) * std::size_t(modulation_width()) + std::size_t(hidden);
  }
  const int last = layers == 0 ? input_width() : hidden;
  total += std::size_t(outputs) * std::size_t(last) + std::size_t(outputs);
  return total;
}

void DecoderShape::validate() const {
  if (grids < 1 || grid_width < 1 || outputs < 1 || layers < 0 ||
      (layers > 0 && hidden < 1)) {
    throw ConfigError("decoder dimensions must be positive");
  }
}

template <class Real>
DecoderParams<Real>::DecoderParams(DecoderShape shape) : shape_(shape) {
  shape_.validate();
  data_.assign(shape_.parameter_count(), Real(0));
}

// Layout: [bw0 bb0 bw1 bb1 ...][mw0 mb0 ...][ow ob]
template <class Real>
typename DecoderParams<Real>::Block DecoderParams<Real>::backbone_w_block(
    int layer) const {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l) {
    const int in = l == 0 ? shape_.input_width() : shape_.hidden;
    off += std::size_t(shape_.hidden) * std::size_t(in + 1);
  }
  return {off, shape_.hidden, layer == 0 ? shape_.input_width() : shape_.hidden};
}

template <class Real>
typename DecoderParams<Real>::Block DecoderParams<Real>::backbone_b_block(
    int layer) const {
  const Block w = backbone_w_block(layer);
  return {w.offset + std::size_t(w.rows) * std::size_t(w.cols), shape_.hidden, 1};
}

template <class Real>
typename DecoderParams<Real>::Block DecoderParams<Real>::modulation_w_block(
    int layer) const {
  std::size_t off = 0;
  if (shape_.layers > 0) {
    const Block last = backbone_b_block(shape_.layers - 1);
    off = last.offset + std::size_t(last.rows);
  }
  off += std::size_t(layer) * std::size_t(shape_.hidden) *
         std::size_t(shape_.modulation_width() + 1);
  return {off, shape_.hidden, shape_.modulation_width()};
}

template <class Real>
typename DecoderParams<Real>::Block DecoderParams<Real>::modulation_b_block(
    int layer) const {
  const Block w = modulation_w_block(layer);
  return {w.offset + std::size_t(w.rows) * std::size_t(w.cols), shape_.hidden, 1};
}

template <class Real>
typename DecoderParams<Real>::Block DecoderParams<Real>::output_w_block() const {
  std::size_t off = 0;
  if (shape_.layers > 0) {
    const Block last = modulation_b_block(shape_.layers - 1);
    off = last.offset + std::size_t(last.rows);
  }
  return {off, shape_.outputs,
          shape_.layers == 0 ? shape_.input_width() : shape_.hidden};
}

template <class Real>
typename DecoderParams<Real>::Block DecoderParams<Real>::output_b_block() const {
  const Block w = output_w_block();
  return {w.offset + std::size_t(w.rows) * std::size_t(w.cols), shape_.outputs, 1};
}

#define MG_MATRIX_ACCESSORS(NAME, BLOCK)                                          \
  template <class Real>                                                          \
  typename DecoderParams<Real>::MatrixMap DecoderParams<Real>::NAME(int layer) { \
    const Block b = BLOCK(layer);                                                \
    return MatrixMap(data_.data() + b.offset, b.rows, b.cols);                   \
  }                                                                              \
  template <class Real>                                                          \
  typename DecoderParams<Real>::ConstMatrixMap DecoderParams<Real>::NAME(        \
      int layer) const {                                                         \
    const Block b = BLOCK(layer);                                                \
    return ConstMatrixMap(data_.data() + b.offset, b.rows, b.cols);              \
  }

#define MG_VECTOR_ACCESSORS(NAME, BLOCK)                                          \
  template <class Real>                                                          \
  typename DecoderParams<Real>::VectorMap DecoderParams<Real>::NAME(int layer) { \
    const Block b = BLOCK(layer);                                                \
    return VectorMap(data_.data() + b.offset, b.rows);                           \
  }                                                                              \
  template <class Real>                                                          \
  typename DecoderParams<Real>::ConstVectorMap DecoderParams<Real>::NAME(        \
      int layer) const {                                                         \
    const Block b = BLOCK(layer);                                                \
    return ConstVectorMap(data_.data() + b.offset, b.rows);                      \
  }

MG_MATRIX_ACCESSORS(backbone_weight, backbone_w_block)
MG_VECTOR_ACCESSORS(backbone_bias, backbone_b_block)
MG_MATRIX_ACCESSORS(modulation_weight, modulation_w_block)
MG_VECTOR_ACCESSORS(modulation_bias, modulation_b_block)

#undef MG_MATRIX_ACCESSORS
#undef MG_VECTOR_ACCESSORS

template <class Real>
typename DecoderParams<Real>::MatrixMap DecoderParams<Real>::output_weight() {
  const Block b = output_w_block();
  return MatrixMap(data_.data() + b.offset, b.rows, b.cols);
}
template <class Real>
typename DecoderParams<Real>::ConstMatrixMap DecoderParams<Real>::output_weight()
    const {
  const Block b = output_w_block();
  return ConstMatrixMap(data_.data() + b.offset, b.rows, b.cols);
}
template <class Real>
typename DecoderParams<Real>::VectorMap DecoderParams<Real>::output_bias() {
  const Block b = output_b_block();
  return VectorMap(data_.data() + b.offset, b.rows);
}
template <class Real>
typename DecoderParams<Real>::ConstVectorMap DecoderParams<Real>::output_bias()
    const {
  const Block b = output_b_block();
  return ConstVectorMap(data_.data() + b.offset, b.rows);
}

template <class Real>
std::vector<typename DecoderParams<Real>::Group> DecoderParams<Real>::groups()
    const {
  Group bw{"backbone.weight", {}}, bb{"backbone.bias", {}};
  Group mw{"modulation.weight", {}}, mb{"modulation.bias", {}};
  for (int l = 0; l < shape_.layers; ++l) {
    bw.blocks.push_back(backbone_w_block(l));
    bb.blocks.push_back(backbone_b_block(l));
    mw.blocks.push_back(modulation_w_block(l));
    mb.blocks.push_back(modulation_b_block(l));
  }
  std::vector<Group> out;
  if (shape_.layers > 0) {
    out = {bw, bb, mw, mb};
  }
  out.push_back({"output.weight", {output_w_block()}});
  out.push_back({"output.bias", {output_b_block()}});
  return out;
}

template <class Real>
DecoderParams<Real> init_decoder(const DecoderShape& shape, std::uint64_t seed) {
  DecoderParams<Real> p(shape);
  std::mt19937_64 rng(seed);
  auto fill = [&](auto&& m) {
    const Real bound = std::sqrt(Real(6) / Real(m.cols()));
    std::uniform_real_distribution<Real> dist(-bound, bound);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  };
  const Real mod_bias = shape.activation == Activation::Sine
                            ? std::numbers::pi_v<Real> / Real(4)
                            : Real(0);
  for (int l = 0; l < shape.layers; ++l) {
    fill(p.backbone_weight(l));
    fill(p.modulation_weight(l));
    p.modulation_bias(l).setConstant(mod_bias);
  }
  fill(p.output_weight());
  return p;
}

namespace {

template <class Real>
void check_features(const DecoderShape& s, Eigen::Index rows) {
  if (rows != s.input_width()) {
    throw ShapeError("decoder expects " + std::to_string(s.input_width()) +
                     " input features, got " + std::to_string(rows));
  }
}

}  // namespace

template <class Real>
void decode_forward_batch(
    const DecoderParams<Real>& params,
    const Eigen::Ref<const typename DecoderParams<Real>::Matrix>& features,
    typename DecoderParams<Real>::Matrix& output, DecoderCache<Real>& cache) {
  const DecoderShape& s = params.shape();
  check_features<Real>(s, features.rows());
  const auto layers = static_cast<std::size_t>(s.layers);

  cache.samples = static_cast<std::size_t>(features.cols());
  cache.h0 = features;
  cache.omega.resize(layers);
  cache.gamma.resize(layers);
  cache.pre_omega.resize(layers);
  cache.pre_gamma.resize(layers);
  cache.h.resize(layers);

  const bool sine = s.activation == Activation::Sine;
  for (int l = 0; l < s.layers; ++l) {
    const auto lu = static_cast<std::size_t>(l);
    const auto& prev = l == 0 ? cache.h0 : cache.h[lu - 1];
    auto modulator = s.hierarchy
                         ? cache.h0.middleRows(
                               Eigen::Index(s.selected_grid(l + 1)) * s.grid_width,
                               s.grid_width)
                         : cache.h0.middleRows(0, s.input_width());

    auto& a = cache.pre_omega[lu];
    a.noalias() = params.backbone_weight(l) * prev;
    a.colwise() += params.backbone_bias(l);
    auto& c = cache.pre_gamma[lu];
    c.noalias() = params.modulation_weight(l) * modulator;
    c.colwise() += params.modulation_bias(l);

    if (sine) {
      cache.omega[lu] = a.array().sin().matrix();
      cache.gamma[lu] = c.array().sin().square().matrix();
    } else {
      cache.omega[lu] = a;
      cache.gamma[lu] = c;
    }
    cache.h[lu] = cache.omega[lu].cwiseProduct(cache.gamma[lu]);
  }
  const auto& last = s.layers == 0 ? cache.h0 : cache.h.back();
  output.noalias() = params.output_weight() * last;
  output.colwise() += params.output_bias();
}

template <class Real>
void decode_backward_batch(
    const DecoderParams<Real>& params, const DecoderCache<Real>& cache,
    const Eigen::Ref<const typename DecoderParams<Real>::Matrix>& upstream,
    std::span<Real> param_grad,
    typename DecoderParams<Real>::Matrix& feature_grads) {
  using Matrix = typename DecoderParams<Real>::Matrix;
  const DecoderShape& s = params.shape();
  if (param_grad.size() != params.size()) {
    throw ShapeError("decode_backward: parameter gradient size mismatch");
  }
  if (upstream.rows() != s.outputs ||
      upstream.cols() != static_cast<Eigen::Index>(cache.samples) ||
      cache.h.size() != static_cast<std::size_t>(s.layers) ||
      cache.h0.rows() != s.input_width()) {
    throw ShapeError("decode_backward: cache or upstream shape mismatch");
  }

  // Gradient views share the parameter layout. Row sums go through an owned
  // vector; reducing straight into a Map ties summation order to its address.
  using Vector = typename DecoderParams<Real>::Vector;
  auto grad_matrix = [&](Eigen::Map<const Matrix> like) {
    const auto off = static_cast<std::size_t>(like.data() - params.data().data());
    return Eigen::Map<Matrix>(param_grad.data() + off, like.rows(), like.cols());
  };
  auto grad_vector = [&](auto like) {
    const auto off = static_cast<std::size_t>(like.data() - params.data().data());
    return Eigen::Map<typename DecoderParams<Real>::Vector>(param_grad.data() + off,
                                                            like.rows());
  };

  const auto& last = s.layers == 0 ? cache.h0 : cache.h.back();
  grad_matrix(params.output_weight()).noalias() += upstream * last.transpose();
  grad_vector(params.output_bias()) += Vector(upstream.rowwise().sum());

  feature_grads.setZero(s.input_width(), upstream.cols());
  Matrix dh = params.output_weight().transpose() * upstream;
  const bool sine = s.activation == Activation::Sine;

  Matrix da, dc;
  for (int l = s.layers - 1; l >= 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    if (sine) {
      da = dh.cwiseProduct(cache.gamma[lu])
               .cwiseProduct(cache.pre_omega[lu].array().cos().matrix());
      dc = dh.cwiseProduct(cache.omega[lu])
               .cwiseProduct((Real(2) * cache.pre_gamma[lu].array()).sin().matrix());
    } else {
      da = dh.cwiseProduct(cache.gamma[lu]);
      dc = dh.cwiseProduct(cache.omega[lu]);
    }
    const auto& prev = l == 0 ? cache.h0 : cache.h[lu - 1];
    grad_matrix(params.backbone_weight(l)).noalias() += da * prev.transpose();
    grad_vector(params.backbone_bias(l)) += Vector(da.rowwise().sum());

    const Eigen::Index mod_row =
        s.hierarchy ? Eigen::Index(s.selected_grid(l + 1)) * s.grid_width : 0;
    const Eigen::Index mod_rows = s.modulation_width();
    grad_matrix(params.modulation_weight(l)).noalias() +=
        dc * cache.h0.middleRows(mod_row, mod_rows).transpose();
    grad_vector(params.modulation_bias(l)) += Vector(dc.rowwise().sum());
    feature_grads.middleRows(mod_row, mod_rows).noalias() +=
        params.modulation_weight(l).transpose() * dc;

    if (l == 0) {
      feature_grads.noalias() += params.backbone_weight(0).transpose() * da;
    } else {
      dh = params.backbone_weight(l).transpose() * da;
    }
  }
  if (s.layers == 0) feature_grads += dh;
}

template <class Real>
DecodeResult<Real> decode_forward(std::span<const std::vector<Real>> features,
                                  const DecoderParams<Real>& params) {
  const DecoderShape& s = params.shape();
  if (static_cast<int>(features.size()) != s.grids) {
    throw ShapeError("decode_forward: expected " + std::to_string(s.grids) +
                     " grid feature vectors, got " +
                     std::to_string(features.size()));
  }
  typename DecoderParams<Real>::Matrix x(s.input_width(), 1);
  for (int m = 0; m < s.grids; ++m) {
    const auto& f = features[static_cast<std::size_t>(m)];
    if (static_cast<int>(f.size()) != s.grid_width) {
      throw ShapeError("decode_forward: grid feature width mismatch");
    }
    for (int k = 0; k < s.grid_width; ++k) {
      x(m * s.grid_width + k, 0) = f[static_cast<std::size_t>(k)];
    }
  }
  DecodeResult<Real> r;
  typename DecoderParams<Real>::Matrix y;
  decode_forward_batch(params, x, y, r.cache);
  r.output.assign(y.data(), y.data() + y.size());
  return r;
}

template <class Real>
DecoderGradients<Real> decode_backward(const DecoderCache<Real>& cache,
                                       const DecoderParams<Real>& params,
                                       std::span<const Real> upstream) {
  const DecoderShape& s = params.shape();
  if (static_cast<int>(upstream.size()) != s.outputs || cache.samples != 1) {
    throw ShapeError("decode_backward: upstream must have one entry per output");
  }
  DecoderGradients<Real> g{DecoderParams<Real>(s), {}};
  Eigen::Map<const typename DecoderParams<Real>::Matrix> up(upstream.data(),
                                                            s.outputs, 1);
  typename DecoderParams<Real>::Matrix fg;
  decode_backward_batch(params, cache, up, g.params.data(), fg);
  for (int m = 0; m < s.grids; ++m) {
    g.features.emplace_back(fg.data() + m * s.grid_width,
                            fg.data() + (m + 1) * s.grid_width);
  }
  return g;
}

int decode_degree_probe(int layers, int grids) {
  if (layers < 1 || grids < 1) {
    throw DomainError("decode_degree_probe: layers and grids must be >= 1");
  }
  int degree = grids;
  for (int l = 1; l <= layers; ++l) degree += l < grids ? l : grids;
  return degree;
}

#define MG_INSTANTIATE(Real)                                                     \
  template class DecoderParams<Real>;                                            \
  template DecoderParams<Real> init_decoder<Real>(const DecoderShape&,           \
                                                  std::uint64_t);                \
  template void decode_forward_batch<Real>(                                      \
      const DecoderParams<Real>&,                                                \
      const Eigen::Ref<const DecoderParams<Real>::Matrix>&,                      \
      DecoderParams<Real>::Matrix&, DecoderCache<Real>&);                        \
  template void decode_backward_batch<Real>(                                     \
      const DecoderParams<Real>&, const DecoderCache<Real>&,                     \
      const Eigen::Ref<const DecoderParams<Real>::Matrix>&, std::span<Real>,     \
      DecoderParams<Real>::Matrix&);                                             \
  template DecodeResult<Real> decode_forward<Real>(                              \
      std::span<const std::vector<Real>>, const DecoderParams<Real>&);          \
  template DecoderGradients<Real> decode_backward<Real>(                         \
      const DecoderCache<Real>&, const DecoderParams<Real>&,                     \
      std::span<const Real>);

MG_INSTANTIATE(float)
MG_INSTANTIATE(double)
MG_INSTANTIATE(long double)

#undef MG_INSTANTIATE

}  // namespace metricgrids
