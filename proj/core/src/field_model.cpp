#include "metricgrids/field_model.hpp"

#include <algorithm>

#include "metricgrids/errors.hpp"

namespace metricgrids {

namespace {

DecoderShape bind_decoder(const GridStructure& g, DecoderShape d) {
  d.grids = g.grid_count();
  d.grid_width = g.grid_width();
  return d;
}

// splitmix64 finaliser; derives independent seeds for grids and decoder.
std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

template <class Real>
FieldModel<Real>::FieldModel(GridStructure grid, DecoderShape decoder_shape)
    : grids(grid), decoder(bind_decoder(grid, decoder_shape)) {}

template <class Real>
void FieldModel<Real>::init(std::uint64_t seed) {
  grids.init_uniform(mix_seed(seed));
  decoder = init_decoder<Real>(decoder.shape(), mix_seed(seed ^ 0x5eedull));
}

template <class Real>
void FieldModel<Real>::evaluate(std::span<const Real> coords, std::size_t n,
                                std::span<Real> out) const {
  const auto d = static_cast<std::size_t>(input_dims());
  const auto k = static_cast<std::size_t>(outputs());
  if (coords.size() != n * d || out.size() != n * k) {
    throw ShapeError("evaluate: buffer sizes do not match sample count");
  }
  constexpr std::size_t kChunk = 4096;
  FieldWorkspace<Real> ws;
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t count = std::min(kChunk, n - begin);
    field_forward(*this, coords.subspan(begin * d, count * d), count, ws);
    // ws.output is column-major outputs x count, i.e. row-major count x outputs.
    std::copy(ws.output.data(), ws.output.data() + count * k,
              out.begin() + static_cast<std::ptrdiff_t>(begin * k));
  }
}

template <class Real>
void field_forward(const FieldModel<Real>& model,
                   std::type_identity_t<std::span<const Real>> coords, std::size_t n, FieldWorkspace<Real>& ws) {
  ws.features.resize(model.grids.feature_width(), static_cast<Eigen::Index>(n));
  model.grids.encode_batch(coords, n,
                           std::span<Real>(ws.features.data(),
                                           static_cast<std::size_t>(ws.features.size())),
                           ws.encoding);
  decode_forward_batch(model.decoder, ws.features, ws.output, ws.decoding);
}

template <class Real>
void field_backward(const FieldModel<Real>& model, FieldWorkspace<Real>& ws,
                    const Eigen::Ref<const typename FieldModel<Real>::Matrix>& upstream,
                    std::type_identity_t<std::span<Real>> grid_grad,
                    std::type_identity_t<std::span<Real>> decoder_grad) {
  decode_backward_batch(model.decoder, ws.decoding, upstream, decoder_grad,
                        ws.feature_grads);
  model.grids.backward_batch(
      ws.encoding,
      std::span<const Real>(ws.feature_grads.data(),
                            static_cast<std::size_t>(ws.feature_grads.size())),
      grid_grad);
}

template class FieldModel<float>;
template class FieldModel<double>;
template class FieldModel<long double>;

#define MG_INSTANTIATE(Real)                                                     \
  template void field_forward<Real>(const FieldModel<Real>&,                    \
                                    std::span<const Real>, std::size_t,         \
                                    FieldWorkspace<Real>&);                     \
  template void field_backward<Real>(                                           \
      const FieldModel<Real>&, FieldWorkspace<Real>&,                           \
      const Eigen::Ref<const FieldModel<Real>::Matrix>&, std::span<Real>,       \
      std::span<Real>);

MG_INSTANTIATE(float)
MG_INSTANTIATE(double)
MG_INSTANTIATE(long double)

#undef MG_INSTANTIATE

}  // namespace metricgrids
