#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <type_traits>

#include "metricgrids/extrapolation_decoder.hpp"
#include "metricgrids/metric_encoding.hpp"

namespace metricgrids {

// Two-stage neural field: metric grid lookup followed by the decoder.
template <class Real>
class FieldModel {
 public:
  using Matrix = typename DecoderParams<Real>::Matrix;

  FieldModel() = default;
  // decoder.grids and decoder.grid_width are taken from the grid structure.
  FieldModel(GridStructure grid, DecoderShape decoder);

  // Grid features and decoder weights come from independent streams of seed.
  void init(std::uint64_t seed);

  MetricGridSet<Real> grids;
  DecoderParams<Real> decoder;

  int input_dims() const noexcept { return grids.dims(); }
  int outputs() const noexcept { return decoder.shape().outputs; }
  std::size_t parameter_count() const noexcept {
    return grids.params().size() + decoder.size();
  }

  // coords: n x d row-major. out: n x outputs row-major.
  void evaluate(std::span<const Real> coords, std::size_t n,
                std::span<Real> out) const;
};

template <class Real>
struct FieldWorkspace {
  using Matrix = typename DecoderParams<Real>::Matrix;
  Matrix features;       // feature_width x n
  EncodingCache<Real> encoding;
  DecoderCache<Real> decoding;
  Matrix output;         // outputs x n
  Matrix feature_grads;  // feature_width x n
};

template <class Real>
void field_forward(const FieldModel<Real>& model, std::type_identity_t<std::span<const Real>> coords,
                   std::size_t n, FieldWorkspace<Real>& ws);

// upstream: outputs x n, gradient of the objective w.r.t. ws.output.
template <class Real>
void field_backward(const FieldModel<Real>& model, FieldWorkspace<Real>& ws,
                    const Eigen::Ref<const typename FieldModel<Real>::Matrix>& upstream,
                    std::type_identity_t<std::span<Real>> grid_grad,
                    std::type_identity_t<std::span<Real>> decoder_grad);

extern template class FieldModel<float>;
extern template class FieldModel<double>;

}  // namespace metricgrids
