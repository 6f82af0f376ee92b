#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace metricgrids {

enum class Activation : std::uint8_t {
  Sine,      // backbone sin, modulation sin^2
  Identity,  // both identity; used to probe polynomial degree growth
};

struct DecoderShape {
  int grids = 3;        // M
  int grid_width = 32;  // L * F
  int hidden = 64;
  int layers = 5;       // modulated layers; 0 leaves only the output head
  int outputs = 3;
  bool hierarchy = true;
  Activation activation = Activation::Sine;

  int input_width() const { return grids * grid_width; }
  // Without hierarchy every modulation layer sees the full concatenation.
  int modulation_width() const { return hierarchy ? grid_width : input_width(); }
  // Zero-based grid feeding the modulation of 1-based layer `layer`.
  int selected_grid(int layer) const { return (layer < grids ? layer : grids) - 1; }
  std::size_t parameter_count() const;
  void validate() const;
};

// Flat parameter storage in checkpoint order: backbone (W, b) per layer,
// modulation (W, b) per layer, then the output head (W, b). Matrices are
// column-major.
template <class Real>
class DecoderParams {
 public:
  using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  DecoderParams() = default;
  explicit DecoderParams(DecoderShape shape);

  const DecoderShape& shape() const noexcept { return shape_; }
  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }

  // Layers are zero based here.
  MatrixMap backbone_weight(int layer);
  ConstMatrixMap backbone_weight(int layer) const;
  VectorMap backbone_bias(int layer);
  ConstVectorMap backbone_bias(int layer) const;
  MatrixMap modulation_weight(int layer);
  ConstMatrixMap modulation_weight(int layer) const;
  VectorMap modulation_bias(int layer);
  ConstVectorMap modulation_bias(int layer) const;
  MatrixMap output_weight();
  ConstMatrixMap output_weight() const;
  VectorMap output_bias();
  ConstVectorMap output_bias() const;

  struct Block {
    std::size_t offset;
    int rows;
    int cols;
  };
  // Named parameter groups in storage order, for gradcheck reports.
  struct Group {
    const char* name;
    std::vector<Block> blocks;
  };
  std::vector<Group> groups() const;

 private:
  Block backbone_w_block(int layer) const;
  Block backbone_b_block(int layer) const;
  Block modulation_w_block(int layer) const;
  Block modulation_b_block(int layer) const;
  Block output_w_block() const;
  Block output_b_block() const;

  DecoderShape shape_;
  std::vector<Real> data_;
};

// Weights uniform in +-sqrt(6 / fan_in); backbone and output biases zero.
// Modulation biases start at pi/4 (see README, "Decoder initialisation").
template <class Real>
DecoderParams<Real> init_decoder(const DecoderShape& shape, std::uint64_t seed);

template <class Real>
struct DecoderCache {
  using Matrix = typename DecoderParams<Real>::Matrix;
  std::size_t samples = 0;
  Matrix h0;                    // input_width x n
  std::vector<Matrix> omega;    // backbone activations per layer
  std::vector<Matrix> gamma;    // modulation activations per layer
  std::vector<Matrix> pre_omega;
  std::vector<Matrix> pre_gamma;
  std::vector<Matrix> h;        // layer outputs h_1..h_L
};

// features: input_width x n, columns are samples. Writes outputs x n.
template <class Real>
void decode_forward_batch(
    const DecoderParams<Real>& params,
    const Eigen::Ref<const typename DecoderParams<Real>::Matrix>& features,
    typename DecoderParams<Real>::Matrix& output, DecoderCache<Real>& cache);

// Accumulates parameter gradients into param_grad (layout of params.data())
// and writes feature gradients (input_width x n). Feature gradients include
// both the h_0 path and the modulation branches.
template <class Real>
void decode_backward_batch(
    const DecoderParams<Real>& params, const DecoderCache<Real>& cache,
    const Eigen::Ref<const typename DecoderParams<Real>::Matrix>& upstream,
    std::span<Real> param_grad, typename DecoderParams<Real>::Matrix& feature_grads);

template <class Real>
struct DecodeResult {
  std::vector<Real> output;
  DecoderCache<Real> cache;
};

template <class Real>
struct DecoderGradients {
  DecoderParams<Real> params;
  std::vector<std::vector<Real>> features;  // one vector per grid
};

// Single-sample convenience wrappers over the batched path.
template <class Real>
DecodeResult<Real> decode_forward(std::span<const std::vector<Real>> features,
                                  const DecoderParams<Real>& params);

template <class Real>
DecoderGradients<Real> decode_backward(const DecoderCache<Real>& cache,
                                       const DecoderParams<Real>& params,
                                       std::span<const Real> upstream);

// Highest polynomial degree the decoder can reach with identity activations
// when grid m carries degree m: the concatenated input has degree M and layer
// l multiplies in the degree of its selected grid.
int decode_degree_probe(int layers, int grids);

}  // namespace metricgrids
