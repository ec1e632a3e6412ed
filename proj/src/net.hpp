#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "layers.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace despeckler {

/// Hyperparameters of one encoder stage.
struct StageConfig {
  std::size_t kernel = 7;      // overlap patch embedding kernel
  std::size_t embed_dim = 32;  // tokens per position after embedding
  std::size_t stride = 2;
  std::size_t padding = 3;     // kernel / 2
  std::size_t heads = 1;
  std::size_t reduction = 2;   // key/value spatial reduction ratio
  std::size_t mlp_dim = 32;    // must equal embed_dim (residual add)
  double dropout = 0.0;

  static StageConfig make(std::size_t kernel, std::size_t embed_dim, std::size_t heads,
                          std::size_t reduction = 2);
  bool operator==(const StageConfig&) const = default;
};

struct ModelConfig {
  std::vector<StageConfig> stages;
  std::size_t decoder_dim = 64;
  std::size_t in_channels = 1;

  // Five stages: k 7,3,3,3,3; e 32,64,128,320,512; heads 1,1,2,4,8; R 2.
  static ModelConfig full();
  // Three stages: k 7,3,3; e 16,32,64; heads 1,1,2; R 2; decoder width 32.
  static ModelConfig desk();
  static ModelConfig preset(const std::string& name);

  void validate() const;
  // Input height and width must be multiples of this.
  std::size_t downsample_factor() const;
  std::string describe() const;
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct FeaturePyramid {
  std::vector<Tensor<T>> maps;  // stage i: [e_i, H/2^i, W/2^i]
};

template <typename T>
struct TokenGrid {
  Tensor<T> tokens;  // [height*width, dim]
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Strided convolution (k, e, s = 2, p = k/2) followed by flattening and a
/// layer norm over the embedding dimension.
template <typename T>
class OverlapPatchEmbed {
 public:
  OverlapPatchEmbed() = default;
  OverlapPatchEmbed(ParameterStore<T>& store, const std::string& prefix, std::size_t in_channels,
                    const StageConfig& cfg, std::size_t stage_number);

  TokenGrid<T> operator()(const Tensor<T>& x) const;

  Conv2d<T> proj;
  LayerNorm<T> norm;

 private:
  std::size_t stage_number_ = 0;
  std::size_t in_channels_ = 0;
};

/// Multi-head self-attention whose keys and values come from a token grid
/// reduced by a stride-R, kernel-R convolution (no reduction when R == 1).
template <typename T>
class EfficientAttention {
 public:
  EfficientAttention() = default;
  EfficientAttention(ParameterStore<T>& store, const std::string& prefix, std::size_t dim,
                     std::size_t heads, std::size_t reduction);

  // `attention_weights`, when given, receives one [N, N/R^2] matrix per head.
  Tensor<T> operator()(const Tensor<T>& tokens, std::size_t height, std::size_t width,
                       std::vector<Tensor<T>>* attention_weights = nullptr) const;

  std::size_t heads() const { return heads_; }
  std::size_t reduction() const { return reduction_; }

  Linear<T> q_proj, k_proj, v_proj, out_proj;
  Conv2d<T> sr;           // only when reduction > 1
  LayerNorm<T> sr_norm;   // only when reduction > 1

 private:
  std::size_t dim_ = 0;
  std::size_t heads_ = 1;
  std::size_t reduction_ = 1;
};

/// X = Attn(LN(I)) + I;  T = Linear(Dropout(GELU(DWConv3x3(LN(X))))) + X.
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterStore<T>& store, const std::string& prefix, const StageConfig& cfg);

  Tensor<T> operator()(const Tensor<T>& tokens, std::size_t height, std::size_t width,
                       Philox* dropout_rng = nullptr) const;

  LayerNorm<T> norm1;
  EfficientAttention<T> attn;
  LayerNorm<T> norm2;
  Conv2d<T> dwc;
  Linear<T> mlp;

 private:
  double dropout_ = 0.0;
};

// RB(I) = Conv3x3(ReLU(Conv3x3(I))) + I
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(ParameterStore<T>& store, const std::string& prefix, std::size_t channels);

  Tensor<T> operator()(const Tensor<T>& x) const;

  Conv2d<T> conv1, conv2;
};

/// Convolutional projection decoder. Deepest-first: project the last stage
/// to the decoder width, then per shallower stage upsample (nearest + 3x3
/// conv), add a 1x1-projected skip and apply a residual block; finally
/// upsample once more and map to one channel with a 3x3 conv.
template <typename T>
class ConvProjectionDecoder {
 public:
  struct Scale {
    Conv2d<T> up;
    Conv2d<T> skip;
    ResidualBlock<T> rb;
  };

  ConvProjectionDecoder() = default;
  ConvProjectionDecoder(ParameterStore<T>& store, const ModelConfig& cfg);

  Tensor<T> operator()(const FeaturePyramid<T>& pyramid) const;

  Conv2d<T> top;
  std::vector<Scale> scales;  // scales[i] fuses encoder stage i (0-based), i < S-1
  Conv2d<T> final_up;
  Conv2d<T> head;
};

template <typename T>
struct EncoderStage {
  OverlapPatchEmbed<T> embed;
  TransformerBlock<T> block;
};

/// Hierarchical transformer encoder + convolutional projection decoder.
template <typename T>
class DespeckleNet {
 public:
  explicit DespeckleNet(ModelConfig cfg, std::uint64_t seed = 0);
  DespeckleNet(const DespeckleNet&) = delete;
  DespeckleNet& operator=(const DespeckleNet&) = delete;
  DespeckleNet(DespeckleNet&&) = default;
  DespeckleNet& operator=(DespeckleNet&&) = default;

  const ModelConfig& config() const { return cfg_; }

  // Throws a shape error unless x is [in_channels, H, W] with H and W
  // multiples of the downsample factor.
  void check_input(const Tensor<T>& x) const;

  FeaturePyramid<T> encode(const Tensor<T>& y) const;
  Tensor<T> decode(const FeaturePyramid<T>& pyramid) const;
  // Raw (unclamped) output; records the graph when gradients are enabled.
  Tensor<T> forward(const Tensor<T>& y) const;
  // Inference: no graph, dropout off, output clamped to [0, inf).
  Tensor<T> predict(const Tensor<T>& y) const;

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }
  // Dropout masks are a pure function of (seed, step, stage).
  void set_dropout_stream(std::uint64_t seed, std::uint64_t step) {
    dropout_seed_ = seed;
    dropout_step_ = step;
  }

  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  void zero_grad();

  std::vector<EncoderStage<T>>& stages() { return stages_; }
  ConvProjectionDecoder<T>& decoder() { return decoder_; }

 private:
  FeaturePyramid<T> encode_impl(const Tensor<T>& y, bool training) const;

  ModelConfig cfg_;
  ParameterStore<T> store_;
  std::vector<EncoderStage<T>> stages_;
  ConvProjectionDecoder<T> decoder_;
  bool training_ = false;
  std::uint64_t dropout_seed_ = 0;
  std::uint64_t dropout_step_ = 0;
};

extern template class OverlapPatchEmbed<float>;
extern template class OverlapPatchEmbed<double>;
extern template class EfficientAttention<float>;
extern template class EfficientAttention<double>;
extern template class TransformerBlock<float>;
extern template class TransformerBlock<double>;
extern template class ResidualBlock<float>;
extern template class ResidualBlock<double>;
extern template class ConvProjectionDecoder<float>;
extern template class ConvProjectionDecoder<double>;
extern template class DespeckleNet<float>;
extern template class DespeckleNet<double>;

}  // namespace despeckler
