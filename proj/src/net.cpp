#include "net.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "error.hpp"

namespace despeckler {

StageConfig StageConfig::make(std::size_t kernel, std::size_t embed_dim, std::size_t heads,
                              std::size_t reduction) {
  StageConfig s;
  s.kernel = kernel;
  s.embed_dim = embed_dim;
  s.stride = 2;
  s.padding = kernel / 2;
  s.heads = heads;
  s.reduction = reduction;
  s.mlp_dim = embed_dim;
  return s;
}

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.stages = {StageConfig::make(7, 32, 1), StageConfig::make(3, 64, 1),
              StageConfig::make(3, 128, 2), StageConfig::make(3, 320, 4),
              StageConfig::make(3, 512, 8)};
  c.decoder_dim = 64;
  return c;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.stages = {StageConfig::make(7, 16, 1), StageConfig::make(3, 32, 1),
              StageConfig::make(3, 64, 2)};
  c.decoder_dim = 32;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "full") return full();
  if (name == "desk") return desk();
  throw_argument("unknown model preset '" + name + "' (expected 'full' or 'desk')");
}

void ModelConfig::validate() const {
  if (stages.empty()) throw_argument("model needs at least one encoder stage");
  if (in_channels != 1) throw_argument("only single-channel input is supported");
  if (decoder_dim == 0) throw_argument("decoder width must be >= 1");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageConfig& s = stages[i];
    const std::string where = "stage " + std::to_string(i + 1) + ": ";
    if (s.kernel == 0 || s.kernel % 2 == 0) throw_argument(where + "kernel must be odd");
    if (s.padding != s.kernel / 2) throw_argument(where + "padding must equal kernel / 2");
    if (s.stride != 2) throw_argument(where + "stride must be 2");
    if (s.heads == 0 || s.embed_dim == 0 || s.embed_dim % s.heads != 0) {
      throw_argument(where + "embedding dim must be a positive multiple of the head count");
    }
    if (s.reduction == 0) throw_argument(where + "reduction ratio must be >= 1");
    if (s.mlp_dim != s.embed_dim) throw_argument(where + "mlp output size must equal embedding dim");
    if (!(s.dropout >= 0.0 && s.dropout < 1.0)) throw_argument(where + "dropout must be in [0, 1)");
  }
}

std::size_t ModelConfig::downsample_factor() const {
  std::size_t factor = 1;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    factor = std::max(factor, (std::size_t{2} << i) * stages[i].reduction);
  }
  return factor;
}

std::string ModelConfig::describe() const {
  std::ostringstream os;
  os << "stages=" << stages.size() << " decoder_dim=" << decoder_dim
     << " in_channels=" << in_channels << " downsample_factor=" << downsample_factor() << '\n';
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageConfig& s = stages[i];
    os << "  stage" << i + 1 << ": k=" << s.kernel << " e=" << s.embed_dim << " s=" << s.stride
       << " p=" << s.padding << " heads=" << s.heads << " R=" << s.reduction
       << " mlp=" << s.mlp_dim << " dropout=" << s.dropout << '\n';
  }
  return os.str();
}

// --- overlap patch embedding ----------------------------------------------

template <typename T>
OverlapPatchEmbed<T>::OverlapPatchEmbed(ParameterStore<T>& store, const std::string& prefix,
                                        std::size_t in_channels, const StageConfig& cfg,
                                        std::size_t stage_number)
    : proj(store, prefix + ".proj", in_channels, cfg.embed_dim, cfg.kernel, cfg.stride,
           cfg.padding),
      norm(store, prefix + ".norm", cfg.embed_dim),
      stage_number_(stage_number),
      in_channels_(in_channels) {}

template <typename T>
TokenGrid<T> OverlapPatchEmbed<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 3 || x.dim(0) != in_channels_) {
    throw_shape("stage " + std::to_string(stage_number_) + " patch embedding expects [" +
                std::to_string(in_channels_) + ",H,W] input, got " + shape_str(x.shape()));
  }
  if (x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0) {
    throw_shape("stage " + std::to_string(stage_number_) + " patch embedding: input " +
                shape_str(x.shape()) + " is not divisible by 2");
  }
  Tensor<T> map = proj(x);
  TokenGrid<T> grid;
  grid.height = map.dim(1);
  grid.width = map.dim(2);
  grid.tokens = norm(map_to_tokens(map));
  return grid;
}

// --- efficient attention ---------------------------------------------------

template <typename T>
EfficientAttention<T>::EfficientAttention(ParameterStore<T>& store, const std::string& prefix,
                                          std::size_t dim, std::size_t heads,
                                          std::size_t reduction)
    : q_proj(store, prefix + ".q_proj", dim, dim),
      k_proj(store, prefix + ".k_proj", dim, dim),
      v_proj(store, prefix + ".v_proj", dim, dim),
      out_proj(store, prefix + ".out_proj", dim, dim),
      dim_(dim),
      heads_(heads),
      reduction_(reduction) {
  if (heads == 0 || dim % heads != 0) throw_argument(prefix + ": dim not divisible by heads");
  if (reduction > 1) {
    sr = Conv2d<T>(store, prefix + ".sr", dim, dim, reduction, reduction, 0);
    sr_norm = LayerNorm<T>(store, prefix + ".sr_norm", dim);
  }
}

template <typename T>
Tensor<T> EfficientAttention<T>::operator()(const Tensor<T>& tokens, std::size_t height,
                                            std::size_t width,
                                            std::vector<Tensor<T>>* attention_weights) const {
  if (tokens.rank() != 2 || tokens.dim(0) != height * width || tokens.dim(1) != dim_) {
    throw_shape("attention expects [" + std::to_string(height * width) + "," +
                std::to_string(dim_) + "] tokens, got " + shape_str(tokens.shape()));
  }
  if (height % reduction_ != 0 || width % reduction_ != 0) {
    throw_shape("attention: token grid " + std::to_string(height) + "x" + std::to_string(width) +
                " is not divisible by reduction ratio " + std::to_string(reduction_));
  }
  Tensor<T> q = q_proj(tokens);
  Tensor<T> kv_source = tokens;
  if (reduction_ > 1) {
    kv_source = sr_norm(map_to_tokens(sr(tokens_to_map(tokens, height, width))));
  }
  Tensor<T> k = k_proj(kv_source);
  Tensor<T> v = v_proj(kv_source);

  const std::size_t head_dim = dim_ / heads_;
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(head_dim));
  std::vector<Tensor<T>> outputs;
  outputs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    Tensor<T> qh = heads_ == 1 ? q : slice_cols(q, h * head_dim, head_dim);
    Tensor<T> kh = heads_ == 1 ? k : slice_cols(k, h * head_dim, head_dim);
    Tensor<T> vh = heads_ == 1 ? v : slice_cols(v, h * head_dim, head_dim);
    Tensor<T> weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_d), 1);
    if (attention_weights != nullptr) attention_weights->push_back(weights);
    outputs.push_back(matmul(weights, vh));
  }
  Tensor<T> merged = heads_ == 1 ? outputs.front() : concat_cols(outputs);
  return out_proj(merged);
}

// --- transformer block -----------------------------------------------------

template <typename T>
TransformerBlock<T>::TransformerBlock(ParameterStore<T>& store, const std::string& prefix,
                                      const StageConfig& cfg)
    : norm1(store, prefix + ".norm1", cfg.embed_dim),
      attn(store, prefix + ".attn", cfg.embed_dim, cfg.heads, cfg.reduction),
      norm2(store, prefix + ".norm2", cfg.embed_dim),
      dwc(store, prefix + ".dwc", cfg.embed_dim, cfg.embed_dim, 3, 1, 1, cfg.embed_dim),
      mlp(store, prefix + ".mlp.fc", cfg.embed_dim, cfg.mlp_dim),
      dropout_(cfg.dropout) {}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(const Tensor<T>& tokens, std::size_t height,
                                          std::size_t width, Philox* dropout_rng) const {
  Tensor<T> x = add(attn(norm1(tokens), height, width), tokens);
  Tensor<T> mixed = map_to_tokens(dwc(tokens_to_map(norm2(x), height, width)));
  Tensor<T> act = gelu(mixed);
  if (dropout_rng != nullptr && dropout_ > 0.0) act = dropout(act, dropout_, *dropout_rng);
  return add(mlp(act), x);
}

// --- decoder ---------------------------------------------------------------

template <typename T>
ResidualBlock<T>::ResidualBlock(ParameterStore<T>& store, const std::string& prefix,
                                std::size_t channels)
    : conv1(store, prefix + ".conv1", channels, channels, 3, 1, 1),
      conv2(store, prefix + ".conv2", channels, channels, 3, 1, 1) {}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x) const {
  return add(conv2(relu(conv1(x))), x);
}

template <typename T>
ConvProjectionDecoder<T>::ConvProjectionDecoder(ParameterStore<T>& store, const ModelConfig& cfg) {
  const std::size_t d = cfg.decoder_dim;
  const std::size_t n = cfg.stages.size();
  top = Conv2d<T>(store, "decoder.top", cfg.stages.back().embed_dim, d, 3, 1, 1);
  scales.resize(n - 1);
  for (std::size_t k = n - 1; k-- > 0;) {
    const std::string prefix = "decoder.scale" + std::to_string(k + 1);
    scales[k].up = Conv2d<T>(store, prefix + ".up", d, d, 3, 1, 1);
    scales[k].skip = Conv2d<T>(store, prefix + ".skip", cfg.stages[k].embed_dim, d, 1, 1, 0);
    scales[k].rb = ResidualBlock<T>(store, prefix + ".rb", d);
  }
  final_up = Conv2d<T>(store, "decoder.final_up", d, d, 3, 1, 1);
  head = Conv2d<T>(store, "decoder.head", d, cfg.in_channels, 3, 1, 1);
}

template <typename T>
Tensor<T> ConvProjectionDecoder<T>::operator()(const FeaturePyramid<T>& pyramid) const {
  if (pyramid.maps.size() != scales.size() + 1) {
    throw_shape("decoder expects " + std::to_string(scales.size() + 1) +
                " feature maps, got " + std::to_string(pyramid.maps.size()));
  }
  Tensor<T> f = top(pyramid.maps.back());
  for (std::size_t k = scales.size(); k-- > 0;) {
    const Tensor<T>& skip_in = pyramid.maps[k];
    f = scales[k].up(upsample_nearest2x(f));
    if (f.dim(1) != skip_in.dim(1) || f.dim(2) != skip_in.dim(2)) {
      throw_shape("decoder: upsampled map " + shape_str(f.shape()) +
                  " does not match stage " + std::to_string(k + 1) + " map " +
                  shape_str(skip_in.shape()));
    }
    f = scales[k].rb(add(f, scales[k].skip(skip_in)));
  }
  return head(final_up(upsample_nearest2x(f)));
}

// --- full model ------------------------------------------------------------

template <typename T>
DespeckleNet<T>::DespeckleNet(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), store_(seed) {
  cfg_.validate();
  std::size_t in_channels = cfg_.in_channels;
  for (std::size_t i = 0; i < cfg_.stages.size(); ++i) {
    const StageConfig& s = cfg_.stages[i];
    const std::string prefix = "encoder.stage" + std::to_string(i + 1);
    EncoderStage<T> stage;
    stage.embed = OverlapPatchEmbed<T>(store_, prefix + ".patch_embed", in_channels, s, i + 1);
    stage.block = TransformerBlock<T>(store_, prefix + ".block", s);
    stages_.push_back(std::move(stage));
    in_channels = s.embed_dim;
  }
  decoder_ = ConvProjectionDecoder<T>(store_, cfg_);
}

template <typename T>
void DespeckleNet<T>::check_input(const Tensor<T>& x) const {
  if (x.rank() != 3 || x.dim(0) != cfg_.in_channels) {
    throw_shape("model expects a [" + std::to_string(cfg_.in_channels) + ",H,W] image, got " +
                shape_str(x.shape()));
  }
  const std::size_t f = cfg_.downsample_factor();
  if (x.dim(1) % f != 0 || x.dim(2) % f != 0) {
    throw_shape("input " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                " is not divisible by " + std::to_string(f) + " (2^stages x reduction ratio)");
  }
}

template <typename T>
FeaturePyramid<T> DespeckleNet<T>::encode(const Tensor<T>& y) const {
  return encode_impl(y, training_);
}

template <typename T>
FeaturePyramid<T> DespeckleNet<T>::encode_impl(const Tensor<T>& y, bool training) const {
  check_input(y);
  FeaturePyramid<T> pyramid;
  Tensor<T> x = y;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    TokenGrid<T> grid = stages_[i].embed(x);
    const bool use_dropout = training && cfg_.stages[i].dropout > 0.0;
    Philox rng(dropout_seed_, dropout_step_ * 64 + i);
    Tensor<T> tokens =
        stages_[i].block(grid.tokens, grid.height, grid.width, use_dropout ? &rng : nullptr);
    x = tokens_to_map(tokens, grid.height, grid.width);
    pyramid.maps.push_back(x);
  }
  return pyramid;
}

template <typename T>
Tensor<T> DespeckleNet<T>::decode(const FeaturePyramid<T>& pyramid) const {
  return decoder_(pyramid);
}

template <typename T>
Tensor<T> DespeckleNet<T>::forward(const Tensor<T>& y) const {
  return decode(encode(y));
}

template <typename T>
Tensor<T> DespeckleNet<T>::predict(const Tensor<T>& y) const {
  NoGradGuard guard;
  Tensor<T> out = decode(encode_impl(y, false));
  for (T& v : out.mutable_data()) v = std::max(v, T(0));
  return out;
}

template <typename T>
void DespeckleNet<T>::zero_grad() {
  for (auto& p : store_.all()) p.tensor.zero_grad();
}

template class OverlapPatchEmbed<float>;
template class OverlapPatchEmbed<double>;
template class EfficientAttention<float>;
template class EfficientAttention<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class ConvProjectionDecoder<float>;
template class ConvProjectionDecoder<double>;
template class DespeckleNet<float>;
template class DespeckleNet<double>;

}  // namespace despeckler
