#pragma once

// Fusion network: optional input projections, learned positional
// embeddings, one of nine fusion strategies, Transformer layers, sequence
// pooling and a task head. Templated on the scalar so gradient checks and
// attributions can run in double.
//
// Cross-attention layers follow
//   H_att = Attention(A, T, T)
//   G     = sigmoid(H_att W_g + b_g)
//   H     = G * H_att + (1 - G) * A
// with pre-norm applied to the attention inputs and a feed-forward sublayer
// after the residual. The ungated variant uses H = A + H_att.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cognialign/alignment.hpp"
#include "cognialign/tensor.hpp"

namespace cognialign {

enum class Fusion {
  Concat,
  Mean,
  Sum,
  Prod,
  SelfAttn,
  CrossAttn,
  GatedCrossAttn,
  BiCrossAttn,
  GatedBiCrossAttn
};
enum class Modality { Audio, Text };
enum class Pooling { Mean, CLS, Attn, GatedAttn };
enum class Task { Classify, Regress };

inline constexpr std::array kAllFusions = {
    Fusion::Concat,    Fusion::Mean,           Fusion::Sum,
    Fusion::Prod,      Fusion::SelfAttn,       Fusion::CrossAttn,
    Fusion::GatedCrossAttn, Fusion::BiCrossAttn, Fusion::GatedBiCrossAttn};
inline constexpr std::array kAllPoolings = {Pooling::Mean, Pooling::CLS, Pooling::Attn,
                                            Pooling::GatedAttn};

std::string_view fusion_name(Fusion fusion);
Fusion parse_fusion(std::string_view name);
std::string_view modality_name(Modality modality);
Modality parse_modality(std::string_view name);
std::string_view pooling_name(Pooling pooling);
Pooling parse_pooling(std::string_view name);
std::string_view task_name(Task task);
Task parse_task(std::string_view name);

bool is_cross_attention(Fusion fusion);
bool is_gated(Fusion fusion);

struct ModelConfig {
  // Width of the aligned embeddings. A projection to d_model is added when
  // the two differ.
  std::size_t input_dim = 64;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t n_layers = 1;
  Fusion fusion = Fusion::GatedCrossAttn;
  Modality query_modality = Modality::Audio;
  Pooling pooling = Pooling::Mean;
  Task task = Task::Classify;
  double dropout_rate = 0.1;
  std::uint64_t seed = 0;
  std::size_t max_len = 512;  // positional table size

  // 768 / 12 / 3072 encoder.
  static ModelConfig paper_scale();

  void validate() const;
  std::size_t output_dim() const { return task == Task::Classify ? 2 : 1; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;
};

template <class T>
struct Linear {
  BasicTensor<T> weight;  // [in × out]
  BasicTensor<T> bias;    // [out]
  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return add(matmul(x, weight), bias); }
};

template <class T>
struct LayerNormWeights {
  BasicTensor<T> gain;
  BasicTensor<T> bias;
  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, gain, bias); }
};

// Per-head projections are the column blocks of the d×d matrices.
template <class T>
struct AttentionWeights {
  Linear<T> query, key, value, output;
};

template <class T>
struct FeedForwardWeights {
  Linear<T> hidden, output;
};

template <class T>
struct EncoderLayerWeights {
  LayerNormWeights<T> norm_attn, norm_ff;
  AttentionWeights<T> attn;
  FeedForwardWeights<T> ff;
};

template <class T>
struct CrossLayerWeights {
  LayerNormWeights<T> norm_query, norm_context, norm_ff;
  AttentionWeights<T> attn;
  std::optional<Linear<T>> gate;  // W_g [d×d], b_g [d]; gated variants only
  FeedForwardWeights<T> ff;
};

template <class T>
struct PoolWeights {
  BasicTensor<T> score;  // w_a [d×1]
  Linear<T> gate;        // [d×1], [1]; GatedAttn only
};

template <class T>
struct HeadWeights {
  Linear<T> hidden, output;
};

// Intermediate values captured by a forward pass, in 64-bit.
struct ForwardTrace {
  struct Attention {
    std::size_t heads = 0, rows = 0, cols = 0;
    std::vector<double> weights;  // heads × rows × cols
  };
  struct Gate {
    std::vector<double> attended, residual, gate, output;
  };
  std::vector<Attention> attention;
  std::vector<Gate> gates;
  std::vector<std::vector<double>> pool_weights;  // one per pooled sequence
};

struct ForwardOptions {
  bool train = false;
  DropoutContext* dropout = nullptr;  // required when train and dropout_rate > 0
  ForwardTrace* trace = nullptr;
};

// Building blocks, exposed for testing.

template <class T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& query, const BasicTensor<T>& key,
                                    const BasicTensor<T>& value, const AttentionWeights<T>& weights,
                                    std::size_t n_heads, ForwardTrace* trace = nullptr);

template <class T>
BasicTensor<T> gated_residual(const BasicTensor<T>& attended, const BasicTensor<T>& residual,
                              const Linear<T>& gate, ForwardTrace* trace = nullptr);

template <class T>
BasicTensor<T> feed_forward(const BasicTensor<T>& x, const FeedForwardWeights<T>& weights);

template <class T>
BasicTensor<T> pool_sequence(const BasicTensor<T>& x, Pooling strategy, const PoolWeights<T>& weights,
                             ForwardTrace* trace = nullptr);

template <class T>
BasicTensor<T> to_tensor(const Matrix& m, bool requires_grad = false);

template <class T>
class FusionModel {
 public:
  using TensorT = BasicTensor<T>;

  // Initializes every parameter from config.seed. Each tensor draws from its
  // own named sub-stream, so adding a parameter never shifts the others.
  explicit FusionModel(ModelConfig config);

  FusionModel(const FusionModel&) = delete;
  FusionModel& operator=(const FusionModel&) = delete;
  FusionModel(FusionModel&&) noexcept = default;
  FusionModel& operator=(FusionModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }

  // audio, text: [L×input_dim] (lengths may differ for Concat and SelfAttn
  // only). Returns [1×2] logits or a [1×1] MMSE estimate.
  TensorT forward(const TensorT& audio, const TensorT& text, const ForwardOptions& options = {}) const;
  TensorT forward(const AlignedPair& pair, const ForwardOptions& options = {}) const;

  // Sequence entering the encoder stack for the non-cross strategies, from
  // already embedded streams (before any CLS token).
  TensorT fuse(const TensorT& audio, const TensorT& text) const;
  // Input projection plus positional embedding.
  TensorT embed_audio(const TensorT& audio) const { return embed(audio, audio_proj_); }
  TensorT embed_text(const TensorT& text) const { return embed(text, text_proj_); }

  // Cross-entropy on the label or MSE on the raw MMSE, per config.task.
  TensorT loss(const TensorT& output, const AlignedPair& pair) const;

  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  TensorT parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  // Parameter values in registration order.
  std::vector<std::vector<T>> snapshot() const;
  void restore(const std::vector<std::vector<T>>& values);
  void zero_grad();

  // Same configuration and values, different scalar.
  template <class U>
  FusionModel<U> cast() const {
    FusionModel<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto src = params_[i].tensor.data();
      auto dst = out.parameters()[i].tensor;
      auto values = dst.mutable_data();
      for (std::size_t j = 0; j < values.size(); ++j) values[j] = static_cast<U>(src[j]);
    }
    return out;
  }

  // Direct access for tests that construct analytic configurations.
  const std::vector<EncoderLayerWeights<T>>& encoder_layers() const { return encoder_; }
  const std::vector<CrossLayerWeights<T>>& cross_layers() const { return cross_; }
  const std::vector<CrossLayerWeights<T>>& reverse_cross_layers() const { return cross_reverse_; }

 private:
  TensorT make_parameter(const std::string& name, Shape shape, int init);
  Linear<T> make_linear(const std::string& name, std::size_t in, std::size_t out);
  LayerNormWeights<T> make_norm(const std::string& name, std::size_t d);
  AttentionWeights<T> make_attention(const std::string& name);
  FeedForwardWeights<T> make_ff(const std::string& name);
  CrossLayerWeights<T> make_cross(const std::string& name);

  TensorT embed(const TensorT& x, const std::optional<Linear<T>>& projection) const;
  TensorT prepend_cls(const TensorT& x) const;
  TensorT encoder_layer(const TensorT& x, const EncoderLayerWeights<T>& w, const ForwardOptions& o) const;
  TensorT cross_layer(const TensorT& x, const TensorT& context, const CrossLayerWeights<T>& w,
                      const ForwardOptions& o) const;
  TensorT cross_branch(const TensorT& query, const TensorT& context,
                       const std::vector<CrossLayerWeights<T>>& layers, const ForwardOptions& o) const;
  TensorT drop(const TensorT& x, const ForwardOptions& o) const;

  ModelConfig config_;
  std::vector<NamedTensor<T>> params_;

  std::optional<Linear<T>> audio_proj_, text_proj_;
  TensorT position_;
  TensorT cls_;
  std::vector<EncoderLayerWeights<T>> encoder_;
  std::vector<CrossLayerWeights<T>> cross_;
  std::vector<CrossLayerWeights<T>> cross_reverse_;
  PoolWeights<T> pool_;
  HeadWeights<T> head_;
};

using Model = FusionModel<float>;
using Model64 = FusionModel<double>;

}  // namespace cognialign
