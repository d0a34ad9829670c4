#include "cognialign/model.hpp"

#include <cmath>

#include "cognialign/rng.hpp"

namespace cognialign {

namespace {

template <class E, std::size_t N>
E parse_enum(std::string_view name, const std::array<std::pair<E, std::string_view>, N>& table,
             std::string_view what) {
  for (const auto& [value, text] : table)
    if (text == name) return value;
  std::string options;
  for (const auto& entry : table) options += (options.empty() ? "" : ", ") + std::string(entry.second);
  throw ContractError("unknown " + std::string(what) + " '" + std::string(name) + "' (expected one of " +
                      options + ")");
}

template <class E, std::size_t N>
std::string_view enum_name(E value, const std::array<std::pair<E, std::string_view>, N>& table) {
  for (const auto& [v, text] : table)
    if (v == value) return text;
  throw ContractError("invalid enum value");
}

constexpr std::array<std::pair<Fusion, std::string_view>, 9> kFusionNames = {{
    {Fusion::Concat, "Concat"},
    {Fusion::Mean, "Mean"},
    {Fusion::Sum, "Sum"},
    {Fusion::Prod, "Prod"},
    {Fusion::SelfAttn, "SelfAttn"},
    {Fusion::CrossAttn, "CrossAttn"},
    {Fusion::GatedCrossAttn, "GatedCrossAttn"},
    {Fusion::BiCrossAttn, "BiCrossAttn"},
    {Fusion::GatedBiCrossAttn, "GatedBiCrossAttn"},
}};
constexpr std::array<std::pair<Modality, std::string_view>, 2> kModalityNames = {{
    {Modality::Audio, "Audio"},
    {Modality::Text, "Text"},
}};
constexpr std::array<std::pair<Pooling, std::string_view>, 4> kPoolingNames = {{
    {Pooling::Mean, "Mean"},
    {Pooling::CLS, "CLS"},
    {Pooling::Attn, "Attn"},
    {Pooling::GatedAttn, "GatedAttn"},
}};
constexpr std::array<std::pair<Task, std::string_view>, 2> kTaskNames = {{
    {Task::Classify, "Classify"},
    {Task::Regress, "Regress"},
}};

// Position and CLS rows live in input-embedding space and start at unit
// scale, like the aligned embeddings they are added to or sit beside.
enum Init { kXavier, kSmallNormal, kUnitNormal, kOnes, kZeros };

template <class T>
std::vector<double> to_double(const BasicTensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace

std::string_view fusion_name(Fusion fusion) { return enum_name(fusion, kFusionNames); }
Fusion parse_fusion(std::string_view name) { return parse_enum(name, kFusionNames, "fusion"); }
std::string_view modality_name(Modality modality) { return enum_name(modality, kModalityNames); }
Modality parse_modality(std::string_view name) { return parse_enum(name, kModalityNames, "modality"); }
std::string_view pooling_name(Pooling pooling) { return enum_name(pooling, kPoolingNames); }
Pooling parse_pooling(std::string_view name) { return parse_enum(name, kPoolingNames, "pooling"); }
std::string_view task_name(Task task) { return enum_name(task, kTaskNames); }
Task parse_task(std::string_view name) { return parse_enum(name, kTaskNames, "task"); }

bool is_cross_attention(Fusion fusion) {
  return fusion == Fusion::CrossAttn || fusion == Fusion::GatedCrossAttn || fusion == Fusion::BiCrossAttn ||
         fusion == Fusion::GatedBiCrossAttn;
}

bool is_gated(Fusion fusion) { return fusion == Fusion::GatedCrossAttn || fusion == Fusion::GatedBiCrossAttn; }

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.input_dim = 768;
  c.d_model = 768;
  c.n_heads = 12;
  c.d_ff = 3072;
  return c;
}

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_ff == 0 || input_dim == 0 || max_len == 0)
    throw ContractError("model dimensions must be positive");
  if (d_model % n_heads != 0)
    throw ContractError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                        std::to_string(n_heads));
  if (d_model < 2) throw ContractError("d_model must be at least 2");
  if (n_layers < 1) throw ContractError("n_layers must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ContractError("dropout_rate must be in [0, 1), got " + std::to_string(dropout_rate));
}

template <class T>
BasicTensor<T> to_tensor(const Matrix& m, bool requires_grad) {
  if (m.rows == 0 || m.cols == 0) throw ContractError("cannot build a tensor from an empty matrix");
  return BasicTensor<T>({m.rows, m.cols}, std::vector<T>(m.values.begin(), m.values.end()), requires_grad);
}

template <class T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& query, const BasicTensor<T>& key,
                                    const BasicTensor<T>& value, const AttentionWeights<T>& weights,
                                    std::size_t n_heads, ForwardTrace* trace) {
  const std::size_t d = weights.query.weight.dim(0);
  if (query.cols() != d || key.cols() != d || value.cols() != d)
    throw ContractError("attention: input widths " + shape_string(query.shape()) + ", " +
                        shape_string(key.shape()) + ", " + shape_string(value.shape()) +
                        " do not match d_model " + std::to_string(d));
  if (key.rows() != value.rows())
    throw ContractError("attention: key and value lengths differ (" + std::to_string(key.rows()) + " vs " +
                        std::to_string(value.rows()) + ")");
  if (n_heads == 0 || d % n_heads != 0) throw ContractError("attention: d_model not divisible by heads");

  const auto q = weights.query(query);
  const auto k = weights.key(key);
  const auto v = weights.value(value);
  const std::size_t dh = d / n_heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

  ForwardTrace::Attention record;
  if (trace) {
    record.heads = n_heads;
    record.rows = query.rows();
    record.cols = key.rows();
  }
  std::vector<BasicTensor<T>> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto qh = n_heads == 1 ? q : slice(q, 1, h * dh, (h + 1) * dh);
    const auto kh = n_heads == 1 ? k : slice(k, 1, h * dh, (h + 1) * dh);
    const auto vh = n_heads == 1 ? v : slice(v, 1, h * dh, (h + 1) * dh);
    const auto probs = softmax_rows(scale(matmul_bt(qh, kh), inv_sqrt));
    if (trace) record.weights.insert(record.weights.end(), probs.data().begin(), probs.data().end());
    heads.push_back(matmul(probs, vh));
  }
  if (trace) trace->attention.push_back(std::move(record));
  return weights.output(n_heads == 1 ? heads[0] : concat(heads, 1));
}

template <class T>
BasicTensor<T> gated_residual(const BasicTensor<T>& attended, const BasicTensor<T>& residual,
                              const Linear<T>& gate, ForwardTrace* trace) {
  if (attended.shape() != residual.shape())
    throw ContractError("gated_residual: shapes differ " + shape_string(attended.shape()) + " vs " +
                        shape_string(residual.shape()));
  const auto g = sigmoid(gate(attended));
  // G*H_att + (1-G)*A, written as A + G*(H_att - A)
  auto out = add(residual, mul(g, sub(attended, residual)));
  if (trace)
    trace->gates.push_back({to_double(attended), to_double(residual), to_double(g), to_double(out)});
  return out;
}

template <class T>
BasicTensor<T> feed_forward(const BasicTensor<T>& x, const FeedForwardWeights<T>& weights) {
  return weights.output(gelu(weights.hidden(x)));
}

template <class T>
BasicTensor<T> pool_sequence(const BasicTensor<T>& x, Pooling strategy, const PoolWeights<T>& weights,
                             ForwardTrace* trace) {
  switch (strategy) {
    case Pooling::Mean:
      return mean(x, 0, true);
    case Pooling::CLS:
      return slice(x, 0, 0, 1);
    case Pooling::Attn:
    case Pooling::GatedAttn: {
      auto scores = matmul(x, weights.score);  // [L×1]
      if (strategy == Pooling::GatedAttn) scores = mul(scores, sigmoid(weights.gate(x)));
      const auto alpha = softmax_rows(transpose(scores));  // [1×L]
      if (trace) trace->pool_weights.push_back(to_double(alpha));
      return matmul(alpha, x);
    }
  }
  throw ContractError("unknown pooling strategy");
}

// --- FusionModel -------------------------------------------------------------

template <class T>
FusionModel<T>::FusionModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t d = config_.d_model;
  if (config_.input_dim != d) {
    audio_proj_ = make_linear("audio_proj", config_.input_dim, d);
    text_proj_ = make_linear("text_proj", config_.input_dim, d);
  }
  position_ = make_parameter("position", {config_.max_len, d}, kUnitNormal);
  if (config_.pooling == Pooling::CLS) cls_ = make_parameter("cls", {1, d}, kUnitNormal);

  if (is_cross_attention(config_.fusion)) {
    for (std::size_t l = 0; l < config_.n_layers; ++l)
      cross_.push_back(make_cross("cross." + std::to_string(l)));
    if (config_.fusion == Fusion::BiCrossAttn || config_.fusion == Fusion::GatedBiCrossAttn)
      for (std::size_t l = 0; l < config_.n_layers; ++l)
        cross_reverse_.push_back(make_cross("cross_reverse." + std::to_string(l)));
  } else {
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const std::string p = "encoder." + std::to_string(l);
      encoder_.push_back({make_norm(p + ".norm_attn", d), make_norm(p + ".norm_ff", d),
                          make_attention(p + ".attn"), make_ff(p + ".ff")});
    }
  }

  if (config_.pooling == Pooling::Attn || config_.pooling == Pooling::GatedAttn)
    pool_.score = make_parameter("pool.score", {d, 1}, kSmallNormal);
  if (config_.pooling == Pooling::GatedAttn) pool_.gate = make_linear("pool.gate", d, 1);

  head_.hidden = make_linear("head.hidden", d, d / 2);
  head_.output = make_linear("head.output", d / 2, config_.output_dim());
}

template <class T>
BasicTensor<T> FusionModel<T>::make_parameter(const std::string& name, Shape shape, int init) {
  Rng rng = Rng(config_.seed).substream("init").substream(name);
  const std::size_t n = shape_numel(shape);
  std::vector<T> values(n, T(0));
  switch (init) {
    case kXavier: {
      const double fan_in = static_cast<double>(shape[0]);
      const double fan_out = static_cast<double>(shape.size() > 1 ? shape[1] : 1);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : values) v = static_cast<T>(rng.uniform(-limit, limit));
      break;
    }
    case kSmallNormal:
      for (auto& v : values) v = static_cast<T>(rng.normal(0.0, 0.02));
      break;
    case kUnitNormal:
      for (auto& v : values) v = static_cast<T>(rng.normal(0.0, 1.0));
      break;
    case kOnes:
      for (auto& v : values) v = T(1);
      break;
    default:
      break;
  }
  BasicTensor<T> t(std::move(shape), std::move(values), true);
  params_.push_back({name, t});
  return t;
}

template <class T>
Linear<T> FusionModel<T>::make_linear(const std::string& name, std::size_t in, std::size_t out) {
  return {make_parameter(name + ".weight", {in, out}, kXavier), make_parameter(name + ".bias", {out}, kZeros)};
}

template <class T>
LayerNormWeights<T> FusionModel<T>::make_norm(const std::string& name, std::size_t d) {
  return {make_parameter(name + ".gain", {d}, kOnes), make_parameter(name + ".bias", {d}, kZeros)};
}

template <class T>
AttentionWeights<T> FusionModel<T>::make_attention(const std::string& name) {
  const std::size_t d = config_.d_model;
  return {make_linear(name + ".query", d, d), make_linear(name + ".key", d, d), make_linear(name + ".value", d, d),
          make_linear(name + ".output", d, d)};
}

template <class T>
FeedForwardWeights<T> FusionModel<T>::make_ff(const std::string& name) {
  return {make_linear(name + ".hidden", config_.d_model, config_.d_ff),
          make_linear(name + ".output", config_.d_ff, config_.d_model)};
}

template <class T>
CrossLayerWeights<T> FusionModel<T>::make_cross(const std::string& name) {
  const std::size_t d = config_.d_model;
  CrossLayerWeights<T> w;
  w.norm_query = make_norm(name + ".norm_query", d);
  w.norm_context = make_norm(name + ".norm_context", d);
  w.norm_ff = make_norm(name + ".norm_ff", d);
  w.attn = make_attention(name + ".attn");
  if (is_gated(config_.fusion)) w.gate = make_linear(name + ".gate", d, d);
  w.ff = make_ff(name + ".ff");
  return w;
}

template <class T>
BasicTensor<T> FusionModel<T>::drop(const TensorT& x, const ForwardOptions& o) const {
  const T rate = static_cast<T>(config_.dropout_rate);
  if (!o.train || rate == T(0)) return x;
  if (!o.dropout) throw ContractError("training forward pass needs a dropout context");
  return dropout(x, rate, true, *o.dropout);
}

template <class T>
BasicTensor<T> FusionModel<T>::embed(const TensorT& x, const std::optional<Linear<T>>& projection) const {
  if (x.rank() != 2 || x.cols() != config_.input_dim)
    throw ContractError("model input " + shape_string(x.shape()) + " does not have width input_dim " +
                        std::to_string(config_.input_dim));
  if (x.rows() > config_.max_len)
    throw ContractError("sequence of " + std::to_string(x.rows()) + " tokens exceeds max_len " +
                        std::to_string(config_.max_len));
  const auto h = projection ? (*projection)(x) : x;
  return add(h, slice(position_, 0, 0, x.rows()));
}

template <class T>
BasicTensor<T> FusionModel<T>::prepend_cls(const TensorT& x) const {
  return config_.pooling == Pooling::CLS ? concat<T>({cls_, x}, 0) : x;
}

template <class T>
BasicTensor<T> FusionModel<T>::encoder_layer(const TensorT& x, const EncoderLayerWeights<T>& w,
                                             const ForwardOptions& o) const {
  const auto n = w.norm_attn(x);
  const auto h = add(x, drop(multi_head_attention(n, n, n, w.attn, config_.n_heads, o.trace), o));
  return add(h, drop(feed_forward(w.norm_ff(h), w.ff), o));
}

template <class T>
BasicTensor<T> FusionModel<T>::cross_layer(const TensorT& x, const TensorT& context,
                                           const CrossLayerWeights<T>& w, const ForwardOptions& o) const {
  const auto c = w.norm_context(context);
  const auto attended = drop(multi_head_attention(w.norm_query(x), c, c, w.attn, config_.n_heads, o.trace), o);
  const auto h = w.gate ? gated_residual(attended, x, *w.gate, o.trace) : add(x, attended);
  return add(h, drop(feed_forward(w.norm_ff(h), w.ff), o));
}

template <class T>
BasicTensor<T> FusionModel<T>::cross_branch(const TensorT& query, const TensorT& context,
                                            const std::vector<CrossLayerWeights<T>>& layers,
                                            const ForwardOptions& o) const {
  // Every layer attends over the same context stream.
  auto x = prepend_cls(query);
  for (const auto& w : layers) x = cross_layer(x, context, w, o);
  return pool_sequence(x, config_.pooling, pool_, o.trace);
}

template <class T>
BasicTensor<T> FusionModel<T>::forward(const TensorT& audio_in, const TensorT& text_in,
                                       const ForwardOptions& o) const {
  const auto audio = embed(audio_in, audio_proj_);
  const auto text = embed(text_in, text_proj_);
  const Fusion f = config_.fusion;
  if ((f == Fusion::Mean || f == Fusion::Sum || f == Fusion::Prod || is_cross_attention(f)) &&
      audio.rows() != text.rows())
    throw ContractError(std::string(fusion_name(f)) +
                        " fusion requires that both modalities have sequences of equal length (audio " +
                        std::to_string(audio.rows()) + ", text " + std::to_string(text.rows()) + ")");

  TensorT pooled;
  if (f == Fusion::CrossAttn || f == Fusion::GatedCrossAttn) {
    const bool audio_query = config_.query_modality == Modality::Audio;
    pooled = cross_branch(audio_query ? audio : text, audio_query ? text : audio, cross_, o);
  } else if (f == Fusion::BiCrossAttn || f == Fusion::GatedBiCrossAttn) {
    const auto forward_branch = cross_branch(audio, text, cross_, o);
    const auto reverse_branch = cross_branch(text, audio, cross_reverse_, o);
    pooled = scale(add(forward_branch, reverse_branch), T(0.5));
  } else {
    auto x = prepend_cls(fuse(audio, text));
    for (const auto& w : encoder_) x = encoder_layer(x, w, o);
    pooled = pool_sequence(x, config_.pooling, pool_, o.trace);
  }
  const auto hidden = drop(gelu(head_.hidden(pooled)), o);
  return head_.output(hidden);
}

template <class T>
BasicTensor<T> FusionModel<T>::fuse(const TensorT& audio, const TensorT& text) const {
  const Fusion f = config_.fusion;
  if ((f == Fusion::Mean || f == Fusion::Sum || f == Fusion::Prod) && audio.rows() != text.rows())
    throw ContractError(std::string(fusion_name(f)) +
                        " fusion requires that both modalities have sequences of equal length (audio " +
                        std::to_string(audio.rows()) + ", text " + std::to_string(text.rows()) + ")");
  switch (f) {
    case Fusion::Concat:
      return concat<T>({audio, text}, 0);
    case Fusion::Mean:
      return scale(add(audio, text), T(0.5));
    case Fusion::Sum:
      return add(audio, text);
    case Fusion::Prod:
      return mul(audio, text);
    case Fusion::SelfAttn:
      return concat<T>({mean(audio, 0, true), mean(text, 0, true)}, 0);
    default:
      throw ContractError(std::string(fusion_name(f)) + " fusion has no shared encoder input");
  }
}

template <class T>
BasicTensor<T> FusionModel<T>::forward(const AlignedPair& pair, const ForwardOptions& options) const {
  return forward(to_tensor<T>(pair.audio), to_tensor<T>(pair.text), options);
}

template <class T>
BasicTensor<T> FusionModel<T>::loss(const TensorT& output, const AlignedPair& pair) const {
  if (config_.task == Task::Classify) {
    if (!pair.label) throw ContractError("subject " + pair.subject_id + " has no label");
    return cross_entropy_with_logits(output, static_cast<std::size_t>(*pair.label));
  }
  if (!pair.mmse) throw ContractError("subject " + pair.subject_id + " has no MMSE score");
  return mse(output, TensorT::scalar(static_cast<T>(*pair.mmse)));
}

template <class T>
BasicTensor<T> FusionModel<T>::parameter(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

template <class T>
std::size_t FusionModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <class T>
std::vector<std::vector<T>> FusionModel<T>::snapshot() const {
  std::vector<std::vector<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

template <class T>
void FusionModel<T>::restore(const std::vector<std::vector<T>>& values) {
  if (values.size() != params_.size()) throw ContractError("snapshot does not match the model");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].tensor.mutable_data();
    if (values[i].size() != dst.size())
      throw ContractError("snapshot size mismatch for " + params_[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

template <class T>
void FusionModel<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

#define COGNIALIGN_INSTANTIATE(T)                                                                          \
  template class FusionModel<T>;                                                                           \
  template BasicTensor<T> to_tensor<T>(const Matrix&, bool);                                               \
  template BasicTensor<T> multi_head_attention<T>(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                                  const BasicTensor<T>&, const AttentionWeights<T>&,       \
                                                  std::size_t, ForwardTrace*);                             \
  template BasicTensor<T> gated_residual<T>(const BasicTensor<T>&, const BasicTensor<T>&, const Linear<T>&, \
                                            ForwardTrace*);                                                \
  template BasicTensor<T> feed_forward<T>(const BasicTensor<T>&, const FeedForwardWeights<T>&);            \
  template BasicTensor<T> pool_sequence<T>(const BasicTensor<T>&, Pooling, const PoolWeights<T>&,          \
                                           ForwardTrace*);

COGNIALIGN_INSTANTIATE(float)
COGNIALIGN_INSTANTIATE(double)
#undef COGNIALIGN_INSTANTIATE

}  // namespace cognialign
