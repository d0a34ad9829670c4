#include "cognialign/model_check.hpp"

#include "cognialign/rng.hpp"

namespace cognialign {

namespace {

Tensor64 uniform_tensor(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor64(std::move(shape), std::move(v), true);
}

}  // namespace

GradientCheckReport check_model_gradients(ModelConfig config, std::uint64_t seed, std::size_t length,
                                          const GradientCheckOptions& options) {
  config.seed = seed;
  Model64 model(config);
  Rng rng = Rng(seed).substream("gradcheck");
  for (const auto& p : model.parameters()) {
    auto t = p.tensor;
    for (auto& v : t.mutable_data()) v += rng.normal(0.0, 0.1);
  }
  auto audio = uniform_tensor(rng, {length, config.input_dim});
  auto text = uniform_tensor(rng, {length, config.input_dim});
  const std::size_t target = rng.below(config.output_dim());
  const double mmse = rng.uniform(10.0, 30.0);

  std::vector<NamedParameter> params;
  for (const auto& p : model.parameters()) params.push_back({p.name, p.tensor});
  params.push_back({"input.audio", audio});
  params.push_back({"input.text", text});

  auto forward = [&]() {
    DropoutContext ctx{seed, 0};
    auto out = model.forward(audio, text, {.train = true, .dropout = &ctx});
    if (config.task == Task::Classify) return cross_entropy_with_logits(out, target);
    return mse(out, Tensor64::scalar(mmse));
  };
  return check_gradients(forward, std::move(params), options);
}

ModelConfig reduced_for_gradcheck(const ModelConfig& config, std::size_t length) {
  ModelConfig c = config;
  c.input_dim = 6;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 12;
  c.max_len = std::max<std::size_t>(length + 1, 2);
  return c;
}

}  // namespace cognialign
