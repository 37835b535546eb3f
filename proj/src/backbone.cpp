#include "segpl/backbone.hpp"

#include <cmath>
#include <random>
#include <string>

#include "segpl/error.hpp"
#include "segpl/ops.hpp"

namespace segpl {

struct BlockTape {
  Tensor input, pre1;
  ops::NormCache norm1;
  Tensor act1, pre2;
  ops::NormCache norm2;
  Tensor act2;
};

struct BackboneTape {
  std::vector<int> input_shape;
  std::vector<BlockTape> encoder;
  std::vector<std::vector<int>> pool_argmax;
  std::vector<ops::Dims> pool_input;
  BlockTape bottleneck;
  std::vector<Tensor> upsampled;  // input of each up-conv, indexed by level - 1
  std::vector<BlockTape> decoder;  // indexed by level - 1
  Tensor output_input;
};

namespace {

std::string stage_name(const char* kind, int index) { return std::string(kind) + std::to_string(index); }

std::vector<int> kernel_shape(int out, int in, int rank, int k) {
  return {out, in, rank == 3 ? k : 1, k, k};
}

ops::Factors pool_factors(int rank) { return rank == 3 ? ops::Factors{2, 2, 2} : ops::Factors{1, 2, 2}; }

Tensor to5d(const Tensor& t, int rank) {
  if (rank == 3) return t;
  std::vector<int> s = t.shape();
  s.insert(s.begin() + 2, 1);
  return t.reshaped(std::move(s));
}

Tensor from5d(const Tensor& t, int rank) {
  if (rank == 3) return t;
  std::vector<int> s = t.shape();
  s.erase(s.begin() + 2);
  return t.reshaped(std::move(s));
}

const Tensor kNoBias;

Tensor block_forward(const ParameterSet& p, const std::string& name, const Tensor& x, BlockTape& tape) {
  tape.input = x;
  tape.pre1 = ops::conv_forward(x, p.at(name + ".conv1.weight"), kNoBias);
  tape.act1 = ops::relu_forward(ops::instance_norm_forward(tape.pre1, p.at(name + ".norm1.weight"),
                                                           p.at(name + ".norm1.bias"), tape.norm1));
  tape.pre2 = ops::conv_forward(tape.act1, p.at(name + ".conv2.weight"), kNoBias);
  tape.act2 = ops::relu_forward(ops::instance_norm_forward(tape.pre2, p.at(name + ".norm2.weight"),
                                                           p.at(name + ".norm2.bias"), tape.norm2));
  return tape.act2;
}

Tensor block_backward(const ParameterSet& p, ParameterSet& g, const std::string& name, const BlockTape& tape,
                      const Tensor& d_out) {
  Tensor empty;
  Tensor d = ops::relu_backward(tape.act2, d_out);
  d = ops::instance_norm_backward(d, p.at(name + ".norm2.weight"), tape.norm2, g.at(name + ".norm2.weight"),
                                  g.at(name + ".norm2.bias"));
  Tensor d_act1;
  ops::conv_backward(tape.act1, p.at(name + ".conv2.weight"), d, g.at(name + ".conv2.weight"), empty, &d_act1);
  d = ops::relu_backward(tape.act1, d_act1);
  d = ops::instance_norm_backward(d, p.at(name + ".norm1.weight"), tape.norm1, g.at(name + ".norm1.weight"),
                                  g.at(name + ".norm1.bias"));
  Tensor d_in;
  ops::conv_backward(tape.input, p.at(name + ".conv1.weight"), d, g.at(name + ".conv1.weight"), empty, &d_in);
  return d_in;
}

}  // namespace

void BackboneConfig::validate() const {
  if (spatial_rank != 2 && spatial_rank != 3) {
    throw ValidationError("spatial_rank must be 2 or 3, got " + std::to_string(spatial_rank));
  }
  if (in_channels < 1) throw ValidationError("in_channels must be positive");
  if (out_channels < 1) throw ValidationError("out_channels must be at least 1");
  if (base_width < 1) throw ValidationError("base_width must be positive");
  if (depth < 1) throw ValidationError("depth must be positive");
}

Backbone::Backbone(BackboneConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  build(seed, false);
}

Backbone Backbone::zeros(BackboneConfig config) {
  config.validate();
  Backbone b;
  b.config_ = config;
  b.build(0, true);
  return b;
}

Backbone Backbone::from_parameters(BackboneConfig config, ParameterSet parameters) {
  Backbone b = zeros(config);
  if (parameters.size() != b.params_.size()) {
    throw MismatchError("parameter count " + std::to_string(parameters.size()) + " does not match architecture (" +
                        std::to_string(b.params_.size()) + ")");
  }
  for (auto& [name, value] : b.params_.entries()) {
    const Tensor& stored = parameters.at(name);
    if (!stored.same_shape(value)) {
      throw MismatchError("parameter " + name + " has shape " + shape_string(stored.shape()) + ", expected " +
                          shape_string(value.shape()));
    }
    value = stored;
  }
  return b;
}

void Backbone::build(std::uint64_t seed, bool zero) {
  std::mt19937_64 rng(seed);
  const int r = config_.spatial_rank;
  auto conv = [&](const std::string& name, int out, int in, int k, bool with_bias) {
    Tensor w(kernel_shape(out, in, r, k));
    if (!zero) {
      const double fan_in = static_cast<double>(w.size()) / out;
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
      for (double& v : w.values()) v = normal(rng);
    }
    params_.add(name + ".weight", std::move(w));
    if (with_bias) params_.add(name + ".bias", Tensor({out}));
  };
  auto block = [&](const std::string& name, int in, int out) {
    conv(name + ".conv1", out, in, 3, false);
    params_.add(name + ".norm1.weight", Tensor({out}, zero ? 0.0 : 1.0));
    params_.add(name + ".norm1.bias", Tensor({out}));
    conv(name + ".conv2", out, out, 3, false);
    params_.add(name + ".norm2.weight", Tensor({out}, zero ? 0.0 : 1.0));
    params_.add(name + ".norm2.bias", Tensor({out}));
  };

  const int w = config_.base_width;
  int in = config_.in_channels;
  for (int i = 0; i < config_.depth; ++i) {
    block(stage_name("enc", i), in, w << i);
    in = w << i;
  }
  block("bottleneck", in, config_.bottleneck_channels());
  for (int level = config_.depth; level >= 1; --level) {
    const int high = w << level, low = w << (level - 1);
    conv(stage_name("up", level) + ".conv", low, high, 3, true);
    block(stage_name("dec", level), 2 * low, low);
  }
  conv("out", config_.out_channels, w, 1, true);
}

void Backbone::check_input(const Tensor& images) const {
  const int expected_rank = config_.spatial_rank + 2;
  if (images.rank() != expected_rank) {
    throw ShapeError("input rank " + std::to_string(images.rank()) + " does not match expected " +
                     std::to_string(expected_rank) + " for spatial_rank " + std::to_string(config_.spatial_rank));
  }
  if (images.dim(1) != config_.in_channels) {
    throw ShapeError("channel dimension (axis 1) is " + std::to_string(images.dim(1)) + ", expected " +
                     std::to_string(config_.in_channels));
  }
  static const char* kAxisNames[] = {"depth", "height", "width"};
  for (int axis = 2; axis < expected_rank; ++axis) {
    if (images.dim(axis) % config_.size_multiple() != 0) {
      const int name_index = axis - 2 + (config_.spatial_rank == 2 ? 1 : 0);
      throw ShapeError(std::string("spatial dimension ") + kAxisNames[name_index] + " (axis " +
                       std::to_string(axis) + ") = " + std::to_string(images.dim(axis)) +
                       " is not divisible by 2^depth = " + std::to_string(config_.size_multiple()));
    }
  }
}

ForwardResult Backbone::forward(const Tensor& images) const {
  check_input(images);
  const int r = config_.spatial_rank;
  const int depth = config_.depth;
  const ops::Factors f = pool_factors(r);
  auto tape = std::make_shared<BackboneTape>();
  tape->input_shape = images.shape();
  tape->encoder.resize(static_cast<std::size_t>(depth));
  tape->pool_argmax.resize(static_cast<std::size_t>(depth));
  tape->pool_input.resize(static_cast<std::size_t>(depth));
  tape->upsampled.resize(static_cast<std::size_t>(depth));
  tape->decoder.resize(static_cast<std::size_t>(depth));

  Tensor x = to5d(images, r);
  std::vector<Tensor> skips;
  for (int i = 0; i < depth; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    Tensor s = block_forward(params_, stage_name("enc", i), x, tape->encoder[idx]);
    tape->pool_input[idx] = ops::dims_of(s);
    x = ops::max_pool_forward(s, f, tape->pool_argmax[idx]);
    skips.push_back(std::move(s));
  }
  Tensor bottom = block_forward(params_, "bottleneck", x, tape->bottleneck);
  x = bottom;
  for (int level = depth; level >= 1; --level) {
    const auto idx = static_cast<std::size_t>(level - 1);
    const std::string up = stage_name("up", level) + ".conv";
    tape->upsampled[idx] = ops::upsample_nearest_forward(x, f);
    Tensor u = ops::conv_forward(tape->upsampled[idx], params_.at(up + ".weight"), params_.at(up + ".bias"));
    x = block_forward(params_, stage_name("dec", level), ops::concat_channels(skips[idx], u), tape->decoder[idx]);
  }
  tape->output_input = x;
  Tensor logits = ops::conv_forward(x, params_.at("out.weight"), params_.at("out.bias"));

  ForwardResult result;
  result.logits = from5d(logits, r);
  result.probabilities = ops::sigmoid(result.logits);
  result.bottleneck_features = from5d(bottom, r);
  result.tape = std::move(tape);
  return result;
}

BackboneGradients Backbone::backward(const ForwardResult& fwd, const Tensor& d_logits, const Tensor* d_bottleneck,
                                     bool input_gradient) const {
  if (!fwd.tape) throw ValidationError("forward result carries no tape");
  if (!d_logits.same_shape(fwd.logits)) {
    throw ShapeError("d_logits shape " + shape_string(d_logits.shape()) + " does not match logits " +
                     shape_string(fwd.logits.shape()));
  }
  const BackboneTape& tape = *fwd.tape;
  const int r = config_.spatial_rank;
  const int depth = config_.depth;
  const ops::Factors f = pool_factors(r);
  BackboneGradients out;
  out.parameters = params_.zeros_like();
  ParameterSet& g = out.parameters;

  Tensor d_x;
  ops::conv_backward(tape.output_input, params_.at("out.weight"), to5d(d_logits, r), g.at("out.weight"),
                     g.at("out.bias"), &d_x);
  std::vector<Tensor> d_skips(static_cast<std::size_t>(depth));
  for (int level = 1; level <= depth; ++level) {
    const auto idx = static_cast<std::size_t>(level - 1);
    const std::string up = stage_name("up", level) + ".conv";
    Tensor d_cat = block_backward(params_, g, stage_name("dec", level), tape.decoder[idx], d_x);
    Tensor d_u;
    ops::split_channels(d_cat, config_.base_width << (level - 1), d_skips[idx], d_u);
    Tensor d_up;
    ops::conv_backward(tape.upsampled[idx], params_.at(up + ".weight"), d_u, g.at(up + ".weight"),
                       g.at(up + ".bias"), &d_up);
    d_x = ops::upsample_nearest_backward(d_up, f);
  }
  if (d_bottleneck) {
    if (!d_bottleneck->same_shape(fwd.bottleneck_features)) {
      throw ShapeError("d_bottleneck shape " + shape_string(d_bottleneck->shape()) + " does not match features " +
                       shape_string(fwd.bottleneck_features.shape()));
    }
    d_x += to5d(*d_bottleneck, r);
  }
  d_x = block_backward(params_, g, "bottleneck", tape.bottleneck, d_x);
  for (int i = depth - 1; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    Tensor d_s = ops::max_pool_backward(d_x, tape.pool_input[idx], tape.pool_argmax[idx]);
    d_s += d_skips[idx];
    d_x = block_backward(params_, g, stage_name("enc", i), tape.encoder[idx], d_s);
  }
  if (input_gradient) out.input = d_x.reshaped(tape.input_shape);
  return out;
}

}  // namespace segpl
