#include "segpl/pseudo.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "segpl/error.hpp"

namespace segpl {

void PriorSpec::validate() const {
  if (!(mean > 0.0 && mean < 1.0)) throw ValidationError("prior mean must lie in (0, 1), got " + std::to_string(mean));
  if (!(stddev > 0.0) || !std::isfinite(stddev)) {
    throw ValidationError("prior stddev must be positive, got " + std::to_string(stddev));
  }
}

double ThresholdPosterior::stddev() const { return std::exp(0.5 * log_variance); }

void ThresholdPosterior::validate() const {
  if (!std::isfinite(mean) || !std::isfinite(log_variance)) {
    throw ValidationError("threshold posterior is not finite (mean " + std::to_string(mean) + ", log variance " +
                          std::to_string(log_variance) + ")");
  }
}

PseudoLabelBatch binarize_fixed(const Tensor& probabilities, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
  PseudoLabelBatch out;
  out.mask = Tensor(probabilities.shape());
  out.threshold_used = threshold;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double p = probabilities[i];
    if (!std::isfinite(p)) throw ValidationError("non-finite probability at flat index " + std::to_string(i));
    out.mask[i] = p > threshold ? 1.0 : 0.0;
  }
  return out;
}

ThresholdSample sample_threshold(const ThresholdPosterior& posterior, double noise) {
  posterior.validate();
  const double sigma = posterior.stddev();
  const double raw = posterior.mean + noise * sigma;
  ThresholdSample s;
  if (raw < kThresholdMin || raw > kThresholdMax) {
    s.value = std::clamp(raw, kThresholdMin, kThresholdMax);
    s.clamped = true;
    return s;
  }
  s.value = raw;
  s.d_mean = 1.0;
  s.d_log_variance = 0.5 * noise * sigma;
  return s;
}

PseudoLabelBatch make_pseudo_labels_vi(const Tensor& probabilities, const ThresholdPosterior& posterior,
                                       double noise) {
  return binarize_fixed(probabilities, sample_threshold(posterior, noise).value);
}

// ---------------------------------------------------------------------------

struct HeadTape {
  std::vector<int> feature_shape;
  std::vector<double> pooled;
  std::vector<double> pre;       // hidden pre-activation
  std::vector<double> act;       // after ReLU
  std::vector<double> normed;    // after normalisation, before affine
  double inv_std = 0.0;
  std::vector<double> out;       // after affine
};

namespace {
constexpr double kNormEps = 1e-5;
}

PosteriorHead::PosteriorHead(int feature_channels, std::uint64_t seed, const PriorSpec& init_prior)
    : feature_channels_(feature_channels) {
  if (feature_channels < 2) throw ValidationError("posterior head needs at least 2 feature channels");
  init_prior.validate();
  std::mt19937_64 rng(seed);
  const int c = feature_channels;
  std::normal_distribution<double> hidden(0.0, std::sqrt(2.0 / c));
  std::normal_distribution<double> output(0.0, 0.01);
  Tensor& w = params_.add("head.hidden.weight", Tensor({c, c}));
  for (double& v : w.values()) v = hidden(rng);
  params_.add("head.hidden.bias", Tensor({c}));
  params_.add("head.norm.weight", Tensor({c}, 1.0));
  params_.add("head.norm.bias", Tensor({c}));
  Tensor& wm = params_.add("head.mean.weight", Tensor({c}));
  for (double& v : wm.values()) v = output(rng);
  params_.add("head.mean.bias", Tensor({1}, init_prior.mean));
  Tensor& wl = params_.add("head.log_variance.weight", Tensor({c}));
  for (double& v : wl.values()) v = output(rng);
  params_.add("head.log_variance.bias", Tensor({1}, 2.0 * std::log(init_prior.stddev)));
}

PosteriorHead PosteriorHead::zeros(int feature_channels) {
  PosteriorHead h(feature_channels, 0);
  for (auto& e : h.params_.entries()) e.value.fill(0.0);
  return h;
}

PosteriorHead PosteriorHead::from_parameters(int feature_channels, ParameterSet parameters) {
  PosteriorHead h = zeros(feature_channels);
  if (parameters.size() != h.params_.size()) throw MismatchError("threshold head parameter count mismatch");
  for (auto& [name, value] : h.params_.entries()) {
    const Tensor& stored = parameters.at(name);
    if (!stored.same_shape(value)) throw MismatchError("threshold head parameter " + name + " has the wrong shape");
    value = stored;
  }
  return h;
}

HeadForward PosteriorHead::forward(const Tensor& features) const {
  if (features.rank() < 3 || features.dim(0) == 0) {
    throw ValidationError("threshold head needs a non-empty unlabelled feature batch");
  }
  if (features.dim(1) != feature_channels_) {
    throw ShapeError("threshold head expects " + std::to_string(feature_channels_) + " feature channels, got " +
                     std::to_string(features.dim(1)));
  }
  const int c = feature_channels_;
  const int batch = features.dim(0);
  const std::size_t spatial = features.batch_stride() / static_cast<std::size_t>(c);
  auto tape = std::make_shared<HeadTape>();
  tape->feature_shape = features.shape();
  tape->pooled.assign(static_cast<std::size_t>(c), 0.0);
  for (int b = 0; b < batch; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double* src = features.data() + (static_cast<std::size_t>(b) * c + ch) * spatial;
      double s = 0.0;
      for (std::size_t i = 0; i < spatial; ++i) s += src[i];
      tape->pooled[static_cast<std::size_t>(ch)] += s;
    }
  const double count = static_cast<double>(batch) * static_cast<double>(spatial);
  for (double& v : tape->pooled) v /= count;

  const Tensor& w = params_.at("head.hidden.weight");
  const Tensor& bias = params_.at("head.hidden.bias");
  tape->pre.assign(static_cast<std::size_t>(c), 0.0);
  tape->act.assign(static_cast<std::size_t>(c), 0.0);
  for (int o = 0; o < c; ++o) {
    double s = bias[static_cast<std::size_t>(o)];
    for (int i = 0; i < c; ++i) s += w[static_cast<std::size_t>(o * c + i)] * tape->pooled[static_cast<std::size_t>(i)];
    tape->pre[static_cast<std::size_t>(o)] = s;
    tape->act[static_cast<std::size_t>(o)] = s > 0.0 ? s : 0.0;
  }
  double mean = 0.0;
  for (double v : tape->act) mean += v;
  mean /= c;
  double var = 0.0;
  for (double v : tape->act) var += (v - mean) * (v - mean);
  var /= c;
  tape->inv_std = 1.0 / std::sqrt(var + kNormEps);
  const Tensor& gamma = params_.at("head.norm.weight");
  const Tensor& beta = params_.at("head.norm.bias");
  tape->normed.resize(static_cast<std::size_t>(c));
  tape->out.resize(static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < static_cast<std::size_t>(c); ++i) {
    tape->normed[i] = (tape->act[i] - mean) * tape->inv_std;
    tape->out[i] = gamma[i] * tape->normed[i] + beta[i];
  }
  const Tensor& wm = params_.at("head.mean.weight");
  const Tensor& wl = params_.at("head.log_variance.weight");
  HeadForward result;
  result.posterior.mean = params_.at("head.mean.bias")[0];
  result.posterior.log_variance = params_.at("head.log_variance.bias")[0];
  for (std::size_t i = 0; i < static_cast<std::size_t>(c); ++i) {
    result.posterior.mean += wm[i] * tape->out[i];
    result.posterior.log_variance += wl[i] * tape->out[i];
  }
  result.posterior.validate();
  result.tape = std::move(tape);
  return result;
}

HeadGradients PosteriorHead::backward(const HeadForward& fwd, double d_mean, double d_log_variance) const {
  if (!fwd.tape) throw ValidationError("head forward result carries no tape");
  const HeadTape& t = *fwd.tape;
  const auto c = static_cast<std::size_t>(feature_channels_);
  HeadGradients g;
  g.parameters = params_.zeros_like();
  ParameterSet& gp = g.parameters;
  const Tensor& wm = params_.at("head.mean.weight");
  const Tensor& wl = params_.at("head.log_variance.weight");
  gp.at("head.mean.bias")[0] = d_mean;
  gp.at("head.log_variance.bias")[0] = d_log_variance;
  std::vector<double> d_out(c);
  for (std::size_t i = 0; i < c; ++i) {
    gp.at("head.mean.weight")[i] = d_mean * t.out[i];
    gp.at("head.log_variance.weight")[i] = d_log_variance * t.out[i];
    d_out[i] = d_mean * wm[i] + d_log_variance * wl[i];
  }
  const Tensor& gamma = params_.at("head.norm.weight");
  double sum_dxh = 0.0, sum_dxh_xh = 0.0;
  std::vector<double> d_xh(c);
  for (std::size_t i = 0; i < c; ++i) {
    gp.at("head.norm.weight")[i] = d_out[i] * t.normed[i];
    gp.at("head.norm.bias")[i] = d_out[i];
    d_xh[i] = d_out[i] * gamma[i];
    sum_dxh += d_xh[i];
    sum_dxh_xh += d_xh[i] * t.normed[i];
  }
  const double n = static_cast<double>(c);
  std::vector<double> d_pre(c);
  for (std::size_t i = 0; i < c; ++i) {
    const double d_act = t.inv_std * (d_xh[i] - sum_dxh / n - t.normed[i] * sum_dxh_xh / n);
    d_pre[i] = t.pre[i] > 0.0 ? d_act : 0.0;
  }
  const Tensor& w = params_.at("head.hidden.weight");
  Tensor& gw = gp.at("head.hidden.weight");
  std::vector<double> d_pooled(c, 0.0);
  for (std::size_t o = 0; o < c; ++o) {
    gp.at("head.hidden.bias")[o] = d_pre[o];
    for (std::size_t i = 0; i < c; ++i) {
      gw[o * c + i] = d_pre[o] * t.pooled[i];
      d_pooled[i] += d_pre[o] * w[o * c + i];
    }
  }
  g.features = Tensor(t.feature_shape);
  const std::size_t batch = static_cast<std::size_t>(t.feature_shape[0]);
  const std::size_t spatial = g.features.size() / (batch * c);
  const double scale = 1.0 / static_cast<double>(batch * spatial);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* dst = g.features.data() + (b * c + ch) * spatial;
      std::fill(dst, dst + spatial, d_pooled[ch] * scale);
    }
  return g;
}

ThresholdPosterior posterior_from_features(const PosteriorHead& head, const Tensor& bottleneck_features) {
  return head.forward(bottleneck_features).posterior;
}

}  // namespace segpl
