#include "vfx/losses.hpp"

#include <cmath>

namespace vfx {

template <typename S>
Tensor<S> mse_loss(const Tensor<S>& y, const Tensor<S>& target) {
  if (y.shape() != target.shape()) {
    throw DimensionError("mse_loss: shapes " + y.shape().str() + " and " + target.shape().str() + " differ");
  }
  return mean(square(y - target));
}

template <typename S>
Tensor<S> gram_distance(const std::vector<Tensor<S>>& a, const std::vector<Tensor<S>>& b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("gram_distance: layer lists differ in length");
  Tensor<S> acc;
  for (size_t l = 0; l < a.size(); ++l) {
    const S inv_batch = S(1) / static_cast<S>(a[l].dim(0));
    Tensor<S> term = affine(sum(square(gram(a[l]) - gram(b[l]))), inv_batch, S(0));
    acc = acc.defined() ? acc + term : term;
  }
  return acc;
}

template <typename S>
Tensor<S> feature_distance(const std::vector<Tensor<S>>& a, const std::vector<Tensor<S>>& b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("feature_distance: layer lists differ in length");
  Tensor<S> acc;
  for (size_t l = 0; l < a.size(); ++l) {
    Tensor<S> term = mse_loss(a[l], b[l]);
    acc = acc.defined() ? acc + term : term;
  }
  return acc;
}

template <typename S>
Tensor<S> style_loss(const StyleFeatureNet<S>& net, const Tensor<S>& y, const Tensor<S>& s) {
  return gram_distance(net.features(y), net.features(s));
}

template <typename S>
Tensor<S> content_loss(const StyleFeatureNet<S>& net, const Tensor<S>& y, const Tensor<S>& s) {
  return feature_distance(net.features(y), net.features(s));
}

template <typename S>
Tensor<S> flow_loss(const FlowExtractor<S>& flow, const Tensor<S>& y_prev, const Tensor<S>& y, const Tensor<S>& s_prev,
                    const Tensor<S>& s, FlowLossMode mode) {
  const auto generated = flow(y_prev, y).scales;
  const auto reference = flow(s_prev, s).scales;
  return mode == FlowLossMode::kGram ? gram_distance(generated, reference) : feature_distance(generated, reference);
}

template <typename S>
Discriminator<S>::Discriminator(DiscriminatorConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.channels.empty() || cfg_.in_channels < 1) throw ContractError("DiscriminatorConfig: empty conv stack");
  Rng rng(cfg_.seed);
  int in = cfg_.in_channels;
  for (size_t i = 0; i < cfg_.channels.size(); ++i) {
    stages_.push_back(
        Conv<S>::make(params_, "stage" + std::to_string(i), in, cfg_.channels[i], cfg_.kernel, 2, rng));
    in = cfg_.channels[i];
  }
  head_ = Conv<S>::make(params_, "head", in, 1, 1, 1, rng, 1.0);
}

template <typename S>
Tensor<S> Discriminator<S>::logits(const Tensor<S>& x) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
    throw DimensionError("discriminator: expected N x " + std::to_string(cfg_.in_channels) + " x H x W, got " +
                         x.shape().str());
  }
  Tensor<S> h = x;
  for (const auto& stage : stages_) h = leaky_relu(stage(h), static_cast<S>(cfg_.leak));
  return head_(global_avg_pool(h));
}

template <typename S>
Tensor<S> discriminator_bce(const Tensor<S>& p_real, const Tensor<S>& p_fake) {
  const S eps = static_cast<S>(kProbabilityEpsilon);
  const Tensor<S> real_term = mean(log_clamped(p_real, eps));
  const Tensor<S> fake_term = mean(log_clamped(affine(p_fake, S(-1), S(1)), eps));
  return affine(real_term + fake_term, S(-0.5), S(0));
}

template <typename S>
Tensor<S> generator_bce(const Tensor<S>& p_fake) {
  return affine(mean(log_clamped(p_fake, static_cast<S>(kProbabilityEpsilon))), S(-1), S(0));
}

template <typename S>
AdversarialLosses<S> adversarial_losses(const Discriminator<S>& d, const Tensor<S>& real, const Tensor<S>& fake) {
  const Tensor<S> p_fake = d(fake);
  return {discriminator_bce(d(real), p_fake), generator_bce(p_fake)};
}

LossConfig LossConfig::preset(std::string_view name) {
  LossConfig c;
  c.name = std::string(name);
  if (name == "MSE") {
    c.mse = 1.0;
  } else if (name == "MSE+GAN") {
    c.mse = 1.0;
    c.adversarial_frame = 0.1;
  } else if (name == "GAN") {
    c.adversarial_frame = 0.1;
    c.adversarial_flow = 0.1;
  } else if (name == "C+S") {
    c.content = 1.0;
    c.style = 1.0;
  } else if (name == "OF+S") {
    c.flow = 1.0;
    c.style = 1.0;
    c.flow_mode = FlowLossMode::kGram;
  } else {
    throw LookupError("unknown loss configuration '" + std::string(name) + "' (expected MSE, MSE+GAN, GAN, C+S or OF+S)");
  }
  return c;
}

void LossConfig::validate(bool require_active) const {
  const double w[] = {mse, content, style, flow, adversarial_frame, adversarial_flow};
  bool any = false;
  for (double v : w) {
    if (!(v >= 0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
    any = any || v > 0;
  }
  if (require_active && !any) throw ConfigError("loss configuration '" + name + "' has no active term");
}

template <typename S>
LossBreakdown<S> total_loss(const LossConfig& cfg, const RolloutResult<S>& rollout, const std::vector<Tensor<S>>& source,
                            const LossModules<S>& modules) {
  const size_t frames = rollout.frames.size();
  if (frames == 0) throw ContractError("total_loss: empty rollout");
  if (source.size() < frames + 1) {
    throw ContractError("total_loss: need " + std::to_string(frames + 1) + " source frames, got " +
                        std::to_string(source.size()));
  }
  if (cfg.needs_style_net() && !modules.style_net) throw ConfigError("loss '" + cfg.name + "' needs a style feature net");
  if (cfg.needs_flow() && !modules.flow) throw ConfigError("loss '" + cfg.name + "' needs a flow extractor");
  if (cfg.needs_frame_discriminator() && !modules.frame_discriminator) {
    throw ConfigError("loss '" + cfg.name + "' needs an appearance discriminator");
  }
  if (cfg.needs_flow_discriminator() && !modules.flow_discriminator) {
    throw ConfigError("loss '" + cfg.name + "' needs a flow discriminator");
  }

  const S inv_frames = S(1) / static_cast<S>(frames);
  std::vector<std::pair<std::string, Tensor<S>>> parts;
  auto accumulate = [&](const std::string& term, double weight, const Tensor<S>& value) {
    if (weight <= 0) return;
    for (auto& [name, t] : parts) {
      if (name == term) {
        t = t + value;
        return;
      }
    }
    parts.emplace_back(term, value);
  };

  for (size_t i = 1; i <= frames; ++i) {
    const Tensor<S>& y = rollout.frames[i - 1];
    const Tensor<S>& y_prev = rollout.inputs[i - 1];
    const Tensor<S>& s = source[i];
    const Tensor<S>& s_prev = source[i - 1];
    if (cfg.mse > 0) accumulate("mse", cfg.mse, mse_loss(y, s));
    if (cfg.content > 0) accumulate("content", cfg.content, content_loss(*modules.style_net, y, s));
    if (cfg.style > 0) accumulate("style", cfg.style, style_loss(*modules.style_net, y, s));
    if (cfg.flow > 0 || cfg.adversarial_flow > 0) {
      const auto generated = (*modules.flow)(y_prev, y).scales;
      if (cfg.flow > 0) {
        const auto reference = (*modules.flow)(s_prev, s).scales;
        accumulate("flow", cfg.flow,
                   cfg.flow_mode == FlowLossMode::kGram ? gram_distance(generated, reference)
                                                        : feature_distance(generated, reference));
      }
      if (cfg.adversarial_flow > 0) {
        accumulate("adv_flow", cfg.adversarial_flow, generator_bce((*modules.flow_discriminator)(generated.front())));
      }
    }
    if (cfg.adversarial_frame > 0) {
      accumulate("adv_frame", cfg.adversarial_frame, generator_bce((*modules.frame_discriminator)(y)));
    }
  }

  const std::pair<const char*, double> weights[] = {{"mse", cfg.mse},
                                                    {"content", cfg.content},
                                                    {"style", cfg.style},
                                                    {"flow", cfg.flow},
                                                    {"adv_frame", cfg.adversarial_frame},
                                                    {"adv_flow", cfg.adversarial_flow}};
  LossBreakdown<S> out;
  for (const auto& [name, weight] : weights) {
    for (const auto& [term, value] : parts) {
      if (term != name) continue;
      Tensor<S> weighted = affine(value, static_cast<S>(weight) * inv_frames, S(0));
      out.terms.emplace_back(term, static_cast<double>(weighted.item()));
      out.total = out.total.defined() ? out.total + weighted : weighted;
    }
  }
  if (!out.total.defined()) out.total = Tensor<S>::scalar(S(0));
  return out;
}

#define VFX_INSTANTIATE_LOSSES(S)                                                                                  \
  template Tensor<S> mse_loss(const Tensor<S>&, const Tensor<S>&);                                                 \
  template Tensor<S> gram_distance(const std::vector<Tensor<S>>&, const std::vector<Tensor<S>>&);                  \
  template Tensor<S> feature_distance(const std::vector<Tensor<S>>&, const std::vector<Tensor<S>>&);               \
  template Tensor<S> style_loss(const StyleFeatureNet<S>&, const Tensor<S>&, const Tensor<S>&);                    \
  template Tensor<S> content_loss(const StyleFeatureNet<S>&, const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> flow_loss(const FlowExtractor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,      \
                               const Tensor<S>&, FlowLossMode);                                                    \
  template class Discriminator<S>;                                                                                 \
  template Tensor<S> discriminator_bce(const Tensor<S>&, const Tensor<S>&);                                        \
  template Tensor<S> generator_bce(const Tensor<S>&);                                                              \
  template AdversarialLosses<S> adversarial_losses(const Discriminator<S>&, const Tensor<S>&, const Tensor<S>&);   \
  template LossBreakdown<S> total_loss(const LossConfig&, const RolloutResult<S>&, const std::vector<Tensor<S>>&, \
                                       const LossModules<S>&);

VFX_INSTANTIATE_LOSSES(float)
VFX_INSTANTIATE_LOSSES(double)

}  // namespace vfx
