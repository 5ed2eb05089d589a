#include "vfx/predictor.hpp"

namespace vfx {

template <typename S>
ConvLstmCell<S>::ConvLstmCell(ParameterList<S>& params, const std::string& name, int in_channels, int hidden,
                              int kernel, Rng& rng)
    : hidden_(hidden) {
  gates_ = Conv<S>::make(params, name, in_channels + hidden, 4 * hidden, kernel, 1, rng, 1.0);
  // Forget-gate bias starts at 1.
  gates_.bias.mutable_value().segment(hidden, hidden).setConstant(S(1));
}

template <typename S>
LstmState<S> ConvLstmCell<S>::operator()(const Tensor<S>& x, const LstmState<S>& state) const {
  const Tensor<S> z = gates_(concat<S>({x, state.h}, 1));
  const Tensor<S> in_gate = sigmoid(slice(z, 1, 0, hidden_));
  const Tensor<S> forget_gate = sigmoid(slice(z, 1, hidden_, hidden_));
  const Tensor<S> out_gate = sigmoid(slice(z, 1, 2 * hidden_, hidden_));
  const Tensor<S> candidate = tanh(slice(z, 1, 3 * hidden_, hidden_));
  Tensor<S> c = forget_gate * state.c + in_gate * candidate;
  Tensor<S> h = out_gate * tanh(c);
  return {std::move(h), std::move(c)};
}

template <typename S>
PredictorModel<S>::PredictorModel(PredictorConfig cfg) : cfg_(std::move(cfg)) {
  const int stages = static_cast<int>(cfg_.encoder_channels.size());
  if (stages < 1 || cfg_.decoder_channels.size() != cfg_.encoder_channels.size()) {
    throw ContractError("PredictorConfig: need matching, non-empty encoder/decoder stage lists");
  }
  if (cfg_.height % (1 << stages) || cfg_.width % (1 << stages)) {
    throw ContractError("PredictorConfig: frame size must be divisible by 2^stages");
  }
  if (cfg_.fine_count < 1 || cfg_.kappa < 0 || cfg_.embedding_dim < 1) {
    throw ContractError("PredictorConfig: fine_count, embedding_dim must be >= 1 and kappa >= 0");
  }
  Rng rng(cfg_.seed);
  int in = cfg_.channels;
  int h = cfg_.height, w = cfg_.width;
  for (int s = 0; s < stages; ++s) {
    const int out = cfg_.encoder_channels[s];
    const std::string name = "enc" + std::to_string(s);
    encoder_.push_back(Conv<S>::make(params_, name + ".conv", in, out, cfg_.stage_kernel, 2, rng));
    h /= 2;
    w /= 2;
    cells_.emplace_back(params_, name + ".lstm", out, out, cfg_.lstm_kernel, rng);
    state_shapes_.push_back(Shape{out, h, w});
    in = out;
  }
  embedding_ = params_.add_uniform("embedding", Shape{cfg_.fine_count, cfg_.embedding_dim}, 1, rng, 0.1);
  cells_.emplace_back(params_, "bottleneck.lstm", in + cfg_.embedding_dim, in, cfg_.lstm_kernel, rng);
  state_shapes_.push_back(Shape{in, h, w});
  for (int s = 0; s < stages; ++s) {
    const int out = cfg_.decoder_channels[s];
    const std::string name = "dec" + std::to_string(s);
    decoder_.push_back(Conv<S>::make(params_, name + ".conv", in, out, cfg_.stage_kernel, 1, rng));
    h *= 2;
    w *= 2;
    int skip = 0;
    if (cfg_.skip_connections) skip = s + 1 < stages ? cfg_.encoder_channels[stages - 2 - s] : cfg_.channels;
    cells_.emplace_back(params_, name + ".lstm", out + skip, out, cfg_.lstm_kernel, rng);
    state_shapes_.push_back(Shape{out, h, w});
    in = out;
  }
  if (cfg_.direct_rgb) {
    rgb_head_ = Conv<S>::make(params_, "head.rgb", in, cfg_.channels, 3, 1, rng, 0.1);
  } else {
    const int taps = (2 * cfg_.kappa + 1) * (2 * cfg_.kappa + 1);
    kernel_head_ = Conv<S>::make(params_, "head.kernel", in, taps, 3, 1, rng, 0.1);
    mask_head_ = Conv<S>::make(params_, "head.mask", in, 1, 3, 1, rng, 0.1);
  }
}

template <typename S>
RecurrentState<S> PredictorModel<S>::init_state(int batch) const {
  if (batch < 1) throw ContractError("init_state: batch must be >= 1");
  RecurrentState<S> st;
  for (const Shape& s : state_shapes_) {
    const Shape full{batch, s[0], s[1], s[2]};
    st.cells.push_back({Tensor<S>::zeros(full), Tensor<S>::zeros(full)});
  }
  return st;
}

template <typename S>
Tensor<S> PredictorModel<S>::embed(std::span<const EffectCategory> categories, int batch) const {
  if (categories.size() != 1 && static_cast<int>(categories.size()) != batch) {
    throw ContractError("step: need 1 or " + std::to_string(batch) + " categories, got " +
                        std::to_string(categories.size()));
  }
  std::vector<Tensor<S>> rows;
  for (int b = 0; b < batch; ++b) {
    const EffectCategory& cat = categories.size() == 1 ? categories[0] : categories[static_cast<size_t>(b)];
    if (cat.broad != cfg_.effect) {
      throw LookupError("category '" + std::string(effect_name(cat.broad)) + "' not handled by a '" +
                        std::string(effect_name(cfg_.effect)) + "' model");
    }
    if (cat.fine < 0 || cat.fine >= cfg_.fine_count) {
      throw LookupError("fine category " + std::to_string(cat.fine) + " outside [0, " +
                        std::to_string(cfg_.fine_count) + ")");
    }
    rows.push_back(reshape(slice(embedding_, 0, cat.fine, 1), Shape{1, cfg_.embedding_dim, 1, 1}));
  }
  return rows.size() == 1 ? rows[0] : concat<S>(rows, 0);
}

template <typename S>
StepOutput<S> PredictorModel<S>::step(const Tensor<S>& frame, std::span<const EffectCategory> categories,
                                      const RecurrentState<S>& state) const {
  if (frame.rank() != 4 || frame.dim(1) != cfg_.channels || frame.dim(2) != cfg_.height ||
      frame.dim(3) != cfg_.width) {
    throw DimensionError("step: frame " + frame.shape().str() + " does not match configured " +
                         std::to_string(cfg_.channels) + "x" + std::to_string(cfg_.height) + "x" +
                         std::to_string(cfg_.width));
  }
  if (state.cells.size() != cells_.size()) throw ContractError("step: recurrent state has wrong cell count");
  const int batch = frame.dim(0);
  const int stages = static_cast<int>(encoder_.size());
  StepOutput<S> out;
  out.state.cells.resize(cells_.size());

  std::vector<Tensor<S>> skips{frame};
  Tensor<S> x = frame;
  for (int s = 0; s < stages; ++s) {
    const Tensor<S> a = relu(encoder_[s](x));
    out.state.cells[s] = cells_[s](a, state.cells[s]);
    x = out.state.cells[s].h;
    skips.push_back(x);
  }
  const Tensor<S> emb = tile_spatial(embed(categories, batch), x.dim(2), x.dim(3));
  out.state.cells[stages] = cells_[stages](concat<S>({x, emb}, 1), state.cells[stages]);
  x = out.state.cells[stages].h;
  for (int s = 0; s < stages; ++s) {
    Tensor<S> a = relu(decoder_[s](upsample_nearest2x(x)));
    if (cfg_.skip_connections) a = concat<S>({a, skips[static_cast<size_t>(stages - 1 - s)]}, 1);
    const size_t idx = static_cast<size_t>(stages + 1 + s);
    out.state.cells[idx] = cells_[idx](a, state.cells[idx]);
    x = out.state.cells[idx].h;
  }
  if (cfg_.direct_rgb) {
    out.rgb = sigmoid(rgb_head_(x));
  } else {
    out.kernel_logits = kernel_head_(x);
    out.mask_logits = mask_head_(x);
  }
  return out;
}

template <typename S>
Tensor<S> PredictorModel<S>::advance(const Tensor<S>& frame, const StepOutput<S>& out) const {
  if (cfg_.direct_rgb) return out.rgb;
  const KernelField<S> field = kernel_field_from_logits(out.kernel_logits, cfg_.kappa);
  const BackgroundMask<S> mask(sigmoid(out.mask_logits));
  return composite(frame, apply_kernels(frame, field), mask);
}

template <typename S>
RolloutResult<S> PredictorModel<S>::rollout(const Tensor<S>& first_frame, std::span<const EffectCategory> categories,
                                            int steps, const std::vector<Tensor<S>>* teacher_frames, double tf_prob,
                                            Rng& rng) const {
  if (steps < 1) throw ContractError("rollout: T must be >= 1");
  if (tf_prob < 0.0 || tf_prob > 1.0) throw ContractError("rollout: tf_prob outside [0,1]");
  if (tf_prob > 0.0 && (!teacher_frames || static_cast<int>(teacher_frames->size()) < steps)) {
    throw ContractError("rollout: teacher forcing needs at least T ground-truth frames");
  }
  RolloutResult<S> result;
  RecurrentState<S> state = init_state(first_frame.dim(0));
  Tensor<S> prev = first_frame;
  for (int i = 1; i <= steps; ++i) {
    const bool forced = uniform01(rng) < tf_prob;
    if (forced) prev = (*teacher_frames)[static_cast<size_t>(i - 1)];
    StepOutput<S> out = step(prev, categories, state);
    state = out.state;
    Tensor<S> next;
    if (cfg_.direct_rgb) {
      next = out.rgb;
    } else {
      const KernelField<S> field = kernel_field_from_logits(out.kernel_logits, cfg_.kappa);
      const BackgroundMask<S> mask(sigmoid(out.mask_logits));
      next = composite(prev, apply_kernels(prev, field), mask);
      result.kernels.push_back(field.weights());
      result.masks.push_back(mask.values());
    }
    next = clamp(next, S(0), S(1));
    result.inputs.push_back(prev);
    result.frames.push_back(next);
    result.teacher_forced.push_back(forced);
    prev = next;
  }
  return result;
}

template class ConvLstmCell<float>;
template class ConvLstmCell<double>;
template class PredictorModel<float>;
template class PredictorModel<double>;

}  // namespace vfx
