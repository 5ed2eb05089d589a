#include "vfx/train.hpp"

#include "vfx/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace vfx {
namespace {

constexpr std::uint64_t kRolloutStream = 0;
constexpr std::uint64_t kNoiseStream = 1;
constexpr std::uint64_t kItemStreamBase = 16;

void positive(double v, const char* name) {
  if (!(v > 0) || !std::isfinite(v)) throw ConfigError(std::string("train.") + name + " must be positive");
}

Tensor<float> with_noise(const Tensor<float>& x, double sigma, Rng& rng) {
  if (sigma <= 0) return x;
  Buffer<float> v = x.value();
  for (auto& e : v) e += static_cast<float>(sigma * normal(rng));
  return Tensor<float>(x.shape(), std::move(v));
}

void save_params(Checkpoint& ck, const std::string& prefix, const ParameterList<float>& params, const Adam<float>& opt) {
  const auto& named = params.named();
  for (size_t i = 0; i < named.size(); ++i) {
    const auto& [name, t] = named[i];
    ck.tensors.push_back(StoredTensor::f32(prefix + "/" + name, t.shape(), t.value()));
    ck.tensors.push_back(StoredTensor::f32(prefix + ".adam/" + name + ".m", t.shape(), opt.moments()[i].first));
    ck.tensors.push_back(StoredTensor::f32(prefix + ".adam/" + name + ".v", t.shape(), opt.moments()[i].second));
  }
  ck.tensors.push_back(StoredTensor::u64(prefix + ".adam/step", static_cast<std::uint64_t>(opt.steps_taken())));
}

Buffer<float> load_matching(const Checkpoint& ck, const std::string& name, const Tensor<float>& like) {
  const StoredTensor& st = ck.at(name);
  std::vector<std::uint32_t> dims;
  for (int i = 0; i < like.rank(); ++i) dims.push_back(static_cast<std::uint32_t>(like.dim(i)));
  if (st.dims != dims) throw FormatError("checkpoint tensor '" + name + "' has shape incompatible with " + like.shape().str());
  return st.as_f32();
}

void load_params(const Checkpoint& ck, const std::string& prefix, ParameterList<float>& params, Adam<float>& opt) {
  const auto& named = params.named();
  for (size_t i = 0; i < named.size(); ++i) {
    auto [name, t] = named[i];
    t.mutable_value() = load_matching(ck, prefix + "/" + name, t);
    opt.moments()[i].first = load_matching(ck, prefix + ".adam/" + name + ".m", t);
    opt.moments()[i].second = load_matching(ck, prefix + ".adam/" + name + ".v", t);
  }
  opt.set_steps_taken(static_cast<std::int64_t>(ck.at(prefix + ".adam/step").as_u64()));
}

std::string describe_terms(const StepReport& r) {
  std::ostringstream s;
  s << "non-finite loss at iteration " << r.iteration << " (total " << r.loss << "):";
  for (const auto& [name, v] : r.terms) s << ' ' << name << '=' << v;
  return s.str();
}

}  // namespace

void TrainConfig::validate() const {
  positive(learning_rate, "learning_rate");
  positive(batch, "batch");
  positive(clip_norm, "clip_norm");
  positive(max_skip, "max_skip");
  if (iterations < 0) throw ConfigError("train.iterations must be >= 0");
  if (sequence_length < 2) throw ConfigError("train.sequence_length must be >= 2");
  if (tf_warmup < 0 || validation_interval < 0 || checkpoint_interval < 0 || validation_clips < 0) {
    throw ConfigError("train: intervals and counts must be >= 0");
  }
  if (!(noise_std >= 0)) throw ConfigError("train.noise_std must be >= 0");
  if (validation_interval > 0 && (model.height < 11 || model.width < 11)) {
    throw ConfigError("train: validation needs frames of at least 11x11");
  }
  loss.validate(false);
}

double teacher_forcing_prob(std::int64_t itr, std::int64_t warmup) {
  if (itr < 0) throw ContractError("teacher_forcing_prob: iteration must be >= 0");
  if (itr >= warmup) return 0.0;
  return 900.0 / (900.0 + std::exp(static_cast<double>(itr) / 900.0));
}

TrainBatch make_batch(const std::vector<VideoClip>& clips) {
  if (clips.empty()) throw ContractError("make_batch: empty batch");
  const int length = clips.front().length;
  TrainBatch b;
  for (int t = 0; t < length; ++t) {
    std::vector<Tensor<float>> parts;
    for (const auto& c : clips) {
      if (c.length != length) throw DimensionError("make_batch: clips differ in length");
      parts.push_back(frame_tensor<float>(c, t));
    }
    b.frames.push_back(concat<float>(parts, 0));
  }
  for (const auto& c : clips) b.categories.push_back(c.category);
  return b;
}

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  model_ = std::make_unique<PredictorModel<float>>(cfg_.model);
  model_opt_ = Adam<float>(model_->parameters().tensors(), AdamConfig<float>{static_cast<float>(cfg_.learning_rate)});
  const LossConfig& loss = cfg_.loss;
  if (loss.needs_style_net()) {
    StyleNetConfig sc = cfg_.style;
    sc.in_channels = cfg_.model.channels;
    style_net_ = std::make_unique<StyleFeatureNet<float>>(sc);
  }
  if (loss.needs_flow()) flow_ = std::make_unique<FlowExtractor<float>>(cfg_.flow);
  if (loss.needs_frame_discriminator()) {
    DiscriminatorConfig dc = cfg_.frame_discriminator;
    dc.in_channels = cfg_.model.channels;
    frame_d_ = std::make_unique<Discriminator<float>>(dc);
    frame_opt_ = Adam<float>(frame_d_->parameters().tensors(), AdamConfig<float>{static_cast<float>(cfg_.learning_rate)});
  }
  if (loss.needs_flow_discriminator()) {
    DiscriminatorConfig dc = cfg_.flow_discriminator;
    dc.in_channels = 2;
    flow_d_ = std::make_unique<Discriminator<float>>(dc);
    flow_opt_ = Adam<float>(flow_d_->parameters().tensors(), AdamConfig<float>{static_cast<float>(cfg_.learning_rate)});
  }
}

LossModules<float> Trainer::loss_modules() const {
  return {style_net_.get(), flow_.get(), frame_d_.get(), flow_d_.get()};
}

TrainBatch Trainer::sample_batch(const std::vector<const VideoClip*>& pool) const {
  if (pool.empty()) throw ContractError("sample_batch: no clips to sample from");
  const std::uint64_t iter_seed = derive_seed(cfg_.seed, static_cast<std::uint64_t>(iteration_));
  const int length = cfg_.sequence_length;
  std::vector<VideoClip> items;
  for (int b = 0; b < cfg_.batch; ++b) {
    Rng rng(derive_seed(iter_seed, kItemStreamBase + static_cast<std::uint64_t>(b)));
    const VideoClip& clip = *pool[uniform_index(rng, pool.size())];
    if (cfg_.augment) {
      items.push_back(random_sequence(clip, length, cfg_.max_skip, rng));
    } else {
      const int cap = std::min(cfg_.max_skip, (clip.length - 1) / (length - 1));
      if (cap < 1) {
        throw ContractError("sample_batch: clip of " + std::to_string(clip.length) + " frames cannot supply " +
                            std::to_string(length));
      }
      const int skip = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cap)));
      const int start = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(clip.length - (length - 1) * skip)));
      items.push_back(sample_sequence(clip, length, skip, start, false, false));
    }
    items.back().category = clip.category;
  }
  return make_batch(items);
}

StepReport Trainer::step(const TrainBatch& batch) {
  if (static_cast<int>(batch.frames.size()) != cfg_.sequence_length) {
    throw ContractError("train_step: batch has " + std::to_string(batch.frames.size()) + " frames, expected T = " +
                        std::to_string(cfg_.sequence_length));
  }
  const std::uint64_t iter_seed = derive_seed(cfg_.seed, static_cast<std::uint64_t>(iteration_));
  StepReport r;
  r.iteration = iteration_;
  r.tf_prob = teacher_forcing_prob(iteration_, cfg_.tf_warmup);
  r.noise_std = cfg_.iterations > 0
                    ? cfg_.noise_std * std::max(0.0, 1.0 - static_cast<double>(iteration_) / cfg_.iterations)
                    : 0.0;

  Rng rollout_rng(derive_seed(iter_seed, kRolloutStream));
  const int steps = cfg_.sequence_length - 1;
  RolloutResult<float> roll = model_->rollout(batch.frames.front(), batch.categories, steps, &batch.frames, r.tf_prob,
                                              rollout_rng);
  LossBreakdown<float> loss = total_loss(cfg_.loss, roll, batch.frames, loss_modules());
  r.loss = loss.total.item();
  r.terms = loss.terms;
  if (!std::isfinite(r.loss)) throw DivergenceError(describe_terms(r));

  auto& params = model_opt_.params();
  model_opt_.zero_grad();
  loss.total.backward();
  r.grad_norm_pre = global_grad_norm<float>(params);
  if (!std::isfinite(r.grad_norm_pre)) throw DivergenceError(describe_terms(r) + " (non-finite gradient)");
  clip_global_norm<float>(params, static_cast<float>(cfg_.clip_norm));
  r.grad_norm_post = global_grad_norm<float>(params);
  model_opt_.step();

  Rng noise_rng(derive_seed(iter_seed, kNoiseStream));
  if (frame_d_ || flow_d_) {
    std::vector<Tensor<float>> real_next(batch.frames.begin() + 1, batch.frames.end());
    std::vector<Tensor<float>> fake_next, fake_prev, real_prev(batch.frames.begin(), batch.frames.end() - 1);
    for (const auto& f : roll.frames) fake_next.push_back(f.detach());
    for (const auto& f : roll.inputs) fake_prev.push_back(f.detach());
    const Tensor<float> real = concat<float>(real_next, 0), fake = concat<float>(fake_next, 0);
    if (frame_d_) {
      frame_opt_.zero_grad();
      const auto d = discriminator_bce((*frame_d_)(with_noise(real, r.noise_std, noise_rng)),
                                       (*frame_d_)(with_noise(fake, r.noise_std, noise_rng)));
      d.backward();
      frame_opt_.step();
      r.frame_d_loss = d.item();
    }
    if (flow_d_) {
      Tensor<float> real_flow, fake_flow;
      {
        NoGradGuard guard;
        real_flow = (*flow_)(concat<float>(real_prev, 0), real).flow();
        fake_flow = (*flow_)(concat<float>(fake_prev, 0), fake).flow();
      }
      flow_opt_.zero_grad();
      const auto d = discriminator_bce((*flow_d_)(with_noise(real_flow, r.noise_std, noise_rng)),
                                       (*flow_d_)(with_noise(fake_flow, r.noise_std, noise_rng)));
      d.backward();
      flow_opt_.step();
      r.flow_d_loss = d.item();
    }
  }
  ++iteration_;
  return r;
}

Checkpoint Trainer::to_checkpoint(const std::string& config_text) const {
  Checkpoint ck;
  ck.config_text = config_text;
  ck.tensors.push_back(StoredTensor::u64("trainer/iteration", static_cast<std::uint64_t>(iteration_)));
  ck.tensors.push_back(StoredTensor::u64("trainer/seed", cfg_.seed));
  save_params(ck, "generator", model_->parameters(), model_opt_);
  if (frame_d_) save_params(ck, "frame_discriminator", frame_d_->parameters(), frame_opt_);
  if (flow_d_) save_params(ck, "flow_discriminator", flow_d_->parameters(), flow_opt_);
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (ck.at("trainer/seed").as_u64() != cfg_.seed) throw FormatError("checkpoint seed differs from the configured seed");
  load_params(ck, "generator", model_->parameters(), model_opt_);
  if (frame_d_) load_params(ck, "frame_discriminator", frame_d_->parameters(), frame_opt_);
  if (flow_d_) load_params(ck, "flow_discriminator", flow_d_->parameters(), flow_opt_);
  iteration_ = static_cast<std::int64_t>(ck.at("trainer/iteration").as_u64());
}

void load_generator(PredictorModel<float>& model, const Checkpoint& ck) {
  for (auto [name, t] : model.parameters().named()) t.mutable_value() = load_matching(ck, "generator/" + name, t);
}

VideoClip animate(const PredictorModel<float>& model, const VideoClip& first, EffectCategory category, int steps) {
  NoGradGuard guard;
  Rng rng(0);
  const std::vector<EffectCategory> cats{category};
  const RolloutResult<float> roll = model.rollout(frame_tensor<float>(first, 0), cats, steps, nullptr, 0.0, rng);
  std::vector<Tensor<float>> frames{frame_tensor<float>(first, 0)};
  frames.insert(frames.end(), roll.frames.begin(), roll.frames.end());
  VideoClip clip = clip_from_frames(frames);
  clip.category = category;
  return clip;
}

TrainResult train(Trainer& trainer, const std::vector<VideoClip>& train_clips, const std::vector<VideoClip>& val_clips,
                  const TrainOutputs& outputs) {
  const TrainConfig& cfg = trainer.config();
  const PredictorConfig& mc = cfg.model;
  auto pool_of = [&](const std::vector<VideoClip>& clips, size_t limit) {
    std::vector<const VideoClip*> pool;
    for (const auto& c : clips) {
      if (c.category.broad != mc.effect) continue;
      if (c.height != mc.height || c.width != mc.width || c.channels != mc.channels) {
        throw DimensionError("train: clip is " + std::to_string(c.height) + "x" + std::to_string(c.width) + "x" +
                             std::to_string(c.channels) + ", model expects " + std::to_string(mc.height) + "x" +
                             std::to_string(mc.width) + "x" + std::to_string(mc.channels));
      }
      if (pool.size() < limit) pool.push_back(&c);
    }
    return pool;
  };
  const auto pool = pool_of(train_clips, train_clips.size());
  if (pool.empty() && trainer.iteration() < cfg.iterations) {
    throw ContractError("train: no training clips for effect '" + std::string(effect_name(mc.effect)) + "'");
  }
  const auto val_pool = pool_of(val_clips, static_cast<size_t>(cfg.validation_clips));

  const bool to_disk = !outputs.directory.empty();
  std::ofstream log, val_log;
  auto open_csv = [&](std::ofstream& f, const std::string& file, const char* header) {
    const auto path = outputs.directory / file;
    const bool fresh = trainer.iteration() == 0 || !std::filesystem::exists(path);
    f.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    if (fresh) f << header << '\n';
  };
  if (to_disk) {
    std::error_code ec;
    std::filesystem::create_directories(outputs.directory, ec);
    if (ec) throw IoError("cannot create '" + outputs.directory.string() + "': " + ec.message());
    open_csv(log, "train_log.csv", "iter,term,value,grad_norm_pre,grad_norm_post,tf_prob");
    if (cfg.validation_interval > 0 && !val_pool.empty()) open_csv(val_log, "validation.csv", "iter,mse,psnr,ssim");
  }
  auto checkpoint = [&](const std::string& file) {
    const auto path = outputs.directory / file;
    save_checkpoint(path, trainer.to_checkpoint(outputs.config_text));
    return path;
  };

  TrainResult result;
  while (trainer.iteration() < cfg.iterations) {
    const StepReport r = trainer.step(trainer.sample_batch(pool));
    if (to_disk) {
      log << r.iteration << ",total," << r.loss << ',' << r.grad_norm_pre << ',' << r.grad_norm_post << ',' << r.tf_prob
          << '\n';
    }
    result.steps.push_back(r);
    const std::int64_t done = trainer.iteration();
    if (cfg.validation_interval > 0 && !val_pool.empty() && done % cfg.validation_interval == 0) {
      std::vector<MetricReport> reports;
      for (const VideoClip* c : val_pool) {
        const VideoClip gen = animate(trainer.model(), *c, c->category, cfg.sequence_length - 1);
        reports.push_back(multi_rate_best(gen, *c, kDefaultRates));
      }
      const AggregateReport a = aggregate(reports);
      result.validation.push_back({done, a.mse, a.psnr, a.ssim});
      if (to_disk) val_log << done << ',' << a.mse << ',' << a.psnr << ',' << a.ssim << '\n' << std::flush;
    }
    if (to_disk && cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done < cfg.iterations) {
      checkpoint("checkpoint_" + std::to_string(done) + ".efck");
    }
  }
  if (to_disk) {
    log.flush();
    result.final_checkpoint = checkpoint("final.efck");
  }
  return result;
}

}  // namespace vfx
