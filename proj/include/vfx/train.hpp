#pragma once

#include "vfx/features.hpp"
#include "vfx/io.hpp"
#include "vfx/losses.hpp"
#include "vfx/optim.hpp"
#include "vfx/predictor.hpp"
#include "vfx/synth.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vfx {

/// A non-finite loss; the message lists every term of the breakdown.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-5;
  int batch = 4;
  int iterations = 50000;
  int sequence_length = 8;
  double clip_norm = 0.01;
  int tf_warmup = 10000;
  /// Discriminator input noise, annealed linearly to zero over `iterations`.
  double noise_std = 0.05;
  std::uint64_t seed = 1;
  /// Largest frame skip when sampling training sequences.
  int max_skip = 4;
  /// Random horizontal and vertical flips.
  bool augment = true;
  int validation_interval = 500;
  int validation_clips = 8;
  /// 0 writes only the initial and final checkpoints.
  int checkpoint_interval = 0;

  LossConfig loss = LossConfig::preset("MSE");
  PredictorConfig model;
  StyleNetConfig style;
  FlowConfig flow;
  DiscriminatorConfig frame_discriminator;
  DiscriminatorConfig flow_discriminator{2, {32, 64, 128, 256}, 3, 0.2, 8};

  void validate() const;
};

/// 900 / (900 + e^(itr/900)) before `warmup`, then 0.
double teacher_forcing_prob(std::int64_t itr, std::int64_t warmup = 10000);

struct StepReport {
  std::int64_t iteration = 0;
  double tf_prob = 0;
  double noise_std = 0;
  double loss = 0;
  std::vector<std::pair<std::string, double>> terms;
  double grad_norm_pre = 0;
  double grad_norm_post = 0;
  std::optional<double> frame_d_loss;
  std::optional<double> flow_d_loss;
};

/// A minibatch laid out for the predictor: frame t of every item stacked
/// along the batch axis.
struct TrainBatch {
  std::vector<Tensor<float>> frames;
  std::vector<EffectCategory> categories;
};

TrainBatch make_batch(const std::vector<VideoClip>& clips);

/// Generator, discriminators, optimizer state and iteration counter. All
/// randomness of iteration i is drawn from engines seeded by (seed, i), so
/// the counter is the whole random state.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  std::int64_t iteration() const { return iteration_; }
  PredictorModel<float>& model() { return *model_; }
  const PredictorModel<float>& model() const { return *model_; }
  Discriminator<float>* frame_discriminator() { return frame_d_.get(); }
  Discriminator<float>* flow_discriminator() { return flow_d_.get(); }
  LossModules<float> loss_modules() const;

  /// Draws the minibatch for the current iteration from clips of the model's effect.
  TrainBatch sample_batch(const std::vector<const VideoClip*>& pool) const;

  /// Rollout, loss, backward, clip, Adam; then one update per active discriminator.
  StepReport step(const TrainBatch& batch);

  Checkpoint to_checkpoint(const std::string& config_text) const;
  /// Restores parameters, optimizer moments and the counter; the
  /// architecture must match this trainer's configuration.
  void restore(const Checkpoint& ckpt);

 private:
  TrainConfig cfg_;
  std::unique_ptr<PredictorModel<float>> model_;
  std::unique_ptr<StyleFeatureNet<float>> style_net_;
  std::unique_ptr<FlowExtractor<float>> flow_;
  std::unique_ptr<Discriminator<float>> frame_d_;
  std::unique_ptr<Discriminator<float>> flow_d_;
  Adam<float> model_opt_;
  Adam<float> frame_opt_;
  Adam<float> flow_opt_;
  std::int64_t iteration_ = 0;
};

struct ValidationRow {
  std::int64_t iteration = 0;
  double mse = 0;
  double psnr = 0;
  double ssim = 0;
};

struct TrainOutputs {
  /// Empty disables all file output.
  std::filesystem::path directory;
  /// Stored in every checkpoint.
  std::string config_text;
};

struct TrainResult {
  std::vector<StepReport> steps;
  std::vector<ValidationRow> validation;
  std::filesystem::path final_checkpoint;
};

/// Runs from the trainer's current iteration to `config().iterations`.
/// Writes `train_log.csv` (appending when resuming), `validation.csv`,
/// `checkpoint_<iter>.efck` at the configured interval, and `final.efck`.
TrainResult train(Trainer& trainer, const std::vector<VideoClip>& train_clips, const std::vector<VideoClip>& val_clips,
                  const TrainOutputs& outputs = {});

/// Copies the generator weights of a trainer checkpoint into `model`.
void load_generator(PredictorModel<float>& model, const Checkpoint& ck);

/// Rollout of `steps` frames from `first` at tf 0, as a clip holding y_0..y_steps.
VideoClip animate(const PredictorModel<float>& model, const VideoClip& first, EffectCategory category, int steps);

}  // namespace vfx
