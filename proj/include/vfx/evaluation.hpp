#pragma once

#include "vfx/optim.hpp"
#include "vfx/predictor.hpp"
#include "vfx/synth.hpp"

#include <string>
#include <vector>

namespace vfx {

inline constexpr double kPsnrCap = 100.0;

double mse(const VideoClip& a, const VideoClip& b);
/// 10 log10(max^2 / mse), capped at 100 dB.
double psnr_from_mse(double mse, double max_val = 1.0);
double psnr(const VideoClip& a, const VideoClip& b, double max_val = 1.0);

/// SSIM of one C x H x W image pair: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 1, valid positions only, channel mean.
double ssim_image(const float* a, const float* b, int channels, int height, int width);
/// Mean per-frame SSIM.
double ssim(const VideoClip& a, const VideoClip& b);

struct RateMetrics {
  int rate = 1;
  double mse = 0;
  double psnr = 0;
  double ssim = 0;
};

struct MetricReport {
  std::string method;
  std::vector<RateMetrics> per_rate;
  double mse = 0;   // minimum over rates
  double psnr = 0;  // maximum over rates
  double ssim = 0;  // maximum over rates
};

inline const std::vector<int> kDefaultRates{1, 2, 3, 4};

/// Compares `generated` against the source resampled from its first frame at
/// every rate that supplies enough frames.
MetricReport multi_rate_best(const VideoClip& generated, const VideoClip& source_native, const std::vector<int>& rates,
                             std::string method = "");

struct AggregateReport {
  std::string method;
  size_t clips = 0;
  double mse = 0;
  double psnr = 0;
  double ssim = 0;
};

AggregateReport aggregate(const std::vector<MetricReport>& reports);

/// `length` copies of frame 0 of `clip`.
VideoClip first_frame_baseline(const VideoClip& clip, int length);

struct ClassifierConfig {
  int classes = 4;
  int height = 32;
  int width = 32;
  int channels = 3;
  std::vector<int> conv_channels{8, 16};
  int hidden = 16;
  int iterations = 2000;
  int batch = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 3;
};

/// Two strided convs per frame, a conv-LSTM across frames, and a pooled
/// linear head over the final hidden state.
class UtilityClassifier {
 public:
  explicit UtilityClassifier(ClassifierConfig cfg);

  const ClassifierConfig& config() const { return cfg_; }
  ParameterList<float>& parameters() { return params_; }

  /// N x classes x 1 x 1 logits for a batch of clips given frame by frame.
  Tensor<float> logits(const std::vector<Tensor<float>>& frames) const;
  /// Class probabilities for one clip.
  std::vector<double> predict_proba(const VideoClip& clip) const;
  int predict(const VideoClip& clip) const;

  /// Minibatch Adam on cross-entropy; returns the final minibatch loss.
  double fit(const std::vector<LabeledClip>& clips);
  double accuracy(const std::vector<LabeledClip>& clips) const;

 private:
  ClassifierConfig cfg_;
  ParameterList<float> params_;
  std::vector<Conv<float>> convs_;
  ConvLstmCell<float> cell_;
  Conv<float> head_;
};

struct UtilityResult {
  double accuracy = 0;
  double final_train_loss = 0;
  std::vector<int> predictions;  ///< one per test clip
};

/// Trains a classifier on `train` and reports top-1 accuracy on `test`.
UtilityResult data_utility(const std::vector<LabeledClip>& train, const std::vector<LabeledClip>& test,
                           ClassifierConfig cfg);

/// Mean accuracy of fixed `predictions` against `permutations` random shuffles of `labels`.
double permuted_label_accuracy(const std::vector<int>& predictions, std::vector<int> labels, int permutations,
                               std::uint64_t seed);

}  // namespace vfx
