#include "vfx/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

namespace vfx {
namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

void require_same_layout(const VideoClip& a, const VideoClip& b, const char* what) {
  if (a.length != b.length || a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw DimensionError(std::string(what) + ": clips differ in shape");
  }
}

const std::array<double, kSsimWindow>& gaussian_window() {
  static const std::array<double, kSsimWindow> w = [] {
    std::array<double, kSsimWindow> g{};
    double total = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double d = i - kSsimWindow / 2;
      g[static_cast<size_t>(i)] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
      total += g[static_cast<size_t>(i)];
    }
    for (auto& v : g) v /= total;
    return g;
  }();
  return w;
}

// Valid-mode separable Gaussian filter of an H x W plane.
std::vector<double> filter_valid(const std::vector<double>& x, int h, int w) {
  const auto& g = gaussian_window();
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> rows(static_cast<size_t>(h * ow));
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < ow; ++j) {
      double acc = 0;
      for (int k = 0; k < kSsimWindow; ++k) acc += g[static_cast<size_t>(k)] * x[static_cast<size_t>(i * w + j + k)];
      rows[static_cast<size_t>(i * ow + j)] = acc;
    }
  std::vector<double> out(static_cast<size_t>(oh * ow));
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      double acc = 0;
      for (int k = 0; k < kSsimWindow; ++k) acc += g[static_cast<size_t>(k)] * rows[static_cast<size_t>((i + k) * ow + j)];
      out[static_cast<size_t>(i * ow + j)] = acc;
    }
  return out;
}

}  // namespace

double mse(const VideoClip& a, const VideoClip& b) {
  require_same_layout(a, b, "mse");
  return (a.data.cast<double>() - b.data.cast<double>()).square().mean();
}

double psnr_from_mse(double m, double max_val) {
  if (m <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / m));
}

double psnr(const VideoClip& a, const VideoClip& b, double max_val) { return psnr_from_mse(mse(a, b), max_val); }

double ssim_image(const float* a, const float* b, int channels, int height, int width) {
  if (height < kSsimWindow || width < kSsimWindow) {
    throw ContractError("ssim: image " + std::to_string(height) + "x" + std::to_string(width) +
                        " is smaller than the 11x11 window");
  }
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const size_t plane = static_cast<size_t>(height) * width;
  double total = 0;
  for (int c = 0; c < channels; ++c) {
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (size_t q = 0; q < plane; ++q) {
      x[q] = a[c * plane + q];
      y[q] = b[c * plane + q];
      xx[q] = x[q] * x[q];
      yy[q] = y[q] * y[q];
      xy[q] = x[q] * y[q];
    }
    const auto mx = filter_valid(x, height, width), my = filter_valid(y, height, width);
    const auto sxx = filter_valid(xx, height, width), syy = filter_valid(yy, height, width);
    const auto sxy = filter_valid(xy, height, width);
    double acc = 0;
    for (size_t q = 0; q < mx.size(); ++q) {
      const double vx = sxx[q] - mx[q] * mx[q], vy = syy[q] - my[q] * my[q], cov = sxy[q] - mx[q] * my[q];
      acc += ((2 * mx[q] * my[q] + c1) * (2 * cov + c2)) / ((mx[q] * mx[q] + my[q] * my[q] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / channels;
}

double ssim(const VideoClip& a, const VideoClip& b) {
  require_same_layout(a, b, "ssim");
  double total = 0;
  for (int t = 0; t < a.length; ++t) total += ssim_image(a.frame_data(t), b.frame_data(t), a.channels, a.height, a.width);
  return total / a.length;
}

MetricReport multi_rate_best(const VideoClip& generated, const VideoClip& source_native, const std::vector<int>& rates,
                             std::string method) {
  MetricReport r;
  r.method = std::move(method);
  for (int rate : rates) {
    if (rate < 1 || (generated.length - 1) * rate >= source_native.length) continue;
    const VideoClip ref = sample_sequence(source_native, generated.length, rate, 0, false, false);
    const double m = mse(generated, ref);
    r.per_rate.push_back({rate, m, psnr_from_mse(m), ssim(generated, ref)});
  }
  if (r.per_rate.empty()) {
    throw ContractError("multi_rate_best: no rate supplies " + std::to_string(generated.length) + " frames from a " +
                        std::to_string(source_native.length) + "-frame source");
  }
  r.mse = r.per_rate.front().mse;
  r.psnr = r.per_rate.front().psnr;
  r.ssim = r.per_rate.front().ssim;
  for (const auto& m : r.per_rate) {
    r.mse = std::min(r.mse, m.mse);
    r.psnr = std::max(r.psnr, m.psnr);
    r.ssim = std::max(r.ssim, m.ssim);
  }
  return r;
}

AggregateReport aggregate(const std::vector<MetricReport>& reports) {
  AggregateReport a;
  if (reports.empty()) return a;
  a.method = reports.front().method;
  a.clips = reports.size();
  for (const auto& r : reports) {
    a.mse += r.mse;
    a.psnr += r.psnr;
    a.ssim += r.ssim;
  }
  a.mse /= static_cast<double>(a.clips);
  a.psnr /= static_cast<double>(a.clips);
  a.ssim /= static_cast<double>(a.clips);
  return a;
}

VideoClip first_frame_baseline(const VideoClip& clip, int length) {
  if (length < 1) throw ContractError("first_frame_baseline: T must be >= 1");
  VideoClip out = VideoClip::blank(length, clip.height, clip.width, clip.channels);
  const Eigen::Index n = clip.frame_size();
  for (int t = 0; t < length; ++t) out.data.segment(t * n, n) = clip.data.head(n);
  out.category = clip.category;
  out.seed = clip.seed;
  return out;
}

UtilityClassifier::UtilityClassifier(ClassifierConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.classes < 2 || cfg_.conv_channels.empty()) throw ConfigError("classifier: need >= 2 classes and a conv stack");
  Rng rng(cfg_.seed);
  int in = cfg_.channels;
  for (size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
    convs_.push_back(Conv<float>::make(params_, "conv" + std::to_string(i), in, cfg_.conv_channels[i], 3, 2, rng));
    in = cfg_.conv_channels[i];
  }
  cell_ = ConvLstmCell<float>(params_, "lstm", in, cfg_.hidden, 3, rng);
  head_ = Conv<float>::make(params_, "head", cfg_.hidden, cfg_.classes, 1, 1, rng, 1.0);
}

Tensor<float> UtilityClassifier::logits(const std::vector<Tensor<float>>& frames) const {
  if (frames.empty()) throw ContractError("classifier: empty clip");
  const int n = frames.front().dim(0);
  int h = frames.front().dim(2), w = frames.front().dim(3);
  for (size_t i = 0; i < convs_.size(); ++i) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  LstmState<float> state{Tensor<float>::zeros(Shape{n, cfg_.hidden, h, w}), Tensor<float>::zeros(Shape{n, cfg_.hidden, h, w})};
  for (const auto& f : frames) {
    Tensor<float> x = f;
    for (const auto& conv : convs_) x = relu(conv(x));
    state = cell_(x, state);
  }
  return head_(global_avg_pool(state.h));
}

std::vector<double> UtilityClassifier::predict_proba(const VideoClip& clip) const {
  NoGradGuard guard;
  const Tensor<float> p = softmax(logits(clip_frames<float>(clip)), 1);
  return std::vector<double>(p.value().begin(), p.value().end());
}

int UtilityClassifier::predict(const VideoClip& clip) const {
  const auto p = predict_proba(clip);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

double UtilityClassifier::fit(const std::vector<LabeledClip>& clips) {
  if (clips.empty()) throw ContractError("classifier: no training clips");
  Adam<float> adam(params_.tensors(), AdamConfig<float>{static_cast<float>(cfg_.learning_rate)});
  Rng rng(derive_seed(cfg_.seed, 1));
  const int length = clips.front().clip.length;
  double last = 0;
  for (int it = 0; it < cfg_.iterations; ++it) {
    std::vector<std::vector<Tensor<float>>> per_frame(static_cast<size_t>(length));
    std::vector<int> labels;
    for (int b = 0; b < cfg_.batch; ++b) {
      const LabeledClip& lc = clips[uniform_index(rng, clips.size())];
      if (lc.clip.length != length) throw DimensionError("classifier: clips differ in length");
      for (int t = 0; t < length; ++t) per_frame[static_cast<size_t>(t)].push_back(frame_tensor<float>(lc.clip, t));
      labels.push_back(lc.label);
    }
    std::vector<Tensor<float>> frames;
    for (const auto& parts : per_frame) frames.push_back(concat<float>(parts, 0));
    adam.zero_grad();
    const Tensor<float> loss = softmax_cross_entropy(logits(frames), std::span<const int>(labels));
    loss.backward();
    adam.step();
    last = loss.item();
  }
  return last;
}

double UtilityClassifier::accuracy(const std::vector<LabeledClip>& clips) const {
  if (clips.empty()) return 0.0;
  int correct = 0;
  for (const auto& lc : clips) correct += predict(lc.clip) == lc.label;
  return static_cast<double>(correct) / static_cast<double>(clips.size());
}

UtilityResult data_utility(const std::vector<LabeledClip>& train, const std::vector<LabeledClip>& test,
                           ClassifierConfig cfg) {
  std::set<int> train_labels, test_labels;
  for (const auto& c : train) train_labels.insert(c.label);
  for (const auto& c : test) test_labels.insert(c.label);
  if (train_labels.size() < 2) throw ConfigError("data_utility: training clips cover a single class");
  for (int l : test_labels) {
    if (!train_labels.count(l)) throw ConfigError("data_utility: test label " + std::to_string(l) + " unseen in training");
  }
  if (!train.empty()) {
    cfg.height = train.front().clip.height;
    cfg.width = train.front().clip.width;
    cfg.channels = train.front().clip.channels;
  }
  cfg.classes = std::max(cfg.classes, *train_labels.rbegin() + 1);
  UtilityClassifier clf(cfg);
  UtilityResult r;
  r.final_train_loss = clf.fit(train);
  int correct = 0;
  for (const auto& lc : test) {
    r.predictions.push_back(clf.predict(lc.clip));
    correct += r.predictions.back() == lc.label;
  }
  r.accuracy = test.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test.size());
  return r;
}

double permuted_label_accuracy(const std::vector<int>& predictions, std::vector<int> labels, int permutations,
                               std::uint64_t seed) {
  if (predictions.size() != labels.size()) throw DimensionError("permuted_label_accuracy: size mismatch");
  if (labels.empty() || permutations < 1) throw ContractError("permuted_label_accuracy: nothing to permute");
  Rng rng(seed);
  long correct = 0;
  for (int p = 0; p < permutations; ++p) {
    for (size_t i = labels.size() - 1; i > 0; --i) std::swap(labels[i], labels[uniform_index(rng, i + 1)]);
    for (size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  }
  return static_cast<double>(correct) / (static_cast<double>(permutations) * static_cast<double>(labels.size()));
}

}  // namespace vfx
