// Acceptance suite: one PASS/FAIL line per criterion.

#include "cli.hpp"
#include "gradcheck.hpp"
#include "vfx/config.hpp"
#include "vfx/evaluation.hpp"
#include "vfx/io.hpp"
#include "vfx/losses.hpp"
#include "vfx/pixel_transformer.hpp"
#include "vfx/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace vfx;
namespace fs = std::filesystem;
using T = Tensor<double>;
using testing::gradcheck;
using testing::project;
using testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

template <typename... Args>
std::string str(const Args&... args) {
  std::ostringstream os;
  os.precision(4);
  (os << ... << args);
  return os.str();
}

int mirror(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - i - 1;
  return i;
}

Tensor<float> random_float(Shape shape, Rng& rng, double lo, double hi) {
  Buffer<float> b(shape.numel());
  for (auto& v : b) v = static_cast<float>(lo + (hi - lo) * uniform01(rng));
  return Tensor<float>(std::move(shape), std::move(b));
}

/// Small architecture used for every desk-scale training run.
TrainConfig desk_config(int size, const char* preset) {
  TrainConfig cfg;
  cfg.model.height = cfg.model.width = size;
  cfg.model.encoder_channels = {16, 32, 64};
  cfg.model.decoder_channels = {32, 16, 16};
  cfg.model.stage_kernel = 3;
  cfg.style.channels = {16, 32, 64};
  cfg.loss = LossConfig::preset(preset);
  cfg.validation_interval = 0;
  return cfg;
}

/// Largest amount by which `out` leaves the [min, max] range of the
/// (2*kappa+1)^2 window of `in` around each pixel, over all channels.
double hull_violation(const float* in, const float* out, int channels, int h, int w, int kappa) {
  double worst = -1e9;
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double lo = 1e9, hi = -1e9;
        for (int k = -kappa; k <= kappa; ++k)
          for (int l = -kappa; l <= kappa; ++l) {
            const double v = in[(c * h + mirror(i - k, h)) * w + mirror(j - l, w)];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
        const double y = out[(c * h + i) * w + j];
        worst = std::max({worst, lo - y, y - hi});
      }
  return worst;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  Stopwatch sw;
  testing::Rng rng(11);
  double worst = 0;
  std::string worst_name;
  std::vector<std::string> failed;
  int checks = 0;
  auto record = [&](const std::string& name, const testing::GradCheckResult& res, double tol) {
    ++checks;
    if (res.max_relative_error > worst) {
      worst = res.max_relative_error;
      worst_name = name;
    }
    if (!(res.max_relative_error < tol) || !(res.analytic_norm > 0)) failed.push_back(name);
  };
  auto check = [&](const std::string& name, auto fn, std::vector<T> inputs) {
    record(name, gradcheck([&](std::vector<T>& in) { return project(fn(in)); }, std::move(inputs)), 1e-4);
  };

  const Shape s{2, 3, 4, 4};
  check("add", [](auto& in) { return add(in[0], in[1]); }, {random_tensor(s, rng), random_tensor(Shape{2, 3, 1, 1}, rng)});
  check("sub", [](auto& in) { return sub(in[0], in[1]); }, {random_tensor(s, rng), random_tensor(Shape{1}, rng)});
  check("mul", [](auto& in) { return mul(in[0], in[1]); }, {random_tensor(s, rng), random_tensor(s, rng)});
  check("div", [](auto& in) { return div(in[0], in[1]); }, {random_tensor(s, rng), random_tensor(s, rng, 0.5, 2.0)});
  check("affine", [](auto& in) { return affine(in[0], 0.3, -1.0); }, {random_tensor(s, rng)});
  check("relu", [](auto& in) { return relu(in[0]); }, {random_tensor(s, rng)});
  check("leaky_relu", [](auto& in) { return leaky_relu(in[0], 0.2); }, {random_tensor(s, rng)});
  check("sigmoid", [](auto& in) { return sigmoid(in[0]); }, {random_tensor(s, rng, -4, 4)});
  check("tanh", [](auto& in) { return tanh(in[0]); }, {random_tensor(s, rng, -3, 3)});
  check("square", [](auto& in) { return square(in[0]); }, {random_tensor(s, rng)});
  check("log_clamped", [](auto& in) { return log_clamped(in[0], 1e-7); }, {random_tensor(s, rng, 0.1, 2)});
  check("clamp", [](auto& in) { return clamp(in[0], -0.5, 0.5); }, {random_tensor(s, rng)});
  check("sum", [](auto& in) { return sum(in[0]); }, {random_tensor(s, rng)});
  check("mean", [](auto& in) { return mean(in[0]); }, {random_tensor(s, rng)});
  check("reshape", [](auto& in) { return reshape(in[0], Shape{6, 16}); }, {random_tensor(s, rng)});
  check("conv2d", [](auto& in) { return conv2d(in[0], in[1], in[2], 1, PadMode::kSymmetric); },
        {random_tensor(Shape{2, 2, 6, 6}, rng), random_tensor(Shape{3, 2, 3, 3}, rng), random_tensor(Shape{3}, rng)});
  check("conv2d-stride2", [](auto& in) { return conv2d(in[0], in[1], in[2], 2, PadMode::kZero); },
        {random_tensor(Shape{1, 2, 8, 8}, rng), random_tensor(Shape{2, 2, 5, 5}, rng), random_tensor(Shape{2}, rng)});
  check("upsample", [](auto& in) { return upsample_nearest2x(in[0]); }, {random_tensor(s, rng)});
  check("avg_pool", [](auto& in) { return avg_pool2x2(in[0]); }, {random_tensor(s, rng)});
  check("global_avg_pool", [](auto& in) { return global_avg_pool(in[0]); }, {random_tensor(s, rng)});
  check("tile", [](auto& in) { return tile_spatial(in[0], 3, 2); }, {random_tensor(Shape{2, 3, 1, 1}, rng)});
  check("concat", [](auto& in) { return concat<double>({in[0], in[1]}, 1); },
        {random_tensor(s, rng), random_tensor(Shape{2, 1, 4, 4}, rng)});
  check("slice", [](auto& in) { return slice(in[0], 1, 1, 2); }, {random_tensor(s, rng)});
  check("softmax", [](auto& in) { return softmax(in[0], 1); }, {random_tensor(s, rng, -2, 2)});
  check("gram", [](auto& in) { return gram(in[0]); }, {random_tensor(s, rng)});
  check("warp_bilinear", [](auto& in) { return warp_bilinear(in[0], in[1]); },
        {random_tensor(Shape{1, 2, 6, 6}, rng, 0, 1), random_tensor(Shape{1, 2, 6, 6}, rng, -1.3, 1.3)});
  const std::vector<int> labels{2, 0};
  check("cross_entropy", [&](auto& in) { return softmax_cross_entropy(in[0], std::span<const int>(labels)); },
        {random_tensor(Shape{2, 3, 1, 1}, rng)});
  check("pixel_transformer", [](auto& in) {
    return composite(in[0], apply_kernels(in[0], kernel_field_from_logits(in[1], 2)), BackgroundMask<double>(sigmoid(in[2])));
  }, {random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1), random_tensor(Shape{1, 25, 8, 8}, rng, -2, 2),
      random_tensor(Shape{1, 1, 8, 8}, rng, -2, 2)});

  StyleNetConfig sc;
  sc.channels = {4, 6, 6};
  const StyleFeatureNet<double> net(sc);
  const FlowExtractor<double> flow;
  DiscriminatorConfig dc;
  dc.channels = {4, 4, 6, 6};
  const Discriminator<double> frame_d(dc);
  dc.in_channels = 2;
  const Discriminator<double> flow_d(dc);
  const T s0 = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1).detach();
  const T s1 = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1).detach();
  const T real_flow = flow(s0, s1).flow().detach();
  auto frames = [&] {
    return std::vector<T>{random_tensor(Shape{1, 3, 8, 8}, rng, 0.1, 0.9), random_tensor(Shape{1, 3, 8, 8}, rng, 0.1, 0.9)};
  };
  check("style_features", [&](auto& in) {
    auto f = net.features(in[0]);
    return project(f[0], 1) + project(f[1], 2) + project(f[2], 3);
  }, {random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1)});
  check("flow_features", [&](auto& in) {
    auto p = flow(in[0], in[1]);
    return project(p.scales[0], 1) + project(p.scales[1], 2) + project(p.scales[2], 3);
  }, frames());
  check("loss:mse", [&](auto& in) { return mse_loss(in[1], s1); }, frames());
  check("loss:content", [&](auto& in) { return content_loss(net, in[1], s1); }, frames());
  check("loss:style", [&](auto& in) { return style_loss(net, in[1], s1); }, frames());
  check("loss:flow-direct", [&](auto& in) { return flow_loss(flow, in[0], in[1], s0, s1, FlowLossMode::kDirect); }, frames());
  check("loss:flow-gram", [&](auto& in) { return flow_loss(flow, in[0], in[1], s0, s1, FlowLossMode::kGram); }, frames());
  check("loss:adversarial-frame", [&](auto& in) { return adversarial_losses(frame_d, s1, in[1]).g_loss; }, frames());
  check("loss:adversarial-flow",
        [&](auto& in) { return adversarial_losses(flow_d, real_flow, flow(in[0], in[1]).flow()).g_loss; }, frames());

  // Every generator parameter through a T=3 rollout.
  PredictorConfig pc;
  pc.height = pc.width = 8;
  pc.channels = 2;
  pc.encoder_channels = {3, 4, 4};
  pc.decoder_channels = {4, 3, 3};
  pc.stage_kernel = 3;
  pc.embedding_dim = 2;
  pc.fine_count = 2;
  pc.seed = 5;
  PredictorModel<double> model(pc);
  const T x = random_tensor(Shape{1, 2, 8, 8}, rng, 0, 1).detach();
  const EffectCategory cat{Effect::kMelt, 1};
  auto rollout_loss = [&] {
    Rng r(1);
    auto roll = model.rollout(x, std::span(&cat, 1), 3, nullptr, 0.0, r);
    T acc = project(roll.frames[0], 11);
    for (size_t i = 1; i < roll.frames.size(); ++i) acc = acc + project(roll.frames[i], 11 + i);
    return acc;
  };
  model.parameters().zero_grad();
  rollout_loss().backward();
  double rollout_worst = 0;
  for (auto& [name, p] : model.parameters().named()) {
    T param = p;
    const Buffer<double> analytic = param.has_grad() ? param.grad() : Buffer<double>::Zero(param.numel());
    NoGradGuard guard;
    // ReLU kinks favour small steps, tiny gradients favour large ones; keep the better estimate.
    double err = 1e9;
    for (double h : {1e-3, 1e-5, 1e-7}) {
      Buffer<double> numeric(param.numel());
      for (Eigen::Index i = 0; i < param.numel(); ++i) {
        const double orig = param.mutable_value()[i];
        param.mutable_value()[i] = orig + h;
        const double fp = rollout_loss().item();
        param.mutable_value()[i] = orig - h;
        const double fm = rollout_loss().item();
        param.mutable_value()[i] = orig;
        numeric[i] = (fp - fm) / (2 * h);
      }
      const double denom = std::max({analytic.matrix().norm(), numeric.matrix().norm(), 1e-10});
      err = std::min(err, (analytic - numeric).matrix().norm() / denom);
    }
    rollout_worst = std::max(rollout_worst, err);
    if (!(err < 1e-3)) failed.push_back("rollout:" + name);
  }

  const double secs = sw.seconds();
  std::string detail = str(checks, " op/loss checks, worst rel err ", worst, " (", worst_name, "); rollout over ",
                           model.parameters().named().size(), " parameters, worst ", rollout_worst, "; ", secs, " s");
  for (const auto& f : failed) detail += "; failed " + f;
  if (secs >= 120) detail += "; over the 2 min budget";
  return {failed.empty() && secs < 120, detail};
}

// ---------------------------------------------------------------------------

struct ProvenanceRun {
  double worst = -1e9;
  long violations = 0;
};

/// Rolls a model out on each clip and measures how far outputs leave the
/// window range of the frame they were computed from.
ProvenanceRun rollout_provenance(const PredictorModel<float>& model, const std::vector<VideoClip>& clips, int steps) {
  ProvenanceRun out;
  const int kappa = model.config().kappa;
  for (const auto& clip : clips) {
    NoGradGuard guard;
    Rng rng(0);
    const std::vector<EffectCategory> cats{clip.category};
    const auto roll = model.rollout(frame_tensor<float>(clip, 0), cats, steps, nullptr, 0.0, rng);
    for (size_t i = 0; i < roll.frames.size(); ++i) {
      const auto& in = roll.inputs[i];
      const auto& y = roll.frames[i];
      const int c = in.dim(1), h = in.dim(2), w = in.dim(3);
      const float* a = in.value().data();
      const float* b = y.value().data();
      for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < h * w; ++p) {
          const int r = p / w, q = p % w;
          double lo = 1e9, hi = -1e9;
          for (int k = -kappa; k <= kappa; ++k)
            for (int l = -kappa; l <= kappa; ++l) {
              const double v = a[(ch * h + mirror(r - k, h)) * w + mirror(q - l, w)];
              lo = std::min(lo, v);
              hi = std::max(hi, v);
            }
          const double d = std::max(lo - b[ch * h * w + p], b[ch * h * w + p] - hi);
          out.worst = std::max(out.worst, d);
          out.violations += d > 1e-6;
        }
    }
  }
  return out;
}

Outcome pixel_provenance() {
  Rng rng(2024);
  double worst = -1e9;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = 5 + static_cast<int>(uniform_index(rng, 6)), w = 5 + static_cast<int>(uniform_index(rng, 6));
    const int kappa = 1 + static_cast<int>(uniform_index(rng, 2)), side = 2 * kappa + 1;
    const auto x = random_float(Shape{1, 3, h, w}, rng, 0, 1);
    const auto field = kernel_field_from_logits(random_float(Shape{1, side * side, h, w}, rng, -8, 8), kappa);
    const BackgroundMask<float> mask(sigmoid(random_float(Shape{1, 1, h, w}, rng, -6, 6)));
    const auto y = composite(x, apply_kernels(x, field), mask);
    worst = std::max(worst, hull_violation(x.value().data(), y.value().data(), 3, h, w, kappa));
  }

  // Same training for the transformer model and the direct-RGB ablation.
  std::vector<VideoClip> clips;
  for (int i = 0; i < 16; ++i) clips.push_back(generate_clip(EffectSpec::make(Effect::kMelt, i % 3, 500 + i), 12, 16, 16).clip);
  auto trained = [&](bool direct) {
    TrainConfig cfg = desk_config(16, "MSE");
    cfg.model.direct_rgb = direct;
    cfg.iterations = 300;
    cfg.learning_rate = 1e-4;
    auto tr = std::make_unique<Trainer>(cfg);
    train(*tr, clips, {});
    return tr;
  };
  std::vector<VideoClip> held;
  for (int i = 0; i < 4; ++i) held.push_back(generate_clip(EffectSpec::make(Effect::kMelt, i % 3, 900 + i), 8, 16, 16).clip);
  const auto kernel_model = trained(false);
  const auto direct_model = trained(true);
  const ProvenanceRun k = rollout_provenance(kernel_model->model(), held, 7);
  const ProvenanceRun d = rollout_provenance(direct_model->model(), held, 7);

  const bool pass = worst <= 1e-6 && k.violations == 0 && d.violations > 0;
  return {pass, str("1000 random triples: worst excursion ", worst, " (tol 1e-6); trained transformer rollout: ",
                    k.violations, " violations; trained direct-RGB ablation: ", d.violations,
                    " violating pixels, worst excursion ", d.worst)};
}

// ---------------------------------------------------------------------------

Outcome kernel_oracle() {
  testing::Rng rng(3);
  double worst_d = 0, worst_f = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 2, kappa = trial % 5 == 0 ? 1 : 2, side = 2 * kappa + 1;
    const auto x = random_tensor(Shape{n, 3, 6, 6}, rng, 0, 1);
    const auto field = kernel_field_from_logits(random_tensor(Shape{n, side * side, 6, 6}, rng, -3, 3), kappa);
    const auto y = apply_kernels(x, field);
    const auto xf = Tensor<float>(x.shape(), x.value().cast<float>());
    const auto ff = KernelField<float>(Tensor<float>(field.weights().shape(), field.weights().value().cast<float>()), kappa);
    const auto yf = apply_kernels(xf, ff);
    const auto& th = field.weights().value();
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 6; ++i)
          for (int j = 0; j < 6; ++j) {
            double acc = 0;
            for (int k = -kappa; k <= kappa; ++k)
              for (int l = -kappa; l <= kappa; ++l) {
                const int t = (k + kappa) * side + (l + kappa);
                acc += th[((b * side * side + t) * 6 + i) * 6 + j] *
                       x.value()[((b * 3 + c) * 6 + mirror(i - k, 6)) * 6 + mirror(j - l, 6)];
              }
            const Eigen::Index o = ((b * 3 + c) * 6 + i) * 6 + j;
            worst_d = std::max(worst_d, std::abs(y.value()[o] - acc));
            worst_f = std::max(worst_f, std::abs(static_cast<double>(yf.value()[o]) - acc));
          }
  }
  return {worst_d < 1e-6 && worst_f < 1e-6,
          str("50 random 6x6 cases: max |diff| ", worst_d, " (64-bit), ", worst_f, " (32-bit), tol 1e-6")};
}

// ---------------------------------------------------------------------------

Outcome metric_oracles() {
  std::vector<std::string> failed;
  const auto g = gram(Tensor<double>::from(Shape{1, 2, 1, 2}, {1, 2, 3, 4})).value();
  const double expect[] = {1.25, 2.75, 2.75, 6.25};
  for (int k = 0; k < 4; ++k)
    if (std::abs(g[k] - expect[k]) > 1e-12) failed.push_back("gram");
  const double p = psnr_from_mse(0.01);
  if (std::abs(p - 20.0) > 1e-6) failed.push_back("psnr");

  CorpusConfig cc;
  const size_t total = static_cast<size_t>(cc.clips_per_effect) * cc.effects.size();
  const Split split = make_split(total, 2);
  size_t reports = 0;
  double worst_ssim_self = 0, worst_gap = 0;
  for (size_t idx : split.test) {
    const VideoClip clip = generate_clip(corpus_spec(cc, idx), cc.native_length, cc.height, cc.width).clip;
    worst_ssim_self = std::max(worst_ssim_self, std::abs(ssim(clip, clip) - 1.0));
    const VideoClip baseline = first_frame_baseline(clip, 8);
    const VideoClip skip2 = sample_sequence(clip, 8, 2, 0, false, false);
    for (const VideoClip* gen : {&baseline, &skip2}) {
      const MetricReport r = multi_rate_best(*gen, clip, kDefaultRates);
      ++reports;
      double lo = 1e9, hp = -1e9, hs = -1e9;
      for (const auto& rm : r.per_rate) {
        if (r.mse > rm.mse || r.psnr < rm.psnr || r.ssim < rm.ssim) failed.push_back("min/max " + std::to_string(idx));
        lo = std::min(lo, rm.mse);
        hp = std::max(hp, rm.psnr);
        hs = std::max(hs, rm.ssim);
        worst_gap = std::max(worst_gap, std::abs(rm.psnr - psnr_from_mse(rm.mse)) * (rm.mse > 1e-10));
      }
      if (r.mse != lo || r.psnr != hp || r.ssim != hs) failed.push_back("extremum " + std::to_string(idx));
      const MetricReport single = multi_rate_best(*gen, clip, {1});
      const VideoClip src = sample_sequence(clip, 8, 1, 0, false, false);
      if (std::abs(single.mse - mse(*gen, src)) > 1e-12 || std::abs(single.ssim - ssim(*gen, src)) > 1e-12) {
        failed.push_back("singleton " + std::to_string(idx));
      }
      const MetricReport fewer = multi_rate_best(*gen, clip, {1, 2});
      if (fewer.mse < r.mse || fewer.psnr > r.psnr || fewer.ssim > r.ssim) failed.push_back("monotone " + std::to_string(idx));
    }
    if (multi_rate_best(skip2, clip, kDefaultRates).mse != 0.0) failed.push_back("skip2 " + std::to_string(idx));
  }
  if (worst_ssim_self > 1e-9) failed.push_back("ssim(x,x)");
  if (worst_gap > 1e-6) failed.push_back("psnr/mse consistency");

  std::string detail = str("gram [", g[0], ", ", g[1], ", ", g[3], "], psnr(0.01) = ", p, ", |ssim(x,x)-1| <= ",
                           worst_ssim_self, ", ", reports, " multi-rate reports over ", split.test.size(),
                           " test clips");
  for (size_t i = 0; i < std::min<size_t>(failed.size(), 5); ++i) detail += "; failed " + failed[i];
  return {failed.empty(), detail};
}

// ---------------------------------------------------------------------------

Outcome schedule_and_clipping(const fs::path& work) {
  const double t0 = teacher_forcing_prob(0), t6122 = teacher_forcing_prob(6122), t10k = teacher_forcing_prob(10000);
  bool monotone = true;
  for (int i = 1; i <= 12000; ++i) monotone = monotone && teacher_forcing_prob(i) <= teacher_forcing_prob(i - 1);
  bool schedule = std::abs(t0 - 0.998890) <= 1e-6 && std::abs(t6122 - 0.5) < 1e-3 && t10k == 0.0 && monotone &&
                  teacher_forcing_prob(6121) > 0.5 && teacher_forcing_prob(6123) < 0.5;

  CorpusConfig cc;
  cc.clips_per_effect = 12;
  cc.height = cc.width = 16;
  cc.effects = {Effect::kMelt};
  const auto clips = generate_corpus(cc);
  TrainConfig cfg = desk_config(16, "OF+S");
  cfg.iterations = 500;
  const fs::path dir = work / "clipping";
  fs::remove_all(dir);
  Trainer tr(cfg);
  train(tr, clips, {}, {dir, ""});

  std::ifstream log(dir / "train_log.csv");
  std::string line;
  std::getline(log, line);
  const bool header = line == "iter,term,value,grad_norm_pre,grad_norm_post,tf_prob";
  int rows = 0, clipped = 0;
  double max_post = 0;
  while (std::getline(log, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) break;
    ++rows;
    max_post = std::max(max_post, std::stod(f[4]));
    clipped += std::stod(f[3]) > cfg.clip_norm;
  }
  const bool clip_ok = header && rows == 500 && max_post <= cfg.clip_norm + 1e-7;
  return {schedule && clip_ok, str("tf(0) = ", std::setprecision(7), t0, ", tf(6122) = ", t6122, ", tf(10000) = ", t10k,
                                   monotone ? ", non-increasing" : ", NOT monotone", "; ", rows,
                                   " logged steps, max post-clip norm ", max_post, ", ", clipped,
                                   " steps clipped")};
}

// ---------------------------------------------------------------------------

Outcome overfit() {
  TrainConfig cfg = desk_config(32, "MSE");
  cfg.iterations = 2000;
  cfg.learning_rate = 1e-4;
  cfg.batch = 1;
  cfg.augment = false;
  cfg.max_skip = 1;
  const VideoClip clip = generate_clip(EffectSpec::make(Effect::kMelt, 2, 11), 8, 32, 32).clip;
  Trainer tr(cfg);
  auto free_running = [&] { return mse(animate(tr.model(), clip, clip.category, 7), clip); };
  const double before = free_running();
  Stopwatch sw;
  train(tr, {clip}, {});
  const double secs = sw.seconds();
  const double after = free_running();
  const double ratio = before / after;
  return {ratio >= 10.0 && secs < 900,
          str("free-running MSE ", before, " -> ", after, " (", ratio, "x) after 2000 iterations in ", secs, " s")};
}

// ---------------------------------------------------------------------------

Outcome learned_motion() {
  const int size = 16;
  TrainConfig cfg = desk_config(size, "MSE");
  cfg.iterations = 5000;
  cfg.learning_rate = 1e-4;
  cfg.augment = false;
  cfg.max_skip = 1;
  std::vector<VideoClip> clips;
  for (int i = 0; i < 32; ++i) clips.push_back(generate_translation_clip(16, size, size, 1, 100 + i).clip);
  std::vector<VideoClip> held;
  for (int i = 0; i < 4; ++i) held.push_back(generate_translation_clip(8, size, size, 1, 900 + i).clip);
  Trainer tr(cfg);
  const int kappa = cfg.model.kappa, side = 2 * kappa + 1, tap = (1 + kappa) * side + kappa;

  // Kernel mass on the one-row-down tap where the frame actually changes.
  auto mass = [&] {
    double total = 0;
    long n = 0;
    const int hw = size * size;
    for (const auto& clip : held) {
      NoGradGuard guard;
      Rng rng(0);
      const auto frames = clip_frames<float>(clip);
      const std::vector<EffectCategory> cats{clip.category};
      const auto roll = tr.model().rollout(frames[0], cats, clip.length - 1, &frames, 1.0, rng);
      for (int i = 1; i < clip.length; ++i) {
        const float* a = clip.frame_data(i - 1);
        const float* b = clip.frame_data(i);
        const auto& k = roll.kernels[static_cast<size_t>(i - 1)].value();
        for (int p = 0; p < hw; ++p) {
          bool moving = false;
          for (int c = 0; c < clip.channels; ++c) moving = moving || std::abs(a[c * hw + p] - b[c * hw + p]) > 0.05f;
          if (!moving) continue;
          total += k[tap * hw + p];
          ++n;
        }
      }
    }
    return total / static_cast<double>(std::max(n, 1L));
  };
  const double before = mass();
  Stopwatch sw;
  train(tr, clips, {});
  const double after = mass();
  return {after > 0.5, str("mean (1,0)-tap mass over moving pixels ", before, " -> ", after, " after 5000 iterations (",
                           sw.seconds(), " s)")};
}

// ---------------------------------------------------------------------------

Outcome flow_oracle() {
  const FlowExtractor<double> flow;
  const int n = 64;
  auto blob = [&](double cy, double cx) {
    auto t = T::zeros(Shape{1, 3, n, n});
    const double sigma = n / 12.0;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          t.mutable_value()[(c * n + i) * n + j] =
              0.1 + 0.8 * std::exp(-((i - cy) * (i - cy) + (j - cx) * (j - cx)) / (2 * sigma * sigma));
    return t;
  };
  double worst_mae = 0;
  std::string per_shift;
  for (auto [dy, dx] : std::vector<std::pair<int, int>>{{1, 0}, {2, 0}, {0, 1}, {0, 2}, {1, 1}, {2, 2}, {-1, 0}, {0, -2}}) {
    const T a = blob(30, 33), b = blob(30 + dy, 33 + dx);
    const T f = flow(a, b).flow();
    double err = 0;
    int count = 0;
    for (int p = 0; p < n * n; ++p) {
      if (a.value()[p] < 0.5) continue;  // blob support (half maximum)
      err += std::abs(f.value()[p] - dx) + std::abs(f.value()[n * n + p] - dy);
      count += 2;
    }
    const double mae = err / count;
    worst_mae = std::max(worst_mae, mae);
    per_shift += str(" (", dy, ",", dx, "):", mae);
  }
  testing::Rng rng(6);
  const T r = random_tensor(Shape{1, 3, n, n}, rng, 0, 1);
  double zero = 0;
  for (const auto& s : flow(r, r).scales) zero = std::max(zero, s.value().abs().maxCoeff());
  const T bl = blob(30, 33);
  for (const auto& s : flow(bl, bl).scales) zero = std::max(zero, s.value().abs().maxCoeff());
  return {worst_mae < 0.25 && zero < 1e-9,
          str("mean abs error per (dy,dx) shift:", per_shift, "; identical frames max |flow| ", zero)};
}

// ---------------------------------------------------------------------------

/// Four OF+S models trained on a shared corpus, reused by the utility and baseline checks.
struct EffectModels {
  fs::path dir;
  fs::path config;
  std::map<Effect, fs::path> checkpoints;
  double seconds = 0;
};

constexpr int kDeskSize = 16;

RunConfig corpus_run_config(const fs::path& dir) {
  RunConfig rc;
  rc.train = desk_config(kDeskSize, "OF+S");
  rc.train.iterations = 10000;
  rc.train.learning_rate = 1e-4;
  rc.train.max_skip = 1;
  rc.data.corpus_dir = (dir / "corpus").string();
  rc.data.output_dir = (dir / "run").string();
  rc.data.corpus.clips_per_effect = 100;
  rc.data.corpus.height = rc.data.corpus.width = kDeskSize;
  return rc;
}

const EffectModels& effect_models(const fs::path& work) {
  static std::optional<EffectModels> cache;
  if (cache) return *cache;
  EffectModels m;
  m.dir = work / "effects";
  fs::create_directories(m.dir);
  const RunConfig base = corpus_run_config(m.dir);
  m.config = m.dir / "run.cfg";
  {
    std::ofstream(m.config) << serialize_run_config(base);
  }
  std::ostringstream sink;
  if (run_cli({"generate-data", "--config", m.config.string()}, sink, sink) != 0) {
    throw std::runtime_error("generate-data failed: " + sink.str());
  }
  Stopwatch sw;
  for (Effect e : kAllEffects) {
    const std::string name(effect_name(e));
    const fs::path ck = m.dir / name / "final.efck";
    std::ostringstream out, err;
    const int code = run_cli({"train", "--config", m.config.string(), "--effect", name, "--seed",
                              std::to_string(30 + static_cast<int>(e)), "--out", (m.dir / name).string()},
                             out, err);
    if (code != 0) throw std::runtime_error("training " + name + " failed: " + err.str());
    m.checkpoints[e] = ck;
  }
  m.seconds = sw.seconds();
  cache = std::move(m);
  return *cache;
}

std::map<std::string, std::string> parse_output(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto pos = line.rfind(' ');
    if (pos != std::string::npos) kv[line.substr(0, pos)] = line.substr(pos + 1);
  }
  return kv;
}

Outcome data_utility_protocol(const fs::path& work) {
  const EffectModels& m = effect_models(work);
  std::vector<std::string> args{"classify", "--config", m.config.string(), "--probes", "40", "--steps", "8"};
  for (const auto& [e, ck] : m.checkpoints) {
    args.push_back("--checkpoint");
    args.push_back(ck.string());
  }
  std::ostringstream out, err;
  Stopwatch sw;
  if (run_cli(args, out, err) != 0) return {false, "classify failed: " + err.str()};
  const auto kv = parse_output(out.str());
  const double acc = std::stod(kv.at("accuracy"));
  const double control = std::stod(kv.at("permuted-label control"));
  const bool pass = acc > 0.25 && std::abs(control - 0.25) <= 0.1;
  return {pass, str("accuracy ", acc, " (chance 0.25, target 0.40), permuted-label control ", control, "; training ",
                    m.seconds / 60, " min for 4 x 10000 iterations, classification ", sw.seconds(), " s")};
}

Outcome baseline_ordering(const fs::path& work) {
  const EffectModels& m = effect_models(work);
  std::string detail;
  bool pass = true;
  double pooled_ff = 0, pooled_tr = 0, pooled_un = 0;
  size_t pooled_n = 0;
  for (const auto& [e, ck] : m.checkpoints) {
    const std::string name(effect_name(e));
    const fs::path dir = m.dir / "eval" / name;
    std::ostringstream out, err;
    const int code = run_cli({"evaluate", "--config", m.config.string(), "--checkpoint", ck.string(), "--untrained",
                              "--effect", name, "--steps", "8", "--out", dir.string()},
                             out, err);
    if (code != 0) return {false, "evaluate failed: " + err.str()};
    std::map<std::string, std::pair<size_t, double>> mse;
    std::ifstream summary(dir / "summary.csv");
    std::string line;
    std::getline(summary, line);
    while (std::getline(summary, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
      mse[f[0]] = {std::stoul(f[1]), std::stod(f[2])};
    }
    const auto [n, ff] = mse.at("first_frame");
    const double trained = mse.at(name + "_final").second;
    const double untrained = mse.at("untrained").second;
    pass = pass && ff < untrained && trained < ff;
    pooled_ff += ff * n;
    pooled_tr += trained * n;
    pooled_un += untrained * n;
    pooled_n += n;
    detail += str(name, ": first frame ", ff, ", trained ", trained, ", untrained ", untrained, "; ");
  }
  detail += str("pooled over ", pooled_n, " test clips: first frame ", pooled_ff / pooled_n, ", trained ",
                pooled_tr / pooled_n, ", untrained ", pooled_un / pooled_n);
  return {pass, detail};
}

// ---------------------------------------------------------------------------

Outcome determinism_and_persistence(const fs::path& work) {
  std::vector<std::string> failed;
  CorpusConfig cc;
  cc.clips_per_effect = 4;
  cc.height = cc.width = 16;
  cc.native_length = 12;
  const auto clips = generate_corpus(cc);
  TrainConfig cfg = desk_config(16, "GAN");
  cfg.iterations = 24;
  cfg.batch = 2;
  cfg.sequence_length = 4;
  cfg.style.channels = {8, 8, 8};
  cfg.frame_discriminator.channels = {8, 8, 8, 8};
  cfg.flow_discriminator.channels = {8, 8, 8, 8};

  Trainer a(cfg), b(cfg);
  const auto ra = train(a, clips, {}), rb = train(b, clips, {});
  for (size_t i = 0; i < ra.steps.size(); ++i) {
    if (ra.steps[i].loss != rb.steps[i].loss || *ra.steps[i].frame_d_loss != *rb.steps[i].frame_d_loss) {
      failed.push_back("repeat run diverged at step " + std::to_string(i));
      break;
    }
  }

  // Interrupt an identical run after 12 steps and continue from its checkpoint.
  std::vector<const VideoClip*> pool;
  for (const auto& c : clips)
    if (c.category.broad == cfg.model.effect) pool.push_back(&c);
  Trainer first(cfg);
  while (first.iteration() < 12) first.step(first.sample_batch(pool));
  const fs::path dir = work / "determinism";
  fs::create_directories(dir);
  save_checkpoint(dir / "interrupted.efck", first.to_checkpoint("train.seed = 1\n"));
  const Checkpoint saved = load_checkpoint(dir / "interrupted.efck");
  Trainer resumed(cfg);
  resumed.restore(saved);
  const auto rest = train(resumed, clips, {});
  for (size_t i = 0; i < rest.steps.size(); ++i) {
    if (rest.steps[i].loss != ra.steps[12 + i].loss) {
      failed.push_back("resumed run diverged at step " + std::to_string(12 + i));
      break;
    }
  }
  const auto pa = a.model().parameters().named(), pr = resumed.model().parameters().named();
  for (size_t i = 0; i < pa.size(); ++i)
    if (!(pa[i].second.value() == pr[i].second.value()).all()) failed.push_back("resumed weights " + pa[i].first);

  // Checkpoint and video round trips.
  const Checkpoint fresh = first.to_checkpoint("train.seed = 1\n");
  if (encode_checkpoint(saved) != encode_checkpoint(fresh)) failed.push_back("checkpoint round trip");
  const fs::path rvt = dir / "clip.rvt";
  write_rvt(rvt, clips[5]);
  if (!(read_rvt(rvt).data == clips[5].data).all()) failed.push_back("rvt round trip");
  auto bytes = read_file(dir / "interrupted.efck");
  bytes[bytes.size() / 2] ^= 0x10;
  bool rejected = false;
  try {
    decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    rejected = std::string(e.what()).find("CRC") != std::string::npos;
  }
  if (!rejected) failed.push_back("corrupted checkpoint accepted");

  std::string detail = str(ra.steps.size(), "-step adversarial run repeated bit-for-bit, resume at 12 matched ",
                           rest.steps.size(), " later steps and all weights; rvt/checkpoint round trips; CRC rejection");
  if (!failed.empty()) {
    detail = "";
    for (const auto& f : failed) detail += (detail.empty() ? "" : "; ") + f;
  }
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks; prints one PASS/FAIL line per criterion."};
  std::vector<int> only;
  std::string workdir = (fs::temp_directory_path() / "vfx_acceptance").string();
  app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',')->check(CLI::Range(1, 11));
  app.add_option("--workdir", workdir, "Scratch directory");
  CLI11_PARSE(app, argc, argv);
  const fs::path work = workdir;
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"pixel provenance", pixel_provenance},
      {"kernel application oracle", kernel_oracle},
      {"gram/ssim/psnr/multi-rate oracles", metric_oracles},
      {"schedule and clipping", [&] { return schedule_and_clipping(work); }},
      {"overfit a single clip", overfit},
      {"learned downward motion", learned_motion},
      {"flow extractor oracle", flow_oracle},
      {"data utility", [&] { return data_utility_protocol(work); }},
      {"determinism and persistence", [&] { return determinism_and_persistence(work); }},
      {"baseline ordering", [&] { return baseline_ordering(work); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
