#include "cli.hpp"

#include "vfx/config.hpp"
#include "vfx/evaluation.hpp"
#include "vfx/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>

namespace vfx {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string effect;
  std::optional<int> fine;
  std::optional<int> steps;
  std::string out;
  std::vector<int> rates = kDefaultRates;
  std::optional<std::int64_t> iterations;
  std::vector<std::string> checkpoints;
  std::string input;
  std::string resume;
  std::string split = "test";
  int probes = 40;
  bool untrained = false;
  std::vector<std::string> paths;
};

RunConfig load_config(const std::string& path, std::ostream& err) {
  if (path.empty()) return {};
  ParsedConfig parsed = load_run_config(path);
  for (const auto& n : parsed.notices) err << "notice: " << n << "\n";
  return parsed.config;
}

/// Run configuration stored in a checkpoint.
RunConfig checkpoint_config(const Checkpoint& ck) { return parse_run_config(ck.config_text).config; }

/// Corpus clips by index, read from a manifest when one exists or generated otherwise.
class CorpusSource {
 public:
  CorpusSource(const DataConfig& data, std::ostream& err) : data_(data) {
    const fs::path manifest = fs::path(data.corpus_dir) / "manifest.csv";
    if (fs::exists(manifest)) {
      entries_ = read_manifest(manifest);
      size_ = entries_.size();
    } else {
      err << "notice: no manifest in '" << data.corpus_dir << "', generating the corpus in memory\n";
      size_ = static_cast<size_t>(data.corpus.clips_per_effect) * data.corpus.effects.size();
    }
    if (size_ == 0) throw ContractError("corpus is empty");
    split_ = make_split(size_, data.split_seed);
  }

  const Split& split() const { return split_; }

  const std::vector<size_t>& indices(const std::string& name) const {
    if (name == "train") return split_.train;
    if (name == "val") return split_.val;
    if (name == "test") return split_.test;
    throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
  }

  Effect effect_of(size_t i) const {
    return entries_.empty() ? corpus_spec(data_.corpus, i).effect : entries_[i].broad;
  }

  VideoClip load(size_t i) const {
    if (entries_.empty()) {
      return generate_clip(corpus_spec(data_.corpus, i), data_.corpus.native_length, data_.corpus.height,
                           data_.corpus.width)
          .clip;
    }
    const ManifestEntry& e = entries_[i];
    VideoClip clip = read_rvt(fs::path(data_.corpus_dir) / e.path);
    clip.category = {e.broad, e.fine};
    clip.native_length = e.native_length;
    clip.seed = e.seed;
    return clip;
  }

  std::vector<VideoClip> load(const std::vector<size_t>& indices, std::optional<Effect> effect,
                              size_t limit = SIZE_MAX) const {
    std::vector<VideoClip> out;
    for (size_t i : indices) {
      if (out.size() >= limit) break;
      if (!effect || effect_of(i) == *effect) out.push_back(load(i));
    }
    return out;
  }

 private:
  DataConfig data_;
  std::vector<ManifestEntry> entries_;
  size_t size_ = 0;
  Split split_;
};

std::optional<Effect> effect_filter(const std::string& name) {
  if (name.empty()) return std::nullopt;
  return parse_effect(name);
}

int cmd_generate(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig rc = load_config(o.config, err);
  CorpusConfig cc = rc.data.corpus;
  if (o.seed) cc.seed = *o.seed;
  if (!o.effect.empty()) cc.effects = {parse_effect(o.effect)};
  const fs::path dir = o.out.empty() ? fs::path(rc.data.corpus_dir) : fs::path(o.out);
  fs::create_directories(dir / "clips");
  const size_t count = static_cast<size_t>(std::max(cc.clips_per_effect, 0)) * cc.effects.size();
  std::vector<ManifestEntry> entries;
  for (size_t i = 0; i < std::max<size_t>(count, 1); ++i) {
    const EffectSpec spec = corpus_spec(cc, i);
    const VideoClip clip = generate_clip(spec, cc.native_length, cc.height, cc.width).clip;
    char name[64];
    std::snprintf(name, sizeof name, "clips/%s_%05zu.rvt", std::string(effect_name(spec.effect)).c_str(), i);
    write_rvt(dir / name, clip);
    entries.push_back({name, spec.effect, spec.fine, cc.native_length, spec.seed});
  }
  write_manifest(dir / "manifest.csv", entries);
  out << "wrote " << entries.size() << " clips (" << cc.native_length << " frames, " << cc.height << "x" << cc.width
      << ") and manifest.csv to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig rc = load_config(o.config, err);
  if (o.iterations) rc.train.iterations = *o.iterations;
  if (o.seed) rc.train.seed = *o.seed;
  if (!o.effect.empty()) rc.train.model.effect = parse_effect(o.effect);
  rc.train.validate();
  const fs::path dir = o.out.empty() ? fs::path(rc.data.output_dir) : fs::path(o.out);
  const std::string text = serialize_run_config(rc);

  Trainer trainer(rc.train);
  if (!o.resume.empty()) trainer.restore(load_checkpoint(o.resume));
  const CorpusSource corpus(rc.data, err);
  const Effect effect = rc.train.model.effect;
  const auto train_clips = corpus.load(corpus.split().train, effect);
  const auto val_clips = rc.train.validation_interval > 0
                             ? corpus.load(corpus.split().val, effect, static_cast<size_t>(rc.train.validation_clips))
                             : std::vector<VideoClip>{};
  out << "training " << effect_name(effect) << " on " << train_clips.size() << " clips, iterations "
      << trainer.iteration() << ".." << rc.train.iterations << ", loss " << rc.train.loss.name << "\n";
  const TrainResult res = train(trainer, train_clips, val_clips, {dir, text});
  if (!res.steps.empty()) {
    out << "first loss " << res.steps.front().loss << ", last loss " << res.steps.back().loss << "\n";
  }
  for (const auto& v : res.validation) {
    out << "validation @" << v.iteration << ": mse " << v.mse << " psnr " << v.psnr << " ssim " << v.ssim << "\n";
  }
  out << "checkpoint " << res.final_checkpoint.string() << "\n";
  return kExitOk;
}

/// Generator from a checkpoint, built for frames of the given size.
std::unique_ptr<PredictorModel<float>> model_from_checkpoint(const Checkpoint& ck, int height, int width) {
  PredictorConfig mc = checkpoint_config(ck).train.model;
  mc.height = height;
  mc.width = width;
  auto model = std::make_unique<PredictorModel<float>>(mc);
  load_generator(*model, ck);
  return model;
}

VideoClip read_input_frame(const fs::path& path) {
  std::ifstream probe(path, std::ios::binary);
  char magic[4] = {};
  probe.read(magic, 4);
  if (probe.gcount() == 4 && std::string(magic, 4) == "RVT1") {
    VideoClip clip = read_rvt(path);
    VideoClip first = VideoClip::blank(1, clip.height, clip.width, clip.channels);
    first.data = clip.data.head(clip.frame_size());
    return first;
  }
  return read_png(path);
}

int cmd_animate(const Options& o, std::ostream& out, std::ostream&) {
  const Checkpoint ck = load_checkpoint(o.checkpoints.front());
  const RunConfig rc = checkpoint_config(ck);
  const VideoClip first = read_input_frame(o.input);
  auto model = model_from_checkpoint(ck, first.height, first.width);
  EffectCategory cat{model->config().effect, o.fine.value_or(0)};
  if (!o.effect.empty() && parse_effect(o.effect) != cat.broad) {
    throw ContractError("checkpoint was trained for " + std::string(effect_name(cat.broad)) + ", not " + o.effect);
  }
  if (cat.fine < 0 || cat.fine >= model->config().fine_count) {
    throw ContractError("--fine must be in [0, " + std::to_string(model->config().fine_count) + ")");
  }
  const int steps = o.steps.value_or(rc.train.sequence_length);
  if (steps < 2) throw ContractError("--steps must be at least 2");
  const VideoClip clip = animate(*model, first, cat, steps - 1);

  const fs::path rvt = o.out;
  if (rvt.has_parent_path()) fs::create_directories(rvt.parent_path());
  write_rvt(rvt, clip);
  fs::path frames = rvt;
  frames.replace_extension();
  frames += "_frames";
  fs::create_directories(frames);
  for (int t = 0; t < clip.length; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03d.png", t);
    write_png(frames / name, clip.frame_data(t), clip.channels, clip.height, clip.width);
  }
  out << "wrote " << clip.length << " frames " << clip.height << "x" << clip.width << "x" << clip.channels << " to "
      << rvt.string() << " and " << frames.string() << "\n";
  return kExitOk;
}

std::string method_label(const fs::path& ckpt, std::set<std::string>& used) {
  std::string base = ckpt.parent_path().filename().string();
  base = base.empty() ? ckpt.stem().string() : base + "_" + ckpt.stem().string();
  std::string label = base;
  for (int k = 2; !used.insert(label).second; ++k) label = base + "_" + std::to_string(k);
  return label;
}

void write_report_csv(const fs::path& path, const std::vector<MetricReport>& reports, const std::vector<VideoClip>& clips,
                      const std::vector<size_t>& indices) {
  std::ofstream csv(path);
  if (!csv) throw IoError("cannot write " + path.string());
  csv << std::setprecision(10);
  csv << "# method=" << (reports.empty() ? "" : reports.front().method)
      << "; psnr is capped at 100 dB for identical clips; rate 'best' is min mse, max psnr, max ssim over rates\n";
  csv << "clip,effect,fine,rate,mse,psnr,ssim\n";
  for (size_t i = 0; i < reports.size(); ++i) {
    const std::string prefix = std::to_string(indices[i]) + "," + std::string(effect_name(clips[i].category.broad)) +
                               "," + std::to_string(clips[i].category.fine) + ",";
    for (const auto& r : reports[i].per_rate) csv << prefix << r.rate << "," << r.mse << "," << r.psnr << "," << r.ssim << "\n";
    csv << prefix << "best," << reports[i].mse << "," << reports[i].psnr << "," << reports[i].ssim << "\n";
  }
  const AggregateReport agg = aggregate(reports);
  csv << "mean,,,best," << agg.mse << "," << agg.psnr << "," << agg.ssim << "\n";
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  std::vector<Checkpoint> ckpts;
  for (const auto& p : o.checkpoints) ckpts.push_back(load_checkpoint(p));
  RunConfig rc = !o.config.empty() ? load_config(o.config, err) : ckpts.empty() ? RunConfig{} : checkpoint_config(ckpts[0]);
  const int steps = o.steps.value_or(rc.train.sequence_length);
  if (steps < 2) throw ContractError("--steps must be at least 2");
  if (o.rates.empty()) throw ContractError("--rates must list at least one rate");

  const CorpusSource corpus(rc.data, err);
  const auto& indices_all = corpus.indices(o.split);
  // Models are per effect, so any model restricts the clips to its effect.
  std::optional<Effect> effect = effect_filter(o.effect);
  for (const auto& ck : ckpts) {
    const Effect e = checkpoint_config(ck).train.model.effect;
    if (effect && *effect != e) {
      throw ContractError("checkpoints must all match the evaluated effect " + std::string(effect_name(*effect)) +
                          ", got " + std::string(effect_name(e)));
    }
    effect = e;
  }
  if (!effect && o.untrained) effect = rc.train.model.effect;
  std::vector<size_t> indices;
  for (size_t i : indices_all)
    if (!effect || corpus.effect_of(i) == *effect) indices.push_back(i);
  const auto clips = corpus.load(indices, std::nullopt);
  if (clips.empty()) throw ContractError("no clips to evaluate");

  std::vector<std::pair<std::string, std::unique_ptr<PredictorModel<float>>>> models;
  std::set<std::string> used{"first_frame", "untrained"};
  for (size_t k = 0; k < ckpts.size(); ++k) {
    models.emplace_back(method_label(o.checkpoints[k], used),
                        model_from_checkpoint(ckpts[k], clips[0].height, clips[0].width));
  }
  if (o.untrained) {
    PredictorConfig mc = rc.train.model;
    mc.height = clips[0].height;
    mc.width = clips[0].width;
    mc.effect = *effect;
    if (o.seed) mc.seed = *o.seed;
    models.emplace_back("untrained", std::make_unique<PredictorModel<float>>(mc));
  }

  const fs::path dir = o.out.empty() ? fs::path(rc.data.output_dir) / "eval" : fs::path(o.out);
  fs::create_directories(dir);
  std::vector<AggregateReport> summary;
  auto run = [&](const std::string& method, auto&& generate) {
    std::vector<MetricReport> reports;
    for (const auto& c : clips) reports.push_back(multi_rate_best(generate(c), c, o.rates, method));
    write_report_csv(dir / (method + ".csv"), reports, clips, indices);
    summary.push_back(aggregate(reports));
    summary.back().method = method;
  };
  run("first_frame", [&](const VideoClip& c) { return first_frame_baseline(c, steps); });
  for (const auto& [name, model] : models) {
    run(name, [&](const VideoClip& c) { return animate(*model, c, c.category, steps - 1); });
  }

  std::ofstream csv(dir / "summary.csv");
  csv << std::setprecision(10) << "method,clips,mse,psnr,ssim\n";
  out << "split " << o.split << ", " << clips.size() << " clips, " << steps << " frames, rates";
  for (int r : o.rates) out << " " << r;
  out << "\n" << std::left << std::setw(28) << "method" << std::setw(12) << "mse" << std::setw(10) << "psnr"
      << "ssim\n";
  for (const auto& a : summary) {
    csv << a.method << "," << a.clips << "," << a.mse << "," << a.psnr << "," << a.ssim << "\n";
    out << std::setw(28) << a.method << std::setw(12) << std::setprecision(5) << a.mse << std::setw(10) << a.psnr
        << a.ssim << "\n";
  }
  out << "reports in " << dir.string() << "\n";
  return kExitOk;
}

int cmd_classify(const Options& o, std::ostream& out, std::ostream& err) {
  std::vector<Checkpoint> ckpts;
  for (const auto& p : o.checkpoints) ckpts.push_back(load_checkpoint(p));
  const RunConfig rc = !o.config.empty() ? load_config(o.config, err) : checkpoint_config(ckpts[0]);
  const int steps = o.steps.value_or(rc.train.sequence_length);
  if (o.probes < 1) throw ContractError("--probes must be positive");
  const CorpusSource corpus(rc.data, err);

  const VideoClip shape_probe = corpus.load(corpus.split().train.front());
  std::vector<std::unique_ptr<PredictorModel<float>>> owned;
  std::map<Effect, const PredictorModel<float>*> models;
  std::vector<Effect> effects;
  for (const auto& ck : ckpts) {
    owned.push_back(model_from_checkpoint(ck, shape_probe.height, shape_probe.width));
    const Effect e = owned.back()->config().effect;
    if (!models.emplace(e, owned.back().get()).second) {
      throw ContractError("two checkpoints were trained for " + std::string(effect_name(e)));
    }
    effects.push_back(e);
  }
  if (effects.size() < 2) throw ConfigError("classify needs checkpoints for at least two effects");

  const auto& train_idx = corpus.split().train;
  std::vector<Tensor<float>> firsts;
  for (int k = 0; k < o.probes; ++k) {
    firsts.push_back(frame_tensor<float>(corpus.load(train_idx[k * train_idx.size() / o.probes % train_idx.size()]), 0));
  }
  const auto probes = same_start_probe_set(firsts, models, effects, steps);
  std::vector<LabeledClip> truth;
  for (size_t i : corpus.split().test) {
    const Effect e = corpus.effect_of(i);
    if (!models.count(e)) continue;
    truth.push_back({sample_sequence(corpus.load(i), steps, 1, 0, false, false), effect_label(e)});
  }

  ClassifierConfig cc;
  cc.height = shape_probe.height;
  cc.width = shape_probe.width;
  cc.channels = shape_probe.channels;
  if (o.seed) cc.seed = *o.seed;
  const UtilityResult u = data_utility(probes, truth, cc);
  std::vector<int> truth_labels;
  for (const auto& lc : truth) truth_labels.push_back(lc.label);
  const double control = permuted_label_accuracy(u.predictions, truth_labels, 1000, derive_seed(cc.seed, 1));

  out << "probe clips " << probes.size() << ", ground-truth clips " << truth.size() << "\n"
      << "accuracy " << u.accuracy << "\n"
      << "permuted-label control " << control << "\n"
      << "chance " << 1.0 / static_cast<double>(effects.size()) << "\n";
  if (!o.out.empty()) {
    const fs::path path = o.out;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream csv(path);
    csv << std::setprecision(10) << "probe_clips,test_clips,accuracy,control_accuracy,chance\n"
        << probes.size() << "," << truth.size() << "," << u.accuracy << "," << control << ","
        << 1.0 / static_cast<double>(effects.size()) << "\n";
  }
  return kExitOk;
}

void inspect_one(const fs::path& path, std::ostream& out) {
  const auto bytes = read_file(path);
  out << "file: " << path.string() << "\n";
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "RVT1") {
    const RvtHeader h = decode_rvt_header(bytes);
    out << "format: rvt\nframes: " << h.frames << "\nheight: " << h.height << "\nwidth: " << h.width
        << "\nchannels: " << h.channels << "\nsize: " << bytes.size() << " bytes (" << kRvtHeaderBytes
        << " header + " << bytes.size() - kRvtHeaderBytes << " payload)\n";
    if (bytes.size() != h.file_bytes()) {
      throw FormatError("header implies " + std::to_string(h.file_bytes()) + " bytes, file has " +
                        std::to_string(bytes.size()));
    }
    return;
  }
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "EFCK") {
    const Checkpoint ck = decode_checkpoint(bytes);
    out << "format: checkpoint\nversion: " << ck.version << "\nsize: " << bytes.size() << " bytes\nconfig: "
        << ck.config_text.size() << " bytes\ntensors: " << ck.tensors.size() << "\n";
    if (ck.contains("trainer/iteration")) out << "iteration: " << ck.at("trainer/iteration").as_u64() << "\n";
    static const char* kTypes[] = {"f32", "f64", "u64"};
    for (const auto& t : ck.tensors) {
      out << "  " << t.name << " " << kTypes[static_cast<int>(t.dtype)] << " [";
      for (size_t i = 0; i < t.dims.size(); ++i) out << (i ? "," : "") << t.dims[i];
      out << "]\n";
    }
    return;
  }
  throw FormatError(path.string() + " is neither an .rvt video nor a checkpoint");
}

int cmd_inspect(const Options& o, std::ostream& out) {
  for (const auto& p : o.paths) inspect_one(p, out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learns visual effects from videos and transfers them to still images."};
  app.name("vfx");
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* sub) { return sub->add_option("--config", o.config, "Run configuration file"); };
  auto add_seed = [&](CLI::App* sub, const char* what) { sub->add_option("--seed", o.seed, what); };
  auto add_out = [&](CLI::App* sub, const char* what) { sub->add_option("--out", o.out, what); };
  auto add_effect = [&](CLI::App* sub, const char* what) { sub->add_option("--effect", o.effect, what); };
  auto add_steps = [&](CLI::App* sub) {
    sub->add_option("--steps", o.steps, "Frames per generated clip, including the first")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("generate-data", "Write the synthetic corpus and its manifest");
  add_config(gen);
  add_seed(gen, "Corpus seed");
  add_out(gen, "Output directory (default data.corpus_dir)");
  add_effect(gen, "Only generate this effect");

  auto* tr = app.add_subcommand("train", "Train a predictor for one effect");
  add_config(tr)->required();
  add_seed(tr, "Training seed");
  add_out(tr, "Output directory (default data.output_dir)");
  add_effect(tr, "Effect to learn (default model.effect)");
  tr->add_option("--iterations", o.iterations, "Total iterations")->check(CLI::NonNegativeNumber);
  tr->add_option("--resume", o.resume, "Checkpoint to continue from");

  auto* an = app.add_subcommand("animate", "Apply a trained effect to a still image");
  an->add_option("--checkpoint", o.checkpoints, "Trained checkpoint")->required()->expected(1);
  an->add_option("--input", o.input, "PNG image or .rvt clip (first frame used)")->required();
  add_effect(an, "Effect category (must match the checkpoint)");
  an->add_option("--fine", o.fine, "Fine-grained sub-type")->check(CLI::NonNegativeNumber);
  add_steps(an);
  an->add_option("--out", o.out, "Output .rvt path; PNG frames go next to it")->required();

  auto* ev = app.add_subcommand("evaluate", "Score models and the First Frame baseline on a corpus split");
  add_config(ev);
  ev->add_option("--checkpoint", o.checkpoints, "Checkpoint to evaluate (repeatable)");
  add_effect(ev, "Only clips of this effect");
  ev->add_option("--rates", o.rates, "Frame-rate skips to compare against")->delimiter(',')->check(CLI::PositiveNumber);
  add_steps(ev);
  add_out(ev, "Report directory");
  add_seed(ev, "Seed of the untrained model");
  ev->add_flag("--untrained", o.untrained, "Also score an untrained model");
  ev->add_option("--split", o.split, "Corpus split")->check(CLI::IsMember({"train", "val", "test"}));

  auto* cl = app.add_subcommand("classify", "Data-utility accuracy of per-effect models");
  add_config(cl);
  cl->add_option("--checkpoint", o.checkpoints, "One checkpoint per effect")->required();
  cl->add_option("--probes", o.probes, "First frames used to build probe clips")->check(CLI::PositiveNumber);
  add_steps(cl);
  add_seed(cl, "Classifier seed");
  add_out(cl, "CSV report path");

  auto* in = app.add_subcommand("inspect", "Print .rvt or checkpoint headers");
  in->add_option("paths", o.paths, "Files to inspect")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_generate(o, out, err);
    if (tr->parsed()) return cmd_train(o, out, err);
    if (an->parsed()) return cmd_animate(o, out, err);
    if (ev->parsed()) return cmd_evaluate(o, out, err);
    if (cl->parsed()) return cmd_classify(o, out, err);
    if (in->parsed()) return cmd_inspect(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace vfx
