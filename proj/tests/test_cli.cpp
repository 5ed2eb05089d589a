#include "doctest.h"

#include "cli.hpp"
#include "vfx/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace vfx;
namespace fs = std::filesystem;

namespace {

const fs::path kData = VFX_TEST_DATA;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

/// Scratch directory holding a small corpus and a config pointing at it.
struct Workspace {
  fs::path dir = fs::temp_directory_path() / "vfx_test_cli";
  fs::path config = dir / "run.cfg";

  Workspace() {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(config) << "model.height = 16\nmodel.width = 16\n"
                             "model.encoder_channels = 4,4,4\nmodel.decoder_channels = 4,4,4\n"
                             "model.stage_kernel = 3\n"
                             "train.batch = 2\ntrain.sequence_length = 4\ntrain.iterations = 2\n"
                             "train.validation_interval = 0\n"
                             "data.corpus_dir = "
                          << (dir / "corpus").string() << "\ndata.output_dir = " << (dir / "run").string()
                          << "\ndata.clips_per_effect = 10\ndata.native_length = 10\n"
                             "data.height = 16\ndata.width = 16\n";
  }
  std::string path(const std::string& rel) const { return (dir / rel).string(); }
};

size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("inspect reports rvt and checkpoint headers") {
  const Run r = cli({"inspect", (kData / "golden_t2h2w2c1.rvt").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("frames: 2\nheight: 2\nwidth: 2\nchannels: 1\n") != std::string::npos);
  CHECK(r.out.find("size: 52 bytes (20 header + 32 payload)") != std::string::npos);

  const Run c = cli({"inspect", (kData / "golden.efck").string()});
  CHECK(c.code == 0);
  CHECK(c.out.find("version: 1") != std::string::npos);
  CHECK(c.out.find("w f32 [1,2]") != std::string::npos);
  CHECK(c.out.find("step u64") != std::string::npos);

  CHECK(cli({"inspect", (kData / "missing.rvt").string()}).code == 2);
  CHECK(cli({"inspect", (kData / "../test_cli.cpp").string()}).code == 2);
}

TEST_CASE("usage errors exit 1") {
  Run r = cli({});
  CHECK(r.code == 1);
  r = cli({"inspect", "--bogus", "x"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--bogus") != std::string::npos);
  CHECK(cli({"train"}).code == 1);
  CHECK(cli({"dance"}).code == 1);
  CHECK(cli({"evaluate", "--rates", "1,x"}).code == 1);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("generate, train, animate, evaluate, classify") {
  Workspace ws;
  const std::string cfg = ws.config.string();

  Run r = cli({"generate-data", "--config", cfg});
  REQUIRE(r.code == 0);
  CHECK(count_lines(ws.dir / "corpus/manifest.csv") == 41);
  const auto manifest = read_manifest(ws.dir / "corpus/manifest.csv");
  CHECK(manifest[10].broad == Effect::kBloom);
  CHECK(read_rvt(ws.dir / "corpus" / manifest[0].path).length == 10);

  SUBCASE("zero iterations writes the initial checkpoint") {
    r = cli({"train", "--config", cfg, "--iterations", "0"});
    CHECK(r.code == 0);
    const Checkpoint ck = load_checkpoint(ws.dir / "run/final.efck");
    CHECK(ck.at("trainer/iteration").as_u64() == 0);
    CHECK(ck.config_text.find("train.iterations = 0") != std::string::npos);
    CHECK(count_lines(ws.dir / "run/train_log.csv") == 1);
  }

  SUBCASE("training then animating a 64x64 image") {
    r = cli({"train", "--config", cfg, "--out", ws.path("melt")});
    REQUIRE(r.code == 0);
    CHECK(count_lines(ws.dir / "melt/train_log.csv") == 3);

    VideoClip image = VideoClip::blank(1, 64, 64, 3);
    for (Eigen::Index i = 0; i < image.data.size(); ++i) image.data[i] = static_cast<float>(i % 97) / 96.0f;
    write_png(ws.dir / "input.png", image.data.data(), 3, 64, 64);
    r = cli({"animate", "--checkpoint", ws.path("melt/final.efck"), "--input", ws.path("input.png"), "--effect",
             "melt", "--fine", "1", "--steps", "8", "--out", ws.path("anim/out.rvt")});
    REQUIRE(r.code == 0);
    const VideoClip clip = read_rvt(ws.dir / "anim/out.rvt");
    CHECK(clip.length == 8);
    CHECK(clip.height == 64);
    CHECK(clip.width == 64);
    CHECK(clip.channels == 3);
    CHECK(fs::exists(ws.dir / "anim/out_frames/frame_007.png"));
    CHECK(read_png(ws.dir / "anim/out_frames/frame_000.png").height == 64);

    CHECK(cli({"animate", "--checkpoint", ws.path("melt/final.efck"), "--input", ws.path("input.png"), "--effect",
               "bloom", "--out", ws.path("anim/x.rvt")})
              .code == 2);
    CHECK(cli({"animate", "--checkpoint", ws.path("melt/final.efck"), "--input", ws.path("none.png"), "--out",
               ws.path("anim/x.rvt")})
              .code == 2);

    r = cli({"evaluate", "--checkpoint", ws.path("melt/final.efck"), "--untrained", "--split", "train", "--rates",
             "1,2", "--out", ws.path("eval")});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("first_frame") != std::string::npos);
    std::ifstream summary(ws.dir / "eval/summary.csv");
    std::string line;
    std::getline(summary, line);
    CHECK(line == "method,clips,mse,psnr,ssim");
    CHECK(count_lines(ws.dir / "eval/summary.csv") == 4);

    // The best row is no worse than every per-rate row of the same clip.
    std::ifstream report(ws.dir / "eval/first_frame.csv");
    std::getline(report, line);
    CHECK(line.rfind("# method=first_frame", 0) == 0);
    std::getline(report, line);
    double min_rate_mse = 1e9;
    int best_rows = 0;
    while (std::getline(report, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
      REQUIRE(f.size() == 7);
      if (f[0] == "mean") break;
      if (f[3] == "best") {
        ++best_rows;
        CHECK(std::stod(f[4]) <= min_rate_mse);
        min_rate_mse = 1e9;
      } else {
        min_rate_mse = std::min(min_rate_mse, std::stod(f[4]));
      }
    }
    CHECK(best_rows > 0);
  }

  SUBCASE("classify needs distinct effects") {
    REQUIRE(cli({"train", "--config", cfg, "--iterations", "0", "--effect", "bloom", "--out", ws.path("b")}).code == 0);
    REQUIRE(cli({"train", "--config", cfg, "--iterations", "0", "--effect", "swirl", "--out", ws.path("s")}).code == 0);
    CHECK(cli({"classify", "--checkpoint", ws.path("b/final.efck"), "--checkpoint", ws.path("b/final.efck")}).code ==
          2);
    CHECK(cli({"classify", "--checkpoint", ws.path("b/final.efck")}).code == 2);
    r = cli({"classify", "--checkpoint", ws.path("b/final.efck"), "--checkpoint", ws.path("s/final.efck"), "--probes",
             "2", "--out", ws.path("cls.csv")});
    CHECK(r.code == 0);
    CHECK(r.out.find("accuracy") != std::string::npos);
    CHECK(count_lines(ws.dir / "cls.csv") == 2);
  }
}
