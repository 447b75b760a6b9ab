#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "json.hpp"

#include "gausskey/core_state.hpp"
#include "gausskey/dynamics.hpp"
#include "gausskey/heatmap.hpp"

namespace gk = gausskey;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("gausskey_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
}

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const fs::path& dir, const std::string& args) {
  const fs::path out = dir / "_stdout.txt";
  const fs::path err = dir / "_stderr.txt";
  const std::string cmd = std::string(GAUSSKEY_CLI_PATH) + " " + args + " >" +
                          out.string() + " 2>" + err.string();
  const int rc = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

bool packed_equal(const gk::PoseState& a, const gk::PoseState& b) {
  const std::vector<double> pa = a.packed(), pb = b.packed();
  return pa.size() == pb.size() &&
         std::memcmp(pa.data(), pb.data(), sizeof(double) * pa.size()) == 0;
}

}  // namespace

TEST(Synth, WritesCsvAndManifestDeterministically) {
  const fs::path dir = temp_dir("synth");
  const std::string a = (dir / "a.csv").string();
  const RunResult r = run_cli(
      dir, "synth --kind linear --k 3 --t 12 --seed 5 --out " + a);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("wrote 12 frames"), std::string::npos) << r.out;

  const gk::StateSequence seq = gk::load_state_csv(a);
  EXPECT_EQ(seq.frames.size(), 12u);
  EXPECT_EQ(seq.num_parts(), 3);

  const json manifest = json::parse(slurp(dir / "a.csv.manifest.json"));
  EXPECT_EQ(manifest.at("command"), "synth");
  EXPECT_EQ(manifest.at("version"), gk::kVersion);
  EXPECT_EQ(manifest.at("flags").at("seed"), 5);
  EXPECT_EQ(manifest.at("flags").at("kind"), "linear");
  EXPECT_EQ(manifest.at("outputs").size(), 1u);
  EXPECT_GE(manifest.at("wall_clock_ms").get<long long>(), 0);

  const std::string b = (dir / "b.csv").string();
  ASSERT_EQ(run_cli(dir, "synth --kind linear --k 3 --t 12 --seed 5 --out " +
                             b).code,
            0);
  EXPECT_EQ(slurp(a), slurp(b));

  const std::string c = (dir / "c.csv").string();
  ASSERT_EQ(run_cli(dir, "synth --kind linear --k 3 --t 12 --seed 6 --out " +
                             c).code,
            0);
  EXPECT_NE(slurp(a), slurp(c));
  fs::remove_all(dir);
}

TEST(Synth, RendersFramesWhenAsked) {
  const fs::path dir = temp_dir("synth_render");
  const std::string out = (dir / "s.csv").string();
  const std::string rdir = (dir / "maps").string();
  const RunResult r = run_cli(dir, "synth --k 2 --t 3 --seed 1 --out " + out +
                                       " --render-dir " + rdir + " --size 32");
  ASSERT_EQ(r.code, 0) << r.err;
  for (int t = 0; t < 3; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d", t);
    const gk::Heatmap map = gk::read_heatmap_dir((fs::path(rdir) / name).string());
    EXPECT_EQ(map.parts, 2);
    EXPECT_EQ(map.height, 32);
    EXPECT_EQ(map.width, 32);
  }
  fs::remove_all(dir);
}

TEST(Fit, RecoversRenderedMeans) {
  const fs::path dir = temp_dir("fit");
  const std::string csv = (dir / "truth.csv").string();
  const std::string rdir = (dir / "maps").string();
  ASSERT_EQ(run_cli(dir, "synth --kind linear --k 3 --t 6 --seed 9 --out " +
                             csv + " --render-dir " + rdir + " --size 128")
                .code,
            0);

  const std::string fitted = (dir / "fit.csv").string();
  const RunResult r = run_cli(
      dir, "fit --in " + rdir + " --out " + fitted + " --temperature 0.05");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("fit 6 frames (3 parts)"), std::string::npos) << r.out;

  const gk::StateSequence truth = gk::load_state_csv(csv);
  const gk::StateSequence est = gk::load_state_csv(fitted);
  ASSERT_EQ(est.frames.size(), truth.frames.size());
  ASSERT_EQ(est.num_parts(), truth.num_parts());
  for (std::size_t t = 0; t < truth.frames.size(); ++t) {
    for (int k = 0; k < truth.num_parts(); ++k) {
      const gk::Landmark& a = truth.frames[t].landmarks[k];
      const gk::Landmark& b = est.frames[t].landmarks[k];
      const double err = std::hypot(a.mu_x - b.mu_x, a.mu_y - b.mu_y);
      EXPECT_LT(err, 0.01) << "frame " << t << " part " << k;
    }
  }

  // A directory that itself holds meta.json is treated as a single frame.
  const std::string one = (dir / "one.csv").string();
  const RunResult single = run_cli(
      dir, "fit --in " + (fs::path(rdir) / "frame_0000").string() + " --out " +
               one + " --temperature 0.05");
  ASSERT_EQ(single.code, 0) << single.err;
  EXPECT_EQ(gk::load_state_csv(one).frames.size(), 1u);
  fs::remove_all(dir);
}

TEST(Fit, FailsOnMissingOrEmptyInput) {
  const fs::path dir = temp_dir("fit_bad");
  fs::create_directories(dir / "empty");
  RunResult r = run_cli(dir, "fit --in " + (dir / "empty").string() +
                                 " --out " + (dir / "x.csv").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos) << r.err;

  r = run_cli(dir, "fit --in " + (dir / "nope").string() + " --out " +
                       (dir / "x.csv").string());
  EXPECT_EQ(r.code, 1);
  fs::remove_all(dir);
}

TEST(Render, AgreesAcrossResolutions) {
  const fs::path dir = temp_dir("render");
  const std::string csv = (dir / "s.csv").string();
  ASSERT_EQ(run_cli(dir, "synth --k 1 --t 2 --seed 3 --out " + csv).code, 0);

  const std::string lo = (dir / "lo").string();
  const std::string hi = (dir / "hi").string();
  ASSERT_EQ(run_cli(dir, "render --in " + csv + " --out-dir " + lo +
                             " --size 64").code,
            0);
  const RunResult r = run_cli(dir, "render --in " + csv + " --out-dir " + hi +
                                       " --size 128");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("rendered 2 frames at 128x128"), std::string::npos);
  EXPECT_TRUE(fs::exists(fs::path(hi) / "manifest.json"));

  auto peak_center = [](const gk::Heatmap& map) {
    int bi = 0, bj = 0;
    double best = -1.0;
    for (int i = 0; i < map.height; ++i) {
      for (int j = 0; j < map.width; ++j) {
        if (map.at(0, i, j) > best) {
          best = map.at(0, i, j);
          bi = i;
          bj = j;
        }
      }
    }
    return std::pair<double, double>(gk::pixel_center_x(bj, map.width),
                                     gk::pixel_center_y(bi, map.height));
  };
  const auto [lx, ly] =
      peak_center(gk::read_heatmap_dir((fs::path(lo) / "frame_0000").string()));
  const auto [hx, hy] =
      peak_center(gk::read_heatmap_dir((fs::path(hi) / "frame_0000").string()));
  EXPECT_LT(std::abs(lx - hx), 2.0 / 64.0 + 1e-12);
  EXPECT_LT(std::abs(ly - hy), 2.0 / 64.0 + 1e-12);
  fs::remove_all(dir);
}

TEST(Interp, CountsSpacingAndEndpoints) {
  const fs::path dir = temp_dir("interp");
  const std::string csv = (dir / "s.csv").string();
  ASSERT_EQ(run_cli(dir, "synth --k 2 --t 30 --seed 4 --out " + csv).code, 0);
  const gk::StateSequence src = gk::load_state_csv(csv);

  const std::string dense = (dir / "dense.csv").string();
  const RunResult r =
      run_cli(dir, "interp --in " + csv + " --steps 30 --out " + dense);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("interpolated 30 frames"), std::string::npos);

  const gk::StateSequence out = gk::load_state_csv(dense);
  ASSERT_EQ(out.frames.size(), 30u);
  EXPECT_EQ(out.dt, 1);
  EXPECT_TRUE(packed_equal(out.frames.front(), src.frames.front()));
  EXPECT_TRUE(packed_equal(out.frames.back(), src.frames.back()));

  const std::string two = (dir / "two.csv").string();
  ASSERT_EQ(run_cli(dir, "interp --in " + csv + " --steps 2 --out " + two)
                .code,
            0);
  const gk::StateSequence ends = gk::load_state_csv(two);
  ASSERT_EQ(ends.frames.size(), 2u);
  EXPECT_EQ(ends.dt, 29);
  EXPECT_TRUE(packed_equal(ends.frames.front(), src.frames.front()));
  EXPECT_TRUE(packed_equal(ends.frames.back(), src.frames.back()));

  // A span that does not divide evenly is relabeled at unit spacing.
  const std::string pair_csv = (dir / "pair.csv").string();
  gk::StateSequence pair;
  pair.frames = {src.frames.front(), src.frames.back()};
  pair.dt = 1;
  gk::save_state_csv(pair_csv, pair);
  const std::string five = (dir / "five.csv").string();
  ASSERT_EQ(run_cli(dir, "interp --in " + pair_csv + " --steps 5 --out " +
                             five).code,
            0);
  const gk::StateSequence upsampled = gk::load_state_csv(five);
  ASSERT_EQ(upsampled.frames.size(), 5u);
  EXPECT_EQ(upsampled.dt, 1);

  EXPECT_EQ(run_cli(dir, "interp --in " + csv + " --steps 1 --out " +
                             (dir / "x.csv").string()).code,
            2);
  EXPECT_EQ(run_cli(dir, "interp --in " + (dir / "missing.csv").string() +
                             " --steps 5 --out " + (dir / "x.csv").string())
                .code,
            1);
  fs::remove_all(dir);
}

TEST(Pipeline, TrainPredictEval) {
  const fs::path dir = temp_dir("pipeline");
  const std::string s1 = (dir / "s1.csv").string();
  const std::string s2 = (dir / "s2.csv").string();
  ASSERT_EQ(run_cli(dir, "synth --k 2 --t 24 --seed 1 --out " + s1).code, 0);
  ASSERT_EQ(run_cli(dir, "synth --k 2 --t 24 --seed 2 --out " + s2).code, 0);

  const std::string ckpt = (dir / "model.ckpt").string();
  const std::string loss_csv = (dir / "loss.csv").string();
  const RunResult tr = run_cli(
      dir, "train --data " + s1 + " " + s2 +
               " --layers 1 --hidden 16 --steps 8 --batch 2 --n-inputs 4"
               " --m-future 2 --seed 7 --out " + ckpt +
               " --loss-out " + loss_csv);
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_NE(tr.out.find("trained 8 steps"), std::string::npos) << tr.out;

  const gk::LstmModel model = gk::load_checkpoint(ckpt);
  EXPECT_EQ(model.parts, 2);
  EXPECT_EQ(model.layers, 1);
  EXPECT_EQ(model.hidden, 16);

  const std::vector<std::string> loss_lines = lines_of(slurp(loss_csv));
  ASSERT_EQ(loss_lines.size(), 9u);
  EXPECT_EQ(loss_lines[0], "step,loss");
  for (std::size_t i = 1; i < loss_lines.size(); ++i) {
    const std::string& line = loss_lines[i];
    const std::size_t comma = line.find(',');
    ASSERT_NE(comma, std::string::npos);
    EXPECT_EQ(line.substr(0, comma), std::to_string(i - 1));
    EXPECT_TRUE(std::isfinite(std::stod(line.substr(comma + 1))));
  }

  const json manifest = json::parse(slurp(dir / "model.ckpt.manifest.json"));
  EXPECT_EQ(manifest.at("command"), "train");
  EXPECT_EQ(manifest.at("inputs").size(), 2u);

  const gk::StateSequence full = gk::load_state_csv(s1);
  gk::StateSequence seed;
  seed.frames.assign(full.frames.begin(), full.frames.begin() + 4);
  const std::string seed_csv = (dir / "seed.csv").string();
  gk::save_state_csv(seed_csv, seed);

  const std::string pred_csv = (dir / "pred.csv").string();
  const RunResult pr = run_cli(dir, "predict --ckpt " + ckpt + " --seed-csv " +
                                        seed_csv + " --horizon 10 --out " +
                                        pred_csv);
  ASSERT_EQ(pr.code, 0) << pr.err;
  EXPECT_NE(pr.out.find("rolled out 4+10 = 14 frames"), std::string::npos);
  EXPECT_EQ(gk::load_state_csv(pred_csv).frames.size(), 14u);

  gk::StateSequence ref;
  ref.frames.assign(full.frames.begin(), full.frames.begin() + 14);
  const std::string ref_csv = (dir / "ref.csv").string();
  gk::save_state_csv(ref_csv, ref);

  const std::string met = (dir / "metrics.csv").string();
  const RunResult ev = run_cli(dir, "eval --pred " + pred_csv + " --ref " +
                                        ref_csv + " --out " + met +
                                        " --size 64");
  ASSERT_EQ(ev.code, 0) << ev.err;
  const std::vector<std::string> rows = lines_of(slurp(met));
  ASSERT_EQ(rows.size(), 16u);
  EXPECT_EQ(rows[0], "frame,psnr_db,ssim");
  EXPECT_EQ(rows[15].substr(0, 5), "mean,");
  const std::vector<std::string> srows = lines_of(slurp(met + ".state_mse.csv"));
  ASSERT_EQ(srows.size(), 16u);
  EXPECT_EQ(srows[0], "frame,state_mse");
  EXPECT_NE(ev.out.find("psnr_mean_db="), std::string::npos);

  // Evaluating a sequence against itself pins the metric ceilings.
  const std::string self_met = (dir / "self.csv").string();
  const RunResult self = run_cli(dir, "eval --pred " + ref_csv + " --ref " +
                                          ref_csv + " --out " + self_met);
  ASSERT_EQ(self.code, 0) << self.err;
  EXPECT_EQ(self.out,
            "psnr_mean_db=99.000000 ssim_mean=1.000000 state_mse_mean=0\n");
  fs::remove_all(dir);
}

TEST(Predict, RejectsMismatchedSeed) {
  const fs::path dir = temp_dir("predict_bad");
  const std::string ckpt = (dir / "m.ckpt").string();
  gk::save_checkpoint(ckpt, gk::init_lstm(2, 0, 1, 8));

  const std::string seed_csv = (dir / "seed3.csv").string();
  ASSERT_EQ(run_cli(dir, "synth --k 3 --t 4 --seed 2 --out " + seed_csv).code,
            0);
  const RunResult r = run_cli(dir, "predict --ckpt " + ckpt + " --seed-csv " +
                                       seed_csv + " --horizon 3 --out " +
                                       (dir / "p.csv").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("shape_mismatch"), std::string::npos) << r.err;
  fs::remove_all(dir);
}

TEST(Eval, FrameCountMismatchFails) {
  const fs::path dir = temp_dir("eval_bad");
  const std::string a = (dir / "a.csv").string();
  const std::string b = (dir / "b.csv").string();
  ASSERT_EQ(run_cli(dir, "synth --k 2 --t 5 --seed 1 --out " + a).code, 0);
  ASSERT_EQ(run_cli(dir, "synth --k 2 --t 6 --seed 1 --out " + b).code, 0);
  const RunResult r = run_cli(dir, "eval --pred " + a + " --ref " + b +
                                       " --out " + (dir / "m.csv").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("frame counts differ"), std::string::npos) << r.err;
  fs::remove_all(dir);
}

TEST(Usage, ExitCodes) {
  const fs::path dir = temp_dir("usage");
  EXPECT_EQ(run_cli(dir, "").code, 2);
  EXPECT_EQ(run_cli(dir, "bogus").code, 2);
  EXPECT_EQ(run_cli(dir, "--help").code, 0);
  EXPECT_EQ(run_cli(dir, "synth --kind wobble --out x.csv").code, 2);
  EXPECT_EQ(run_cli(dir, "synth --k 3 --t 12").code, 2);  // --out required
  EXPECT_EQ(run_cli(dir, "train --data a.csv --n-inputs 1 --out m.ckpt").code,
            2);
  EXPECT_EQ(run_cli(dir, "eval --pred a --ref b --out c --size 10").code, 2);
  fs::remove_all(dir);
}
