// gausskey: batch tool for landmark trajectory generation, Gaussian map
// fitting, rendering, interpolation, residual-LSTM training, rollout, and
// evaluation. Exit codes: 0 success, 1 runtime or data error, 2 usage error.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gausskey/common.hpp"
#include "gausskey/core_state.hpp"
#include "gausskey/dynamics.hpp"
#include "gausskey/heatmap.hpp"
#include "gausskey/interpolate.hpp"
#include "gausskey/metrics.hpp"
#include "gausskey/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  long long ms() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void write_manifest(const std::string& path, const std::string& command,
                    const json& flags, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, long long ms) {
  json m;
  m["command"] = command;
  m["version"] = gausskey::kVersion;
  m["flags"] = flags;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["wall_clock_ms"] = ms;
  std::ofstream os(path, std::ios::binary);
  gausskey::require(static_cast<bool>(os), gausskey::errc::io_error,
                    "cannot write " + path);
  os << m.dump(2) << "\n";
}

std::string frame_dir_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d", t);
  return buf;
}

void render_frames(const gausskey::StateSequence& seq, const std::string& dir,
                   int size, double eps) {
  fs::create_directories(dir);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const gausskey::Heatmap map =
        gausskey::render_heatmap(seq.frames[t], size, size, eps);
    gausskey::write_heatmap_dir(
        (fs::path(dir) / frame_dir_name(static_cast<int>(t))).string(), map);
  }
}

// Frames are subdirectories holding part_*.pgm plus meta.json, ordered by
// name; a directory that itself holds meta.json is a single frame.
std::vector<fs::path> heatmap_frame_dirs(const std::string& dir) {
  gausskey::require(fs::is_directory(dir), gausskey::errc::io_error,
                    "not a directory: " + dir);
  if (fs::exists(fs::path(dir) / "meta.json")) return {fs::path(dir)};
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  gausskey::require(!out.empty(), gausskey::errc::io_error,
                    "no heatmap frames under " + dir);
  return out;
}

struct SynthArgs {
  std::string kind = "linear";
  int parts = 4;
  int frames = 30;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  std::string cov_mode = "fixed";
  std::string out;
  std::string render_dir;
  int size = 64;
};

int cmd_synth(const SynthArgs& a) {
  Timer timer;
  gausskey::TrajectorySpec spec;
  spec.kind = gausskey::trajectory_kind_from(a.kind);
  spec.parts = a.parts;
  spec.frames = a.frames;
  spec.seed = a.seed;
  spec.noise_sigma = a.noise_sigma;
  spec.covariance_mode = gausskey::covariance_mode_from(a.cov_mode);
  const gausskey::StateSequence seq = gausskey::generate(spec);
  gausskey::save_state_csv(a.out, seq);
  std::vector<std::string> outputs{a.out};
  if (!a.render_dir.empty()) {
    render_frames(seq, a.render_dir, a.size, 0.0);
    outputs.push_back(a.render_dir);
  }
  json flags{{"kind", a.kind},
             {"k", a.parts},
             {"t", a.frames},
             {"seed", a.seed},
             {"noise_sigma", a.noise_sigma},
             {"cov_mode", a.cov_mode},
             {"size", a.size}};
  write_manifest(a.out + ".manifest.json", "synth", flags, {}, outputs,
                 timer.ms());
  std::cout << "wrote " << seq.frames.size() << " frames to " << a.out << "\n";
  return 0;
}

struct FitArgs {
  std::string in_dir;
  std::string out;
  double eps = 1e-4;
  double temperature = 1.0;
};

int cmd_fit(const FitArgs& a) {
  Timer timer;
  const std::vector<fs::path> dirs = heatmap_frame_dirs(a.in_dir);
  gausskey::StateSequence seq;
  int parts = -1, height = -1, width = -1;
  for (std::size_t t = 0; t < dirs.size(); ++t) {
    const gausskey::Heatmap raw = gausskey::read_heatmap_dir(dirs[t].string());
    if (t == 0) {
      parts = raw.parts;
      height = raw.height;
      width = raw.width;
    } else {
      gausskey::require(
          raw.parts == parts && raw.height == height && raw.width == width,
          gausskey::errc::shape_mismatch,
          "frame " + dirs[t].filename().string() +
              " does not match the first frame's shape",
          static_cast<long>(t));
    }
    const gausskey::ActivationMap prob =
        gausskey::softmax_normalize(raw, a.temperature);
    std::vector<gausskey::Gaussian2> fits;
    fits.reserve(parts);
    for (int k = 0; k < parts; ++k) {
      fits.push_back(gausskey::fit_gaussian(prob, k, a.eps));
    }
    seq.frames.push_back(gausskey::pack_state(fits));
  }
  gausskey::save_state_csv(a.out, seq);
  json flags{{"eps", a.eps}, {"temperature", a.temperature}};
  write_manifest(a.out + ".manifest.json", "fit", flags, {a.in_dir}, {a.out},
                 timer.ms());
  std::cout << "fit " << seq.frames.size() << " frames (" << parts
            << " parts) to " << a.out << "\n";
  return 0;
}

struct RenderArgs {
  std::string in;
  std::string out_dir;
  int size = 64;
  double eps = 0.0;
};

int cmd_render(const RenderArgs& a) {
  Timer timer;
  const gausskey::StateSequence seq = gausskey::load_state_csv(a.in);
  render_frames(seq, a.out_dir, a.size, a.eps);
  json flags{{"size", a.size}, {"eps", a.eps}};
  write_manifest((fs::path(a.out_dir) / "manifest.json").string(), "render",
                 flags, {a.in}, {a.out_dir}, timer.ms());
  std::cout << "rendered " << seq.frames.size() << " frames at " << a.size
            << "x" << a.size << " to " << a.out_dir << "\n";
  return 0;
}

struct InterpArgs {
  std::string in;
  int steps = 2;
  std::string out;
};

int cmd_interp(const InterpArgs& a) {
  Timer timer;
  const gausskey::StateSequence ends = gausskey::load_state_csv(a.in);
  gausskey::require(ends.frames.size() >= 2, gausskey::errc::invalid_argument,
                    "need at least 2 frames to interpolate");
  gausskey::StateSequence seq = gausskey::interpolate_sequence(
      ends.frames.front(), ends.frames.back(), a.steps);
  // Time labels are integers, so keep the rescaled spacing only when it is
  // exact; otherwise the output is relabeled at unit spacing.
  const long span = static_cast<long>(ends.dt) *
                    static_cast<long>(ends.frames.size() - 1);
  seq.dt = span % (a.steps - 1) == 0
               ? static_cast<int>(span / (a.steps - 1))
               : 1;
  gausskey::save_state_csv(a.out, seq);
  json flags{{"steps", a.steps}};
  write_manifest(a.out + ".manifest.json", "interp", flags, {a.in}, {a.out},
                 timer.ms());
  std::cout << "interpolated " << a.steps << " frames to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::vector<std::string> data;
  int n_inputs = 10;
  int m_future = 10;
  int steps = 1000;
  int batch = 8;
  double lr = 1e-4;
  double weight_decay = 5e-6;
  double grad_clip = 5.0;
  int average_from = -1;
  std::uint64_t seed = 0;
  int layers = 3;
  int hidden = 256;
  std::string out;
  std::string loss_out;
};

int cmd_train(const TrainArgs& a) {
  Timer timer;
  std::vector<gausskey::StateSequence> dataset;
  dataset.reserve(a.data.size());
  int parts = -1;
  for (const std::string& path : a.data) {
    dataset.push_back(gausskey::load_state_csv(path));
    const int k = dataset.back().frames.front().num_parts();
    if (parts < 0) parts = k;
    gausskey::require(k == parts, gausskey::errc::shape_mismatch,
                      "landmark count differs across dataset: " + path);
  }
  gausskey::LstmModel model =
      gausskey::init_lstm(parts, a.seed, a.layers, a.hidden);
  gausskey::RolloutConfig rcfg;
  rcfg.n_inputs = a.n_inputs;
  rcfg.m_future = a.m_future;
  gausskey::TrainConfig tcfg;
  tcfg.learning_rate = a.lr;
  tcfg.weight_decay = a.weight_decay;
  tcfg.batch_size = a.batch;
  tcfg.max_steps = a.steps;
  tcfg.seed = a.seed;
  tcfg.grad_clip = a.grad_clip;
  tcfg.average_from = a.average_from;
  const std::vector<double> losses =
      gausskey::train(model, dataset, rcfg, tcfg);
  gausskey::save_checkpoint(a.out, model);
  std::vector<std::string> outputs{a.out};
  if (!a.loss_out.empty()) {
    std::ofstream os(a.loss_out, std::ios::binary);
    gausskey::require(static_cast<bool>(os), gausskey::errc::io_error,
                      "cannot write " + a.loss_out);
    os << "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, losses[i]);
      os << buf;
    }
    outputs.push_back(a.loss_out);
  }
  json flags{{"n_inputs", a.n_inputs},   {"m_future", a.m_future},
             {"steps", a.steps},         {"batch", a.batch},
             {"lr", a.lr},               {"weight_decay", a.weight_decay},
             {"grad_clip", a.grad_clip}, {"average_from", a.average_from},
             {"seed", a.seed},           {"layers", a.layers},
             {"hidden", a.hidden}};
  write_manifest(a.out + ".manifest.json", "train", flags, a.data, outputs,
                 timer.ms());
  std::cout << "trained " << a.steps << " steps, final loss "
            << (losses.empty() ? 0.0 : losses.back()) << ", checkpoint "
            << a.out << "\n";
  return 0;
}

struct PredictArgs {
  std::string ckpt;
  std::string seed_csv;
  int horizon = 0;
  std::string out;
};

int cmd_predict(const PredictArgs& a) {
  Timer timer;
  const gausskey::LstmModel model = gausskey::load_checkpoint(a.ckpt);
  const gausskey::StateSequence seed = gausskey::load_state_csv(a.seed_csv);
  gausskey::StateSequence out =
      gausskey::rollout(model, seed.frames, a.horizon);
  out.dt = seed.dt;
  gausskey::save_state_csv(a.out, out);
  json flags{{"horizon", a.horizon}};
  write_manifest(a.out + ".manifest.json", "predict", flags,
                 {a.ckpt, a.seed_csv}, {a.out}, timer.ms());
  std::cout << "rolled out " << seed.frames.size() << "+" << a.horizon << " = "
            << out.frames.size() << " frames to " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string pred;
  std::string ref;
  std::string out;
  int size = 64;
  double eps = 0.0;
};

gausskey::Image to_image(const gausskey::Heatmap& map) {
  gausskey::Image im = gausskey::Image::zeros(map.height, map.width);
  const long cells = static_cast<long>(map.height) * map.width;
  for (long c = 0; c < cells; ++c) {
    double acc = 0.0;
    for (int k = 0; k < map.parts; ++k) {
      acc = std::max(acc, map.values[static_cast<std::size_t>(k) * cells + c]);
    }
    im.values[static_cast<std::size_t>(c)] = acc;
  }
  return im;
}

int cmd_eval(const EvalArgs& a) {
  Timer timer;
  const gausskey::StateSequence pred = gausskey::load_state_csv(a.pred);
  const gausskey::StateSequence ref = gausskey::load_state_csv(a.ref);
  gausskey::require(pred.frames.size() == ref.frames.size(),
                    gausskey::errc::shape_mismatch,
                    "frame counts differ between prediction and reference");
  std::vector<gausskey::FrameMetrics> rows;
  std::vector<double> state_mse;
  rows.reserve(pred.frames.size());
  for (std::size_t t = 0; t < pred.frames.size(); ++t) {
    gausskey::require(
        pred.frames[t].num_parts() == ref.frames[t].num_parts(),
        gausskey::errc::shape_mismatch,
        "landmark counts differ between prediction and reference",
        static_cast<long>(t));
    const gausskey::Image ip =
        to_image(gausskey::render_heatmap(pred.frames[t], a.size, a.size,
                                          a.eps));
    const gausskey::Image ir =
        to_image(gausskey::render_heatmap(ref.frames[t], a.size, a.size,
                                          a.eps));
    gausskey::FrameMetrics fm;
    fm.frame = static_cast<long>(t);
    fm.psnr_db = gausskey::psnr(ip, ir);
    fm.ssim = gausskey::ssim(ip, ir);
    rows.push_back(fm);
    const std::vector<double> pp = pred.frames[t].packed();
    const std::vector<double> pr = ref.frames[t].packed();
    double sq = 0.0;
    for (std::size_t i = 0; i < pp.size(); ++i) {
      const double d = pp[i] - pr[i];
      sq += d * d;
    }
    state_mse.push_back(sq / static_cast<double>(pp.size()));
  }
  {
    std::ofstream os(a.out, std::ios::binary);
    gausskey::require(static_cast<bool>(os), gausskey::errc::io_error,
                      "cannot write " + a.out);
    gausskey::write_metric_csv(os, rows);
  }
  const std::string state_path = a.out + ".state_mse.csv";
  double state_mean = 0.0;
  {
    std::ofstream os(state_path, std::ios::binary);
    gausskey::require(static_cast<bool>(os), gausskey::errc::io_error,
                      "cannot write " + state_path);
    os << "frame,state_mse\n";
    char buf[64];
    for (std::size_t t = 0; t < state_mse.size(); ++t) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", t, state_mse[t]);
      os << buf;
      state_mean += state_mse[t];
    }
    state_mean /= static_cast<double>(state_mse.size());
    std::snprintf(buf, sizeof(buf), "mean,%.17g\n", state_mean);
    os << buf;
  }
  json flags{{"size", a.size}, {"eps", a.eps}};
  write_manifest(a.out + ".manifest.json", "eval", flags, {a.pred, a.ref},
                 {a.out, state_path}, timer.ms());
  double psnr_mean = 0.0, ssim_mean = 0.0;
  for (const gausskey::FrameMetrics& fm : rows) {
    psnr_mean += gausskey::capped_psnr(fm.psnr_db);
    ssim_mean += fm.ssim;
  }
  psnr_mean /= static_cast<double>(rows.size());
  ssim_mean /= static_cast<double>(rows.size());
  std::printf("psnr_mean_db=%.6f ssim_mean=%.6f state_mse_mean=%.17g\n",
              psnr_mean, ssim_mean, state_mean);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("GAUSSKEY_THREADS")) {
    const int n = std::atoi(threads);
    if (n >= 1) Eigen::setNbThreads(n);
  }

  CLI::App app{"gausskey: Gaussian landmark trajectories, fitting, dynamics"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* s = app.add_subcommand("synth", "generate a synthetic trajectory");
  s->add_option("--kind", synth.kind, "trajectory family")
      ->check(CLI::IsMember({"linear", "lissajous", "pendulum"}));
  s->add_option("--k", synth.parts, "landmark count")->check(CLI::Range(1, 4096));
  s->add_option("--t", synth.frames, "frame count")
      ->check(CLI::Range(2, 1000000));
  s->add_option("--seed", synth.seed, "RNG seed");
  s->add_option("--noise-sigma", synth.noise_sigma, "mean jitter sigma")
      ->check(CLI::NonNegativeNumber);
  s->add_option("--cov-mode", synth.cov_mode, "covariance evolution")
      ->check(CLI::IsMember({"fixed", "breathing", "rotating"}));
  s->add_option("--out", synth.out, "output state CSV")->required();
  s->add_option("--render-dir", synth.render_dir, "also render PGM frames");
  s->add_option("--size", synth.size, "render resolution")
      ->check(CLI::Range(1, 4096));

  FitArgs fit;
  CLI::App* f = app.add_subcommand("fit", "fit landmarks to heatmap frames");
  f->add_option("--in", fit.in_dir, "heatmap frame directory")->required();
  f->add_option("--out", fit.out, "output state CSV")->required();
  f->add_option("--eps", fit.eps, "covariance regularizer")
      ->check(CLI::NonNegativeNumber);
  f->add_option("--temperature", fit.temperature, "softmax temperature")
      ->check(CLI::PositiveNumber);

  RenderArgs render;
  CLI::App* r = app.add_subcommand("render", "render state CSV to PGM frames");
  r->add_option("--in", render.in, "input state CSV")->required();
  r->add_option("--out-dir", render.out_dir, "output directory")->required();
  r->add_option("--size", render.size, "resolution")
      ->check(CLI::Range(1, 4096));
  r->add_option("--eps", render.eps, "covariance regularizer")
      ->check(CLI::NonNegativeNumber);

  InterpArgs interp;
  CLI::App* i = app.add_subcommand(
      "interp", "interpolate between the first and last frame of a CSV");
  i->add_option("--in", interp.in, "endpoint state CSV")->required();
  i->add_option("--steps", interp.steps, "output frame count")
      ->check(CLI::Range(2, 1000000));
  i->add_option("--out", interp.out, "output state CSV")->required();

  TrainArgs train;
  CLI::App* t = app.add_subcommand("train", "train the residual LSTM");
  t->add_option("--data", train.data, "training state CSVs")
      ->required()
      ->expected(-1);
  t->add_option("--n-inputs", train.n_inputs, "teacher-forced prefix")
      ->check(CLI::Range(2, 1000000));
  t->add_option("--m-future", train.m_future, "self-fed suffix")
      ->check(CLI::Range(0, 1000000));
  t->add_option("--steps", train.steps, "optimizer steps")
      ->check(CLI::Range(1, 100000000));
  t->add_option("--batch", train.batch, "window batch size")
      ->check(CLI::Range(1, 65536));
  t->add_option("--lr", train.lr, "Adam learning rate")
      ->check(CLI::PositiveNumber);
  t->add_option("--weight-decay", train.weight_decay, "decoupled decay")
      ->check(CLI::NonNegativeNumber);
  t->add_option("--grad-clip", train.grad_clip,
                "global gradient norm cap, <= 0 disables");
  t->add_option("--average-from", train.average_from,
                "tail-average iterates from this step, < 0 disables");
  t->add_option("--seed", train.seed, "RNG seed");
  t->add_option("--layers", train.layers, "LSTM layers")
      ->check(CLI::Range(1, 64));
  t->add_option("--hidden", train.hidden, "hidden width")
      ->check(CLI::Range(1, 65536));
  t->add_option("--out", train.out, "output checkpoint")->required();
  t->add_option("--loss-out", train.loss_out, "per-step loss CSV");

  PredictArgs predict;
  CLI::App* p = app.add_subcommand("predict", "roll out a trained model");
  p->add_option("--ckpt", predict.ckpt, "checkpoint path")->required();
  p->add_option("--seed-csv", predict.seed_csv, "seed state CSV")->required();
  p->add_option("--horizon", predict.horizon, "predicted frame count")
      ->check(CLI::Range(0, 1000000));
  p->add_option("--out", predict.out, "output state CSV")->required();

  EvalArgs eval;
  CLI::App* e = app.add_subcommand(
      "eval", "compare prediction and reference CSVs");
  e->add_option("--pred", eval.pred, "predicted state CSV")->required();
  e->add_option("--ref", eval.ref, "reference state CSV")->required();
  e->add_option("--out", eval.out, "metric CSV")->required();
  e->add_option("--size", eval.size, "render resolution for PSNR/SSIM")
      ->check(CLI::Range(11, 4096));
  e->add_option("--eps", eval.eps, "covariance regularizer for rendering")
      ->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
    if (s->parsed()) return cmd_synth(synth);
    if (f->parsed()) return cmd_fit(fit);
    if (r->parsed()) return cmd_render(render);
    if (i->parsed()) return cmd_interp(interp);
    if (t->parsed()) return cmd_train(train);
    if (p->parsed()) return cmd_predict(predict);
    if (e->parsed()) return cmd_eval(eval);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  } catch (const gausskey::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
