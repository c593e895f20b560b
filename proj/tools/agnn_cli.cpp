// Command-line front end: gen-data, train, infer, eval.
//
// Exit codes: 0 success, 1 bad arguments or config, 2 I/O error or missing
// data, 3 training diverged, 4 checkpoint incompatible with config or input.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "agnn/config.hpp"
#include "agnn/image.hpp"
#include "agnn/pipeline.hpp"

namespace fs = std::filesystem;
using namespace agnn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kDiverged = 3, kMismatch = 4 };

struct Failure {
  int code;
  std::string message;
};

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  if (!fs::exists(path)) throw Failure{kIo, "config file not found: " + path};
  try {
    return RunConfig::load(path);
  } catch (const ConfigError& e) {
    throw Failure{kUsage, e.what()};
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  if (!fs::is_regular_file(path)) throw Failure{kIo, "checkpoint not found: " + path};
  try {
    return Checkpoint::load(path);
  } catch (const CheckpointError& e) {
    throw Failure{kMismatch, e.what()};
  } catch (const CheckpointMismatch& e) {
    throw Failure{kMismatch, e.what()};
  }
}

// A config passed alongside a checkpoint must describe the same architecture.
void check_compatible(const Checkpoint& ck, const RunConfig& rc) {
  const ModelConfig m = rc.model();
  auto mismatch = [](const char* key, int want, int have) {
    return Failure{kMismatch, std::string("config ") + key + "=" + std::to_string(want) + " but checkpoint has " +
                                  std::to_string(have)};
  };
  if (m.encoder.channels != ck.config.encoder.channels)
    throw mismatch("channels", m.encoder.channels, ck.config.encoder.channels);
  if (m.encoder.downsample != ck.config.encoder.downsample)
    throw mismatch("downsample", m.encoder.downsample, ck.config.encoder.downsample);
  if (m.graph.iterations != ck.config.graph.iterations)
    throw mismatch("k_iters", m.graph.iterations, ck.config.graph.iterations);
}

void check_frames(const std::vector<Image>& frames, const Checkpoint& ck) {
  const int d = ck.config.encoder.downsample;
  for (const Image& f : frames) {
    if (f.height % d != 0 || f.width % d != 0) {
      throw Failure{kMismatch, "frame size " + std::to_string(f.height) + "x" + std::to_string(f.width) +
                                   " is not divisible by the checkpoint downsample factor " + std::to_string(d)};
    }
  }
}

std::vector<Sequence> load_split(const std::string& data, const std::string& split, bool require_masks) {
  DatasetManifest manifest;
  try {
    manifest = DatasetManifest::load(data);
  } catch (const std::runtime_error& e) {
    throw Failure{kIo, e.what()};
  }
  std::vector<Sequence> out;
  for (const ManifestEntry& e : manifest.split(split)) {
    try {
      out.push_back(load_sequence(manifest.directory(e), require_masks));
    } catch (const FormatError& err) {
      throw Failure{kIo, manifest.directory(e).string() + ": " + err.what()};
    } catch (const std::runtime_error& err) {
      throw Failure{kIo, err.what()};
    }
  }
  if (out.empty()) throw Failure{kIo, "split '" + split + "' is empty in " + data};
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

int cmd_gen_data(const std::string& config_path, const std::string& out) {
  const RunConfig rc = load_config(config_path);
  const fs::path dir = out.empty() ? fs::path(rc.out_dir) : fs::path(out);
  try {
    const DatasetManifest m = generate_dataset(rc.dataset(), rc.seed, dir);
    std::cerr << "wrote " << m.entries.size() << " sequences to " << dir.string() << "\n";
  } catch (const fs::filesystem_error& e) {
    throw Failure{kIo, e.what()};
  } catch (const std::runtime_error& e) {
    throw Failure{kIo, e.what()};
  }
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out) {
  const RunConfig rc = load_config(config_path);
  const std::vector<Sequence> videos = load_split(data, "train", true);
  for (const Sequence& s : videos) {
    if (static_cast<int>(s.frames.size()) < rc.n_prime_train) {
      throw Failure{kUsage, "video " + s.id + " has fewer frames than n_prime_train"};
    }
    for (const Image& f : s.frames) {
      if (f.height % rc.downsample != 0 || f.width % rc.downsample != 0) {
        throw Failure{kUsage, "frames of " + s.id + " are not divisible by downsample"};
      }
    }
  }
  const fs::path dir = out.empty() ? fs::path(rc.out_dir) : fs::path(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{kIo, "cannot create " + dir.string() + ": " + ec.message()};

  TrainResult result;
  try {
    result = train(videos, rc.model(), rc.training(), [&](int it, double loss) {
      if ((it + 1) % 50 == 0 || it + 1 == rc.iters) {
        std::cerr << "iteration " << it + 1 << "/" << rc.iters << " loss " << fmt(loss) << "\n";
      }
    });
  } catch (const TrainingDiverged& e) {
    throw Failure{kDiverged, e.what()};
  } catch (const NonFiniteError& e) {
    throw Failure{kDiverged, e.what()};
  }

  std::string log;
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    log += std::to_string(i + 1) + "," + fmt(result.loss_trace[i]) + "\n";
  }
  try {
    result.checkpoint.save(dir / "checkpoint.agnn");
    write_file(dir / "loss.csv", log);
  } catch (const std::runtime_error& e) {
    throw Failure{kIo, e.what()};
  }
  std::cerr << "wrote " << (dir / "checkpoint.agnn").string() << " and " << (dir / "loss.csv").string() << "\n";
  return kOk;
}

int cmd_infer(const std::string& checkpoint, const std::string& config_path, const std::string& video_dir,
              const std::string& out, int n_prime, const std::string& task) {
  std::optional<RunConfig> rc;
  if (!config_path.empty()) rc = load_config(config_path);
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (rc) check_compatible(ck, *rc);

  Sequence seq;
  try {
    seq = load_sequence(video_dir, false);
  } catch (const FormatError& e) {
    throw Failure{kIo, video_dir + ": " + e.what()};
  } catch (const std::runtime_error& e) {
    throw Failure{kIo, e.what()};
  }
  if (seq.frames.empty()) throw Failure{kIo, "no frames in " + video_dir};
  check_frames(seq.frames, ck);

  const std::vector<Mask> masks = task == "coseg" ? predict_coseg_masks(seq.frames, ck, n_prime)
                                                  : predict_video_masks(seq.frames, ck, n_prime);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Failure{kIo, "cannot create " + out + ": " + ec.message()};
  try {
    for (std::size_t k = 0; k < masks.size(); ++k) write_pgm(mask_path(out, static_cast<int>(k)), masks[k]);
  } catch (const std::runtime_error& e) {
    throw Failure{kIo, e.what()};
  }
  std::cerr << "wrote " << masks.size() << " masks to " << out << "\n";
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split,
             const std::string& predictions, int n_prime) {
  const std::vector<Sequence> videos = load_split(data, split, true);
  EvalReport report;
  if (!predictions.empty()) {
    std::vector<std::vector<Mask>> preds;
    for (const Sequence& s : videos) {
      std::vector<Mask> p;
      for (std::size_t k = 0; k < s.frames.size(); ++k) {
        const fs::path path = mask_path(fs::path(predictions) / s.id, static_cast<int>(k));
        try {
          p.push_back(read_pgm(path));
        } catch (const std::runtime_error& e) {
          throw Failure{kIo, path.string() + ": " + e.what()};
        }
      }
      preds.push_back(std::move(p));
    }
    try {
      report = evaluate_predictions(videos, preds);
    } catch (const ShapeError& e) {
      throw Failure{kMismatch, e.what()};
    }
  } else {
    const Checkpoint ck = load_checkpoint(checkpoint);
    for (const Sequence& s : videos) check_frames(s.frames, ck);
    report = evaluate(videos, ck, n_prime);
  }
  for (const VideoScore& v : report.videos) std::cout << v.id << "," << fmt(v.j) << "," << fmt(v.f) << "\n";
  std::cout << "mean," << fmt(report.mean_j) << "," << fmt(report.mean_f) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attentive graph neural network for zero-shot video object segmentation"};
  app.require_subcommand(1);

  std::string config, out, data, checkpoint, video_dir, split = "test", task = "video", predictions;
  int n_prime = 5;

  auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset");
  gen->add_option("--config", config, "key=value config file");
  gen->add_option("--out", out, "output directory (overrides out_dir)");

  auto* tr = app.add_subcommand("train", "Train a model on the train split");
  tr->add_option("--config", config, "key=value config file");
  tr->add_option("--data", data, "dataset directory")->required();
  tr->add_option("--out", out, "directory for checkpoint.agnn and loss.csv (overrides out_dir)");

  auto* inf = app.add_subcommand("infer", "Segment one frame directory");
  inf->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  inf->add_option("--config", config, "optional config checked against the checkpoint");
  inf->add_option("--video-dir", video_dir, "directory of frame_KKKK.ppm")->required();
  inf->add_option("--out", out, "directory for mask_KKKK.pgm")->required();
  inf->add_option("--n-prime", n_prime, "frames per graph")->check(CLI::PositiveNumber);
  inf->add_option("--task", task, "video or coseg")->check(CLI::IsMember({"video", "coseg"}));

  auto* ev = app.add_subcommand("eval", "Score a split; prints id,J,F rows and a final mean row");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file");
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--split", split, "split name");
  ev->add_option("--predictions", predictions, "score masks from <dir>/<video_id>/ instead of running a model");
  ev->add_option("--n-prime", n_prime, "frames per graph")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(config, out);
    if (*tr) return cmd_train(config, data, out);
    if (*inf) return cmd_infer(checkpoint, config, video_dir, out, n_prime, task);
    if (*ev) {
      if (checkpoint.empty() && predictions.empty()) throw Failure{kUsage, "eval needs --checkpoint or --predictions"};
      return cmd_eval(checkpoint, data, split, predictions, n_prime);
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}
