#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "agnn/checkpoint.hpp"
#include "agnn/synthdata.hpp"

namespace agnn {

/// Test-time partition of N frames into T = ceil(N / N') strided subsets
/// {t, t + T, t + 2T, ...}; the trailing subsets may be one frame short.
struct InferenceSchedule {
  int num_frames = 0;
  int n_prime = 0;
  int interval = 0;  // T
  std::vector<std::vector<int>> subsets;

  static InferenceSchedule make(int num_frames, int n_prime);
};

/// Groups of the other N-1 images for incremental co-segmentation of
/// `target`: T = ceil((N-1)/(N'-1)) contiguous groups in dataset order,
/// leading groups absorbing the remainder. Empty when N = 1.
std::vector<std::vector<int>> iocs_groups(int num_images, int target, int n_prime);

/// Foreground maps at feature resolution, one per frame, in input order.
template <typename S>
std::vector<Tensor<S>> infer_video(std::span<const Tensor<S>> frames, const ModelWeights<Tensor<S>>& weights,
                                   const ModelConfig& config, int n_prime);

/// Co-segments image `target` by carrying its node state through successive
/// groups of the other images; the raw state (no readout) is carried.
template <typename S>
Tensor<S> iocs_infer(std::span<const Tensor<S>> images, int target, const ModelWeights<Tensor<S>>& weights,
                     const ModelConfig& config, int n_prime);

/// Full-resolution binary masks for a sequence: feature-resolution maps are
/// bilinearly upsampled to the frame size and thresholded at 0.5.
std::vector<Mask> predict_video_masks(std::span<const Image> frames, const Checkpoint& checkpoint, int n_prime);
std::vector<Mask> predict_coseg_masks(std::span<const Image> images, const Checkpoint& checkpoint, int n_prime);

struct TrainConfig {
  int videos_per_batch = 2;
  int n_prime = 3;
  int iterations = 2000;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  bool alternate = true;  // a static-image step precedes every dynamic step
  int static_batch = 6;
  std::uint64_t seed = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(int iteration)
      : std::runtime_error("loss diverged at iteration " + std::to_string(iteration)), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss_trace;  // dynamic-step loss per iteration, before the update
};

using ProgressFn = std::function<void(int iteration, double loss)>;

/// SGD with momentum on the batch-mean weighted BCE. Deterministic in
/// (videos, configs, seed).
TrainResult train(std::span<const Sequence> videos, const ModelConfig& model, const TrainConfig& config,
                  const ProgressFn& progress = {});

/// One training graph: frames `frames` of sequence `video`.
struct ClipRef {
  int video = 0;
  std::vector<int> frames;
};

struct LossAndGradient {
  double loss = 0;
  ModelWeights<Tensor<double>> gradient;
};

/// Batch-mean weighted BCE of the full model over one graph per clip, with
/// its gradient. Ground truth is block-downsampled to feature resolution.
LossAndGradient dynamic_loss(std::span<const Sequence> videos, std::span<const ClipRef> clips,
                             const ModelWeights<Tensor<double>>& weights, const ModelConfig& config);

struct VideoScore {
  std::string id;
  double j = 0;
  double f = 0;
};

struct EvalReport {
  std::vector<VideoScore> videos;
  double mean_j = 0;
  double mean_f = 0;
};

/// Per-video means of per-frame J and F, and their dataset means.
EvalReport evaluate_predictions(std::span<const Sequence> truth, std::span<const std::vector<Mask>> predictions);
/// Runs the model and scores binarised feature-resolution maps against
/// ground truth block-downsampled by d; evaluate_predictions scores masks as given.
EvalReport evaluate(std::span<const Sequence> videos, const Checkpoint& checkpoint, int n_prime);

}  // namespace agnn
