#include "agnn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "agnn/metrics.hpp"

namespace agnn {

InferenceSchedule InferenceSchedule::make(int num_frames, int n_prime) {
  if (num_frames < 1) throw std::invalid_argument("inference schedule: empty video");
  if (n_prime < 1) throw std::invalid_argument("inference schedule: N' must be positive");
  InferenceSchedule s;
  s.num_frames = num_frames;
  s.n_prime = n_prime;
  s.interval = (num_frames + n_prime - 1) / n_prime;
  for (int t = 0; t < s.interval; ++t) {
    std::vector<int> subset;
    for (int i = t; i < num_frames; i += s.interval) subset.push_back(i);
    s.subsets.push_back(std::move(subset));
  }
  return s;
}

std::vector<std::vector<int>> iocs_groups(int num_images, int target, int n_prime) {
  if (num_images < 1) throw std::invalid_argument("iocs: empty image group");
  if (target < 0 || target >= num_images) {
    throw std::out_of_range("iocs: target index " + std::to_string(target) + " outside [0, " +
                            std::to_string(num_images) + ")");
  }
  if (num_images == 1) return {};
  if (n_prime < 2) throw std::invalid_argument("iocs: N' must be at least 2 when other images exist");
  std::vector<int> others;
  for (int i = 0; i < num_images; ++i) {
    if (i != target) others.push_back(i);
  }
  const int n = static_cast<int>(others.size());
  const int groups = (n + n_prime - 2) / (n_prime - 1);
  const int base = n / groups, extra = n % groups;
  std::vector<std::vector<int>> out;
  int start = 0;
  for (int g = 0; g < groups; ++g) {
    const int len = base + (g < extra ? 1 : 0);
    out.emplace_back(others.begin() + start, others.begin() + start + len);
    start += len;
  }
  return out;
}

template <typename S>
std::vector<Tensor<S>> infer_video(std::span<const Tensor<S>> frames, const ModelWeights<Tensor<S>>& weights,
                                   const ModelConfig& config, int n_prime) {
  const InferenceSchedule schedule = InferenceSchedule::make(static_cast<int>(frames.size()), n_prime);
  std::vector<Tensor<S>> out(frames.size());
  for (const std::vector<int>& subset : schedule.subsets) {
    std::vector<Tensor<S>> batch;
    for (int i : subset) batch.push_back(frames[static_cast<std::size_t>(i)]);
    std::vector<Tensor<S>> maps = predict_graph<S>(batch, weights, config);
    for (std::size_t k = 0; k < subset.size(); ++k) out[static_cast<std::size_t>(subset[k])] = std::move(maps[k]);
  }
  return out;
}

template <typename S>
Tensor<S> iocs_infer(std::span<const Tensor<S>> images, int target, const ModelWeights<Tensor<S>>& weights,
                     const ModelConfig& config, int n_prime) {
  const std::vector<std::vector<int>> groups = iocs_groups(static_cast<int>(images.size()), target, n_prime);

  auto embed = [&](int i) {
    Tape<S> tape;
    const auto enc = bind(tape, weights.encoder);
    return encode(tape.leaf(images[static_cast<std::size_t>(i)]), enc, config.encoder).value();
  };
  std::vector<Tensor<S>> initial(images.size());
  initial[static_cast<std::size_t>(target)] = embed(target);
  for (const auto& g : groups) {
    for (int i : g) initial[static_cast<std::size_t>(i)] = embed(i);
  }

  Tensor<S> carried = initial[static_cast<std::size_t>(target)];
  auto run = [&](std::vector<int> nodes) {
    nodes.push_back(target);
    std::sort(nodes.begin(), nodes.end());
    Tape<S> tape;
    const auto att = bind(tape, weights.attention);
    std::vector<Var<S>> states;
    std::size_t slot = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k] == target) slot = k;
      states.push_back(tape.leaf(nodes[k] == target ? carried : initial[static_cast<std::size_t>(nodes[k])]));
    }
    carried = run_graph<S>(states, att, config.graph)[slot].value();
  };
  if (groups.empty()) {
    run({});
  } else {
    for (const auto& g : groups) run(g);
  }

  Tape<S> tape;
  const auto head = bind(tape, weights.readout);
  return readout(tape.leaf(carried), tape.leaf(initial[static_cast<std::size_t>(target)]), head).value();
}

namespace {

std::vector<Tensor<double>> frame_tensors(std::span<const Image> frames) {
  std::vector<Tensor<double>> out;
  out.reserve(frames.size());
  for (const Image& f : frames) out.push_back(to_tensor<double>(f));
  return out;
}

Mask export_mask(const Tensor<double>& map, const Image& frame) {
  return binarize(upsample_bilinear(map, frame.height, frame.width), 0.5);
}

/// Flat list of tensor pointers in field order.
template <typename Bundle>
std::vector<Tensor<double>*> tensors_of(Bundle& b) {
  std::vector<Tensor<double>*> out;
  for_each_field(b, [&](const std::string&, Tensor<double>& t) { out.push_back(&t); });
  return out;
}

class MomentumSgd {
 public:
  MomentumSgd(const ModelWeights<Tensor<double>>& like, double lr, double momentum) : lr_(lr), momentum_(momentum) {
    velocity_ = like;
    for (Tensor<double>* t : tensors_of(velocity_)) t->flat().setZero();
  }

  void step(ModelWeights<Tensor<double>>& weights, ModelWeights<Tensor<double>>& grads) {
    const auto w = tensors_of(weights), g = tensors_of(grads), v = tensors_of(velocity_);
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k]->flat() = momentum_ * v[k]->flat() + g[k]->flat();
      w[k]->flat() -= lr_ * v[k]->flat();
    }
  }

 private:
  double lr_, momentum_;
  ModelWeights<Tensor<double>> velocity_;
};

Tensor<double> target_at(const Mask& full, int factor) { return to_tensor<double>(downsample_mask(full, factor)); }

ModelWeights<Tensor<double>> static_gradient(const ModelWeights<Tensor<double>>& weights, const ModelConfig& config,
                                             int height, int width, int batch, std::uint64_t seed, double& loss) {
  Tape<double> tape;
  const auto bound = bind(tape, weights);
  std::vector<Var<double>> terms;
  for (int b = 0; b < batch; ++b) {
    const Scene scene = render_static_scene(height, width, derive_seed(seed, static_cast<std::uint64_t>(b)));
    const Var<double> v = encode(tape.leaf(to_tensor<double>(scene.frame)), bound.encoder, config.encoder);
    const Var<double> pred = aux_static_predict(v, bound.aux);
    terms.push_back(weighted_bce(tape.leaf(target_at(scene.mask, config.encoder.downsample)), pred));
  }
  const Var<double> total = average<double>(terms);
  loss = total.value()[0];
  return gather(backward(total), bound);
}

}  // namespace

LossAndGradient dynamic_loss(std::span<const Sequence> videos, std::span<const ClipRef> clips,
                             const ModelWeights<Tensor<double>>& weights, const ModelConfig& config) {
  if (clips.empty()) throw std::invalid_argument("dynamic_loss: empty batch");
  Tape<double> tape;
  const auto bound = bind(tape, weights);
  std::vector<Var<double>> terms;
  for (const ClipRef& clip : clips) {
    const Sequence& seq = videos[static_cast<std::size_t>(clip.video)];
    std::vector<Var<double>> frames;
    for (int i : clip.frames) frames.push_back(tape.leaf(to_tensor<double>(seq.frames.at(static_cast<std::size_t>(i)))));
    const std::vector<Var<double>> maps = segment_graph<double>(frames, bound, config);
    for (std::size_t k = 0; k < maps.size(); ++k) {
      const Mask& gt = seq.masks.at(static_cast<std::size_t>(clip.frames[k]));
      terms.push_back(weighted_bce(tape.leaf(target_at(gt, config.encoder.downsample)), maps[k]));
    }
  }
  const Var<double> total = average<double>(terms);
  return {total.value()[0], gather(backward(total), bound)};
}

TrainResult train(std::span<const Sequence> videos, const ModelConfig& model, const TrainConfig& config,
                  const ProgressFn& progress) {
  if (videos.empty()) throw std::invalid_argument("train: no training videos");
  if (config.iterations < 1 || config.videos_per_batch < 1 || config.n_prime < 1 || config.static_batch < 1) {
    throw std::invalid_argument("train: iteration, batch and N' settings must be positive");
  }
  if (config.learning_rate < 0 || config.momentum < 0 || config.momentum >= 1) {
    throw std::invalid_argument("train: learning rate must be >= 0 and momentum in [0, 1)");
  }
  for (const Sequence& s : videos) {
    if (s.masks.size() != s.frames.size()) throw std::invalid_argument("train: video " + s.id + " lacks ground truth");
    if (static_cast<int>(s.frames.size()) < config.n_prime) {
      throw std::invalid_argument("train: video " + s.id + " is shorter than N'");
    }
  }
  const int height = videos[0].frames[0].height, width = videos[0].frames[0].width;
  const int per_batch = std::min<int>(config.videos_per_batch, static_cast<int>(videos.size()));

  TrainResult result;
  result.checkpoint.config = model;
  result.checkpoint.weights = init_model<double>(model, derive_seed(config.seed, 1));
  ModelWeights<Tensor<double>>& weights = result.checkpoint.weights;
  MomentumSgd optimizer(weights, config.learning_rate, config.momentum);
  Rng rng(derive_seed(config.seed, 2));
  std::vector<int> order(videos.size());

  for (int it = 0; it < config.iterations; ++it) {
    try {
      if (config.alternate) {
        double static_loss = 0;
        auto g = static_gradient(weights, model, height, width, config.static_batch,
                                 derive_seed(config.seed, 1'000'000 + static_cast<std::uint64_t>(it)), static_loss);
        if (!std::isfinite(static_loss)) throw TrainingDiverged(it);
        optimizer.step(weights, g);
      }
      std::iota(order.begin(), order.end(), 0);
      std::vector<ClipRef> clips;
      for (int b = 0; b < per_batch; ++b) {
        const int pick = rng.integer(b, static_cast<int>(order.size()) - 1);
        std::swap(order[static_cast<std::size_t>(b)], order[static_cast<std::size_t>(pick)]);
        const Sequence& seq = videos[static_cast<std::size_t>(order[static_cast<std::size_t>(b)])];
        clips.push_back({order[static_cast<std::size_t>(b)],
                         sample_training_clip(static_cast<int>(seq.frames.size()), config.n_prime, rng)});
      }
      LossAndGradient lg = dynamic_loss(videos, clips, weights, model);
      if (!std::isfinite(lg.loss)) throw TrainingDiverged(it);
      optimizer.step(weights, lg.gradient);
      result.loss_trace.push_back(lg.loss);
      if (progress) progress(it, lg.loss);
    } catch (const NonFiniteError&) {
      throw TrainingDiverged(it);
    }
  }
  for (Tensor<double>* t : tensors_of(weights)) {
    if (!t->all_finite()) throw TrainingDiverged(config.iterations - 1);
  }
  return result;
}

std::vector<Mask> predict_video_masks(std::span<const Image> frames, const Checkpoint& checkpoint, int n_prime) {
  if (frames.empty()) throw std::invalid_argument("infer: empty video");
  const std::vector<Tensor<double>> inputs = frame_tensors(frames);
  const std::vector<Tensor<double>> maps = infer_video<double>(inputs, checkpoint.weights, checkpoint.config, n_prime);
  std::vector<Mask> out;
  for (std::size_t i = 0; i < maps.size(); ++i) out.push_back(export_mask(maps[i], frames[i]));
  return out;
}

std::vector<Mask> predict_coseg_masks(std::span<const Image> images, const Checkpoint& checkpoint, int n_prime) {
  if (images.empty()) throw std::invalid_argument("infer: empty image group");
  const std::vector<Tensor<double>> inputs = frame_tensors(images);
  std::vector<Mask> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor<double> map =
        iocs_infer<double>(inputs, static_cast<int>(i), checkpoint.weights, checkpoint.config, n_prime);
    out.push_back(export_mask(map, images[i]));
  }
  return out;
}

EvalReport evaluate_predictions(std::span<const Sequence> truth, std::span<const std::vector<Mask>> predictions) {
  if (truth.empty()) throw std::invalid_argument("evaluate: no videos");
  if (truth.size() != predictions.size()) throw std::invalid_argument("evaluate: prediction count mismatch");
  EvalReport report;
  for (std::size_t v = 0; v < truth.size(); ++v) {
    const Sequence& seq = truth[v];
    if (seq.masks.empty() || seq.masks.size() != predictions[v].size()) {
      throw std::invalid_argument("evaluate: video " + seq.id + " lacks ground truth or predictions");
    }
    VideoScore score{seq.id, 0, 0};
    for (std::size_t k = 0; k < seq.masks.size(); ++k) {
      score.j += region_similarity(predictions[v][k], seq.masks[k]);
      score.f += boundary_f(predictions[v][k], seq.masks[k]);
    }
    score.j /= static_cast<double>(seq.masks.size());
    score.f /= static_cast<double>(seq.masks.size());
    report.mean_j += score.j;
    report.mean_f += score.f;
    report.videos.push_back(score);
  }
  report.mean_j /= static_cast<double>(truth.size());
  report.mean_f /= static_cast<double>(truth.size());
  return report;
}

EvalReport evaluate(std::span<const Sequence> videos, const Checkpoint& checkpoint, int n_prime) {
  const int d = checkpoint.config.encoder.downsample;
  std::vector<Sequence> truth;
  std::vector<std::vector<Mask>> predictions;
  for (const Sequence& seq : videos) {
    if (seq.frames.empty() || seq.masks.size() != seq.frames.size()) {
      throw std::invalid_argument("evaluate: video " + seq.id + " lacks ground truth");
    }
    // scored at feature resolution against block-downsampled ground truth
    Sequence t{seq.id, seq.label, {}, {}};
    for (const Mask& m : seq.masks) t.masks.push_back(downsample_mask(m, d));
    truth.push_back(std::move(t));
    std::vector<Mask> pred;
    for (const Tensor<double>& map :
         infer_video<double>(frame_tensors(seq.frames), checkpoint.weights, checkpoint.config, n_prime)) {
      pred.push_back(binarize(map, 0.5));
    }
    predictions.push_back(std::move(pred));
  }
  return evaluate_predictions(truth, predictions);
}

#define AGNN_INSTANTIATE_PIPELINE(S)                                                                      \
  template std::vector<Tensor<S>> infer_video<S>(std::span<const Tensor<S>>, const ModelWeights<Tensor<S>>&, \
                                                 const ModelConfig&, int);                                \
  template Tensor<S> iocs_infer<S>(std::span<const Tensor<S>>, int, const ModelWeights<Tensor<S>>&,        \
                                   const ModelConfig&, int);

AGNN_INSTANTIATE_PIPELINE(double)
AGNN_INSTANTIATE_PIPELINE(float)

#undef AGNN_INSTANTIATE_PIPELINE

}  // namespace agnn
