#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "agnn/pipeline.hpp"

namespace agnn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Plain-text `key=value` run configuration. Blank lines and lines starting
/// with '#' are ignored; unknown keys are rejected; missing keys keep the
/// defaults below.
struct RunConfig {
  int canvas = 64;
  int channels = 32;
  int downsample = 4;
  int frames_per_video = 24;
  int n_prime_train = 3;
  int n_prime_test = 5;
  int k_iters = 3;
  double lr = 1e-3;
  double momentum = 0.9;
  int iters = 2000;
  std::uint64_t seed = 0;
  std::string out_dir = "agnn_out";

  int train_videos = 20;
  int test_videos = 5;
  int videos_per_batch = 2;
  int distractors = 1;
  int coseg_classes = 3;
  int coseg_images = 40;
  bool gated = true;
  bool alternate = true;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  DatasetSpec dataset() const;
  ModelConfig model() const;
  TrainConfig training() const;
};

}  // namespace agnn
