#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "agnn/image.hpp"
#include "agnn/rng.hpp"

namespace agnn {

enum class ShapeClass { ellipse, rectangle, triangle };

std::string_view shape_name(ShapeClass shape);
ShapeClass parse_shape(std::string_view name);

/// A placed shape: centre, half extents along its own axes, rotation.
struct ShapeInstance {
  ShapeClass shape = ShapeClass::ellipse;
  double cx = 0, cy = 0;
  double half_w = 1, half_h = 1;
  double angle = 0;

  /// True when the pixel centre (x + 0.5, y + 0.5) lies inside the shape.
  bool covers(int x, int y) const;
};

/// Hard-edged rasterisation of a shape onto an h x w grid.
Mask rasterize(const ShapeInstance& shape, int height, int width);

struct SyntheticVideoSpec {
  int num_frames = 24;
  int height = 64;
  int width = 64;
  ShapeClass shape = ShapeClass::ellipse;
  double max_step = 0.15;  // translation per frame, fraction of the canvas
  double min_scale = 0.7;
  double max_scale = 1.3;
  int distractors = 1;
  double noise = 0.06;  // uniform noise amplitude on the background
  std::uint64_t seed = 0;
};

struct Scene {
  Image frame;
  Mask mask;
};

/// Moving foreground shape over a smooth noisy background, with distractors of
/// other shape classes visible in a strict subset of frames. The foreground is
/// drawn last, so the mask is exactly its rasterisation.
std::vector<Scene> render_video(const SyntheticVideoSpec& spec);

/// Single image of one shape on clutter, used by static-image iterations.
Scene render_static_scene(int height, int width, std::uint64_t seed);

/// Images sharing one foreground shape class on distinct backgrounds.
std::vector<Scene> render_coseg_group(ShapeClass shape, int count, int height, int width, std::uint64_t seed);

struct DatasetSpec {
  int canvas = 64;
  int frames_per_video = 24;
  int train_videos = 20;
  int test_videos = 5;
  int coseg_classes = 3;
  int coseg_images = 40;
  int distractors = 1;
};

struct ManifestEntry {
  std::string split;
  std::string video_id;
  int num_frames = 0;
  std::string label;

  bool operator==(const ManifestEntry&) const = default;
};

/// Index of a dataset directory: one "split<TAB>video_id<TAB>num_frames<TAB>class" line per sequence.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(std::string_view name) const;
  std::filesystem::path directory(const ManifestEntry& entry) const { return root / entry.split / entry.video_id; }

  void write() const;
  /// Loads root/manifest.txt and checks that every referenced file exists.
  static DatasetManifest load(const std::filesystem::path& root);
};

/// Writes train/test videos and co-segmentation groups under `out_dir`.
/// Byte-identical output for identical (spec, seed).
DatasetManifest generate_dataset(const DatasetSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir);

struct Sequence {
  std::string id;
  std::string label;
  std::vector<Image> frames;
  std::vector<Mask> masks;  // empty when the directory carries no ground truth
};

std::filesystem::path frame_path(const std::filesystem::path& dir, int index);
std::filesystem::path mask_path(const std::filesystem::path& dir, int index);

/// Reads frame_KKKK.ppm (and mask_KKKK.pgm when present) in index order.
Sequence load_sequence(const std::filesystem::path& dir, bool require_masks);

/// Splits [0, n) into n_prime contiguous near-equal segments (leading segments
/// absorb the remainder) and draws one index uniformly from each.
std::vector<int> sample_training_clip(int num_frames, int n_prime, Rng& rng);

/// Block majority: a cell is foreground when at least half of its d x d block is.
Mask downsample_mask(const Mask& mask, int factor);

}  // namespace agnn
