#include "agnn/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace agnn {

std::string_view shape_name(ShapeClass shape) {
  switch (shape) {
    case ShapeClass::ellipse: return "ellipse";
    case ShapeClass::rectangle: return "rectangle";
    case ShapeClass::triangle: return "triangle";
  }
  return "unknown";
}

ShapeClass parse_shape(std::string_view name) {
  for (ShapeClass s : {ShapeClass::ellipse, ShapeClass::rectangle, ShapeClass::triangle}) {
    if (shape_name(s) == name) return s;
  }
  throw std::invalid_argument("unknown shape class '" + std::string(name) + "'");
}

bool ShapeInstance::covers(int x, int y) const {
  const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = (c * dx + s * dy) / half_w;
  const double v = (-s * dx + c * dy) / half_h;
  switch (shape) {
    case ShapeClass::ellipse:
      return u * u + v * v <= 1.0;
    case ShapeClass::rectangle:
      return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    case ShapeClass::triangle:
      // Apex at v = -1, base along v = +1, in normalised coordinates.
      return v <= 1.0 && std::abs(u) <= (v + 1.0) / 2.0;
  }
  return false;
}

Mask rasterize(const ShapeInstance& shape, int height, int width) {
  Mask m(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) m.at(y, x) = shape.covers(x, y) ? 1 : 0;
  }
  return m;
}

namespace {

using Color = std::array<double, 3>;

Color hsv(double hue, double sat, double val) {
  const double h = std::fmod(hue, 360.0) / 60.0;
  const double c = val * sat;
  const double x = c * (1 - std::abs(std::fmod(h, 2.0) - 1));
  const double m = val - c;
  Color rgb{};
  switch (static_cast<int>(h)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

Color vivid(Rng& rng) { return hsv(rng.uniform(0, 360), rng.uniform(0.65, 1.0), rng.uniform(0.7, 1.0)); }
Color muted(Rng& rng) { return hsv(rng.uniform(0, 360), rng.uniform(0.0, 0.25), rng.uniform(0.2, 0.75)); }

struct Background {
  Color from{}, to{};
  double angle = 0;
  double noise = 0;

  static Background random(Rng& rng, double noise) { return {muted(rng), muted(rng), rng.uniform(0, 2 * std::numbers::pi), noise}; }

  /// Paints the gradient and draws fresh per-pixel noise.
  std::vector<Color> paint(int height, int width, Rng& rng) const {
    std::vector<Color> px(static_cast<std::size_t>(height) * width);
    const double c = std::cos(angle), s = std::sin(angle);
    const double diag = std::hypot(height, width);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double t = std::clamp(((x - width / 2.0) * c + (y - height / 2.0) * s) / diag + 0.5, 0.0, 1.0);
        Color& p = px[static_cast<std::size_t>(y) * width + x];
        for (int k = 0; k < 3; ++k) p[k] = (1 - t) * from[k] + t * to[k] + rng.uniform(-noise, noise);
      }
    }
    return px;
  }
};

void fill(std::vector<Color>& px, const Mask& m, const Color& color) {
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    if (m.data[i]) px[i] = color;
  }
}

Image to_image(const std::vector<Color>& px, int height, int width) {
  Image img(height, width);
  for (std::size_t i = 0; i < px.size(); ++i) {
    for (int k = 0; k < 3; ++k) img.rgb[i * 3 + k] = quantize(px[i][k]);
  }
  return img;
}

ShapeClass other_shape(ShapeClass shape, Rng& rng) {
  const int offset = rng.integer(1, 2);
  return static_cast<ShapeClass>((static_cast<int>(shape) + offset) % 3);
}

ShapeClass random_shape(Rng& rng) { return static_cast<ShapeClass>(rng.integer(0, 2)); }

ShapeInstance random_instance(ShapeClass shape, int height, int width, double lo, double hi, Rng& rng) {
  const double canvas = std::min(height, width);
  ShapeInstance s;
  s.shape = shape;
  s.half_w = rng.uniform(lo, hi) * canvas;
  s.half_h = s.half_w * rng.uniform(0.65, 1.0);
  s.cx = rng.uniform(0.3, 0.7) * width;
  s.cy = rng.uniform(0.3, 0.7) * height;
  s.angle = rng.uniform(0, 2 * std::numbers::pi);
  return s;
}

/// Grows the shape until it covers at least `min_fraction` of the canvas.
Mask rasterize_at_least(ShapeInstance& s, int height, int width, double min_fraction) {
  Mask m = rasterize(s, height, width);
  while (static_cast<double>(m.count()) < min_fraction * height * width) {
    s.half_w *= 1.1;
    s.half_h *= 1.1;
    m = rasterize(s, height, width);
  }
  return m;
}

/// Smooth random walk of position, scale and rotation.
class Trajectory {
 public:
  Trajectory(ShapeInstance base, int height, int width, double max_step, double min_scale, double max_scale, Rng& rng)
      : base_(base), height_(height), width_(width), max_step_(max_step * std::min(height, width)),
        min_scale_(min_scale), max_scale_(max_scale) {
    const double speed = rng.uniform(0.0, 0.5) * max_step_;
    const double dir = rng.uniform(0, 2 * std::numbers::pi);
    vx_ = speed * std::cos(dir);
    vy_ = speed * std::sin(dir);
  }

  ShapeInstance next(Rng& rng) {
    if (steps_++ > 0) {
      vx_ += rng.uniform(-0.25, 0.25) * max_step_;
      vy_ += rng.uniform(-0.25, 0.25) * max_step_;
      const double speed = std::hypot(vx_, vy_);
      if (speed > max_step_) {
        vx_ *= max_step_ / speed;
        vy_ *= max_step_ / speed;
      }
      base_.cx = reflect(base_.cx + vx_, 0.2 * width_, 0.8 * width_, vx_);
      base_.cy = reflect(base_.cy + vy_, 0.2 * height_, 0.8 * height_, vy_);
      scale_ = std::clamp(scale_ + rng.uniform(-0.08, 0.08), min_scale_, max_scale_);
      base_.angle += rng.uniform(-0.15, 0.15);
    }
    ShapeInstance s = base_;
    s.half_w *= scale_;
    s.half_h *= scale_;
    return s;
  }

 private:
  static double reflect(double p, double lo, double hi, double& velocity) {
    if (p < lo) {
      velocity = std::abs(velocity);
      return lo + (lo - p);
    }
    if (p > hi) {
      velocity = -std::abs(velocity);
      return hi - (p - hi);
    }
    return p;
  }

  ShapeInstance base_;
  int height_, width_;
  double max_step_, min_scale_, max_scale_;
  double vx_ = 0, vy_ = 0, scale_ = 1.0;
  int steps_ = 0;
};

/// Strict, non-empty subset of frames for a distractor.
std::vector<bool> visibility(int frames, Rng& rng) {
  std::vector<bool> on(static_cast<std::size_t>(frames));
  for (int i = 0; i < frames; ++i) on[i] = rng.bernoulli(0.5);
  if (frames > 1) {
    if (std::all_of(on.begin(), on.end(), [](bool b) { return b; })) on[rng.integer(0, frames - 1)] = false;
    if (std::none_of(on.begin(), on.end(), [](bool b) { return b; })) on[rng.integer(0, frames - 1)] = true;
  } else {
    on[0] = false;
  }
  return on;
}

constexpr double kMinForeground = 0.02;

}  // namespace

std::vector<Scene> render_video(const SyntheticVideoSpec& spec) {
  if (spec.num_frames < 1 || spec.height < 8 || spec.width < 8) throw std::invalid_argument("render_video: bad dims");
  Rng rng(spec.seed);
  const Background bg = Background::random(rng, spec.noise);
  const Color fg_color = vivid(rng);
  Trajectory fg(random_instance(spec.shape, spec.height, spec.width, 0.14, 0.22, rng), spec.height, spec.width,
                spec.max_step, spec.min_scale, spec.max_scale, rng);

  struct Distractor {
    Trajectory path;
    Color color;
    std::vector<bool> visible;
  };
  std::vector<Distractor> distractors;
  for (int d = 0; d < spec.distractors; ++d) {
    const ShapeClass shape = other_shape(spec.shape, rng);
    ShapeInstance inst = random_instance(shape, spec.height, spec.width, 0.08, 0.14, rng);
    distractors.push_back({Trajectory(inst, spec.height, spec.width, spec.max_step, spec.min_scale, spec.max_scale, rng),
                           vivid(rng), visibility(spec.num_frames, rng)});
  }

  std::vector<Scene> out;
  out.reserve(static_cast<std::size_t>(spec.num_frames));
  for (int t = 0; t < spec.num_frames; ++t) {
    std::vector<Color> px = bg.paint(spec.height, spec.width, rng);
    for (Distractor& d : distractors) {
      const ShapeInstance inst = d.path.next(rng);
      if (d.visible[static_cast<std::size_t>(t)]) fill(px, rasterize(inst, spec.height, spec.width), d.color);
    }
    ShapeInstance inst = fg.next(rng);
    const Mask mask = rasterize_at_least(inst, spec.height, spec.width, kMinForeground);
    fill(px, mask, fg_color);
    out.push_back({to_image(px, spec.height, spec.width), mask});
  }
  return out;
}

Scene render_static_scene(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  const Background bg = Background::random(rng, 0.06);
  std::vector<Color> px = bg.paint(height, width, rng);
  for (int k = 0; k < 2; ++k) {
    const ShapeInstance clutter = random_instance(random_shape(rng), height, width, 0.05, 0.12, rng);
    fill(px, rasterize(clutter, height, width), muted(rng));
  }
  ShapeInstance inst = random_instance(random_shape(rng), height, width, 0.12, 0.24, rng);
  inst.cx = rng.uniform(0.25, 0.75) * width;
  inst.cy = rng.uniform(0.25, 0.75) * height;
  const Mask mask = rasterize_at_least(inst, height, width, kMinForeground);
  fill(px, mask, vivid(rng));
  return {to_image(px, height, width), mask};
}

std::vector<Scene> render_coseg_group(ShapeClass shape, int count, int height, int width, std::uint64_t seed) {
  std::vector<Scene> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const Background bg = Background::random(rng, 0.06);
    std::vector<Color> px = bg.paint(height, width, rng);
    if (rng.bernoulli(0.5)) {
      const ShapeInstance d = random_instance(other_shape(shape, rng), height, width, 0.08, 0.14, rng);
      fill(px, rasterize(d, height, width), vivid(rng));
    }
    ShapeInstance inst = random_instance(shape, height, width, 0.12, 0.22, rng);
    const Mask mask = rasterize_at_least(inst, height, width, kMinForeground);
    fill(px, mask, vivid(rng));
    out.push_back({to_image(px, height, width), mask});
  }
  return out;
}

std::filesystem::path frame_path(const std::filesystem::path& dir, int index) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%04d.ppm", index);
  return dir / name;
}

std::filesystem::path mask_path(const std::filesystem::path& dir, int index) {
  char name[32];
  std::snprintf(name, sizeof name, "mask_%04d.pgm", index);
  return dir / name;
}

std::vector<ManifestEntry> DatasetManifest::split(std::string_view name) const {
  std::vector<ManifestEntry> out;
  for (const ManifestEntry& e : entries) {
    if (e.split == name) out.push_back(e);
  }
  return out;
}

void DatasetManifest::write() const {
  std::ostringstream os;
  for (const ManifestEntry& e : entries) os << e.split << '\t' << e.video_id << '\t' << e.num_frames << '\t' << e.label << '\n';
  write_file(root / "manifest.txt", os.str());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& root) {
  const std::filesystem::path path = root / "manifest.txt";
  if (!std::filesystem::exists(path)) throw std::runtime_error("missing manifest " + path.string());
  DatasetManifest m;
  m.root = root;
  std::istringstream in(read_file(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    ManifestEntry e;
    std::string count;
    if (!std::getline(fields, e.split, '\t') || !std::getline(fields, e.video_id, '\t') ||
        !std::getline(fields, count, '\t') || !std::getline(fields, e.label)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    }
    e.num_frames = std::stoi(count);
    for (int k = 0; k < e.num_frames; ++k) {
      if (!std::filesystem::exists(frame_path(m.directory(e), k))) {
        throw std::runtime_error("manifest references missing " + frame_path(m.directory(e), k).string());
      }
    }
    if (std::filesystem::exists(frame_path(m.directory(e), e.num_frames))) {
      throw std::runtime_error("frame count mismatch for " + e.video_id);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

namespace {

void write_sequence(const std::filesystem::path& dir, const std::vector<Scene>& scenes) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    write_ppm(frame_path(dir, static_cast<int>(k)), scenes[k].frame);
    write_pgm(mask_path(dir, static_cast<int>(k)), scenes[k].mask);
  }
}

std::string sequence_id(const char* prefix, int index) {
  char name[32];
  std::snprintf(name, sizeof name, "%s_%04d", prefix, index);
  return name;
}

}  // namespace

DatasetManifest generate_dataset(const DatasetSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  DatasetManifest manifest;
  manifest.root = out_dir;

  auto add_videos = [&](const char* split, int count, std::uint64_t stream_base) {
    for (int v = 0; v < count; ++v) {
      SyntheticVideoSpec vs;
      vs.num_frames = spec.frames_per_video;
      vs.height = vs.width = spec.canvas;
      vs.distractors = spec.distractors;
      vs.seed = derive_seed(seed, stream_base + static_cast<std::uint64_t>(v));
      Rng pick(vs.seed ^ 0xa5a5a5a5ULL);
      vs.shape = random_shape(pick);
      ManifestEntry e{split, sequence_id("video", v), vs.num_frames, std::string(shape_name(vs.shape))};
      write_sequence(manifest.directory(e), render_video(vs));
      manifest.entries.push_back(e);
    }
  };
  add_videos("train", spec.train_videos, 1000);
  add_videos("test", spec.test_videos, 2000);

  for (int g = 0; g < spec.coseg_classes; ++g) {
    const auto shape = static_cast<ShapeClass>(g % 3);
    ManifestEntry e{"coseg", sequence_id("group", g), spec.coseg_images, std::string(shape_name(shape))};
    write_sequence(manifest.directory(e),
                   render_coseg_group(shape, spec.coseg_images, spec.canvas, spec.canvas,
                                      derive_seed(seed, 3000 + static_cast<std::uint64_t>(g))));
    manifest.entries.push_back(e);
  }
  manifest.write();
  return manifest;
}

Sequence load_sequence(const std::filesystem::path& dir, bool require_masks) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("missing directory " + dir.string());
  Sequence seq;
  seq.id = dir.filename().string();
  for (int k = 0; std::filesystem::exists(frame_path(dir, k)); ++k) {
    seq.frames.push_back(read_ppm(frame_path(dir, k)));
    const auto mp = mask_path(dir, k);
    if (std::filesystem::exists(mp)) {
      seq.masks.push_back(read_pgm(mp));
    } else if (require_masks) {
      throw std::runtime_error("missing ground truth " + mp.string());
    }
  }
  if (!require_masks && seq.masks.size() != seq.frames.size()) seq.masks.clear();
  if (!seq.masks.empty() && seq.masks.size() != seq.frames.size()) {
    throw std::runtime_error("incomplete ground truth in " + dir.string());
  }
  return seq;
}

std::vector<int> sample_training_clip(int num_frames, int n_prime, Rng& rng) {
  if (n_prime < 1 || n_prime > num_frames) {
    throw std::invalid_argument("sample_training_clip: N' = " + std::to_string(n_prime) + " with N = " +
                                std::to_string(num_frames));
  }
  const int base = num_frames / n_prime, extra = num_frames % n_prime;
  std::vector<int> picks;
  int start = 0;
  for (int s = 0; s < n_prime; ++s) {
    const int len = base + (s < extra ? 1 : 0);
    picks.push_back(start + rng.integer(0, len - 1));
    start += len;
  }
  return picks;
}

Mask downsample_mask(const Mask& mask, int factor) {
  if (factor < 1 || mask.height % factor != 0 || mask.width % factor != 0) {
    throw ShapeError("downsample_mask: " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " is not divisible by " + std::to_string(factor));
  }
  Mask out(mask.height / factor, mask.width / factor);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      int count = 0;
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) count += mask.at(y * factor + dy, x * factor + dx);
      }
      out.at(y, x) = 2 * count >= factor * factor ? 1 : 0;
    }
  }
  return out;
}

}  // namespace agnn
