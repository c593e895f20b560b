#include "agnn/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "agnn/image.hpp"

namespace agnn {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("invalid value '" + std::string(value) + "' for key " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("invalid boolean '" + std::string(value) + "' for key " + std::string(key));
}

void require_positive(std::string_view key, double v) {
  if (!(v > 0)) throw ConfigError("key " + std::string(key) + " must be positive");
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  using Setter = std::function<void(std::string_view, std::string_view)>;
  auto int_key = [](int& field) {
    return Setter([&field](std::string_view k, std::string_view v) {
      field = parse_number<int>(k, v);
      require_positive(k, field);
    });
  };
  const std::map<std::string, Setter, std::less<>> setters = {
      {"canvas", int_key(c.canvas)},
      {"channels", int_key(c.channels)},
      {"downsample", int_key(c.downsample)},
      {"frames_per_video", int_key(c.frames_per_video)},
      {"n_prime_train", int_key(c.n_prime_train)},
      {"n_prime_test", int_key(c.n_prime_test)},
      {"k_iters", int_key(c.k_iters)},
      {"lr", [&](auto k, auto v) {
         c.lr = parse_number<double>(k, v);
         if (c.lr < 0) throw ConfigError("key lr must be non-negative");
       }},
      {"momentum", [&](auto k, auto v) {
         c.momentum = parse_number<double>(k, v);
         if (c.momentum < 0 || c.momentum >= 1) throw ConfigError("key momentum must lie in [0, 1)");
       }},
      {"iters", int_key(c.iters)},
      {"seed", [&](auto k, auto v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"out_dir", [&](auto, auto v) { c.out_dir = std::string(v); }},
      {"train_videos", int_key(c.train_videos)},
      {"test_videos", int_key(c.test_videos)},
      {"videos_per_batch", int_key(c.videos_per_batch)},
      {"distractors", [&](auto k, auto v) {
         c.distractors = parse_number<int>(k, v);
         if (c.distractors < 0) throw ConfigError("key distractors must be non-negative");
       }},
      {"coseg_classes", [&](auto k, auto v) {
         c.coseg_classes = parse_number<int>(k, v);
         if (c.coseg_classes < 0) throw ConfigError("key coseg_classes must be non-negative");
       }},
      {"coseg_images", int_key(c.coseg_images)},
      {"gated", [&](auto k, auto v) { c.gated = parse_bool(k, v); }},
      {"alternate", [&](auto k, auto v) { c.alternate = parse_bool(k, v); }},
  };

  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key " + std::string(key));
    it->second(key, value);
  }
  if (c.downsample != 4 && c.downsample != 8) throw ConfigError("key downsample must be 4 or 8");
  if (c.canvas % c.downsample != 0) throw ConfigError("canvas must be divisible by downsample");
  if (c.n_prime_train > c.frames_per_video) throw ConfigError("n_prime_train exceeds frames_per_video");
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return parse(text);
}

DatasetSpec RunConfig::dataset() const {
  DatasetSpec d;
  d.canvas = canvas;
  d.frames_per_video = frames_per_video;
  d.train_videos = train_videos;
  d.test_videos = test_videos;
  d.coseg_classes = coseg_classes;
  d.coseg_images = coseg_images;
  d.distractors = distractors;
  return d;
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.encoder.channels = channels;
  m.encoder.downsample = downsample;
  m.graph.iterations = k_iters;
  m.graph.gated = gated;
  return m;
}

TrainConfig RunConfig::training() const {
  TrainConfig t;
  t.videos_per_batch = videos_per_batch;
  t.n_prime = n_prime_train;
  t.iterations = iters;
  t.learning_rate = lr;
  t.momentum = momentum;
  t.alternate = alternate;
  t.seed = seed;
  return t;
}

}  // namespace agnn
