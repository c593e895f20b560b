#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include <unistd.h>

#include "agnn/checkpoint.hpp"
#include "agnn/metrics.hpp"
#include "agnn/model.hpp"
#include "agnn/synthdata.hpp"
#include "doctest.h"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace agnn;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("agnn_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

// Brute-force boundary F: every boundary pixel searches the whole other map.
double brute_f(const Mask& pred, const Mask& gt, int tol) {
  const Mask bp = boundary_map(pred), bg = boundary_map(gt);
  auto matched = [&](const Mask& from, const Mask& to) {
    std::size_t hit = 0, total = 0;
    for (int y = 0; y < from.height; ++y)
      for (int x = 0; x < from.width; ++x) {
        if (!from.at(y, x)) continue;
        ++total;
        bool ok = false;
        for (int v = 0; v < to.height && !ok; ++v)
          for (int u = 0; u < to.width && !ok; ++u) ok = to.at(v, u) && std::max(std::abs(v - y), std::abs(u - x)) <= tol;
        hit += ok;
      }
    return std::pair{hit, total};
  };
  const auto [hp, np] = matched(bp, bg);
  const auto [hr, nr] = matched(bg, bp);
  if (np == 0 && nr == 0) return 1;
  if (np == 0 || nr == 0) return 0;
  const double p = double(hp) / np, r = double(hr) / nr;
  return p + r == 0 ? 0 : 2 * p * r / (p + r);
}

}  // namespace

TEST_CASE("PNM round trips and format errors") {
  Rng rng(1);
  Image img(5, 7);
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng.integer(0, 255));
  CHECK(decode_ppm(encode_ppm(img)) == img);
  Mask m(4, 3);
  for (auto& v : m.data) v = rng.bernoulli(0.5);
  CHECK(decode_pgm(encode_pgm(m)) == m);

  const Mask full(2, 2, 1);
  const std::string bytes = encode_pgm(full);
  CHECK(bytes.size() == 15);
  CHECK(bytes.substr(0, 11) == "P5\n2 2\n255\n");
  CHECK(bytes.substr(11) == std::string(4, '\xff'));

  CHECK_THROWS_AS(decode_pgm("P5\n2 2\n15\n\x0f\x0f\x0f\x0f"), FormatError);
  CHECK_THROWS_AS(decode_pgm("P6\n2 2\n255\n...."), FormatError);
  try {
    decode_ppm("P6\n2 2\n255\nabc");
    FAIL("truncated payload accepted");
  } catch (const FormatError& e) {
    CHECK(e.position() > 0);
  }

  const fs::path dir = scratch("pnm");
  write_ppm(dir / "f.ppm", img);
  write_pgm(dir / "m.pgm", m);
  CHECK(read_ppm(dir / "f.ppm") == img);
  CHECK(read_pgm(dir / "m.pgm") == m);
  CHECK_THROWS(read_ppm(dir / "missing.ppm"));
  fs::remove_all(dir);
}

TEST_CASE("rasterised masks match the foreground and stay nonempty") {
  for (int seed = 0; seed < 6; ++seed) {
    SyntheticVideoSpec spec;
    spec.num_frames = 8;
    spec.shape = static_cast<ShapeClass>(seed % 3);
    spec.seed = seed;
    const auto video = render_video(spec);
    REQUIRE(video.size() == 8);
    for (const Scene& s : video) {
      CHECK(s.mask.count() > 0);
      CHECK(s.frame.height == 64);
    }
    CHECK(render_video(spec)[3].frame == video[3].frame);
  }
  ShapeInstance sq{ShapeClass::rectangle, 8, 8, 3, 2, 0};
  const Mask m = rasterize(sq, 16, 16);
  std::size_t area = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) area += sq.covers(x, y);
  CHECK(m.count() == area);
  CHECK(area == 24);
  CHECK(parse_shape(shape_name(ShapeClass::triangle)) == ShapeClass::triangle);
  CHECK_THROWS_AS(parse_shape("hexagon"), std::invalid_argument);
}

TEST_CASE("generated datasets are reproducible and well formed") {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  DatasetSpec spec;
  spec.canvas = 32;
  spec.frames_per_video = 5;
  spec.train_videos = 3;
  spec.test_videos = 2;
  spec.coseg_classes = 2;
  spec.coseg_images = 3;
  const DatasetManifest m = generate_dataset(spec, 9, a);
  generate_dataset(spec, 9, b);
  CHECK(tree(a) == tree(b));
  CHECK(m.split("train").size() == 3);
  CHECK(m.split("test").size() == 2);
  CHECK(m.split("coseg").size() == 2);
  const DatasetManifest loaded = DatasetManifest::load(a);
  CHECK(loaded.entries == m.entries);

  const std::string text = read_file(a / "manifest.txt");
  CHECK(text.rfind("train\tvideo_0000\t5\t", 0) == 0);

  for (const auto& e : m.split("coseg")) {
    const Sequence s = load_sequence(m.directory(e), true);
    CHECK(s.frames.size() == 3);
    CHECK(s.frames[0] != s.frames[1]);
  }
  const Sequence v = load_sequence(m.directory(m.entries[0]), true);
  CHECK(v.masks.size() == 5);
  fs::remove(mask_path(m.directory(m.entries[0]), 2));
  CHECK_THROWS(load_sequence(m.directory(m.entries[0]), true));
  CHECK_NOTHROW(load_sequence(m.directory(m.entries[0]), false));
  fs::remove(frame_path(m.directory(m.entries[0]), 4));
  CHECK_THROWS(DatasetManifest::load(a));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("distractors appear in a strict subset of frames") {
  SyntheticVideoSpec spec;
  spec.num_frames = 24;
  spec.seed = 4;
  spec.noise = 0;
  const auto video = render_video(spec);
  // With no noise, pixels off the foreground that are vivid belong to distractors.
  int frames_with = 0;
  for (const Scene& s : video) {
    bool any = false;
    for (int y = 0; y < 64 && !any; ++y)
      for (int x = 0; x < 64 && !any; ++x) {
        if (s.mask.at(y, x)) continue;
        const auto* p = s.frame.pixel(y, x);
        any = std::max({p[0], p[1], p[2]}) - std::min({p[0], p[1], p[2]}) > 90;
      }
    frames_with += any;
  }
  CHECK(frames_with > 0);
  CHECK(frames_with < 24);
}

TEST_CASE("training clips take one frame per segment") {
  Rng rng(2);
  CHECK(sample_training_clip(4, 4, rng) == std::vector<int>{0, 1, 2, 3});
  std::map<int, int> counts;
  for (int draw = 0; draw < 10000; ++draw) {
    const auto clip = sample_training_clip(9, 3, rng);
    REQUIRE(clip.size() == 3);
    for (int s = 0; s < 3; ++s) {
      CHECK(clip[s] / 3 == s);
      ++counts[clip[s]];
    }
  }
  for (int f = 0; f < 9; ++f) CHECK(std::abs(counts[f] / 10000.0 - 1.0 / 3) < 0.02);
  CHECK_THROWS_AS(sample_training_clip(2, 3, rng), std::invalid_argument);
}

TEST_CASE("mask downsampling by block majority") {
  CHECK(downsample_mask(Mask(8, 8, 1), 4) == Mask(2, 2, 1));
  Mask checker(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) checker.at(y, x) = (x + y) % 2;
  CHECK(downsample_mask(checker, 2) == Mask(2, 2, 1));
  Rng rng(3);
  Mask r(16, 12);
  for (auto& v : r.data) v = rng.bernoulli(0.5);
  const Mask d = downsample_mask(r, 4);
  for (int by = 0; by < 4; ++by)
    for (int bx = 0; bx < 3; ++bx) {
      int n = 0;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) n += r.at(by * 4 + y, bx * 4 + x);
      CHECK(d.at(by, bx) == (n * 2 >= 16 ? 1 : 0));
    }
  CHECK_THROWS_AS(downsample_mask(Mask(6, 6), 4), ShapeError);
}

TEST_CASE("region similarity and boundary F") {
  Mask a(10, 10), far(10, 10);
  for (int y = 1; y < 5; ++y)
    for (int x = 1; x < 5; ++x) a.at(y, x) = 1;
  far.at(8, 8) = 1;
  CHECK(region_similarity(a, a) == 1.0);
  CHECK(region_similarity(a, far) == 0.0);
  CHECK(region_similarity(Mask(3, 3), Mask(3, 3)) == 1.0);
  CHECK(boundary_f(a, Mask(10, 10), 1) == 0.0);
  CHECK(boundary_f(Mask(10, 10), Mask(10, 10), 1) == 1.0);
  CHECK_THROWS(region_similarity(a, Mask(4, 4)));
  CHECK_THROWS(boundary_f(a, Mask(4, 4), 1));
  CHECK(default_boundary_tolerance(64, 64) == 1);
  CHECK(default_boundary_tolerance(480, 854) == 7);

  // Boundary of a filled 4x4 square is its 12-pixel ring.
  CHECK(boundary_map(a).count() == 12);
  CHECK(boundary_map(Mask(3, 3, 1)).count() == 8);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Mask p(12, 12), g(12, 12);
    for (auto& v : p.data) v = rng.bernoulli(0.4);
    for (auto& v : g.data) v = rng.bernoulli(0.4);
    const int tol = rng.integer(0, 2);
    CHECK(boundary_f(p, g, tol) == doctest::Approx(brute_f(p, g, tol)).epsilon(1e-12));
  }
}

TEST_CASE("checkpoints round trip and reject bad input") {
  ModelConfig cfg;
  cfg.encoder.channels = 4;
  cfg.graph.iterations = 2;
  Checkpoint ck{cfg, support::perturbed_model(cfg, 1)};
  const TensorArchive ar = ck.to_archive();
  const std::string bytes = ar.encode();
  CHECK(bytes.substr(0, 4) == "AGNN");
  CHECK(bytes[4] == 1);

  const Checkpoint back = Checkpoint::from_archive(TensorArchive::decode(bytes));
  CHECK(back.config.graph.iterations == 2);
  CHECK(support::flatten(back.weights) == support::flatten(ck.weights));
  CHECK(TensorArchive::decode(bytes).encode() == bytes);

  // Explicit byte layout of the first record.
  const std::string name = ar.records[0].first;
  CHECK(bytes.substr(8, 4) == std::string{static_cast<char>(name.size()), 0, 0, 0});
  CHECK(bytes.substr(12, name.size()) == name);

  CHECK_THROWS_AS(TensorArchive::decode("AGNX" + bytes.substr(4)), CheckpointError);
  CHECK_THROWS_AS(TensorArchive::decode(bytes.substr(0, bytes.size() - 3)), CheckpointError);

  TensorArchive wrong = ar;
  for (auto& [n, t] : wrong.records) {
    if (n == "attention.coupling") t = Tensor<double>(Shape{3, 3});
  }
  CHECK_THROWS_AS(Checkpoint::from_archive(wrong), CheckpointMismatch);
  TensorArchive missing = ar;
  missing.records.pop_back();
  CHECK_THROWS_AS(Checkpoint::from_archive(missing), CheckpointMismatch);

  const fs::path dir = scratch("ckpt");
  ck.save(dir / "m.agnn");
  CHECK(read_file(dir / "m.agnn") == bytes);
  CHECK(support::flatten(Checkpoint::load(dir / "m.agnn").weights) == support::flatten(ck.weights));
  fs::remove_all(dir);
}
