#include "agnn/checkpoint.hpp"

#include <bit>
#include <cmath>

#include "agnn/image.hpp"

namespace agnn {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint64_t unsigned_le(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int k = 0; k < width; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + k])) << (8 * k);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(unsigned_le(4, what)); }
  double f64(const char* what) { return std::bit_cast<double>(unsigned_le(8, what)); }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    const std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("truncated checkpoint while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

Tensor<double> scalar(double v) { return Tensor<double>(Shape{1}, std::vector<double>{v}); }

int meta_int(const TensorArchive& archive, const char* name) {
  const Tensor<double>* t = archive.find(name);
  if (!t || t->size() != 1) throw CheckpointMismatch(std::string("checkpoint lacks ") + name);
  const double v = (*t)[0];
  if (v != std::floor(v)) throw CheckpointMismatch(std::string(name) + " is not an integer");
  return static_cast<int>(v);
}

}  // namespace

const Tensor<double>* TensorArchive::find(std::string_view name) const {
  for (const auto& [n, t] : records) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string TensorArchive::encode() const {
  std::string out = "AGNN";
  put_u32(out, kVersion);
  for (const auto& [name, t] : records) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    for (double v : t.values()) put_f64(out, v);
  }
  return out;
}

TensorArchive TensorArchive::decode(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != "AGNN") throw CheckpointError("bad checkpoint magic");
  const std::uint32_t version = in.u32("version");
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  TensorArchive archive;
  while (!in.done()) {
    const std::uint32_t len = in.u32("name length");
    std::string name(in.take(len, "name"));
    const std::uint32_t rank = in.u32("rank");
    if (rank < 1 || rank > static_cast<std::uint32_t>(Shape::kMaxRank)) {
      throw CheckpointError("record " + name + " has unsupported rank " + std::to_string(rank));
    }
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = in.u32("dims");
      if (d == 0 || d > (1u << 24)) throw CheckpointError("record " + name + " has invalid dim " + std::to_string(d));
      shape.dims[i] = static_cast<int>(d);
    }
    shape.rank = static_cast<int>(rank);
    std::vector<double> values(shape.numel());
    for (double& v : values) v = in.f64("payload");
    archive.records.emplace_back(std::move(name), Tensor<double>(shape, std::move(values)));
  }
  return archive;
}

TensorArchive Checkpoint::to_archive() const {
  TensorArchive archive;
  archive.records.emplace_back("meta.channels", scalar(config.encoder.channels));
  archive.records.emplace_back("meta.downsample", scalar(config.encoder.downsample));
  archive.records.emplace_back("meta.iterations", scalar(config.graph.iterations));
  archive.records.emplace_back("meta.gated", scalar(config.graph.gated ? 1 : 0));
  archive.records.emplace_back("meta.readout_hidden", scalar(config.hidden()));
  for_each_field(weights, [&](const std::string& name, const Tensor<double>& t) {
    archive.records.emplace_back(name, t);
  });
  return archive;
}

Checkpoint Checkpoint::from_archive(const TensorArchive& archive) {
  Checkpoint ck;
  ck.config.encoder.channels = meta_int(archive, "meta.channels");
  ck.config.encoder.downsample = meta_int(archive, "meta.downsample");
  ck.config.graph.iterations = meta_int(archive, "meta.iterations");
  ck.config.graph.gated = meta_int(archive, "meta.gated") != 0;
  ck.config.readout_hidden = meta_int(archive, "meta.readout_hidden");
  try {
    ck.config.encoder.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointMismatch(e.what());
  }
  if (ck.config.graph.iterations < 1) throw CheckpointMismatch("checkpoint has K < 1");
  // Reference shapes come from a throwaway initialisation of the same config.
  ck.weights = init_model<double>(ck.config, 0);
  for_each_field(ck.weights, [&](const std::string& name, Tensor<double>& t) {
    const Tensor<double>* stored = archive.find(name);
    if (!stored) throw CheckpointMismatch("checkpoint lacks tensor " + name);
    if (stored->shape() != t.shape()) {
      throw CheckpointMismatch("tensor " + name + " has shape " + stored->shape().str() + ", expected " +
                               t.shape().str());
    }
    t = *stored;
  });
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file(path, to_archive().encode()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  return from_archive(TensorArchive::decode(read_file(path)));
}

}  // namespace agnn
