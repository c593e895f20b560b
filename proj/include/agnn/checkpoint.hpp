#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "agnn/model.hpp"

namespace agnn {

/// Malformed or truncated checkpoint bytes.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed checkpoint whose tensors do not fit the expected model.
class CheckpointMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named tensor records. Layout: "AGNN", u32 version, then until EOF:
/// u32 name length, name bytes, u32 rank, u32 dims[rank], f64 payload
/// (row-major). All integers and floats little-endian.
struct TensorArchive {
  static constexpr std::uint32_t kVersion = 1;
  std::vector<std::pair<std::string, Tensor<double>>> records;

  const Tensor<double>* find(std::string_view name) const;
  std::string encode() const;
  static TensorArchive decode(std::string_view bytes);
};

struct Checkpoint {
  ModelConfig config;
  ModelWeights<Tensor<double>> weights;

  /// Model hyper-parameters are stored as "meta.*" records ahead of the weights.
  TensorArchive to_archive() const;
  static Checkpoint from_archive(const TensorArchive& archive);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace agnn
