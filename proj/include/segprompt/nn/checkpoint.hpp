#pragma once

#include "segprompt/nn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace segprompt::nn {

// File layout:
//   "SPKTCKP1"                     8-byte magic
//   uint64 LE                      header length in bytes
//   JSON header                    {"tensors":[{"name","shape","offset"}...]}
//   float32 LE payload             offsets are relative to the payload start
inline constexpr char kCheckpointMagic[9] = "SPKTCKP1";

struct StoredTensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

using TensorMap = std::map<std::string, StoredTensor>;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
void store(TensorMap& out, const ParameterList<Scalar>& params) {
  for (const auto* p : params) {
    StoredTensor t;
    t.shape = {p->value.rows(), p->value.cols()};
    t.data.resize(static_cast<std::size_t>(p->value.size()));
    for (Index i = 0; i < p->value.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(p->value.data()[i]);
    out[p->name] = std::move(t);
  }
}

/// Copies stored values into matching parameters; every parameter must be present with its shape.
template <typename Scalar>
void restore(const TensorMap& in, const ParameterList<Scalar>& params) {
  for (auto* p : params) {
    auto it = in.find(p->name);
    if (it == in.end()) throw CheckpointError("checkpoint is missing tensor " + p->name);
    const auto& t = it->second;
    if (t.shape.size() != 2 || t.shape[0] != p->value.rows() || t.shape[1] != p->value.cols())
      throw CheckpointError("checkpoint shape mismatch for " + p->name);
    for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = static_cast<Scalar>(t.data[static_cast<std::size_t>(i)]);
  }
}

}  // namespace segprompt::nn
