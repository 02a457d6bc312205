#pragma once

// Binary checkpoint file, all integers little-endian:
//
//   u32 format_version (= 1)
//   u64 tensor_count
//   tensor_count x {
//     u64 name_length, name bytes (UTF-8)
//     u64 rank, rank x u64 dims
//     numel x f32 payload
//   }

#include <filesystem>
#include <string>
#include <vector>

#include "tempo/nn.hpp"

namespace tempo {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using NamedTensors = std::vector<NamedParameter<float>>;

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::string& bytes);

template <typename T>
NamedTensors to_float(const std::vector<NamedParameter<T>>& tensors);
template <typename T>
std::vector<NamedParameter<T>> from_float(const NamedTensors& tensors);

// Writes stored values into `params` by name. Throws CheckpointError if a
// parameter is missing or its shape differs.
template <typename T>
void load_parameters(const ParameterList<T>& params, const NamedTensors& tensors);

}  // namespace tempo
