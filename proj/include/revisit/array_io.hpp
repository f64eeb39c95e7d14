#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace revisit {

// Arrays are stored as NumPy .npy v1.0 files: little-endian float32, C order.

/// Writes a tensor (converted to contiguous float32) to `path`.
void write_array(const std::filesystem::path& path, const torch::Tensor& array);

/// Reads a float32 .npy file into a CPU float32 tensor with the stored shape.
torch::Tensor read_array(const std::filesystem::path& path);

}  // namespace revisit
