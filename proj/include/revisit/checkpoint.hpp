#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "revisit/backbones.hpp"

namespace revisit {

// File layout: "RVFCKPT1", uint64 little-endian header length, JSON header
// ({format, model, extra, tensors: [{name, dtype, shape, offset, nbytes}]}),
// then the raw little-endian tensor payload. Names are the canonical module
// paths of parameters and buffers.

struct Checkpoint {
  ModelConfig config;
  json extra;
  SegmentationModel model;
};

void save_checkpoint(const std::filesystem::path& path, SegmentationModelImpl& model, const json& extra = json::object());

/// Rebuilds the model from the header config and loads every tensor bit-exactly.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies tensors from a checkpoint into an existing model. With `strict`,
/// missing or unexpected names raise; shape mismatches always raise.
void load_weights(torch::nn::Module& model, const std::filesystem::path& path, bool strict = true);

/// Hash over the names and bytes of every parameter and buffer.
std::string parameter_hash(const torch::nn::Module& model);

}  // namespace revisit
