#pragma once

// Flat named-array container, byte-compatible with the safetensors layout:
//
//   [u64 little-endian header length N][N bytes JSON header][raw payload]
//
// The header maps each key to {"dtype", "shape", "data_offsets": [begin, end]} with offsets
// relative to the payload start. An optional "__metadata__" object carries string pairs.
// Keys follow "<component>.<layer>.<tensor>", e.g. "spatial.layers.3.attn.q_proj.weight".

#include <filesystem>
#include <map>
#include <string>

#include <torch/torch.h>

namespace maskclip::archive {

struct Archive {
  std::map<std::string, torch::Tensor> tensors;
  std::map<std::string, std::string> metadata;
};

/// Supported dtypes: F32, F64, I64, U8.
void save(const std::filesystem::path& path, const Archive& a);

/// Throws CheckpointError on truncated payloads, bad headers, or overlapping offsets.
Archive load(const std::filesystem::path& path);

}  // namespace maskclip::archive
