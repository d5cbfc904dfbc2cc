#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <torch/torch.h>

namespace maskclip::digest {

/// Hex SHA-256 of raw bytes.
std::string sha256(const void* data, std::size_t size);

/// Hex SHA-256 over (name, dtype, shape, bytes) of every tensor, in key order.
std::string tensors_sha256(const std::map<std::string, torch::Tensor>& tensors);

/// Hex SHA-256 over the relative paths and contents of every regular file under dir.
std::string directory_sha256(const std::filesystem::path& dir);

}  // namespace maskclip::digest
