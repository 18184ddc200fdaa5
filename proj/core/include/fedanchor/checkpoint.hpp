#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "fedanchor/nn.hpp"

namespace fedanchor::experiment {

/// Simulation state after `round` completed rounds. Round 0 is the pretrained
/// model before any federated round. Every random stream is a pure function
/// of (seed, round, client), so this is all a bit-exact resume needs.
///
/// Binary layout, little-endian:
///   char[8]  magic "FANCHCKP"
///   u32      format version (1)
///   u64      seed
///   u64      round
///   u64      input_dim
///   u64      hidden layer count H, then H x u64 widths
///   u64      num_classes
///   u64      anchor_dim
///   f64[]    parameters: per backbone layer weight (out x in, row-major)
///            then bias; classification head weight, bias; anchor head
///            weight, bias
///   u64      FNV-1a hash of every preceding byte
struct Checkpoint {
  std::uint64_t seed = 0;
  std::size_t round = 0;
  nn::ModelParameters params;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws std::runtime_error on a missing, truncated or corrupted file.
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::size_t round);

}  // namespace fedanchor::experiment
