#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "planeloc/nn/network.hpp"

namespace planeloc::nn {

// Binary layout: "PLCKPT\0\0", u32 version, u32 tensor count, u64 spec digest,
// then per tensor u64 element count and that many f64, little-endian, in
// declaration order. A JSON manifest (<path>.json) lists the spec and the
// tensor names and shapes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

void write_tensors(std::ostream& out, std::uint64_t digest, const NamedTensors& tensors);
/// Throws SpecMismatch on a digest or layout mismatch, IoError on bad bytes.
void read_tensors(std::istream& in, std::uint64_t digest, const NamedTensors& tensors);

/// Writes `path` and `path + ".json"`. Throws IoError.
void save_checkpoint(const std::filesystem::path& path, const std::string& spec_json,
                     const NamedTensors& tensors);
void load_checkpoint(const std::filesystem::path& path, const std::string& spec_json,
                     const NamedTensors& tensors);

void save_checkpoint(const std::filesystem::path& path, Network& net);
void load_checkpoint(const std::filesystem::path& path, Network& net);

}  // namespace planeloc::nn
