#include "planeloc/nn/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "../binary_io.hpp"
#include "planeloc/error.hpp"

namespace planeloc::nn {
namespace {

constexpr char kMagic[9] = "PLCKPT\0\0";

}  // namespace

void write_tensors(std::ostream& out, std::uint64_t digest, const NamedTensors& tensors) {
  detail::write_magic(out, kMagic);
  detail::write_le<std::uint32_t>(out, kCheckpointVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  detail::write_le<std::uint64_t>(out, digest);
  for (const auto& [name, t] : tensors) {
    detail::write_le<std::uint64_t>(out, t->size());
    for (double x : t->values()) detail::write_le<double>(out, x);
  }
}

void read_tensors(std::istream& in, std::uint64_t digest, const NamedTensors& tensors) {
  if (!detail::read_magic(in, kMagic)) fail(ErrorKind::IoError, "not a checkpoint stream");
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    fail(ErrorKind::IoError, "unsupported checkpoint version " + std::to_string(version));
  }
  if (detail::read_le<std::uint32_t>(in) != tensors.size()) {
    fail(ErrorKind::SpecMismatch, "checkpoint tensor count differs");
  }
  if (detail::read_le<std::uint64_t>(in) != digest) {
    fail(ErrorKind::SpecMismatch, "checkpoint was written for a different network spec");
  }
  for (const auto& [name, t] : tensors) {
    if (detail::read_le<std::uint64_t>(in) != t->size()) {
      fail(ErrorKind::SpecMismatch, "checkpoint tensor " + name + " has a different size");
    }
    for (double& x : t->values()) x = detail::read_le<double>(in);
  }
}

void save_checkpoint(const std::filesystem::path& path, const std::string& spec_json,
                     const NamedTensors& tensors) {
  const std::uint64_t digest = fnv1a64(spec_json);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot write checkpoint " + path.string());
    write_tensors(out, digest, tensors);
    if (!out) fail(ErrorKind::IoError, "checkpoint write failed: " + path.string());
  }
  nlohmann::json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["digest"] = digest;
  manifest["spec"] = nlohmann::json::parse(spec_json);
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t->shape()}});
  }
  std::ofstream out(path.string() + ".json");
  if (!out) fail(ErrorKind::IoError, "cannot write checkpoint manifest for " + path.string());
  out << manifest.dump(2) << '\n';
}

void load_checkpoint(const std::filesystem::path& path, const std::string& spec_json,
                     const NamedTensors& tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open checkpoint " + path.string());
  read_tensors(in, fnv1a64(spec_json), tensors);
}

void save_checkpoint(const std::filesystem::path& path, Network& net) {
  save_checkpoint(path, net.describe_json(), net.state_tensors());
}

void load_checkpoint(const std::filesystem::path& path, Network& net) {
  load_checkpoint(path, net.describe_json(), net.state_tensors());
}

}  // namespace planeloc::nn
