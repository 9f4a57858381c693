#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "nvsd/diffusion.hpp"
#include "nvsd/model.hpp"

namespace nvsd {

// On-disk layout: magic "NVSD", u32 version, u64 metadata byte length,
// UTF-8 JSON metadata, then repeated tensor records
//   [u16 name length][name][u8 rank][u32 dims...][little-endian fp32 data].
// The metadata always carries the model config, so loading rebuilds the
// exact architecture. Save -> load -> save is byte-identical.

constexpr std::uint32_t kCheckpointVersion = 1;

// extra_meta entries are merged into the metadata object (e.g. config
// fingerprint, training step).
void save_checkpoint(const Denoiser& model, const std::string& path,
                     const nlohmann::ordered_json& extra_meta = {});

struct Checkpoint {
  nlohmann::ordered_json meta;
  std::vector<NamedParam> tensors;
};

// Throws std::runtime_error naming the failure (bad magic, unsupported
// version, or the index of the truncated/corrupt record).
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds a model from meta["model"] and the tensor table.
std::shared_ptr<Denoiser> load_model(const std::string& path);

// Expert pairs live in one file: "high."/"low." name prefixes plus
// meta["boundary"].
void save_expert_pair(const ExpertPair& pair, const std::string& path,
                      const nlohmann::ordered_json& extra_meta = {});
ExpertPair load_expert_pair(const std::string& path);

// DenoiserConfig <-> JSON used inside checkpoint metadata.
nlohmann::ordered_json denoiser_config_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

}  // namespace nvsd
