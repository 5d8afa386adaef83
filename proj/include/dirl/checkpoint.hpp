#pragma once

#include "dirl/config.hpp"
#include "dirl/policy.hpp"
#include "dirl/world_model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

// File layout: "DIRLCKPT", u32 format version, u32 header length, JSON header, u32 tensor count,
// then per tensor: u32 name length, name, u32 rank, rank x u64 dims, f32 little-endian values.

namespace dirl
{

struct CheckpointError : std::runtime_error
{
	using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointContents
{
	nlohmann::json header;
	std::map<std::string, torch::Tensor> tensors;  // float32, CPU
};

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
					  const std::map<std::string, torch::Tensor>& tensors);
CheckpointContents read_checkpoint(const std::filesystem::path& path);

/// Header records kind, image size, horizon and the resolved config (dims, loss weights, lambda).
void save_world_model(WorldModel& model, const RunConfig& cfg, const std::filesystem::path& path);
WorldModel load_world_model(const std::filesystem::path& path, RunConfig* cfg_out = nullptr);

void save_policy(Policy& policy, const RunConfig& cfg, const std::filesystem::path& path,
				 const nlohmann::json& metadata = nlohmann::json::object());
Policy load_policy(const std::filesystem::path& path, RunConfig* cfg_out = nullptr,
				   nlohmann::json* metadata_out = nullptr);

} // namespace dirl
