#pragma once

#include "dirl/config.hpp"
#include "dirl/episode_store.hpp"
#include "dirl/evidential_ops.hpp"
#include "dirl/nets.hpp"
#include "dirl/training.hpp"

#include <torch/torch.h>

#include <random>
#include <span>

namespace dirl
{

/// Multi-step prediction from one encoded observation and H actions. Leading dims are [B, H].
struct RolloutPrediction
{
	evidential::NIGTensors image;         // each [B, H, 3, h, w]
	evidential::NIGTensors speed;         // each [B, H]
	torch::Tensor collision_logits;       // [B, H, 2], index 1 is "collision"
	torch::Tensor collision_evidence;     // [B, H, 2]
	torch::Tensor image_uncertainty;      // [B, H], mean over pixels and channels
	torch::Tensor speed_uncertainty;      // [B, H]
	torch::Tensor collision_uncertainty;  // [B, H]
	torch::Tensor collision_probability;  // [B, H]
	torch::Tensor image_steps;            // horizon indices decoded into `image`; undefined means all H
};

struct WorldModelImpl : torch::nn::Module
{
	WorldModelImpl(const WorldModelConfig& cfg, int image_height, int image_width);

	/// [B, f_i + f_s]: image features followed by speed features.
	torch::Tensor encode(const torch::Tensor& images, const torch::Tensor& speeds);
	/// images [B, 3, h, w], speeds [B], actions [B, H, 2]. When `image_steps` (int64 indices) is given only
	/// those steps are decoded, so image fields have that many entries along dim 1 (possibly zero).
	RolloutPrediction rollout(const torch::Tensor& images, const torch::Tensor& speeds, const torch::Tensor& actions,
							  const torch::Tensor& image_steps = {});

	WorldModelConfig cfg;
	int image_height;
	int image_width;

	ImageEncoder image_encoder{nullptr};
	torch::nn::Linear speed_encoder{nullptr};
	torch::nn::LayerNorm encoding_norm{nullptr};
	torch::nn::Linear initial_state{nullptr};
	torch::nn::Linear action_embed{nullptr};
	torch::nn::GRU gru_image{nullptr};
	torch::nn::GRU gru_speed{nullptr};
	torch::nn::GRU gru_collision{nullptr};
	ImageDecoder image_decoder{nullptr};
	torch::nn::Sequential speed_head{nullptr};
	torch::nn::Sequential collision_head{nullptr};
};
TORCH_MODULE(WorldModel);

/// Every anchor frame with at least one successor, windowed up to horizon+1 frames and cut at the episode end.
std::vector<FrameWindow> rollout_windows(const Dataset& data, int horizon);

/// Supervised rollout targets built from windows of up to H+1 consecutive frames. Steps past the end of a
/// shorter window repeat its last action and frame and are masked out of the loss.
struct WorldModelBatch
{
	torch::Tensor images;            // [B, 3, h, w] at the anchor
	torch::Tensor speeds;            // [B]
	torch::Tensor actions;           // [B, H, 2] executed from the anchor on
	torch::Tensor target_images;     // [B, H, 3, h, w]
	torch::Tensor target_speeds;     // [B, H]
	torch::Tensor target_collision;  // [B, H] in {0, 1}
	torch::Tensor mask;              // [B, H], 1 where the target frame exists; undefined means all valid
};

/// `horizon` 0 takes the longest window's length minus one.
WorldModelBatch make_world_batch(std::span<const FrameWindow> windows, int horizon = 0);

struct WorldModelLoss
{
	torch::Tensor total;
	torch::Tensor image;
	torch::Tensor speed;
	torch::Tensor collision;
};

WorldModelLoss world_model_loss(const RolloutPrediction& pred, const WorldModelBatch& batch,
								const WorldModelConfig& cfg, const evidential::EvidentialLossConfig& ev);

/// Adam on randomly sampled windows with collision oversampling; stops on a held-out plateau or max_epochs.
TrainingCurve train_world_model(WorldModel& model, const Dataset& data, const WorldModelConfig& cfg,
								const evidential::EvidentialLossConfig& ev, std::mt19937_64& rng,
								const ProgressFn& progress = {});

struct WorldModelMetrics
{
	std::size_t windows = 0;
	double speed_mae = 0.0;           // one-step predicted mean vs. next speed
	double baseline_speed_mae = 0.0;  // next speed predicted as the current speed
	std::size_t collision_positives = 0;
	double collision_recall = 0.0;  // over all H steps, threshold 0.5
	double collision_precision = 0.0;
	double mean_probability_positive = 0.0;  // predicted collision probability on c=1 targets
	double mean_probability_negative = 0.0;

	[[nodiscard]] nlohmann::json to_json() const;
};

/// Scores every window of H+1 frames in `data` (evaluated in chunks of `batch` windows).
WorldModelMetrics evaluate_world_model(WorldModel& model, const Dataset& data, std::size_t batch = 64);

} // namespace dirl
