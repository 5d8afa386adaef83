#pragma once

#include "dirl/collection.hpp"
#include "dirl/config.hpp"
#include "dirl/episode_store.hpp"
#include "dirl/nets.hpp"
#include "dirl/training.hpp"
#include "dirl/world_model.hpp"

#include <torch/torch.h>

#include <functional>
#include <random>

namespace dirl
{

/// Unsquashed Gaussian parameters over an H-step action plan, each [B, H, 2].
struct PolicyOutput
{
	torch::Tensor mu;
	torch::Tensor sigma;
};

struct PolicyImpl : torch::nn::Module
{
	PolicyImpl(const PolicyConfig& cfg, int horizon, int image_height, int image_width);

	PolicyOutput forward(const torch::Tensor& images, const torch::Tensor& speeds);

	PolicyConfig cfg;
	int horizon;
	int image_height;
	int image_width;

	ImageEncoder image_encoder{nullptr};
	torch::nn::Linear speed_encoder{nullptr};
	torch::nn::Linear trunk{nullptr};
	torch::nn::Linear mu_head{nullptr};
	torch::nn::Linear sigma_head{nullptr};
};
TORCH_MODULE(Policy);

PolicyOutput policy_forward(Policy& policy, const Observation& obs);

/// mu + sigma * eps before range squashing.
torch::Tensor sample_raw_actions(const PolicyOutput& out, const torch::Tensor& eps);
/// squash(mu + sigma * eps); differentiable in mu and sigma.
torch::Tensor sample_actions(const PolicyOutput& out, const torch::Tensor& eps);

/// Squashed mean of the first planned step. No sampling.
Action act(Policy& policy, const Observation& obs);
Controller policy_controller(Policy policy);
/// Executes squash(mu_0 + sigma_0 * eps) with fresh standard-normal eps each tick.
Controller exploring_controller(Policy policy, std::uint64_t seed);

/// Mean absolute error between squash(mu) and expert targets over all H x 2 entries.
torch::Tensor il_loss(const PolicyOutput& out, const torch::Tensor& expert_actions);

struct RefinementLoss
{
	torch::Tensor total;
	torch::Tensor speed;        // sum over steps of -gamma_s / v_max, batch mean
	torch::Tensor collision;    // sum over steps of collision probability, batch mean
	torch::Tensor uncertainty;  // sum over steps of u_i + u_s + u_c, batch mean
};

RefinementLoss refinement_loss(Policy& policy, WorldModel& world, const torch::Tensor& images,
							   const torch::Tensor& speeds, const torch::Tensor& eps, const PolicyConfig& weights,
							   double v_max);

/// Anchor images, speeds and the next H expert actions of each eligible frame.
struct ImitationBatch
{
	torch::Tensor images;
	torch::Tensor speeds;
	torch::Tensor targets;  // [B, H, 2]
};
ImitationBatch make_imitation_batch(std::span<const FrameRef> anchors, int horizon);

/// Called with every anchor drawn for an IL update.
using AnchorObserver = std::function<void(const FrameRef&)>;

TrainingCurve train_policy_il(Policy& policy, const Dataset& data, const PolicyConfig& cfg,
							  std::mt19937_64& rng, const ProgressFn& progress = {},
							  const AnchorObserver& observer = {});

/// Gradient descent on the refinement loss over stored observations; the world model stays frozen.
TrainingCurve refine_policy(Policy& policy, WorldModel& world, const Dataset& data, const PolicyConfig& cfg,
							double v_max, std::mt19937_64& rng, const ProgressFn& progress = {});

} // namespace dirl
