#include "dirl/policy.hpp"

#include <cmath>
#include <cstdio>

namespace dirl
{

namespace nn = torch::nn;

namespace
{
// softplus^-1(0.1): the policy starts with a narrow action distribution.
constexpr double kSigmaBias = -2.2521684610440904;
} // namespace

PolicyImpl::PolicyImpl(const PolicyConfig& c, int h, int image_h, int image_w)
	: cfg(c), horizon(h), image_height(image_h), image_width(image_w)
{
	cfg.validate();
	if (horizon < 1)
		throw std::invalid_argument("policy horizon must be >= 1");
	image_encoder =
		register_module("image_encoder", ImageEncoder(image_h, image_w, cfg.encoder_channels, cfg.image_features));
	speed_encoder = register_module("speed_encoder", nn::Linear(1, cfg.speed_features));
	trunk = register_module("trunk", nn::Linear(cfg.image_features + cfg.speed_features, cfg.hidden));
	mu_head = register_module("mu_head", nn::Linear(cfg.hidden, 2 * horizon));
	sigma_head = register_module("sigma_head", nn::Linear(cfg.hidden, 2 * horizon));
	torch::NoGradGuard guard;
	sigma_head->weight.mul_(0.1);
	sigma_head->bias.fill_(kSigmaBias);
}

PolicyOutput PolicyImpl::forward(const torch::Tensor& images, const torch::Tensor& speeds)
{
	if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != image_height || images.size(3) != image_width)
		throw std::invalid_argument("policy input image shape mismatch");
	auto fi = image_encoder(images);
	auto fs = torch::silu(speed_encoder(speeds.reshape({-1, 1})));
	auto z = torch::silu(trunk(torch::cat({fi, fs}, 1)));
	const auto b = images.size(0);
	return {mu_head(z).view({b, horizon, 2}), (torch::softplus(sigma_head(z)) + cfg.sigma_floor).view({b, horizon, 2})};
}

PolicyOutput policy_forward(Policy& policy, const Observation& obs)
{
	const auto dtype = policy->mu_head->weight.scalar_type();
	auto images = image_to_tensor(obs.image).to(dtype);
	auto speeds = torch::full({1}, obs.speed, torch::TensorOptions().dtype(dtype));
	return policy->forward(images, speeds);
}

torch::Tensor sample_raw_actions(const PolicyOutput& out, const torch::Tensor& eps)
{
	return out.mu + out.sigma * eps;
}

torch::Tensor sample_actions(const PolicyOutput& out, const torch::Tensor& eps)
{
	return squash_actions(sample_raw_actions(out, eps));
}

Action act(Policy& policy, const Observation& obs)
{
	torch::NoGradGuard guard;
	auto a = squash_actions(policy_forward(policy, obs).mu.select(1, 0)).to(torch::kFloat64);
	return Action{a[0][0].item<double>(), a[0][1].item<double>()}.clamped();
}

Controller policy_controller(Policy policy)
{
	policy->eval();
	return [policy](const Observation& obs) mutable { return act(policy, obs); };
}

Controller exploring_controller(Policy policy, std::uint64_t seed)
{
	policy->eval();
	auto rng = std::make_shared<std::mt19937_64>(seed);
	return [policy, rng](const Observation& obs) mutable {
		torch::NoGradGuard guard;
		std::normal_distribution<double> n01;
		auto out = policy_forward(policy, obs);
		auto mu = out.mu.select(1, 0).to(torch::kFloat64);
		auto sigma = out.sigma.select(1, 0).to(torch::kFloat64);
		const double s = mu[0][0].item<double>() + sigma[0][0].item<double>() * n01(*rng);
		const double t = mu[0][1].item<double>() + sigma[0][1].item<double>() * n01(*rng);
		return Action{std::tanh(s), 1.0 / (1.0 + std::exp(-t))}.clamped();
	};
}

torch::Tensor il_loss(const PolicyOutput& out, const torch::Tensor& expert_actions)
{
	return (squash_actions(out.mu) - expert_actions.to(out.mu.scalar_type())).abs().mean();
}

RefinementLoss refinement_loss(Policy& policy, WorldModel& world, const torch::Tensor& images,
							   const torch::Tensor& speeds, const torch::Tensor& eps, const PolicyConfig& w,
							   double v_max)
{
	if (policy->horizon != world->cfg.horizon)
		throw std::invalid_argument("policy and world model horizons differ");
	auto actions = sample_actions(policy->forward(images, speeds), eps);
	auto pred = world->rollout(images, speeds, actions);
	RefinementLoss l;
	l.speed = (-pred.speed.gamma / v_max).sum(1).mean();
	l.collision = pred.collision_probability.sum(1).mean();
	l.uncertainty = (pred.image_uncertainty + pred.speed_uncertainty + pred.collision_uncertainty).sum(1).mean();
	l.total = w.w_speed * l.speed + w.w_collision * l.collision + w.w_uncertainty * l.uncertainty;
	return l;
}

ImitationBatch make_imitation_batch(std::span<const FrameRef> anchors, int horizon)
{
	if (anchors.empty())
		throw std::invalid_argument("empty batch");
	const auto b = static_cast<std::int64_t>(anchors.size());
	std::vector<const Image*> images;
	std::vector<StoredAction> targets;
	auto speeds = torch::empty({b}, torch::kFloat32);
	for (std::int64_t i = 0; i < b; ++i)
	{
		const auto& ref = anchors[static_cast<std::size_t>(i)];
		images.push_back(&ref.frame().image);
		speeds[i] = ref.frame().speed;
		for (int k = 0; k < horizon; ++k)
		{
			const auto idx = ref.index + static_cast<std::size_t>(k);
			if (idx >= ref.episode->frames.size() || !ref.episode->frames[idx].expert_action)
				throw std::invalid_argument("anchor lacks H expert actions");
			targets.push_back(*ref.episode->frames[idx].expert_action);
		}
	}
	return {images_to_tensor(images), speeds, actions_to_tensor(targets).view({b, horizon, 2})};
}

namespace
{

struct ObservationBatch
{
	torch::Tensor images;
	torch::Tensor speeds;
	torch::Tensor eps;
};

ObservationBatch make_observation_batch(std::span<const FrameRef> refs, int horizon, std::mt19937_64& rng)
{
	std::vector<const Image*> images;
	auto speeds = torch::empty({static_cast<std::int64_t>(refs.size())}, torch::kFloat32);
	for (std::size_t i = 0; i < refs.size(); ++i)
	{
		images.push_back(&refs[i].frame().image);
		speeds[static_cast<std::int64_t>(i)] = refs[i].frame().speed;
	}
	auto eps = torch::empty({static_cast<std::int64_t>(refs.size()), horizon, 2}, torch::kFloat32);
	std::normal_distribution<float> n01;
	auto* p = eps.data_ptr<float>();
	for (std::int64_t i = 0; i < eps.numel(); ++i)
		p[i] = n01(rng);
	return {images_to_tensor(images), speeds, eps};
}

void set_trainable(torch::nn::Module& m, bool on)
{
	for (auto& p : m.parameters())
		p.set_requires_grad(on);
}

void report(const ProgressFn& progress, const char* what, int epoch, const TrainingCurve& c)
{
	if (!progress)
		return;
	char line[128];
	std::snprintf(line, sizeof line, "%s epoch %d: train %.5f held-out %.5f", what, epoch, c.train_loss.back(),
				  c.heldout_loss.back());
	progress(line);
}

} // namespace

TrainingCurve train_policy_il(Policy& policy, const Dataset& data, const PolicyConfig& cfg,
							  std::mt19937_64& rng, const ProgressFn& progress, const AnchorObserver& observer)
{
	cfg.validate();
	const FrameFilter filter{true, static_cast<std::size_t>(policy->horizon)};
	auto [train_set, held_set] = data.split(static_cast<std::size_t>(cfg.holdout_every));
	if (eligible_frames(held_set, filter).empty())
		held_set = train_set;
	if (eligible_frames(train_set, filter).empty())
		throw InsufficientData("no collision-free expert frames for imitation");

	std::mt19937_64 eval_rng(rng());
	const auto bsz = static_cast<std::size_t>(cfg.il_batch);
	const auto train_eval = make_imitation_batch(sample_frames(train_set, bsz, eval_rng, filter), policy->horizon);
	const auto held_eval = make_imitation_batch(sample_frames(held_set, bsz, eval_rng, filter), policy->horizon);
	auto evaluate = [&](const ImitationBatch& b) {
		torch::NoGradGuard guard;
		return il_loss(policy->forward(b.images, b.speeds), b.targets).item<double>();
	};

	policy->train();
	set_trainable(*policy, true);
	torch::optim::Adam opt(policy->parameters(), torch::optim::AdamOptions(cfg.il_learning_rate));
	PlateauDetector plateau(cfg.plateau_patience, cfg.plateau_tolerance);
	TrainingCurve curve;
	curve.train_loss.push_back(evaluate(train_eval));
	curve.heldout_loss.push_back(evaluate(held_eval));
	for (int epoch = 1; epoch <= cfg.il_max_epochs; ++epoch)
	{
		for (int k = 0; k < cfg.batches_per_epoch; ++k)
		{
			const auto anchors = sample_frames(train_set, bsz, rng, filter);
			if (observer)
				for (const auto& a : anchors)
					observer(a);
			const auto batch = make_imitation_batch(anchors, policy->horizon);
			auto loss = il_loss(policy->forward(batch.images, batch.speeds), batch.targets);
			opt.zero_grad();
			loss.backward();
			opt.step();
		}
		curve.train_loss.push_back(evaluate(train_eval));
		curve.heldout_loss.push_back(evaluate(held_eval));
		curve.epochs = epoch;
		report(progress, "imitation", epoch, curve);
		if (plateau.update(curve.heldout_loss.back()))
		{
			curve.plateaued = true;
			break;
		}
	}
	policy->eval();
	return curve;
}

TrainingCurve refine_policy(Policy& policy, WorldModel& world, const Dataset& data, const PolicyConfig& cfg,
							double v_max, std::mt19937_64& rng, const ProgressFn& progress)
{
	cfg.validate();
	const int horizon = policy->horizon;
	const FrameFilter any{};
	auto [train_set, held_set] = data.split(static_cast<std::size_t>(cfg.holdout_every));
	if (held_set.total_frames() == 0)
		held_set = train_set;
	const auto bsz = static_cast<std::size_t>(cfg.refine_batch);

	std::mt19937_64 eval_rng(rng());
	const auto train_eval = make_observation_batch(sample_frames(train_set, bsz, eval_rng, any), horizon, eval_rng);
	const auto held_eval = make_observation_batch(sample_frames(held_set, bsz, eval_rng, any), horizon, eval_rng);

	world->eval();
	set_trainable(*world, false);
	policy->train();
	set_trainable(*policy, true);
	auto evaluate = [&](const ObservationBatch& b) {
		torch::NoGradGuard guard;
		return refinement_loss(policy, world, b.images, b.speeds, b.eps, cfg, v_max).total.item<double>();
	};

	torch::optim::Adam opt(policy->parameters(), torch::optim::AdamOptions(cfg.refine_learning_rate));
	PlateauDetector plateau(cfg.plateau_patience, cfg.plateau_tolerance);
	TrainingCurve curve;
	curve.train_loss.push_back(evaluate(train_eval));
	curve.heldout_loss.push_back(evaluate(held_eval));
	for (int epoch = 1; epoch <= cfg.refine_max_epochs; ++epoch)
	{
		for (int k = 0; k < cfg.batches_per_epoch; ++k)
		{
			const auto b = make_observation_batch(sample_frames(train_set, bsz, rng, any), horizon, rng);
			auto loss = refinement_loss(policy, world, b.images, b.speeds, b.eps, cfg, v_max);
			opt.zero_grad();
			loss.total.backward();
			opt.step();
		}
		curve.train_loss.push_back(evaluate(train_eval));
		curve.heldout_loss.push_back(evaluate(held_eval));
		curve.epochs = epoch;
		report(progress, "refinement", epoch, curve);
		if (plateau.update(curve.heldout_loss.back()))
		{
			curve.plateaued = true;
			break;
		}
	}
	set_trainable(*world, true);
	policy->eval();
	return curve;
}

} // namespace dirl
