#include "dirl/world_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace dirl
{

namespace nn = torch::nn;
namespace ev = evidential;

bool PlateauDetector::update(double loss)
{
	if (!has_best_ || loss < best_ - tolerance_ * std::abs(best_))
	{
		best_ = loss;
		has_best_ = true;
		stale_ = 0;
		return false;
	}
	return ++stale_ >= patience_;
}

WorldModelImpl::WorldModelImpl(const WorldModelConfig& c, int h, int w) : cfg(c), image_height(h), image_width(w)
{
	cfg.validate();
	const int hid = cfg.hidden;
	image_encoder = register_module("image_encoder", ImageEncoder(h, w, cfg.encoder_channels, cfg.image_features));
	speed_encoder = register_module("speed_encoder", nn::Linear(1, cfg.speed_features));
	// Normalizing the encoding keeps the tanh initial state out of saturation as encoder features grow.
	encoding_norm = register_module(
		"encoding_norm", nn::LayerNorm(nn::LayerNormOptions({cfg.image_features + cfg.speed_features})));
	initial_state =
		register_module("initial_state", nn::Linear(cfg.image_features + cfg.speed_features, 3 * hid));
	action_embed = register_module("action_embed", nn::Linear(2, cfg.action_features));
	gru_image = register_module("gru_image", nn::GRU(nn::GRUOptions(cfg.action_features, hid).batch_first(true)));
	gru_speed = register_module("gru_speed", nn::GRU(nn::GRUOptions(hid, hid).batch_first(true)));
	gru_collision = register_module("gru_collision", nn::GRU(nn::GRUOptions(hid, hid).batch_first(true)));
	image_decoder = register_module("image_decoder", ImageDecoder(hid, h, w, cfg.decoder_channels, 12));
	speed_head = register_module("speed_head", nn::Sequential(nn::Linear(hid, 64), nn::SiLU(), nn::Linear(64, 4)));
	collision_head =
		register_module("collision_head", nn::Sequential(nn::Linear(hid, 64), nn::SiLU(), nn::Linear(64, 2)));
	// Start both evidence outputs inside the ReLU's active region; a class whose logit is negative for every
	// input receives no gradient and never recovers.
	{
		torch::NoGradGuard g;
		collision_head[2]->as<nn::Linear>()->bias.fill_(1.0);
	}
}

torch::Tensor WorldModelImpl::encode(const torch::Tensor& images, const torch::Tensor& speeds)
{
	auto fi = image_encoder(images);
	auto fs = torch::silu(speed_encoder(speeds.reshape({-1, 1})));
	return torch::cat({fi, fs}, 1);
}

RolloutPrediction WorldModelImpl::rollout(const torch::Tensor& images, const torch::Tensor& speeds,
										  const torch::Tensor& actions, const torch::Tensor& image_steps)
{
	const auto b = actions.size(0);
	const int hid = cfg.hidden;

	auto h0 = torch::tanh(initial_state(encoding_norm(encode(images, speeds)))).view({b, 3, hid}).permute({1, 0, 2});
	auto a = torch::silu(action_embed(actions));

	auto out1 = std::get<0>(gru_image(a, h0.slice(0, 0, 1).contiguous()));
	auto out2 = std::get<0>(gru_speed(out1, h0.slice(0, 1, 2).contiguous()));
	auto out3 = std::get<0>(gru_collision(out2, h0.slice(0, 2, 3).contiguous()));

	RolloutPrediction p;
	auto decoded = out1;
	if (image_steps.defined())
	{
		p.image_steps = image_steps;
		decoded = out1.index_select(1, image_steps);
	}
	const auto steps = decoded.size(1);
	auto maps = steps == 0 ? torch::empty({b, 0, 12, image_height, image_width}, out1.options())
						   : image_decoder(decoded.reshape({b * steps, hid})).view({b, steps, 12, image_height, image_width});
	auto im = maps.chunk(4, 2);
	p.image = ev::nig_activation(im[0], im[1], im[2], im[3]);

	// The speed mean is an offset from the anchor speed.
	auto s = speed_head->forward(out2).unbind(-1);
	p.speed = ev::nig_activation(s[0], s[1], s[2], s[3]);
	p.speed.gamma = p.speed.gamma + speeds.to(p.speed.gamma.dtype()).unsqueeze(1);

	p.collision_logits = collision_head->forward(out3);
	p.collision_evidence = ev::relu_evidence(p.collision_logits);

	p.image_uncertainty = ev::nig_uncertainty(p.image).mean({2, 3, 4});
	p.speed_uncertainty = ev::nig_uncertainty(p.speed);
	p.collision_uncertainty = ev::class_uncertainty(p.collision_evidence);
	p.collision_probability = ev::class_probabilities(p.collision_evidence).select(-1, 1);
	return p;
}

std::vector<FrameWindow> rollout_windows(const Dataset& data, int horizon)
{
	if (horizon < 1)
		throw std::invalid_argument("rollout_windows: horizon must be positive");
	std::vector<FrameWindow> out;
	for (const auto& ep : data.episodes())
	{
		const auto n = ep->frames.size();
		for (std::size_t s = 0; s + 1 < n; ++s)
			out.push_back({ep.get(), s, std::min(n - s, static_cast<std::size_t>(horizon) + 1)});
	}
	return out;
}

WorldModelBatch make_world_batch(std::span<const FrameWindow> windows, int horizon_steps)
{
	if (windows.empty())
		throw std::invalid_argument("empty batch");
	std::size_t longest = 0;
	for (const auto& w : windows)
	{
		if (w.length < 2)
			throw std::invalid_argument("windows need at least two frames");
		longest = std::max(longest, w.length);
	}
	const auto horizon = horizon_steps > 0 ? static_cast<std::int64_t>(horizon_steps) : static_cast<std::int64_t>(longest - 1);
	if (static_cast<std::int64_t>(longest) > horizon + 1)
		throw std::invalid_argument("window longer than the horizon");
	const auto b = static_cast<std::int64_t>(windows.size());

	std::vector<const Image*> anchors;
	std::vector<const Image*> targets;
	std::vector<StoredAction> acts;
	auto speeds = torch::empty({b}, torch::kFloat32);
	auto tspeed = torch::empty({b, horizon}, torch::kFloat32);
	auto tcoll = torch::empty({b, horizon}, torch::kFloat32);
	auto mask = torch::empty({b, horizon}, torch::kFloat32);
	for (std::int64_t i = 0; i < b; ++i)
	{
		auto fr = windows[static_cast<std::size_t>(i)].frames();
		const auto last = static_cast<std::int64_t>(fr.size()) - 1;
		anchors.push_back(&fr[0].image);
		speeds[i] = fr[0].speed;
		for (std::int64_t t = 0; t < horizon; ++t)
		{
			// The last frame's action is real (it led out of the window); only later steps repeat it.
			acts.push_back(fr[static_cast<std::size_t>(std::min(t, last))].action);
			const auto& next = fr[static_cast<std::size_t>(std::min(t + 1, last))];
			targets.push_back(&next.image);
			tspeed[i][t] = next.speed;
			tcoll[i][t] = static_cast<float>(next.collision);
			mask[i][t] = t + 1 <= last ? 1.0F : 0.0F;
		}
	}
	WorldModelBatch batch;
	batch.images = images_to_tensor(anchors);
	batch.speeds = speeds;
	batch.actions = actions_to_tensor(acts).view({b, horizon, 2});
	auto ti = images_to_tensor(targets);
	batch.target_images = ti.view({b, horizon, ti.size(1), ti.size(2), ti.size(3)});
	batch.target_speeds = tspeed;
	batch.target_collision = tcoll;
	batch.mask = mask;
	return batch;
}

WorldModelLoss world_model_loss(const RolloutPrediction& pred, const WorldModelBatch& batch,
								const WorldModelConfig& cfg, const ev::EvidentialLossConfig& evc)
{
	const auto dtype = pred.speed.gamma.scalar_type();
	const auto valid =
		batch.mask.defined() ? batch.mask.to(dtype) : torch::ones(batch.target_speeds.sizes(), pred.speed.gamma.options());
	// Mean over valid steps; `step_mask` broadcasts against the per-element loss.
	auto masked_mean = [](const torch::Tensor& x, const torch::Tensor& step_mask) {
		auto shape = step_mask.sizes().vec();
		shape.resize(static_cast<std::size_t>(x.dim()), 1);
		const double per_step = static_cast<double>(x.numel()) / static_cast<double>(step_mask.numel());
		return (x * step_mask.view(shape)).sum() / (step_mask.sum() * per_step).clamp_min(1.0);
	};
	auto regression = [&](const ev::NIGTensors& p, const torch::Tensor& y, const torch::Tensor& m) {
		return masked_mean(ev::nig_nll(p, y) + evc.lambda * ev::nig_regularizer(p, y), m);
	};
	WorldModelLoss l;
	const bool subset = pred.image_steps.defined();
	const auto target_images = subset ? batch.target_images.index_select(1, pred.image_steps) : batch.target_images;
	const auto image_mask = subset ? valid.index_select(1, pred.image_steps) : valid;
	l.image = target_images.size(1) == 0 ? torch::zeros({}, pred.speed.gamma.options())
										 : regression(pred.image, target_images.to(dtype), image_mask);
	l.speed = regression(pred.speed, batch.target_speeds.to(dtype), valid);
	auto onehot = torch::stack({1.0 - batch.target_collision, batch.target_collision}, -1).to(dtype);
	const auto per_step = ev::evidential_class_loss(pred.collision_evidence, onehot) +
						  cfg.collision_kl * ev::misleading_evidence_kl(pred.collision_evidence, onehot);
	const auto target = batch.target_collision.to(dtype) * valid;
	const auto positives = target.sum();
	const auto negatives = valid.sum() - positives;
	if (cfg.balance_collision && positives.item<double>() > 0.0 && negatives.item<double>() > 0.0)
	{
		// Each class carries half of the term regardless of how rare collisions are in the batch.
		const auto weights = 0.5 * target / positives + 0.5 * (valid - target) / negatives;
		l.collision = (weights * per_step).sum();
	}
	else
	{
		l.collision = masked_mean(per_step, valid);
	}
	l.total = cfg.w_image * l.image + cfg.w_speed * l.speed + cfg.w_collision * l.collision;
	return l;
}

namespace
{

bool has_collision_target(const FrameWindow& w)
{
	auto fr = w.frames();
	return std::any_of(fr.begin() + 1, fr.end(), [](const Frame& f) { return f.collision != 0; });
}

struct WindowSampler
{
	std::vector<FrameWindow> all;
	std::vector<FrameWindow> positive;
	double oversample = 0.0;

	WindowSampler(const Dataset& data, int horizon, double share) : all(rollout_windows(data, horizon))
	{
		for (const auto& w : all)
			if (has_collision_target(w))
				positive.push_back(w);
		oversample = positive.empty() ? 0.0 : share;
	}

	std::vector<FrameWindow> draw(std::size_t n, std::mt19937_64& rng) const
	{
		if (all.empty())
			throw InsufficientData("no episode with two or more frames");
		const auto n_pos = static_cast<std::size_t>(std::lround(oversample * static_cast<double>(n)));
		std::uniform_int_distribution<std::size_t> pick_all(0, all.size() - 1);
		std::vector<FrameWindow> out;
		out.reserve(n);
		if (n_pos > 0)
		{
			std::uniform_int_distribution<std::size_t> pick_pos(0, positive.size() - 1);
			for (std::size_t i = 0; i < n_pos; ++i)
				out.push_back(positive[pick_pos(rng)]);
		}
		while (out.size() < n)
			out.push_back(all[pick_all(rng)]);
		return out;
	}
};

double evaluate(WorldModel& model, const std::vector<WorldModelBatch>& batches, const WorldModelConfig& cfg,
				const ev::EvidentialLossConfig& evc)
{
	torch::NoGradGuard guard;
	double sum = 0.0;
	for (const auto& b : batches)
		sum += world_model_loss(model->rollout(b.images, b.speeds, b.actions), b, cfg, evc).total.item<double>();
	return sum / static_cast<double>(batches.size());
}

} // namespace

TrainingCurve train_world_model(WorldModel& model, const Dataset& data, const WorldModelConfig& cfg,
								const ev::EvidentialLossConfig& evc, std::mt19937_64& rng, const ProgressFn& progress)
{
	cfg.validate();
	auto [train_set, held_set] = data.split(static_cast<std::size_t>(cfg.holdout_every));
	if (rollout_windows(held_set, cfg.horizon).empty())
		held_set = train_set;

	const WindowSampler sampler(train_set, cfg.horizon, cfg.collision_oversample);
	const WindowSampler held_sampler(held_set, cfg.horizon, 0.0);

	// Fixed evaluation samples so successive epochs are comparable.
	std::mt19937_64 eval_rng(rng());
	const auto bsz = static_cast<std::size_t>(cfg.batch_size);
	std::vector<WorldModelBatch> train_eval;
	std::vector<WorldModelBatch> held_eval;
	for (int i = 0; i < cfg.eval_batches; ++i)
	{
		train_eval.push_back(make_world_batch(sampler.draw(bsz, eval_rng), cfg.horizon));
		held_eval.push_back(make_world_batch(held_sampler.draw(bsz, eval_rng), cfg.horizon));
	}

	model->train();
	for (auto& p : model->parameters())
		p.set_requires_grad(true);
	torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
	PlateauDetector plateau(cfg.plateau_patience, cfg.plateau_tolerance);

	TrainingCurve curve;
	curve.train_loss.push_back(evaluate(model, train_eval, cfg, evc));
	curve.heldout_loss.push_back(evaluate(model, held_eval, cfg, evc));
	for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch)
	{
		for (int k = 0; k < cfg.batches_per_epoch; ++k)
		{
			auto batch = make_world_batch(sampler.draw(bsz, rng), cfg.horizon);
			torch::Tensor steps;
			if (cfg.image_loss_steps < cfg.horizon)
			{
				std::vector<std::int64_t> idx(static_cast<std::size_t>(cfg.horizon));
				std::iota(idx.begin(), idx.end(), 0);
				std::shuffle(idx.begin(), idx.end(), rng);
				idx.resize(static_cast<std::size_t>(cfg.image_loss_steps));
				std::sort(idx.begin(), idx.end());
				steps = torch::tensor(idx, torch::kInt64);
			}
			auto loss =
				world_model_loss(model->rollout(batch.images, batch.speeds, batch.actions, steps), batch, cfg, evc);
			opt.zero_grad();
			loss.total.backward();
			nn::utils::clip_grad_norm_(model->parameters(), 10.0);
			opt.step();
		}
		curve.train_loss.push_back(evaluate(model, train_eval, cfg, evc));
		curve.heldout_loss.push_back(evaluate(model, held_eval, cfg, evc));
		curve.epochs = epoch;
		if (progress)
		{
			char line[128];
			std::snprintf(line, sizeof line, "world model epoch %d: train %.4f held-out %.4f", epoch,
						  curve.train_loss.back(), curve.heldout_loss.back());
			progress(line);
		}
		if (plateau.update(curve.heldout_loss.back()))
		{
			curve.plateaued = true;
			break;
		}
	}
	return curve;
}

nlohmann::json WorldModelMetrics::to_json() const
{
	return {{"windows", windows},
			{"speed_mae", speed_mae},
			{"baseline_speed_mae", baseline_speed_mae},
			{"collision_positives", collision_positives},
			{"collision_recall", collision_recall},
			{"collision_precision", collision_precision},
			{"mean_probability_positive", mean_probability_positive},
			{"mean_probability_negative", mean_probability_negative}};
}

WorldModelMetrics evaluate_world_model(WorldModel& model, const Dataset& data, std::size_t batch)
{
	if (batch == 0)
		throw std::invalid_argument("evaluate_world_model: batch must be positive");
	const auto windows = rollout_windows(data, model->cfg.horizon);
	WorldModelMetrics m;
	m.windows = windows.size();
	if (windows.empty())
		return m;
	torch::NoGradGuard guard;
	const bool was_training = model->is_training();
	model->eval();
	double err = 0.0;
	double base = 0.0;
	std::int64_t tp = 0;
	std::int64_t predicted = 0;
	std::int64_t positives = 0;
	std::int64_t negatives = 0;
	double p_pos = 0.0;
	double p_neg = 0.0;
	for (std::size_t start = 0; start < windows.size(); start += batch)
	{
		const auto n = std::min(batch, windows.size() - start);
		const auto b = make_world_batch(std::span(windows).subspan(start, n), model->cfg.horizon);
		const auto valid = b.mask > 0.5;
		const auto pred = model->rollout(b.images, b.speeds, b.actions, torch::empty({0}, torch::kInt64));
		const auto next = b.target_speeds.select(1, 0);
		err += (pred.speed.gamma.select(1, 0) - next).abs().sum().item<double>();
		base += (b.speeds - next).abs().sum().item<double>();
		const auto hit = (pred.collision_probability >= 0.5) & valid;
		const auto truth = (b.target_collision > 0.5) & valid;
		const auto negative = valid & truth.logical_not();
		tp += (hit & truth).sum().item<std::int64_t>();
		p_pos += pred.collision_probability.masked_select(truth).sum().item<double>();
		p_neg += pred.collision_probability.masked_select(negative).sum().item<double>();
		negatives += negative.sum().item<std::int64_t>();
		predicted += hit.sum().item<std::int64_t>();
		positives += truth.sum().item<std::int64_t>();
	}
	model->train(was_training);
	m.speed_mae = err / static_cast<double>(windows.size());
	m.baseline_speed_mae = base / static_cast<double>(windows.size());
	m.collision_positives = static_cast<std::size_t>(positives);
	m.collision_recall = positives > 0 ? static_cast<double>(tp) / static_cast<double>(positives) : 0.0;
	m.collision_precision = predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
	m.mean_probability_positive = positives > 0 ? p_pos / static_cast<double>(positives) : 0.0;
	m.mean_probability_negative = negatives > 0 ? p_neg / static_cast<double>(negatives) : 0.0;
	return m;
}

} // namespace dirl
