#include "dirl/policy.hpp"
#include "tiny_models.hpp"

#include <doctest.h>

#include <cmath>

using namespace dirl;
using dirl::testing::random_images;
using dirl::testing::tiny_policy_config;
using dirl::testing::tiny_world_config;

namespace
{

Policy tiny_policy(int horizon = 4, std::uint64_t seed = 5)
{
	torch::manual_seed(seed);
	Policy p(tiny_policy_config(), horizon, 16, 16);
	p->to(torch::kFloat64);
	return p;
}

WorldModel tiny_world(int horizon = 4, std::uint64_t seed = 6)
{
	torch::manual_seed(seed);
	WorldModel w(tiny_world_config(horizon), 16, 16);
	w->to(torch::kFloat64);
	return w;
}

Observation random_observation(std::uint64_t seed)
{
	auto ep = dirl::testing::synthetic_episode("o", 1, 16, 16, false, seed);
	return {ep.frames[0].image, 1.25};
}

} // namespace

TEST_CASE("policy output shapes, positive sigma and determinism")
{
	auto p = tiny_policy(6);
	torch::NoGradGuard g;
	auto img = random_images(3, 16, 16);
	auto sp = torch::rand({3}, torch::kFloat64);
	const auto a = p->forward(img, sp);
	const auto b = p->forward(img, sp);
	CHECK(a.mu.sizes().vec() == std::vector<std::int64_t>{3, 6, 2});
	CHECK(a.sigma.sizes().vec() == std::vector<std::int64_t>{3, 6, 2});
	CHECK((a.sigma > 0).all().item<bool>());
	CHECK(torch::equal(a.mu, b.mu));
	CHECK(torch::equal(a.sigma, b.sigma));
	CHECK_THROWS(p->forward(random_images(1, 24, 24), torch::rand({1}, torch::kFloat64)));
}

TEST_CASE("reparametrized sampling")
{
	const PolicyOutput out{torch::zeros({1, 1, 2}, torch::kFloat64), torch::full({1, 1, 2}, 0.1, torch::kFloat64)};
	const auto raw = sample_raw_actions(out, torch::ones({1, 1, 2}, torch::kFloat64));
	CHECK(raw[0][0][0].item<double>() == doctest::Approx(0.1).epsilon(1e-15));
	CHECK(raw[0][0][1].item<double>() == doctest::Approx(0.1).epsilon(1e-15));
	const auto a = sample_actions(out, torch::ones({1, 1, 2}, torch::kFloat64));
	CHECK(a[0][0][0].item<double>() == doctest::Approx(std::tanh(0.1)).epsilon(1e-15));

	auto mu = torch::randn({2, 4, 2}, torch::kFloat64);
	const PolicyOutput o2{mu, torch::rand({2, 4, 2}, torch::kFloat64) + 0.1};
	CHECK(torch::equal(sample_actions(o2, torch::zeros_like(mu)), squash_actions(mu)));
}

TEST_CASE("Monte Carlo spread of sampled raw actions matches sigma")
{
	torch::manual_seed(17);
	const std::int64_t n = 100000;
	const PolicyOutput out{torch::full({n, 1, 2}, 0.2, torch::kFloat64), torch::full({n, 1, 2}, 0.3, torch::kFloat64)};
	const auto raw = sample_raw_actions(out, torch::randn({n, 1, 2}, torch::kFloat64));
	for (int c = 0; c < 2; ++c)
	{
		const double sd = raw.select(2, c).std().item<double>();
		CHECK(std::abs(sd - 0.3) / 0.3 < 0.02);
	}
}

TEST_CASE("squashing keeps every action in range for extreme parameters")
{
	torch::manual_seed(2);
	const PolicyOutput out{torch::randn({500, 3, 2}, torch::kFloat64) * 50.0,
						   torch::rand({500, 3, 2}, torch::kFloat64) * 50.0};
	const auto a = sample_actions(out, torch::randn({500, 3, 2}, torch::kFloat64) * 5.0);
	CHECK((a.select(2, 0) >= -1).all().item<bool>());
	CHECK((a.select(2, 0) <= 1).all().item<bool>());
	CHECK((a.select(2, 1) >= 0).all().item<bool>());
	CHECK((a.select(2, 1) <= 1).all().item<bool>());
}

TEST_CASE("act returns the squashed first mean, ignores sigma and repeats exactly")
{
	auto p = tiny_policy();
	const auto obs = random_observation(9);
	const Action a = act(p, obs);
	const Action b = act(p, obs);
	CHECK(a == b);
	torch::NoGradGuard g;
	const auto out = policy_forward(p, obs);
	const auto first = squash_actions(out.mu).select(1, 0);
	CHECK(a.steering == first[0][0].item<double>());
	CHECK(a.throttle == first[0][1].item<double>());
	p->sigma_head->bias.add_(3.0);
	CHECK(act(p, obs) == a);
	// Eq. 5 with eps = 0 extends act over the horizon.
	const auto plan = sample_actions(out, torch::zeros_like(out.mu));
	CHECK(plan[0][0][0].item<double>() == a.steering);
}

TEST_CASE("imitation loss")
{
	const int horizon = 10;
	auto targets = torch::empty({1, horizon, 2}, torch::kFloat64);
	targets.select(2, 0).fill_(0.3);
	targets.select(2, 1).fill_(0.6);
	auto mu = torch::empty_like(targets);
	mu.select(2, 0).fill_(std::atanh(0.3));
	mu.select(2, 1).fill_(std::log(0.6 / 0.4));
	const PolicyOutput exact{mu, torch::full_like(mu, 0.2)};
	CHECK(il_loss(exact, targets).item<double>() == doctest::Approx(0.0).epsilon(1e-12));

	auto off = targets.clone();
	off[0][4][1] += 0.2;
	CHECK(il_loss(exact, off).item<double>() == doctest::Approx(0.01).epsilon(1e-9));
	const PolicyOutput wide{mu, torch::full_like(mu, 5.0)};
	CHECK(il_loss(wide, off).item<double>() == il_loss(exact, off).item<double>());
}

TEST_CASE("refinement loss components")
{
	auto p = tiny_policy();
	auto w = tiny_world();
	auto img = random_images(3, 16, 16);
	auto sp = torch::rand({3}, torch::kFloat64) * 2.0;
	auto eps = torch::randn({3, 4, 2}, torch::kFloat64);
	torch::NoGradGuard g;

	PolicyConfig zero = tiny_policy_config();
	zero.w_speed = zero.w_collision = zero.w_uncertainty = 0.0;
	CHECK(refinement_loss(p, w, img, sp, eps, zero, 3.0).total.item<double>() == 0.0);

	PolicyConfig speed_only = zero;
	speed_only.w_speed = 1.0;
	const auto pred = w->rollout(img, sp, sample_actions(p->forward(img, sp), eps));
	const double direct = -(pred.speed.gamma.sum(1).mean().item<double>()) / 3.0;
	CHECK(refinement_loss(p, w, img, sp, eps, speed_only, 3.0).total.item<double>() ==
		  doctest::Approx(direct).epsilon(1e-12));

	PolicyConfig mixed = tiny_policy_config();
	mixed.w_speed = 0.4;
	mixed.w_collision = 7.0;
	mixed.w_uncertainty = 0.3;
	const auto l = refinement_loss(p, w, img, sp, eps, mixed, 3.0);
	const double coll = pred.collision_probability.sum(1).mean().item<double>();
	const double unc =
		(pred.image_uncertainty + pred.speed_uncertainty + pred.collision_uncertainty).sum(1).mean().item<double>();
	CHECK(l.collision.item<double>() == doctest::Approx(coll).epsilon(1e-12));
	CHECK(l.uncertainty.item<double>() == doctest::Approx(unc).epsilon(1e-12));
	CHECK(l.total.item<double>() == doctest::Approx(0.4 * direct + 7.0 * coll + 0.3 * unc).epsilon(1e-6));

	auto w3 = tiny_world(3);
	CHECK_THROWS(refinement_loss(p, w3, img, sp, eps, mixed, 3.0));
}

TEST_CASE("refinement gradient reaches the policy and matches central differences")
{
	auto p = tiny_policy(4, 21);
	auto w = tiny_world(4, 22);
	for (auto& t : w->parameters())
		t.set_requires_grad(false);
	auto img = random_images(2, 16, 16);
	auto sp = torch::rand({2}, torch::kFloat64) * 2.0;
	auto eps = torch::randn({2, 4, 2}, torch::kFloat64);
	const PolicyConfig cfg = tiny_policy_config();

	auto params = p->parameters();
	auto loss = refinement_loss(p, w, img, sp, eps, cfg, 3.0).total;
	auto grads = torch::autograd::grad({loss}, params);
	double norm = 0.0;
	for (auto& gr : grads)
		norm += gr.pow(2).sum().item<double>();
	CHECK(norm > 0.0);

	torch::NoGradGuard g;
	{
		const auto pred = w->rollout(img, sp, sample_actions(p->forward(img, sp), eps));
		REQUIRE(pred.collision_logits.abs().min().item<double>() > 1e-3);
	}
	auto theta = torch::nn::utils::parameters_to_vector(params);
	auto flat_grad = torch::cat([&] {
		std::vector<torch::Tensor> v;
		for (auto& gr : grads)
			v.push_back(gr.flatten());
		return v;
	}());
	const double h = 1e-5;
	torch::manual_seed(4);
	double worst = 0.0;
	for (int k = 0; k < 20; ++k)
	{
		auto d = torch::randn_like(theta);
		d /= d.norm();
		torch::nn::utils::vector_to_parameters(theta + h * d, params);
		const double up = refinement_loss(p, w, img, sp, eps, cfg, 3.0).total.item<double>();
		torch::nn::utils::vector_to_parameters(theta - h * d, params);
		const double down = refinement_loss(p, w, img, sp, eps, cfg, 3.0).total.item<double>();
		const double fd = (up - down) / (2 * h);
		const double an = (flat_grad * d).sum().item<double>();
		worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-12}));
	}
	torch::nn::utils::vector_to_parameters(theta, params);
	CHECK(worst < 1e-3);
}

namespace
{

Dataset imitation_data()
{
	std::vector<std::shared_ptr<const EpisodeRecord>> eps;
	for (int i = 0; i < 5; ++i)
		eps.push_back(std::make_shared<const EpisodeRecord>(
			dirl::testing::synthetic_episode("x" + std::to_string(i), 30, 16, 16, i % 2 == 1, 40 + i)));
	eps.push_back(std::make_shared<const EpisodeRecord>(
		dirl::testing::synthetic_episode("p", 30, 16, 16, false, 60, EpisodeSource::policy)));
	return Dataset(std::move(eps));
}

} // namespace

TEST_CASE("imitation trains on filtered anchors only and lowers the held-out loss")
{
	const auto data = imitation_data();
	auto cfg = tiny_policy_config();
	cfg.il_batch = 16;
	cfg.il_max_epochs = 5;
	cfg.batches_per_epoch = 6;
	cfg.il_learning_rate = 3e-3;
	cfg.holdout_every = 4;
	torch::manual_seed(3);
	Policy p(cfg, 4, 16, 16);
	std::mt19937_64 rng(2);
	std::size_t seen = 0;
	const FrameFilter filter{true, 4};
	const auto curve = train_policy_il(p, data, cfg, rng, {}, [&](const FrameRef& r) {
		++seen;
		CHECK(frame_eligible(*r.episode, r.index, filter));
	});
	CHECK(seen == static_cast<std::size_t>(curve.epochs * cfg.batches_per_epoch * cfg.il_batch));
	CHECK(curve.train_loss.back() < curve.train_loss.front());
}

TEST_CASE("refinement is offline and lowers the frozen-batch loss")
{
	const auto data = imitation_data();
	auto cfg = tiny_policy_config();
	cfg.refine_batch = 8;
	cfg.refine_max_epochs = 3;
	cfg.batches_per_epoch = 4;
	cfg.refine_learning_rate = 1e-2;
	torch::manual_seed(8);
	Policy p(cfg, 4, 16, 16);
	WorldModel w(tiny_world_config(4), 16, 16);
	std::mt19937_64 rng(5);
	const auto before = sim_step_count();
	const auto curve = refine_policy(p, w, data, cfg, 3.0, rng);
	CHECK(sim_step_count() == before);
	CHECK(curve.train_loss.back() < curve.train_loss.front());
	for (const auto& t : w->parameters())
		CHECK(t.requires_grad());
}
