#include "dirl/collection.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace dirl;

namespace
{

// Car reaches its commanded speed (throttle * 1 m/s) within one tick.
SimConfig instant_config()
{
	SimConfig c;
	c.a_max = 10.0;
	c.drag = 10.0;
	return c;
}

Track corridor()
{
	return Track({{0, 0}, {20, 0}, {20, 10}, {-20, 10}, {-20, 0}}, 0.42);
}

// Regular 64-gon with a 10 m perimeter.
Track ring()
{
	const int n = 64;
	const double r = 10.0 / (2.0 * n * std::sin(std::numbers::pi / n));
	std::vector<Vec2> pts;
	for (int i = 0; i < n; ++i)
	{
		const double th = -std::numbers::pi / 2 + 2 * std::numbers::pi * i / n;
		pts.push_back({r * std::cos(th), r * std::sin(th)});
	}
	return Track(pts, 0.5);
}

Controller circle_controller(double throttle, const Track& track, const SimConfig& cfg)
{
	const double r = track.total_length() / (2 * std::numbers::pi);
	const double steer = std::atan(cfg.wheelbase / r) / cfg.delta_max;
	return [=](const Observation&) { return Action{steer, throttle}; };
}

} // namespace

TEST_CASE("episode without collision runs T steps with all flags clear")
{
	const auto cfg = instant_config();
	Simulator sim(corridor(), {}, cfg, pose_on_centerline(corridor(), 0.0));
	const auto ep = collect_episode([](const Observation&) { return Action{0.0, 0.3}; }, sim, 50, "clear");
	CHECK(ep.frames.size() == 50);
	CHECK_FALSE(ep.ended_in_collision);
	CHECK(ep.source == EpisodeSource::policy);
	for (const auto& f : ep.frames)
	{
		CHECK(f.collision == 0);
		CHECK_FALSE(f.expert_action.has_value());
		CHECK(f.action.throttle == doctest::Approx(0.3));
	}
}

TEST_CASE("forced collision at step 30 back-labels frames 26 to 30")
{
	const auto cfg = instant_config();
	const std::vector<Obstacle> obstacles{{{3.17, 0.0}, 0.1, 0}};
	Simulator sim(corridor(), obstacles, cfg, pose_on_centerline(corridor(), 0.0));
	const auto ep = collect_episode([](const Observation&) { return Action{0.0, 1.0}; }, sim, 200, "crash");
	REQUIRE(ep.frames.size() == 30);
	CHECK(ep.ended_in_collision);
	for (std::size_t i = 0; i < 30; ++i)
		CHECK(ep.frames[i].collision == (i >= 25 ? 1 : 0));
	CHECK(ep.frames[0].speed == 0.0F);
	CHECK(ep.frames[1].speed == doctest::Approx(1.0));
}

TEST_CASE("emergency stop uses the collision labeling path")
{
	const auto cfg = instant_config();
	Simulator sim(corridor(), {}, cfg, pose_on_centerline(corridor(), 0.0));
	const auto ep = collect_episode([](const Observation&) { return Action{0.0, 0.5}; }, sim, 200, "estop",
									[](long t) { return t == 12; });
	REQUIRE(ep.frames.size() == 12);
	CHECK(ep.ended_in_collision);
	CHECK(ep.collision_frames() == 5);
	CHECK(ep.frames[6].collision == 0);
	CHECK(ep.frames[7].collision == 1);
}

TEST_CASE("expert episodes record the clean expert action next to the executed one")
{
	const Track track = Track::stadium();
	std::mt19937_64 rng(3);
	auto sim = Simulator::create(track, 0, 1);
	const auto clean = collect_expert_episode(sim, ExpertConfig{}, 80, rng, "clean", false);
	CHECK(clean.frames.size() == 80);
	for (const auto& f : clean.frames)
	{
		REQUIRE(f.expert_action.has_value());
		CHECK(*f.expert_action == f.action);
	}
	auto sim2 = Simulator::create(track, 0, 1);
	const auto noisy = collect_expert_episode(sim2, ExpertConfig{}, 80, rng, "noisy", true);
	int differing = 0;
	for (const auto& f : noisy.frames)
		differing += *f.expert_action == f.action ? 0 : 1;
	CHECK(differing > 10);
}

TEST_CASE("constant 1 m/s around a 10 m ring for 5 laps")
{
	const auto cfg = instant_config();
	const Track track = ring();
	REQUIRE(track.total_length() == doctest::Approx(10.0));
	EvalOptions opt;
	opt.trials = 1;
	opt.laps = 5;
	const auto rep = evaluate_controller(circle_controller(1.0, track, cfg), track, {}, cfg, opt, "ring");
	CHECK(rep.time_cost == doctest::Approx(50.0).epsilon(0.01));
	CHECK(rep.avg_speed == doctest::Approx(1.0).epsilon(1e-9));
	CHECK(rep.top_speed == doctest::Approx(1.0).epsilon(1e-9));
	CHECK(rep.interventions == 0.0);
	CHECK(rep.completion_ratio == 100.0);
	CHECK(rep.per_trial[0].finished);
	CHECK(rep.time_cost * rep.avg_speed == doctest::Approx(rep.per_trial[0].distance).epsilon(0.05));
}

TEST_CASE("completion ratio is the lap share driven before the first collision")
{
	const auto cfg = instant_config();
	const Track track = ring();
	const double gap = 0.1 + cfg.footprint_radius;
	const std::vector<Obstacle> obstacles{{track.point_at(6.65 + gap), 0.1, 0}};
	EvalOptions opt;
	opt.trials = 1;
	opt.laps = 1;
	opt.max_steps = 20000;
	const auto rep = evaluate_controller(circle_controller(0.1, track, cfg), track, obstacles, cfg, opt);
	CHECK(rep.completion_ratio == doctest::Approx(66.5).epsilon(0.005));
	CHECK(rep.per_trial[0].collisions >= 1);
	CHECK(rep.interventions == rep.per_trial[0].collisions + rep.per_trial[0].stalls);
}

TEST_CASE("zero throttle ends at the step cap with one stall intervention per 10 s")
{
	const Track track = Track::stadium();
	EvalOptions opt;
	opt.trials = 2;
	opt.laps = 5;
	opt.max_steps = 1000;
	const auto rep = evaluate_controller([](const Observation&) { return Action{0.0, 0.0}; }, track, {}, SimConfig{},
										 opt);
	for (const auto& t : rep.per_trial)
	{
		CHECK(t.steps == 1000);
		CHECK_FALSE(t.finished);
		CHECK(t.stalls == 10);
		CHECK(t.collisions == 0);
		CHECK(t.interventions == 10);
		CHECK(t.completion_ratio == 0.0);
	}
	CHECK(rep.avg_speed == 0.0);
}

TEST_CASE("report invariants hold for a crashing controller")
{
	const Track track = Track::stadium();
	EvalOptions opt;
	opt.trials = 3;
	opt.laps = 2;
	opt.max_steps = 600;
	const auto rep = evaluate_controller([](const Observation&) { return Action{0.6, 0.8}; }, track, {}, SimConfig{},
										 opt);
	CHECK(rep.top_speed >= rep.avg_speed);
	CHECK(rep.avg_speed >= 0.0);
	CHECK(rep.completion_ratio >= 0.0);
	CHECK(rep.completion_ratio <= 100.0);
	double interventions = 0.0;
	for (const auto& t : rep.per_trial)
	{
		CHECK(t.collisions > 0);
		CHECK(t.interventions == t.collisions + t.stalls);
		CHECK(t.time_cost * t.avg_speed == doctest::Approx(t.distance).epsilon(0.05));
		interventions += t.interventions;
	}
	CHECK(rep.interventions == doctest::Approx(interventions / 3.0));
	CHECK(rep.to_json().at("per_trial").size() == 3);
}
