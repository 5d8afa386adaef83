#include "dirl/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>

namespace dirl
{

namespace
{

std::atomic<std::uint64_t> g_step_count{0};

constexpr int kMaxPlacementAttempts = 2000;
constexpr double kStartClearance = 1.0;  // m of free centerline ahead of the start pose
constexpr double kEndClearance = 0.5;

} // namespace

void SimConfig::validate() const
{
	if (!(dt > 0.0 && v_max > 0.0 && a_max > 0.0 && delta_max > 0.0 && wheelbase > 0.0 && drag > 0.0 &&
		  footprint_radius > 0.0 && view_half_extent > 0.0 && fence_band >= 0.0))
	{
		throw SimError("sim config: physical parameters must be positive");
	}
	if (image_height <= 0 || image_width <= 0)
	{
		throw SimError("sim config: image dimensions must be positive");
	}
	if (!(obstacle_radius_min > 0.0 && obstacle_radius_max >= obstacle_radius_min))
	{
		throw SimError("sim config: invalid obstacle radius range");
	}
}

Action Action::clamped() const
{
	const auto finite_or_zero = [](double v) { return std::isfinite(v) ? v : 0.0; };
	return {std::clamp(finite_or_zero(steering), -1.0, 1.0), std::clamp(finite_or_zero(throttle), 0.0, 1.0)};
}

bool palette::is_obstacle_color(std::array<std::uint8_t, 3> rgb)
{
	return std::find(kObstacles.begin(), kObstacles.end(), rgb) != kObstacles.end();
}

CarState step(const CarState& state, Action action, const SimConfig& cfg)
{
	g_step_count.fetch_add(1, std::memory_order_relaxed);
	const Action a = action.clamped();
	CarState next;
	next.speed = std::clamp(state.speed + (a.throttle * cfg.a_max - cfg.drag * state.speed) * cfg.dt, 0.0, cfg.v_max);
	next.steering_angle = a.steering * cfg.delta_max;
	next.heading = state.heading + (next.speed / cfg.wheelbase) * std::tan(next.steering_angle) * cfg.dt;
	next.position = state.position + Vec2{std::cos(next.heading), std::sin(next.heading)} * (next.speed * cfg.dt);
	return next;
}

std::uint64_t sim_step_count()
{
	return g_step_count.load(std::memory_order_relaxed);
}

bool check_collision(const CarState& state, const Track& track, std::span<const Obstacle> obstacles,
					 const SimConfig& cfg)
{
	const auto proj = track.project(state.position);
	if (proj.distance + cfg.footprint_radius >= track.half_width())
	{
		return true;
	}
	return std::any_of(obstacles.begin(), obstacles.end(), [&](const Obstacle& o) {
		return distance(o.center, state.position) < o.radius + cfg.footprint_radius;
	});
}

Observation render_observation(const CarState& state, const Track& track, std::span<const Obstacle> obstacles,
							   const SimConfig& cfg)
{
	const int h = cfg.image_height;
	const int w = cfg.image_width;
	Observation obs{Image(h, w), state.speed};
	const Vec2 forward{std::cos(state.heading), std::sin(state.heading)};
	const Vec2 right{std::sin(state.heading), -std::cos(state.heading)};
	const double res_row = 2.0 * cfg.view_half_extent / h;
	const double res_col = 2.0 * cfg.view_half_extent / w;
	const double fence_outer = track.half_width() + cfg.fence_band;

	for (int r = 0; r < h; ++r)
	{
		const double ahead = (0.5 * h - (r + 0.5)) * res_row;
		for (int c = 0; c < w; ++c)
		{
			const double side = ((c + 0.5) - 0.5 * w) * res_col;
			const Vec2 p = state.position + forward * ahead + right * side;
			std::array<std::uint8_t, 3> color = palette::kGrass;
			const auto hit = std::find_if(obstacles.begin(), obstacles.end(),
										  [&](const Obstacle& o) { return distance(o.center, p) < o.radius; });
			if (hit != obstacles.end())
			{
				color = palette::kObstacles[static_cast<std::size_t>(hit->color_id) % palette::kObstacles.size()];
			}
			else
			{
				const double d = track.project(p).distance;
				if (d < track.half_width())
				{
					color = palette::kRoad;
				}
				else if (d < fence_outer)
				{
					color = palette::kFence;
				}
			}
			for (int ch = 0; ch < 3; ++ch)
			{
				obs.image.rgb[obs.image.index(r, c, ch)] = color[ch];
			}
		}
	}
	return obs;
}

CarState pose_on_centerline(const Track& track, double arc_length)
{
	const auto pose = track.pose_at(arc_length);
	CarState s;
	s.position = pose.position;
	s.heading = pose.heading;
	return s;
}

ResetResult reset(const Track& track, int n_obstacles, std::uint64_t seed, const SimConfig& cfg)
{
	if (n_obstacles < 0)
	{
		throw SimError("reset: n_obstacles must be non-negative");
	}
	ResetResult result{pose_on_centerline(track, 0.0), {}};
	std::mt19937_64 rng(seed);
	const double lo = kStartClearance;
	const double hi = track.total_length() - kEndClearance;
	std::uniform_real_distribution<double> arc_dist(lo, hi);
	std::uniform_real_distribution<double> radius_dist(cfg.obstacle_radius_min, cfg.obstacle_radius_max);
	std::uniform_real_distribution<double> unit(-1.0, 1.0);
	std::uniform_int_distribution<int> color_dist(0, static_cast<int>(palette::kObstacles.size()) - 1);
	// Keep a car-sized gap between obstacles so the corridor stays passable.
	const double min_gap = 2.0 * cfg.footprint_radius + 0.05;

	int attempts = 0;
	while (static_cast<int>(result.obstacles.size()) < n_obstacles)
	{
		if (++attempts > kMaxPlacementAttempts)
		{
			throw SimError("reset: could not place obstacles, configuration is over-crowded");
		}
		Obstacle o;
		o.radius = radius_dist(rng);
		const double arc = arc_dist(rng);
		const double lateral = unit(rng) * (track.half_width() - o.radius);
		o.center = track.point_at(arc, lateral);
		o.color_id = color_dist(rng);
		// Corridor containment measured against the true nearest centerline point.
		if (track.project(o.center).distance + o.radius > track.half_width())
		{
			continue;
		}
		const bool overlaps = std::any_of(result.obstacles.begin(), result.obstacles.end(), [&](const Obstacle& other) {
			return distance(o.center, other.center) < o.radius + other.radius + min_gap;
		});
		if (!overlaps)
		{
			result.obstacles.push_back(o);
		}
	}
	return result;
}

double lap_progress(const CarState& state, const Track& track)
{
	const double f = track.project(state.position).arc_length / track.total_length();
	return f >= 1.0 ? 0.0 : f;
}

Simulator::Simulator(Track track, std::vector<Obstacle> obstacles, SimConfig cfg, CarState initial)
		: track_(std::move(track)), obstacles_(std::move(obstacles)), cfg_(cfg), state_(initial)
{
	cfg_.validate();
}

Simulator Simulator::create(Track track, int n_obstacles, std::uint64_t seed, SimConfig cfg)
{
	auto r = reset(track, n_obstacles, seed, cfg);
	return Simulator(std::move(track), std::move(r.obstacles), cfg, r.state);
}

bool Simulator::advance(Action action)
{
	state_ = step(state_, action, cfg_);
	++steps_;
	return in_collision();
}

Observation Simulator::observe() const
{
	return render_observation(state_, track_, obstacles_, cfg_);
}

bool Simulator::in_collision() const
{
	return check_collision(state_, track_, obstacles_, cfg_);
}

double Simulator::progress() const
{
	return lap_progress(state_, track_);
}

void Simulator::reset_to_centerline()
{
	double arc = track_.project(state_.position).arc_length;
	CarState s = pose_on_centerline(track_, arc);
	for (int i = 0; i < 200 && check_collision(s, track_, obstacles_, cfg_); ++i)
	{
		arc += 0.05;
		s = pose_on_centerline(track_, arc);
	}
	state_ = s;
}

void Simulator::reset_to_start()
{
	state_ = pose_on_centerline(track_, 0.0);
}

} // namespace dirl
