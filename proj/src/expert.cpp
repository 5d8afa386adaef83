#include "dirl/expert.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dirl
{

void ExpertConfig::validate() const
{
	if (!(lookahead > 0.0))
	{
		throw std::invalid_argument("expert: lookahead must be positive");
	}
	if (noise_amplitude < 0.0 || noise_amplitude > 1.0 || noise_fraction < 0.0 || noise_fraction > 1.0)
	{
		throw std::invalid_argument("expert: noise amplitude and fraction must lie in [0, 1]");
	}
	if (!(noise_block_seconds > 0.0) || avoidance_offsets.empty())
	{
		throw std::invalid_argument("expert: invalid noise block or avoidance offsets");
	}
}

double expert_target_speed(const CarState& state, const Track& track, const ExpertConfig& cfg)
{
	const double s0 = track.project(state.position).arc_length;
	double kappa = 0.0;
	for (double ds = 0.0; ds <= cfg.speed_preview; ds += 0.1)
	{
		kappa = std::max(kappa, track.curvature_at(s0 + ds));
	}
	double v = cfg.straight_speed;
	if (kappa > 1e-6)
	{
		v = std::min(v, std::sqrt(cfg.lateral_accel / kappa));
	}
	return std::max(v, cfg.min_speed);
}

namespace
{

double choose_offset(const CarState& state, const Track& track, std::span<const Obstacle> obstacles,
					 const SimConfig& sim, const ExpertConfig& cfg)
{
	const double s_car = track.project(state.position).arc_length;
	struct Ahead
	{
		double lateral;
		double radius;
	};
	std::vector<Ahead> ahead;
	for (const auto& o : obstacles)
	{
		const auto p = track.project(o.center);
		// Obstacles slightly behind the car still count so the car does not cut back into them.
		const double d = track.forward_distance(s_car, p.arc_length);
		const double signed_d = d > 0.5 * track.total_length() ? d - track.total_length() : d;
		if (signed_d > -0.3 && signed_d < cfg.avoidance_horizon)
		{
			ahead.push_back({p.lateral, o.radius});
		}
	}
	if (ahead.empty())
	{
		return 0.0;
	}

	double best = 0.0;
	double best_cost = std::numeric_limits<double>::infinity();
	bool any_free = false;
	for (double offset : cfg.avoidance_offsets)
	{
		double overlap = 0.0;
		bool blocked = false;
		for (const auto& a : ahead)
		{
			const double gap = std::abs(offset - a.lateral) - a.radius - sim.footprint_radius;
			blocked = blocked || gap <= 0.0;
			overlap += std::max(0.0, cfg.avoidance_margin - gap);
		}
		any_free = any_free || !blocked;
		const double cost = cfg.offset_weight * std::abs(offset) + cfg.obstacle_weight * overlap;
		if (cost < best_cost)
		{
			best_cost = cost;
			best = offset;
		}
	}
	return any_free ? best : 0.0;
}

} // namespace

Action expert_action(const CarState& state, const Track& track, std::span<const Obstacle> obstacles,
					 const SimConfig& sim, const ExpertConfig& cfg)
{
	const double offset = choose_offset(state, track, obstacles, sim, cfg);
	const double s_car = track.project(state.position).arc_length;
	const Vec2 target = track.point_at(s_car + cfg.lookahead, offset);

	const Vec2 d = target - state.position;
	const Vec2 fwd{std::cos(state.heading), std::sin(state.heading)};
	const Vec2 left{-fwd.y, fwd.x};
	const double x = d.dot(fwd);
	const double y = d.dot(left);
	const double ld2 = std::max(x * x + y * y, 1e-6);
	const double curvature = 2.0 * y / ld2;
	const double delta = std::atan(sim.wheelbase * curvature);

	const double v_target = expert_target_speed(state, track, cfg);
	const double accel = sim.drag * v_target + cfg.speed_gain * (v_target - state.speed);

	return Action{delta / sim.delta_max, accel / sim.a_max}.clamped();
}

Action inject_noise(Action expert, std::mt19937_64& rng, bool active, const ExpertConfig& cfg)
{
	if (!active)
	{
		return expert;
	}
	std::uniform_real_distribution<double> noise(-cfg.noise_amplitude, cfg.noise_amplitude);
	const double ds = noise(rng);
	const double dt = noise(rng);
	return Action{expert.steering + ds, expert.throttle + dt}.clamped();
}

NoiseSchedule::NoiseSchedule(const ExpertConfig& cfg, double dt, int phase_offset_steps)
		: period_steps_(std::max<long>(1, std::lround(2.0 * cfg.noise_block_seconds / dt)))
		, on_steps_(std::lround(cfg.noise_fraction * static_cast<double>(period_steps_)))
		, phase_(phase_offset_steps)
{
}

bool NoiseSchedule::active(long step) const
{
	const long k = ((step + phase_) % period_steps_ + period_steps_) % period_steps_;
	return k < on_steps_;
}

Action gaussian_perturb(Action a, double sigma, std::mt19937_64& rng)
{
	if (sigma <= 0.0)
	{
		return a;
	}
	std::normal_distribution<double> n(0.0, sigma);
	const double ds = n(rng);
	const double dt = n(rng);
	return Action{a.steering + ds, a.throttle + dt}.clamped();
}

} // namespace dirl
