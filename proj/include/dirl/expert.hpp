#pragma once

#include "dirl/sim.hpp"

#include <random>
#include <vector>

namespace dirl
{

struct ExpertConfig
{
	double lookahead = 0.8;       // m, pure-pursuit goal distance
	double straight_speed = 2.6;  // m/s target on straights
	double min_speed = 1.0;       // m/s
	double lateral_accel = 2.5;   // m/s^2, curvature -> speed schedule
	double speed_preview = 1.5;   // m of centerline scanned for curvature
	double speed_gain = 2.0;      // 1/s, proportional throttle gain
	std::vector<double> avoidance_offsets{-0.32, -0.16, 0.0, 0.16, 0.32};
	double avoidance_horizon = 2.0;  // m ahead along the centerline
	double avoidance_margin = 0.06;  // m of extra clearance around obstacles
	double offset_weight = 0.5;
	double obstacle_weight = 10.0;
	double noise_amplitude = 0.3;
	double noise_fraction = 0.5;
	double noise_block_seconds = 3.0;

	void validate() const;
};

/// Curvature-scheduled target speed at the car's current progress.
double expert_target_speed(const CarState& state, const Track& track, const ExpertConfig& cfg);

/// Pure pursuit toward the least-cost lateral offset with proportional speed control.
Action expert_action(const CarState& state, const Track& track, std::span<const Obstacle> obstacles,
					 const SimConfig& sim, const ExpertConfig& cfg);

/// Uniform noise in [-amplitude, amplitude] on both components when active, clamped to range.
Action inject_noise(Action expert, std::mt19937_64& rng, bool active, const ExpertConfig& cfg);

/// Alternating noise-on / noise-off blocks. The on-block lasts `block_seconds` when fraction is 0.5;
/// in general one period is 2 * block_seconds and the on share of each period equals the fraction.
class NoiseSchedule
{
public:
	NoiseSchedule(const ExpertConfig& cfg, double dt, int phase_offset_steps = 0);

	[[nodiscard]] bool active(long step) const;

private:
	long period_steps_;
	long on_steps_;
	long phase_;
};

/// Post-hoc Gaussian corruption of recorded expert actions, N(0, sigma^2) per component, clamped.
Action gaussian_perturb(Action a, double sigma, std::mt19937_64& rng);

} // namespace dirl
