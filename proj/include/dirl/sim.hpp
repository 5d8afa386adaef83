#pragma once

#include "dirl/geometry.hpp"
#include "dirl/track.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace dirl
{

struct SimError : std::runtime_error
{
	using std::runtime_error::runtime_error;
};

struct SimConfig
{
	double dt = 0.1;               // s (10 Hz control)
	double v_max = 3.0;            // m/s
	double a_max = 4.0;            // m/s^2 at full throttle
	double delta_max = 0.4;        // rad, front-wheel lock
	double wheelbase = 0.2;        // m
	double drag = 1.0;             // 1/s
	double footprint_radius = 0.12;  // m
	int image_height = 48;
	int image_width = 48;
	double view_half_extent = 2.4;   // m from the car to the image edge
	double fence_band = 0.15;        // m
	double obstacle_radius_min = 0.1;
	double obstacle_radius_max = 0.18;
	std::uint64_t rng_seed = 0;

	void validate() const;
};

struct Action
{
	double steering = 0.0;  // [-1, 1]
	double throttle = 0.0;  // [0, 1]

	[[nodiscard]] Action clamped() const;
	bool operator==(const Action&) const = default;
};

struct CarState
{
	Vec2 position;
	double heading = 0.0;         // rad
	double speed = 0.0;           // m/s
	double steering_angle = 0.0;  // rad

	bool operator==(const CarState&) const = default;
};

struct Obstacle
{
	Vec2 center;
	double radius = 0.15;
	int color_id = 0;

	bool operator==(const Obstacle&) const = default;
};

/// RGB8 raster, row-major, row 0 is the far-ahead edge of the ego view.
struct Image
{
	int height = 0;
	int width = 0;
	std::vector<std::uint8_t> rgb;

	Image() = default;
	Image(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}

	[[nodiscard]] std::size_t index(int row, int col, int channel) const
	{
		return (static_cast<std::size_t>(row) * width + col) * 3 + channel;
	}
	[[nodiscard]] std::uint8_t at(int row, int col, int channel) const { return rgb[index(row, col, channel)]; }
	/// Channel intensity in [0, 1].
	[[nodiscard]] float intensity(int row, int col, int channel) const { return at(row, col, channel) / 255.0F; }
	[[nodiscard]] std::array<std::uint8_t, 3> pixel(int row, int col) const
	{
		return {at(row, col, 0), at(row, col, 1), at(row, col, 2)};
	}

	bool operator==(const Image&) const = default;
};

struct Observation
{
	Image image;
	double speed = 0.0;
};

namespace palette
{
inline constexpr std::array<std::uint8_t, 3> kGrass{30, 110, 40};
inline constexpr std::array<std::uint8_t, 3> kRoad{90, 90, 90};
inline constexpr std::array<std::uint8_t, 3> kFence{200, 40, 40};
inline constexpr std::array<std::array<std::uint8_t, 3>, 5> kObstacles{{
	{240, 200, 20},
	{30, 90, 230},
	{230, 40, 200},
	{40, 220, 220},
	{250, 130, 20},
}};

bool is_obstacle_color(std::array<std::uint8_t, 3> rgb);
} // namespace palette

/// Kinematic bicycle with first-order throttle-to-speed response. Pure.
CarState step(const CarState& state, Action action, const SimConfig& cfg);

/// Total number of step() evaluations in this process; instrumentation for the offline-learning property.
std::uint64_t sim_step_count();

bool check_collision(const CarState& state, const Track& track, std::span<const Obstacle> obstacles,
					 const SimConfig& cfg);

Observation render_observation(const CarState& state, const Track& track, std::span<const Obstacle> obstacles,
							   const SimConfig& cfg);

struct ResetResult
{
	CarState state;
	std::vector<Obstacle> obstacles;
};

/// Car at the start pose; obstacles rejection-sampled from `seed`. Throws SimError when the layout
/// cannot be placed within a bounded number of attempts.
ResetResult reset(const Track& track, int n_obstacles, std::uint64_t seed, const SimConfig& cfg = {});

double lap_progress(const CarState& state, const Track& track);

/// Centerline pose at the given arc length with zero speed.
CarState pose_on_centerline(const Track& track, double arc_length);

/// One simulator instance: track, fixed obstacle layout and a current car state.
class Simulator
{
public:
	Simulator(Track track, std::vector<Obstacle> obstacles, SimConfig cfg, CarState initial);

	static Simulator create(Track track, int n_obstacles, std::uint64_t seed, SimConfig cfg = {});

	/// Advances one tick and returns whether the car is in collision afterwards.
	bool advance(Action action);
	[[nodiscard]] Observation observe() const;
	[[nodiscard]] bool in_collision() const;
	[[nodiscard]] double progress() const;

	void set_state(const CarState& s) { state_ = s; }
	/// Zero-speed centerline pose at the car's current progress, moved forward past any obstacle.
	void reset_to_centerline();
	void reset_to_start();

	[[nodiscard]] const CarState& state() const { return state_; }
	[[nodiscard]] const Track& track() const { return track_; }
	[[nodiscard]] std::span<const Obstacle> obstacles() const { return obstacles_; }
	[[nodiscard]] const SimConfig& config() const { return cfg_; }
	[[nodiscard]] std::uint64_t steps() const { return steps_; }

private:
	Track track_;
	std::vector<Obstacle> obstacles_;
	SimConfig cfg_;
	CarState state_;
	std::uint64_t steps_ = 0;
};

} // namespace dirl
