#pragma once

#include "dirl/geometry.hpp"

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dirl
{

struct TrackError : std::runtime_error
{
	using std::runtime_error::runtime_error;
};

/// Result of projecting a point onto the track centerline.
struct CenterlineProjection
{
	double arc_length = 0.0;  // along the centerline from the start point [m]
	double lateral = 0.0;     // signed offset, positive to the left of travel [m]
	double distance = 0.0;    // |lateral| [m]
	std::size_t segment = 0;
	double heading = 0.0;     // tangent heading at the projection [rad]
};

struct CenterlinePose
{
	Vec2 position;
	double heading = 0.0;
};

/// Closed centerline polyline with a constant-width corridor, driven counterclockwise.
/// The closing segment runs from the last point back to the first; points are not repeated.
class Track
{
public:
	Track(std::vector<Vec2> centerline, double half_width);

	[[nodiscard]] std::span<const Vec2> centerline() const { return centerline_; }
	[[nodiscard]] double half_width() const { return half_width_; }
	[[nodiscard]] double total_length() const { return cumulative_.back(); }
	[[nodiscard]] std::size_t segment_count() const { return centerline_.size(); }

	[[nodiscard]] CenterlineProjection project(Vec2 p) const;
	/// Pose on the centerline at arc length s (wrapped into [0, total_length)).
	[[nodiscard]] CenterlinePose pose_at(double s) const;
	/// Centerline point at arc length s, shifted laterally (positive = left).
	[[nodiscard]] Vec2 point_at(double s, double lateral = 0.0) const;
	/// Unsigned curvature estimate at arc length s from the heading change over +-window/2.
	[[nodiscard]] double curvature_at(double s, double window = 0.4) const;
	/// Forward arc-length difference from a to b in [0, total_length).
	[[nodiscard]] double forward_distance(double from, double to) const;
	[[nodiscard]] double wrap(double s) const;

	/// Stadium loop: two straights joined by two semicircular U-turns, start at the
	/// middle of the lower straight heading +x.
	static Track stadium(double straight_length = 3.4, double turn_radius = 1.4, double half_width = 0.5,
						 int arc_segments = 32, int straight_segments = 8);

	static Track load(const std::filesystem::path& path);
	void save(const std::filesystem::path& path) const;

private:
	std::vector<Vec2> centerline_;
	std::vector<double> cumulative_;  // cumulative_[i] = arc length at point i; back() = total
	double half_width_;
};

} // namespace dirl
