#pragma once

#include <cmath>

namespace dirl
{

struct Vec2
{
	double x = 0.0;
	double y = 0.0;

	constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
	constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
	constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
	constexpr bool operator==(const Vec2&) const = default;

	[[nodiscard]] constexpr double dot(Vec2 o) const { return x * o.x + y * o.y; }
	[[nodiscard]] constexpr double cross(Vec2 o) const { return x * o.y - y * o.x; }
	[[nodiscard]] double norm() const { return std::hypot(x, y); }
};

inline double distance(Vec2 a, Vec2 b)
{
	return (a - b).norm();
}

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a)
{
	a = std::fmod(a + M_PI, 2.0 * M_PI);
	if (a <= 0.0)
	{
		a += 2.0 * M_PI;
	}
	return a - M_PI;
}

} // namespace dirl
