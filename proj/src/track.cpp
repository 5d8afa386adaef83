#include "dirl/track.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace dirl
{

namespace
{

constexpr const char* kTrackHeader = "DIRLTRACK 1";

bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d)
{
	const auto orient = [](Vec2 p, Vec2 q, Vec2 r) { return (q - p).cross(r - p); };
	const double d1 = orient(c, d, a);
	const double d2 = orient(c, d, b);
	const double d3 = orient(a, b, c);
	const double d4 = orient(a, b, d);
	return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

} // namespace

Track::Track(std::vector<Vec2> centerline, double half_width)
		: centerline_(std::move(centerline)), half_width_(half_width)
{
	if (centerline_.size() < 3)
	{
		throw TrackError("track centerline needs at least 3 points");
	}
	if (!(half_width_ > 0.0))
	{
		throw TrackError("track half_width must be positive");
	}
	const std::size_t n = centerline_.size();
	cumulative_.resize(n + 1, 0.0);
	for (std::size_t i = 0; i < n; ++i)
	{
		const double len = distance(centerline_[i], centerline_[(i + 1) % n]);
		if (len <= 0.0)
		{
			throw TrackError("track centerline has repeated points");
		}
		cumulative_[i + 1] = cumulative_[i] + len;
	}
	for (std::size_t i = 0; i < n; ++i)
	{
		for (std::size_t j = i + 2; j < n; ++j)
		{
			if (i == 0 && j == n - 1)
			{
				continue;  // adjacent through the closing segment
			}
			if (segments_intersect(centerline_[i], centerline_[(i + 1) % n], centerline_[j], centerline_[(j + 1) % n]))
			{
				throw TrackError("track centerline self-intersects");
			}
		}
	}
}

CenterlineProjection Track::project(Vec2 p) const
{
	const std::size_t n = centerline_.size();
	CenterlineProjection best;
	double best_d2 = std::numeric_limits<double>::infinity();
	for (std::size_t i = 0; i < n; ++i)
	{
		const Vec2 a = centerline_[i];
		const Vec2 b = centerline_[(i + 1) % n];
		const Vec2 ab = b - a;
		const double len2 = ab.dot(ab);
		const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
		const Vec2 q = a + ab * t;
		const Vec2 dq = p - q;
		const double d2 = dq.dot(dq);
		if (d2 < best_d2)
		{
			best_d2 = d2;
			const double len = std::sqrt(len2);
			best.segment = i;
			best.arc_length = cumulative_[i] + t * len;
			best.heading = std::atan2(ab.y, ab.x);
			best.distance = std::sqrt(d2);
			best.lateral = ab.cross(dq) >= 0.0 ? best.distance : -best.distance;
		}
	}
	if (best.arc_length >= total_length())
	{
		best.arc_length -= total_length();
	}
	return best;
}

double Track::wrap(double s) const
{
	const double total = total_length();
	s = std::fmod(s, total);
	if (s < 0.0)
	{
		s += total;
	}
	return s >= total ? 0.0 : s;
}

double Track::forward_distance(double from, double to) const
{
	return wrap(to - from);
}

CenterlinePose Track::pose_at(double s) const
{
	s = wrap(s);
	const std::size_t n = centerline_.size();
	const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
	const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()) - 1, n - 1);
	const Vec2 a = centerline_[i];
	const Vec2 b = centerline_[(i + 1) % n];
	const double len = cumulative_[i + 1] - cumulative_[i];
	const double t = (s - cumulative_[i]) / len;
	const Vec2 ab = b - a;
	return {a + ab * t, std::atan2(ab.y, ab.x)};
}

Vec2 Track::point_at(double s, double lateral) const
{
	const auto pose = pose_at(s);
	const Vec2 left{-std::sin(pose.heading), std::cos(pose.heading)};
	return pose.position + left * lateral;
}

double Track::curvature_at(double s, double window) const
{
	const double h0 = pose_at(s - 0.5 * window).heading;
	const double h1 = pose_at(s + 0.5 * window).heading;
	return std::abs(wrap_angle(h1 - h0)) / window;
}

Track Track::stadium(double straight_length, double turn_radius, double half_width, int arc_segments,
					 int straight_segments)
{
	std::vector<Vec2> pts;
	const double half = 0.5 * straight_length;
	// Lower straight from the middle (start) to the right end, heading +x.
	const int half_segments = std::max(1, straight_segments / 2);
	for (int i = 0; i < half_segments; ++i)
	{
		pts.push_back({half * i / half_segments, -turn_radius});
	}
	// Right U-turn around (half, 0), counterclockwise from -pi/2 to pi/2.
	for (int i = 0; i < arc_segments; ++i)
	{
		const double a = -M_PI / 2 + M_PI * i / arc_segments;
		pts.push_back({half + turn_radius * std::cos(a), turn_radius * std::sin(a)});
	}
	// Upper straight heading -x.
	for (int i = 0; i < straight_segments; ++i)
	{
		pts.push_back({half - straight_length * i / straight_segments, turn_radius});
	}
	// Left U-turn around (-half, 0).
	for (int i = 0; i < arc_segments; ++i)
	{
		const double a = M_PI / 2 + M_PI * i / arc_segments;
		pts.push_back({-half + turn_radius * std::cos(a), turn_radius * std::sin(a)});
	}
	// Back along the lower straight to just before the start point.
	for (int i = 0; i < half_segments; ++i)
	{
		pts.push_back({-half + half * i / half_segments, -turn_radius});
	}
	return Track(std::move(pts), half_width);
}

Track Track::load(const std::filesystem::path& path)
{
	std::ifstream in(path);
	if (!in)
	{
		throw TrackError("cannot open track file " + path.string());
	}
	std::string line;
	std::getline(in, line);
	if (line != kTrackHeader)
	{
		throw TrackError("unsupported track file header: " + line);
	}
	double half_width = 0.0;
	std::vector<Vec2> pts;
	while (std::getline(in, line))
	{
		if (line.empty() || line.front() == '#')
		{
			continue;
		}
		std::istringstream ss(line);
		if (line.rfind("half_width", 0) == 0)
		{
			std::string key;
			ss >> key >> half_width;
			continue;
		}
		Vec2 p;
		if (!(ss >> p.x >> p.y))
		{
			throw TrackError("malformed track line: " + line);
		}
		pts.push_back(p);
	}
	return Track(std::move(pts), half_width);
}

void Track::save(const std::filesystem::path& path) const
{
	std::ofstream out(path);
	if (!out)
	{
		throw TrackError("cannot write track file " + path.string());
	}
	out.precision(17);
	out << kTrackHeader << '\n' << "half_width " << half_width_ << '\n';
	for (const auto& p : centerline_)
	{
		out << p.x << ' ' << p.y << '\n';
	}
}

} // namespace dirl
