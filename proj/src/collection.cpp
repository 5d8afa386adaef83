#include "dirl/collection.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace dirl
{

std::uint64_t default_layout_seed(Task task)
{
	return task == Task::easy ? 101 : 202;
}

TaskLayout task_layout(Task task, std::uint64_t seed, const SimConfig& cfg)
{
	Track track = Track::stadium();
	auto r = reset(track, obstacle_count(task), seed, cfg);
	return {std::move(track), std::move(r.obstacles)};
}

TaskLayout task_layout(Task task, const SimConfig& cfg)
{
	return task_layout(task, default_layout_seed(task), cfg);
}

namespace
{

Frame make_frame(const Observation& obs, Action executed, std::optional<Action> expert)
{
	Frame f;
	f.image = obs.image;
	f.speed = static_cast<float>(obs.speed);
	f.action = StoredAction::from(executed);
	if (expert)
		f.expert_action = StoredAction::from(*expert);
	return f;
}

EpisodeRecord finish(EpisodeRecord ep, bool collided)
{
	if (!collided)
		return ep;
	ep.ended_in_collision = true;
	return back_label_collisions(std::move(ep));
}

} // namespace

EpisodeRecord collect_expert_episode(Simulator& sim, const ExpertConfig& expert, int max_steps, std::mt19937_64& rng,
									 std::string id, bool inject)
{
	const auto& cfg = sim.config();
	const NoiseSchedule schedule(expert, cfg.dt, std::uniform_int_distribution<int>(0, 1000)(rng));
	EpisodeRecord ep{std::move(id), EpisodeSource::expert, cfg.dt, {}, false};
	ep.frames.reserve(static_cast<std::size_t>(max_steps));
	bool collided = false;
	for (long t = 0; t < max_steps && !collided; ++t)
	{
		const auto obs = sim.observe();
		const Action clean = expert_action(sim.state(), sim.track(), sim.obstacles(), cfg, expert);
		const Action executed = inject_noise(clean, rng, inject && schedule.active(t), expert);
		collided = sim.advance(executed);
		ep.frames.push_back(make_frame(obs, executed, clean));
	}
	return finish(std::move(ep), collided);
}

EpisodeRecord collect_episode(const Controller& controller, Simulator& sim, int max_steps, std::string id,
							  const std::function<bool(long)>& stop_requested)
{
	EpisodeRecord ep{std::move(id), EpisodeSource::policy, sim.config().dt, {}, false};
	ep.frames.reserve(static_cast<std::size_t>(max_steps));
	bool stop = false;
	for (long t = 1; t <= max_steps && !stop; ++t)
	{
		const auto obs = sim.observe();
		const Action a = controller(obs).clamped();
		stop = sim.advance(a);
		ep.frames.push_back(make_frame(obs, a, std::nullopt));
		if (!stop && stop_requested)
			stop = stop_requested(t);
	}
	return finish(std::move(ep), stop);
}

namespace
{

double signed_arc_delta(double from, double to, double length)
{
	double d = to - from;
	if (d > length / 2)
		d -= length;
	else if (d < -length / 2)
		d += length;
	return d;
}

TrialResult run_trial(const Controller& controller, Simulator& sim, const EvalOptions& opt)
{
	const Track& track = sim.track();
	const double length = track.total_length();
	const double dt = sim.config().dt;
	const double goal = opt.laps * length;
	const long stall_steps = std::max<long>(1, std::lround(opt.stall_seconds / dt));

	TrialResult r;
	double arc = track.project(sim.state().position).arc_length;
	double progress = 0.0;
	double speed_sum = 0.0;
	bool first_collision = false;
	std::deque<double> window{progress};

	auto after_reset = [&] {
		const double moved = signed_arc_delta(arc, track.project(sim.state().position).arc_length, length);
		progress += moved;
		arc = track.wrap(arc + moved);
		window.assign(1, progress);
	};

	while (r.steps < opt.max_steps && progress < goal)
	{
		const Action a = controller(sim.observe()).clamped();
		const bool collided = sim.advance(a);
		++r.steps;
		const double v = sim.state().speed;
		speed_sum += v;
		r.top_speed = std::max(r.top_speed, v);
		r.distance += v * dt;

		const double now = track.project(sim.state().position).arc_length;
		progress += signed_arc_delta(arc, now, length);
		arc = now;

		if (collided)
		{
			++r.collisions;
			++r.interventions;
			if (!first_collision)
			{
				first_collision = true;
				r.completion_ratio = std::clamp(100.0 * progress / length, 0.0, 100.0);
			}
			sim.reset_to_centerline();
			after_reset();
			continue;
		}
		window.push_back(progress);
		if (static_cast<long>(window.size()) > stall_steps + 1)
			window.pop_front();
		if (static_cast<long>(window.size()) == stall_steps + 1)
		{
			if (window.back() - window.front() < opt.stall_distance)
			{
				++r.stalls;
				++r.interventions;
				sim.reset_to_centerline();
				after_reset();
			}
		}
	}
	if (!first_collision)
		r.completion_ratio = std::clamp(100.0 * progress / length, 0.0, 100.0);
	r.finished = progress >= goal;
	r.laps = std::max(0.0, progress / length);
	r.time_cost = static_cast<double>(r.steps) * dt;
	r.avg_speed = r.steps > 0 ? speed_sum / static_cast<double>(r.steps) : 0.0;
	return r;
}

} // namespace

EvalReport evaluate_controller(const Controller& controller, const Track& track, std::span<const Obstacle> obstacles,
							   const SimConfig& cfg, const EvalOptions& options, std::string task)
{
	if (options.trials < 1 || options.laps < 1 || options.max_steps < 1)
		throw std::invalid_argument("evaluation needs at least one trial, lap and step");
	EvalReport rep;
	rep.task = std::move(task);
	rep.trials = options.trials;
	rep.laps = options.laps;
	const double length = track.total_length();
	for (int k = 0; k < options.trials; ++k)
	{
		Simulator sim(track, std::vector<Obstacle>(obstacles.begin(), obstacles.end()), cfg,
					  pose_on_centerline(track, length * k / options.trials));
		sim.reset_to_centerline();
		rep.per_trial.push_back(run_trial(controller, sim, options));
	}
	const double n = options.trials;
	for (const auto& t : rep.per_trial)
	{
		rep.avg_speed += t.avg_speed / n;
		rep.top_speed = std::max(rep.top_speed, t.top_speed);
		rep.interventions += t.interventions / n;
		rep.time_cost += t.time_cost / n;
		rep.completion_ratio += t.completion_ratio / n;
		rep.laps_completed += t.laps / n;
	}
	return rep;
}

nlohmann::json EvalReport::to_json() const
{
	nlohmann::json trials_json = nlohmann::json::array();
	for (const auto& t : per_trial)
		trials_json.push_back({{"completion_ratio", t.completion_ratio},
							   {"interventions", t.interventions},
							   {"collisions", t.collisions},
							   {"stalls", t.stalls},
							   {"laps", t.laps},
							   {"time_cost", t.time_cost},
							   {"distance", t.distance},
							   {"avg_speed", t.avg_speed},
							   {"top_speed", t.top_speed},
							   {"steps", t.steps},
							   {"finished", t.finished}});
	return {{"task", task},
			{"trials", trials},
			{"laps", laps},
			{"avg_speed", avg_speed},
			{"top_speed", top_speed},
			{"interventions", interventions},
			{"time_cost", time_cost},
			{"completion_ratio", completion_ratio},
			{"laps_completed", laps_completed},
			{"per_trial", trials_json}};
}

} // namespace dirl
