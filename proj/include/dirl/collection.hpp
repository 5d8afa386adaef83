#pragma once

#include "dirl/config.hpp"
#include "dirl/episode_store.hpp"
#include "dirl/expert.hpp"
#include "dirl/sim.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace dirl
{

/// Default track with the obstacle layout fixed for a task.
struct TaskLayout
{
	Track track;
	std::vector<Obstacle> obstacles;
};

std::uint64_t default_layout_seed(Task task);
TaskLayout task_layout(Task task, const SimConfig& cfg);
TaskLayout task_layout(Task task, std::uint64_t seed, const SimConfig& cfg);

/// Maps the current observation to the action applied this tick.
using Controller = std::function<Action(const Observation&)>;

/// Scripted-expert demonstration: the executed action is the expert's plus block-scheduled noise, the
/// clean expert action is kept as a*. A collision ends the episode and triggers back-labeling.
EpisodeRecord collect_expert_episode(Simulator& sim, const ExpertConfig& expert, int max_steps, std::mt19937_64& rng,
									 std::string id, bool inject = true);

/// Runs `controller` for at most `max_steps` ticks. The episode stops on a collision or when
/// `stop_requested` returns true; both paths set the final collision flag and back-label.
EpisodeRecord collect_episode(const Controller& controller, Simulator& sim, int max_steps, std::string id,
							  const std::function<bool(long)>& stop_requested = {});

struct TrialResult
{
	double completion_ratio = 0.0;  // % of one lap driven before the first collision, capped at 100
	int interventions = 0;
	int collisions = 0;
	int stalls = 0;
	double laps = 0.0;
	double time_cost = 0.0;  // s, resets excluded
	double distance = 0.0;   // m of forward progress
	double avg_speed = 0.0;
	double top_speed = 0.0;
	long steps = 0;
	bool finished = false;  // all laps completed before the step cap
};

struct EvalReport
{
	std::string task;
	int trials = 0;
	int laps = 0;
	double avg_speed = 0.0;
	double top_speed = 0.0;
	double interventions = 0.0;
	double time_cost = 0.0;
	double completion_ratio = 0.0;
	double laps_completed = 0.0;
	std::vector<TrialResult> per_trial;

	[[nodiscard]] nlohmann::json to_json() const;
};

struct EvalOptions
{
	int trials = 3;
	int laps = 5;
	long max_steps = 3000;        // per trial
	double stall_seconds = 10.0;
	double stall_distance = 0.1;  // m
};

/// Trial k starts at arc length k * L / trials with zero speed. Collisions and stalls each count one
/// intervention followed by a reset to the centerline at the current progress.
EvalReport evaluate_controller(const Controller& controller, const Track& track, std::span<const Obstacle> obstacles,
							   const SimConfig& cfg, const EvalOptions& options, std::string task = {});

} // namespace dirl
