#pragma once

#include "dirl/checkpoint.hpp"
#include "dirl/collection.hpp"
#include "dirl/config.hpp"
#include "dirl/episode_store.hpp"
#include "dirl/policy.hpp"
#include "dirl/world_model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dirl
{

/// A pipeline phase failed; `phase` names it.
struct DirlPhaseError : std::runtime_error
{
	DirlPhaseError(std::string phase_, const std::string& what)
		: std::runtime_error(phase_ + ": " + what), phase(std::move(phase_))
	{
	}
	std::string phase;
};

/// Expert demonstrations on random layouts with 0..max obstacles (or exactly `obstacles`), noise blocks per
/// the expert config.
void collect_expert_dataset(EpisodeStore& store, const RunConfig& cfg, std::mt19937_64& rng,
							const ProgressFn& progress = {}, std::optional<int> obstacles = std::nullopt);

/// Copy of `data` whose expert labels a* carry additive N(0, sigma^2) noise (clamped to range).
/// Executed actions, observations and collision flags are unchanged.
Dataset perturb_demonstrations(const Dataset& data, double sigma, std::uint64_t seed);

struct PhaseSteps
{
	std::string phase;
	std::uint64_t sim_steps = 0;  // global simulator steps taken during the phase
};

struct IterationReport
{
	int iteration = 0;
	TrainingCurve world_curve;
	WorldModelMetrics world_heldout;  // on the held-out episodes of the dataset it was trained on
	TrainingCurve refine_curve;
	std::size_t episodes_collected = 0;
	std::size_t dataset_frames = 0;  // after the union
	EvalReport eval;
};

struct DirlResult
{
	Policy il_policy{nullptr};
	Policy policy{nullptr};
	WorldModel world{nullptr};
	TrainingCurve il_curve;
	EvalReport il_eval;
	std::vector<IterationReport> iterations;
	std::vector<std::string> events;
	std::vector<PhaseSteps> phase_steps;

	/// Policy evaluation after the last completed iteration (the IL evaluation when there is none).
	[[nodiscard]] const EvalReport& final_eval() const;
	/// Deterministic metrics only (no timings), embedding the resolved config.
	[[nodiscard]] nlohmann::json to_json(const RunConfig& cfg) const;
};

struct DirlOptions
{
	std::optional<std::filesystem::path> out_dir;  // persists data, checkpoints and report.json
	ProgressFn progress;
	/// Starting dataset; when absent the scripted expert provides it.
	std::optional<Dataset> initial_data;
	/// Starting policy; when present the imitation phase is skipped.
	std::optional<Policy> initial_policy;
};

/// IL once, then per iteration: world-model training, refinement, collection, union and evaluation.
DirlResult run_dirl(const RunConfig& cfg, const DirlOptions& options = {});

EvalReport evaluate_policy(Policy& policy, Task task, const RunConfig& cfg);

struct NoisyDemoRow
{
	double sigma = 0.0;
	std::uint64_t seed = 0;
	EvalReport il;
	EvalReport dirl;
};

/// For every seed: one expert dataset; for every sigma: perturb labels, train IL, refine with DIRL.
std::vector<NoisyDemoRow> noisy_demo_experiment(const RunConfig& cfg, const std::vector<double>& sigmas,
												const std::vector<std::uint64_t>& seeds,
												const ProgressFn& progress = {});

std::string noisy_demo_csv(const std::vector<NoisyDemoRow>& rows);

/// One row per method with columns matching the evaluation table.
std::string eval_csv(const std::vector<std::pair<std::string, EvalReport>>& rows);

} // namespace dirl
