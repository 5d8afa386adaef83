#pragma once

#include "dirl/evidential.hpp"
#include "dirl/expert.hpp"
#include "dirl/sim.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace dirl
{

struct ConfigError : std::runtime_error
{
	using std::runtime_error::runtime_error;
};

struct WorldModelConfig
{
	int horizon = 10;
	int image_features = 128;   // f_i
	int speed_features = 32;    // f_s
	int action_features = 64;
	int hidden = 128;           // per recurrent layer
	int layers = 3;             // fixed: layer 1 -> image, 2 -> speed, 3 -> collision
	int encoder_channels = 16;  // width of the first residual stage
	int decoder_channels = 16;
	double w_image = 1.0;
	double w_speed = 1.0;
	double w_collision = 1.0;
	double learning_rate = 5e-4;
	int batch_size = 32;
	int max_epochs = 80;
	int batches_per_epoch = 50;
	int plateau_patience = 20;
	double plateau_tolerance = 0.01;
	int eval_batches = 8;
	double collision_oversample = 0.25;  // share of each batch drawn from windows containing a collision
	bool balance_collision = true;       // weight the collision term so both classes contribute equally
	double collision_kl = 0.1;           // weight of the misleading-evidence KL in the collision term
	int image_loss_steps = 3;            // horizon steps (drawn per batch) that enter the image term; >= horizon uses all
	int holdout_every = 10;

	void validate() const;
};

struct PolicyConfig
{
	int image_features = 128;
	int speed_features = 32;
	int hidden = 128;
	int encoder_channels = 16;
	double sigma_floor = 1e-3;
	double il_learning_rate = 1e-3;
	int il_batch = 128;
	int il_max_epochs = 30;
	double refine_learning_rate = 1e-5;
	int refine_batch = 36;
	int refine_max_epochs = 10;
	int batches_per_epoch = 50;
	int plateau_patience = 5;
	double plateau_tolerance = 0.01;
	double w_speed = 1.0;
	double w_collision = 50.0;
	double w_uncertainty = 1.0;
	int holdout_every = 10;

	void validate() const;
};

enum class Task
{
	easy,
	hard,
};

int obstacle_count(Task t);
const char* to_string(Task t);
Task task_from_string(const std::string& s);

struct DirlRunConfig
{
	int iterations = 3;
	int expert_episodes = 100;
	int expert_max_steps = 200;
	int max_obstacles_in_demos = 8;
	int episodes_per_round = 10;
	int max_steps = 200;           // T per collection episode
	std::string task = "easy";
	double demo_noise_sigma = 0.0;
	std::uint64_t seed = 1;
	int eval_trials = 3;
	int eval_laps = 5;
	int eval_max_steps = 3000;
	bool early_exit = true;
	bool explore_on_collection = false;
	bool refine = true;
	bool collect = true;

	void validate() const;
};

struct RunConfig
{
	SimConfig sim;
	ExpertConfig expert;
	evidential::EvidentialLossConfig evidential;
	WorldModelConfig world;
	PolicyConfig policy;
	DirlRunConfig run;

	void validate() const;
	[[nodiscard]] nlohmann::json to_json() const;
	/// Overwrites every known key present in `j`; other keys are ignored.
	void update_from_json(const nlohmann::json& j);
	/// Applies one `key = value` assignment; throws ConfigError for unknown keys or bad values.
	void set(const std::string& key, const std::string& value);
};

/// UTF-8 `key = value` lines; `#` starts a comment. Missing keys keep their defaults.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);

} // namespace dirl
