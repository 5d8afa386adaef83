#include "dirl/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

namespace dirl
{

namespace
{

using FieldRef =
	std::variant<double*, int*, bool*, std::string*, std::uint64_t*, std::vector<double>*>;

template <typename Fn>
void visit_fields(RunConfig& c, Fn&& fn)
{
	fn("sim.dt", FieldRef{&c.sim.dt});
	fn("sim.v_max", FieldRef{&c.sim.v_max});
	fn("sim.a_max", FieldRef{&c.sim.a_max});
	fn("sim.delta_max", FieldRef{&c.sim.delta_max});
	fn("sim.wheelbase", FieldRef{&c.sim.wheelbase});
	fn("sim.drag", FieldRef{&c.sim.drag});
	fn("sim.footprint_radius", FieldRef{&c.sim.footprint_radius});
	fn("sim.image_height", FieldRef{&c.sim.image_height});
	fn("sim.image_width", FieldRef{&c.sim.image_width});
	fn("sim.view_half_extent", FieldRef{&c.sim.view_half_extent});
	fn("sim.fence_band", FieldRef{&c.sim.fence_band});
	fn("sim.obstacle_radius_min", FieldRef{&c.sim.obstacle_radius_min});
	fn("sim.obstacle_radius_max", FieldRef{&c.sim.obstacle_radius_max});
	fn("sim.rng_seed", FieldRef{&c.sim.rng_seed});

	fn("expert.lookahead", FieldRef{&c.expert.lookahead});
	fn("expert.straight_speed", FieldRef{&c.expert.straight_speed});
	fn("expert.min_speed", FieldRef{&c.expert.min_speed});
	fn("expert.lateral_accel", FieldRef{&c.expert.lateral_accel});
	fn("expert.speed_preview", FieldRef{&c.expert.speed_preview});
	fn("expert.speed_gain", FieldRef{&c.expert.speed_gain});
	fn("expert.avoidance_offsets", FieldRef{&c.expert.avoidance_offsets});
	fn("expert.avoidance_horizon", FieldRef{&c.expert.avoidance_horizon});
	fn("expert.avoidance_margin", FieldRef{&c.expert.avoidance_margin});
	fn("expert.offset_weight", FieldRef{&c.expert.offset_weight});
	fn("expert.obstacle_weight", FieldRef{&c.expert.obstacle_weight});
	fn("expert.noise_amplitude", FieldRef{&c.expert.noise_amplitude});
	fn("expert.noise_fraction", FieldRef{&c.expert.noise_fraction});
	fn("expert.noise_block_seconds", FieldRef{&c.expert.noise_block_seconds});

	fn("evidential.lambda", FieldRef{&c.evidential.lambda});

	fn("world.horizon", FieldRef{&c.world.horizon});
	fn("world.image_features", FieldRef{&c.world.image_features});
	fn("world.speed_features", FieldRef{&c.world.speed_features});
	fn("world.action_features", FieldRef{&c.world.action_features});
	fn("world.hidden", FieldRef{&c.world.hidden});
	fn("world.layers", FieldRef{&c.world.layers});
	fn("world.encoder_channels", FieldRef{&c.world.encoder_channels});
	fn("world.decoder_channels", FieldRef{&c.world.decoder_channels});
	fn("world.w_image", FieldRef{&c.world.w_image});
	fn("world.w_speed", FieldRef{&c.world.w_speed});
	fn("world.w_collision", FieldRef{&c.world.w_collision});
	fn("world.learning_rate", FieldRef{&c.world.learning_rate});
	fn("world.batch_size", FieldRef{&c.world.batch_size});
	fn("world.max_epochs", FieldRef{&c.world.max_epochs});
	fn("world.batches_per_epoch", FieldRef{&c.world.batches_per_epoch});
	fn("world.plateau_patience", FieldRef{&c.world.plateau_patience});
	fn("world.plateau_tolerance", FieldRef{&c.world.plateau_tolerance});
	fn("world.eval_batches", FieldRef{&c.world.eval_batches});
	fn("world.collision_oversample", FieldRef{&c.world.collision_oversample});
	fn("world.balance_collision", FieldRef{&c.world.balance_collision});
	fn("world.collision_kl", FieldRef{&c.world.collision_kl});
	fn("world.image_loss_steps", FieldRef{&c.world.image_loss_steps});
	fn("world.holdout_every", FieldRef{&c.world.holdout_every});

	fn("policy.image_features", FieldRef{&c.policy.image_features});
	fn("policy.speed_features", FieldRef{&c.policy.speed_features});
	fn("policy.hidden", FieldRef{&c.policy.hidden});
	fn("policy.encoder_channels", FieldRef{&c.policy.encoder_channels});
	fn("policy.sigma_floor", FieldRef{&c.policy.sigma_floor});
	fn("policy.il_learning_rate", FieldRef{&c.policy.il_learning_rate});
	fn("policy.il_batch", FieldRef{&c.policy.il_batch});
	fn("policy.il_max_epochs", FieldRef{&c.policy.il_max_epochs});
	fn("policy.refine_learning_rate", FieldRef{&c.policy.refine_learning_rate});
	fn("policy.refine_batch", FieldRef{&c.policy.refine_batch});
	fn("policy.refine_max_epochs", FieldRef{&c.policy.refine_max_epochs});
	fn("policy.batches_per_epoch", FieldRef{&c.policy.batches_per_epoch});
	fn("policy.plateau_patience", FieldRef{&c.policy.plateau_patience});
	fn("policy.plateau_tolerance", FieldRef{&c.policy.plateau_tolerance});
	fn("policy.w_speed", FieldRef{&c.policy.w_speed});
	fn("policy.w_collision", FieldRef{&c.policy.w_collision});
	fn("policy.w_uncertainty", FieldRef{&c.policy.w_uncertainty});
	fn("policy.holdout_every", FieldRef{&c.policy.holdout_every});

	fn("dirl.iterations", FieldRef{&c.run.iterations});
	fn("dirl.expert_episodes", FieldRef{&c.run.expert_episodes});
	fn("dirl.expert_max_steps", FieldRef{&c.run.expert_max_steps});
	fn("dirl.max_obstacles_in_demos", FieldRef{&c.run.max_obstacles_in_demos});
	fn("dirl.episodes_per_round", FieldRef{&c.run.episodes_per_round});
	fn("dirl.max_steps", FieldRef{&c.run.max_steps});
	fn("dirl.task", FieldRef{&c.run.task});
	fn("dirl.demo_noise_sigma", FieldRef{&c.run.demo_noise_sigma});
	fn("dirl.seed", FieldRef{&c.run.seed});
	fn("dirl.eval_trials", FieldRef{&c.run.eval_trials});
	fn("dirl.eval_laps", FieldRef{&c.run.eval_laps});
	fn("dirl.eval_max_steps", FieldRef{&c.run.eval_max_steps});
	fn("dirl.early_exit", FieldRef{&c.run.early_exit});
	fn("dirl.explore_on_collection", FieldRef{&c.run.explore_on_collection});
	fn("dirl.refine", FieldRef{&c.run.refine});
	fn("dirl.collect", FieldRef{&c.run.collect});
}

std::string trim(const std::string& s)
{
	const auto b = s.find_first_not_of(" \t\r\n");
	if (b == std::string::npos)
	{
		return {};
	}
	const auto e = s.find_last_not_of(" \t\r\n");
	return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value)
{
	std::istringstream ss(value);
	T out{};
	ss >> out;
	if (ss.fail() || !ss.eof())
	{
		throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
	}
	return out;
}

} // namespace

void WorldModelConfig::validate() const
{
	if (horizon < 1 || image_features <= 0 || speed_features <= 0 || action_features <= 0 || hidden <= 0 ||
		encoder_channels <= 0 || decoder_channels <= 0)
	{
		throw ConfigError("world model: horizon and all dimensions must be positive");
	}
	if (layers != 3)
	{
		throw ConfigError("world model: the recurrent core has exactly three layers");
	}
	if (w_image < 0.0 || w_speed < 0.0 || w_collision < 0.0)
	{
		throw ConfigError("world model: loss weights must be non-negative");
	}
	if (!(learning_rate > 0.0) || batch_size <= 0 || max_epochs < 0 || batches_per_epoch <= 0)
	{
		throw ConfigError("world model: invalid optimisation settings");
	}
	if (image_loss_steps < 1)
		throw ConfigError("world model: image_loss_steps must be at least 1");
	if (!(collision_kl >= 0.0))
		throw ConfigError("world model: collision_kl must be non-negative");
	if (collision_oversample < 0.0 || collision_oversample > 1.0)
	{
		throw ConfigError("world model: collision_oversample must lie in [0, 1]");
	}
}

void PolicyConfig::validate() const
{
	if (image_features <= 0 || speed_features <= 0 || hidden <= 0 || encoder_channels <= 0)
	{
		throw ConfigError("policy: dimensions must be positive");
	}
	if (!(il_learning_rate > 0.0) || !(refine_learning_rate > 0.0) || il_batch <= 0 || refine_batch <= 0)
	{
		throw ConfigError("policy: learning rates and batch sizes must be positive");
	}
	if (w_speed < 0.0 || w_collision < 0.0 || w_uncertainty < 0.0)
	{
		throw ConfigError("policy: cost weights must be non-negative");
	}
	if (holdout_every < 1)
	{
		throw ConfigError("policy: holdout_every must be >= 1");
	}
	if (!(sigma_floor > 0.0))
	{
		throw ConfigError("policy: sigma floor must be positive");
	}
}

int obstacle_count(Task t)
{
	return t == Task::easy ? 2 : 8;
}

const char* to_string(Task t)
{
	return t == Task::easy ? "easy" : "hard";
}

Task task_from_string(const std::string& s)
{
	if (s == "easy")
	{
		return Task::easy;
	}
	if (s == "hard")
	{
		return Task::hard;
	}
	throw ConfigError("unknown task '" + s + "' (expected easy or hard)");
}

void DirlRunConfig::validate() const
{
	if (iterations < 1 || max_steps < 1 || expert_max_steps < 1)
	{
		throw ConfigError("dirl: iterations and step limits must be at least 1");
	}
	if (demo_noise_sigma < 0.0)
	{
		throw ConfigError("dirl: demonstration noise must be non-negative");
	}
	task_from_string(task);
}

void RunConfig::validate() const
{
	sim.validate();
	expert.validate();
	if (evidential.lambda < 0.0)
	{
		throw ConfigError("evidential: lambda must be non-negative");
	}
	world.validate();
	policy.validate();
	run.validate();
}

nlohmann::json RunConfig::to_json() const
{
	nlohmann::json j = nlohmann::json::object();
	RunConfig copy = *this;
	visit_fields(copy, [&](const char* key, FieldRef ref) {
		std::visit([&](auto* p) { j[key] = *p; }, ref);
	});
	return j;
}

void RunConfig::update_from_json(const nlohmann::json& j)
{
	visit_fields(*this, [&](const char* key, FieldRef ref) {
		const auto it = j.find(key);
		if (it == j.end())
		{
			return;
		}
		std::visit(
			[&](auto* p) {
				try
				{
					it->get_to(*p);
				}
				catch (const nlohmann::json::exception&)
				{
					throw ConfigError(std::string("config key '") + key + "': wrong JSON type");
				}
			},
			ref);
	});
}

void RunConfig::set(const std::string& key, const std::string& value)
{
	bool found = false;
	visit_fields(*this, [&](const char* k, FieldRef ref) {
		if (key != k)
		{
			return;
		}
		found = true;
		std::visit(
			[&](auto* p) {
				using T = std::remove_pointer_t<decltype(p)>;
				if constexpr (std::is_same_v<T, std::string>)
				{
					*p = value;
				}
				else if constexpr (std::is_same_v<T, bool>)
				{
					if (value == "true" || value == "1")
					{
						*p = true;
					}
					else if (value == "false" || value == "0")
					{
						*p = false;
					}
					else
					{
						throw ConfigError("config key '" + key + "': expected true/false");
					}
				}
				else if constexpr (std::is_same_v<T, std::vector<double>>)
				{
					p->clear();
					std::istringstream ss(value);
					std::string item;
					while (std::getline(ss, item, ','))
					{
						p->push_back(parse_number<double>(key, trim(item)));
					}
				}
				else
				{
					*p = parse_number<T>(key, value);
				}
			},
			ref);
	});
	if (!found)
	{
		throw ConfigError("unknown config key '" + key + "'");
	}
}

RunConfig parse_config(const std::string& text)
{
	RunConfig cfg;
	std::istringstream in(text);
	std::string line;
	int lineno = 0;
	while (std::getline(in, line))
	{
		++lineno;
		const auto hash = line.find('#');
		if (hash != std::string::npos)
		{
			line.erase(hash);
		}
		line = trim(line);
		if (line.empty())
		{
			continue;
		}
		const auto eq = line.find('=');
		if (eq == std::string::npos)
		{
			throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
		}
		cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
	}
	cfg.validate();
	return cfg;
}

RunConfig load_config(const std::filesystem::path& path)
{
	std::ifstream in(path);
	if (!in)
	{
		throw ConfigError("cannot open config file " + path.string());
	}
	std::stringstream ss;
	ss << in.rdbuf();
	return parse_config(ss.str());
}

} // namespace dirl
