#include "dirl/dirl.hpp"
#include "dirl/teleop.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

using namespace dirl;
namespace fs = std::filesystem;

namespace
{

struct Common
{
	std::string config_file;
	std::vector<std::string> overrides;
	std::string report_file;
	bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c)
{
	cmd->add_option("--config", c.config_file, "key = value configuration file")->check(CLI::ExistingFile);
	cmd->add_option("--set", c.overrides, "override one key, e.g. --set world.max_epochs=5");
	cmd->add_option("--report", c.report_file, "write the JSON report here as well as to stdout");
	cmd->add_flag("--quiet", c.quiet, "suppress progress lines on stderr");
}

RunConfig resolve_config(const Common& c)
{
	RunConfig cfg = c.config_file.empty() ? RunConfig{} : load_config(c.config_file);
	for (const auto& kv : c.overrides)
	{
		const auto eq = kv.find('=');
		if (eq == std::string::npos)
			throw ConfigError("--set expects key=value, got '" + kv + "'");
		cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
	}
	cfg.validate();
	return cfg;
}

ProgressFn make_progress(const Common& c)
{
	if (c.quiet)
		return {};
	const auto t0 = std::chrono::steady_clock::now();
	return [t0](const std::string& msg) {
		const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
		std::fprintf(stderr, "[%8.1fs] %s\n", s, msg.c_str());
	};
}

void emit_report(const Common& c, const std::string& command, const RunConfig& cfg, nlohmann::json body)
{
	body["command"] = command;
	body["config"] = cfg.to_json();
	const auto text = body.dump(2);
	std::cout << text << '\n';
	if (!c.report_file.empty())
	{
		std::ofstream out(c.report_file);
		if (!out)
			throw std::runtime_error("cannot write " + c.report_file);
		out << text << '\n';
	}
}

void write_text(const fs::path& path, const std::string& text)
{
	if (path.has_parent_path())
		fs::create_directories(path.parent_path());
	std::ofstream out(path);
	if (!out)
		throw std::runtime_error("cannot write " + path.string());
	out << text;
}

nlohmann::json curve_json(const TrainingCurve& c)
{
	return {{"train_loss", c.train_loss}, {"heldout_loss", c.heldout_loss}, {"epochs", c.epochs},
			{"plateaued", c.plateaued}};
}

template <typename T>
std::vector<T> parse_list(const std::string& text)
{
	std::vector<T> out;
	std::stringstream ss(text);
	std::string item;
	while (std::getline(ss, item, ','))
	{
		std::istringstream one(item);
		T v{};
		if (!(one >> v) || !(one >> std::ws).eof())
			throw CLI::ValidationError("bad list element '" + item + "'");
		out.push_back(v);
	}
	if (out.empty())
		throw CLI::ValidationError("empty list");
	return out;
}

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int)
{
	g_interrupted = true;
}

} // namespace

int main(int argc, char** argv)
{
	torch::set_num_threads(1);
	CLI::App app{"Offline world-model policy refinement for a toy autonomous-driving simulator"};
	app.require_subcommand(1);

	// collect
	Common collect_c;
	int collect_episodes = -1;
	double noise_fraction = -1.0;
	int obstacles = -1;
	std::uint64_t collect_seed = 0;
	bool collect_seed_set = false;
	std::string collect_out;
	auto* collect = app.add_subcommand("collect", "record scripted-expert demonstrations into an episode store");
	add_common(collect, collect_c);
	collect->add_option("--episodes", collect_episodes, "number of episodes")->check(CLI::PositiveNumber);
	collect->add_option("--noise-fraction", noise_fraction, "share of time with injected noise")
		->check(CLI::Range(0.0, 1.0));
	collect->add_option("--obstacles", obstacles, "obstacles per layout (default: random per episode)")
		->check(CLI::NonNegativeNumber);
	collect->add_option("--seed", collect_seed, "random seed")->each([&](const std::string&) { collect_seed_set = true; });
	collect->add_option("--out", collect_out, "store directory")->required();

	// train-world
	Common tw_c;
	std::string tw_data;
	std::string tw_out = "world.ckpt";
	std::string tw_init;
	auto* train_world = app.add_subcommand("train-world", "train the world model on a stored dataset");
	add_common(train_world, tw_c);
	train_world->add_option("--data", tw_data, "store directory")->required()->check(CLI::ExistingDirectory);
	train_world->add_option("--out", tw_out, "checkpoint to write");
	train_world->add_option("--init", tw_init, "warm-start checkpoint")->check(CLI::ExistingFile);

	// train-policy
	Common tp_c;
	std::string tp_mode;
	std::string tp_data;
	std::string tp_world;
	std::string tp_policy;
	std::string tp_out = "policy.ckpt";
	auto* train_policy = app.add_subcommand("train-policy", "imitation learning or offline refinement");
	add_common(train_policy, tp_c);
	train_policy->add_option("--mode", tp_mode, "il or refine")->required()->check(CLI::IsMember({"il", "refine"}));
	train_policy->add_option("--data", tp_data, "store directory")->required()->check(CLI::ExistingDirectory);
	train_policy->add_option("--world", tp_world, "world-model checkpoint (refine)")->check(CLI::ExistingFile);
	train_policy->add_option("--policy", tp_policy, "starting policy checkpoint (required for refine)")
		->check(CLI::ExistingFile);
	train_policy->add_option("--out", tp_out, "checkpoint to write");

	// dirl
	Common dirl_c;
	int iterations = -1;
	std::string dirl_out = "dirl_run";
	std::string dirl_data;
	std::string dirl_policy;
	auto* dirl_cmd = app.add_subcommand("dirl", "imitation, then alternate world-model training, refinement and collection");
	add_common(dirl_cmd, dirl_c);
	dirl_cmd->add_option("--iterations", iterations, "outer iterations")->check(CLI::PositiveNumber);
	dirl_cmd->add_option("--out", dirl_out, "run directory (data, checkpoints, report.json, eval.csv)");
	dirl_cmd->add_option("--data", dirl_data, "initial dataset store (default: scripted expert)")
		->check(CLI::ExistingDirectory);
	dirl_cmd->add_option("--policy", dirl_policy, "initial policy checkpoint (skips imitation)")
		->check(CLI::ExistingFile);

	// eval
	Common eval_c;
	std::string eval_policy;
	std::string eval_task = "easy";
	int trials = -1;
	int laps = -1;
	std::string eval_csv_path;
	auto* eval = app.add_subcommand("eval", "drive a policy on a fixed task layout");
	add_common(eval, eval_c);
	eval->add_option("--policy", eval_policy, "policy checkpoint")->required()->check(CLI::ExistingFile);
	eval->add_option("--task", eval_task, "easy or hard")->check(CLI::IsMember({"easy", "hard"}));
	eval->add_option("--trials", trials, "trials")->check(CLI::PositiveNumber);
	eval->add_option("--laps", laps, "laps per trial")->check(CLI::PositiveNumber);
	eval->add_option("--csv", eval_csv_path, "metrics table");

	// noisy-demo
	Common nd_c;
	std::string sigmas_text = "0,0.5,1.0";
	std::string seeds_text = "1,2,3";
	std::string nd_csv = "noisy_demo.csv";
	auto* noisy = app.add_subcommand("noisy-demo", "imitation vs refinement under perturbed demonstration labels");
	add_common(noisy, nd_c);
	noisy->add_option("--sigmas", sigmas_text, "comma-separated noise levels");
	noisy->add_option("--seeds", seeds_text, "comma-separated seeds");
	noisy->add_option("--csv", nd_csv, "comparison table");

	// serve
	Common serve_c;
	unsigned short port = 8765;
	std::string serve_address = "127.0.0.1";
	std::string serve_data;
	std::string serve_task = "easy";
	std::uint64_t layout_seed = 0;
	bool layout_seed_set = false;
	int tick_ms = 100;
	std::string serve_policy;
	auto* serve = app.add_subcommand("serve", "websocket teleoperation and recording server");
	add_common(serve, serve_c);
	serve->add_option("--port", port, "listen port (0 picks one)");
	serve->add_option("--address", serve_address, "listen address");
	serve->add_option("--data", serve_data, "store directory for recorded episodes")->required();
	serve->add_option("--task", serve_task, "easy or hard")->check(CLI::IsMember({"easy", "hard"}));
	serve->add_option("--seed", layout_seed, "obstacle layout seed (default: the task's fixed layout)")
		->each([&](const std::string&) { layout_seed_set = true; });
	serve->add_option("--tick-ms", tick_ms, "control period")->check(CLI::PositiveNumber);
	serve->add_option("--policy", serve_policy, "let a policy drive (eval-monitor mode)")->check(CLI::ExistingFile);

	CLI11_PARSE(app, argc, argv);

	try
	{
		if (collect->parsed())
		{
			auto cfg = resolve_config(collect_c);
			if (collect_episodes > 0)
				cfg.run.expert_episodes = collect_episodes;
			if (noise_fraction >= 0.0)
				cfg.expert.noise_fraction = noise_fraction;
			if (collect_seed_set)
				cfg.run.seed = collect_seed;
			cfg.validate();
			std::mt19937_64 rng(cfg.run.seed);
			auto clean = EpisodeStore::in_memory();
			collect_expert_dataset(clean, cfg, rng, make_progress(collect_c),
								   obstacles >= 0 ? std::optional<int>(obstacles) : std::nullopt);
			auto store = EpisodeStore::open(collect_out);
			const auto labeled =
				perturb_demonstrations(clean.dataset(), cfg.run.demo_noise_sigma, cfg.run.seed ^ 0x5eedULL);
			for (const auto& ep : labeled.episodes())
				store.append_episode(ep);
			emit_report(collect_c, "collect", cfg,
						{{"store", collect_out},
						 {"episodes_added", labeled.size()},
						 {"episodes", store.size()},
						 {"frames", store.total_frames()},
						 {"collision_frames", store.collision_frames()}});
		}
		else if (train_world->parsed())
		{
			const auto cfg = resolve_config(tw_c);
			torch::manual_seed(cfg.run.seed);
			std::mt19937_64 rng(cfg.run.seed);
			const auto store = EpisodeStore::open(tw_data);
			WorldModel model = tw_init.empty() ? WorldModel(cfg.world, cfg.sim.image_height, cfg.sim.image_width)
											   : load_world_model(tw_init);
			const auto curve = train_world_model(model, store.dataset(), cfg.world, cfg.evidential, rng,
												 make_progress(tw_c));
			save_world_model(model, cfg, tw_out);
			const auto held = store.dataset().split(static_cast<std::size_t>(cfg.world.holdout_every)).second;
			emit_report(tw_c, "train-world", cfg,
						{{"checkpoint", tw_out},
						 {"curve", curve_json(curve)},
						 {"heldout", evaluate_world_model(model, held).to_json()}});
		}
		else if (train_policy->parsed())
		{
			const auto cfg = resolve_config(tp_c);
			torch::manual_seed(cfg.run.seed);
			std::mt19937_64 rng(cfg.run.seed);
			const auto store = EpisodeStore::open(tp_data);
			TrainingCurve curve;
			Policy policy{nullptr};
			if (tp_mode == "il")
			{
				policy = tp_policy.empty()
							 ? Policy(cfg.policy, cfg.world.horizon, cfg.sim.image_height, cfg.sim.image_width)
							 : load_policy(tp_policy);
				curve = train_policy_il(policy, store.dataset(), cfg.policy, rng, make_progress(tp_c));
				save_policy(policy, cfg, tp_out, {{"stage", "imitation"}});
			}
			else
			{
				if (tp_world.empty() || tp_policy.empty())
					throw CLI::ValidationError("refine needs --world and --policy");
				policy = load_policy(tp_policy);
				auto world = load_world_model(tp_world);
				curve = refine_policy(policy, world, store.dataset(), cfg.policy, cfg.sim.v_max, rng,
									  make_progress(tp_c));
				save_policy(policy, cfg, tp_out,
							{{"stage", "refinement"}, {"uncertainty_ablation", cfg.policy.w_uncertainty == 0.0}});
			}
			emit_report(tp_c, "train-policy", cfg,
						{{"mode", tp_mode}, {"checkpoint", tp_out}, {"curve", curve_json(curve)}});
		}
		else if (dirl_cmd->parsed())
		{
			auto cfg = resolve_config(dirl_c);
			if (iterations > 0)
				cfg.run.iterations = iterations;
			cfg.validate();
			DirlOptions opt;
			opt.out_dir = fs::path(dirl_out);
			opt.progress = make_progress(dirl_c);
			if (!dirl_data.empty())
				opt.initial_data = EpisodeStore::open(dirl_data).dataset();
			if (!dirl_policy.empty())
				opt.initial_policy = load_policy(dirl_policy);
			auto res = run_dirl(cfg, opt);
			std::vector<std::pair<std::string, EvalReport>> rows{{"IL", res.il_eval}};
			for (const auto& it : res.iterations)
				rows.emplace_back("DIRL(" + std::to_string(it.iteration) + " iter)", it.eval);
			write_text(fs::path(dirl_out) / "eval.csv", eval_csv(rows));
			emit_report(dirl_c, "dirl", cfg, res.to_json(cfg));
		}
		else if (eval->parsed())
		{
			auto cfg = resolve_config(eval_c);
			if (trials > 0)
				cfg.run.eval_trials = trials;
			if (laps > 0)
				cfg.run.eval_laps = laps;
			cfg.validate();
			auto policy = load_policy(eval_policy);
			const auto rep = evaluate_policy(policy, task_from_string(eval_task), cfg);
			if (!eval_csv_path.empty())
				write_text(eval_csv_path, eval_csv({{fs::path(eval_policy).stem().string(), rep}}));
			emit_report(eval_c, "eval", cfg, {{"policy", eval_policy}, {"eval", rep.to_json()}});
		}
		else if (noisy->parsed())
		{
			const auto cfg = resolve_config(nd_c);
			const auto rows = noisy_demo_experiment(cfg, parse_list<double>(sigmas_text),
													parse_list<std::uint64_t>(seeds_text), make_progress(nd_c));
			write_text(nd_csv, noisy_demo_csv(rows));
			nlohmann::json out = nlohmann::json::array();
			for (const auto& r : rows)
				out.push_back({{"sigma", r.sigma}, {"seed", r.seed}, {"il", r.il.to_json()}, {"dirl", r.dirl.to_json()}});
			emit_report(nd_c, "noisy-demo", cfg, {{"csv", nd_csv}, {"rows", out}});
		}
		else if (serve->parsed())
		{
			const auto cfg = resolve_config(serve_c);
			auto store = EpisodeStore::open(serve_data);
			teleop::ServerOptions opt;
			opt.address = serve_address;
			opt.port = port;
			opt.tick_ms = tick_ms;
			opt.engine.sim = cfg.sim;
			opt.engine.task = task_from_string(serve_task);
			if (layout_seed_set)
				opt.engine.layout_seed = layout_seed;
			Policy policy{nullptr};
			if (!serve_policy.empty())
			{
				policy = load_policy(serve_policy);
				opt.engine.autopilot = policy_controller(policy);
			}
			teleop::Server server(opt, store);
			const auto bound = server.start();
			std::fprintf(stderr, "serving ws://%s:%u (task %s); Ctrl-C to stop\n", serve_address.c_str(), bound,
						 serve_task.c_str());
			std::signal(SIGINT, on_signal);
			std::signal(SIGTERM, on_signal);
			while (!g_interrupted)
				std::this_thread::sleep_for(std::chrono::milliseconds(100));
			server.stop();
			const auto stats = server.stats();
			emit_report(serve_c, "serve", cfg,
						{{"ticks", stats.ticks},
						 {"interventions", stats.interventions},
						 {"frames_dropped", stats.frames_dropped},
						 {"episodes", store.size()}});
		}
	}
	catch (const DirlPhaseError& e)
	{
		std::fprintf(stderr, "error in phase %s: %s\n", e.phase.c_str(), e.what());
		return 2;
	}
	catch (const std::exception& e)
	{
		std::fprintf(stderr, "error: %s\n", e.what());
		return 1;
	}
	return 0;
}
