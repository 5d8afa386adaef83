#include "dirl/dirl.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dirl
{

namespace
{

void say(const ProgressFn& progress, const std::string& msg)
{
	if (progress)
		progress(msg);
}

std::string episode_id(const char* prefix, std::size_t n)
{
	char buf[48];
	std::snprintf(buf, sizeof buf, "%s_%06zu", prefix, n);
	return buf;
}

EvalOptions eval_options(const RunConfig& cfg)
{
	EvalOptions o;
	o.trials = cfg.run.eval_trials;
	o.laps = cfg.run.eval_laps;
	o.max_steps = cfg.run.eval_max_steps;
	return o;
}

nlohmann::json curve_json(const TrainingCurve& c)
{
	return {{"train_loss", c.train_loss},
			{"heldout_loss", c.heldout_loss},
			{"epochs", c.epochs},
			{"plateaued", c.plateaued}};
}

} // namespace

void collect_expert_dataset(EpisodeStore& store, const RunConfig& cfg, std::mt19937_64& rng,
							const ProgressFn& progress, std::optional<int> obstacles)
{
	if (obstacles && *obstacles < 0)
		throw std::invalid_argument("obstacle count must be non-negative");
	const Track track = Track::stadium();
	std::uniform_int_distribution<int> n_obstacles(0, cfg.run.max_obstacles_in_demos);
	for (int i = 0; i < cfg.run.expert_episodes; ++i)
	{
		const int n = obstacles ? *obstacles : n_obstacles(rng);
		auto sim = Simulator::create(track, n, rng(), cfg.sim);
		store.append_episode(collect_expert_episode(sim, cfg.expert, cfg.run.expert_max_steps, rng,
													episode_id("expert", store.size())));
	}
	say(progress, "expert dataset: " + std::to_string(store.size()) + " episodes, " +
					  std::to_string(store.total_frames()) + " frames, " + std::to_string(store.collision_frames()) +
					  " collision frames");
}

Dataset perturb_demonstrations(const Dataset& data, double sigma, std::uint64_t seed)
{
	if (sigma < 0.0)
		throw std::invalid_argument("sigma must be non-negative");
	if (sigma == 0.0)
		return data;
	std::mt19937_64 rng(seed);
	std::vector<std::shared_ptr<const EpisodeRecord>> out;
	for (const auto& ep : data.episodes())
	{
		auto copy = std::make_shared<EpisodeRecord>(*ep);
		for (auto& f : copy->frames)
			if (f.expert_action)
				f.expert_action = StoredAction::from(gaussian_perturb(f.expert_action->action(), sigma, rng));
		out.push_back(std::move(copy));
	}
	return Dataset(std::move(out));
}

EvalReport evaluate_policy(Policy& policy, Task task, const RunConfig& cfg)
{
	const auto layout = task_layout(task, cfg.sim);
	return evaluate_controller(policy_controller(policy), layout.track, layout.obstacles, cfg.sim, eval_options(cfg),
							   to_string(task));
}

const EvalReport& DirlResult::final_eval() const
{
	return iterations.empty() ? il_eval : iterations.back().eval;
}

nlohmann::json DirlResult::to_json(const RunConfig& cfg) const
{
	nlohmann::json iters = nlohmann::json::array();
	for (const auto& it : iterations)
		iters.push_back({{"iteration", it.iteration},
						 {"world_model", curve_json(it.world_curve)},
						 {"world_model_heldout", it.world_heldout.to_json()},
						 {"refinement", curve_json(it.refine_curve)},
						 {"episodes_collected", it.episodes_collected},
						 {"dataset_frames", it.dataset_frames},
						 {"eval", it.eval.to_json()}});
	nlohmann::json steps = nlohmann::json::array();
	for (const auto& p : phase_steps)
		steps.push_back({{"phase", p.phase}, {"sim_steps", p.sim_steps}});
	return {{"config", cfg.to_json()},
			{"uncertainty_ablation", cfg.policy.w_uncertainty == 0.0},
			{"imitation", curve_json(il_curve)},
			{"il_eval", il_eval.to_json()},
			{"iterations", iters},
			{"final_eval", final_eval().to_json()},
			{"events", events},
			{"phase_sim_steps", steps}};
}

DirlResult run_dirl(const RunConfig& cfg, const DirlOptions& options)
{
	cfg.validate();
	const Task task = task_from_string(cfg.run.task);
	torch::manual_seed(cfg.run.seed);
	std::mt19937_64 rng(cfg.run.seed);
	const auto& progress = options.progress;

	std::optional<std::filesystem::path> ckpt_dir;
	if (options.out_dir)
	{
		ckpt_dir = *options.out_dir / "checkpoints";
		std::filesystem::create_directories(*ckpt_dir);
	}
	EpisodeStore store = options.out_dir ? EpisodeStore::open(*options.out_dir / "data") : EpisodeStore::in_memory();

	DirlResult res;
	auto phase = [&](const std::string& name, auto&& body) {
		res.events.push_back(name);
		say(progress, "phase " + name);
		const auto before = sim_step_count();
		try
		{
			body();
		}
		catch (const DirlPhaseError&)
		{
			throw;
		}
		catch (const std::exception& e)
		{
			throw DirlPhaseError(name, e.what());
		}
		res.phase_steps.push_back({name, sim_step_count() - before});
	};

	phase("init_dataset", [&] {
		if (options.initial_data)
		{
			for (const auto& ep : options.initial_data->episodes())
				store.append_episode(ep);
		}
		else if (store.size() == 0)
		{
			auto clean = EpisodeStore::in_memory();
			collect_expert_dataset(clean, cfg, rng, progress);
			const auto noisy = perturb_demonstrations(clean.dataset(), cfg.run.demo_noise_sigma, cfg.run.seed ^ 0x5eedULL);
			for (const auto& ep : noisy.episodes())
				store.append_episode(ep);
		}
		if (store.size() == 0)
			throw InsufficientData("empty initial dataset");
	});

	const auto& img_h = cfg.sim.image_height;
	const auto& img_w = cfg.sim.image_width;
	if (options.initial_policy)
	{
		res.il_policy = *options.initial_policy;
	}
	else
	{
		phase("imitation", [&] {
			res.il_policy = Policy(cfg.policy, cfg.world.horizon, img_h, img_w);
			res.il_curve = train_policy_il(res.il_policy, store.dataset(), cfg.policy, rng, progress);
			if (ckpt_dir)
				save_policy(res.il_policy, cfg, *ckpt_dir / "policy_il.ckpt", {{"stage", "imitation"}});
		});
	}
	phase("evaluate_il", [&] { res.il_eval = evaluate_policy(res.il_policy, task, cfg); });

	// Refinement updates a copy so the imitation policy stays available as the baseline.
	res.policy = Policy(cfg.policy, cfg.world.horizon, img_h, img_w);
	{
		torch::NoGradGuard guard;
		auto src = res.il_policy->parameters();
		auto dst = res.policy->parameters();
		for (std::size_t i = 0; i < src.size(); ++i)
			dst[i].copy_(src[i]);
	}
	res.policy->eval();
	res.world = WorldModel(cfg.world, img_h, img_w);

	const auto layout = task_layout(task, cfg.sim);
	for (int it = 1; it <= cfg.run.iterations; ++it)
	{
		IterationReport rep;
		rep.iteration = it;
		const auto tag = std::to_string(it);
		phase("train_world_model_" + tag, [&] {
			rep.world_curve = train_world_model(res.world, store.dataset(), cfg.world, cfg.evidential, rng, progress);
			rep.world_heldout = evaluate_world_model(
				res.world, store.dataset().split(static_cast<std::size_t>(cfg.world.holdout_every)).second);
			if (ckpt_dir)
				save_world_model(res.world, cfg, *ckpt_dir / ("world_iter" + tag + ".ckpt"));
		});
		if (cfg.run.refine)
		{
			phase("refine_policy_" + tag, [&] {
				rep.refine_curve =
					refine_policy(res.policy, res.world, store.dataset(), cfg.policy, cfg.sim.v_max, rng, progress);
				if (ckpt_dir)
					save_policy(res.policy, cfg, *ckpt_dir / ("policy_iter" + tag + ".ckpt"),
								{{"stage", "refinement"}, {"iteration", it},
								 {"uncertainty_ablation", cfg.policy.w_uncertainty == 0.0}});
			});
		}
		if (cfg.run.collect)
		{
			phase("collect_" + tag, [&] {
				std::uniform_real_distribution<double> start(0.0, layout.track.total_length());
				for (int e = 0; e < cfg.run.episodes_per_round; ++e)
				{
					Simulator sim(layout.track, layout.obstacles, cfg.sim, pose_on_centerline(layout.track, start(rng)));
					sim.reset_to_centerline();
					const auto controller = cfg.run.explore_on_collection ? exploring_controller(res.policy, rng())
																		  : policy_controller(res.policy);
					store.append_episode(
						collect_episode(controller, sim, cfg.run.max_steps, episode_id("policy", store.size())));
					++rep.episodes_collected;
				}
			});
		}
		rep.dataset_frames = store.total_frames();
		phase("evaluate_" + tag, [&] { rep.eval = evaluate_policy(res.policy, task, cfg); });
		say(progress, "iteration " + tag + ": completion " + std::to_string(rep.eval.completion_ratio) +
						  "% interventions " + std::to_string(rep.eval.interventions));
		res.iterations.push_back(std::move(rep));
		if (cfg.run.early_exit && res.iterations.back().eval.interventions == 0.0)
			break;
	}

	if (options.out_dir)
	{
		std::ofstream out(*options.out_dir / "report.json");
		out << res.to_json(cfg).dump(2) << '\n';
	}
	return res;
}

std::vector<NoisyDemoRow> noisy_demo_experiment(const RunConfig& cfg, const std::vector<double>& sigmas,
												const std::vector<std::uint64_t>& seeds, const ProgressFn& progress)
{
	std::vector<NoisyDemoRow> rows;
	for (const auto seed : seeds)
	{
		RunConfig run = cfg;
		run.run.seed = seed;
		std::mt19937_64 rng(seed);
		auto store = EpisodeStore::in_memory();
		collect_expert_dataset(store, run, rng, progress);
		for (const double sigma : sigmas)
		{
			run.run.demo_noise_sigma = sigma;
			DirlOptions opt;
			opt.progress = progress;
			opt.initial_data = perturb_demonstrations(store.dataset(), sigma, seed ^ 0x5eedULL);
			auto res = run_dirl(run, opt);
			rows.push_back({sigma, seed, res.il_eval, res.final_eval()});
		}
	}
	return rows;
}

std::string noisy_demo_csv(const std::vector<NoisyDemoRow>& rows)
{
	std::ostringstream out;
	out << "sigma,seed,il_completion_ratio,il_avg_speed,il_interventions,dirl_completion_ratio,dirl_avg_speed,"
		   "dirl_interventions\n";
	for (const auto& r : rows)
		out << r.sigma << ',' << r.seed << ',' << r.il.completion_ratio << ',' << r.il.avg_speed << ','
			<< r.il.interventions << ',' << r.dirl.completion_ratio << ',' << r.dirl.avg_speed << ','
			<< r.dirl.interventions << '\n';
	return out.str();
}

std::string eval_csv(const std::vector<std::pair<std::string, EvalReport>>& rows)
{
	std::ostringstream out;
	out << "method,task,avg_speed,top_speed,interventions,time_cost,completion_ratio\n";
	for (const auto& [method, r] : rows)
		out << method << ',' << r.task << ',' << r.avg_speed << ',' << r.top_speed << ',' << r.interventions << ','
			<< r.time_cost << ',' << r.completion_ratio << '\n';
	return out.str();
}

} // namespace dirl
