#include "dirl/dirl.hpp"
#include "tiny_models.hpp"

#include <doctest.h>

#include <filesystem>

using namespace dirl;

namespace
{

RunConfig micro(int iterations)
{
	RunConfig c;
	c.world = testing::tiny_world_config(4);
	c.world.batch_size = 8;
	c.world.max_epochs = 1;
	c.world.batches_per_epoch = 2;
	c.world.eval_batches = 1;
	c.world.holdout_every = 3;
	c.policy = testing::tiny_policy_config();
	c.policy.il_batch = 16;
	c.policy.il_max_epochs = 1;
	c.policy.refine_batch = 8;
	c.policy.refine_max_epochs = 1;
	c.policy.batches_per_epoch = 2;
	c.policy.holdout_every = 3;
	c.run.iterations = iterations;
	c.run.early_exit = false;
	c.run.expert_episodes = 5;
	c.run.expert_max_steps = 30;
	c.run.episodes_per_round = 2;
	c.run.max_steps = 20;
	c.run.eval_trials = 1;
	c.run.eval_laps = 1;
	c.run.eval_max_steps = 60;
	c.run.seed = 9;
	return c;
}

std::vector<std::string> phase_names(const DirlResult& r)
{
	std::vector<std::string> out;
	for (const auto& p : r.phase_steps)
		out.push_back(p.phase);
	return out;
}

} // namespace

TEST_CASE("phases run in order and every round grows the dataset")
{
	const auto cfg = micro(2);
	const auto r = run_dirl(cfg);
	const std::vector<std::string> expected{"init_dataset", "imitation", "evaluate_il",
											"train_world_model_1", "refine_policy_1", "collect_1",
											"evaluate_1", "train_world_model_2", "refine_policy_2",
											"collect_2", "evaluate_2"};
	CHECK(phase_names(r) == expected);
	REQUIRE(r.iterations.size() == 2);
	CHECK(r.iterations[0].episodes_collected == 2);
	CHECK(r.iterations[1].dataset_frames > r.iterations[0].dataset_frames);
	CHECK(r.iterations[1].world_curve.epochs >= 1);
	CHECK(&r.final_eval() == &r.iterations.back().eval);
}

TEST_CASE("without refinement and collection one iteration keeps the imitation policy")
{
	auto cfg = micro(1);
	cfg.run.refine = false;
	cfg.run.collect = false;
	const auto r = run_dirl(cfg);
	const std::vector<std::string> expected{"init_dataset", "imitation", "evaluate_il", "train_world_model_1",
											"evaluate_1"};
	CHECK(phase_names(r) == expected);
	const auto a = r.il_policy->parameters();
	const auto b = r.policy->parameters();
	REQUIRE(a.size() == b.size());
	for (std::size_t i = 0; i < a.size(); ++i)
		CHECK(torch::equal(a[i], b[i]));
	CHECK(r.final_eval().completion_ratio == r.il_eval.completion_ratio);
	CHECK(r.final_eval().interventions == r.il_eval.interventions);
}

TEST_CASE("early exit stops after an iteration without interventions")
{
	auto cfg = micro(3);
	cfg.run.early_exit = true;
	const auto r = run_dirl(cfg);
	for (std::size_t i = 0; i + 1 < r.iterations.size(); ++i)
		CHECK(r.iterations[i].eval.interventions > 0.0);
}

TEST_CASE("a run directory receives the store, checkpoints and report")
{
	const auto dir = std::filesystem::temp_directory_path() / "dirl_test_run";
	std::filesystem::remove_all(dir);
	const auto cfg = micro(1);
	const auto r = run_dirl(cfg, {.out_dir = dir});
	CHECK(std::filesystem::exists(dir / "report.json"));
	CHECK(std::filesystem::exists(dir / "checkpoints" / "policy_il.ckpt"));
	CHECK(std::filesystem::exists(dir / "checkpoints" / "world_iter1.ckpt"));
	CHECK(std::filesystem::exists(dir / "checkpoints" / "policy_iter1.ckpt"));
	CHECK(EpisodeStore::open(dir / "data").total_frames() == r.iterations.back().dataset_frames);
	std::filesystem::remove_all(dir);
}
