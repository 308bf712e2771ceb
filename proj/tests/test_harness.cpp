#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include <gtest/gtest.h>

#include "tafe/harness/config.hpp"
#include "tafe/harness/mission.hpp"
#include "tafe/harness/pipeline.hpp"
#include "tafe/harness/report.hpp"

using namespace tafe;
using namespace tafe::harness;

namespace {

/// A pipeline small enough to run end to end in a few seconds.
ExperimentConfig tiny_config() {
  std::istringstream in(R"(
seeds = 1
collect.duration = 30
model.k = 2
model.hidden = 8
train.epochs = 3
train.batch_per_dataset = 8
train.val_support = 10
train.val_query = 10
eval.support = 20
eval.windows = 1 2 5
eval.rollouts = 4
eval.horizon = 1
mission.trials = 1
mission.max_time = 4
mppi.rollouts = 16
mppi.horizon = 8
budget.rollouts = 16
budget.horizon = 8
)");
  return ExperimentConfig::from_kv(KeyValueFile::parse(in));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("tafe_harness_test_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    cfg_ = new ExperimentConfig(tiny_config());
    const Layout layout{root_};
    cmd_collect(*cfg_, layout);
    cmd_train(*cfg_, layout);
    cmd_eval_onestep(*cfg_, layout);
    cmd_eval_window(*cfg_, layout);
    cmd_eval_rollout(*cfg_, layout);
  }
  static void TearDownTestSuite() {
    fs::remove_all(root_);
    delete cfg_;
  }
  static Layout layout() { return {root_}; }

  static inline fs::path root_;
  static inline ExperimentConfig* cfg_ = nullptr;
};

}  // namespace

TEST(Config, DefaultsAreValid) {
  EXPECT_NO_THROW(ExperimentConfig{}.validate());
  const auto c = ExperimentConfig::from_kv(KeyValueFile{});
  EXPECT_EQ(c.scenes.size(), 8u);
  EXPECT_EQ(c.role(0.5), "interp");
  EXPECT_EQ(c.role(0.0), "extrap");
  EXPECT_EQ(c.role(0.812), "train");
}

TEST(Config, RejectsInconsistentScenes) {
  auto load = [](const std::string& text) {
    std::istringstream in(text);
    return ExperimentConfig::from_kv(KeyValueFile::parse(in));
  };
  EXPECT_THROW(load("train_scenes = 0.25 0.5"), InvalidInput);        // holdout in training
  EXPECT_THROW(load("scenes = 0 0.5 0.25 1"), InvalidInput);          // not ascending
  EXPECT_THROW(load("interp_scene = 0.33"), InvalidInput);            // not a scene
  EXPECT_THROW(load("seeds = 0"), InvalidInput);
  EXPECT_THROW(load("mission.seed_index = 10"), InvalidInput);
  EXPECT_THROW(load("mppi.sigma = 1"), IoError);
  EXPECT_THROW(load("adapt.refresh_period = -1"), InvalidInput);
  EXPECT_EQ(load("adapt.refresh_period = 0").adapt_period, kNeverRefresh);
}

TEST_F(Pipeline, CollectWritesOneTrajectoryPerScene) {
  const auto seed = cfg_->seed_list().front();
  std::set<std::string> csv;
  for (const auto& e : fs::directory_iterator(layout().data(seed)))
    if (e.path().extension() == ".csv") csv.insert(e.path().filename().string());
  EXPECT_EQ(csv.size(), 8u);
  const auto meta = KeyValueFile::load(layout().scene_meta(seed, 2));
  EXPECT_EQ(meta.get("role"), "interp");
  EXPECT_EQ(meta.get("samples"), "300");
}

TEST_F(Pipeline, CollectIsDeterministic) {
  const fs::path other = root_.string() + "_again";
  fs::remove_all(other);
  cmd_collect(*cfg_, Layout{other});
  const auto seed = cfg_->seed_list().front();
  for (int i = 0; i < 8; ++i)
    EXPECT_EQ(slurp(layout().scene_csv(seed, i)), slurp(Layout{other}.scene_csv(seed, i)));
  fs::remove_all(other);
}

TEST_F(Pipeline, LossCurvesHaveOneRowPerEpoch) {
  const auto seed = cfg_->seed_list().front();
  for (const char* m : {"losses_fenode.csv", "losses_node.csv"}) {
    const auto csv = read_numeric_csv(layout().models(seed) / m);
    ASSERT_EQ(csv.rows.size(), 3u);
    for (const auto& r : csv.rows) {
      EXPECT_TRUE(std::isfinite(r[1]));
      EXPECT_TRUE(std::isfinite(r[2]));  // interpolation validation
      EXPECT_TRUE(std::isfinite(r[3]));  // extrapolation validation
    }
  }
  EXPECT_NO_THROW(load_models(layout(), seed));
}

TEST_F(Pipeline, OneStepHasEveryScene) {
  const auto j = read_json_file(layout().eval() / "onestep.json");
  EXPECT_EQ(j.size(), 8u);
  EXPECT_EQ(count_lines(layout().eval() / "onestep.csv"), 1u + 16u);
  for (const auto& r : j) {
    EXPECT_GT(r.at("fenode_mse").get<double>(), 0.0);
    EXPECT_GT(r.at("node_mse").get<double>(), 0.0);
  }
}

TEST_F(Pipeline, WindowRowsAreFinite) {
  const auto j = read_json_file(layout().eval() / "window.json");
  ASSERT_EQ(j.size(), 3u);
  EXPECT_EQ(j[0].at("n").get<int>(), 1);
  for (const auto& r : j) EXPECT_TRUE(std::isfinite(r.at("fenode_mse").get<double>()));
  // The baseline does not adapt, so its error is the same for every window.
  EXPECT_EQ(j[0].at("node_mse"), j[2].at("node_mse"));
}

TEST_F(Pipeline, RolloutErrorStartsAtZeroAndAccumulates) {
  const auto j = read_json_file(layout().eval() / "rollout.json");
  ASSERT_EQ(j.size(), 2u);
  for (const auto& c : j) {
    EXPECT_EQ(c.at("fenode_median")[0].get<double>(), 0.0);
    EXPECT_EQ(c.at("node_median")[0].get<double>(), 0.0);
    EXPECT_EQ(c.at("fenode_median").size(), 11u);
    EXPECT_TRUE(c.at("fenode_nondecreasing").get<bool>());
    EXPECT_TRUE(c.at("node_nondecreasing").get<bool>());
  }
}

TEST_F(Pipeline, MissionPathReplaysToTheLoggedCollisions) {
  const fs::path mroot = root_.string() + "_mission";
  fs::remove_all(mroot);
  fs::copy(root_, mroot, fs::copy_options::recursive);
  const Layout ml{mroot};
  const auto results = cmd_mission(*cfg_, ml);
  ASSERT_EQ(results.size(), 2u);
  const World world = World::from_kv(KeyValueFile::load(ml.mission() / "world.txt"));
  for (const auto& r : results) {
    const auto path = load_trajectory_csv(ml.mission() / (r.model + "_trial0_path.csv"));
    EXPECT_EQ(count_collisions(path, world), r.collisions);
    EXPECT_EQ(path.size(), r.path.size());
    EXPECT_GT(r.steps, 0u);
  }
  const auto summary = read_json_file(ml.mission() / "summary.json");
  EXPECT_EQ(summary.size(), 2u);

  const auto rep = cmd_report(*cfg_, ml);
  EXPECT_TRUE(rep.complete);
  EXPECT_TRUE(fs::exists(mroot / "figures" / "mission_paths.csv"));
  fs::remove_all(mroot);
}

TEST_F(Pipeline, ReportListsTheMissingMission) {
  const auto r = cmd_report(*cfg_, layout());
  EXPECT_FALSE(r.complete);
  const auto& j = r.report;
  EXPECT_EQ(j.at("format"), "tafe.report");
  EXPECT_EQ(j.at("format_version"), kReportFormatVersion);
  EXPECT_EQ(j.at("status"), "incomplete");
  bool listed = false;
  for (const auto& m : j.at("missing")) listed = listed || m.get<std::string>() == "mission/summary.json";
  EXPECT_TRUE(listed);
  for (int i = 1; i <= 10; ++i) {
    const std::string name = "A" + std::to_string(i);
    ASSERT_TRUE(j.at("criteria").contains(name)) << name;
    const auto status = j.at("criteria").at(name).at("status").get<std::string>();
    EXPECT_TRUE(status == "pass" || status == "fail" || status == "missing" || status == "not_evaluated");
  }
  EXPECT_EQ(j.at("criteria").at("A8").at("status"), "missing");
  EXPECT_EQ(j.at("criteria").at("A1").at("status"), "pass");
  EXPECT_TRUE(fs::exists(layout().report()));
  EXPECT_TRUE(fs::exists(root_ / "figures" / "window_size.csv"));
}

TEST_F(Pipeline, ReportIsReproducible) {
  const auto a = cmd_report(*cfg_, layout()).report;
  const std::string first = slurp(layout().report());
  const auto b = cmd_report(*cfg_, layout()).report;
  EXPECT_EQ(a, b);
  EXPECT_EQ(first, slurp(layout().report()));
}

TEST(Stats, QuantilesInterpolateLinearly) {
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_DOUBLE_EQ(quantile({0.0, 10.0}, 0.1), 1.0);
  EXPECT_TRUE(std::isnan(median({})));
}

TEST(Mission, CollisionsCountEntriesNotSteps) {
  World w;
  w.robot_radius = 0.5;
  w.obstacles = {{{0, 0}, 0.5}};
  Trajectory t;
  for (double x : {-3.0, -0.5, 0.0, 0.5, 3.0, 0.2, 4.0}) {
    t.times.push_back(static_cast<double>(t.times.size()));
    t.states.push_back({x, 0, 0, 0, 0, 0});
  }
  EXPECT_EQ(count_collisions(t, w), 2);
}
