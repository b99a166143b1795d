#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "meshfree/pipeline.hpp"

using namespace meshfree;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "meshfree_test_pipeline" / name;
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig one_d(ProblemId id) {
  RunConfig c;
  c.problem.id = id;
  c.points.interior = 100;
  c.points.boundary = 2;
  c.points.interior_sampling = SamplingStrategy::Grid;
  c.extension.closed_form = "auto";
  c.distance.closed_form = "auto";
  c.evaluation.interior = 200;
  c.evaluation.boundary = 2;
  c.evaluation.sampling = SamplingStrategy::Grid;
  return c;
}

// Small 2D run with trained surrogates and a tiny solve budget.
RunConfig tiny_star() {
  RunConfig c;
  c.problem.id = ProblemId::Diff2d;
  c.points.interior = 60;
  c.points.boundary = 40;
  c.extension.hidden = {4};
  c.distance.hidden = {4};
  c.extension.optimizer.max_iterations = 30;
  c.distance.optimizer.max_iterations = 30;
  c.solution_hidden = {5};
  c.optimizer.max_iterations = 20;
  c.pretrain_optimizer.max_iterations = 20;
  c.evaluation.interior = 50;
  c.evaluation.boundary = 10;
  return c;
}

std::size_t index_of(const std::vector<std::string>& v, const std::string& s) {
  return static_cast<std::size_t>(std::find(v.begin(), v.end(), s) - v.begin());
}

struct SignFlip {
  SignFlip() { fault::set_second_order_sign_flip(true); }
  ~SignFlip() { fault::set_second_order_sign_flip(false); }
};

}  // namespace

TEST_CASE("config defaults and parsing") {
  const RunConfig d = config_from_json(Json::object());
  CHECK(d.problem.id == ProblemId::Diff2d);
  CHECK(d.solution_hidden == std::vector<int>{10, 10});
  CHECK(d.optimizer.max_iterations == 20000);
  CHECK(d.optimizer.cost_tolerance == 1e-5);
  CHECK(d.optimizer.sgd.steps == 1000);
  CHECK(d.optimizer.sgd.learning_rate == 1e-9);
  CHECK(d.depth_study.ladder.size() == 5);
  CHECK_FALSE(d.pretrain);

  const Json doc = Json::parse(R"({
    "problem": "advec1d",
    "points": {"interior": 100, "boundary": 2, "interior_sampling": "grid"},
    "solution": {"hidden": [10, 10], "seed": 7},
    "extension": {"closed_form": "auto"},
    "optimizer": {"max_iterations": 50, "sgd": {"steps": 10}},
    "output_dir": "out"
  })");
  const RunConfig c = config_from_json(doc, "/base");
  CHECK(c.problem.id == ProblemId::Advec1d);
  CHECK(c.points.interior == 100);
  CHECK(c.points.interior_sampling == SamplingStrategy::Grid);
  CHECK(c.solution_seed == 7);
  CHECK(c.extension.closed_form == "auto");
  CHECK(c.optimizer.max_iterations == 50);
  CHECK(c.optimizer.sgd.steps == 10);
  CHECK(c.optimizer.sgd.batch_size == 32);
  CHECK(c.output_dir == fs::path("/base/out"));
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_WITH_AS(config_from_json(Json::parse(R"({"pointz": {}})")),
                       doctest::Contains("pointz"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_json(Json::parse(R"({"optimizer": {"sgd": {"lr": 1}}})")),
                       doctest::Contains("optimizer.sgd"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(Json::parse(R"({"points": {"interior": "many"}})")), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(Json::parse(R"({"problem": "heat3d"})")), std::exception);
  CHECK_THROWS_AS(config_from_json(Json::parse(R"([1, 2])")), std::invalid_argument);

  RunConfig c;
  c.solution_hidden = {};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.points.interior = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.extension.closed_form = "spline";
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.optimizer.c1 = 0.95;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("config JSON round trip") {
  RunConfig c = tiny_star();
  c.domain.kind = DomainConfig::Kind::Star;
  c.domain.star_points = 6;
  c.pretrain = true;
  c.residual.reduction = Reduction::Unordered;
  c.reseed(5);
  const Json once = config_to_json(c);
  const Json twice = config_to_json(config_from_json(once));
  CHECK(once == twice);
  CHECK(once["points"]["seed"] == 5);
}

TEST_CASE("missing polygon file fails cleanly without artifacts") {
  RunConfig c = tiny_star();
  c.domain.kind = DomainConfig::Kind::PolygonFile;
  c.domain.polygon_file = "/nonexistent/outline.txt";
  c.output_dir = scratch("missing_polygon");
  try {
    run_solve(c);
    FAIL("expected an error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "config");
    CHECK(std::string(e.what()).find("outline.txt") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(c.output_dir));
}

TEST_CASE("stage failures carry the stage name") {
  RunConfig c;
  c.problem.id = ProblemId::DiffNd;
  c.problem.dimension = 2;
  c.points.interior = 10;  // not a square number
  c.points.interior_sampling = SamplingStrategy::Grid;
  try {
    prepare_problem(c);
    FAIL("expected an error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "sample");
    CHECK(std::string(e.what()).rfind("[sample] ", 0) == 0);
  }
}

TEST_CASE("advection stages apply the inflow rule before distances") {
  const PreparedProblem p = prepare_problem(one_d(ProblemId::Advec1d));
  const std::vector<std::string> expected{"sample", "inflow", "distance", "extension", "distance-fit"};
  CHECK(p.stages == expected);
  CHECK(index_of(p.stages, "inflow") < index_of(p.stages, "distance"));
  REQUIRE(p.points.boundary.size() == 1);
  CHECK(p.points.boundary[0].position[0] == 0.0);
  CHECK(p.points.interior.size() == 101);
  CHECK(p.distance_field.values.size() == p.points.interior.size());

  const PreparedProblem q = prepare_problem(one_d(ProblemId::Diff1d));
  CHECK(index_of(q.stages, "inflow") == q.stages.size());
  CHECK(q.points.boundary.size() == 2);
}

TEST_CASE("1D advection end to end") {
  const RunArtifacts run = run_pipeline(one_d(ProblemId::Advec1d));
  CHECK(run.converged);
  CHECK(run.outcome.result.cost < 1e-5);
  REQUIRE(run.errors.max_abs_error);
  CHECK(*run.errors.max_abs_error < 5e-2);
  CHECK(run.prepared.stages.back() == "evaluate");
  CHECK(run.bundle.extension.is_closed_form());
  CHECK(run.bundle.solution.param_count() == 141);
}

TEST_CASE("closed-form ansatz is exact on the boundary") {
  const RunArtifacts run = run_pipeline(one_d(ProblemId::Diff1d));
  const ErrorTable& t = run.errors;
  REQUIRE(t.points.size() == 202);
  // The last two evaluation points are the interval endpoints.
  for (std::size_t k = 200; k < 202; ++k) {
    CHECK(t.error[k] == 0.0);
  }
  CHECK(t.u_hat[200] == 1.0);
  CHECK(t.u_hat[201] == 2.0);
}

TEST_CASE("solve artifacts are deterministic and self-consistent") {
  const fs::path dir_a = scratch("det_a");
  RunConfig c = one_d(ProblemId::Diff1d);
  c.output_dir = dir_a;
  const RunArtifacts run = run_solve(c);
  c.output_dir = scratch("det_b");
  run_solve(c);

  for (const char* name : {"extension.json", "distance.json", "solution.json", "history.csv", "solution.csv",
                           "interior.csv", "boundary.csv"}) {
    CAPTURE(name);
    CHECK(slurp(dir_a / name) == slurp(c.output_dir / name));
  }
  Json a = read_json_file(dir_a / "summary.json");
  Json b = read_json_file(c.output_dir / "summary.json");
  a.erase("wall_clock_seconds");
  b.erase("wall_clock_seconds");
  CHECK(a == b);

  // The summary can be recomputed from the saved networks alone.
  const AnsatzBundle bundle = load_bundle(c.output_dir);
  const RunConfig saved = load_config(c.output_dir / "config.json");
  const PdeProblem problem = build_problem(saved);
  const auto pts = evaluation_points(problem.domain, saved.evaluation);
  const ErrorTable t = evaluate_solution(bundle, problem, pts);
  CHECK(t.max_abs_error.value() == b["max_abs_error"].get<double>());
  const ResidualSystem system(bundle.extension, bundle.distance, problem, run.prepared.points.interior);
  CHECK(system.evaluate(bundle.solution).cost == b["final_cost"].get<double>());
  CHECK(system.cost(bundle.solution) == doctest::Approx(b["final_cost"].get<double>()).epsilon(1e-12));
  CHECK(b["converged"] == true);
  CHECK(b["bfgs_iterations"].get<std::size_t>() == run.outcome.result.history.bfgs_iterations());
}

TEST_CASE("pretraining changes only the initial solution parameters") {
  RunConfig c = tiny_star();
  const RunArtifacts off = run_pipeline(c);
  c.pretrain = true;
  const RunArtifacts on = run_pipeline(c);

  CHECK(off.prepared.points.interior == on.prepared.points.interior);
  REQUIRE(off.prepared.points.boundary.size() == on.prepared.points.boundary.size());
  for (std::size_t i = 0; i < off.prepared.points.boundary.size(); ++i) {
    CHECK(off.prepared.points.boundary[i].position == on.prepared.points.boundary[i].position);
  }
  CHECK(off.bundle.extension.network().flatten() == on.bundle.extension.network().flatten());
  CHECK(off.bundle.distance.network().flatten() == on.bundle.distance.network().flatten());
  CHECK_FALSE(off.outcome.pretrain);
  REQUIRE(on.outcome.pretrain);
  CHECK(index_of(on.prepared.stages, "pretrain") < index_of(on.prepared.stages, "solve"));
  CHECK(off.outcome.result.history.initial_cost != on.outcome.result.history.initial_cost);
}

TEST_CASE("evaluation grid sizes") {
  EvaluationConfig e;
  e.interior = 30;
  e.boundary = 12;
  CHECK(evaluation_points(star_polygon(), e).size() == 42);
  e.boundary = 0;
  CHECK(evaluation_points(unit_square(), e).size() == 30);
}

TEST_CASE("censored median") {
  using O = std::optional<std::size_t>;
  CHECK(censored_median({O(3), std::nullopt, O(1)}) == O(3));
  CHECK(censored_median({std::nullopt, std::nullopt, O(5)}) == std::nullopt);
  CHECK(censored_median({O(4), O(1), O(3), O(2)}) == O(2));
  CHECK(censored_median({O(9)}) == O(9));
  CHECK_THROWS_AS(censored_median({}), std::invalid_argument);

  PretrainComparison p;
  p.median_with = 10;
  p.median_without = 5;
  CHECK(p.pretraining_delays_failure());
  p.median_with = 4;
  CHECK_FALSE(p.pretraining_delays_failure());
  p.median_with = std::nullopt;
  CHECK(p.pretraining_delays_failure());
  p.median_with = 4;
  p.median_without = std::nullopt;
  CHECK_FALSE(p.pretraining_delays_failure());
}

TEST_CASE("depth study bookkeeping") {
  RunConfig c = one_d(ProblemId::Diff1d);
  c.depth_study.ladder = {{4}, {3, 3}};
  c.depth_study.seeds = {0, 1};
  c.optimizer.max_iterations = 300;
  const DepthStudyResult r = run_depth_study(c);
  REQUIRE(r.rows.size() == 4);
  REQUIRE(r.summary.size() == 2);
  CHECK(r.max_iterations == 300);
  CHECK(r.summary[0].parameters == 13);
  CHECK(r.summary[1].parameters == 22);
  for (const auto& row : r.rows) {
    CHECK(row.error.empty());
    CHECK(row.iterations <= 300);
    if (row.reached) CHECK(row.final_cost < c.optimizer.cost_tolerance);
  }
  for (const auto& s : r.summary) CHECK(s.runs == 2);

  std::ostringstream csv;
  r.write_csv(csv);
  CHECK(csv.str().rfind("depth,hidden,parameters,seed,iterations,reached,final_cost,first_failure,seconds,error\n", 0) == 0);
  CHECK(csv.str().find("\n2,3x3,22,1,") != std::string::npos);
  CHECK(r.to_json()["depths"].size() == 2);
}

TEST_CASE("gradcheck passes on the library and catches an injected sign error") {
  GradcheckOptions o;
  o.network_trials = 15;
  o.residual_trials = 4;
  o.param_stride = 3;
  const GradcheckReport ok = run_gradcheck(o);
  CHECK(ok.all_pass());
  CHECK(ok.rows.size() == 15 * 5 + 2 * 4);

  SignFlip flip;
  const GradcheckReport bad = run_gradcheck(o);
  CHECK_FALSE(bad.all_pass());
  CHECK(bad.failures("d3y/dx2dp") > 0);
  CHECK(bad.failures("diffusion dC/dp") > 0);
  for (const char* clean : {"dy/dx", "d2y/dx2", "dy/dp", "d2y/dxdp", "advection dC/dp"}) {
    CAPTURE(clean);
    CHECK(bad.failures(clean) == 0);
  }
}

TEST_CASE("gradcheck on all-linear networks") {
  GradcheckOptions o;
  o.network_trials = 10;
  o.residual_trials = 0;
  o.hidden_activation = Activation::Linear;
  const GradcheckReport r = run_gradcheck(o);
  CHECK(r.all_pass());
  for (const auto& row : r.rows) {
    if (row.quantity == "d2y/dx2" || row.quantity == "d3y/dx2dp") {
      CAPTURE(row.trial);
      CHECK(row.max_abs_analytic == 0.0);
    }
  }
}
