#pragma once

// End-to-end runs driven by a JSON configuration:
//   sample -> inflow rule -> distance field -> G -> D -> pretrain -> solve
//   -> evaluate -> artifacts
// plus the depth study, the pretraining comparison and point export.

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "meshfree/distance.hpp"
#include "meshfree/gradcheck.hpp"
#include "meshfree/io.hpp"
#include "meshfree/pde.hpp"

namespace meshfree {

/// Failure inside one pipeline stage; what() starts with "[stage] ".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct DomainConfig {
  enum class Kind { ProblemDefault, Interval, Star, Square, Box, PolygonFile };
  Kind kind = Kind::ProblemDefault;
  double a = 0.0, b = 1.0;
  int star_points = 5;
  double outer = 1.0, inner = 0.6;
  Vector lo, hi;
  std::filesystem::path polygon_file;
};

struct ProblemConfig {
  ProblemId id = ProblemId::Diff2d;
  /// diff_nd only.
  int dimension = 3;
  /// Custom problems: constant forcing and boundary value, no exact solution.
  Operator op = Operator::diffusion();
  double forcing = 0.0;
  double boundary_value = 0.0;
};

struct SurrogateConfig {
  /// Empty: train a network. Otherwise "auto" (1D only: the kernel function
  /// through the boundary data, or the line / parabola vanishing on it),
  /// "constant", "affine" or "bubble".
  std::string closed_form;
  double value = 0.0;
  Vector coefficients;
  double offset = 0.0;
  std::vector<int> hidden{20};
  std::uint64_t seed = 1;
  OptimizerOptions optimizer;

  SurrogateConfig();
};

struct PointsConfig {
  std::size_t interior = 1000;
  std::size_t boundary = 500;
  /// Size of the coarse distance-training subset; 0 selects 10 %.
  std::size_t distance_subset = 0;
  SamplingStrategy interior_sampling = SamplingStrategy::Sobol;
  BoundarySampling boundary_sampling = BoundarySampling::UniformRandom;
  std::uint64_t seed = 1;
  DistanceBackend backend = DistanceBackend::KdTree;
};

struct EvaluationConfig {
  std::size_t interior = 5000;
  std::size_t boundary = 500;
  SamplingStrategy sampling = SamplingStrategy::UniformRandom;
  std::uint64_t seed = 99;
};

struct DepthStudyConfig {
  std::vector<std::vector<int>> ladder{{120}, {20, 20}, {14, 14, 14}, {12, 12, 12, 12}, {10, 10, 10, 10, 10}};
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct RunConfig {
  ProblemConfig problem;
  DomainConfig domain;
  PointsConfig points;
  std::vector<int> solution_hidden{10, 10};
  std::uint64_t solution_seed = 0;
  SurrogateConfig extension;
  SurrogateConfig distance;
  OptimizerOptions optimizer;
  bool pretrain = false;
  OptimizerOptions pretrain_optimizer;
  ResidualOptions residual;
  EvaluationConfig evaluation;
  DepthStudyConfig depth_study;
  GradcheckOptions gradcheck;
  std::filesystem::path output_dir = "run";

  RunConfig();
  /// Positive counts, valid architectures and options, existing files.
  /// Throws std::invalid_argument.
  void validate() const;
  /// Sets every seed (points, networks, optimizers) from one value.
  void reseed(std::uint64_t seed);
};

/// Unknown keys are rejected. Relative paths resolve against base_dir.
RunConfig config_from_json(const Json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);
Json config_to_json(const RunConfig& config);

using Logger = std::function<void(const std::string&)>;

/// Points, problem and frozen surrogates: everything the solution network
/// trains against.
struct PreparedProblem {
  PdeProblem problem;
  CollocationSet points;
  /// Raw distances for every interior point.
  DistanceField distance_field;
  Surrogate extension;
  Surrogate distance;
  /// One entry per completed stage, in order.
  std::vector<std::string> stages;
  std::vector<std::pair<std::string, double>> stage_seconds;
};

Domain build_domain(const RunConfig& config);
PdeProblem build_problem(const RunConfig& config);

/// Sampling and the inflow rule only.
CollocationSet sample_points(const RunConfig& config, const PdeProblem& problem);

PreparedProblem prepare_problem(const RunConfig& config, const Logger& log = {});

struct SolveOutcome {
  Network solution;
  OptimizerResult result;
  std::optional<OptimizerResult> pretrain;
  double seconds = 0.0;
};

SolveOutcome solve_prepared(const PreparedProblem& prepared, const RunConfig& config,
                            const std::vector<int>& hidden, std::uint64_t seed, bool pretrain,
                            const Logger& log = {});

struct ErrorTable {
  std::vector<Point> points;
  std::vector<double> u_hat;
  /// Empty without an exact solution.
  std::vector<double> u_exact;
  std::vector<double> error;
  std::optional<double> max_abs_error;
  std::optional<double> mean_abs_error;

  /// x1..xN,u_hat[,u_exact,error]
  void write_csv(std::ostream& out) const;
};

/// Evaluation grid: interior samples plus boundary samples.
std::vector<Point> evaluation_points(const Domain& domain, const EvaluationConfig& config);
ErrorTable evaluate_solution(const AnsatzBundle& bundle, const PdeProblem& problem,
                             std::span<const Point> points);

struct RunArtifacts {
  PreparedProblem prepared;
  SolveOutcome outcome;
  AnsatzBundle bundle;
  ErrorTable errors;
  double seconds = 0.0;
  bool converged = false;

  Json summary() const;
};

/// The whole pipeline in memory; no files are touched.
RunArtifacts run_pipeline(const RunConfig& config, const Logger& log = {});

/// Files written into dir: extension.json, distance.json, solution.json,
/// history.csv, [pretrain_history.csv], solution.csv, interior.csv,
/// boundary.csv, summary.json.
void write_artifacts(const RunArtifacts& run, const std::filesystem::path& dir);

/// validate -> run_pipeline -> write_artifacts(config.output_dir), plus the
/// resolved config.json. Nothing is written unless every stage succeeds.
RunArtifacts run_solve(const RunConfig& config, const Logger& log = {});

/// Networks from a directory written by write_artifacts.
AnsatzBundle load_bundle(const std::filesystem::path& dir);

struct DepthStudyRow {
  std::size_t depth = 0;
  std::vector<int> hidden;
  std::size_t parameters = 0;
  std::uint64_t seed = 0;
  /// BFGS iterations until the cost tolerance, or the budget if not reached.
  std::size_t iterations = 0;
  bool reached = false;
  double final_cost = 0.0;
  std::optional<std::size_t> first_failure;
  double seconds = 0.0;
  std::string error;
};

struct DepthSummary {
  std::size_t depth = 0;
  std::vector<int> hidden;
  std::size_t parameters = 0;
  /// Median over seeds; runs that missed the tolerance rank above all that
  /// reached it. Empty when the median run itself missed.
  std::optional<std::size_t> median_iterations;
  std::size_t reached = 0;
  std::size_t runs = 0;
};

struct DepthStudyResult {
  std::vector<DepthStudyRow> rows;
  std::vector<DepthSummary> summary;
  std::size_t max_iterations = 0;

  /// depth,hidden,parameters,seed,iterations,reached,final_cost,first_failure,seconds,error
  void write_csv(std::ostream& out) const;
  Json to_json() const;
};

/// Same points and surrogates for every run; only the solution network's
/// architecture and initialization seed vary.
DepthStudyResult run_depth_study(const RunConfig& config, const Logger& log = {});

struct PretrainRow {
  std::uint64_t seed = 0;
  bool pretrain = false;
  /// Steps before the first line-search failure; empty if the run never
  /// failed (converged or used up its budget first).
  std::optional<std::size_t> first_failure;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::size_t iterations = 0;
  OptimizerStatus status = OptimizerStatus::MaxIterations;
};

struct PretrainComparison {
  std::vector<PretrainRow> rows;
  /// Medians over seeds, a run without failure ranking above every run
  /// with one; empty means the median run never failed.
  std::optional<std::size_t> median_with;
  std::optional<std::size_t> median_without;

  /// True when the median with pretraining is at least the one without.
  bool pretraining_delays_failure() const;
  /// seed,pretrain,first_failure,initial_cost,final_cost,iterations,status
  void write_csv(std::ostream& out) const;
  Json to_json() const;
};

/// Runs the configured solution architecture with and without pretraining
/// for every depth-study seed.
PretrainComparison run_pretrain_comparison(const RunConfig& config, const Logger& log = {});

/// Median of a nonempty list (lower middle element for even sizes); empty
/// entries count as larger than any value.
std::optional<std::size_t> censored_median(std::vector<std::optional<std::size_t>> values);

}  // namespace meshfree
