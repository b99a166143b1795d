// meshfree: command-line front end for the solver pipeline.
//
//   meshfree solve         --config run.json [--output-dir DIR] [--seed N] [-v]
//   meshfree depth-study   --config run.json [--compare-pretraining]
//   meshfree gradcheck     [--config run.json] [--trials N]
//   meshfree evaluate      --run DIR [--points N]
//   meshfree export-points --config run.json
//
// Exit codes: 0 success / converged, 2 not converged (or gradcheck
// mismatches), 1 error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "meshfree/pipeline.hpp"

namespace fs = std::filesystem;
using namespace meshfree;

namespace {

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kNotConverged = 2;

struct Common {
  std::string config;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", c.config, "JSON run configuration");
  if (config_required) opt->required();
  opt->check(CLI::ExistingFile);
  cmd->add_option("-o,--output-dir", c.output_dir, "Override output_dir");
  cmd->add_option("-s,--seed", c.seed, "Reseed points, networks and optimizers");
  cmd->add_flag("-v,--verbose", c.verbose, "Log stage progress to stderr");
}

RunConfig resolve(const Common& c) {
  RunConfig config = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.seed) config.reseed(*c.seed);
  if (!c.output_dir.empty()) config.output_dir = c.output_dir;
  return config;
}

Logger logger(bool verbose) {
  if (!verbose) return {};
  return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

int cmd_solve(const Common& c) {
  const RunConfig config = resolve(c);
  const RunArtifacts run = run_solve(config, logger(c.verbose));
  const OptimizerResult& r = run.outcome.result;
  std::cout << "status " << to_string(r.status) << "\n"
            << "cost " << format_double(r.cost) << "\n"
            << "bfgs_iterations " << r.history.bfgs_iterations() << "\n";
  if (run.errors.max_abs_error) std::cout << "max_abs_error " << format_double(*run.errors.max_abs_error) << "\n";
  std::cout << "output " << config.output_dir.string() << "\n";
  return run.converged ? kOk : kNotConverged;
}

int cmd_depth_study(const Common& c, bool compare_pretraining) {
  const RunConfig config = resolve(c);
  const Logger log = logger(c.verbose);
  if (compare_pretraining) {
    const PretrainComparison cmp = run_pretrain_comparison(config, log);
    auto csv = open_output(config.output_dir / "pretrain_comparison.csv");
    cmp.write_csv(csv);
    write_json_file(config.output_dir / "pretrain_comparison.json", cmp.to_json());
    std::cout << cmp.to_json().dump(2) << "\n";
    return kOk;
  }
  const DepthStudyResult result = run_depth_study(config, log);
  auto csv = open_output(config.output_dir / "depth_study.csv");
  result.write_csv(csv);
  write_json_file(config.output_dir / "depth_study.json", result.to_json());
  for (const auto& s : result.summary) {
    std::cout << "depth " << s.depth << " (" << s.parameters << " parameters): median iterations "
              << (s.median_iterations ? std::to_string(*s.median_iterations)
                                      : "censored at " + std::to_string(result.max_iterations))
              << ", " << s.reached << "/" << s.runs << " reached tolerance\n";
  }
  return kOk;
}

int cmd_gradcheck(const Common& c, std::optional<std::size_t> trials) {
  RunConfig config = resolve(c);
  GradcheckOptions opts = config.gradcheck;
  if (trials) opts.network_trials = *trials;
  const GradcheckReport report = run_gradcheck(opts);
  auto csv = open_output(config.output_dir / "gradcheck.csv");
  report.write_csv(csv);
  std::size_t failed_rows = 0;
  for (const auto& row : report.rows) failed_rows += row.pass() ? 0 : 1;
  for (int f = 0; f < reference::FamilyCount; ++f) {
    std::cout << reference::family_name(f) << ": " << report.failures(reference::family_name(f))
              << " failing trials\n";
  }
  std::cout << "advection dC/dp: " << report.failures("advection dC/dp") << " failing trials\n"
            << "diffusion dC/dp: " << report.failures("diffusion dC/dp") << " failing trials\n"
            << report.rows.size() - failed_rows << "/" << report.rows.size() << " rows pass\n";
  return report.all_pass() ? kOk : kNotConverged;
}

int cmd_evaluate(const std::string& run_dir, std::optional<std::size_t> points, const std::string& out) {
  const fs::path dir(run_dir);
  RunConfig config = load_config(dir / "config.json");
  if (points) config.evaluation.interior = *points;
  const AnsatzBundle bundle = load_bundle(dir);
  const PdeProblem problem = build_problem(config);
  const auto pts = evaluation_points(problem.domain, config.evaluation);
  const ErrorTable table = evaluate_solution(bundle, problem, pts);
  const fs::path target = out.empty() ? dir / "evaluation.csv" : fs::path(out);
  auto csv = open_output(target);
  table.write_csv(csv);
  std::cout << "points " << table.points.size() << "\n";
  if (table.max_abs_error) {
    std::cout << "max_abs_error " << format_double(*table.max_abs_error) << "\n"
              << "mean_abs_error " << format_double(*table.mean_abs_error) << "\n";
  }
  std::cout << "output " << target.string() << "\n";
  return kOk;
}

int cmd_export_points(const Common& c) {
  const RunConfig config = resolve(c);
  config.validate();
  const PdeProblem problem = build_problem(config);
  const CollocationSet set = sample_points(config, problem);
  std::vector<Point> boundary;
  for (const auto& b : set.boundary) boundary.push_back(b.position);
  const DistanceField field = distance_field(set.interior, boundary, config.points.backend);
  std::vector<bool> coarse(set.interior.size(), false);
  for (auto i : set.distance_subset) coarse[i] = true;

  const Eigen::Index dim = problem.dimension();
  auto header = [&](std::ostream& out, const char* prefix) {
    for (Eigen::Index i = 0; i < dim; ++i) out << (i ? "," : "") << prefix << i + 1;
  };
  {
    auto out = open_output(config.output_dir / "interior.csv");
    header(out, "x");
    out << ",distance,distance_subset\n";
    for (std::size_t k = 0; k < set.interior.size(); ++k) {
      for (Eigen::Index i = 0; i < dim; ++i) out << format_double(set.interior[k][i]) << ',';
      out << format_double(field.values[k]) << ',' << (coarse[k] ? 1 : 0) << '\n';
    }
  }
  {
    auto out = open_output(config.output_dir / "boundary.csv");
    header(out, "x");
    out << ',';
    header(out, "n");
    out << ",inflow\n";
    for (const auto& b : set.boundary) {
      for (Eigen::Index i = 0; i < dim; ++i) out << format_double(b.position[i]) << ',';
      for (Eigen::Index i = 0; i < dim; ++i) out << format_double(b.outward_normal[i]) << ',';
      out << (b.is_inflow ? 1 : 0) << '\n';
    }
  }
  std::cout << "interior " << set.interior.size() << "\nboundary " << set.boundary.size() << "\noutput "
            << config.output_dir.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mesh-free neural-network PDE solver"};
  app.require_subcommand(1);

  Common solve_opts, depth_opts, grad_opts, export_opts;
  auto* solve = app.add_subcommand("solve", "Train G, D and the solution network; write artifacts");
  add_common(solve, solve_opts, true);

  bool compare_pretraining = false;
  auto* depth = app.add_subcommand("depth-study", "Iterations to tolerance across the depth ladder");
  add_common(depth, depth_opts, true);
  depth->add_flag("--compare-pretraining", compare_pretraining,
                  "Compare first line-search failures with and without pretraining instead");

  std::optional<std::size_t> trials;
  auto* grad = app.add_subcommand("gradcheck", "Check analytic derivatives against finite differences");
  add_common(grad, grad_opts, false);
  grad->add_option("--trials", trials, "Number of random networks");

  std::string run_dir, eval_out;
  std::optional<std::size_t> eval_points;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a saved solution on a fresh grid");
  evaluate->add_option("-r,--run", run_dir, "Directory written by solve")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("-n,--points", eval_points, "Interior evaluation points");
  evaluate->add_option("-o,--output", eval_out, "CSV path (default RUN/evaluation.csv)");

  auto* export_points = app.add_subcommand("export-points", "Write the sampled collocation sets as CSV");
  add_common(export_points, export_opts, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kError;
  }

  try {
    if (*solve) return cmd_solve(solve_opts);
    if (*depth) return cmd_depth_study(depth_opts, compare_pretraining);
    if (*grad) return cmd_gradcheck(grad_opts, trials);
    if (*evaluate) return cmd_evaluate(run_dir, eval_points, eval_out);
    if (*export_points) return cmd_export_points(export_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kError;
  }
  return kError;
}
