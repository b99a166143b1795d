#include "meshfree/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace meshfree {

namespace fs = std::filesystem;

StageError::StageError(std::string stage, const std::string& message)
    : std::runtime_error("[" + stage + "] " + message), stage_(std::move(stage)) {}

SurrogateConfig::SurrogateConfig() {
  optimizer.cost_tolerance = 1e-7;
  optimizer.max_iterations = 3000;
}

RunConfig::RunConfig() {
  distance.seed = 2;
  pretrain_optimizer.cost_tolerance = 1e-6;
  pretrain_optimizer.max_iterations = 2000;
}

void RunConfig::reseed(std::uint64_t seed) {
  points.seed = seed;
  solution_seed = seed;
  extension.seed = seed + 1;
  distance.seed = seed + 2;
  optimizer.seed = seed;
  pretrain_optimizer.seed = seed;
  extension.optimizer.seed = seed;
  distance.optimizer.seed = seed;
  evaluation.seed = seed + 99;
  gradcheck.seed = seed;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

void check_hidden(const std::vector<int>& hidden, const std::string& what) {
  if (hidden.empty()) throw std::invalid_argument(what + ": at least one hidden layer is required");
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument(what + ": hidden layer sizes must be positive");
  }
}

// Strict reader: every key must be consumed, so typos surface as errors.
class Reader {
 public:
  Reader(const Json& doc, std::string where) : doc_(doc), where_(std::move(where)) {
    if (!doc_.is_object()) throw std::invalid_argument(where_ + " must be a JSON object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& item : doc_.items()) {
      if (!used_.contains(item.key())) {
        throw std::invalid_argument("unknown key '" + item.key() + "' in " + where_);
      }
    }
  }

  bool has(const char* key) {
    used_.insert(key);
    return doc_.contains(key);
  }
  const Json& at(const char* key) {
    used_.insert(key);
    return doc_.at(key);
  }
  std::string sub(const char* key) const { return where_ + "." + key; }

  template <class T>
  void get(const char* key, T& out) {
    if (!has(key)) return;
    try {
      out = doc_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw std::invalid_argument(where_ + "." + key + ": " + e.what());
    }
  }
  void get(const char* key, Vector& out) {
    std::vector<double> v;
    if (!has(key)) return;
    get(key, v);
    out = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

 private:
  const Json& doc_;
  std::string where_;
  std::set<std::string> used_;
};

void read_optimizer(const Json& doc, const std::string& where, OptimizerOptions& o) {
  Reader r(doc, where);
  r.get("max_iterations", o.max_iterations);
  r.get("cost_tolerance", o.cost_tolerance);
  r.get("gradient_tolerance", o.gradient_tolerance);
  r.get("c1", o.c1);
  r.get("c2", o.c2);
  r.get("max_line_search_evaluations", o.max_line_search_evaluations);
  r.get("max_fallback_rounds", o.max_fallback_rounds);
  r.get("seed", o.seed);
  if (r.has("sgd")) {
    Reader s(r.at("sgd"), r.sub("sgd"));
    s.get("steps", o.sgd.steps);
    s.get("learning_rate", o.sgd.learning_rate);
    s.get("batch_size", o.sgd.batch_size);
  }
}

Json optimizer_json(const OptimizerOptions& o) {
  return Json{{"max_iterations", o.max_iterations},
              {"cost_tolerance", o.cost_tolerance},
              {"gradient_tolerance", o.gradient_tolerance},
              {"c1", o.c1},
              {"c2", o.c2},
              {"max_line_search_evaluations", o.max_line_search_evaluations},
              {"max_fallback_rounds", o.max_fallback_rounds},
              {"seed", o.seed},
              {"sgd",
               {{"steps", o.sgd.steps},
                {"learning_rate", o.sgd.learning_rate},
                {"batch_size", o.sgd.batch_size}}}};
}

void read_surrogate(const Json& doc, const std::string& where, SurrogateConfig& s) {
  Reader r(doc, where);
  r.get("closed_form", s.closed_form);
  r.get("value", s.value);
  r.get("coefficients", s.coefficients);
  r.get("offset", s.offset);
  r.get("hidden", s.hidden);
  r.get("seed", s.seed);
  if (r.has("optimizer")) read_optimizer(r.at("optimizer"), r.sub("optimizer"), s.optimizer);
}

Json surrogate_config_json(const SurrogateConfig& s) {
  Json j{{"hidden", s.hidden}, {"seed", s.seed}, {"optimizer", optimizer_json(s.optimizer)}};
  if (!s.closed_form.empty()) {
    j["closed_form"] = s.closed_form;
    j["value"] = s.value;
    j["coefficients"] = std::vector<double>(s.coefficients.data(), s.coefficients.data() + s.coefficients.size());
    j["offset"] = s.offset;
  }
  return j;
}

const char* domain_kind_name(DomainConfig::Kind k) {
  switch (k) {
    case DomainConfig::Kind::ProblemDefault:
      return "default";
    case DomainConfig::Kind::Interval:
      return "interval";
    case DomainConfig::Kind::Star:
      return "star";
    case DomainConfig::Kind::Square:
      return "square";
    case DomainConfig::Kind::Box:
      return "box";
    case DomainConfig::Kind::PolygonFile:
      return "polygon_file";
  }
  return "default";
}

DomainConfig::Kind domain_kind_from_string(const std::string& s) {
  for (auto k : {DomainConfig::Kind::ProblemDefault, DomainConfig::Kind::Interval,
                 DomainConfig::Kind::Star, DomainConfig::Kind::Square, DomainConfig::Kind::Box,
                 DomainConfig::Kind::PolygonFile}) {
    if (s == domain_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown domain type '" + s + "'");
}

std::string boundary_sampling_name(BoundarySampling b) {
  return b == BoundarySampling::Stratified ? "stratified" : "uniform-random";
}

std::string backend_name(DistanceBackend b) { return b == DistanceBackend::Naive ? "naive" : "kdtree"; }

}  // namespace

void RunConfig::validate() const {
  if (points.interior == 0) throw std::invalid_argument("points.interior must be positive");
  if (points.boundary == 0) throw std::invalid_argument("points.boundary must be positive");
  if (evaluation.interior + evaluation.boundary == 0) {
    throw std::invalid_argument("evaluation needs at least one point");
  }
  check_hidden(solution_hidden, "solution");
  for (const SurrogateConfig* s : {&extension, &distance}) {
    static const std::set<std::string> shapes{"", "auto", "constant", "affine", "bubble"};
    if (!shapes.contains(s->closed_form)) {
      throw std::invalid_argument("unknown closed form '" + s->closed_form + "'");
    }
    if (s->closed_form.empty()) {
      check_hidden(s->hidden, "surrogate");
      s->optimizer.validate();
    }
  }
  optimizer.validate();
  if (pretrain) pretrain_optimizer.validate();
  for (const auto& h : depth_study.ladder) check_hidden(h, "depth_study.ladder");
  if (depth_study.seeds.empty()) throw std::invalid_argument("depth_study.seeds must not be empty");
  if (residual.chunk_size == 0) throw std::invalid_argument("residual.chunk_size must be positive");

  if (problem.id == ProblemId::Custom && domain.kind == DomainConfig::Kind::ProblemDefault) {
    throw std::invalid_argument("custom problems need an explicit domain");
  }
  if (problem.id == ProblemId::Custom && problem.op.kind == Operator::Kind::Advection &&
      problem.op.velocity.size() == 0) {
    throw std::invalid_argument("custom advection needs a velocity");
  }
  if (domain.kind == DomainConfig::Kind::PolygonFile) {
    if (domain.polygon_file.empty()) throw std::invalid_argument("domain.path is required for polygon_file");
    if (!fs::is_regular_file(domain.polygon_file)) {
      throw std::invalid_argument("polygon file '" + domain.polygon_file.string() + "' does not exist");
    }
  }
  if (domain.kind == DomainConfig::Kind::Box &&
      (domain.lo.size() == 0 || domain.lo.size() != domain.hi.size())) {
    throw std::invalid_argument("box domains need lo and hi of equal, nonzero length");
  }
}

RunConfig config_from_json(const Json& doc, const fs::path& base_dir) {
  RunConfig c;
  Reader r(doc, "config");

  if (r.has("problem")) {
    const Json& p = r.at("problem");
    if (p.is_string()) {
      c.problem.id = problem_id_from_string(p.get<std::string>());
    } else {
      Reader pr(p, "problem");
      std::string id = "custom";
      pr.get("id", id);
      c.problem.id = problem_id_from_string(id);
      pr.get("dimension", c.problem.dimension);
      std::string op = "diffusion";
      pr.get("operator", op);
      if (op == "advection") {
        Vector v;
        pr.get("velocity", v);
        c.problem.op = Operator::advection(v);
      } else if (op == "diffusion") {
        c.problem.op = Operator::diffusion();
      } else {
        throw std::invalid_argument("problem.operator must be 'advection' or 'diffusion'");
      }
      pr.get("forcing", c.problem.forcing);
      pr.get("boundary_value", c.problem.boundary_value);
    }
  }
  if (r.has("domain")) {
    Reader d(r.at("domain"), "domain");
    std::string type = "default";
    d.get("type", type);
    c.domain.kind = domain_kind_from_string(type);
    d.get("a", c.domain.a);
    d.get("b", c.domain.b);
    d.get("points", c.domain.star_points);
    d.get("outer", c.domain.outer);
    d.get("inner", c.domain.inner);
    d.get("lo", c.domain.lo);
    d.get("hi", c.domain.hi);
    std::string path;
    d.get("path", path);
    if (!path.empty()) c.domain.polygon_file = fs::path(path).is_absolute() ? fs::path(path) : base_dir / path;
  }
  if (r.has("points")) {
    Reader p(r.at("points"), "points");
    p.get("interior", c.points.interior);
    p.get("boundary", c.points.boundary);
    p.get("distance_subset", c.points.distance_subset);
    std::string s;
    if (p.has("interior_sampling")) {
      p.get("interior_sampling", s);
      c.points.interior_sampling = sampling_from_string(s);
    }
    if (p.has("boundary_sampling")) {
      p.get("boundary_sampling", s);
      c.points.boundary_sampling = boundary_sampling_from_string(s);
    }
    if (p.has("distance_backend")) {
      p.get("distance_backend", s);
      c.points.backend = distance_backend_from_string(s);
    }
    p.get("seed", c.points.seed);
  }
  if (r.has("solution")) {
    Reader s(r.at("solution"), "solution");
    s.get("hidden", c.solution_hidden);
    s.get("seed", c.solution_seed);
  }
  if (r.has("extension")) read_surrogate(r.at("extension"), "extension", c.extension);
  if (r.has("distance")) read_surrogate(r.at("distance"), "distance", c.distance);
  if (r.has("optimizer")) read_optimizer(r.at("optimizer"), "optimizer", c.optimizer);
  r.get("pretrain", c.pretrain);
  if (r.has("pretrain_optimizer")) {
    read_optimizer(r.at("pretrain_optimizer"), "pretrain_optimizer", c.pretrain_optimizer);
  }
  if (r.has("residual")) {
    Reader p(r.at("residual"), "residual");
    p.get("threads", c.residual.threads);
    p.get("chunk_size", c.residual.chunk_size);
    if (p.has("reduction")) {
      std::string s;
      p.get("reduction", s);
      if (s == "deterministic") {
        c.residual.reduction = Reduction::Deterministic;
      } else if (s == "unordered") {
        c.residual.reduction = Reduction::Unordered;
      } else {
        throw std::invalid_argument("residual.reduction must be 'deterministic' or 'unordered'");
      }
    }
  }
  if (r.has("evaluation")) {
    Reader e(r.at("evaluation"), "evaluation");
    e.get("interior", c.evaluation.interior);
    e.get("boundary", c.evaluation.boundary);
    if (e.has("sampling")) {
      std::string s;
      e.get("sampling", s);
      c.evaluation.sampling = sampling_from_string(s);
    }
    e.get("seed", c.evaluation.seed);
  }
  if (r.has("depth_study")) {
    Reader d(r.at("depth_study"), "depth_study");
    d.get("ladder", c.depth_study.ladder);
    d.get("seeds", c.depth_study.seeds);
  }
  if (r.has("gradcheck")) {
    Reader g(r.at("gradcheck"), "gradcheck");
    g.get("network_trials", c.gradcheck.network_trials);
    g.get("residual_trials", c.gradcheck.residual_trials);
    g.get("seed", c.gradcheck.seed);
    g.get("param_stride", c.gradcheck.param_stride);
    if (g.has("hidden_activation")) {
      std::string s;
      g.get("hidden_activation", s);
      c.gradcheck.hidden_activation = activation_from_string(s);
    }
  }
  std::string out;
  r.get("output_dir", out);
  if (!out.empty()) c.output_dir = fs::path(out).is_absolute() ? fs::path(out) : base_dir / out;
  return c;
}

RunConfig load_config(const fs::path& path) {
  return config_from_json(read_json_file(path), path.parent_path());
}

Json config_to_json(const RunConfig& c) {
  Json problem{{"id", std::string(to_string(c.problem.id))}, {"dimension", c.problem.dimension}};
  if (c.problem.id == ProblemId::Custom) {
    const bool adv = c.problem.op.kind == Operator::Kind::Advection;
    problem["operator"] = adv ? "advection" : "diffusion";
    if (adv) {
      problem["velocity"] = std::vector<double>(c.problem.op.velocity.data(),
                                                c.problem.op.velocity.data() + c.problem.op.velocity.size());
    }
    problem["forcing"] = c.problem.forcing;
    problem["boundary_value"] = c.problem.boundary_value;
  }
  Json domain{{"type", domain_kind_name(c.domain.kind)}};
  switch (c.domain.kind) {
    case DomainConfig::Kind::Interval:
      domain["a"] = c.domain.a;
      domain["b"] = c.domain.b;
      break;
    case DomainConfig::Kind::Star:
      domain["points"] = c.domain.star_points;
      domain["outer"] = c.domain.outer;
      domain["inner"] = c.domain.inner;
      break;
    case DomainConfig::Kind::Box:
      domain["lo"] = std::vector<double>(c.domain.lo.data(), c.domain.lo.data() + c.domain.lo.size());
      domain["hi"] = std::vector<double>(c.domain.hi.data(), c.domain.hi.data() + c.domain.hi.size());
      break;
    case DomainConfig::Kind::PolygonFile:
      domain["path"] = c.domain.polygon_file.string();
      break;
    default:
      break;
  }
  return Json{
      {"problem", problem},
      {"domain", domain},
      {"points",
       {{"interior", c.points.interior},
        {"boundary", c.points.boundary},
        {"distance_subset", c.points.distance_subset},
        {"interior_sampling", std::string(to_string(c.points.interior_sampling))},
        {"boundary_sampling", boundary_sampling_name(c.points.boundary_sampling)},
        {"distance_backend", backend_name(c.points.backend)},
        {"seed", c.points.seed}}},
      {"solution", {{"hidden", c.solution_hidden}, {"seed", c.solution_seed}}},
      {"extension", surrogate_config_json(c.extension)},
      {"distance", surrogate_config_json(c.distance)},
      {"optimizer", optimizer_json(c.optimizer)},
      {"pretrain", c.pretrain},
      {"pretrain_optimizer", optimizer_json(c.pretrain_optimizer)},
      {"residual",
       {{"threads", c.residual.threads},
        {"chunk_size", c.residual.chunk_size},
        {"reduction", c.residual.reduction == Reduction::Deterministic ? "deterministic" : "unordered"}}},
      {"evaluation",
       {{"interior", c.evaluation.interior},
        {"boundary", c.evaluation.boundary},
        {"sampling", std::string(to_string(c.evaluation.sampling))},
        {"seed", c.evaluation.seed}}},
      {"depth_study", {{"ladder", c.depth_study.ladder}, {"seeds", c.depth_study.seeds}}},
      {"gradcheck",
       {{"network_trials", c.gradcheck.network_trials},
        {"residual_trials", c.gradcheck.residual_trials},
        {"seed", c.gradcheck.seed},
        {"param_stride", c.gradcheck.param_stride},
        {"hidden_activation", std::string(to_string(c.gradcheck.hidden_activation))}}},
      {"output_dir", c.output_dir.string()}};
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

// Runs one stage, tagging any exception with the stage name.
template <class F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

Architecture scalar_arch(int dim, const std::vector<int>& hidden) {
  Architecture a;
  a.input_dim = dim;
  a.hidden_sizes = hidden;
  a.output_dim = 1;
  return a;
}

std::vector<Point> positions(const std::vector<BoundaryPoint>& boundary) {
  std::vector<Point> out;
  out.reserve(boundary.size());
  for (const auto& b : boundary) out.push_back(b.position);
  return out;
}

ClosedForm explicit_closed_form(const SurrogateConfig& s, int dim) {
  if (s.closed_form == "constant") return ClosedForm::constant(s.value, dim);
  if (s.closed_form == "affine") {
    if (s.coefficients.size() != dim) throw std::invalid_argument("affine coefficients must match the dimension");
    return ClosedForm::affine(s.coefficients, s.offset);
  }
  throw std::invalid_argument("closed form '" + s.closed_form + "' needs explicit parameters");
}

// 1D closed forms matched to the boundary set: G in the operator's kernel
// through the data, D the line or parabola vanishing on it.
Surrogate auto_closed_form(SurrogateKind kind, const PdeProblem& problem,
                           const std::vector<BoundaryPoint>& boundary) {
  if (problem.dimension() != 1) throw std::invalid_argument("closed_form 'auto' is only defined in 1D");
  if (boundary.size() == 1) {
    const double p = boundary[0].position[0];
    const double inward = -boundary[0].outward_normal[0];
    if (kind == SurrogateKind::Extension) {
      return Surrogate::closed(kind, ClosedForm::constant(problem.boundary_data(boundary[0].position)));
    }
    return Surrogate::closed(kind, ClosedForm::affine(Vector::Constant(1, inward), -inward * p));
  }
  if (boundary.size() != 2) throw std::invalid_argument("closed_form 'auto' needs one or two boundary points");
  const auto [lo_it, hi_it] = std::minmax_element(
      boundary.begin(), boundary.end(),
      [](const BoundaryPoint& x, const BoundaryPoint& y) { return x.position[0] < y.position[0]; });
  const double a = lo_it->position[0];
  const double b = hi_it->position[0];
  if (kind == SurrogateKind::Distance) return Surrogate::closed(kind, ClosedForm::interval_bubble(a, b));
  if (problem.op.kind == Operator::Kind::Advection) {
    throw std::invalid_argument("advection has a single inflow point in 1D");
  }
  const double ga = problem.boundary_data(lo_it->position);
  const double gb = problem.boundary_data(hi_it->position);
  const double slope = (gb - ga) / (b - a);
  return Surrogate::closed(kind, ClosedForm::affine(Vector::Constant(1, slope), ga - slope * a));
}

}  // namespace

Domain build_domain(const RunConfig& config) {
  const DomainConfig& d = config.domain;
  Domain domain;
  switch (d.kind) {
    case DomainConfig::Kind::ProblemDefault:
      return manufactured_problem(config.problem.id, {std::nullopt, config.problem.dimension}).domain;
    case DomainConfig::Kind::Interval:
      domain = Interval{d.a, d.b};
      break;
    case DomainConfig::Kind::Star:
      domain = star_polygon(d.star_points, d.outer, d.inner);
      break;
    case DomainConfig::Kind::Square:
      domain = unit_square();
      break;
    case DomainConfig::Kind::Box:
      domain = HyperRectangle{d.lo, d.hi};
      break;
    case DomainConfig::Kind::PolygonFile:
      domain = read_polygon(d.polygon_file);
      break;
  }
  validate(domain);
  return domain;
}

PdeProblem build_problem(const RunConfig& config) {
  if (config.problem.id != ProblemId::Custom) {
    ManufacturedOptions mo;
    mo.dimension = config.problem.dimension;
    if (config.domain.kind != DomainConfig::Kind::ProblemDefault) mo.domain = build_domain(config);
    return manufactured_problem(config.problem.id, mo);
  }
  PdeProblem p;
  p.id = ProblemId::Custom;
  p.op = config.problem.op;
  p.domain = build_domain(config);
  if (p.op.kind == Operator::Kind::Advection && p.op.velocity.size() != p.dimension()) {
    throw std::invalid_argument("velocity dimension does not match the domain");
  }
  const double f = config.problem.forcing;
  const double g = config.problem.boundary_value;
  p.forcing = [f](const Point&) { return f; };
  p.boundary_data = [g](const Point&) { return g; };
  return p;
}

CollocationSet sample_points(const RunConfig& config, const PdeProblem& problem) {
  CollocationSet set;
  set.interior = sample_interior(problem.domain, config.points.interior, config.points.interior_sampling,
                                 config.points.seed);
  set.boundary = sample_boundary(problem.domain, config.points.boundary, config.points.seed + 1,
                                 config.points.boundary_sampling);
  if (problem.op.kind == Operator::Kind::Advection) set = apply_inflow_rule(std::move(set), problem.op.velocity);
  set.distance_subset = choose_distance_subset(set.interior.size(), config.points.distance_subset);
  return set;
}

PreparedProblem prepare_problem(const RunConfig& config, const Logger& log) {
  PreparedProblem out;
  auto timed = [&](const char* name, auto&& body) {
    const auto t0 = Clock::now();
    stage(name, body);
    out.stages.emplace_back(name);
    out.stage_seconds.emplace_back(name, since(t0));
  };

  timed("sample", [&] {
    out.problem = build_problem(config);
    out.points.interior = sample_interior(out.problem.domain, config.points.interior,
                                          config.points.interior_sampling, config.points.seed);
    out.points.boundary = sample_boundary(out.problem.domain, config.points.boundary, config.points.seed + 1,
                                          config.points.boundary_sampling);
    say(log, "sample: " + std::to_string(out.points.interior.size()) + " interior, " +
                 std::to_string(out.points.boundary.size()) + " boundary points");
    return 0;
  });
  if (out.problem.op.kind == Operator::Kind::Advection) {
    timed("inflow", [&] {
      out.points = apply_inflow_rule(std::move(out.points), out.problem.op.velocity);
      say(log, "inflow: kept " + std::to_string(out.points.boundary.size()) + " inflow points, interior now " +
                   std::to_string(out.points.interior.size()));
      return 0;
    });
  }
  const std::vector<Point> boundary = positions(out.points.boundary);
  timed("distance", [&] {
    out.points.distance_subset = choose_distance_subset(out.points.interior.size(), config.points.distance_subset);
    out.distance_field = distance_field(out.points.interior, boundary, config.points.backend);
    say(log, "distance: normalization " + format_double(out.distance_field.normalization));
    return 0;
  });
  timed("extension", [&] {
    const int dim = out.problem.dimension();
    const SurrogateConfig& s = config.extension;
    if (s.closed_form == "auto") {
      out.extension = auto_closed_form(SurrogateKind::Extension, out.problem, out.points.boundary);
    } else if (!s.closed_form.empty()) {
      out.extension = Surrogate::closed(SurrogateKind::Extension, explicit_closed_form(s, dim));
    } else {
      std::vector<double> g;
      g.reserve(boundary.size());
      for (const auto& p : boundary) g.push_back(out.problem.boundary_data(p));
      out.extension = train_extension(boundary, g, scalar_arch(dim, s.hidden), s.seed, s.optimizer);
      say(log, "extension: cost " + format_double(out.extension.info().final_cost) + " after " +
                   std::to_string(out.extension.info().iterations) + " iterations");
    }
    return 0;
  });
  timed("distance-fit", [&] {
    const int dim = out.problem.dimension();
    const SurrogateConfig& s = config.distance;
    if (s.closed_form == "auto") {
      out.distance = auto_closed_form(SurrogateKind::Distance, out.problem, out.points.boundary);
    } else if (!s.closed_form.empty()) {
      out.distance = Surrogate::closed(SurrogateKind::Distance, explicit_closed_form(s, dim));
    } else {
      const std::vector<double> normalized = out.distance_field.normalized();
      std::vector<Point> coarse;
      std::vector<double> targets;
      for (auto i : out.points.distance_subset) {
        coarse.push_back(out.points.interior[i]);
        targets.push_back(normalized[i]);
      }
      out.distance = train_distance(coarse, targets, boundary, out.distance_field.normalization,
                                    scalar_arch(dim, s.hidden), s.seed, s.optimizer);
      say(log, "distance-fit: cost " + format_double(out.distance.info().final_cost) + ", max |D| on boundary " +
                   format_double(out.distance.info().boundary_max_abs));
    }
    return 0;
  });
  return out;
}

SolveOutcome solve_prepared(const PreparedProblem& prepared, const RunConfig& config,
                            const std::vector<int>& hidden, std::uint64_t seed, bool pretrain,
                            const Logger& log) {
  const auto t0 = Clock::now();
  SolveOutcome out;
  const int dim = prepared.problem.dimension();
  Network net = init_network(scalar_arch(dim, hidden), seed);

  if (pretrain) {
    out.pretrain = stage("pretrain", [&] {
      const std::vector<Point> boundary = positions(prepared.points.boundary);
      std::vector<double> g;
      for (const auto& p : boundary) g.push_back(prepared.problem.boundary_data(p));
      OptimizerResult r = fit_network(net, boundary, g, config.pretrain_optimizer);
      say(log, "pretrain: boundary fit cost " + format_double(r.cost));
      return r;
    });
  }

  out.result = stage("solve", [&] {
    const ResidualSystem system(prepared.extension, prepared.distance, prepared.problem,
                                prepared.points.interior, config.residual);
    Network work = net;
    ValueAndGradient full = [&](const Vector& p, Vector& g) {
      work.unflatten(p);
      ResidualEvaluation e = system.evaluate(work);
      g = std::move(e.gradient);
      return e.cost;
    };
    StochasticGradient sgd{system.size(), [&](const Vector& p, std::span<const std::size_t> batch, Vector& g) {
                             work.unflatten(p);
                             ResidualEvaluation e = system.evaluate(work, batch);
                             g = std::move(e.gradient);
                             return e.cost;
                           }};
    OptimizerOptions opts = config.optimizer;
    if (log) {
      opts.observer = [&, user = config.optimizer.observer](std::size_t it, const Vector& x, double c) {
        if (it % 1000 == 0) say(log, "solve: iteration " + std::to_string(it) + " cost " + format_double(c));
        if (user) user(it, x, c);
      };
    }
    OptimizerResult r = hybrid_minimize(full, sgd, net.flatten(), opts);
    say(log, "solve: " + std::string(to_string(r.status)) + ", cost " + format_double(r.cost) + " after " +
                 std::to_string(r.history.bfgs_iterations()) + " BFGS iterations");
    return r;
  });
  net.unflatten(out.result.x);
  out.solution = std::move(net);
  out.seconds = since(t0);
  return out;
}

std::vector<Point> evaluation_points(const Domain& domain, const EvaluationConfig& config) {
  std::vector<Point> pts;
  if (config.interior > 0) pts = sample_interior(domain, config.interior, config.sampling, config.seed);
  if (config.boundary > 0) {
    for (auto& b : sample_boundary(domain, config.boundary, config.seed + 1)) pts.push_back(std::move(b.position));
  }
  return pts;
}

ErrorTable evaluate_solution(const AnsatzBundle& bundle, const PdeProblem& problem,
                             std::span<const Point> points) {
  ErrorTable t;
  t.points.assign(points.begin(), points.end());
  t.u_hat.reserve(points.size());
  for (const auto& x : points) t.u_hat.push_back(ansatz_eval(bundle, x));
  if (problem.exact_solution && !points.empty()) {
    double worst = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double u = problem.exact_solution(points[i]);
      t.u_exact.push_back(u);
      t.error.push_back(t.u_hat[i] - u);
      worst = std::max(worst, std::abs(t.error.back()));
      sum += std::abs(t.error.back());
    }
    t.max_abs_error = worst;
    t.mean_abs_error = sum / static_cast<double>(points.size());
  }
  return t;
}

void ErrorTable::write_csv(std::ostream& out) const {
  const Eigen::Index dim = points.empty() ? 0 : points.front().size();
  for (Eigen::Index i = 0; i < dim; ++i) out << 'x' << i + 1 << ',';
  out << "u_hat";
  const bool exact = !u_exact.empty();
  if (exact) out << ",u_exact,error";
  out << '\n';
  for (std::size_t k = 0; k < points.size(); ++k) {
    for (Eigen::Index i = 0; i < dim; ++i) out << format_double(points[k][i]) << ',';
    out << format_double(u_hat[k]);
    if (exact) out << ',' << format_double(u_exact[k]) << ',' << format_double(error[k]);
    out << '\n';
  }
}

namespace {

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }
Json optional_json(const std::optional<std::size_t>& v) { return v ? Json(*v) : Json(nullptr); }

Json surrogate_summary(const Surrogate& s) {
  if (s.is_closed_form()) return Json{{"closed_form", std::string(to_string(s.closed_form().shape))}};
  const TrainingInfo& t = s.info();
  Json j{{"final_cost", t.final_cost},
         {"iterations", t.iterations},
         {"status", std::string(to_string(t.status))},
         {"training_points", t.training_points}};
  if (s.kind() == SurrogateKind::Distance) j["boundary_max_abs"] = t.boundary_max_abs;
  return j;
}

}  // namespace

Json RunArtifacts::summary() const {
  const OptimizerResult& r = outcome.result;
  Json stages_json = Json::array();
  for (const auto& s : prepared.stages) stages_json.push_back(s);
  Json timing = Json::object();
  for (const auto& [name, secs] : prepared.stage_seconds) timing[name] = secs;
  timing["pretrain+solve"] = outcome.seconds;
  timing["total"] = seconds;

  Json j{{"problem", std::string(to_string(prepared.problem.id))},
         {"dimension", prepared.problem.dimension()},
         {"status", std::string(to_string(r.status))},
         {"converged", converged},
         {"final_cost", r.cost},
         {"initial_cost", r.history.initial_cost},
         {"bfgs_iterations", r.history.bfgs_iterations()},
         {"sgd_steps", r.history.sgd_steps()},
         {"line_search_failures", r.history.line_search_failures.size()},
         {"first_line_search_failure", optional_json(r.history.first_failure())},
         {"max_abs_error", optional_json(errors.max_abs_error)},
         {"mean_abs_error", optional_json(errors.mean_abs_error)},
         {"evaluation_points", errors.points.size()},
         {"solution_architecture", describe(bundle.solution.arch())},
         {"solution_parameters", bundle.solution.param_count()},
         {"points",
          {{"interior", prepared.points.interior.size()},
           {"boundary", prepared.points.boundary.size()},
           {"distance_subset", prepared.points.distance_subset.size()}}},
         {"extension", surrogate_summary(bundle.extension)},
         {"distance", surrogate_summary(bundle.distance)},
         {"stages", stages_json},
         {"wall_clock_seconds", timing}};
  if (outcome.pretrain) {
    j["pretrain"] = Json{{"final_cost", outcome.pretrain->cost},
                         {"iterations", outcome.pretrain->history.entries.size()},
                         {"status", std::string(to_string(outcome.pretrain->status))}};
  }
  return j;
}

RunArtifacts run_pipeline(const RunConfig& config, const Logger& log) {
  const auto t0 = Clock::now();
  RunArtifacts run;
  run.prepared = prepare_problem(config, log);
  run.outcome = solve_prepared(run.prepared, config, config.solution_hidden, config.solution_seed,
                               config.pretrain, log);
  if (config.pretrain) run.prepared.stages.emplace_back("pretrain");
  run.prepared.stages.emplace_back("solve");
  run.bundle = AnsatzBundle{run.prepared.extension, run.prepared.distance, run.outcome.solution};
  run.errors = stage("evaluate", [&] {
    const auto pts = evaluation_points(run.prepared.problem.domain, config.evaluation);
    return evaluate_solution(run.bundle, run.prepared.problem, pts);
  });
  run.prepared.stages.emplace_back("evaluate");
  if (run.errors.max_abs_error) say(log, "evaluate: max abs error " + format_double(*run.errors.max_abs_error));
  run.converged = converged(run.outcome.result.status);
  run.seconds = since(t0);
  return run;
}

void write_artifacts(const RunArtifacts& run, const fs::path& dir) {
  stage("output", [&] {
    fs::create_directories(dir);
    save_surrogate(dir / "extension.json", run.bundle.extension);
    save_surrogate(dir / "distance.json", run.bundle.distance);
    save_network(dir / "solution.json", run.bundle.solution);
    auto open = [&](const char* name) {
      std::ofstream out(dir / name);
      if (!out) throw std::runtime_error("cannot write '" + (dir / name).string() + "'");
      return out;
    };
    {
      auto out = open("history.csv");
      run.outcome.result.history.write_csv(out);
    }
    if (run.outcome.pretrain) {
      auto out = open("pretrain_history.csv");
      run.outcome.pretrain->history.write_csv(out);
    }
    {
      auto out = open("solution.csv");
      run.errors.write_csv(out);
    }
    {
      auto out = open("interior.csv");
      write_points_csv(out, run.prepared.points.interior);
    }
    {
      auto out = open("boundary.csv");
      write_points_csv(out, positions(run.prepared.points.boundary));
    }
    write_json_file(dir / "summary.json", run.summary());
    return 0;
  });
}

RunArtifacts run_solve(const RunConfig& config, const Logger& log) {
  stage("config", [&] {
    config.validate();
    return 0;
  });
  RunArtifacts run = run_pipeline(config, log);
  write_artifacts(run, config.output_dir);
  stage("output", [&] {
    write_json_file(config.output_dir / "config.json", config_to_json(config));
    return 0;
  });
  return run;
}

AnsatzBundle load_bundle(const fs::path& dir) {
  return AnsatzBundle{load_surrogate(dir / "extension.json"), load_surrogate(dir / "distance.json"),
                      load_network(dir / "solution.json")};
}

// ---------------------------------------------------------------------------
// Studies

std::optional<std::size_t> censored_median(std::vector<std::optional<std::size_t>> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty list");
  std::sort(values.begin(), values.end(), [](const auto& a, const auto& b) {
    if (!a) return false;
    if (!b) return true;
    return *a < *b;
  });
  return values[(values.size() - 1) / 2];
}

namespace {

std::string hidden_text(const std::vector<int>& hidden) {
  std::string s;
  for (std::size_t i = 0; i < hidden.size(); ++i) s += (i ? "x" : "") + std::to_string(hidden[i]);
  return s;
}

}  // namespace

void DepthStudyResult::write_csv(std::ostream& out) const {
  out << "depth,hidden,parameters,seed,iterations,reached,final_cost,first_failure,seconds,error\n";
  for (const auto& r : rows) {
    out << r.depth << ',' << hidden_text(r.hidden) << ',' << r.parameters << ',' << r.seed << ','
        << r.iterations << ',' << (r.reached ? "true" : "false") << ',' << format_double(r.final_cost) << ','
        << (r.first_failure ? std::to_string(*r.first_failure) : "") << ',' << format_double(r.seconds) << ','
        << '"' << r.error << '"' << '\n';
  }
}

Json DepthStudyResult::to_json() const {
  Json depths = Json::array();
  for (const auto& s : summary) {
    depths.push_back(Json{{"depth", s.depth},
                          {"hidden", s.hidden},
                          {"parameters", s.parameters},
                          {"median_iterations", optional_json(s.median_iterations)},
                          {"reached", s.reached},
                          {"runs", s.runs}});
  }
  return Json{{"max_iterations", max_iterations}, {"depths", depths}};
}

DepthStudyResult run_depth_study(const RunConfig& config, const Logger& log) {
  stage("config", [&] {
    config.validate();
    return 0;
  });
  const PreparedProblem prepared = prepare_problem(config, log);
  DepthStudyResult result;
  result.max_iterations = config.optimizer.max_iterations;
  const int dim = prepared.problem.dimension();
  for (const auto& hidden : config.depth_study.ladder) {
    DepthSummary summary;
    summary.depth = hidden.size();
    summary.hidden = hidden;
    summary.parameters = param_count(scalar_arch(dim, hidden));
    std::vector<std::optional<std::size_t>> iterations;
    for (auto seed : config.depth_study.seeds) {
      DepthStudyRow row;
      row.depth = hidden.size();
      row.hidden = hidden;
      row.parameters = summary.parameters;
      row.seed = seed;
      try {
        const SolveOutcome o = solve_prepared(prepared, config, hidden, seed, config.pretrain);
        row.iterations = o.result.history.bfgs_iterations();
        row.reached = o.result.status == OptimizerStatus::ConvergedByCost;
        row.final_cost = o.result.cost;
        row.first_failure = o.result.history.first_failure();
        row.seconds = o.seconds;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      say(log, "depth-study: " + hidden_text(hidden) + " seed " + std::to_string(seed) + ": " +
                   (row.error.empty() ? (row.reached ? "reached" : "missed") + std::string(" tolerance after ") +
                                            std::to_string(row.iterations) + " iterations, cost " +
                                            format_double(row.final_cost)
                                      : "failed: " + row.error));
      iterations.push_back(row.reached ? std::optional<std::size_t>(row.iterations) : std::nullopt);
      summary.reached += row.reached ? 1 : 0;
      ++summary.runs;
      result.rows.push_back(std::move(row));
    }
    summary.median_iterations = censored_median(iterations);
    result.summary.push_back(std::move(summary));
  }
  return result;
}

bool PretrainComparison::pretraining_delays_failure() const {
  if (!median_with) return true;
  return median_without && *median_with >= *median_without;
}

void PretrainComparison::write_csv(std::ostream& out) const {
  out << "seed,pretrain,first_failure,initial_cost,final_cost,iterations,status\n";
  for (const auto& r : rows) {
    out << r.seed << ',' << (r.pretrain ? "true" : "false") << ','
        << (r.first_failure ? std::to_string(*r.first_failure) : "") << ',' << format_double(r.initial_cost)
        << ',' << format_double(r.final_cost) << ',' << r.iterations << ',' << to_string(r.status) << '\n';
  }
}

Json PretrainComparison::to_json() const {
  return Json{{"median_first_failure_with_pretraining", optional_json(median_with)},
              {"median_first_failure_without_pretraining", optional_json(median_without)},
              {"pretraining_delays_failure", pretraining_delays_failure()}};
}

PretrainComparison run_pretrain_comparison(const RunConfig& config, const Logger& log) {
  stage("config", [&] {
    config.validate();
    return 0;
  });
  const PreparedProblem prepared = prepare_problem(config, log);
  PretrainComparison cmp;
  std::vector<std::optional<std::size_t>> with, without;
  for (auto seed : config.depth_study.seeds) {
    for (bool pre : {false, true}) {
      const SolveOutcome o = solve_prepared(prepared, config, config.solution_hidden, seed, pre);
      PretrainRow row;
      row.seed = seed;
      row.pretrain = pre;
      row.first_failure = o.result.history.first_failure();
      row.initial_cost = o.result.history.initial_cost;
      row.final_cost = o.result.cost;
      row.iterations = o.result.history.bfgs_iterations();
      row.status = o.result.status;
      say(log, std::string("pretrain-comparison: seed ") + std::to_string(seed) + (pre ? " with" : " without") +
                   " pretraining: first failure " +
                   (row.first_failure ? std::to_string(*row.first_failure) : std::string("none")) +
                   ", initial cost " + format_double(row.initial_cost));
      (pre ? with : without).push_back(row.first_failure);
      cmp.rows.push_back(row);
    }
  }
  cmp.median_with = censored_median(with);
  cmp.median_without = censored_median(without);
  return cmp;
}

}  // namespace meshfree
