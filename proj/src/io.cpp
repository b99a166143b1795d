#include "meshfree/io.hpp"

#include <charconv>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace meshfree {

namespace {

template <class T>
T required(const Json& doc, const char* key) {
  if (!doc.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  try {
    return doc.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("field '") + key + "': " + e.what());
  }
}

void expect_format(const Json& doc, std::string_view format) {
  if (!doc.is_object() || required<std::string>(doc, "format") != format) {
    throw std::invalid_argument("expected a '" + std::string(format) + "' document");
  }
  if (required<int>(doc, "version") != 1) throw std::invalid_argument("unsupported format version");
}

OptimizerStatus status_from_string(std::string_view s) {
  for (auto st : {OptimizerStatus::ConvergedByCost, OptimizerStatus::ConvergedByGradient,
                  OptimizerStatus::LineSearchFailed, OptimizerStatus::MaxIterations}) {
    if (to_string(st) == s) return st;
  }
  throw std::invalid_argument("unknown optimizer status '" + std::string(s) + "'");
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

Json network_to_json(const Network& net) {
  const Architecture& a = net.arch();
  if (!net.all_finite()) throw std::invalid_argument("cannot serialize a network with non-finite parameters");
  return Json{{"format", "meshfree-network"},
              {"version", 1},
              {"input_dim", a.input_dim},
              {"hidden_sizes", a.hidden_sizes},
              {"output_dim", a.output_dim},
              {"hidden_activation", std::string(to_string(a.hidden_activation))},
              {"output_activation", std::string(to_string(a.output_activation))},
              {"parameters", to_std(net.flatten())}};
}

Network network_from_json(const Json& doc) {
  expect_format(doc, "meshfree-network");
  Architecture a;
  a.input_dim = required<int>(doc, "input_dim");
  a.hidden_sizes = required<std::vector<int>>(doc, "hidden_sizes");
  a.output_dim = required<int>(doc, "output_dim");
  a.hidden_activation = activation_from_string(required<std::string>(doc, "hidden_activation"));
  a.output_activation = activation_from_string(required<std::string>(doc, "output_activation"));
  a.validate();
  Network net(a);
  net.unflatten(from_std(required<std::vector<double>>(doc, "parameters")));
  return net;
}

Json surrogate_to_json(const Surrogate& s) {
  Json doc{{"format", "meshfree-surrogate"},
           {"version", 1},
           {"kind", std::string(to_string(s.kind()))},
           {"normalization", s.normalization()}};
  if (s.is_closed_form()) {
    const ClosedForm& f = s.closed_form();
    doc["closed_form"] = Json{{"shape", std::string(to_string(f.shape))},
                              {"dim", f.dim},
                              {"coefficients", to_std(f.coefficients)},
                              {"offset", f.offset},
                              {"a", f.a},
                              {"b", f.b}};
  } else {
    const TrainingInfo& t = s.info();
    doc["network"] = network_to_json(s.network());
    doc["training"] = Json{{"final_cost", t.final_cost},
                           {"iterations", t.iterations},
                           {"status", std::string(to_string(t.status))},
                           {"training_points", t.training_points},
                           {"fingerprint", t.fingerprint},
                           {"boundary_max_abs", t.boundary_max_abs}};
  }
  return doc;
}

Surrogate surrogate_from_json(const Json& doc) {
  expect_format(doc, "meshfree-surrogate");
  const SurrogateKind kind = surrogate_kind_from_string(required<std::string>(doc, "kind"));
  if (doc.contains("closed_form")) {
    const Json& c = doc.at("closed_form");
    const std::string shape = required<std::string>(c, "shape");
    const int dim = required<int>(c, "dim");
    ClosedForm f;
    if (shape == "constant") {
      f = ClosedForm::constant(required<double>(c, "offset"), dim);
    } else if (shape == "affine") {
      f = ClosedForm::affine(from_std(required<std::vector<double>>(c, "coefficients")),
                             required<double>(c, "offset"));
      if (f.dim != dim) throw std::invalid_argument("affine coefficients do not match dim");
    } else if (shape == "interval-bubble") {
      f = ClosedForm::interval_bubble(required<double>(c, "a"), required<double>(c, "b"));
    } else {
      throw std::invalid_argument("unknown closed-form shape '" + shape + "'");
    }
    return Surrogate::closed(kind, std::move(f));
  }
  if (!doc.contains("network")) throw std::invalid_argument("surrogate has neither closed_form nor network");
  TrainingInfo t;
  if (doc.contains("training")) {
    const Json& tr = doc.at("training");
    t.final_cost = required<double>(tr, "final_cost");
    t.iterations = required<std::size_t>(tr, "iterations");
    t.status = status_from_string(required<std::string>(tr, "status"));
    t.training_points = required<std::size_t>(tr, "training_points");
    t.fingerprint = required<std::uint64_t>(tr, "fingerprint");
    t.boundary_max_abs = required<double>(tr, "boundary_max_abs");
  }
  return Surrogate::trained(kind, network_from_json(doc.at("network")), std::move(t),
                            required<double>(doc, "normalization"));
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw std::runtime_error("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void save_network(const std::filesystem::path& path, const Network& net) {
  write_json_file(path, network_to_json(net));
}

Network load_network(const std::filesystem::path& path) {
  return network_from_json(read_json_file(path));
}

void save_surrogate(const std::filesystem::path& path, const Surrogate& s) {
  write_json_file(path, surrogate_to_json(s));
}

Surrogate load_surrogate(const std::filesystem::path& path) {
  return surrogate_from_json(read_json_file(path));
}

void write_points_csv(std::ostream& out, std::span<const Point> points) {
  const Eigen::Index dim = points.empty() ? 0 : points.front().size();
  for (Eigen::Index i = 0; i < dim; ++i) out << (i ? ",x" : "x") << i + 1;
  out << '\n';
  for (const auto& p : points) {
    for (Eigen::Index i = 0; i < p.size(); ++i) out << (i ? "," : "") << format_double(p[i]);
    out << '\n';
  }
}

}  // namespace meshfree
