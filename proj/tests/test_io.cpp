#include <doctest.h>

#include <charconv>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include "meshfree/io.hpp"
#include "meshfree/gradcheck.hpp"

using namespace meshfree;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "meshfree_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("double formatting round trips") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::uint64_t> bits;
  for (int k = 0; k < 10000; ++k) {
    double v;
    const std::uint64_t b = bits(rng);
    std::memcpy(&v, &b, sizeof v);
    if (!std::isfinite(v)) continue;
    const std::string text = format_double(v);
    double back = 0.0;
    std::from_chars(text.data(), text.data() + text.size(), back);
    REQUIRE(back == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(-3.0) == "-3");
}

TEST_CASE("network JSON round trip is bit exact") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Architecture a = reference::random_architecture(rng);
    a.output_dim = 1 + trial % 2;
    if (trial % 5 == 0) a.output_activation = Activation::Sigmoid;
    const Network net = reference::random_network(a, rng);
    const Network back = network_from_json(Json::parse(network_to_json(net).dump()));
    CHECK(back.arch() == net.arch());
    CHECK(back.flatten() == net.flatten());
  }
}

TEST_CASE("network files") {
  std::mt19937_64 rng(3);
  const Network net = reference::random_network(reference::random_architecture(rng), rng);
  const auto path = scratch("net.json");
  save_network(path, net);
  CHECK(load_network(path).flatten() == net.flatten());
  CHECK_THROWS_AS(load_network(scratch("missing.json")), std::runtime_error);
}

TEST_CASE("malformed network documents") {
  Json doc = network_to_json(Network([] {
    Architecture a;
    a.hidden_sizes = {2};
    return a;
  }()));
  SUBCASE("wrong parameter count") {
    doc["parameters"].push_back(1.0);
    CHECK_THROWS_AS(network_from_json(doc), std::invalid_argument);
  }
  SUBCASE("missing field") {
    doc.erase("hidden_sizes");
    CHECK_THROWS_AS(network_from_json(doc), std::invalid_argument);
  }
  SUBCASE("wrong format tag") {
    doc["format"] = "something-else";
    CHECK_THROWS_AS(network_from_json(doc), std::invalid_argument);
  }
  SUBCASE("bad activation") {
    doc["hidden_activation"] = "tanh";
    CHECK_THROWS_AS(network_from_json(doc), std::invalid_argument);
  }
}

TEST_CASE("non-finite networks are not written") {
  Architecture a;
  a.hidden_sizes = {2};
  Network net(a);
  net.biases(1)[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(network_to_json(net), std::invalid_argument);
}

TEST_CASE("surrogate round trips") {
  SUBCASE("closed forms") {
    const Surrogate forms[] = {
        Surrogate::closed(SurrogateKind::Extension, ClosedForm::constant(1.25, 2)),
        Surrogate::closed(SurrogateKind::Extension, ClosedForm::affine((Vector(2) << 0.1, -2).finished(), 3)),
        Surrogate::closed(SurrogateKind::Distance, ClosedForm::interval_bubble(-1, 2)),
    };
    for (const auto& s : forms) {
      const Surrogate back = surrogate_from_json(Json::parse(surrogate_to_json(s).dump()));
      REQUIRE(back.is_closed_form());
      CHECK(back.kind() == s.kind());
      CHECK(back.closed_form().shape == s.closed_form().shape);
      const Vector x = Vector::Constant(s.input_dim(), 0.3);
      CHECK(back.value(x) == s.value(x));
    }
  }
  SUBCASE("trained") {
    std::mt19937_64 rng(4);
    Architecture a;
    a.input_dim = 2;
    a.hidden_sizes = {5};
    TrainingInfo info;
    info.final_cost = 1.5e-7;
    info.iterations = 321;
    info.status = OptimizerStatus::ConvergedByCost;
    info.training_points = 600;
    info.fingerprint = 0xfedcba9876543210ull;
    info.boundary_max_abs = 0.03125;
    const Surrogate s = Surrogate::trained(SurrogateKind::Distance, reference::random_network(a, rng), info, 0.7);
    const auto path = scratch("d.json");
    save_surrogate(path, s);
    const Surrogate back = load_surrogate(path);
    CHECK(back.kind() == SurrogateKind::Distance);
    CHECK(back.normalization() == 0.7);
    CHECK(back.network().flatten() == s.network().flatten());
    CHECK(back.info().final_cost == info.final_cost);
    CHECK(back.info().iterations == info.iterations);
    CHECK(back.info().status == info.status);
    CHECK(back.info().fingerprint == info.fingerprint);
    CHECK(back.info().boundary_max_abs == info.boundary_max_abs);
  }
}

TEST_CASE("points CSV") {
  std::ostringstream out;
  const std::vector<Point> pts{(Vector(2) << 0.5, 0.25).finished(), (Vector(2) << 1, -2).finished()};
  write_points_csv(out, pts);
  CHECK(out.str() == "x1,x2\n0.5,0.25\n1,-2\n");
}
