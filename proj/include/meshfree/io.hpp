#pragma once

// JSON serialization of networks and surrogates, plus small CSV helpers.
//
// Network layout:
//   { "format": "meshfree-network", "version": 1,
//     "input_dim": N, "hidden_sizes": [...], "output_dim": M,
//     "hidden_activation": "sigmoid", "output_activation": "linear",
//     "parameters": [ ... flat vector, layer-major ... ] }
// Doubles are written with 17 significant digits, so a write/read cycle
// reproduces every parameter bit for bit.
//
// Surrogate layout:
//   { "format": "meshfree-surrogate", "version": 1, "kind": "distance",
//     "normalization": 0.71,
//     "closed_form": { "shape": "affine", ... }      one of these two
//     "network": { ...network layout... },
//     "training": { "final_cost": ..., "iterations": ..., ... } }

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshfree/geometry.hpp"
#include "meshfree/network.hpp"
#include "meshfree/surrogate.hpp"

namespace meshfree {

using Json = nlohmann::json;

Json network_to_json(const Network& net);
/// Throws std::invalid_argument on a malformed document.
Network network_from_json(const Json& doc);

Json surrogate_to_json(const Surrogate& s);
Surrogate surrogate_from_json(const Json& doc);

/// Reads a whole JSON file; throws std::runtime_error with the path on
/// failure.
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& doc);

void save_network(const std::filesystem::path& path, const Network& net);
Network load_network(const std::filesystem::path& path);
void save_surrogate(const std::filesystem::path& path, const Surrogate& s);
Surrogate load_surrogate(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// Point set as CSV with header x1,...,xN.
void write_points_csv(std::ostream& out, std::span<const Point> points);

}  // namespace meshfree
