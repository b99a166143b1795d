#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string_view>
#include <vector>

namespace meshfree {

/// Primitive polynomial and initial direction numbers for one dimension, as
/// listed in the Joe-Kuo table format (`d s a m_1 ... m_s`).
struct SobolDimension {
  int degree = 0;
  std::uint32_t coefficients = 0;
  std::vector<std::uint32_t> initial;
};

/// Direction-number table. Dimension 1 is implicit (all m_i = 1) and is not
/// stored; entry k of `dims` describes dimension k + 2.
class DirectionTable {
 public:
  DirectionTable() = default;
  explicit DirectionTable(std::vector<SobolDimension> dims) : dims_(std::move(dims)) {}

  /// Parses the Joe-Kuo text format. The first line is a header and skipped.
  static DirectionTable parse(std::istream& in);
  static DirectionTable load(const std::filesystem::path& path);
  /// Built-in table covering dimensions 1..50.
  static const DirectionTable& bundled();

  int max_dimension() const { return static_cast<int>(dims_.size()) + 1; }
  const SobolDimension& dimension(int d) const { return dims_.at(static_cast<std::size_t>(d - 2)); }

 private:
  std::vector<SobolDimension> dims_;
};

/// First n points of the Gray-code Sobol sequence in (0,1)^dim, skipping the
/// initial zero point. Row-major: point p occupies [p*dim, (p+1)*dim).
/// Throws std::invalid_argument when dim exceeds the table.
std::vector<double> sobol_points(int dim, std::size_t n,
                                 const DirectionTable& table = DirectionTable::bundled());

}  // namespace meshfree
