#include "meshfree/sobol.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace meshfree {

namespace detail {
extern const std::string_view kBundledJoeKuo;
}

namespace {

constexpr int kBits = 32;

std::vector<std::uint32_t> direction_numbers(const SobolDimension* dim) {
  std::vector<std::uint32_t> v(kBits + 1, 0);
  if (dim == nullptr) {
    for (int k = 1; k <= kBits; ++k) v[k] = 1u << (kBits - k);
    return v;
  }
  const int s = dim->degree;
  std::vector<std::uint32_t> m(kBits + 1, 0);
  for (int k = 1; k <= s && k <= kBits; ++k) m[k] = dim->initial[k - 1];
  for (int k = s + 1; k <= kBits; ++k) {
    std::uint32_t value = m[k - s] ^ (m[k - s] << s);
    for (int j = 1; j < s; ++j) {
      // a_j is bit (s-1-j) of the packed coefficient word.
      if ((dim->coefficients >> (s - 1 - j)) & 1u) value ^= m[k - j] << j;
    }
    m[k] = value;
  }
  for (int k = 1; k <= kBits; ++k) v[k] = m[k] << (kBits - k);
  return v;
}

}  // namespace

DirectionTable DirectionTable::parse(std::istream& in) {
  std::vector<SobolDimension> dims;
  std::string line;
  int expected = 2;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    long d = 0;
    if (!(row >> d)) continue;  // header or blank line
    if (d != expected) {
      throw std::runtime_error("direction table: expected dimension " + std::to_string(expected) +
                               ", found " + std::to_string(d));
    }
    SobolDimension dim;
    long a = 0;
    if (!(row >> dim.degree >> a) || dim.degree < 1 || dim.degree > kBits) {
      throw std::runtime_error("direction table: malformed line for dimension " + std::to_string(d));
    }
    dim.coefficients = static_cast<std::uint32_t>(a);
    for (int k = 0; k < dim.degree; ++k) {
      long m = 0;
      if (!(row >> m)) {
        throw std::runtime_error("direction table: missing m_i for dimension " + std::to_string(d));
      }
      // m_k must be odd and below 2^k
      if (m <= 0 || m % 2 == 0 || m >= (1L << (k + 1))) {
        throw std::runtime_error("direction table: invalid m_" + std::to_string(k + 1) +
                                 " for dimension " + std::to_string(d));
      }
      dim.initial.push_back(static_cast<std::uint32_t>(m));
    }
    dims.push_back(std::move(dim));
    ++expected;
  }
  return DirectionTable(std::move(dims));
}

DirectionTable DirectionTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open direction-number file " + path.string());
  return parse(in);
}

const DirectionTable& DirectionTable::bundled() {
  static const DirectionTable table = [] {
    std::istringstream in{std::string(detail::kBundledJoeKuo)};
    return parse(in);
  }();
  return table;
}

std::vector<double> sobol_points(int dim, std::size_t n, const DirectionTable& table) {
  if (dim < 1) throw std::invalid_argument("sobol dimension must be >= 1");
  if (dim > table.max_dimension()) {
    throw std::invalid_argument("sobol dimension " + std::to_string(dim) +
                                " exceeds direction table (" +
                                std::to_string(table.max_dimension()) + ")");
  }
  if (n >= (std::size_t{1} << kBits)) throw std::invalid_argument("too many sobol points");

  std::vector<std::vector<std::uint32_t>> v;
  v.reserve(static_cast<std::size_t>(dim));
  for (int d = 1; d <= dim; ++d) {
    v.push_back(direction_numbers(d == 1 ? nullptr : &table.dimension(d)));
  }

  const auto ud = static_cast<std::size_t>(dim);
  std::vector<double> out(n * ud);
  std::vector<std::uint32_t> x(ud, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    // c = position of the lowest zero bit of i - 1, 1-based
    std::size_t prev = i - 1;
    int c = 1;
    while (prev & 1u) {
      prev >>= 1;
      ++c;
    }
    for (std::size_t d = 0; d < ud; ++d) {
      x[d] ^= v[d][static_cast<std::size_t>(c)];
      out[(i - 1) * ud + d] = static_cast<double>(x[d]) * 0x1.0p-32;
    }
  }
  return out;
}

}  // namespace meshfree
