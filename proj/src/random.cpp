#include "docnmt/random.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "docnmt/errors.hpp"

namespace docnmt {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) fail(ErrorKind::kContract, "Rng::below: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) fail(ErrorKind::kIo, "corrupt generator state");
}

}  // namespace docnmt
