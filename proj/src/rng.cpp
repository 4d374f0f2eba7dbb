#include "csnn/rng.hpp"

#include <limits>
#include <sstream>

#include "csnn/error.hpp"

namespace csnn {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw InputError("Rng::below: empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream in(state);
  in >> engine_;
  if (in.fail()) throw CheckpointError("unreadable RNG state");
}

}  // namespace csnn
