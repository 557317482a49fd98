#include "omnishape/core/rng.hpp"

#include <sstream>

#include "omnishape/core/error.hpp"

namespace omnishape {

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_ >> normal_;
  if (!is) throw ValidationError("corrupt RNG state");
}

}  // namespace omnishape
