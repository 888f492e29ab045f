#include "onestream/rng.hpp"

#include <sstream>

#include "onestream/errors.hpp"

namespace onestream {

std::string Rng::serialize() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream in(state);
  in >> engine_;
  if (!in) throw IoError("corrupt rng state");
}

}  // namespace onestream
