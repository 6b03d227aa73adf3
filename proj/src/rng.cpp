#include "cgir/rng.hpp"

#include <sstream>

namespace cgir {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << "rng1";
  for (uint64_t w : state_) os << " " << w;
  os << " " << (have_cached_ ? 1 : 0);
  if (have_cached_) {
    // Round-trips exactly via hex float formatting.
    char buf[64];
    std::snprintf(buf, sizeof(buf), " %a", cached_);
    os << buf;
  }
  return os.str();
}

Rng Rng::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string magic;
  is >> magic;
  check_param(magic == "rng1", "Rng::deserialize: bad stream tag");
  Rng r;
  for (auto& w : r.state_) {
    check_param(static_cast<bool>(is >> w), "Rng::deserialize: truncated state");
  }
  int flag = 0;
  check_param(static_cast<bool>(is >> flag), "Rng::deserialize: truncated flag");
  r.have_cached_ = flag != 0;
  if (r.have_cached_) {
    std::string hex;
    check_param(static_cast<bool>(is >> hex), "Rng::deserialize: truncated cache");
    r.cached_ = std::strtod(hex.c_str(), nullptr);
  }
  return r;
}

}  // namespace cgir
