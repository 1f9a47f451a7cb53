#include "rng.hpp"

#include <sstream>
#include <stdexcept>

namespace msnas {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng derive_stream(std::uint64_t seed, std::string_view purpose) {
  const std::uint64_t tag = fnv1a(purpose);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return Rng(seq);
}

std::string save_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng load_rng(const std::string& state) {
  std::istringstream is(state);
  Rng rng;
  is >> rng;
  if (!is) throw std::runtime_error("corrupt RNG state");
  return rng;
}

}  // namespace msnas
