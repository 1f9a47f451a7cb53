#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace msnas {

using Rng = std::mt19937_64;

// Independent generator for one purpose ("init", "data", "noise", ...)
// derived from the run seed, so adding a consumer never shifts another
// consumer's stream.
Rng derive_stream(std::uint64_t seed, std::string_view purpose);

std::string save_rng(const Rng& rng);
Rng load_rng(const std::string& state);

}  // namespace msnas
