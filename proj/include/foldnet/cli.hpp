#pragma once

// The foldnet command-line front end. run() is the whole program minus process setup,
// so tests can drive it with argument vectors and capture both streams.

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace foldnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// 64-bit FNV-1a, used to fingerprint the effective configuration.
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace foldnet::cli
