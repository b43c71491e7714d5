#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace rampmeter {

// Named sub-streams so that e.g. IDM noise and policy sampling never share draws.
enum class Stream : std::uint32_t {
  Dynamics = 1,
  StateNoise = 2,
  ActionNoise = 3,
  PolicySample = 4,
  Perturbation = 5,
  Init = 6,
};

// Seeds a generator from a path of integers (master seed, iteration, episode, ...).
inline std::mt19937_64 make_stream(std::initializer_list<std::uint64_t> path, Stream tag) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t v : path) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  }
  words.push_back(static_cast<std::uint32_t>(tag));
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace rampmeter
