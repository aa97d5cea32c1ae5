#pragma once

// Shared infrastructure: error types, deterministic RNG, double formatting,
// and a small deterministic parallel_for.

#include <array>
#include <charconv>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace istack {

inline constexpr const char* kVersion = "0.1.0";

// Leader plus up to seven followers. Enumeration-based solving is hopeless
// beyond that anyway.
inline constexpr int kMaxPlayers = 8;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& message, int line, int column)
      : Error("line " + std::to_string(line) + ", column " +
              std::to_string(column) + ": " + message),
        line(line),
        column(column) {}
  int line;
  int column;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& message, int step)
      : Error(message), step(step) {}
  int step;
};

class LatticeEscapeError : public Error {
 public:
  LatticeEscapeError(const std::string& message, int step,
                     std::vector<double> point)
      : Error(message), step(step), point(std::move(point)) {}
  int step;
  std::vector<double> point;
};

// Thrown when a punishment strategy is requested for a target outside the
// admissible set; carries the first violated follower and its margin.
class PunishmentRefusal : public Error {
 public:
  PunishmentRefusal(const std::string& message, int follower, double margin)
      : Error(message), follower(follower), margin(margin) {}
  int follower;
  double margin;
};

// Shortest round-tripping decimal form of a double.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

// mt19937_64 with hand-rolled value mappings. The engine is pinned by the
// standard; the standard distributions are not, and reports must be
// byte-stable across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  // Uniform integer in [0, n). Modulo bias is irrelevant at test scales.
  int uniform_int(int n) {
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

 private:
  std::mt19937_64 gen_;
};

// Runs fn(begin, end) over a partition of [0, count). Chunks are fixed by
// (count, workers) alone, so results never depend on scheduling as long as
// chunks write disjoint data.
inline void parallel_for(std::size_t count, int workers,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  if (count == 0) return;
  if (workers <= 1 || count < 2) {
    fn(0, count);
    return;
  }
  std::size_t n_chunks = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  std::size_t chunk = (count + n_chunks - 1) / n_chunks;
  std::vector<std::thread> threads;
  threads.reserve(n_chunks);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    std::size_t begin = c * chunk;
    std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : threads) t.join();
}

}  // namespace istack
