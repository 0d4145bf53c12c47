#pragma once
// Small shared helpers: a portable random source, content hashing and number
// formatting.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace lite {

/// mt19937_64 with portable uniform/normal draws (std distributions are not
/// specified bit-for-bit across standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double exponential(double mean) { return -mean * std::log1p(-uniform()); }
  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
  }

  std::string state() const;
  void set_state(const std::string& text);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Lowercase hex SHA-1 of `content`, framed like a git blob ("blob <len>\0").
std::string git_blob_hash(std::string_view content);

/// Lowercase hex SHA-256 of raw bytes.
std::string sha256_hex(std::string_view content);

/// Fixed-notation rendering with `digits` significant digits. Trailing zeros
/// after the decimal point are removed when `strip_zeros` is set.
std::string format_significant(double value, int digits, bool strip_zeros);

/// Shortest round-trip text for a double.
std::string format_exact(double value);

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

}  // namespace lite
