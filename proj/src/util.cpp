#include "lite/util.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cstdio>
#include <sstream>

#include "lite/errors.hpp"

namespace lite {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw Error("Rng::below(0)");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << format_exact(spare_);
  return os.str();
}

void Rng::set_state(const std::string& text) {
  std::istringstream is(text);
  int spare_flag = 0;
  std::string spare_text;
  is >> engine_ >> spare_flag >> spare_text;
  if (!is) throw ParseError("malformed rng state");
  has_spare_ = spare_flag != 0;
  spare_ = std::stod(spare_text);
}

namespace {

std::string digest_hex(const EVP_MD* md, std::string_view prefix, std::string_view content) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, md, nullptr) != 1 ||
      EVP_DigestUpdate(ctx, prefix.data(), prefix.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &length) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("digest computation failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

}  // namespace

std::string git_blob_hash(std::string_view content) {
  std::string header = "blob " + std::to_string(content.size());
  header.push_back('\0');
  return digest_hex(EVP_sha1(), header, content);
}

std::string sha256_hex(std::string_view content) { return digest_hex(EVP_sha256(), {}, content); }

std::string format_significant(double value, int digits, bool strip_zeros) {
  if (!std::isfinite(value)) throw Error("cannot format non-finite value");
  if (value == 0.0) return strip_zeros ? "0" : "0." + std::string(static_cast<std::size_t>(digits - 1), '0');
  // Scientific rendering rounds exactly once; the fixed form is rebuilt from
  // its mantissa digits and exponent.
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*e", digits - 1, std::fabs(value));
  std::string sci(buf);
  const auto e_pos = sci.find('e');
  const int exponent = std::stoi(sci.substr(e_pos + 1));
  std::string mantissa;
  for (char c : sci.substr(0, e_pos))
    if (c != '.') mantissa.push_back(c);
  std::string int_part, frac_part;
  if (exponent >= 0) {
    const auto int_len = static_cast<std::size_t>(exponent) + 1;
    if (mantissa.size() <= int_len) {
      int_part = mantissa + std::string(int_len - mantissa.size(), '0');
    } else {
      int_part = mantissa.substr(0, int_len);
      frac_part = mantissa.substr(int_len);
    }
  } else {
    int_part = "0";
    frac_part = std::string(static_cast<std::size_t>(-exponent - 1), '0') + mantissa;
  }
  if (strip_zeros) {
    while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();
  }
  std::string out = value < 0 ? "-" : "";
  out += int_part;
  if (!frac_part.empty()) out += "." + frac_part;
  return out;
}

std::string format_exact(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(text.substr(start));
      return out;
    }
    out.emplace_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

}  // namespace lite
