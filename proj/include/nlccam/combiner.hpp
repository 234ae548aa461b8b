#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nlccam/error.hpp"
#include "nlccam/tensor.hpp"

namespace nlccam {

// g(k) = ((k-p)/(1-p))^eta for k <= p, (-1)^(eta+1) ((k-p)/(p-K))^eta otherwise.
struct Polynomial {
  int eta = 2;
  std::optional<double> pivot;  // empty: (K+1)/2

  double pivot_for(std::size_t num_classes) const {
    return pivot.value_or((static_cast<double>(num_classes) + 1.0) / 2.0);
  }
  friend bool operator==(const Polynomial&, const Polynomial&) = default;
};

// +1 for the first `top` ranks, -1 for the last `bottom` ranks, 0 in between.
struct TopBottom {
  std::size_t top = 1;
  std::size_t bottom = 0;
  friend bool operator==(const TopBottom&, const TopBottom&) = default;
};

using CombinationFn = std::variant<Polynomial, TopBottom>;

namespace detail {

inline double ipow(double base, int exponent) {
  double r = 1.0;
  for (int i = 0; i < exponent; ++i) r *= base;
  return r;
}

inline void validate_combination(const CombinationFn& fn, std::size_t num_classes) {
  if (num_classes == 0) throw ValueError("class count must be positive");
  if (const auto* poly = std::get_if<Polynomial>(&fn)) {
    if (poly->eta < 0) throw ValueError("polynomial degree must be non-negative");
    const double p = poly->pivot_for(num_classes);
    if (!(p >= 1.0 && p <= static_cast<double>(num_classes))) {
      throw ValueError(detail::concat("polynomial pivot ", p, " outside [1, ", num_classes, "]"));
    }
  } else {
    const auto& tb = std::get<TopBottom>(fn);
    if (tb.top + tb.bottom > num_classes) {
      throw ValueError(detail::concat("top ", tb.top, " + bottom ", tb.bottom,
                                      " exceeds class count ", num_classes));
    }
  }
}

}  // namespace detail

// Coefficient of the k-th ranked map (k is 1-based).
inline double weight(const CombinationFn& fn, std::size_t k, std::size_t num_classes) {
  detail::validate_combination(fn, num_classes);
  if (k < 1 || k > num_classes) {
    throw ValueError(detail::concat("rank ", k, " outside [1, ", num_classes, "]"));
  }
  const double kd = static_cast<double>(k);
  const double big_k = static_cast<double>(num_classes);
  if (const auto* poly = std::get_if<Polynomial>(&fn)) {
    const double p = poly->pivot_for(num_classes);
    if (kd <= p) {
      // p == 1 leaves only k == 1 on this branch: the top endpoint.
      if (p == 1.0) return 1.0;
      return detail::ipow((kd - p) / (1.0 - p), poly->eta);
    }
    const double sign = (poly->eta + 1) % 2 == 0 ? 1.0 : -1.0;
    return sign * detail::ipow((kd - p) / (p - big_k), poly->eta);
  }
  const auto& tb = std::get<TopBottom>(fn);
  if (k <= tb.top) return 1.0;
  if (k > num_classes - tb.bottom) return -1.0;
  return 0.0;
}

inline Tensor weights_vector(const CombinationFn& fn, std::size_t num_classes) {
  detail::validate_combination(fn, num_classes);
  Tensor out({num_classes});
  for (std::size_t k = 1; k <= num_classes; ++k) out[k - 1] = weight(fn, k, num_classes);
  return out;
}

namespace detail {

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == s.npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline long long parse_integer(const std::string& text, const std::string& ctx) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception&) {
    throw ValueError("expected an integer for " + ctx + ", got '" + text + "'");
  }
  if (used != text.size()) throw ValueError("expected an integer for " + ctx + ", got '" + text + "'");
  return v;
}

inline double parse_real(const std::string& text, const std::string& ctx) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ValueError("expected a number for " + ctx + ", got '" + text + "'");
  }
  if (used != text.size()) throw ValueError("expected a number for " + ctx + ", got '" + text + "'");
  return v;
}

}  // namespace detail

// Parses `poly:eta=2[,p=auto|<real>]` or `topbot:i=1,b=10`.
inline CombinationFn parse_combination(std::string_view text) {
  const std::string spec = detail::trim(text);
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string args = colon == std::string::npos ? std::string{} : spec.substr(colon + 1);

  std::vector<std::pair<std::string, std::string>> kv;
  if (!args.empty()) {
    for (const auto& part : detail::split(args, ',')) {
      const auto eq = part.find('=');
      if (eq == std::string::npos) {
        throw ValueError("malformed combination argument '" + part + "' in '" + spec + "'");
      }
      kv.emplace_back(detail::trim(part.substr(0, eq)), detail::trim(part.substr(eq + 1)));
    }
  }

  if (kind == "poly") {
    Polynomial poly;
    for (const auto& [key, value] : kv) {
      if (key == "eta") {
        const auto eta = detail::parse_integer(value, "eta");
        if (eta < 0) throw ValueError("eta must be non-negative in '" + spec + "'");
        poly.eta = static_cast<int>(eta);
      } else if (key == "p") {
        if (value == "auto") {
          poly.pivot.reset();
        } else {
          poly.pivot = detail::parse_real(value, "p");
        }
      } else {
        throw ValueError("unknown polynomial argument '" + key + "' in '" + spec + "'");
      }
    }
    return poly;
  }
  if (kind == "topbot") {
    TopBottom tb;
    for (const auto& [key, value] : kv) {
      const auto n = detail::parse_integer(value, key);
      if (n < 0) throw ValueError("counts must be non-negative in '" + spec + "'");
      if (key == "i") {
        tb.top = static_cast<std::size_t>(n);
      } else if (key == "b") {
        tb.bottom = static_cast<std::size_t>(n);
      } else {
        throw ValueError("unknown top/bottom argument '" + key + "' in '" + spec + "'");
      }
    }
    return tb;
  }
  throw ValueError("unknown combination function '" + spec + "' (expected poly:... or topbot:...)");
}

// Splits a list of combination specs. Entries are separated by ';', or by a
// ',' that starts a new `poly:` / `topbot:` entry.
inline std::vector<CombinationFn> parse_combination_list(std::string_view text) {
  std::vector<std::string> entries;
  for (const auto& chunk : detail::split(text, ';')) {
    std::string current;
    for (const auto& piece : detail::split(chunk, ',')) {
      const std::string t = detail::trim(piece);
      const bool starts_entry = t.rfind("poly:", 0) == 0 || t.rfind("topbot:", 0) == 0 ||
                                t == "poly" || t == "topbot";
      if (starts_entry && !detail::trim(current).empty()) {
        entries.push_back(current);
        current.clear();
      }
      if (!current.empty()) current += ',';
      current += t;
    }
    if (!detail::trim(current).empty()) entries.push_back(current);
  }
  if (entries.empty()) throw ValueError("empty combination list");
  std::vector<CombinationFn> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(parse_combination(e));
  return out;
}

inline std::string to_string(const CombinationFn& fn) {
  if (const auto* poly = std::get_if<Polynomial>(&fn)) {
    std::string s = "poly:eta=" + std::to_string(poly->eta);
    if (poly->pivot) {
      std::ostringstream oss;
      oss << *poly->pivot;
      s += ",p=" + oss.str();
    }
    return s;
  }
  const auto& tb = std::get<TopBottom>(fn);
  return "topbot:i=" + std::to_string(tb.top) + ",b=" + std::to_string(tb.bottom);
}

}  // namespace nlccam
