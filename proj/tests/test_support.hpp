#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "slalom/core.hpp"
#include "slalom/error.hpp"

namespace slalom::testing {

inline SlalomParams random_params(std::size_t vocab, std::mt19937_64& rng, double s_scale = 1.0,
                                  double v_scale = 1.0) {
  std::normal_distribution<double> n01(0.0, 1.0);
  SlalomParams p;
  p.s.resize(vocab);
  p.v.resize(vocab);
  for (std::size_t i = 0; i < vocab; ++i) {
    p.s[i] = s_scale * n01(rng);
    p.v[i] = v_scale * n01(rng);
  }
  return normalize_params(p);
}

inline TokenSeq random_sequence(std::size_t vocab, std::size_t length, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(vocab - 1));
  TokenSeq seq(length);
  for (auto& t : seq) t = tok(rng);
  return seq;
}

// Two-token running example: a = 0, b = 1.
inline SlalomParams ab_params() { return SlalomParams{{0.5, -0.5}, {1.0, -1.0}, 0.0}; }

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected slalom::Error");
  return ErrorCode::Io;
}

}  // namespace slalom::testing
