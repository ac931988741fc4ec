#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "slalom/slalom_model.hpp"
#include "test_support.hpp"

using namespace slalom;
using doctest::Approx;
using testing::code_of;

namespace {

constexpr TokenId a = 0, b = 1;

// Shapley values by enumerating every ordering of the positions.
std::vector<double> shapley_by_permutations(const SlalomParams& p, const TokenSeq& seq) {
  std::vector<std::size_t> order(seq.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> phi(seq.size(), 0.0);
  double count = 0.0;
  do {
    TokenSeq prefix;
    std::vector<bool> in(seq.size(), false);
    double prev = 0.0;
    for (std::size_t pos : order) {
      in[pos] = true;
      prefix.clear();
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (in[i]) prefix.push_back(seq[i]);
      }
      const double cur = eval(p, prefix);
      phi[pos] += cur - prev;
      prev = cur;
    }
    count += 1.0;
  } while (std::next_permutation(order.begin(), order.end()));
  for (auto& x : phi) x /= count;
  return phi;
}

}  // namespace

TEST_CASE("attention weights") {
  SlalomParams zero{{0.0, 0.0}, {1.0, -1.0}, 0.0};
  auto w = attention_weights(zero, TokenSeq{a, b});
  CHECK(w[0] == Approx(0.5));
  CHECK(w[1] == Approx(0.5));
  CHECK(attention_weights(zero, TokenSeq{b}) == std::vector<double>{1.0});

  auto w2 = attention_weights(testing::ab_params(), TokenSeq{a, b});
  CHECK(w2[0] == Approx(0.73106).epsilon(1e-5));
  CHECK(w2[1] == Approx(0.26894).epsilon(1e-5));
}

TEST_CASE("evaluation of the running example") {
  const auto p = testing::ab_params();
  CHECK(eval(p, TokenSeq{a}) == 1.0);
  CHECK(eval(p, TokenSeq{b}) == -1.0);
  CHECK(eval(p, TokenSeq{a, b}) == Approx(std::tanh(0.5)).epsilon(1e-12));
  CHECK(eval(p, TokenSeq{a, b}) == Approx(0.46212).epsilon(1e-5));
  const double e = std::exp(0.5), ei = std::exp(-0.5);
  CHECK(eval(p, TokenSeq{a, a, b}) == Approx((2 * e - ei) / (2 * e + ei)).epsilon(1e-12));
  CHECK(eval(p, TokenSeq{a, a, b}) == Approx(0.68927).epsilon(1e-5));
}

TEST_CASE("evaluation errors") {
  const auto p = testing::ab_params();
  CHECK(code_of([&] { eval(p, TokenSeq{}); }) == ErrorCode::EmptySequence);
  CHECK(code_of([&] { eval(p, TokenSeq{2}); }) == ErrorCode::OutOfVocab);
  std::vector<double> zeros{0.0, 0.0};
  CHECK(code_of([&] { eval_weighted(p, TokenSeq{a, b}, zeros); }) == ErrorCode::AllMasked);
  std::vector<double> one{1.0};
  CHECK(code_of([&] { eval_weighted(p, TokenSeq{a, b}, one); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("extreme importances stay finite") {
  SlalomParams p{{400.0, -400.0}, {2.0, -3.0}, 0.0};
  const double f = eval(p, TokenSeq{a, b, b});
  CHECK(std::isfinite(f));
  CHECK(f == Approx(2.0));
}

TEST_CASE("soft removal") {
  const auto p = testing::ab_params();
  const TokenSeq seq{a, b};
  std::vector<double> ones{1.0, 1.0}, first{1.0, 0.0}, half{1.0, 0.5};
  CHECK(eval_weighted(p, seq, ones) == eval(p, seq));
  CHECK(eval_weighted(p, seq, first) == 1.0);
  CHECK(eval_weighted(p, seq, half) == Approx(0.68927).epsilon(1e-5));
  CHECK(eval_weighted(p, seq, half) == Approx(eval(p, TokenSeq{a, a, b})).epsilon(1e-12));
}

TEST_CASE("binary presence equals evaluation on the subsequence exactly") {
  std::mt19937_64 rng(11);
  std::bernoulli_distribution coin(0.5);
  for (int draw = 0; draw < 200; ++draw) {
    auto p = testing::random_params(15, rng, 2.0);
    auto seq = testing::random_sequence(15, 1 + draw % 20, rng);
    std::vector<double> lambda(seq.size());
    TokenSeq kept;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      lambda[i] = coin(rng) ? 1.0 : 0.0;
      if (lambda[i] == 1.0) kept.push_back(seq[i]);
    }
    if (kept.empty()) continue;
    CHECK(eval_weighted(p, seq, lambda) == eval(p, kept));
  }
}

TEST_CASE("shift invariance of the importance map") {
  std::mt19937_64 rng(12);
  for (int draw = 0; draw < 100; ++draw) {
    auto p = testing::random_params(10, rng, 2.0);
    auto q = p;
    const double delta = 7.3 * (draw % 5) - 10.0;
    for (auto& s : q.s) s += delta;
    auto seq = testing::random_sequence(10, 1 + draw % 25, rng);
    std::vector<double> lambda(seq.size(), 0.7);
    CHECK(std::abs(eval(p, seq) - eval(q, seq)) < 1e-12);
    CHECK(std::abs(eval_weighted(p, seq, lambda) - eval_weighted(q, seq, lambda)) < 1e-12);
    CHECK(testing::max_abs_diff(attention_weights(p, seq), attention_weights(q, seq)) < 1e-12);
    auto lp = linearized_scores(p, seq), lq = linearized_scores(q, seq);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      CHECK(lq[i] == Approx(lp[i] * std::exp(delta)).epsilon(1e-9));
    }
  }
}

TEST_CASE("output is a convex combination of token values") {
  std::mt19937_64 rng(13);
  for (int draw = 0; draw < 300; ++draw) {
    auto p = testing::random_params(20, rng, 3.0, 2.0);
    auto seq = testing::random_sequence(20, 1 + draw % 30, rng);
    double lo = INFINITY, hi = -INFINITY;
    for (TokenId t : seq) {
      lo = std::min(lo, p.v[t]);
      hi = std::max(hi, p.v[t]);
    }
    const double f = eval(p, seq);
    CHECK(f >= lo - 1e-12);
    CHECK(f <= hi + 1e-12);
  }
}

TEST_CASE("repeating a token does not change the output") {
  std::mt19937_64 rng(14);
  auto p = testing::random_params(8, rng, 2.0);
  for (TokenId t = 0; t < 8; ++t) {
    for (std::size_t k = 1; k <= 40; ++k) {
      CHECK(eval(p, TokenSeq(k, t)) == Approx(p.v[t]).epsilon(1e-12));
    }
  }
}

TEST_CASE("linearized scores") {
  SlalomParams flat{{0.0, 0.0, 0.0}, {0.3, -2.0, 1.0}, 0.0};
  auto sc = linearized_scores(flat, TokenSeq{0, 1, 2});
  CHECK(sc == std::vector<double>{0.3, -2.0, 1.0});

  const auto p = testing::ab_params();
  auto prop = linearized_scores(p, TokenSeq{a, b});
  CHECK(prop[0] == Approx(1.64872).epsilon(1e-5));
  CHECK(prop[1] == Approx(-0.60653).epsilon(1e-5));

  auto grad = linearized_scores(p, TokenSeq{a, b}, LinearizedForm::ExactGradient);
  CHECK(grad[0] == Approx(0.39322).epsilon(1e-5));
  CHECK(grad[1] == Approx(-0.39322).epsilon(1e-5));
}

TEST_CASE("exact gradient form matches the derivative of soft removal") {
  std::mt19937_64 rng(15);
  for (int draw = 0; draw < 20; ++draw) {
    auto p = testing::random_params(12, rng);
    auto seq = testing::random_sequence(12, 2 + draw % 10, rng);
    auto g = linearized_scores(p, seq, LinearizedForm::ExactGradient);
    const double h = 1e-6;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      std::vector<double> lambda(seq.size(), 1.0);
      lambda[i] = 1.0 - h;
      const double fd = (eval(p, seq) - eval_weighted(p, seq, lambda)) / h;
      CHECK(g[i] == Approx(fd).epsilon(1e-4).scale(1.0));
    }
  }
}

TEST_CASE("shapley values of small sequences") {
  const auto p = testing::ab_params();
  CHECK(shapley_exact(p, TokenSeq{b}) == std::vector<double>{-1.0});
  auto phi = shapley_exact(p, TokenSeq{a, b});
  CHECK(phi[0] == Approx(1.23106).epsilon(1e-5));
  CHECK(phi[1] == Approx(-0.76894).epsilon(1e-5));
  CHECK(phi[0] + phi[1] == Approx(0.46212).epsilon(1e-5));
  auto same = shapley_exact(p, TokenSeq{a, a});
  CHECK(same[0] == Approx(0.5));
  CHECK(same[1] == Approx(0.5));
  CHECK(code_of([&] { shapley_exact(p, TokenSeq(kMaxExactShapleyLength + 1, a)); }) ==
        ErrorCode::TooLongForExact);
}

TEST_CASE("exact shapley agrees with enumeration over orderings") {
  std::mt19937_64 rng(16);
  for (std::size_t n = 1; n <= 7; ++n) {
    auto p = testing::random_params(6, rng, 1.5);
    auto seq = testing::random_sequence(6, n, rng);
    CHECK(testing::max_abs_diff(shapley_exact(p, seq), shapley_by_permutations(p, seq)) < 1e-12);
  }
}

TEST_CASE("shapley efficiency") {
  std::mt19937_64 rng(17);
  for (std::size_t n = 1; n <= 12; ++n) {
    auto p = testing::random_params(30, rng, 2.0);
    auto seq = testing::random_sequence(30, n, rng);
    auto phi = shapley_exact(p, seq);
    double sum = 0.0;
    for (double x : phi) sum += x;
    CHECK(std::abs(sum - eval(p, seq)) < 1e-9);
  }
}

TEST_CASE("sampled shapley") {
  const auto p = testing::ab_params();
  CHECK(shapley_sampled(p, TokenSeq{a}, 3, 1) == std::vector<double>{1.0});
  auto two = shapley_sampled(p, TokenSeq{a, b}, 20000, 2);
  CHECK(two[0] == Approx(1.23106).epsilon(0.01));
  CHECK(two[1] == Approx(-0.76894).epsilon(0.01));
  CHECK(shapley_sampled(p, TokenSeq{a, b, a}, 50, 9) == shapley_sampled(p, TokenSeq{a, b, a}, 50, 9));

  std::mt19937_64 rng(18);
  auto q = testing::random_params(20, rng);
  auto seq = testing::random_sequence(20, 10, rng);
  CHECK(testing::max_abs_diff(shapley_sampled(q, seq, 20000, 3), shapley_exact(q, seq)) < 0.05);
  CHECK(code_of([&] { shapley_sampled(q, seq, 0, 3); }) == ErrorCode::InvalidParams);
}

TEST_CASE("multi-class evaluation") {
  MultiClassSlalomParams three{{0.0}, {{1.0}, {0.0}, {-1.0}}, 0.0};
  auto out = eval_multiclass(three, TokenSeq{0});
  CHECK(out.posterior[0] == Approx(0.66524).epsilon(1e-5));
  CHECK(out.posterior[1] == Approx(0.24473).epsilon(1e-5));
  CHECK(out.posterior[2] == Approx(0.09003).epsilon(1e-5));

  MultiClassSlalomParams flat{{0.0, 0.0}, {{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}}, 0.0};
  for (double q : eval_multiclass(flat, TokenSeq{0, 1, 1}).posterior) CHECK(q == Approx(0.25));

  std::mt19937_64 rng(19);
  auto p = testing::random_params(9, rng);
  MultiClassSlalomParams two{p.s, {{}, {}}, 0.0};
  for (double v : p.v) {
    two.v[0].push_back(-v / 2);
    two.v[1].push_back(v / 2);
  }
  for (int draw = 0; draw < 20; ++draw) {
    auto seq = testing::random_sequence(9, 1 + draw, rng);
    auto m = eval_multiclass(two, seq);
    CHECK(m.scores[1] - m.scores[0] == Approx(eval(p, seq)).epsilon(1e-12));
  }
}
