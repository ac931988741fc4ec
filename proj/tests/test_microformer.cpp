#include <cmath>

#include "doctest.h"
#include "slalom/microformer.hpp"
#include "slalom/oracles.hpp"
#include "slalom/slalom_model.hpp"
#include "test_support.hpp"

using namespace slalom;
using namespace slalom::microformer;
using doctest::Approx;
using testing::code_of;

TEST_CASE("all-zero transformer outputs zero") {
  RandomConfig cfg;
  cfg.ffn_hidden = 0;
  std::mt19937_64 rng(51);
  auto p = random_params(cfg, rng);
  p.embedding.setZero();
  for (auto& h : p.heads) {
    h.w_q.setZero();
    h.w_k.setZero();
    h.w_v.setZero();
    h.b_q.setZero();
    h.b_k.setZero();
    h.b_v.setZero();
  }
  p.w_cls.setZero();
  p.b_cls.setZero();
  for (int i = 0; i < 20; ++i) CHECK(forward(p, testing::random_sequence(20, 1 + i, rng)) == 0.0);
}

TEST_CASE("constructed transformer reproduces the surrogate") {
  const auto sp = testing::ab_params();
  auto mp = build_slalom_transformer(sp, 3, 3);
  CHECK(forward(mp, TokenSeq{0}) == Approx(1.0).epsilon(1e-12));
  CHECK(forward(mp, TokenSeq{0, 1}) == Approx(0.46212).epsilon(1e-5));
  CHECK(forward(mp, TokenSeq{0, 0, 1}) == Approx(0.68927).epsilon(1e-5));

  std::mt19937_64 rng(52);
  for (std::size_t heads : {1u, 3u}) {
    auto p = testing::random_params(20, rng, 2.0);
    auto m = build_slalom_transformer(p, 6, 4, heads);
    for (int i = 0; i < 200; ++i) {
      auto seq = testing::random_sequence(20, 1 + i % 30, rng);
      CHECK(std::abs(forward(m, seq) - eval(p, seq)) < 1e-9);
    }
  }
  CHECK(code_of([&] { build_slalom_transformer(sp, 2, 3); }) == ErrorCode::DimTooSmall);
  CHECK(code_of([&] { build_slalom_transformer(sp, 3, 2); }) == ErrorCode::DimTooSmall);
}

TEST_CASE("attention rows are stochastic") {
  std::mt19937_64 rng(53);
  for (auto mode : {Mode::Encoder, Mode::Decoder}) {
    RandomConfig cfg;
    cfg.mode = mode;
    cfg.heads = 2;
    auto p = random_params(cfg, rng);
    auto seq = testing::random_sequence(20, 17, rng);
    for (std::size_t h = 0; h < 2; ++h) {
      auto a = attention(p, seq, h);
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-12);
        if (mode == Mode::Decoder) {
          for (Eigen::Index j = i + 1; j < a.cols(); ++j) CHECK(a(i, j) == 0.0);
        }
      }
    }
  }
}

TEST_CASE("same-token sequences give a length-independent output") {
  std::mt19937_64 rng(54);
  for (auto mode : {Mode::Encoder, Mode::Decoder}) {
    for (auto act : {Activation::Relu, Activation::Gelu, Activation::Tanh}) {
      RandomConfig cfg;
      cfg.mode = mode;
      cfg.activation = act;
      cfg.heads = 2;
      auto p = random_params(cfg, rng);
      for (TokenId t : {0u, 7u, 19u}) {
        auto rep = constancy_demo(p, t, 30);
        CHECK(rep.outputs.size() == 30);
        CHECK(rep.spread < 1e-9);
      }
    }
  }
}

TEST_CASE("encoder and decoder agree on same-token sequences") {
  std::mt19937_64 rng(55);
  RandomConfig cfg;
  auto enc = random_params(cfg, rng);
  auto dec = enc;
  dec.mode = Mode::Decoder;
  for (std::size_t k = 1; k <= 12; ++k) {
    CHECK(std::abs(forward(enc, TokenSeq(k, 3)) - forward(dec, TokenSeq(k, 3))) < 1e-12);
  }
}

TEST_CASE("constancy of the construction and of the additive control") {
  auto mp = build_slalom_transformer(testing::ab_params(), 4, 3);
  auto rep = constancy_demo(mp, 0, 20);
  for (double y : rep.outputs) CHECK(y == Approx(1.0).epsilon(1e-12));

  LinearOracle lin(LinearModelParams{{0.0, 1.5}, 0.0});
  auto grow = constancy_demo(lin, 1, 10);
  for (std::size_t k = 1; k <= 10; ++k) CHECK(grow.outputs[k - 1] == Approx(1.5 * k));
  CHECK(grow.spread == Approx(9 * 1.5));
}

TEST_CASE("context length and vocabulary are enforced") {
  RandomConfig cfg;
  cfg.context_length = 8;
  std::mt19937_64 rng(56);
  auto p = random_params(cfg, rng);
  CHECK(code_of([&] { forward(p, TokenSeq(9, 0)); }) == ErrorCode::TooLong);
  CHECK(code_of([&] { forward(p, TokenSeq{20}); }) == ErrorCode::OutOfVocab);
  CHECK(code_of([&] { forward(p, TokenSeq{}); }) == ErrorCode::EmptySequence);
  p.heads[0].w_q.resize(3, 3);
  CHECK(code_of([&] { validate(p); }) == ErrorCode::DimMismatch);
}

TEST_CASE("parameters round-trip through JSON") {
  std::mt19937_64 rng(57);
  RandomConfig cfg;
  cfg.heads = 2;
  cfg.mode = Mode::Decoder;
  auto p = random_params(cfg, rng);
  auto q = from_json(to_json(p));
  CHECK(q.mode == Mode::Decoder);
  CHECK(q.heads.size() == 2);
  for (int i = 0; i < 20; ++i) {
    auto seq = testing::random_sequence(20, 1 + i, rng);
    CHECK(forward(p, seq) == forward(q, seq));
  }
  cfg.ffn_hidden = 0;
  auto r = random_params(cfg, rng);
  CHECK(from_json(to_json(r)).ffn.identity);
}
