#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "slalom/core.hpp"
#include "slalom/oracles.hpp"

namespace slalom::microformer {

enum class Mode {
  Encoder,  ///< classify at the first position, full attention
  Decoder,  ///< classify at the last position, causal mask
};

enum class Activation { Relu, Gelu, Tanh };

/// One attention head. Row-vector convention: q_i = h_i W_Q + b_Q.
struct Head {
  Eigen::MatrixXd w_q, w_k, w_v;  // d x d_h
  Eigen::VectorXd b_q, b_k, b_v;  // d_h
  Eigen::MatrixXd proj;           // d_h x d, maps the head output back to the residual stream
};

/// Either the identity or act(x W1 + b1) W2 + b2.
struct FeedForward {
  bool identity = true;
  Activation activation = Activation::Relu;
  Eigen::MatrixXd w1;  // d x hidden
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // hidden x d
  Eigen::VectorXd b2;
};

/// Single-layer transformer without positional embeddings.
struct MicroformerParams {
  std::size_t d = 0;
  std::size_t d_h = 0;
  Eigen::MatrixXd embedding;  // |V| x d
  std::vector<Head> heads;
  FeedForward ffn;
  Eigen::MatrixXd w_cls;  // 2 x d
  Eigen::Vector2d b_cls = Eigen::Vector2d::Zero();
  Mode mode = Mode::Encoder;
  std::size_t context_length = 512;

  std::size_t vocab_size() const noexcept { return static_cast<std::size_t>(embedding.rows()); }
};

/// Throws DimMismatch on inconsistent shapes or InvalidParams on non-finite weights.
void validate(const MicroformerParams& p);

/// Attention matrix of one head, |t| x |t|, rows sum to one over unmasked entries.
Eigen::MatrixXd attention(const MicroformerParams& p, TokenView seq, std::size_t head);

/// Two class logits at the classification position.
Eigen::Vector2d logits(const MicroformerParams& p, TokenView seq);

/// Log odds l_1 - l_0.
double forward(const MicroformerParams& p, TokenView seq);

/// Weights for which forward() reproduces the SLALOM surrogate `p`.
/// Extra heads are silenced with a zero projection.
MicroformerParams build_slalom_transformer(const SlalomParams& p, std::size_t d, std::size_t d_h,
                                           std::size_t heads = 1);

struct RandomConfig {
  std::size_t vocab_size = 20;
  std::size_t d = 8;
  std::size_t d_h = 4;
  std::size_t heads = 1;
  Mode mode = Mode::Encoder;
  std::size_t ffn_hidden = 16;  ///< 0 keeps the identity feed-forward
  Activation activation = Activation::Gelu;
  double weight_scale = 1.0;
  std::size_t context_length = 512;
};

MicroformerParams random_params(const RandomConfig& config, std::mt19937_64& rng);

struct ConstancyReport {
  TokenId token = 0;
  std::vector<double> outputs;  ///< output on [token] * k for k = 1..C
  double spread = 0.0;          ///< max - min over outputs
};

/// Scores repeated single-token sequences of every length up to `context`.
ConstancyReport constancy_demo(const Oracle& oracle, TokenId token, std::size_t context);
ConstancyReport constancy_demo(const MicroformerParams& p, TokenId token, std::size_t context);

class MicroformerOracle final : public Oracle {
 public:
  explicit MicroformerOracle(MicroformerParams params);
  double score(TokenView seq) const override { return forward(params_, seq); }
  const MicroformerParams& params() const noexcept { return params_; }

 private:
  MicroformerParams params_;
};

nlohmann::json to_json(const MicroformerParams& p);
MicroformerParams from_json(const nlohmann::json& j);

}  // namespace slalom::microformer
