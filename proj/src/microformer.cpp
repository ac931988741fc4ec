#include "slalom/microformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "slalom/slalom_model.hpp"

namespace slalom::microformer {

namespace {

void expect_shape(const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorCode::DimMismatch, std::string(name) + " has shape " + std::to_string(m.rows()) + "x" +
                                            std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                                            std::to_string(cols));
  }
  if (!m.allFinite()) throw Error(ErrorCode::InvalidParams, std::string(name) + " has non-finite entries");
}

void expect_size(const Eigen::VectorXd& v, Eigen::Index n, const char* name) {
  if (v.size() != n) throw Error(ErrorCode::DimMismatch, std::string(name) + " has wrong length");
  if (!v.allFinite()) throw Error(ErrorCode::InvalidParams, std::string(name) + " has non-finite entries");
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Gelu: return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    case Activation::Tanh: return std::tanh(x);
  }
  return x;
}

Eigen::MatrixXd embed(const MicroformerParams& p, TokenView seq) {
  if (seq.empty()) throw Error(ErrorCode::EmptySequence, "microformer needs at least one token");
  validate_sequence(p.vocab_size(), seq, p.context_length);
  Eigen::MatrixXd h(static_cast<Eigen::Index>(seq.size()), static_cast<Eigen::Index>(p.d));
  for (std::size_t i = 0; i < seq.size(); ++i) h.row(static_cast<Eigen::Index>(i)) = p.embedding.row(seq[i]);
  return h;
}

Eigen::MatrixXd head_attention(const MicroformerParams& p, const Head& head, const Eigen::MatrixXd& h) {
  const Eigen::Index n = h.rows();
  const Eigen::MatrixXd q = (h * head.w_q).rowwise() + head.b_q.transpose();
  const Eigen::MatrixXd k = (h * head.w_k).rowwise() + head.b_k.transpose();
  Eigen::MatrixXd a = (q * k.transpose()) / std::sqrt(static_cast<double>(p.d_h));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index visible = p.mode == Mode::Decoder ? i + 1 : n;
    const double top = a.row(i).head(visible).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j < visible) {
        a(i, j) = std::exp(a(i, j) - top);
        z += a(i, j);
      } else {
        a(i, j) = 0.0;
      }
    }
    a.row(i) /= z;
  }
  return a;
}

Eigen::VectorXd apply_ffn(const FeedForward& ffn, const Eigen::VectorXd& x) {
  if (ffn.identity) return x;
  Eigen::VectorXd hidden = ffn.w1.transpose() * x + ffn.b1;
  for (Eigen::Index i = 0; i < hidden.size(); ++i) hidden(i) = activate(ffn.activation, hidden(i));
  return ffn.w2.transpose() * hidden + ffn.b2;
}

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

}  // namespace

void validate(const MicroformerParams& p) {
  if (p.d < 1 || p.d_h < 1 || p.heads.empty()) throw Error(ErrorCode::DimMismatch, "d, d_h and head count must be >= 1");
  if (p.embedding.rows() < 1) throw Error(ErrorCode::DimMismatch, "empty embedding table");
  const auto d = static_cast<Eigen::Index>(p.d);
  const auto dh = static_cast<Eigen::Index>(p.d_h);
  expect_shape(p.embedding, p.embedding.rows(), d, "embedding");
  for (const auto& head : p.heads) {
    expect_shape(head.w_q, d, dh, "w_q");
    expect_shape(head.w_k, d, dh, "w_k");
    expect_shape(head.w_v, d, dh, "w_v");
    expect_size(head.b_q, dh, "b_q");
    expect_size(head.b_k, dh, "b_k");
    expect_size(head.b_v, dh, "b_v");
    expect_shape(head.proj, dh, d, "proj");
  }
  if (!p.ffn.identity) {
    const Eigen::Index hidden = p.ffn.w1.cols();
    expect_shape(p.ffn.w1, d, hidden, "ffn.w1");
    expect_size(p.ffn.b1, hidden, "ffn.b1");
    expect_shape(p.ffn.w2, hidden, d, "ffn.w2");
    expect_size(p.ffn.b2, d, "ffn.b2");
  }
  expect_shape(p.w_cls, 2, d, "w_cls");
  if (!p.b_cls.allFinite()) throw Error(ErrorCode::InvalidParams, "b_cls has non-finite entries");
}

Eigen::MatrixXd attention(const MicroformerParams& p, TokenView seq, std::size_t head) {
  if (head >= p.heads.size()) throw Error(ErrorCode::DimMismatch, "head index out of range");
  return head_attention(p, p.heads[head], embed(p, seq));
}

Eigen::Vector2d logits(const MicroformerParams& p, TokenView seq) {
  const Eigen::MatrixXd h = embed(p, seq);
  const Eigen::Index r = p.mode == Mode::Decoder ? h.rows() - 1 : 0;
  Eigen::VectorXd x = h.row(r).transpose();
  for (const auto& head : p.heads) {
    const Eigen::MatrixXd a = head_attention(p, head, h);
    const Eigen::MatrixXd v = (h * head.w_v).rowwise() + head.b_v.transpose();
    const Eigen::VectorXd s_r = v.transpose() * a.row(r).transpose();
    x += head.proj.transpose() * s_r;
  }
  const Eigen::VectorXd out = apply_ffn(p.ffn, x);
  return p.w_cls * out + p.b_cls;
}

double forward(const MicroformerParams& p, TokenView seq) {
  const Eigen::Vector2d l = logits(p, seq);
  return l(1) - l(0);
}

MicroformerParams build_slalom_transformer(const SlalomParams& p, std::size_t d, std::size_t d_h,
                                           std::size_t heads) {
  if (d < 3 || d_h < 3) throw Error(ErrorCode::DimTooSmall, "construction needs d >= 3 and d_h >= 3");
  if (heads < 1) throw Error(ErrorCode::DimTooSmall, "need at least one head");
  validate_params(p);
  const auto dd = static_cast<Eigen::Index>(d);
  const auto dh = static_cast<Eigen::Index>(d_h);

  MicroformerParams out;
  out.d = d;
  out.d_h = d_h;
  out.mode = Mode::Encoder;
  out.context_length = 0;
  // e(tau) = [s(tau), v(tau), 0, ...]
  out.embedding = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p.vocab_size()), dd);
  for (std::size_t t = 0; t < p.vocab_size(); ++t) {
    out.embedding(static_cast<Eigen::Index>(t), 0) = std::clamp(p.s[t], -kImportanceClamp, kImportanceClamp);
    out.embedding(static_cast<Eigen::Index>(t), 1) = p.v[t];
  }

  Head slalom_head;
  // Constant query e_0 against a key carrying sqrt(d_h) * s(t_j): after the
  // 1/sqrt(d_h) scale the pre-softmax score is s(t_j) for every query.
  slalom_head.w_q = Eigen::MatrixXd::Zero(dd, dh);
  slalom_head.b_q = Eigen::VectorXd::Zero(dh);
  slalom_head.b_q(0) = 1.0;
  slalom_head.w_k = Eigen::MatrixXd::Zero(dd, dh);
  slalom_head.w_k(0, 0) = std::sqrt(static_cast<double>(d_h));
  slalom_head.b_k = Eigen::VectorXd::Zero(dh);
  // Value slot 2 carries v(t_j); slots 0 and 1 stay clear of the skip connection.
  slalom_head.w_v = Eigen::MatrixXd::Zero(dd, dh);
  slalom_head.w_v(1, 2) = 1.0;
  slalom_head.b_v = Eigen::VectorXd::Zero(dh);
  slalom_head.proj = Eigen::MatrixXd::Identity(dh, dd);
  out.heads.push_back(slalom_head);

  Head silent = slalom_head;
  silent.proj = Eigen::MatrixXd::Zero(dh, dd);
  for (std::size_t h = 1; h < heads; ++h) out.heads.push_back(silent);

  out.ffn.identity = true;
  out.w_cls = Eigen::MatrixXd::Zero(2, dd);
  out.w_cls(1, 2) = 1.0;
  out.b_cls = Eigen::Vector2d::Zero();
  return out;
}

MicroformerParams random_params(const RandomConfig& config, std::mt19937_64& rng) {
  if (config.vocab_size < 1 || config.d < 1 || config.d_h < 1 || config.heads < 1) {
    throw Error(ErrorCode::DimMismatch, "random microformer needs positive dimensions");
  }
  const auto d = static_cast<Eigen::Index>(config.d);
  const auto dh = static_cast<Eigen::Index>(config.d_h);
  const double scale = config.weight_scale;
  const double fan_d = scale / std::sqrt(static_cast<double>(config.d));
  const double fan_dh = scale / std::sqrt(static_cast<double>(config.d_h));

  MicroformerParams p;
  p.d = config.d;
  p.d_h = config.d_h;
  p.mode = config.mode;
  p.context_length = config.context_length;
  p.embedding = gaussian(static_cast<Eigen::Index>(config.vocab_size), d, scale, rng);
  for (std::size_t h = 0; h < config.heads; ++h) {
    Head head;
    head.w_q = gaussian(d, dh, fan_d, rng);
    head.w_k = gaussian(d, dh, fan_d, rng);
    head.w_v = gaussian(d, dh, fan_d, rng);
    head.b_q = gaussian(dh, 1, scale * 0.1, rng);
    head.b_k = gaussian(dh, 1, scale * 0.1, rng);
    head.b_v = gaussian(dh, 1, scale * 0.1, rng);
    head.proj = gaussian(dh, d, fan_dh, rng);
    p.heads.push_back(std::move(head));
  }
  if (config.ffn_hidden > 0) {
    const auto hidden = static_cast<Eigen::Index>(config.ffn_hidden);
    p.ffn.identity = false;
    p.ffn.activation = config.activation;
    p.ffn.w1 = gaussian(d, hidden, fan_d, rng);
    p.ffn.b1 = gaussian(hidden, 1, scale * 0.1, rng);
    p.ffn.w2 = gaussian(hidden, d, scale / std::sqrt(static_cast<double>(config.ffn_hidden)), rng);
    p.ffn.b2 = gaussian(d, 1, scale * 0.1, rng);
  }
  p.w_cls = gaussian(2, d, fan_d, rng);
  p.b_cls = gaussian(2, 1, scale * 0.1, rng);
  return p;
}

ConstancyReport constancy_demo(const Oracle& oracle, TokenId token, std::size_t context) {
  if (context < 2) throw Error(ErrorCode::InvalidParams, "context length must be >= 2");
  ConstancyReport report;
  report.token = token;
  report.outputs.reserve(context);
  TokenSeq seq;
  for (std::size_t k = 1; k <= context; ++k) {
    seq.push_back(token);
    report.outputs.push_back(oracle.score(seq));
  }
  const auto [lo, hi] = std::minmax_element(report.outputs.begin(), report.outputs.end());
  report.spread = *hi - *lo;
  return report;
}

ConstancyReport constancy_demo(const MicroformerParams& p, TokenId token, std::size_t context) {
  return constancy_demo(MicroformerOracle(p), token, context);
}

MicroformerOracle::MicroformerOracle(MicroformerParams params) : params_(std::move(params)) { validate(params_); }

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw Error(ErrorCode::DimMismatch, "matrix data length does not match its shape");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = data[static_cast<std::size_t>(i * cols + k)];
  return m;
}

Eigen::VectorXd vector_from(const nlohmann::json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

std::vector<double> vector_json(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Gelu: return "gelu";
    case Activation::Tanh: return "tanh";
  }
  return "relu";
}

Activation activation_from(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "gelu") return Activation::Gelu;
  if (name == "tanh") return Activation::Tanh;
  throw Error(ErrorCode::InvalidParams, "unknown activation '" + name + "'");
}

}  // namespace

nlohmann::json to_json(const MicroformerParams& p) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : p.heads) {
    heads.push_back({{"w_q", matrix_json(h.w_q)},
                     {"w_k", matrix_json(h.w_k)},
                     {"w_v", matrix_json(h.w_v)},
                     {"b_q", vector_json(h.b_q)},
                     {"b_k", vector_json(h.b_k)},
                     {"b_v", vector_json(h.b_v)},
                     {"proj", matrix_json(h.proj)}});
  }
  nlohmann::json ffn = {{"kind", p.ffn.identity ? "identity" : "mlp"}};
  if (!p.ffn.identity) {
    ffn["activation"] = activation_name(p.ffn.activation);
    ffn["w1"] = matrix_json(p.ffn.w1);
    ffn["b1"] = vector_json(p.ffn.b1);
    ffn["w2"] = matrix_json(p.ffn.w2);
    ffn["b2"] = vector_json(p.ffn.b2);
  }
  return {{"d", p.d},
          {"d_h", p.d_h},
          {"mode", p.mode == Mode::Decoder ? "decoder" : "encoder"},
          {"context_length", p.context_length},
          {"embedding", matrix_json(p.embedding)},
          {"heads", heads},
          {"ffn", ffn},
          {"w_cls", matrix_json(p.w_cls)},
          {"b_cls", std::vector<double>{p.b_cls(0), p.b_cls(1)}}};
}

MicroformerParams from_json(const nlohmann::json& j) {
  MicroformerParams p;
  try {
    p.d = j.at("d").get<std::size_t>();
    p.d_h = j.at("d_h").get<std::size_t>();
    const auto mode = j.value("mode", std::string("encoder"));
    if (mode != "encoder" && mode != "decoder") throw Error(ErrorCode::InvalidParams, "unknown mode '" + mode + "'");
    p.mode = mode == "decoder" ? Mode::Decoder : Mode::Encoder;
    p.context_length = j.value("context_length", std::size_t{512});
    p.embedding = matrix_from(j.at("embedding"));
    for (const auto& h : j.at("heads")) {
      Head head;
      head.w_q = matrix_from(h.at("w_q"));
      head.w_k = matrix_from(h.at("w_k"));
      head.w_v = matrix_from(h.at("w_v"));
      head.b_q = vector_from(h.at("b_q"));
      head.b_k = vector_from(h.at("b_k"));
      head.b_v = vector_from(h.at("b_v"));
      head.proj = matrix_from(h.at("proj"));
      p.heads.push_back(std::move(head));
    }
    const auto& ffn = j.at("ffn");
    p.ffn.identity = ffn.at("kind").get<std::string>() == "identity";
    if (!p.ffn.identity) {
      p.ffn.activation = activation_from(ffn.at("activation").get<std::string>());
      p.ffn.w1 = matrix_from(ffn.at("w1"));
      p.ffn.b1 = vector_from(ffn.at("b1"));
      p.ffn.w2 = matrix_from(ffn.at("w2"));
      p.ffn.b2 = vector_from(ffn.at("b2"));
    }
    p.w_cls = matrix_from(j.at("w_cls"));
    const auto b = j.at("b_cls").get<std::vector<double>>();
    if (b.size() != 2) throw Error(ErrorCode::DimMismatch, "b_cls must have two entries");
    p.b_cls = Eigen::Vector2d(b[0], b[1]);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidParams, std::string("microformer json: ") + e.what());
  }
  validate(p);
  return p;
}

}  // namespace slalom::microformer
