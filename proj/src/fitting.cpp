#include "slalom/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

#include <Eigen/Dense>

#include "slalom/slalom_model.hpp"

namespace slalom {

TokenSeq SamplePool::to_global(TokenView local) const {
  TokenSeq out;
  out.reserve(local.size());
  for (TokenId id : local) {
    if (id >= support.size()) throw Error(ErrorCode::OutOfVocab, "local id outside pool support");
    out.push_back(support[id]);
  }
  return out;
}

LocalSequence localize(TokenView seq) {
  LocalSequence out;
  std::unordered_map<TokenId, TokenId> local_of;
  out.local.reserve(seq.size());
  for (TokenId id : seq) {
    auto [it, inserted] = local_of.emplace(id, static_cast<TokenId>(out.support.size()));
    if (inserted) out.support.push_back(id);
    out.local.push_back(it->second);
  }
  return out;
}

SamplePool make_global_pool(std::size_t vocab_size, std::vector<PoolRecord> records) {
  SamplePool pool;
  pool.support.resize(vocab_size);
  std::iota(pool.support.begin(), pool.support.end(), TokenId{0});
  pool.records = std::move(records);
  pool.provenance = Provenance::Dataset;
  for (const auto& rec : pool.records) {
    if (rec.ids.empty()) throw Error(ErrorCode::EmptySequence, "pool records must be non-empty");
    validate_sequence(vocab_size, rec.ids);
  }
  return pool;
}

namespace {

void score_pool(const Oracle& oracle, SamplePool& pool) {
  std::vector<TokenSeq> global;
  global.reserve(pool.records.size());
  for (const auto& rec : pool.records) global.push_back(pool.to_global(rec.ids));
  const auto scores = oracle.score_batch(global);
  if (scores.size() != pool.records.size()) throw Error(ErrorCode::OracleUnavailable, "oracle dropped scores");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw Error(ErrorCode::OracleUnavailable, "oracle returned a non-finite score");
    pool.records[i].score = scores[i];
  }
}

void require_pool(const SamplePool& pool) {
  if (pool.records.empty()) throw Error(ErrorCode::InvalidParams, "sample pool is empty");
  if (pool.support.empty()) throw Error(ErrorCode::InvalidParams, "sample pool has no support");
}

// Per-record token counts over the support: row-major b x m.
Eigen::MatrixXd count_matrix(const SamplePool& pool) {
  const auto m = static_cast<Eigen::Index>(pool.support.size());
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pool.records.size()), m);
  for (std::size_t i = 0; i < pool.records.size(); ++i) {
    for (TokenId id : pool.records[i].ids) {
      if (id >= pool.support.size()) throw Error(ErrorCode::OutOfVocab, "local id outside pool support");
      counts(static_cast<Eigen::Index>(i), id) += 1.0;
    }
  }
  return counts;
}

Eigen::VectorXd score_vector(const SamplePool& pool) {
  Eigen::VectorXd f(static_cast<Eigen::Index>(pool.records.size()));
  for (std::size_t i = 0; i < pool.records.size(); ++i) f(static_cast<Eigen::Index>(i)) = pool.records[i].score;
  return f;
}

// Normalized importance of each support token per record (rows sum to one).
Eigen::MatrixXd attention_design(const Eigen::MatrixXd& counts, const Eigen::VectorXd& s) {
  const Eigen::VectorXd clamped = s.cwiseMax(-kImportanceClamp).cwiseMin(kImportanceClamp);
  const double top = clamped.maxCoeff();
  const Eigen::RowVectorXd w = (clamped.array() - top).exp().matrix().transpose();
  Eigen::MatrixXd a = counts.array().rowwise() * w.array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double den = a.row(i).sum();
    if (den > 0.0) a.row(i) /= den;
  }
  return a;
}

double sse(const Eigen::MatrixXd& counts, const Eigen::VectorXd& s, const Eigen::VectorXd& v,
           const Eigen::VectorXd& f) {
  return (attention_design(counts, s) * v - f).squaredNorm();
}

struct LeastSquares {
  Eigen::VectorXd x;
  bool rank_deficient = false;
};

// Normal-equation OLS with a 1e-8 ridge fallback when the design is rank deficient.
LeastSquares solve_ols(const Eigen::MatrixXd& a, const Eigen::VectorXd& f) {
  LeastSquares out;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  out.rank_deficient = qr.rank() < a.cols();
  Eigen::MatrixXd gram = a.transpose() * a;
  if (out.rank_deficient) gram.diagonal().array() += 1e-8;
  out.x = gram.ldlt().solve(a.transpose() * f);
  return out;
}

// Euclidean projection onto {x >= 0, sum x = total}.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& y, double total) {
  std::vector<double> sorted(y.data(), y.data() + y.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumsum += sorted[k];
    const double t = (cumsum - total) / static_cast<double>(k + 1);
    if (sorted[k] - t > 0.0) theta = t;
  }
  return (y.array() - theta).cwiseMax(0.0).matrix();
}

// Linearized s-step: minimize |E x|^2 over x >= 0, |x|_1 = m with
// E_ij = count_ij (v_j - f_i), then s = log x.
Eigen::VectorXd exp_importance_qp(const Eigen::MatrixXd& counts, const Eigen::VectorXd& v, const Eigen::VectorXd& f,
                                  const Eigen::VectorXd& s_start) {
  const Eigen::Index m = counts.cols();
  Eigen::MatrixXd e = counts;
  for (Eigen::Index i = 0; i < e.rows(); ++i) e.row(i).array() *= (v.transpose().array() - f(i));
  const Eigen::MatrixXd gram = e.transpose() * e;
  const double lipschitz = 2.0 * gram.selfadjointView<Eigen::Upper>().eigenvalues().maxCoeff();
  const double total = static_cast<double>(m);
  Eigen::VectorXd centred = s_start.array() - s_start.maxCoeff();
  Eigen::VectorXd x = centred.array().exp();
  x *= total / x.sum();
  if (lipschitz > 0.0) {
    for (int it = 0; it < 500; ++it) x = project_simplex(x - (2.0 / lipschitz) * (gram * x), total);
  }
  return x.cwiseMax(1e-12).array().log().matrix();
}

// Levenberg-Marquardt on the exact objective in s with v held fixed; only
// improving steps are taken.
Eigen::VectorXd refine_importance(const Eigen::MatrixXd& counts, const Eigen::VectorXd& v, const Eigen::VectorXd& f,
                                  Eigen::VectorXd s, std::size_t iters) {
  double current = sse(counts, s, v, f);
  double damping = 1e-3;
  for (std::size_t it = 0; it < iters; ++it) {
    const Eigen::MatrixXd a = attention_design(counts, s);
    const Eigen::VectorXd pred = a * v;
    const Eigen::VectorXd resid = pred - f;
    // dF_i/ds_j = a_ij (v_j - F_i)
    Eigen::MatrixXd jac = a;
    for (Eigen::Index i = 0; i < jac.rows(); ++i) jac.row(i).array() *= (v.transpose().array() - pred(i));
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * resid;
    bool improved = false;
    for (int attempt = 0; attempt < 12; ++attempt) {
      Eigen::MatrixXd lhs = jtj;
      lhs.diagonal().array() += damping * (jtj.diagonal().array() + 1e-12);
      const Eigen::VectorXd step = lhs.ldlt().solve(-grad);
      if (!step.allFinite()) {
        damping *= 10.0;
        continue;
      }
      Eigen::VectorXd trial = s + step;
      trial = trial.cwiseMax(-kImportanceClamp).cwiseMin(kImportanceClamp);
      const double value = sse(counts, trial, v, f);
      if (value < current) {
        s = trial;
        current = value;
        damping = std::max(damping * 0.3, 1e-12);
        improved = true;
        break;
      }
      damping *= 10.0;
    }
    if (!improved || current <= 0.0) break;
  }
  return s;
}

SlalomParams to_params(const Eigen::VectorXd& s, const Eigen::VectorXd& v, double gamma) {
  SlalomParams p;
  p.s.assign(s.data(), s.data() + s.size());
  p.v.assign(v.data(), v.data() + v.size());
  p.gamma = gamma;
  return normalize_params(p);
}

}  // namespace

SamplePool sample_pool_eff(const Oracle& oracle, TokenView seq, const EffHyper& h, std::uint64_t seed) {
  if (seq.empty()) throw Error(ErrorCode::EmptySequence, "cannot explain an empty sequence");
  if (h.seq_len < 1 || h.pool_size < 1) throw Error(ErrorCode::InvalidParams, "n and b must be >= 1");
  const auto loc = localize(seq);
  SamplePool pool;
  pool.support = loc.support;
  pool.provenance = Provenance::EffRandom;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(loc.support.size() - 1));
  pool.records.resize(h.pool_size);
  for (auto& rec : pool.records) {
    rec.ids.resize(h.seq_len);
    for (auto& id : rec.ids) id = pick(rng);
  }
  score_pool(oracle, pool);
  return pool;
}

SamplePool sample_pool_fidel(const Oracle& oracle, TokenView seq, const FidelHyper& h, std::uint64_t seed,
                             std::span<const std::size_t> pinned) {
  if (seq.empty()) throw Error(ErrorCode::EmptySequence, "cannot explain an empty sequence");
  std::vector<bool> deletable(seq.size(), true);
  for (std::size_t pos : pinned) {
    if (pos >= seq.size()) throw Error(ErrorCode::OutOfRange, "pinned position outside the sequence");
    deletable[pos] = false;
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (deletable[i]) candidates.push_back(i);
  }
  if (candidates.size() <= h.max_deletions) {
    throw Error(ErrorCode::SequenceTooShort, std::to_string(candidates.size()) +
                                                 " deletable positions must exceed the deletion budget " +
                                                 std::to_string(h.max_deletions));
  }
  if (h.pool_size < 1) throw Error(ErrorCode::InvalidParams, "b must be >= 1");
  const auto loc = localize(seq);
  SamplePool pool;
  pool.support = loc.support;
  pool.provenance = Provenance::FidelDeletion;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> deletions(0, h.max_deletions);
  std::vector<std::size_t> positions;
  pool.records.reserve(h.pool_size);
  pool.records.push_back({loc.local, 0.0});
  for (std::size_t i = 1; i < h.pool_size; ++i) {
    const std::size_t d = deletions(rng);
    positions = candidates;
    // Partial Fisher-Yates: the first d entries are the deleted positions.
    for (std::size_t k = 0; k < d; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, positions.size() - 1);
      std::swap(positions[k], positions[pick(rng)]);
    }
    std::vector<bool> keep(seq.size(), true);
    for (std::size_t k = 0; k < d; ++k) keep[positions[k]] = false;
    PoolRecord rec;
    rec.ids.reserve(seq.size() - d);
    for (std::size_t j = 0; j < seq.size(); ++j) {
      if (keep[j]) rec.ids.push_back(loc.local[j]);
    }
    pool.records.push_back(std::move(rec));
  }
  score_pool(oracle, pool);
  return pool;
}

MinibatchGradient minibatch_gradient(const SlalomParams& p, const SamplePool& pool,
                                     std::span<const std::size_t> batch) {
  MinibatchGradient g;
  g.ds.assign(p.s.size(), 0.0);
  g.dv.assign(p.v.size(), 0.0);
  if (batch.empty()) return g;
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<double> alpha;
  for (std::size_t idx : batch) {
    const auto& rec = pool.records.at(idx);
    alpha = attention_weights(p, rec.ids);
    double f = 0.0;
    for (std::size_t i = 0; i < rec.ids.size(); ++i) f += alpha[i] * p.v[rec.ids[i]];
    const double resid = f - rec.score;
    g.loss += scale * resid * resid;
    for (std::size_t i = 0; i < rec.ids.size(); ++i) {
      const TokenId t = rec.ids[i];
      g.dv[t] += 2.0 * scale * resid * alpha[i];
      g.ds[t] += 2.0 * scale * resid * alpha[i] * (p.v[t] - f);
    }
  }
  return g;
}

EffResult fit_eff(const SamplePool& pool, const EffHyper& h, std::uint64_t seed) {
  require_pool(pool);
  if (h.batch < 1 || h.batch > pool.records.size()) throw Error(ErrorCode::InvalidParams, "need 1 <= r <= b");
  if (!(h.learning_rate > 0.0)) throw Error(ErrorCode::InvalidParams, "learning rate must be positive");
  const std::size_t m = pool.support.size();
  SlalomParams p{std::vector<double>(m, 0.0), std::vector<double>(m, 0.0), h.gamma};
  std::vector<double> vel_s(m, 0.0), vel_v(m, 0.0);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.records.size() - 1);
  std::vector<std::size_t> batch(h.batch);
  EffResult result;
  result.loss_history.reserve(h.steps);
  for (std::size_t step = 0; step < h.steps; ++step) {
    for (auto& idx : batch) idx = pick(rng);
    const auto g = minibatch_gradient(p, pool, batch);
    if (!std::isfinite(g.loss) || g.loss > 1e6) {
      throw Error(ErrorCode::DivergedLoss, "loss " + std::to_string(g.loss) + " at step " + std::to_string(step));
    }
    result.loss_history.push_back(g.loss);
    for (std::size_t t = 0; t < m; ++t) {
      vel_v[t] = h.momentum * vel_v[t] + g.dv[t];
      vel_s[t] = h.momentum * vel_s[t] + g.ds[t];
      p.v[t] -= h.learning_rate * vel_v[t];
      p.s[t] -= h.learning_rate * vel_s[t];
    }
  }
  for (double x : p.s) {
    if (!std::isfinite(x)) throw Error(ErrorCode::DivergedLoss, "non-finite importance");
  }
  result.params = normalize_params(p);
  return result;
}

double pool_sse(const SlalomParams& p, const SamplePool& pool) {
  double total = 0.0;
  for (const auto& rec : pool.records) {
    const double r = eval(p, rec.ids) - rec.score;
    total += r * r;
  }
  return total;
}

FidelResult fit_fidel(const SamplePool& pool, const FidelHyper& h) {
  require_pool(pool);
  const Eigen::MatrixXd counts = count_matrix(pool);
  const Eigen::VectorXd f = score_vector(pool);
  const auto m = static_cast<Eigen::Index>(pool.support.size());
  Eigen::VectorXd s = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m);

  FidelResult result;
  double objective = sse(counts, s, v, f);
  result.objective_history.push_back(objective);
  for (std::size_t outer = 0; outer < h.outer_iters; ++outer) {
    // v-step
    auto ols = solve_ols(attention_design(counts, s), f);
    result.rank_deficient = result.rank_deficient || ols.rank_deficient;
    if (ols.x.allFinite()) {
      const double value = sse(counts, s, ols.x, f);
      if (value <= objective) {
        v = ols.x;
        objective = value;
      }
    }
    // s-step: warm start from the better of the current s and the linearized solution.
    Eigen::VectorXd start = s;
    const Eigen::VectorXd linearized = exp_importance_qp(counts, v, f, s);
    if (!linearized.allFinite()) throw Error(ErrorCode::InfeasibleSStep, "linearized importance step failed");
    if (sse(counts, linearized, v, f) < objective) start = linearized;
    const Eigen::VectorXd refined = refine_importance(counts, v, f, start, h.s_step_iters);
    const double value = sse(counts, refined, v, f);
    if (value <= objective) {
      s = refined;
      objective = value;
    }
    result.objective_history.push_back(objective);
    if (objective <= 0.0) break;
  }
  result.params = to_params(s, v, h.gamma);
  return result;
}

LinearModelParams LinearSurrogate::to_global(std::span<const TokenId> support) const {
  if (support.size() != weights.size()) throw Error(ErrorCode::VocabMismatch, "support size != weight count");
  LinearModelParams out;
  out.b = offset;
  TokenId top = 0;
  for (TokenId id : support) top = std::max(top, id);
  out.w.assign(std::size_t{top} + 1, 0.0);
  for (std::size_t i = 0; i < support.size(); ++i) out.w[support[i]] = weights[i];
  return out;
}

LinearSurrogate fit_linear_surrogate(const SamplePool& pool) {
  require_pool(pool);
  const Eigen::MatrixXd counts = count_matrix(pool);
  const Eigen::VectorXd f = score_vector(pool);
  Eigen::MatrixXd x(counts.rows(), counts.cols() + 1);
  x.leftCols(counts.cols()) = counts;
  x.col(counts.cols()).setOnes();

  LinearSurrogate out;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  Eigen::VectorXd beta;
  if (qr.rank() == x.cols()) {
    beta = qr.solve(f);
  } else {
    out.rank_deficient = true;
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += 1e-8;
    beta = gram.ldlt().solve(x.transpose() * f);
  }
  out.weights.assign(beta.data(), beta.data() + counts.cols());
  out.offset = beta(counts.cols());
  out.residual_mse = (x * beta - f).squaredNorm() / static_cast<double>(f.size());
  return out;
}

}  // namespace slalom
