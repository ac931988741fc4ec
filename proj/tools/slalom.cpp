#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "cli_support.hpp"
#include "slalom/datagen.hpp"
#include "slalom/fitting.hpp"
#include "slalom/io.hpp"
#include "slalom/metrics.hpp"
#include "slalom/microformer.hpp"
#include "slalom/recovery.hpp"
#include "slalom/slalom_model.hpp"

using namespace slalom;
using namespace slalom::cli;

namespace {

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::optional<Vocabulary> maybe_vocab(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return io::read_vocabulary(path);
}

struct OracleFlags {
  std::string spec;
  std::string vocab;
  bool send_tokens = false;

  void add(CLI::App* app, bool required = true) {
    auto* o = app->add_option("--oracle", spec, "slalom:FILE | linear:FILE | microformer:FILE | exec:CMD | tcp:HOST:PORT");
    if (required) o->required();
    app->add_option("--vocab", vocab, "vocabulary file, one token per line");
    app->add_flag("--send-tokens", send_tokens, "send token strings instead of ids to external models");
  }
  json config() const { return json{{"oracle", spec}, {"vocab", vocab}, {"send_tokens", send_tokens}}; }
};

struct FitFlags {
  std::string method = "eff";
  std::size_t samples = 0;  // 0 picks the method default
  std::size_t rand_len = 2;
  std::optional<std::size_t> max_del;  // unset: 5, shrunk to fit short inputs
  std::size_t steps = 20000;
  double lr = 1.0;
  std::size_t batch = 50;
  double momentum = 0.0;
  std::size_t iters = 10;
  double gamma = 0.0;

  void add(CLI::App* app, std::vector<std::string> methods) {
    app->add_option("--method", method, "surrogate fitting method")->check(CLI::IsMember(methods));
    app->add_option("--samples", samples, "pool size b (default 5000 for eff, 2000 for fidel)");
    app->add_option("--rand-len", rand_len, "length n of random sequences (eff)");
    app->add_option("--max-del", max_del, "maximum deletions K per sample (fidel)");
    app->add_option("--steps", steps, "SGD steps c (eff)");
    app->add_option("--lr", lr, "SGD learning rate (eff)");
    app->add_option("--batch", batch, "minibatch size r (eff)");
    app->add_option("--momentum", momentum, "SGD momentum (eff)");
    app->add_option("--iters", iters, "alternating iterations (fidel)");
    app->add_option("--gamma", gamma, "importance sum constraint");
  }
  EffHyper eff() const {
    EffHyper h;
    h.seq_len = rand_len;
    h.pool_size = samples ? samples : 5000;
    h.batch = batch;
    h.learning_rate = lr;
    h.steps = steps;
    h.momentum = momentum;
    h.gamma = gamma;
    return h;
  }
  FidelHyper fidel(std::size_t deletable = std::numeric_limits<std::size_t>::max()) const {
    FidelHyper h;
    h.max_deletions = max_del ? *max_del : std::min<std::size_t>(5, deletable > 0 ? deletable - 1 : 0);
    h.pool_size = samples ? samples : 2000;
    h.outer_iters = iters;
    h.gamma = gamma;
    return h;
  }
  json config() const {
    return json{{"method", method}, {"samples", samples}, {"rand_len", rand_len}, {"max_del", max_del ? json(*max_del) : json(nullptr)},
                {"steps", steps},   {"lr", lr},           {"batch", batch},       {"momentum", momentum},
                {"iters", iters},   {"gamma", gamma}};
  }
};

struct LocalFit {
  SamplePool pool;
  SlalomParams params;  // indexed like pool.support
  std::optional<LinearSurrogate> linear;
  std::vector<double> history;
};

LocalFit fit_pool(SamplePool pool, const FitFlags& f, std::uint64_t seed) {
  LocalFit out;
  if (f.method == "eff") {
    auto r = fit_eff(pool, f.eff(), seed);
    out.params = std::move(r.params);
    out.history = std::move(r.loss_history);
  } else if (f.method == "fidel") {
    auto r = fit_fidel(pool, f.fidel());
    out.params = std::move(r.params);
    out.history = std::move(r.objective_history);
    // Report the squared-error sum per record so fidel and eff losses share a scale.
    for (auto& h : out.history) h /= static_cast<double>(std::max<std::size_t>(1, pool.records.size()));
  } else {
    out.linear = fit_linear_surrogate(pool);
  }
  out.pool = std::move(pool);
  return out;
}

LocalFit fit_local(const Oracle& oracle, TokenView seq, const FitFlags& f, std::uint64_t seed,
                   std::span<const std::size_t> pinned = {}) {
  SamplePool pool = f.method == "eff" ? sample_pool_eff(oracle, seq, f.eff(), seed)
                                      : sample_pool_fidel(oracle, seq, f.fidel(seq.size() - pinned.size()), seed, pinned);
  return fit_pool(std::move(pool), f, seed + 1);
}

// ---------------------------------------------------------------- gen-data

struct GenDataCmd {
  std::string preset = "linear";
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t vocab_size = 200;
  std::size_t min_len = 1, max_len = 30;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
    c->add_option("--preset", preset, "linear | slalom")->check(CLI::IsMember({"linear", "slalom"}));
    c->add_option("--n", n, "number of records");
    c->add_option("--seed", seed);
    c->add_option("--out", out, "NDJSON output; sidecars are written next to it")->required();
    c->add_option("--vocab-size", vocab_size, "vocabulary size (slalom preset)");
    c->add_option("--min-len", min_len, "minimum sequence length (slalom preset)");
    c->add_option("--max-len", max_len, "maximum sequence length (slalom preset)");
    c->callback([this] { run(); });
  }

  void run() {
    RunMeta meta{"gen-data", seed, json{{"preset", preset}, {"n", n}}};
    LabeledDataset data;
    json sidecar;
    if (preset == "linear") {
      const auto spec = datagen::LinearDatasetSpec::review_preset();
      data = datagen::gen_linear_dataset(spec, n, seed);
      sidecar["model"] = io::linear_to_json(LinearModelParams{spec.weights, spec.offset});
    } else {
      meta.config["vocab_size"] = vocab_size;
      meta.config["min_len"] = min_len;
      meta.config["max_len"] = max_len;
      datagen::SlalomDatasetSpec spec;
      spec.vocab_size = vocab_size;
      spec.min_length = min_len;
      spec.max_length = max_len;
      // Distinct streams for the parameters and the records.
      const auto params = datagen::gen_slalom_params(spec, seed);
      data = datagen::gen_slalom_dataset(params, spec, n, seed + 1);
      data.vocab = Vocabulary::anonymous(vocab_size);
      auto pj = io::params_to_json(params);
      pj["meta"] = meta.to_json();
      io::write_text(out + ".params.json", pj.dump(2) + "\n");
    }
    std::ostringstream records;
    io::write_records(records, data.records);
    io::write_text(out, records.str());
    io::write_vocabulary(out + ".vocab.txt", data.vocab);
    sidecar["meta"] = meta.to_json();
    sidecar["records"] = data.records.size();
    io::write_text(out + ".meta.json", sidecar.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------- gen-model

struct GenModelCmd {
  std::string kind = "microformer", out;
  std::uint64_t seed = 0;
  microformer::RandomConfig cfg;
  std::string mode = "encoder", activation = "gelu";

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("gen-model", "draw a random model file usable as an oracle");
    c->add_option("--kind", kind, "microformer | slalom")->check(CLI::IsMember({"microformer", "slalom"}));
    c->add_option("--vocab-size", cfg.vocab_size);
    c->add_option("--d", cfg.d, "embedding width (microformer)");
    c->add_option("--d-head", cfg.d_h, "head width (microformer)");
    c->add_option("--heads", cfg.heads, "attention heads (microformer)");
    c->add_option("--mode", mode, "encoder | decoder")->check(CLI::IsMember({"encoder", "decoder"}));
    c->add_option("--ffn-hidden", cfg.ffn_hidden, "feed-forward width, 0 for identity (microformer)");
    c->add_option("--activation", activation, "relu | gelu | tanh")->check(CLI::IsMember({"relu", "gelu", "tanh"}));
    c->add_option("--weight-scale", cfg.weight_scale);
    c->add_option("--seed", seed);
    c->add_option("--out", out, "JSON output (default stdout)");
    c->callback([this] { run(); });
  }

  void run() {
    cfg.mode = mode == "decoder" ? microformer::Mode::Decoder : microformer::Mode::Encoder;
    cfg.activation = activation == "relu"   ? microformer::Activation::Relu
                     : activation == "tanh" ? microformer::Activation::Tanh
                                            : microformer::Activation::Gelu;
    RunMeta meta{"gen-model", seed,
                 json{{"kind", kind}, {"vocab_size", cfg.vocab_size}, {"d", cfg.d}, {"d_head", cfg.d_h},
                      {"heads", cfg.heads}, {"mode", mode}, {"ffn_hidden", cfg.ffn_hidden},
                      {"activation", activation}, {"weight_scale", cfg.weight_scale}}};
    json j;
    if (kind == "microformer") {
      std::mt19937_64 rng(seed);
      j = microformer::to_json(microformer::random_params(cfg, rng));
    } else {
      datagen::SlalomDatasetSpec spec;
      spec.vocab_size = cfg.vocab_size;
      j = io::params_to_json(datagen::gen_slalom_params(spec, seed));
    }
    j["meta"] = meta.to_json();
    emit(out, j.dump() + "\n");
  }
};

// ---------------------------------------------------------------- fit

struct FitCmd {
  OracleFlags oracle;
  FitFlags fit;
  std::string ids, text, data, out = "-";
  std::size_t vocab_size = 0;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("fit", "fit a surrogate around one input, or globally on a scored dataset");
    oracle.add(c, false);
    fit.add(c, {"eff", "fidel", "linear"});
    c->add_option("--ids", ids, "input token ids");
    c->add_option("--text", text, "input text (whitespace tokenized through --vocab)");
    c->add_option("--data", data, "NDJSON dataset with log_odds; fits over the whole vocabulary");
    c->add_option("--vocab-size", vocab_size, "vocabulary size for --data (default: largest id + 1)");
    c->add_option("--seed", seed);
    c->add_option("--out", out, "JSON output (default stdout)");
    c->callback([this] { run(); });
  }

  void run() {
    RunMeta meta{"fit", seed, fit.config()};
    meta.config["oracle"] = oracle.config();
    const auto vocab = maybe_vocab(oracle.vocab);
    LocalFit result;
    if (!data.empty()) {
      if (!oracle.spec.empty()) throw Error(ErrorCode::InvalidParams, "--data and --oracle are exclusive");
      meta.config["data"] = data;
      std::ifstream in(data);
      if (!in) throw Error(ErrorCode::Io, "cannot open " + data);
      std::vector<PoolRecord> records;
      std::size_t size = vocab_size;
      for (auto& r : io::read_records(in)) {
        if (!r.log_odds) throw Error(ErrorCode::InvalidParams, "dataset records need log_odds to be fitted");
        for (auto t : r.ids) size = std::max<std::size_t>(size, t + 1);
        records.push_back({std::move(r.ids), *r.log_odds});
      }
      if (records.empty()) throw Error(ErrorCode::InvalidParams, "empty dataset");
      if (fit.method == "fidel" && fit.samples) records.resize(std::min(records.size(), fit.samples));
      result = fit_pool(make_global_pool(size, std::move(records)), fit, seed);
    } else {
      if (oracle.spec.empty()) throw Error(ErrorCode::InvalidParams, "need --oracle with --ids/--text, or --data");
      const auto seq = parse_sequence(ids, text, vocab);
      meta.config["input"] = seq;
      auto loaded = load_oracle(oracle.spec, vocab, oracle.send_tokens);
      result = fit_local(*loaded.oracle, seq, fit, seed);
    }

    json j;
    if (result.linear) {
      j = io::linear_to_json(result.linear->to_global(result.pool.support));
      j["residual_mse"] = result.linear->residual_mse;
      j["rank_deficient"] = result.linear->rank_deficient;
    } else {
      j = io::params_to_json(result.params);
      j["support"] = result.pool.support;
      j["final_loss"] = result.history.empty() ? 0.0 : result.history.back();
    }
    if (vocab) {
      std::vector<std::string> tokens;
      for (auto t : result.pool.support) tokens.push_back(token_label(t, vocab));
      j["tokens"] = tokens;
    }
    j["method"] = fit.method;
    j["meta"] = meta.to_json();
    emit(out, j.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------- recover

struct RecoverCmd {
  OracleFlags oracle;
  std::size_t vocab_size = 0;
  TokenId reference = 0;
  double gamma = 0.0;
  std::string out = "-";

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("recover", "identify the parameters of a SLALOM-family model with 2|V|-1 queries");
    oracle.add(c);
    c->add_option("--vocab-size", vocab_size, "vocabulary size (default: from the model or --vocab)");
    c->add_option("--reference", reference, "reference token");
    c->add_option("--gamma", gamma, "importance sum constraint");
    c->add_option("--out", out, "JSON output (default stdout)");
    c->callback([this] { run(); });
  }

  void run() {
    RunMeta meta{"recover", 0, json{{"oracle", oracle.config()}, {"reference", reference}, {"gamma", gamma}}};
    const auto vocab = maybe_vocab(oracle.vocab);
    auto loaded = load_oracle(oracle.spec, vocab, oracle.send_tokens);
    const std::size_t size = vocab_size ? vocab_size : loaded.vocab_size.value_or(0);
    if (size == 0) throw Error(ErrorCode::InvalidParams, "vocabulary size unknown; pass --vocab-size or --vocab");
    meta.config["vocab_size"] = size;
    auto rep = recover(*loaded.oracle, size, RecoveryOptions{gamma, reference});
    auto j = io::params_to_json(rep.params);
    j["queries"] = rep.query_count;
    j["reference_token"] = rep.reference_token;
    j["secondary_reference"] = rep.secondary_reference;
    j["saturated"] = rep.saturated_tokens;
    j["meta"] = meta.to_json();
    emit(out, j.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------- explain

struct ExplainCmd {
  OracleFlags oracle;
  FitFlags fit;
  std::string ids, text, out = "-";
  std::uint64_t seed = 0;
  std::size_t shapley_samples = 2000;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("explain", "fit a local SLALOM surrogate and emit per-token attributions as CSV");
    oracle.add(c);
    fit.add(c, {"eff", "fidel"});
    c->add_option("--ids", ids, "input token ids");
    c->add_option("--text", text, "input text (whitespace tokenized through --vocab)");
    c->add_option("--seed", seed);
    c->add_option("--shapley-samples", shapley_samples, "permutations when the input is too long for exact values");
    c->add_option("--out", out, "CSV output (default stdout)");
    c->callback([this] { run(); });
  }

  void run() {
    const auto vocab = maybe_vocab(oracle.vocab);
    const auto seq = parse_sequence(ids, text, vocab);
    RunMeta meta{"explain", seed, fit.config()};
    meta.config["oracle"] = oracle.config();
    meta.config["input"] = seq;
    meta.config["shapley_samples"] = shapley_samples;
    auto loaded = load_oracle(oracle.spec, vocab, oracle.send_tokens);
    auto result = fit_local(*loaded.oracle, seq, fit, seed);
    const auto loc = localize(seq);
    const auto& p = result.params;
    const auto lin = linearized_scores(p, loc.local);
    const auto phi = loc.local.size() <= kMaxExactShapleyLength ? shapley_exact(p, loc.local)
                                                                : shapley_sampled(p, loc.local, shapley_samples, seed + 2);
    std::ostringstream csv;
    csv << meta.csv_header() << "position,token,value_v,importance_s,linearized,shapley\n";
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto l = loc.local[i];
      csv << i << ',' << csv_field(token_label(seq[i], vocab)) << ',' << num(p.v[l]) << ',' << num(p.s[l]) << ','
          << num(lin[i]) << ',' << num(phi[i]) << '\n';
    }
    emit(out, csv.str());
  }
};

// ---------------------------------------------------------------- verify-theory

struct VerifyCmd {
  std::size_t draws = 100;
  std::uint64_t seed = 0;
  std::string report = "text";
  std::string out = "-";
  bool failed = false;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("verify-theory", "run the constancy, construction and recovery checks");
    c->add_option("--draws", draws, "random models per suite");
    c->add_option("--seed", seed);
    c->add_option("--report", report, "text | json")->check(CLI::IsMember({"text", "json"}));
    c->add_option("--out", out, "report output (default stdout)");
    c->callback([this] { run(); });
  }

  json constancy(std::mt19937_64& rng) const {
    const std::size_t heads[] = {1, 2, 4};
    const microformer::Activation acts[] = {microformer::Activation::Relu, microformer::Activation::Gelu,
                                            microformer::Activation::Tanh};
    double worst = 0.0;
    for (std::size_t d = 0; d < draws; ++d) {
      microformer::RandomConfig cfg;
      cfg.mode = d % 2 == 0 ? microformer::Mode::Encoder : microformer::Mode::Decoder;
      cfg.heads = heads[d % 3];
      cfg.activation = acts[(d / 2) % 3];
      auto p = microformer::random_params(cfg, rng);
      const auto tau = std::uniform_int_distribution<TokenId>(0, static_cast<TokenId>(cfg.vocab_size - 1))(rng);
      worst = std::max(worst, microformer::constancy_demo(p, tau, 30).spread);
    }
    return json{{"name", "constancy"}, {"draws", draws}, {"max_spread", worst}, {"tolerance", 1e-9},
                {"pass", worst < 1e-9}};
  }

  json equivalence(std::mt19937_64& rng) const {
    std::normal_distribution<double> n01;
    std::uniform_int_distribution<std::size_t> len(1, 30);
    std::uniform_int_distribution<TokenId> tok(0, 19);
    double worst = 0.0;
    const std::size_t models = std::max<std::size_t>(1, draws / 10);
    for (std::size_t m = 0; m < models; ++m) {
      SlalomParams p;
      for (int i = 0; i < 20; ++i) {
        p.s.push_back(n01(rng));
        p.v.push_back(n01(rng));
      }
      p = normalize_params(p);
      const auto t = microformer::build_slalom_transformer(p, 8, 4, 1 + m % 3);
      for (int i = 0; i < 1000; ++i) {
        TokenSeq seq(len(rng));
        for (auto& x : seq) x = tok(rng);
        worst = std::max(worst, std::abs(microformer::forward(t, seq) - eval(p, seq)));
      }
    }
    return json{{"name", "equivalence"}, {"models", models}, {"sequences_per_model", 1000},
                {"max_deviation", worst}, {"tolerance", 1e-9}, {"pass", worst < 1e-9}};
  }

  json recovery(std::mt19937_64& rng) const {
    std::normal_distribution<double> n01;
    double worst = 0.0;
    bool budget = true;
    const std::size_t models = std::max<std::size_t>(1, draws / 10);
    for (std::size_t m = 0; m < models; ++m) {
      SlalomParams p;
      for (int i = 0; i < 50; ++i) {
        p.s.push_back(n01(rng));
        p.v.push_back(n01(rng));
      }
      p = normalize_params(p);
      SlalomOracle o(p);
      CountingOracle counter(o);
      auto rep = recover(counter, 50);
      budget &= counter.query_count() == 99;
      for (std::size_t i = 0; i < 50; ++i) {
        worst = std::max({worst, std::abs(rep.params.s[i] - p.s[i]), std::abs(rep.params.v[i] - p.v[i])});
      }
    }
    return json{{"name", "recovery"}, {"models", models}, {"vocab_size", 50}, {"query_budget_met", budget},
                {"max_param_error", worst}, {"tolerance", 1e-9}, {"pass", budget && worst < 1e-9}};
  }

  void run() {
    RunMeta meta{"verify-theory", seed, json{{"draws", draws}}};
    std::mt19937_64 rng(seed);
    const auto start = std::chrono::steady_clock::now();
    json suites = json::array({constancy(rng), equivalence(rng), recovery(rng)});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool pass = true;
    for (const auto& s : suites) pass &= s["pass"].get<bool>();
    failed = !pass;
    if (report == "json") {
      json j{{"meta", meta.to_json()}, {"suites", suites}, {"pass", pass}, {"seconds", secs}};
      emit(out, j.dump(2) + "\n");
      return;
    }
    std::ostringstream txt;
    txt << meta.csv_header();
    for (const auto& s : suites) {
      txt << (s["pass"].get<bool>() ? "[PASS] " : "[FAIL] ") << s["name"].get<std::string>();
      for (const auto& [k, v] : s.items()) {
        if (k != "name" && k != "pass") txt << ' ' << k << '=' << v.dump();
      }
      txt << '\n';
    }
    char line[64];
    std::snprintf(line, sizeof line, "%s in %.2fs\n", pass ? "all suites passed" : "FAILED", secs);
    txt << line;
    emit(out, txt.str());
  }
};

// ---------------------------------------------------------------- eval

struct EvalCmd {
  OracleFlags oracle;
  FitFlags fit;
  std::string data, methods = "fidel,linear", metrics_list = "fidelity,aopc-deletion,aopc-insertion";
  std::string pinned_list, out = "-", summary;
  std::size_t n = 20, length = 40, max_k = 10, trials = 20, aopc_k = 20;
  std::optional<TokenId> baseline_token;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "compare surrogates on fidelity and perturbation curves (long-format CSV)");
    oracle.add(c);
    fit.add(c, {"eff", "fidel"});
    c->add_option("--data", data, "NDJSON inputs to explain (default: random sequences)");
    c->add_option("--n", n, "number of inputs");
    c->add_option("--length", length, "length of random inputs");
    c->add_option("--methods", methods, "comma list of eff, fidel, linear, random");
    c->add_option("--metrics", metrics_list, "comma list of fidelity, aopc-deletion, aopc-insertion");
    c->add_option("--max-k", max_k, "largest number of removed tokens for fidelity");
    c->add_option("--trials", trials, "removal draws per k for fidelity");
    c->add_option("--aopc-k", aopc_k, "largest perturbation size for AOPC");
    c->add_option("--pinned", pinned_list, "comma list of positions that are never removed");
    c->add_option("--baseline-token", baseline_token, "stands in for the empty input in perturbation curves");
    c->add_option("--seed", seed);
    c->add_option("--out", out, "per-k CSV (default stdout)");
    c->add_option("--summary", summary, "summary CSV path");
    c->callback([this] { run(); });
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  void run() {
    const auto method_names = split(methods), metric_names = split(metrics_list);
    for (const auto& m : method_names) {
      if (m != "eff" && m != "fidel" && m != "linear" && m != "random") {
        throw Error(ErrorCode::InvalidParams, "unknown method '" + m + "'");
      }
    }
    for (const auto& m : metric_names) {
      if (m != "fidelity" && m != "aopc-deletion" && m != "aopc-insertion") {
        throw Error(ErrorCode::InvalidParams, "unknown metric '" + m + "'");
      }
    }
    std::vector<std::size_t> pinned;
    for (const auto& p : split(pinned_list)) pinned.push_back(std::stoul(p));

    RunMeta meta{"eval", seed, fit.config()};
    meta.config["oracle"] = oracle.config();
    meta.config["data"] = data;
    meta.config["methods"] = method_names;
    meta.config["metrics"] = metric_names;
    meta.config["n"] = n;
    meta.config["length"] = length;
    meta.config["max_k"] = max_k;
    meta.config["trials"] = trials;
    meta.config["aopc_k"] = aopc_k;
    meta.config["pinned"] = pinned;
    meta.config["baseline_token"] = baseline_token ? json(*baseline_token) : json();

    const auto vocab = maybe_vocab(oracle.vocab);
    auto loaded = load_oracle(oracle.spec, vocab, oracle.send_tokens);
    std::mt19937_64 rng(seed);
    std::vector<TokenSeq> inputs;
    if (!data.empty()) {
      std::ifstream in(data);
      if (!in) throw Error(ErrorCode::Io, "cannot open " + data);
      for (auto& r : io::read_records(in)) {
        if (inputs.size() == n) break;
        inputs.push_back(std::move(r.ids));
      }
    } else {
      if (!loaded.vocab_size) throw Error(ErrorCode::InvalidParams, "vocabulary size unknown; pass --vocab or --data");
      std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(*loaded.vocab_size - 1));
      for (std::size_t i = 0; i < n; ++i) {
        TokenSeq seq(length);
        for (auto& t : seq) t = tok(rng);
        inputs.push_back(std::move(seq));
      }
    }
    if (inputs.empty()) throw Error(ErrorCode::InvalidParams, "no inputs to evaluate");

    // (metric, method) -> k -> (sum, count)
    std::map<std::pair<std::string, std::string>, std::map<std::size_t, std::pair<double, std::size_t>>> curves;
    std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> summaries;
    auto add_point = [&](const std::string& metric, const std::string& method, std::size_t k, double v) {
      auto& cell = curves[{metric, method}][k];
      cell.first += v;
      cell.second += 1;
    };
    auto add_summary = [&](const std::string& metric, const std::string& method, double v) {
      auto& cell = summaries[{metric, method}];
      cell.first += v;
      cell.second += 1;
    };

    const Oracle& model = *loaded.oracle;
    for (std::size_t idx = 0; idx < inputs.size(); ++idx) {
      const auto& seq = inputs[idx];
      const std::uint64_t base = seed + 1000 * (idx + 1);
      const bool positive = model.score(seq) >= 0.0;
      for (const auto& method : method_names) {
        std::unique_ptr<Oracle> surrogate;
        std::vector<double> ranking(seq.size());
        if (method == "random") {
          std::iota(ranking.begin(), ranking.end(), 0.0);
          std::mt19937_64 shuffle_rng(base + 7);
          std::shuffle(ranking.begin(), ranking.end(), shuffle_rng);
        } else {
          FitFlags f = fit;
          // The linear baseline is fitted on the same deletion samples as fidel.
          f.method = method == "eff" ? "eff" : method == "fidel" ? "fidel" : "linear";
          if (method == "linear") {
            FitFlags pool_flags = fit;
            pool_flags.method = "fidel";
            auto pool = sample_pool_fidel(model, seq, pool_flags.fidel(seq.size() - pinned.size()), base, pinned);
            auto lin = fit_linear_surrogate(pool).to_global(pool.support);
            for (std::size_t i = 0; i < seq.size(); ++i) ranking[i] = seq[i] < lin.w.size() ? lin.w[seq[i]] : 0.0;
            surrogate = std::make_unique<LinearOracle>(std::move(lin));
          } else {
            auto r = fit_local(model, seq, f, base, pinned);
            const auto loc = localize(seq);
            ranking = linearized_scores(r.params, loc.local);
            surrogate = std::make_unique<SlalomOracle>(std::move(r.params), std::move(r.pool.support));
          }
          if (!positive) {
            for (auto& x : ranking) x = -x;
          }
        }
        for (const auto& metric : metric_names) {
          if (metric == "fidelity") {
            if (!surrogate) continue;
            metrics::FidelityOptions fo;
            fo.max_removals = max_k;
            fo.trials = trials;
            fo.seed = base + 3;
            fo.pinned = pinned;
            const auto mse = metrics::fidelity_mse(model, metrics::surrogate_delta(*surrogate), seq, fo);
            double mean = 0.0;
            for (std::size_t k = 0; k < mse.size(); ++k) {
              add_point(metric, method, k + 1, mse[k]);
              mean += mse[k] / static_cast<double>(mse.size());
            }
            add_summary("fidelity_mse_mean", method, mean);
          } else {
            const auto mode = metric == "aopc-deletion" ? metrics::PerturbationMode::Deletion
                                                        : metrics::PerturbationMode::Insertion;
            metrics::AopcOptions ao;
            ao.max_k = aopc_k;
            ao.baseline_token = baseline_token;
            const auto curve = metrics::aopc(model, seq, ranking, mode, ao);
            for (std::size_t i = 0; i < curve.k.size(); ++i) add_point(metric, method, curve.k[i], curve.scores[i]);
            add_summary(metric == "aopc-deletion" ? "aopc_deletion" : "aopc_insertion", method, curve.aopc);
          }
        }
      }
    }

    std::ostringstream csv;
    csv << meta.csv_header() << "metric,method,k,value\n";
    for (const auto& [key, points] : curves) {
      for (const auto& [k, cell] : points) {
        csv << key.first << ',' << key.second << ',' << k << ',' << num(cell.first / static_cast<double>(cell.second))
            << '\n';
      }
    }
    emit(out, csv.str());
    std::ostringstream sum;
    sum << meta.csv_header() << "metric,method,value,inputs\n";
    for (const auto& [key, cell] : summaries) {
      sum << key.first << ',' << key.second << ',' << num(cell.first / static_cast<double>(cell.second)) << ','
          << cell.second << '\n';
    }
    if (!summary.empty()) emit(summary, sum.str());
    else if (out != "-" && !out.empty()) std::cout << sum.str().substr(sum.str().find('\n') + 1);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SLALOM surrogate models for explaining sequence classifiers"};
  app.set_version_flag("--version", SLALOM_VERSION);
  app.require_subcommand(1);

  GenDataCmd gen;
  GenModelCmd model;
  FitCmd fit;
  RecoverCmd rec;
  ExplainCmd explain;
  VerifyCmd verify;
  EvalCmd ev;
  gen.add(app);
  model.add(app);
  fit.add(app);
  rec.add(app);
  explain.add(app);
  verify.add(app);
  ev.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "slalom: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "slalom: " << e.what() << "\n";
    return kExitConfig;
  }
  return verify.failed ? kExitFailed : kExitOk;
}
