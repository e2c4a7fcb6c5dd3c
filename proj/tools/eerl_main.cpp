// Command-line front end: schema inspection, tying pattern dumps,
// equivariance checks, synthetic data generation, training for the
// equivariant auto-encoder and the factorization baselines, and sweeps.
//
// Exit codes: 0 success / all checks passed, 1 usage error, 2 validation or
// check failure, 3 optimizer divergence.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "eer/cmtf.hpp"
#include "eer/eerl.hpp"
#include "eer/model.hpp"
#include "eer/oracle.hpp"
#include "eer/synthgen.hpp"

using nlohmann::json;
using namespace eer;

namespace {

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int dispatch(const std::vector<std::string>& tokens);

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_manifest(const std::string& path, const std::vector<std::string>& tokens,
                    const json& metrics) {
  json m;
  m["command"] = tokens;
  if (!metrics.is_null()) m["metrics"] = metrics;
  std::ofstream out(path);
  out << m.dump(2) << "\n";
}

void append_metrics(const std::string& path, const std::string& run_id, const std::string& method,
                    const std::string& mode, const std::string& sparsity, std::uint64_t seed,
                    double train_rmse, double test_rmse, double seconds) {
  bool fresh = !std::ifstream(path).good();
  std::ofstream out(path, std::ios::app);
  if (fresh) out << "run_id,method,mode,sparsity,seed,train_rmse,test_rmse,seconds\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.3f", train_rmse, test_rmse, seconds);
  out << run_id << "," << method << "," << mode << "," << sparsity << "," << seed << "," << buf
      << "\n";
}

std::vector<double> parse_list(const std::string& text, size_t want) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string f;
  while (std::getline(ss, f, ',')) v.push_back(std::stod(f));
  if (v.size() == 1) v.assign(want, v[0]);
  if (v.size() != want) throw std::invalid_argument("expected 1 or " + std::to_string(want) +
                                                    " comma-separated values, got '" + text + "'");
  return v;
}

// gen's manifest carries mode and sparsity so training runs can fill the
// metrics columns without re-deriving them.
struct DataMeta {
  std::string mode = "-", sparsity = "-";
};

DataMeta read_data_meta(const std::string& dir) {
  DataMeta meta;
  std::ifstream in(dir + "/manifest.json");
  if (!in) return meta;
  json m = json::parse(in, nullptr, false);
  if (m.is_discarded() || !m.contains("command")) return meta;
  auto toks = m["command"].get<std::vector<std::string>>();
  for (size_t t = 0; t + 1 < toks.size(); ++t) {
    if (toks[t] == "--mode") meta.mode = toks[t + 1];
    if (toks[t] == "--sparsity") meta.sparsity = toks[t + 1];
  }
  return meta;
}

RelInstance target_only(const Schema& s, const RelInstance& x, int target) {
  RelInstance out = make_instance(s, x.channels());
  out.rel[(size_t)target] = x.rel[(size_t)target];
  return out;
}

// ---------------------------------------------------------------- schema-check

int cmd_schema_check(const std::string& schema_path) {
  Schema s = parse_schema(slurp(schema_path));
  std::cout << "entities: " << s.entities.size() << "\n";
  for (const auto& e : s.entities) std::cout << "  " << e.name << " x" << e.count << "\n";
  std::cout << "relations: " << s.relations.size() << "\n";
  for (size_t i = 0; i < s.relations.size(); ++i) {
    std::cout << "  " << s.relations[i].name << " (size " << relation_size(s, (int)i) << ")";
    if (s.relations[i].one_entity >= 0)
      std::cout << " one " << s.entities[s.relations[i].one_entity].name;
    std::cout << "\n";
  }
  std::cout << "coupled vector size: " << total_size(s) << "\n";
  write_pattern_report(std::cout, s);
  return 0;
}

// --------------------------------------------------------------------- pattern

int cmd_pattern(const std::string& schema_path, const std::string& out_path,
                const std::string& report_path) {
  Schema s = parse_schema(slurp(schema_path));
  std::ofstream out(out_path);
  if (!out) throw DataError("cannot write '" + out_path + "'");
  write_pattern_pgm(out, s);
  if (!report_path.empty()) {
    std::ofstream rep(report_path);
    write_pattern_report(rep, s);
  }
  std::cout << "pattern image: " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------- check-equivariance

int cmd_check_equivariance(const std::string& schema_path, int trials, std::uint64_t seed,
                           bool break_tying) {
  Schema s = parse_schema(slurp(schema_path));
  if (total_size(s) > kDenseGuard)
    throw std::invalid_argument("check-equivariance: coupled vector too large for the dense oracle");
  RngHub hub{seed};
  bool all_ok = true;
  auto report = [&](const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "pass" : "FAIL") << "  " << name << (detail.empty() ? "" : "  " + detail)
              << "\n";
    all_ok = all_ok && ok;
  };

  // Random tied weights, deterministic from the seed.
  TiedWeights w = make_tied_weights(s);
  {
    auto g = hub.stream("weights");
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& blk : w.block)
      for (double& v : blk) v = u(g);
    for (auto& b : w.bias)
      for (double& v : b) v = u(g);
  }
  DenseMatrix W = materialize_W(s, w);
  if (break_tying) {
    // Corrupt one entry of a class that has more than one member; the matrix
    // no longer factors through the tying and legal commutation must break.
    auto pat = pattern_matrix(s);
    std::vector<i64> count((size_t)make_pattern_table(s).total_classes, 0);
    for (i64 c : pat) ++count[(size_t)c];
    for (size_t q = 0; q < pat.size(); ++q)
      if (count[(size_t)pat[q]] > 1) {
        W.a[q] += 0.5;
        break;
      }
  }

  {
    auto g = hub.stream("legal");
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      LegalPerm p = random_legal_perm(s, g);
      worst = std::max(worst, max_commute_dev(W, perm_index_map(s, p)));
    }
    report("legal-commute", worst <= 1e-12, "max |WG-GW| = " + std::to_string(worst));
  }
  {
    auto g = hub.stream("illegal");
    int violated = 0, tried = 0;
    i64 n = total_size(s);
    std::uniform_int_distribution<i64> pick(0, n - 1);
    while (tried < trials) {
      std::vector<i64> sigma((size_t)n);
      for (i64 q = 0; q < n; ++q) sigma[(size_t)q] = q;
      i64 a = pick(g), b = pick(g);
      if (a == b) continue;
      std::swap(sigma[(size_t)a], sigma[(size_t)b]);
      if (is_legal_perm_map(s, sigma)) continue;  // single swaps rarely are
      ++tried;
      if (max_commute_dev(W, sigma) > 1e-6) ++violated;
    }
    report("illegal-violate", violated == trials,
           std::to_string(violated) + "/" + std::to_string(trials) + " violated");
  }
  {
    // Bias invariance: the materialized bias vector is fixed by legal maps.
    TiedWeights wb = w;
    auto g = hub.stream("bias");
    auto bvec = materialize_bias(s, wb);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      LegalPerm p = random_legal_perm(s, g);
      auto sigma = perm_index_map(s, p);
      for (size_t q = 0; q < bvec.size(); ++q)
        worst = std::max(worst, std::fabs(bvec[(size_t)sigma[q]] - bvec[q]));
    }
    report("bias-invariant", worst <= 1e-12, "max dev = " + std::to_string(worst));
  }

  bool repeat_free = true;
  for (const auto& r : s.relations) repeat_free = repeat_free && r.repeat_free();
  if (repeat_free && !break_tying) {
    auto g = hub.stream("instance");
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    RelInstance x = make_instance(s);
    for (auto& t : x.rel) {
      i64 n = t.size();
      t.pos.resize((size_t)n);
      t.val.resize((size_t)n);
      for (i64 p = 0; p < n; ++p) {
        t.pos[(size_t)p] = p;
        t.val[(size_t)p] = u(g);
      }
    }
    RelInstance pooled = forward(s, x, w, identity_act(), PoolMode::Sum);
    RelInstance oracle = forward_dense_oracle(s, x, w, identity_act());
    double worst = 0.0;
    for (size_t i = 0; i < pooled.rel.size(); ++i)
      for (size_t q = 0; q < pooled.rel[i].val.size(); ++q)
        worst = std::max(worst, std::fabs(pooled.rel[i].val[q] - oracle.rel[i].val[q]));
    report("pooled-vs-oracle", worst <= 1e-9, "max dev = " + std::to_string(worst));

    // Finite-difference check of the layer gradient.
    PoolPlan plan = make_pool_plan(s);
    DenseInstance xd = to_dense_instance(s, x);
    LayerCache cache;
    Activation act = leaky_relu(0.01);
    DenseInstance y0 = forward_dense(s, plan, xd, w, act, PoolMode::ObservedMean, &cache);
    DenseInstance up = y0;
    for (auto& r : up.rel)
      for (double& v : r.val) v = u(g);
    LayerGrads lg = backward_dense(s, plan, cache, w, act, PoolMode::ObservedMean, up);
    auto objective = [&](const TiedWeights& wt) {
      DenseInstance y = forward_dense(s, plan, xd, wt, act, PoolMode::ObservedMean);
      double o = 0.0;
      for (size_t i = 0; i < y.rel.size(); ++i)
        for (size_t q = 0; q < y.rel[i].val.size(); ++q) o += y.rel[i].val[q] * up.rel[i].val[q];
      return o;
    };
    double worst_rel = 0.0;
    size_t R = s.relations.size();
    std::uniform_int_distribution<size_t> pick_block(0, R * R - 1);
    for (int t = 0; t < std::min(trials, 8); ++t) {
      size_t b = pick_block(g);
      if (w.block[b].empty()) continue;
      std::uniform_int_distribution<size_t> pick_q(0, w.block[b].size() - 1);
      size_t q = pick_q(g);
      double h = 1e-6;
      TiedWeights wp = w, wm = w;
      wp.block[b][q] += h;
      wm.block[b][q] -= h;
      double fd = (objective(wp) - objective(wm)) / (2 * h);
      double an = lg.w.block[b][q];
      double rel = std::fabs(fd - an) / std::max(1.0, std::fabs(an));
      worst_rel = std::max(worst_rel, rel);
    }
    report("gradient-check", worst_rel <= 1e-5, "max rel dev = " + std::to_string(worst_rel));
  } else if (!repeat_free) {
    std::cout << "note  pooled path not applicable (self-relation present); oracle checks only\n";
  }

  if (!all_ok) throw CheckFailure("equivariance checks failed");
  std::cout << "all checks passed\n";
  return 0;
}

// ------------------------------------------------------------------------- gen

int cmd_gen(const std::vector<std::string>& tokens, const std::string& out_dir,
            const std::string& n_text, int h, const std::string& mode,
            const std::string& sparsity_text, i64 min_per_line, std::uint64_t seed) {
  SynthConfig cfg;
  auto n = parse_list(n_text, 3);
  cfg.counts = {(i64)n[0], (i64)n[1], (i64)n[2]};
  cfg.h = h;
  if (mode != "cp" && mode != "tucker") throw std::invalid_argument("mode must be cp or tucker");
  cfg.tucker = mode == "tucker";
  cfg.observed = parse_list(sparsity_text, 3);
  cfg.min_per_line = min_per_line;
  cfg.seed = seed;
  SynthData d = generate(cfg);
  SplitMasks masks = sparsify(d.schema, cfg);
  write_dataset(out_dir, d.schema, d.full, masks);
  write_manifest(out_dir + "/manifest.json", tokens, json());
  i64 train = 0, total = 0;
  for (size_t i = 0; i < masks.train.size(); ++i) {
    train += (i64)masks.train[i].size();
    total += relation_size(d.schema, (int)i);
  }
  std::cout << "dataset: " << out_dir << "  observed " << train << "/" << total << " entries\n";
  return 0;
}

// ------------------------------------------------------------------ train-eern

int cmd_train_eern(const std::vector<std::string>& tokens, const std::string& data_dir,
                   const std::string& target_name, const std::string& out_dir, int layers,
                   int width, int h_code, int epochs, double lr, double leak,
                   const std::string& pool, std::uint64_t seed, const std::string& run_id) {
  auto t0 = std::chrono::steady_clock::now();
  Dataset d = read_dataset(data_dir);
  int target = d.schema.relation_index(target_name);
  if (target < 0) throw DataError("unknown relation '" + target_name + "'");
  AutoEncoderConfig cfg;
  cfg.enc_widths.assign((size_t)layers, width);
  cfg.dec_widths.assign((size_t)layers, width);
  cfg.code_dim = h_code;
  cfg.epochs = epochs;
  cfg.lr = lr;
  cfg.leak = leak;
  if (pool != "sum" && pool != "mean") throw std::invalid_argument("pool must be sum or mean");
  cfg.pool = pool == "sum" ? PoolMode::Sum : PoolMode::ObservedMean;
  cfg.seed = seed;
  cfg.targets = {target};
  TrainResult res = train_autoencoder(d.schema, cfg, d.train);
  if (!std::isfinite(res.train_loss.back()))
    throw DivergenceError("train-eern: loss diverged");
  double train_rmse = std::sqrt(res.train_loss.back());
  RelInstance test = target_only(d.schema, d.test, target);
  double test_rmse = evaluate(res.model, d.schema, d.train, test);
  double secs = elapsed_since(t0);

  std::filesystem::create_directories(out_dir);
  save_model(res.model, out_dir + "/model");
  {
    std::ofstream codes(out_dir + "/codes.csv");
    dump_codes(res.model, d.schema, d.train, codes);
  }
  DataMeta meta = read_data_meta(data_dir);
  std::string rid = run_id.empty() ? "train-eern-" + std::to_string(seed) : run_id;
  append_metrics(out_dir + "/metrics.csv", rid, "eern", meta.mode, meta.sparsity, seed, train_rmse,
                 test_rmse, secs);
  json metrics{{"train_rmse", train_rmse}, {"test_rmse", test_rmse}, {"seconds", secs}};
  write_manifest(out_dir + "/manifest.json", tokens, metrics);
  std::cout << "train_rmse " << train_rmse << "\ntest_rmse " << test_rmse << "\nseconds " << secs
            << "\n";
  return 0;
}

// ------------------------------------------------------------------ train-cmtf

int cmd_train_cmtf(const std::vector<std::string>& tokens, const std::string& data_dir,
                   const std::string& target_name, const std::string& method,
                   const std::string& out_dir, int rank, int iters, double lr, std::uint64_t seed,
                   bool zero_fill, const std::string& run_id) {
  auto t0 = std::chrono::steady_clock::now();
  Dataset d = read_dataset(data_dir);
  int target = d.schema.relation_index(target_name);
  if (target < 0) throw DataError("unknown relation '" + target_name + "'");
  CmtfOptions opt;
  opt.rank = rank;
  opt.iters = iters;
  opt.lr = lr;
  opt.seed = seed;
  opt.zero_fill = zero_fill;
  if (method != "ccpf" && method != "ctkf")
    throw std::invalid_argument("method must be ccpf or ctkf");
  CmtfResult res =
      method == "ccpf" ? fit_ccpf(d.schema, d.train, opt) : fit_ctkf(d.schema, d.train, opt);
  double train_rmse = std::sqrt(res.loss.back());
  RelInstance test = target_only(d.schema, d.test, target);
  double test_rmse = evaluate_cmtf(res.factors, d.schema, test);
  double secs = elapsed_since(t0);

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/factors.csv");
    dump_factors(res.factors, d.schema, f);
  }
  DataMeta meta = read_data_meta(data_dir);
  std::string rid = run_id.empty() ? method + "-" + std::to_string(seed) : run_id;
  append_metrics(out_dir + "/metrics.csv", rid, method, meta.mode, meta.sparsity, seed, train_rmse,
                 test_rmse, secs);
  json metrics{{"train_rmse", train_rmse}, {"test_rmse", test_rmse}, {"seconds", secs}};
  write_manifest(out_dir + "/manifest.json", tokens, metrics);
  std::cout << "train_rmse " << train_rmse << "\ntest_rmse " << test_rmse << "\nseconds " << secs
            << "\n";
  return 0;
}

// ------------------------------------------------------------------------ eval

int cmd_eval(const std::string& model_dir, const std::string& data_dir,
             const std::string& target_name) {
  AutoEncoder m = load_model(model_dir + "/model");
  Dataset d = read_dataset(data_dir);
  int target = d.schema.relation_index(target_name);
  if (target < 0) throw DataError("unknown relation '" + target_name + "'");
  if (!m.schema.same_structure(d.schema))
    throw DataError("eval: model and data schema structures differ");
  RelInstance test = target_only(d.schema, d.test, target);
  double rmse = evaluate(m, d.schema, d.train, test);
  std::cout << "test_rmse " << rmse << "\n";
  return 0;
}

// ----------------------------------------------------------------------- sweep

int cmd_sweep(const std::vector<std::string>& tokens, const std::string& kind,
              const std::string& out_path, i64 n, int h, const std::string& mode, int seeds,
              int epochs, int iters, double lr_eern, double lr_cmtf) {
  std::ofstream out(out_path);
  if (!out) throw DataError("cannot write '" + out_path + "'");
  out << "kind,level,method,seed,test_rmse\n";
  char buf[64];
  auto emit = [&](double level, const std::string& method, std::uint64_t seed, double rmse) {
    std::snprintf(buf, sizeof buf, "%.9g", rmse);
    out << kind << "," << level << "," << method << "," << seed << "," << buf << "\n";
  };
  bool tucker = mode == "tucker";
  if (kind == "sparsity") {
    for (double level : {0.1, 0.5, 0.9}) {
      for (int sd = 0; sd < seeds; ++sd) {
        SynthConfig cfg;
        cfg.counts = {n, n, n};
        cfg.h = h;
        cfg.tucker = tucker;
        cfg.observed = {level, level, level};
        cfg.min_per_line = std::min<i64>(5, (i64)std::floor(level * (double)n));
        cfg.seed = (std::uint64_t)sd;
        SynthData d = generate(cfg);
        SplitMasks masks = sparsify(d.schema, cfg);
        RelInstance train = restrict_to(d.schema, d.full, masks.train);
        RelInstance test =
            target_only(d.schema, restrict_to(d.schema, d.full, masks.test), 0);
        AutoEncoderConfig acfg;
        acfg.epochs = epochs;
        acfg.lr = lr_eern;
        acfg.seed = (std::uint64_t)sd;
        acfg.targets = {0};
        TrainResult res = train_autoencoder(d.schema, acfg, train);
        emit(level, "eern", (std::uint64_t)sd, evaluate(res.model, d.schema, train, test));
        CmtfOptions copt;
        copt.iters = iters;
        copt.lr = lr_cmtf;
        copt.seed = (std::uint64_t)sd;
        CmtfResult cp = fit_ccpf(d.schema, train, copt);
        emit(level, "ccpf", (std::uint64_t)sd, evaluate_cmtf(cp.factors, d.schema, test));
        CmtfResult tk = fit_ctkf(d.schema, train, copt);
        emit(level, "ctkf", (std::uint64_t)sd, evaluate_cmtf(tk.factors, d.schema, test));
      }
    }
  } else if (kind == "side-info") {
    for (double level : {0.05, 0.1, 0.2, 0.35, 0.5}) {
      for (int sd = 0; sd < seeds; ++sd) {
        SynthConfig cfg;
        cfg.counts = {n, n, n};
        cfg.h = h;
        cfg.tucker = tucker;
        cfg.observed = {0.1, level, level};
        cfg.min_per_line = 1;
        cfg.seed = (std::uint64_t)sd;
        SynthData d = generate(cfg);
        SplitMasks masks = sparsify(d.schema, cfg);
        RelInstance train = restrict_to(d.schema, d.full, masks.train);
        RelInstance test =
            target_only(d.schema, restrict_to(d.schema, d.full, masks.test), 0);
        AutoEncoderConfig acfg;
        acfg.epochs = epochs;
        acfg.lr = lr_eern;
        acfg.seed = (std::uint64_t)sd;
        acfg.targets = {0};
        TrainResult res = train_autoencoder(d.schema, acfg, train);
        emit(level, "eern", (std::uint64_t)sd, evaluate(res.model, d.schema, train, test));
      }
    }
  } else {
    throw std::invalid_argument("sweep kind must be sparsity or side-info");
  }
  write_manifest(out_path + ".manifest.json", tokens, json());
  std::cout << "sweep: " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------- replay

int cmd_replay(const std::string& manifest_path) {
  json m = json::parse(slurp(manifest_path));
  auto tokens = m.at("command").get<std::vector<std::string>>();
  return dispatch(tokens);
}

int dispatch(const std::vector<std::string>& tokens) {
  CLI::App app{"equivariant entity-relationship layers"};
  app.require_subcommand(1);

  std::string schema_path, out_path, report_path, data_dir, model_dir, target_name, run_id;
  std::string n_text = "50", sparsity_text = "0.5", mode = "cp", method = "ccpf", pool = "mean";
  std::string kind = "sparsity", manifest_path;
  int trials = 20, h = 2, layers = 2, width = 16, h_code = 10, epochs = 1500, iters = 2000;
  int rank = 10, seeds = 3;
  i64 min_per_line = 5, n_sweep = 40;
  double lr = 3e-3, leak = 0.01, lr_cmtf = 0.2;
  std::uint64_t seed = 0;
  bool break_tying = false, zero_fill = false;

  auto* sc = app.add_subcommand("schema-check", "parse a schema and report sizes and tying counts");
  sc->add_option("--schema", schema_path, "schema file")->required();

  auto* pat = app.add_subcommand("pattern", "dump the tying pattern as a PGM image");
  pat->add_option("--schema", schema_path, "schema file")->required();
  pat->add_option("--out", out_path, "output .pgm path")->required();
  pat->add_option("--report", report_path, "also write a per-block class count report");

  auto* ce = app.add_subcommand("check-equivariance", "verify the layer against the dense oracle");
  ce->add_option("--schema", schema_path, "schema file")->required();
  ce->add_option("--trials", trials, "random trials per check");
  ce->add_option("--seed", seed, "master seed");
  ce->add_flag("--break-tying", break_tying, "corrupt one tied entry; checks must then fail");

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->set_help_flag("--help", "print help");
  gen->add_option("--out", out_path, "output directory")->required();
  gen->add_option("--n", n_text, "entity counts, one value or three comma-separated");
  gen->add_option("--h", h, "latent dimension");
  gen->add_option("--mode", mode, "cp or tucker");
  gen->add_option("--sparsity", sparsity_text, "observed fraction, one value or three");
  gen->add_option("--min-per-line", min_per_line, "min observed entries per row/column");
  gen->add_option("--seed", seed, "master seed");

  auto* te = app.add_subcommand("train-eern", "train the equivariant auto-encoder");
  te->add_option("--data", data_dir, "dataset directory")->required();
  te->add_option("--target-relation", target_name, "relation to predict")->required();
  te->add_option("--out", out_path, "output directory")->required();
  te->add_option("--layers", layers, "hidden encoder/decoder layers");
  te->add_option("--width", width, "hidden layer width");
  te->add_option("--h-code", h_code, "code dimension per entity");
  te->add_option("--epochs", epochs, "training epochs");
  te->add_option("--lr", lr, "learning rate");
  te->add_option("--leak", leak, "leaky relu slope");
  te->add_option("--pool", pool, "sum or mean");
  te->add_option("--seed", seed, "master seed");
  te->add_option("--run-id", run_id, "metrics row id");

  auto* tc = app.add_subcommand("train-cmtf", "fit a coupled factorization baseline");
  tc->add_option("--data", data_dir, "dataset directory")->required();
  tc->add_option("--target-relation", target_name, "relation to predict")->required();
  tc->add_option("--method", method, "ccpf or ctkf");
  tc->add_option("--out", out_path, "output directory")->required();
  tc->add_option("--rank", rank, "factorization rank");
  tc->add_option("--iters", iters, "gradient steps");
  tc->add_option("--lr", lr_cmtf, "learning rate");
  tc->add_option("--seed", seed, "master seed");
  tc->add_flag("--cmtf-zero-fill", zero_fill, "treat unobserved entries as zeros");
  tc->add_option("--run-id", run_id, "metrics row id");

  auto* ev = app.add_subcommand("eval", "evaluate a saved model on a dataset");
  ev->add_option("--model", model_dir, "model output directory (from train-eern)")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--target-relation", target_name, "relation to score")->required();

  auto* sw = app.add_subcommand("sweep", "run a sparsity grid or side-information ablation");
  sw->set_help_flag("--help", "print help");
  sw->add_option("--kind", kind, "sparsity or side-info");
  sw->add_option("--out", out_path, "output CSV")->required();
  sw->add_option("--n", n_sweep, "entity count");
  sw->add_option("--h", h, "latent dimension");
  sw->add_option("--mode", mode, "cp or tucker");
  sw->add_option("--seeds", seeds, "seeds per level");
  sw->add_option("--epochs", epochs, "eern epochs");
  sw->add_option("--iters", iters, "cmtf iterations");
  sw->add_option("--lr", lr, "eern learning rate");
  sw->add_option("--lr-cmtf", lr_cmtf, "cmtf learning rate");

  auto* rp = app.add_subcommand("replay", "re-run a command from its manifest");
  rp->add_option("--manifest", manifest_path, "manifest.json path")->required();

  std::vector<const char*> argv{"eerl"};
  for (const auto& t : tokens) argv.push_back(t.c_str());
  try {
    app.parse((int)argv.size(), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  if (sc->parsed()) return cmd_schema_check(schema_path);
  if (pat->parsed()) return cmd_pattern(schema_path, out_path, report_path);
  if (ce->parsed()) return cmd_check_equivariance(schema_path, trials, seed, break_tying);
  if (gen->parsed())
    return cmd_gen(tokens, out_path, n_text, h, mode, sparsity_text, min_per_line, seed);
  if (te->parsed())
    return cmd_train_eern(tokens, data_dir, target_name, out_path, layers, width, h_code, epochs,
                          lr, leak, pool, seed, run_id);
  if (tc->parsed())
    return cmd_train_cmtf(tokens, data_dir, target_name, method, out_path, rank, iters, lr_cmtf,
                          seed, zero_fill, run_id);
  if (ev->parsed()) return cmd_eval(model_dir, data_dir, target_name);
  if (sw->parsed())
    return cmd_sweep(tokens, kind, out_path, n_sweep, h, mode, seeds, epochs, iters, lr, lr_cmtf);
  if (rp->parsed()) return cmd_replay(manifest_path);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> tokens(argv + 1, argv + argc);
  try {
    return dispatch(tokens);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
