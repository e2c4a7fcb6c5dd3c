#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "eer/eerl.hpp"
#include "eer/rng.hpp"

namespace eer {

// Factorized auto-encoder: an equivariant encoder stack, observed-mean
// pooling to one code vector per entity instance, and an equivariant decoder
// stack that rebuilds the target relation from broadcast codes.  Weights
// depend only on the schema structure, so a trained model applies unchanged
// to instances of any size.
struct AutoEncoderConfig {
  std::vector<int> enc_widths{16, 16};
  int code_dim = 10;
  std::vector<int> dec_widths{16, 16};
  double leak = 0.01;
  PoolMode pool = PoolMode::ObservedMean;
  double lr = 3e-3;
  int epochs = 1500;
  std::uint64_t seed = 0;
  std::vector<int> targets;  // relation indices the loss reads; empty = all
};

struct AutoEncoder {
  Schema schema;  // structure of the training instance
  AutoEncoderConfig cfg;
  int data_channels = 1;
  std::vector<TiedWeights> enc, dec;

  int max_arity() const {
    size_t m = 1;
    for (const auto& r : schema.relations) m = std::max(m, r.members.size());
    return (int)m;
  }
};

struct EntityCodes {
  int dim = 0;
  std::vector<std::vector<double>> z;      // per entity, count * dim
  std::vector<std::vector<double>> count;  // observed incidences behind each code
};

namespace detail {

inline int subset_count(const Schema& s, int i, int j) {
  int shared = 0;
  for (auto [d, k] : multiset_intersection(s.relations[i], s.relations[j])) {
    (void)d;
    shared += k;
  }
  return 1 << shared;
}

inline void init_layer(const Schema& s, TiedWeights& w, std::mt19937_64& g) {
  size_t R = s.relations.size();
  for (size_t i = 0; i < R; ++i)
    for (size_t j = 0; j < R; ++j) {
      double bound = std::sqrt(6.0 / (w.k_in * subset_count(s, (int)i, (int)j)));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : w.block[i * R + j]) v = u(g);
    }
  // biases start at zero
}

}  // namespace detail

inline AutoEncoder init_autoencoder(const Schema& s, const AutoEncoderConfig& cfg,
                                    int data_channels = 1) {
  AutoEncoder m;
  m.schema = s;
  m.cfg = cfg;
  m.data_channels = data_channels;
  if (m.cfg.targets.empty())
    for (size_t i = 0; i < s.relations.size(); ++i) m.cfg.targets.push_back((int)i);
  RngHub hub{cfg.seed};
  std::vector<int> enc_chain{data_channels};
  for (int wd : cfg.enc_widths) enc_chain.push_back(wd);
  enc_chain.push_back(cfg.code_dim);
  int dec_in = m.max_arity() * cfg.code_dim;
  std::vector<int> dec_chain{dec_in};
  for (int wd : cfg.dec_widths) dec_chain.push_back(wd);
  dec_chain.push_back(data_channels);
  int li = 0;
  for (size_t l = 0; l + 1 < enc_chain.size(); ++l, ++li) {
    TiedWeights w = make_tied_weights(s, enc_chain[l], enc_chain[l + 1]);
    auto g = hub.stream("init", (std::uint64_t)li);
    detail::init_layer(s, w, g);
    m.enc.push_back(std::move(w));
  }
  for (size_t l = 0; l + 1 < dec_chain.size(); ++l, ++li) {
    TiedWeights w = make_tied_weights(s, dec_chain[l], dec_chain[l + 1]);
    auto g = hub.stream("init", (std::uint64_t)li);
    detail::init_layer(s, w, g);
    m.dec.push_back(std::move(w));
  }
  return m;
}

namespace detail {

struct ForwardTrace {
  std::vector<LayerCache> enc_caches, dec_caches;
  DenseInstance enc_out;   // last encoder activation
  EntityCodes codes;
  DenseInstance dec_in;
  DenseInstance pred;      // decoder output
};

inline Activation hidden_act(const AutoEncoderConfig& cfg) { return leaky_relu(cfg.leak); }

// Observed-mean over every incidence of the entity in every relation.
inline EntityCodes pool_codes(const Schema& s, const DenseInstance& h) {
  EntityCodes c;
  int dim = h.rel.empty() ? 0 : h.rel[0].channels;
  c.dim = dim;
  for (const auto& e : s.entities) {
    c.z.emplace_back((size_t)(e.count * dim), 0.0);
    c.count.emplace_back((size_t)e.count, 0.0);
  }
  for (size_t i = 0; i < h.rel.size(); ++i) {
    const auto& r = h.rel[i];
    auto st = strides_of(r.shape);
    const auto& members = s.relations[i].members;
    for (size_t a = 0; a < members.size(); ++a) {
      int d = members[a];
      for (i64 n = 0; n < r.positions; ++n) {
        double mw = r.mask.empty() ? 1.0 : r.mask[(size_t)n];
        if (mw == 0.0) continue;
        i64 v = (n / st[a]) % r.shape[a];
        c.count[d][(size_t)v] += mw;
        for (int k = 0; k < dim; ++k)
          c.z[d][(size_t)(v * dim + k)] += r.val[(size_t)(n * dim + k)];
      }
    }
  }
  for (size_t d = 0; d < c.z.size(); ++d)
    for (size_t v = 0; v < c.count[d].size(); ++v)
      if (c.count[d][v] > 0.0)
        for (int k = 0; k < dim; ++k) c.z[d][v * (size_t)dim + k] /= c.count[d][v];
  return c;
}

// Decoder input: member codes side by side as channels, padded to the widest
// arity; fully observed.
inline DenseInstance codes_to_dec_in(const Schema& s, const EntityCodes& c, int max_arity) {
  DenseInstance d;
  int ch = max_arity * c.dim;
  for (size_t i = 0; i < s.relations.size(); ++i) {
    DenseRel r;
    r.shape = relation_shape(s, (int)i);
    r.positions = relation_size(s, (int)i);
    r.channels = ch;
    r.val.assign((size_t)(r.positions * ch), 0.0);
    auto st = strides_of(r.shape);
    const auto& members = s.relations[i].members;
    for (i64 n = 0; n < r.positions; ++n)
      for (size_t a = 0; a < members.size(); ++a) {
        i64 v = (n / st[a]) % r.shape[a];
        const double* zv = &c.z[members[a]][(size_t)(v * c.dim)];
        double* out = &r.val[(size_t)(n * ch + (i64)a * c.dim)];
        for (int k = 0; k < c.dim; ++k) out[k] = zv[k];
      }
    d.rel.push_back(std::move(r));
  }
  return d;
}

inline ForwardTrace run_forward(const AutoEncoder& m, const Schema& s, const PoolPlan& plan,
                                const DenseInstance& x, bool keep_caches) {
  ForwardTrace tr;
  Activation hact = hidden_act(m.cfg);
  DenseInstance h = x;
  for (size_t l = 0; l < m.enc.size(); ++l) {
    Activation act = (l + 1 == m.enc.size()) ? identity_act() : hact;
    if (keep_caches) {
      tr.enc_caches.emplace_back();
      h = forward_dense(s, plan, h, m.enc[l], act, m.cfg.pool, &tr.enc_caches.back());
    } else {
      h = forward_dense(s, plan, h, m.enc[l], act, m.cfg.pool);
    }
  }
  tr.enc_out = h;
  tr.codes = pool_codes(s, h);
  tr.dec_in = codes_to_dec_in(s, tr.codes, m.max_arity());
  DenseInstance g = tr.dec_in;
  for (size_t l = 0; l < m.dec.size(); ++l) {
    Activation act = (l + 1 == m.dec.size()) ? identity_act() : hact;
    if (keep_caches) {
      tr.dec_caches.emplace_back();
      g = forward_dense(s, plan, g, m.dec[l], act, m.cfg.pool, &tr.dec_caches.back());
    } else {
      g = forward_dense(s, plan, g, m.dec[l], act, m.cfg.pool);
    }
  }
  tr.pred = g;
  return tr;
}

}  // namespace detail

inline EntityCodes encode(const AutoEncoder& m, const Schema& s, const RelInstance& x) {
  if (!m.schema.same_structure(s)) throw std::invalid_argument("encode: schema structure mismatch");
  PoolPlan plan = make_pool_plan(s);
  auto tr = detail::run_forward(m, s, plan, to_dense_instance(s, x), false);
  return tr.codes;
}

// Decoder output at every position of every relation.
inline DenseInstance decode(const AutoEncoder& m, const Schema& s, const EntityCodes& codes) {
  if (!m.schema.same_structure(s)) throw std::invalid_argument("decode: schema structure mismatch");
  PoolPlan plan = make_pool_plan(s);
  Activation hact = detail::hidden_act(m.cfg);
  DenseInstance g = detail::codes_to_dec_in(s, codes, m.max_arity());
  for (size_t l = 0; l < m.dec.size(); ++l) {
    Activation act = (l + 1 == m.dec.size()) ? identity_act() : hact;
    g = forward_dense(s, plan, g, m.dec[l], act, m.cfg.pool);
  }
  return g;
}

inline DenseInstance predict(const AutoEncoder& m, const Schema& s, const RelInstance& x) {
  if (!m.schema.same_structure(s)) throw std::invalid_argument("predict: schema structure mismatch");
  PoolPlan plan = make_pool_plan(s);
  auto tr = detail::run_forward(m, s, plan, to_dense_instance(s, x), false);
  return tr.pred;
}

// RMSE of the model's predictions at the entries of `test`, encoding from
// the observed instance `x`.
inline double evaluate(const AutoEncoder& m, const Schema& s, const RelInstance& x,
                       const RelInstance& test) {
  DenseInstance pred = predict(m, s, x);
  double se = 0.0;
  i64 n = 0;
  for (size_t i = 0; i < test.rel.size(); ++i) {
    const auto& t = test.rel[i];
    for (size_t e = 0; e < t.pos.size(); ++e)
      for (int k = 0; k < t.channels; ++k) {
        double d = pred.rel[i].val[(size_t)(t.pos[e] * t.channels + k)] - t.val[e * t.channels + k];
        se += d * d;
        ++n;
      }
  }
  if (n == 0) throw std::invalid_argument("evaluate: empty test set");
  return std::sqrt(se / (double)n);
}

namespace detail {

// Adam, one state pair per weight vector.
struct AdamState {
  std::vector<std::vector<double>> m1, m2;
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  i64 t = 0;

  void match(const std::vector<const std::vector<double>*>& params) {
    for (const auto* p : params) {
      m1.emplace_back(p->size(), 0.0);
      m2.emplace_back(p->size(), 0.0);
    }
  }
  void step(std::vector<std::vector<double>*> params, std::vector<const std::vector<double>*> grads,
            double lr) {
    ++t;
    double c1 = 1.0 - std::pow(b1, (double)t), c2 = 1.0 - std::pow(b2, (double)t);
    for (size_t p = 0; p < params.size(); ++p) {
      auto& w = *params[p];
      const auto& g = *grads[p];
      for (size_t q = 0; q < w.size(); ++q) {
        m1[p][q] = b1 * m1[p][q] + (1 - b1) * g[q];
        m2[p][q] = b2 * m2[p][q] + (1 - b2) * g[q] * g[q];
        w[q] -= lr * (m1[p][q] / c1) / (std::sqrt(m2[p][q] / c2) + eps);
      }
    }
  }
};

inline std::vector<std::vector<double>*> param_vectors(AutoEncoder& m) {
  std::vector<std::vector<double>*> out;
  for (auto* stack : {&m.enc, &m.dec})
    for (auto& w : *stack) {
      for (auto& blk : w.block) out.push_back(&blk);
      for (auto& b : w.bias) out.push_back(&b);
    }
  return out;
}

inline std::vector<const std::vector<double>*> grad_vectors(const std::vector<TiedWeights>& gs) {
  std::vector<const std::vector<double>*> out;
  for (const auto& w : gs) {
    for (const auto& blk : w.block) out.push_back(&blk);
    for (const auto& b : w.bias) out.push_back(&b);
  }
  return out;
}

}  // namespace detail

struct TrainResult {
  AutoEncoder model;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_rmse;    // per epoch when a validation set is given
};

// Full-batch Adam on the masked MSE of the target relations' observed
// entries.  Bitwise deterministic for a fixed seed.
inline TrainResult train_autoencoder(const Schema& s, const AutoEncoderConfig& cfg,
                                     const RelInstance& train_x,
                                     const RelInstance* val_x = nullptr) {
  check_instance(s, train_x);
  TrainResult res;
  res.model = init_autoencoder(s, cfg, train_x.channels());
  AutoEncoder& m = res.model;
  PoolPlan plan = make_pool_plan(s);
  DenseInstance x = to_dense_instance(s, train_x);
  int K = train_x.channels();

  std::vector<char> is_target(s.relations.size(), 0);
  for (int t : m.cfg.targets) is_target[(size_t)t] = 1;
  i64 count = 0;
  for (size_t i = 0; i < s.relations.size(); ++i)
    if (is_target[i]) count += train_x.rel[i].nnz() * K;
  if (count == 0) throw std::invalid_argument("train: no observed target entries");

  detail::AdamState adam;
  {
    std::vector<const std::vector<double>*> view;
    for (auto* p : detail::param_vectors(m)) view.push_back(p);
    adam.match(view);
  }

  for (int epoch = 0; epoch < m.cfg.epochs; ++epoch) {
    auto tr = detail::run_forward(m, s, plan, x, true);
    // Loss and its gradient at the decoder output.
    double loss = 0.0;
    DenseInstance up;
    for (size_t i = 0; i < s.relations.size(); ++i) {
      DenseRel u;
      u.shape = x.rel[i].shape;
      u.positions = x.rel[i].positions;
      u.channels = K;
      u.val.assign((size_t)(u.positions * K), 0.0);
      if (is_target[i]) {
        for (i64 n = 0; n < u.positions; ++n) {
          if (x.rel[i].mask[(size_t)n] == 0.0) continue;
          for (int k = 0; k < K; ++k) {
            double d = tr.pred.rel[i].val[(size_t)(n * K + k)] - x.rel[i].val[(size_t)(n * K + k)];
            loss += d * d;
            u.val[(size_t)(n * K + k)] = 2.0 * d / (double)count;
          }
        }
      }
      up.rel.push_back(std::move(u));
    }
    loss /= (double)count;
    res.train_loss.push_back(loss);

    // Decoder stack.
    std::vector<TiedWeights> grads(m.enc.size() + m.dec.size());
    DenseInstance cur = up;
    Activation hact = detail::hidden_act(m.cfg);
    for (size_t l = m.dec.size(); l-- > 0;) {
      Activation act = (l + 1 == m.dec.size()) ? identity_act() : hact;
      LayerGrads g = backward_dense(s, plan, tr.dec_caches[l], m.dec[l], act, m.cfg.pool, cur);
      grads[m.enc.size() + l] = std::move(g.w);
      cur = std::move(g.x);
    }
    // Through the code broadcast and the code pooling.
    EntityCodes dz;
    dz.dim = m.cfg.code_dim;
    for (const auto& e : s.entities) dz.z.emplace_back((size_t)(e.count * m.cfg.code_dim), 0.0);
    for (size_t i = 0; i < s.relations.size(); ++i) {
      const auto& r = cur.rel[i];
      auto st = strides_of(r.shape);
      const auto& members = s.relations[i].members;
      for (size_t a = 0; a < members.size(); ++a)
        for (i64 n = 0; n < r.positions; ++n) {
          i64 v = (n / st[a]) % r.shape[a];
          const double* uv = &r.val[(size_t)(n * r.channels + (i64)a * m.cfg.code_dim)];
          double* zv = &dz.z[members[a]][(size_t)(v * m.cfg.code_dim)];
          for (int k = 0; k < m.cfg.code_dim; ++k) zv[k] += uv[k];
        }
    }
    DenseInstance dh;
    for (size_t i = 0; i < s.relations.size(); ++i) {
      DenseRel u;
      u.shape = x.rel[i].shape;
      u.positions = x.rel[i].positions;
      u.channels = m.cfg.code_dim;
      u.val.assign((size_t)(u.positions * m.cfg.code_dim), 0.0);
      auto st = strides_of(u.shape);
      const auto& members = s.relations[i].members;
      for (size_t a = 0; a < members.size(); ++a)
        for (i64 n = 0; n < u.positions; ++n) {
          if (x.rel[i].mask[(size_t)n] == 0.0) continue;
          i64 v = (n / st[a]) % u.shape[a];
          double c = tr.codes.count[members[a]][(size_t)v];
          const double* zv = &dz.z[members[a]][(size_t)(v * m.cfg.code_dim)];
          double* uv = &u.val[(size_t)(n * m.cfg.code_dim)];
          for (int k = 0; k < m.cfg.code_dim; ++k) uv[k] += zv[k] / c;
        }
      dh.rel.push_back(std::move(u));
    }
    // Encoder stack.
    cur = std::move(dh);
    for (size_t l = m.enc.size(); l-- > 0;) {
      Activation act = (l + 1 == m.enc.size()) ? identity_act() : hact;
      LayerGrads g = backward_dense(s, plan, tr.enc_caches[l], m.enc[l], act, m.cfg.pool, cur);
      grads[l] = std::move(g.w);
      cur = std::move(g.x);
    }

    adam.step(detail::param_vectors(m), detail::grad_vectors(grads), m.cfg.lr);
    if (val_x) res.val_rmse.push_back(evaluate(m, s, train_x, *val_x));
  }
  return res;
}

inline void dump_codes(const AutoEncoder& m, const Schema& s, const RelInstance& x,
                       std::ostream& out) {
  EntityCodes c = encode(m, s, x);
  out << "entity,instance";
  for (int k = 0; k < c.dim; ++k) out << ",c" << (k + 1);
  out << "\n";
  char buf[64];
  for (size_t d = 0; d < s.entities.size(); ++d)
    for (i64 v = 0; v < s.entities[d].count; ++v) {
      out << s.entities[d].name << "," << (v + 1);
      for (int k = 0; k < c.dim; ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", c.z[d][(size_t)(v * c.dim + k)]);
        out << "," << buf;
      }
      out << "\n";
    }
}

inline void save_model(const AutoEncoder& m, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream cfg(dir + "/config.txt");
  cfg << "eermodel 1\n";
  cfg << "channels " << m.data_channels << "\n";
  cfg << "enc";
  for (int w : m.cfg.enc_widths) cfg << " " << w;
  cfg << "\ncode " << m.cfg.code_dim << "\ndec";
  for (int w : m.cfg.dec_widths) cfg << " " << w;
  cfg << "\nleak " << m.cfg.leak << "\n";
  cfg << "pool " << (m.cfg.pool == PoolMode::Sum ? "sum" : "mean") << "\n";
  cfg << "targets";
  for (int t : m.cfg.targets) cfg << " " << (t + 1);
  cfg << "\n";
  std::ofstream sch(dir + "/schema.txt");
  sch << render_schema(m.schema);
  for (size_t l = 0; l < m.enc.size(); ++l) {
    std::ofstream f(dir + "/enc" + std::to_string(l) + ".weights");
    write_weights(f, m.schema, m.enc[l]);
  }
  for (size_t l = 0; l < m.dec.size(); ++l) {
    std::ofstream f(dir + "/dec" + std::to_string(l) + ".weights");
    write_weights(f, m.schema, m.dec[l]);
  }
}

inline AutoEncoder load_model(const std::string& dir) {
  std::ifstream sch(dir + "/schema.txt");
  if (!sch) throw std::runtime_error("load_model: missing schema.txt");
  std::stringstream sbuf;
  sbuf << sch.rdbuf();
  AutoEncoder m;
  m.schema = parse_schema(sbuf.str());
  std::ifstream cfg(dir + "/config.txt");
  if (!cfg) throw std::runtime_error("load_model: missing config.txt");
  std::string line, word;
  if (!std::getline(cfg, line) || line != "eermodel 1")
    throw std::runtime_error("load_model: bad config header");
  m.cfg.enc_widths.clear();
  m.cfg.dec_widths.clear();
  m.cfg.targets.clear();
  while (std::getline(cfg, line)) {
    std::istringstream ls(line);
    if (!(ls >> word)) continue;
    if (word == "channels")
      ls >> m.data_channels;
    else if (word == "enc")
      for (int v; ls >> v;) m.cfg.enc_widths.push_back(v);
    else if (word == "code")
      ls >> m.cfg.code_dim;
    else if (word == "dec")
      for (int v; ls >> v;) m.cfg.dec_widths.push_back(v);
    else if (word == "leak")
      ls >> m.cfg.leak;
    else if (word == "pool") {
      std::string p;
      ls >> p;
      m.cfg.pool = p == "sum" ? PoolMode::Sum : PoolMode::ObservedMean;
    } else if (word == "targets")
      for (int v; ls >> v;) m.cfg.targets.push_back(v - 1);
    else
      throw std::runtime_error("load_model: unknown config key '" + word + "'");
  }
  size_t enc_count = m.cfg.enc_widths.size() + 1, dec_count = m.cfg.dec_widths.size() + 1;
  for (size_t l = 0; l < enc_count; ++l) {
    std::ifstream f(dir + "/enc" + std::to_string(l) + ".weights");
    if (!f) throw std::runtime_error("load_model: missing encoder layer file");
    m.enc.push_back(read_weights(f, m.schema));
  }
  for (size_t l = 0; l < dec_count; ++l) {
    std::ifstream f(dir + "/dec" + std::to_string(l) + ".weights");
    if (!f) throw std::runtime_error("load_model: missing decoder layer file");
    m.dec.push_back(read_weights(f, m.schema));
  }
  return m;
}

}  // namespace eer
