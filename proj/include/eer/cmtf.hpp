#pragma once

#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "eer/relstore.hpp"
#include "eer/rng.hpp"

namespace eer {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Coupled matrix factorization baselines over binary relations: every
// relation is factorized with the two entity factor matrices it touches, and
// entities shared between relations share one factor.  The Tucker variant
// adds a rank x rank core per relation.
struct FactorSet {
  int rank = 0;
  bool tucker = false;
  std::vector<std::vector<double>> z;     // per entity, count * rank
  std::vector<std::vector<double>> core;  // per relation, rank * rank (tucker only)
};

struct CmtfOptions {
  int rank = 10;
  int iters = 2000;
  double lr = 0.2;
  std::uint64_t seed = 0;
  bool zero_fill = false;  // treat unobserved entries as observed zeros
};

namespace detail {

inline void check_binary(const Schema& s) {
  for (const auto& r : s.relations)
    if (r.members.size() != 2 || !r.repeat_free())
      throw std::invalid_argument("cmtf: needs binary relations over distinct entities");
}

inline FactorSet init_factors(const Schema& s, const CmtfOptions& opt, bool tucker) {
  FactorSet f;
  f.rank = opt.rank;
  f.tucker = tucker;
  RngHub hub{opt.seed};
  double scale = 1.0 / std::sqrt((double)opt.rank);
  for (size_t d = 0; d < s.entities.size(); ++d) {
    auto g = hub.stream("cmtf-z", (std::uint64_t)d);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<double> z((size_t)(s.entities[d].count * opt.rank));
    for (double& v : z) v = u(g) * scale;
    f.z.push_back(std::move(z));
  }
  if (tucker)
    for (size_t i = 0; i < s.relations.size(); ++i) {
      std::vector<double> c((size_t)opt.rank * opt.rank, 0.0);
      for (int r = 0; r < opt.rank; ++r) c[(size_t)(r * opt.rank + r)] = 1.0;
      f.core.push_back(std::move(c));
    }
  return f;
}

struct Entry {
  int rel;
  i64 a, b;
  double v;
};

inline std::vector<Entry> training_entries(const RelInstance& x, bool zero_fill) {
  std::vector<Entry> es;
  for (size_t i = 0; i < x.rel.size(); ++i) {
    const auto& t = x.rel[i];
    if (t.channels != 1) throw std::invalid_argument("cmtf: single channel data only");
    i64 cols = t.shape[1];
    if (zero_fill) {
      std::vector<double> dense = t.to_dense();
      for (i64 p = 0; p < t.size(); ++p)
        es.push_back({(int)i, p / cols, p % cols, dense[(size_t)p]});
    } else {
      for (size_t e = 0; e < t.pos.size(); ++e)
        es.push_back({(int)i, t.pos[e] / cols, t.pos[e] % cols, t.val[e]});
    }
  }
  if (es.empty()) throw std::invalid_argument("cmtf: no training entries");
  return es;
}

}  // namespace detail

inline double cmtf_value(const FactorSet& f, const Schema& s, int rel, i64 a, i64 b) {
  int d1 = s.relations[rel].members[0], d2 = s.relations[rel].members[1];
  const double* za = &f.z[d1][(size_t)(a * f.rank)];
  const double* zb = &f.z[d2][(size_t)(b * f.rank)];
  if (!f.tucker) {
    double v = 0.0;
    for (int r = 0; r < f.rank; ++r) v += za[r] * zb[r];
    return v;
  }
  const double* c = f.core[(size_t)rel].data();
  double v = 0.0;
  for (int r = 0; r < f.rank; ++r) {
    if (za[r] == 0.0) continue;
    const double* cr = c + (size_t)(r * f.rank);
    double acc = 0.0;
    for (int q = 0; q < f.rank; ++q) acc += cr[q] * zb[q];
    v += za[r] * acc;
  }
  return v;
}

struct CmtfResult {
  FactorSet factors;
  std::vector<double> loss;  // per iteration
};

namespace detail {

inline CmtfResult fit_cmtf(const Schema& s, const RelInstance& x, const CmtfOptions& opt,
                           bool tucker) {
  check_binary(s);
  check_instance(s, x);
  CmtfResult res;
  res.factors = init_factors(s, opt, tucker);
  FactorSet& f = res.factors;
  auto es = training_entries(x, opt.zero_fill);
  double inv = 1.0 / (double)es.size();
  std::vector<std::vector<double>> gz, gc;
  std::vector<double> tmp((size_t)opt.rank);
  for (int it = 0; it < opt.iters; ++it) {
    gz.assign(f.z.size(), {});
    for (size_t d = 0; d < f.z.size(); ++d) gz[d].assign(f.z[d].size(), 0.0);
    if (tucker) {
      gc.assign(f.core.size(), {});
      for (size_t i = 0; i < f.core.size(); ++i) gc[i].assign(f.core[i].size(), 0.0);
    }
    double loss = 0.0;
    for (const auto& e : es) {
      int d1 = s.relations[e.rel].members[0], d2 = s.relations[e.rel].members[1];
      double* za = &f.z[d1][(size_t)(e.a * f.rank)];
      double* zb = &f.z[d2][(size_t)(e.b * f.rank)];
      double err = cmtf_value(f, s, e.rel, e.a, e.b) - e.v;
      loss += err * err;
      double g = 2.0 * err * inv;
      if (!tucker) {
        double* ga = &gz[d1][(size_t)(e.a * f.rank)];
        double* gb = &gz[d2][(size_t)(e.b * f.rank)];
        for (int r = 0; r < f.rank; ++r) {
          ga[r] += g * zb[r];
          gb[r] += g * za[r];
        }
      } else {
        const double* c = f.core[(size_t)e.rel].data();
        double* ga = &gz[d1][(size_t)(e.a * f.rank)];
        double* gb = &gz[d2][(size_t)(e.b * f.rank)];
        double* gcr = gc[(size_t)e.rel].data();
        for (int r = 0; r < f.rank; ++r) {
          double cz = 0.0, cg = 0.0;
          const double* cr = c + (size_t)(r * f.rank);
          for (int q = 0; q < f.rank; ++q) {
            cz += cr[q] * zb[q];
            cg += c[(size_t)(q * f.rank + r)] * za[q];
          }
          ga[r] += g * cz;
          gb[r] += g * cg;
          tmp[(size_t)r] = g * za[r];
        }
        for (int r = 0; r < f.rank; ++r)
          for (int q = 0; q < f.rank; ++q) gcr[(size_t)(r * f.rank + q)] += tmp[(size_t)r] * zb[q];
      }
    }
    loss *= inv;
    if (!std::isfinite(loss)) throw DivergenceError("cmtf: loss diverged at iteration " +
                                                    std::to_string(it));
    res.loss.push_back(loss);
    for (size_t d = 0; d < f.z.size(); ++d)
      for (size_t q = 0; q < f.z[d].size(); ++q) f.z[d][q] -= opt.lr * gz[d][q];
    if (tucker)
      for (size_t i = 0; i < f.core.size(); ++i)
        for (size_t q = 0; q < f.core[i].size(); ++q) f.core[i][q] -= opt.lr * gc[i][q];
  }
  return res;
}

}  // namespace detail

inline CmtfResult fit_ccpf(const Schema& s, const RelInstance& x, const CmtfOptions& opt) {
  return detail::fit_cmtf(s, x, opt, false);
}

inline CmtfResult fit_ctkf(const Schema& s, const RelInstance& x, const CmtfOptions& opt) {
  return detail::fit_cmtf(s, x, opt, true);
}

inline std::vector<double> reconstruct(const FactorSet& f, const Schema& s, int rel) {
  detail::check_binary(s);
  auto shape = relation_shape(s, rel);
  std::vector<double> out((size_t)(shape[0] * shape[1]));
  for (i64 a = 0; a < shape[0]; ++a)
    for (i64 b = 0; b < shape[1]; ++b) out[(size_t)(a * shape[1] + b)] = cmtf_value(f, s, rel, a, b);
  return out;
}

inline double evaluate_cmtf(const FactorSet& f, const Schema& s, const RelInstance& test) {
  double se = 0.0;
  i64 n = 0;
  for (size_t i = 0; i < test.rel.size(); ++i) {
    const auto& t = test.rel[i];
    i64 cols = t.shape[1];
    for (size_t e = 0; e < t.pos.size(); ++e) {
      double d = cmtf_value(f, s, (int)i, t.pos[e] / cols, t.pos[e] % cols) - t.val[e];
      se += d * d;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("evaluate_cmtf: empty test set");
  return std::sqrt(se / (double)n);
}

inline void dump_factors(const FactorSet& f, const Schema& s, std::ostream& out) {
  char buf[64];
  out << "kind,name,instance";
  for (int r = 0; r < f.rank; ++r) out << ",f" << (r + 1);
  out << "\n";
  for (size_t d = 0; d < f.z.size(); ++d)
    for (i64 v = 0; v < s.entities[d].count; ++v) {
      out << "entity," << s.entities[d].name << "," << (v + 1);
      for (int r = 0; r < f.rank; ++r) {
        std::snprintf(buf, sizeof buf, "%.17g", f.z[d][(size_t)(v * f.rank + r)]);
        out << "," << buf;
      }
      out << "\n";
    }
  if (f.tucker)
    for (size_t i = 0; i < f.core.size(); ++i)
      for (int r = 0; r < f.rank; ++r) {
        out << "core," << s.relations[i].name << "," << (r + 1);
        for (int q = 0; q < f.rank; ++q) {
          std::snprintf(buf, sizeof buf, "%.17g", f.core[i][(size_t)(r * f.rank + q)]);
          out << "," << buf;
        }
        out << "\n";
      }
}

}  // namespace eer
