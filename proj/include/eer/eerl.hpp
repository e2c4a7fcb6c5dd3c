#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "eer/oracle.hpp"
#include "eer/relstore.hpp"
#include "eer/tying.hpp"

namespace eer {

// Pooling modes: Sum is the literal linear map (matches the dense matrix on
// fully observed data); ObservedMean divides every pooled sum by the number
// of observed records it covers, which keeps activations on one scale across
// instance sizes.  Both pool over observed records only.
enum class PoolMode { Sum, ObservedMean };

struct Activation {
  enum class Kind { Identity, LeakyRelu };
  Kind kind = Kind::Identity;
  double leak = 0.01;

  double operator()(double v) const {
    return kind == Kind::Identity ? v : (v >= 0 ? v : leak * v);
  }
  double deriv(double v) const { return kind == Kind::Identity ? 1.0 : (v >= 0 ? 1.0 : leak); }
};

inline Activation identity_act() { return {Activation::Kind::Identity, 0.0}; }
inline Activation leaky_relu(double leak = 0.01) { return {Activation::Kind::LeakyRelu, leak}; }

// Dense per-relation tensor with channels innermost; mask has one slot per
// position (1 observed, 0 missing) and is independent of channels.
struct DenseRel {
  std::vector<i64> shape;
  i64 positions = 0;
  int channels = 1;
  std::vector<double> val;
  std::vector<double> mask;
};

struct DenseInstance {
  std::vector<DenseRel> rel;
};

inline DenseInstance to_dense_instance(const Schema& s, const RelInstance& x) {
  check_instance(s, x);
  DenseInstance d;
  for (const auto& t : x.rel) {
    DenseRel r;
    r.shape = t.shape;
    r.positions = t.size();
    r.channels = t.channels;
    r.val.assign((size_t)(r.positions * r.channels), 0.0);
    r.mask.assign((size_t)r.positions, 0.0);
    for (size_t e = 0; e < t.pos.size(); ++e) {
      r.mask[(size_t)t.pos[e]] = 1.0;
      for (int k = 0; k < t.channels; ++k)
        r.val[(size_t)(t.pos[e] * t.channels + k)] = t.val[e * t.channels + k];
    }
    d.rel.push_back(std::move(r));
  }
  return d;
}

// Reads the dense values back at the template's observed positions.
inline RelInstance to_instance(const Schema& s, const DenseInstance& d, const RelInstance& like) {
  RelInstance y = make_instance(s, d.rel.empty() ? 1 : d.rel[0].channels);
  for (size_t i = 0; i < y.rel.size(); ++i) {
    auto& t = y.rel[i];
    t.pos = like.rel[i].pos;
    t.val.resize(t.pos.size() * (size_t)t.channels);
    for (size_t e = 0; e < t.pos.size(); ++e)
      for (int k = 0; k < t.channels; ++k)
        t.val[e * t.channels + k] = d.rel[i].val[(size_t)(t.pos[e] * t.channels + k)];
  }
  return y;
}

// Pooled tensor over a kept subset of axes, plus the observed count behind
// every slot (counts drive ObservedMean and its adjoint).
struct Pooled {
  std::vector<i64> shape;
  i64 positions = 1;
  int channels = 1;
  std::vector<double> val;
  std::vector<double> count;
};

namespace detail {

inline std::vector<i64> axis_strides(const std::vector<i64>& shape) { return strides_of(shape); }

inline i64 kept_index(i64 flat, const std::vector<i64>& st, const std::vector<i64>& shape,
                      const std::vector<int>& axes, const std::vector<i64>& kept_st) {
  i64 q = 0;
  for (size_t t = 0; t < axes.size(); ++t)
    q += ((flat / st[axes[t]]) % shape[axes[t]]) * kept_st[t];
  return q;
}

}  // namespace detail

// Sums observed records over the dropped axes; keep lists the source axes
// that survive, in the order the result's axes take.
inline Pooled pool_keep(const DenseRel& x, const std::vector<int>& keep, PoolMode mode) {
  Pooled p;
  p.channels = x.channels;
  for (int a : keep) p.shape.push_back(x.shape[a]);
  for (i64 v : p.shape) p.positions *= v;
  p.val.assign((size_t)(p.positions * p.channels), 0.0);
  p.count.assign((size_t)p.positions, 0.0);
  auto st = detail::axis_strides(x.shape);
  auto kept_st = strides_of(p.shape);
  for (i64 m = 0; m < x.positions; ++m) {
    double w = x.mask.empty() ? 1.0 : x.mask[(size_t)m];
    if (w == 0.0) continue;
    i64 q = detail::kept_index(m, st, x.shape, keep, kept_st);
    p.count[(size_t)q] += w;
    for (int k = 0; k < x.channels; ++k)
      p.val[(size_t)(q * p.channels + k)] += x.val[(size_t)(m * p.channels + k)];
  }
  if (mode == PoolMode::ObservedMean)
    for (i64 q = 0; q < p.positions; ++q) {
      double c = p.count[(size_t)q];
      if (c > 0.0)
        for (int k = 0; k < p.channels; ++k) p.val[(size_t)(q * p.channels + k)] /= c;
    }
  return p;
}

inline std::vector<int> kept_axes_of(const Schema& s, int rel, const std::vector<int>& sum_out) {
  std::vector<int> keep;
  const auto& members = s.relations[rel].members;
  for (size_t a = 0; a < members.size(); ++a) {
    bool drop = false;
    for (int d : sum_out) drop = drop || (members[a] == d);
    if (!drop) keep.push_back((int)a);
  }
  return keep;
}

inline DenseRel broadcast(const Schema& s, const Pooled& y, int rel,
                          const std::vector<int>& kept_axes) {
  DenseRel out;
  out.shape = relation_shape(s, rel);
  out.positions = relation_size(s, rel);
  out.channels = y.channels;
  out.val.assign((size_t)(out.positions * out.channels), 0.0);
  auto st = detail::axis_strides(out.shape);
  auto kept_st = strides_of(y.shape);
  for (i64 n = 0; n < out.positions; ++n) {
    i64 q = detail::kept_index(n, st, out.shape, kept_axes, kept_st);
    for (int k = 0; k < out.channels; ++k)
      out.val[(size_t)(n * out.channels + k)] = y.val[(size_t)(q * y.channels + k)];
  }
  return out;
}

// Entity-subset views of the same primitives: pool sums out S, and broadcast
// replicates back along S.
inline Pooled pool(const Schema& s, const DenseRel& x, int rel, const std::vector<int>& sum_out,
                   PoolMode mode = PoolMode::Sum) {
  return pool_keep(x, kept_axes_of(s, rel, sum_out), mode);
}

inline DenseRel broadcast_over(const Schema& s, const Pooled& y, int rel,
                               const std::vector<int>& summed_out) {
  return broadcast(s, y, rel, kept_axes_of(s, rel, summed_out));
}

// One matched entity subset T of an ordered relation pair: pool the source
// over everything outside T, scale, broadcast into the target.  The class
// parameters sit on equality patterns, so the subset coefficient is their
// alternating sum over patterns below T; conversely each class value is the
// plain sum of the coefficients below it.
struct PoolPlan {
  struct Term {
    std::vector<int> src_axes, dst_axes;  // aligned, ascending src
    std::vector<std::pair<std::uint64_t, double>> mobius;  // (class, sign)
  };
  struct Block {
    int i, j;
    std::vector<Term> terms;
  };
  std::vector<Block> blocks;
};

inline PoolPlan make_pool_plan(const Schema& s) {
  for (const auto& r : s.relations)
    if (!r.repeat_free())
      throw std::invalid_argument("pool plan: relation '" + r.name +
                                  "' repeats an entity; use the dense path");
  PoolPlan plan;
  size_t R = s.relations.size();
  for (size_t i = 0; i < R; ++i)
    for (size_t j = 0; j < R; ++j) {
      PoolPlan::Block blk;
      blk.i = (int)i;
      blk.j = (int)j;
      BlockSpec spec = make_block_spec(s, (int)i, (int)j);
      std::vector<int> shared;  // entity ids present on both sides
      for (const auto& pe : spec.entities)
        if (pe.arity_i == 1 && pe.arity_j == 1) shared.push_back(pe.entity);
      auto class_of_pattern = [&](size_t eq_bits) {
        std::uint64_t cls = 0;
        for (const auto& pe : spec.entities) {
          if (pe.arity_i + pe.arity_j != 2) continue;  // lone entity: single pattern
          bool eq = false;
          for (size_t t = 0; t < shared.size(); ++t)
            if (shared[t] == pe.entity) eq = (eq_bits >> t) & 1;
          cls += pe.stride * (eq ? 0 : 1);  // [0,0] ranks 0, [0,1] ranks 1
        }
        return cls;
      };
      const auto& mi = s.relations[i].members;
      const auto& mj = s.relations[j].members;
      for (size_t bits = 0; bits < (size_t)1 << shared.size(); ++bits) {
        PoolPlan::Term term;
        for (size_t a = 0; a < mj.size(); ++a) {
          bool in = false;
          for (size_t t = 0; t < shared.size(); ++t)
            if (mj[a] == shared[t] && ((bits >> t) & 1)) in = true;
          if (!in) continue;
          term.src_axes.push_back((int)a);
          for (size_t b = 0; b < mi.size(); ++b)
            if (mi[b] == mj[a]) term.dst_axes.push_back((int)b);
        }
        for (size_t sub = bits;; sub = (sub - 1) & bits) {
          int dropped = 0;
          for (size_t t = 0; t < shared.size(); ++t)
            if (((bits >> t) & 1) && !((sub >> t) & 1)) ++dropped;
          term.mobius.push_back({class_of_pattern(sub), dropped % 2 ? -1.0 : 1.0});
          if (sub == 0) break;
        }
        blk.terms.push_back(std::move(term));
      }
      plan.blocks.push_back(std::move(blk));
    }
  return plan;
}

struct LayerCache {
  DenseInstance x;
  DenseInstance pre;
  std::vector<std::vector<Pooled>> pooled;  // per block, per term
};

inline DenseInstance forward_dense(const Schema& s, const PoolPlan& plan, const DenseInstance& x,
                                   const TiedWeights& w, Activation act, PoolMode mode,
                                   LayerCache* cache = nullptr) {
  size_t R = s.relations.size();
  if (x.rel.size() != R) throw std::invalid_argument("forward: relation count mismatch");
  for (const auto& r : x.rel)
    if (r.channels != w.k_in) throw std::invalid_argument("forward: channel mismatch");
  DenseInstance out;
  for (size_t i = 0; i < R; ++i) {
    DenseRel o;
    o.shape = x.rel[i].shape;
    o.positions = x.rel[i].positions;
    o.channels = w.k_out;
    o.val.assign((size_t)(o.positions * w.k_out), 0.0);
    o.mask = x.rel[i].mask;
    out.rel.push_back(std::move(o));
  }
  if (cache) {
    cache->x = x;
    cache->pooled.assign(plan.blocks.size(), {});
  }
  std::vector<double> coef((size_t)w.k_in * w.k_out);
  for (size_t bi = 0; bi < plan.blocks.size(); ++bi) {
    const auto& blk = plan.blocks[bi];
    const auto& src = x.rel[blk.j];
    auto& dst = out.rel[blk.i];
    auto dst_st = detail::axis_strides(dst.shape);
    for (const auto& term : blk.terms) {
      Pooled p = pool_keep(src, term.src_axes, mode);
      std::fill(coef.begin(), coef.end(), 0.0);
      for (auto [cls, sign] : term.mobius) {
        std::uint64_t c = merged_class(w, blk.i, blk.j, cls);
        for (int k = 0; k < w.k_in; ++k)
          for (int ko = 0; ko < w.k_out; ++ko)
            coef[(size_t)(k * w.k_out + ko)] += sign * w.w(s, blk.i, blk.j, c, k, ko);
      }
      // Contract channels on the pooled tensor first; the broadcast then
      // costs one add per output slot.
      std::vector<double> z((size_t)(p.positions * w.k_out), 0.0);
      for (i64 q = 0; q < p.positions; ++q) {
        const double* pv = &p.val[(size_t)(q * w.k_in)];
        double* zv = &z[(size_t)(q * w.k_out)];
        for (int k = 0; k < w.k_in; ++k) {
          double xv = pv[k];
          if (xv == 0.0) continue;
          const double* ck = &coef[(size_t)(k * w.k_out)];
          for (int ko = 0; ko < w.k_out; ++ko) zv[ko] += xv * ck[ko];
        }
      }
      auto kept_st = strides_of(p.shape);
      for (i64 n = 0; n < dst.positions; ++n) {
        i64 q = detail::kept_index(n, dst_st, dst.shape, term.dst_axes, kept_st);
        const double* zv = &z[(size_t)(q * w.k_out)];
        double* ov = &dst.val[(size_t)(n * w.k_out)];
        for (int ko = 0; ko < w.k_out; ++ko) ov[ko] += zv[ko];
      }
      if (cache) cache->pooled[bi].push_back(std::move(p));
    }
  }
  for (size_t i = 0; i < R; ++i) {
    auto& dst = out.rel[i];
    for (i64 n = 0; n < dst.positions; ++n)
      for (int ko = 0; ko < w.k_out; ++ko) dst.val[(size_t)(n * w.k_out + ko)] += w.bias[i][ko];
  }
  if (cache) cache->pre = out;
  for (auto& r : out.rel)
    for (double& v : r.val) v = act(v);
  return out;
}

struct LayerGrads {
  TiedWeights w;       // same layout as the weights
  DenseInstance x;     // gradient wrt the layer input
};

inline LayerGrads backward_dense(const Schema& s, const PoolPlan& plan, const LayerCache& cache,
                                 const TiedWeights& w, Activation act, PoolMode mode,
                                 const DenseInstance& upstream) {
  size_t R = s.relations.size();
  LayerGrads g;
  g.w = make_tied_weights(s, w.k_in, w.k_out);
  g.w.merged = w.merged;
  g.x.rel.resize(R);
  for (size_t i = 0; i < R; ++i) {
    auto& gr = g.x.rel[i];
    gr.shape = cache.x.rel[i].shape;
    gr.positions = cache.x.rel[i].positions;
    gr.channels = w.k_in;
    gr.val.assign((size_t)(gr.positions * w.k_in), 0.0);
    gr.mask = cache.x.rel[i].mask;
  }
  // d(pre-activation)
  DenseInstance dpre = upstream;
  for (size_t i = 0; i < R; ++i) {
    const auto& pre = cache.pre.rel[i];
    auto& d = dpre.rel[i];
    for (size_t q = 0; q < d.val.size(); ++q) d.val[q] *= act.deriv(pre.val[q]);
    for (i64 n = 0; n < d.positions; ++n)
      for (int ko = 0; ko < w.k_out; ++ko)
        g.w.bias[i][(size_t)ko] += d.val[(size_t)(n * w.k_out + ko)];
  }
  std::vector<double> coef((size_t)w.k_in * w.k_out), dcoef((size_t)w.k_in * w.k_out);
  for (size_t bi = 0; bi < plan.blocks.size(); ++bi) {
    const auto& blk = plan.blocks[bi];
    const auto& dp = dpre.rel[blk.i];
    const auto& src = cache.x.rel[blk.j];
    auto src_st = detail::axis_strides(src.shape);
    for (size_t ti = 0; ti < blk.terms.size(); ++ti) {
      const auto& term = blk.terms[ti];
      const Pooled& p = cache.pooled[bi][ti];
      // Adjoint of the broadcast: sum the upstream over the replicated axes.
      // The forward wrote to every output position, so no mask applies here;
      // kept axes follow term order, keeping it aligned with p.
      DenseRel up;
      up.shape = dp.shape;
      up.positions = dp.positions;
      up.channels = w.k_out;
      up.val = dp.val;
      Pooled usum = pool_keep(up, term.dst_axes, PoolMode::Sum);
      std::fill(dcoef.begin(), dcoef.end(), 0.0);
      for (i64 q = 0; q < p.positions; ++q)
        for (int k = 0; k < w.k_in; ++k) {
          double pv = p.val[(size_t)(q * w.k_in + k)];
          if (pv == 0.0) continue;
          for (int ko = 0; ko < w.k_out; ++ko)
            dcoef[(size_t)(k * w.k_out + ko)] += pv * usum.val[(size_t)(q * w.k_out + ko)];
        }
      for (auto [cls, sign] : term.mobius) {
        std::uint64_t c = merged_class(w, blk.i, blk.j, cls);
        for (int k = 0; k < w.k_in; ++k)
          for (int ko = 0; ko < w.k_out; ++ko)
            g.w.w(s, blk.i, blk.j, c, k, ko) += sign * dcoef[(size_t)(k * w.k_out + ko)];
      }
      // Adjoint of pool: route the summed upstream back to the observed
      // source records, through the mean scaling when active.
      std::fill(coef.begin(), coef.end(), 0.0);
      for (auto [cls, sign] : term.mobius) {
        std::uint64_t c = merged_class(w, blk.i, blk.j, cls);
        for (int k = 0; k < w.k_in; ++k)
          for (int ko = 0; ko < w.k_out; ++ko)
            coef[(size_t)(k * w.k_out + ko)] += sign * w.w(s, blk.i, blk.j, c, k, ko);
      }
      std::vector<double> dpool((size_t)(p.positions * w.k_in), 0.0);
      for (i64 q = 0; q < p.positions; ++q)
        for (int k = 0; k < w.k_in; ++k) {
          double acc = 0.0;
          for (int ko = 0; ko < w.k_out; ++ko)
            acc += coef[(size_t)(k * w.k_out + ko)] * usum.val[(size_t)(q * w.k_out + ko)];
          dpool[(size_t)(q * w.k_in + k)] = acc;
        }
      auto kept_st = strides_of(p.shape);
      auto& gx = g.x.rel[blk.j];
      for (i64 m = 0; m < src.positions; ++m) {
        double mw = src.mask.empty() ? 1.0 : src.mask[(size_t)m];
        if (mw == 0.0) continue;
        i64 q = detail::kept_index(m, src_st, src.shape, term.src_axes, kept_st);
        double scale = mode == PoolMode::Sum ? 1.0 : 1.0 / p.count[(size_t)q];
        for (int k = 0; k < w.k_in; ++k)
          gx.val[(size_t)(m * w.k_in + k)] += scale * dpool[(size_t)(q * w.k_in + k)];
      }
    }
  }
  return g;
}

// RelInstance views of the layer.  The output carries the input's masks;
// values live at the observed positions.
inline RelInstance forward(const Schema& s, const RelInstance& x, const TiedWeights& w,
                           Activation act, PoolMode mode) {
  PoolPlan plan = make_pool_plan(s);
  DenseInstance d = forward_dense(s, plan, to_dense_instance(s, x), w, act, mode);
  return to_instance(s, d, x);
}

// Literal dense application of the tied matrix, one (input, output) channel
// pair at a time; handles any schema, guarded by size.
inline RelInstance forward_dense_oracle(const Schema& s, const RelInstance& x,
                                        const TiedWeights& w, Activation act) {
  check_instance(s, x);
  if (x.channels() != w.k_in) throw std::invalid_argument("oracle: channel mismatch");
  i64 n = total_size(s);
  if (n > kDenseGuard) throw std::invalid_argument("oracle: coupled vector too large");
  auto pat = pattern_matrix(s);
  PatternTable pt = make_pattern_table(s);
  size_t R = s.relations.size();
  // Dense input, channel-major scratch.
  std::vector<double> xs((size_t)(n * w.k_in), 0.0);
  for (size_t i = 0; i < R; ++i) {
    const auto& t = x.rel[i];
    for (size_t e = 0; e < t.pos.size(); ++e)
      for (int k = 0; k < w.k_in; ++k)
        xs[(size_t)((pt.rel_offset[i] + t.pos[e]) * w.k_in + k)] = t.val[e * w.k_in + k];
  }
  std::vector<double> ys((size_t)(n * w.k_out), 0.0);
  std::vector<const double*> blk_of(R * R);
  std::vector<i64> cls_base(R * R);
  for (size_t b = 0; b < R * R; ++b) {
    blk_of[b] = w.block[b].data();
    cls_base[b] = pt.offsets[b];
  }
  for (i64 r = 0; r < n; ++r) {
    // locate the row's relation
    size_t ri = R - 1;
    for (size_t i = 0; i + 1 < R; ++i)
      if (r < pt.rel_offset[i + 1]) {
        ri = i;
        break;
      }
    for (i64 c = 0; c < n; ++c) {
      size_t ci = R - 1;
      for (size_t i = 0; i + 1 < R; ++i)
        if (c < pt.rel_offset[i + 1]) {
          ci = i;
          break;
        }
      size_t b = ri * R + ci;
      std::uint64_t cls =
          merged_class(w, (int)ri, (int)ci, (std::uint64_t)(pat[(size_t)(r * n + c)] - cls_base[b]));
      const double* wp = blk_of[b] + (size_t)cls * w.k_in * w.k_out;
      const double* xv = &xs[(size_t)(c * w.k_in)];
      double* yv = &ys[(size_t)(r * w.k_out)];
      for (int k = 0; k < w.k_in; ++k) {
        if (xv[k] == 0.0) continue;
        for (int ko = 0; ko < w.k_out; ++ko) yv[ko] += xv[k] * wp[k * w.k_out + ko];
      }
    }
  }
  for (size_t i = 0; i < R; ++i) {
    BiasSpec bs = make_bias_spec(s, (int)i);
    auto shape = relation_shape(s, (int)i);
    i64 ni = relation_size(s, (int)i);
    for (i64 q = 0; q < ni; ++q) {
      auto t = tuple_of(shape, q);
      std::uint64_t cls = bias_class_of(bs, t);
      for (int ko = 0; ko < w.k_out; ++ko)
        ys[(size_t)((pt.rel_offset[i] + q) * w.k_out + ko)] += w.bias[i][(size_t)(cls * w.k_out + ko)];
    }
  }
  for (double& v : ys) v = act(v);
  RelInstance out = make_instance(s, w.k_out);
  for (size_t i = 0; i < R; ++i) {
    auto& t = out.rel[i];
    t.pos = x.rel[i].pos;
    t.val.resize(t.pos.size() * (size_t)w.k_out);
    for (size_t e = 0; e < t.pos.size(); ++e)
      for (int ko = 0; ko < w.k_out; ++ko)
        t.val[e * w.k_out + ko] = ys[(size_t)((pt.rel_offset[i] + t.pos[e]) * w.k_out + ko)];
  }
  return out;
}

}  // namespace eer
