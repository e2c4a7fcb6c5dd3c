#pragma once

#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <vector>

#include "eer/relstore.hpp"
#include "eer/tying.hpp"

namespace eer {

// Everything here is the slow, literal reading of the layer: materialize the
// full matrix, the full permutation, and compare.  The pooling path is
// checked against it, never the other way round.

inline constexpr i64 kDenseGuard = 4096;

// One permutation per entity; perm[d][v] is the image of instance v.
struct LegalPerm {
  std::vector<std::vector<i64>> perm;
};

inline LegalPerm identity_perm(const Schema& s) {
  LegalPerm p;
  for (const auto& e : s.entities) {
    std::vector<i64> id((size_t)e.count);
    std::iota(id.begin(), id.end(), 0);
    p.perm.push_back(std::move(id));
  }
  return p;
}

inline LegalPerm random_legal_perm(const Schema& s, std::mt19937_64& g) {
  LegalPerm p = identity_perm(s);
  for (auto& v : p.perm) std::shuffle(v.begin(), v.end(), g);
  return p;
}

inline LegalPerm compose(const LegalPerm& a, const LegalPerm& b) {
  // (a after b): v -> a[b[v]]
  LegalPerm c = a;
  for (size_t d = 0; d < a.perm.size(); ++d)
    for (size_t v = 0; v < a.perm[d].size(); ++v) c.perm[d][v] = a.perm[d][b.perm[d][v]];
  return c;
}

// Image of each flat vector position under the induced permutation of the
// whole coupled vector; out[sigma[q]] = in[q].
inline std::vector<i64> perm_index_map(const Schema& s, const LegalPerm& p) {
  std::vector<i64> sigma((size_t)total_size(s));
  i64 off = 0;
  for (size_t i = 0; i < s.relations.size(); ++i) {
    auto shape = relation_shape(s, (int)i);
    auto st = strides_of(shape);
    i64 n = relation_size(s, (int)i);
    std::vector<i64> idx(shape.size(), 0);
    for (i64 q = 0; q < n; ++q) {
      i64 img = 0;
      for (size_t a = 0; a < shape.size(); ++a)
        img += st[a] * p.perm[s.relations[(int)i].members[a]][idx[a]];
      sigma[(size_t)(off + q)] = off + img;
      for (int a = (int)shape.size() - 1; a >= 0; --a) {
        if (++idx[a] < shape[a]) break;
        idx[a] = 0;
      }
    }
    off += n;
  }
  return sigma;
}

inline std::vector<double> perm_matrix(const Schema& s, const LegalPerm& p) {
  i64 n = total_size(s);
  if (n > kDenseGuard) throw std::invalid_argument("perm_matrix: coupled vector too large");
  auto sigma = perm_index_map(s, p);
  std::vector<double> g((size_t)(n * n), 0.0);
  for (i64 q = 0; q < n; ++q) g[(size_t)(sigma[q] * n + q)] = 1.0;
  return g;
}

// Re-indexes every entry of every relation; masks travel with the entries.
inline RelInstance apply_perm(const Schema& s, const LegalPerm& p, const RelInstance& x) {
  check_instance(s, x);
  RelInstance y = make_instance(s, x.channels());
  std::vector<i64> idx;
  std::vector<double> v((size_t)x.channels());
  for (size_t i = 0; i < x.rel.size(); ++i) {
    const auto& t = x.rel[i];
    const auto& members = s.relations[(int)i].members;
    for (size_t e = 0; e < t.pos.size(); ++e) {
      idx = tuple_of(t.shape, t.pos[e]);
      for (size_t a = 0; a < idx.size(); ++a) idx[a] = p.perm[members[a]][idx[a]];
      for (int k = 0; k < t.channels; ++k) v[(size_t)k] = t.val[e * t.channels + k];
      y.rel[i].add(idx, v);
    }
  }
  return y;
}

struct DenseMatrix {
  i64 n = 0;  // square
  std::vector<double> a;
  double& at(i64 r, i64 c) { return a[(size_t)(r * n + c)]; }
  double at(i64 r, i64 c) const { return a[(size_t)(r * n + c)]; }
};

// Global class ids: block offset plus class ordinal.  The same table drives
// the dense materialization, the pattern image, and the distinct counts.
struct PatternTable {
  std::vector<i64> offsets;     // per ordered block, into the global id space
  std::vector<i64> rel_offset;  // per relation, into the coupled vector
  i64 total_classes = 0;
  i64 n = 0;
};

inline PatternTable make_pattern_table(const Schema& s) {
  PatternTable t;
  size_t R = s.relations.size();
  i64 off = 0;
  for (size_t i = 0; i < R; ++i) {
    t.rel_offset.push_back(off);
    off += relation_size(s, (int)i);
  }
  t.n = off;
  for (size_t i = 0; i < R; ++i)
    for (size_t j = 0; j < R; ++j) {
      t.offsets.push_back(t.total_classes);
      t.total_classes += (i64)num_free_params(s, (int)i, (int)j);
    }
  return t;
}

// Class id of every (row, col) of the coupled matrix.
inline std::vector<i64> pattern_matrix(const Schema& s) {
  PatternTable pt = make_pattern_table(s);
  if (pt.n > kDenseGuard) throw std::invalid_argument("pattern_matrix: coupled vector too large");
  size_t R = s.relations.size();
  std::vector<i64> out((size_t)(pt.n * pt.n));
  for (size_t i = 0; i < R; ++i) {
    auto shape_i = relation_shape(s, (int)i);
    i64 ni = relation_size(s, (int)i);
    for (size_t j = 0; j < R; ++j) {
      auto shape_j = relation_shape(s, (int)j);
      i64 nj = relation_size(s, (int)j);
      BlockSpec b = make_block_spec(s, (int)i, (int)j);
      i64 base = pt.offsets[i * R + j];
      for (i64 r = 0; r < ni; ++r) {
        auto ti = tuple_of(shape_i, r);
        for (i64 c = 0; c < nj; ++c) {
          auto tj = tuple_of(shape_j, c);
          out[(size_t)((pt.rel_offset[i] + r) * pt.n + pt.rel_offset[j] + c)] =
              base + (i64)class_of(b, ti, tj);
        }
      }
    }
  }
  return out;
}

// Single-channel dense layer matrix; entry = class parameter (after any
// one-to-many merge redirects).
inline DenseMatrix materialize_W(const Schema& s, const TiedWeights& w) {
  if (w.k_in != 1 || w.k_out != 1) throw std::invalid_argument("materialize_W: single channel only");
  PatternTable pt = make_pattern_table(s);
  if (pt.n > kDenseGuard) throw std::invalid_argument("materialize_W: coupled vector too large");
  size_t R = s.relations.size();
  DenseMatrix m;
  m.n = pt.n;
  m.a.assign((size_t)(pt.n * pt.n), 0.0);
  for (size_t i = 0; i < R; ++i) {
    auto shape_i = relation_shape(s, (int)i);
    i64 ni = relation_size(s, (int)i);
    for (size_t j = 0; j < R; ++j) {
      auto shape_j = relation_shape(s, (int)j);
      i64 nj = relation_size(s, (int)j);
      BlockSpec b = make_block_spec(s, (int)i, (int)j);
      const auto& blk = w.block[i * R + j];
      for (i64 r = 0; r < ni; ++r) {
        auto ti = tuple_of(shape_i, r);
        for (i64 c = 0; c < nj; ++c) {
          auto tj = tuple_of(shape_j, c);
          std::uint64_t cls = merged_class(w, (int)i, (int)j, class_of(b, ti, tj));
          m.at(pt.rel_offset[i] + r, pt.rel_offset[j] + c) = blk[(size_t)cls];
        }
      }
    }
  }
  return m;
}

inline std::vector<double> materialize_bias(const Schema& s, const TiedWeights& w) {
  if (w.k_out != 1) throw std::invalid_argument("materialize_bias: single channel only");
  i64 n = total_size(s);
  std::vector<double> out((size_t)n);
  i64 off = 0;
  for (size_t i = 0; i < s.relations.size(); ++i) {
    BiasSpec b = make_bias_spec(s, (int)i);
    auto shape = relation_shape(s, (int)i);
    i64 ni = relation_size(s, (int)i);
    for (i64 q = 0; q < ni; ++q) {
      auto t = tuple_of(shape, q);
      out[(size_t)(off + q)] = w.bias[i][(size_t)bias_class_of(b, t)];
    }
    off += ni;
  }
  return out;
}

// max |WG - GW| computed by index remapping, so tied entries cancel exactly.
inline double max_commute_dev(const DenseMatrix& m, const std::vector<i64>& sigma) {
  double dev = 0.0;
  for (i64 r = 0; r < m.n; ++r)
    for (i64 c = 0; c < m.n; ++c) {
      // (GW)[sigma r, c] = W[r, c]; (WG)[sigma r, c] = W[sigma r, sigma c]
      double d = std::fabs(m.at(r, c) - m.at(sigma[r], sigma[c]));
      if (d > dev) dev = d;
    }
  return dev;
}

inline bool commutes(const DenseMatrix& m, const std::vector<i64>& sigma) {
  return max_commute_dev(m, sigma) == 0.0;
}

// Tries to factor a flat permutation into per-entity permutations consistent
// across all relations; the layer group contains exactly these.
inline bool is_legal_perm_map(const Schema& s, const std::vector<i64>& sigma) {
  i64 n = total_size(s);
  if ((i64)sigma.size() != n) return false;
  std::vector<std::vector<i64>> cand;
  for (const auto& e : s.entities) cand.emplace_back((size_t)e.count, -1);
  i64 off = 0;
  for (size_t i = 0; i < s.relations.size(); ++i) {
    auto shape = relation_shape(s, (int)i);
    i64 ni = relation_size(s, (int)i);
    for (i64 q = 0; q < ni; ++q) {
      i64 img = sigma[(size_t)(off + q)] - off;
      if (img < 0 || img >= ni) return false;  // must stay in its own segment
      auto from = tuple_of(shape, q);
      auto to = tuple_of(shape, img);
      for (size_t a = 0; a < shape.size(); ++a) {
        i64& slot = cand[s.relations[(int)i].members[a]][(size_t)from[a]];
        if (slot == -1)
          slot = to[a];
        else if (slot != to[a])
          return false;
      }
    }
    off += ni;
  }
  return true;
}

namespace detail {

// Literal recursion: adding entity d takes M to A (x) 1_d + B (x) I_d with
// independent halves A, B, so k entities carry 2^k parameters.  The second
// half of params is the half that requires agreement on the newest (last,
// fastest) axis.
inline DenseMatrix recursive_block_sizes(std::span<const i64> sizes,
                                         std::span<const double> params) {
  DenseMatrix m;
  if (sizes.empty()) {
    m.n = 1;
    m.a = {params[0]};
    return m;
  }
  size_t half = params.size() / 2;
  DenseMatrix a = recursive_block_sizes(sizes.first(sizes.size() - 1), params.first(half));
  DenseMatrix b = recursive_block_sizes(sizes.first(sizes.size() - 1), params.subspan(half));
  i64 nd = sizes.back();
  m.n = a.n * nd;
  m.a.assign((size_t)(m.n * m.n), 0.0);
  for (i64 r = 0; r < a.n; ++r)
    for (i64 c = 0; c < a.n; ++c)
      for (i64 u = 0; u < nd; ++u)
        for (i64 v = 0; v < nd; ++v)
          m.at(r * nd + u, c * nd + v) = a.at(r, c) + (u == v ? b.at(r, c) : 0.0);
  return m;
}

}  // namespace detail

inline DenseMatrix recursive_block(const Schema& s, const std::vector<int>& entities,
                                   std::span<const double> params) {
  for (size_t a = 0; a < entities.size(); ++a)
    for (size_t b = a + 1; b < entities.size(); ++b)
      if (entities[a] == entities[b])
        throw std::invalid_argument("recursive_block: repeated entity");
  if (params.size() != (size_t)1 << entities.size())
    throw std::invalid_argument("recursive_block: need 2^k parameters");
  std::vector<i64> sizes;
  for (int d : entities) sizes.push_back(s.entities[d].count);
  i64 n = 1;
  for (i64 v : sizes) n *= v;
  if (n > kDenseGuard) throw std::invalid_argument("recursive_block: too large");
  return detail::recursive_block_sizes(sizes, params);
}

// Plain text image of the tying pattern: one pixel per matrix entry, value =
// global class id, maxval = class count.
inline void write_pattern_pgm(std::ostream& out, const Schema& s) {
  PatternTable pt = make_pattern_table(s);
  auto pat = pattern_matrix(s);
  out << "P2\n" << pt.n << " " << pt.n << "\n" << pt.total_classes << "\n";
  for (i64 r = 0; r < pt.n; ++r) {
    for (i64 c = 0; c < pt.n; ++c) out << (c ? " " : "") << pat[(size_t)(r * pt.n + c)];
    out << "\n";
  }
}

inline void write_pattern_report(std::ostream& out, const Schema& s) {
  size_t R = s.relations.size();
  std::uint64_t total = 0;
  for (size_t i = 0; i < R; ++i) {
    for (size_t j = 0; j < R; ++j) {
      std::uint64_t c = num_free_params(s, (int)i, (int)j);
      total += c;
      out << "block " << s.relations[i].name << " x " << s.relations[j].name << ": " << c
          << " classes\n";
    }
  }
  for (size_t i = 0; i < R; ++i) {
    std::uint64_t c = bias_num_params(s, (int)i);
    total += c;
    out << "bias " << s.relations[i].name << ": " << c << " classes\n";
  }
  out << "total classes: " << total << "\n";
}

}  // namespace eer
