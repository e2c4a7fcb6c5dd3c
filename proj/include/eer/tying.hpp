#pragma once

#include <cinttypes>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "eer/partitions.hpp"
#include "eer/schema.hpp"

namespace eer {

// Two weight entries of block (i,j) are tied exactly when the concatenated
// index tuples agree, per entity, on their equality pattern.  A class is
// therefore one choice of set partition per participating entity; its
// ordinal is the mixed-radix number over per-entity partition ranks, first
// entity most significant.
struct BlockSpec {
  int rel_i = -1, rel_j = -1;
  struct PerEntity {
    int entity;
    int arity_i, arity_j;
    std::uint64_t radix;   // bell(arity_i + arity_j)
    std::uint64_t stride;  // product of radices after this entity
    std::vector<int> positions;  // into the concatenated tuple, i first
  };
  std::vector<PerEntity> entities;  // ascending entity index
  std::uint64_t class_count = 1;
};

inline BlockSpec make_block_spec(const Schema& s, int i, int j) {
  BlockSpec b;
  b.rel_i = i;
  b.rel_j = j;
  const auto& mi = s.relations[i].members;
  const auto& mj = s.relations[j].members;
  for (auto [d, total] : multiset_union(s.relations[i], s.relations[j])) {
    (void)total;
    BlockSpec::PerEntity pe;
    pe.entity = d;
    pe.arity_i = s.relations[i].arity_of(d);
    pe.arity_j = s.relations[j].arity_of(d);
    for (size_t a = 0; a < mi.size(); ++a)
      if (mi[a] == d) pe.positions.push_back((int)a);
    for (size_t a = 0; a < mj.size(); ++a)
      if (mj[a] == d) pe.positions.push_back((int)(mi.size() + a));
    pe.radix = bell(pe.arity_i + pe.arity_j);
    b.entities.push_back(std::move(pe));
  }
  for (int e = (int)b.entities.size() - 1; e >= 0; --e) {
    b.entities[e].stride = b.class_count;
    b.class_count *= b.entities[e].radix;
  }
  return b;
}

inline std::uint64_t num_free_params(const Schema& s, int i, int j) {
  return make_block_spec(s, i, j).class_count;
}

inline std::uint64_t class_of(const BlockSpec& b, std::span<const i64> ni,
                              std::span<const i64> nj) {
  std::uint64_t ordinal = 0;
  std::vector<i64> vals;
  for (const auto& pe : b.entities) {
    vals.clear();
    for (int p : pe.positions)
      vals.push_back(p < (int)ni.size() ? ni[p] : nj[p - (int)ni.size()]);
    ordinal += pe.stride * partition_index(partition_of(vals));
  }
  return ordinal;
}

inline std::uint64_t class_of(const Schema& s, int i, std::span<const i64> ni, int j,
                              std::span<const i64> nj) {
  return class_of(make_block_spec(s, i, j), ni, nj);
}

// Bias entries are tied by the equality pattern of the output tuple alone.
struct BiasSpec {
  int rel = -1;
  struct PerEntity {
    int entity;
    int arity;
    std::uint64_t radix, stride;
    std::vector<int> positions;
  };
  std::vector<PerEntity> entities;
  std::uint64_t class_count = 1;
};

inline BiasSpec make_bias_spec(const Schema& s, int i) {
  BiasSpec b;
  b.rel = i;
  const auto& mi = s.relations[i].members;
  for (auto [d, k] : multiset_of(s.relations[i])) {
    BiasSpec::PerEntity pe;
    pe.entity = d;
    pe.arity = k;
    for (size_t a = 0; a < mi.size(); ++a)
      if (mi[a] == d) pe.positions.push_back((int)a);
    pe.radix = bell(k);
    b.entities.push_back(std::move(pe));
  }
  for (int e = (int)b.entities.size() - 1; e >= 0; --e) {
    b.entities[e].stride = b.class_count;
    b.class_count *= b.entities[e].radix;
  }
  return b;
}

inline std::uint64_t bias_num_params(const Schema& s, int i) {
  return make_bias_spec(s, i).class_count;
}

inline std::uint64_t bias_class_of(const BiasSpec& b, std::span<const i64> ni) {
  std::uint64_t ordinal = 0;
  std::vector<i64> vals;
  for (const auto& pe : b.entities) {
    vals.clear();
    for (int p : pe.positions) vals.push_back(ni[p]);
    ordinal += pe.stride * partition_index(partition_of(vals));
  }
  return ordinal;
}

inline std::uint64_t bias_class_of(const Schema& s, int i, std::span<const i64> ni) {
  return bias_class_of(make_bias_spec(s, i), ni);
}

// For a one-to-many relation (at most one record per line along entity d),
// the identity-like class and the class that additionally frees d coincide
// on the support, so their parameters are merged.  Returns the (kept,
// dropped) class ordinals within block (i,i).
inline std::vector<std::pair<std::uint64_t, std::uint64_t>> one_to_many_merge(const Schema& s,
                                                                              int i) {
  const Relation& r = s.relations[i];
  if (r.one_entity < 0) throw std::invalid_argument("one_to_many_merge: relation lacks a 'one' marker");
  if (!r.repeat_free()) throw std::invalid_argument("one_to_many_merge: relation has repeated entities");
  BlockSpec b = make_block_spec(s, i, i);
  // Digits: all-equal pattern everywhere, vs. the same with entity d split.
  std::uint64_t kept = 0, dropped = 0;
  for (const auto& pe : b.entities) {
    std::uint64_t eq = partition_index(PartitionCode{0, 0});
    std::uint64_t ne = partition_index(PartitionCode{0, 1});
    kept += pe.stride * eq;
    dropped += pe.stride * (pe.entity == r.one_entity ? ne : eq);
  }
  return {{kept, dropped}};
}

// Class-basis parameters of one layer: per ordered relation pair a vector of
// class_count * k_in * k_out values (class-major, then input channel, then
// output channel), plus per relation class_count * k_out bias values.
struct TiedWeights {
  int k_in = 1, k_out = 1;
  std::vector<std::vector<double>> block;  // [i * R + j]
  std::vector<std::vector<double>> bias;   // [i]
  std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> merged;  // per relation

  double& w(const Schema& s, int i, int j, std::uint64_t cls, int ki, int ko) {
    return block[(size_t)i * s.relations.size() + j]
                [(size_t)((cls * k_in + ki) * k_out + ko)];
  }
  double w(const Schema& s, int i, int j, std::uint64_t cls, int ki, int ko) const {
    return block[(size_t)i * s.relations.size() + j]
                [(size_t)((cls * k_in + ki) * k_out + ko)];
  }
  double& b(int i, std::uint64_t cls, int ko) { return bias[i][(size_t)(cls * k_out + ko)]; }
  double b(int i, std::uint64_t cls, int ko) const { return bias[i][(size_t)(cls * k_out + ko)]; }
};

inline void apply_one_to_many_merges(const Schema& s, TiedWeights& w);

inline TiedWeights make_tied_weights(const Schema& s, int k_in = 1, int k_out = 1) {
  TiedWeights w;
  w.k_in = k_in;
  w.k_out = k_out;
  size_t R = s.relations.size();
  w.block.resize(R * R);
  w.bias.resize(R);
  w.merged.resize(R);
  for (size_t i = 0; i < R; ++i) {
    for (size_t j = 0; j < R; ++j)
      w.block[i * R + j].assign(num_free_params(s, (int)i, (int)j) * k_in * k_out, 0.0);
    w.bias[i].assign(bias_num_params(s, (int)i) * k_out, 0.0);
  }
  apply_one_to_many_merges(s, w);
  return w;
}

// Redirects each dropped class to its kept partner in every diagonal block
// whose relation carries a 'one' marker.  Idempotent; the dropped slots stay
// allocated but are ignored by every read that goes through merged_class.
// Self-relations are left unmerged even when annotated.
inline void apply_one_to_many_merges(const Schema& s, TiedWeights& w) {
  for (size_t i = 0; i < s.relations.size(); ++i)
    if (s.relations[i].one_entity >= 0 && s.relations[i].repeat_free())
      w.merged[i] = one_to_many_merge(s, (int)i);
}

inline std::uint64_t merged_class(const TiedWeights& w, int i, int j, std::uint64_t cls) {
  if (i == j)
    for (auto [kept, dropped] : w.merged[i])
      if (cls == dropped) return kept;
  return cls;
}

inline std::uint64_t effective_num_params(const Schema& s, const TiedWeights& w, int i, int j) {
  std::uint64_t n = num_free_params(s, i, j);
  if (i == j) n -= w.merged[i].size();
  return n;
}

// Text format: header with the schema structure hash and channel counts,
// then per ordered block and per relation the class-ordered values.
inline void write_weights(std::ostream& out, const Schema& s, const TiedWeights& w) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, structure_hash(s));
  out << "eerweights 1\nschema " << buf << "\nchannels " << w.k_in << " " << w.k_out << "\n";
  size_t R = s.relations.size();
  for (size_t i = 0; i < R; ++i)
    for (size_t j = 0; j < R; ++j) {
      const auto& blk = w.block[i * R + j];
      out << "block " << (i + 1) << " " << (j + 1) << " "
          << blk.size() / ((size_t)w.k_in * w.k_out) << "\n";
      for (double v : blk) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf << "\n";
      }
    }
  for (size_t i = 0; i < R; ++i) {
    out << "bias " << (i + 1) << " " << w.bias[i].size() / (size_t)w.k_out << "\n";
    for (double v : w.bias[i]) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << "\n";
    }
  }
}

inline TiedWeights read_weights(std::istream& in, const Schema& s) {
  auto fail = [](const std::string& m) -> std::runtime_error {
    return std::runtime_error("weights: " + m);
  };
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "eerweights" || version != 1) throw fail("bad header");
  std::string hash;
  if (!(in >> word >> hash) || word != "schema") throw fail("missing schema hash");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, structure_hash(s));
  if (hash != buf) throw fail("schema hash mismatch");
  int k_in = 0, k_out = 0;
  if (!(in >> word >> k_in >> k_out) || word != "channels" || k_in < 1 || k_out < 1)
    throw fail("bad channels");
  TiedWeights w = make_tied_weights(s, k_in, k_out);
  size_t R = s.relations.size();
  for (size_t i = 0; i < R; ++i)
    for (size_t j = 0; j < R; ++j) {
      size_t bi, bj, cls;
      if (!(in >> word >> bi >> bj >> cls) || word != "block" || bi != i + 1 || bj != j + 1)
        throw fail("bad block header");
      auto& blk = w.block[i * R + j];
      if (cls * w.k_in * w.k_out != blk.size()) throw fail("block class count mismatch");
      for (double& v : blk)
        if (!(in >> v)) throw fail("truncated block values");
    }
  for (size_t i = 0; i < R; ++i) {
    size_t bi, cls;
    if (!(in >> word >> bi >> cls) || word != "bias" || bi != i + 1) throw fail("bad bias header");
    if (cls * w.k_out != w.bias[i].size()) throw fail("bias class count mismatch");
    for (double& v : w.bias[i])
      if (!(in >> v)) throw fail("truncated bias values");
  }
  return w;
}

}  // namespace eer
