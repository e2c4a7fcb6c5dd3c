#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <istream>
#include <span>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eer/schema.hpp"

namespace eer {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Row-major strides, last axis fastest.
inline std::vector<i64> strides_of(const std::vector<i64>& shape) {
  std::vector<i64> st(shape.size(), 1);
  for (int a = (int)shape.size() - 2; a >= 0; --a) st[a] = st[a + 1] * shape[a + 1];
  return st;
}

inline i64 flat_of(const std::vector<i64>& strides, std::span<const i64> idx) {
  i64 p = 0;
  for (size_t a = 0; a < strides.size(); ++a) p += strides[a] * idx[a];
  return p;
}

inline std::vector<i64> tuple_of(const std::vector<i64>& shape, i64 flat) {
  std::vector<i64> idx(shape.size());
  for (int a = (int)shape.size() - 1; a >= 0; --a) {
    idx[a] = flat % shape[a];
    flat /= shape[a];
  }
  return idx;
}

// Sparse tensor over one relation.  Positions are flat row-major indices,
// sorted and unique; the observed mask IS the position set.  Channel values
// are stored contiguously per position.
struct SparseRelTensor {
  int relation = -1;
  std::vector<i64> shape;
  int channels = 1;
  std::vector<i64> pos;
  std::vector<double> val;  // pos.size() * channels

  i64 size() const {
    i64 n = 1;
    for (i64 s : shape) n *= s;
    return n;
  }
  i64 nnz() const { return (i64)pos.size(); }

  // Insertion order is irrelevant: entries are kept sorted by position.
  void add(std::span<const i64> idx, std::span<const double> v) {
    if ((int)v.size() != channels) throw DataError("channel count mismatch");
    for (size_t a = 0; a < shape.size(); ++a)
      if (idx[a] < 0 || idx[a] >= shape[a]) throw DataError("index out of range");
    i64 p = flat_of(strides_of(shape), idx);
    auto it = std::lower_bound(pos.begin(), pos.end(), p);
    if (it != pos.end() && *it == p) throw DataError("duplicate index tuple");
    size_t at = (size_t)(it - pos.begin());
    pos.insert(it, p);
    val.insert(val.begin() + (i64)at * channels, v.begin(), v.end());
  }

  bool has(i64 flat) const { return std::binary_search(pos.begin(), pos.end(), flat); }

  std::vector<double> to_dense() const {
    std::vector<double> out((size_t)(size() * channels), 0.0);
    for (size_t e = 0; e < pos.size(); ++e)
      for (int k = 0; k < channels; ++k) out[(size_t)pos[e] * channels + k] = val[e * channels + k];
    return out;
  }
};

inline SparseRelTensor make_rel_tensor(const Schema& s, int relation, int channels = 1) {
  SparseRelTensor t;
  t.relation = relation;
  t.shape = relation_shape(s, relation);
  t.channels = channels;
  return t;
}

// One tensor per relation, in schema order, equal channel counts.
struct RelInstance {
  std::vector<SparseRelTensor> rel;

  int channels() const { return rel.empty() ? 1 : rel[0].channels; }
};

inline RelInstance make_instance(const Schema& s, int channels = 1) {
  RelInstance x;
  for (size_t i = 0; i < s.relations.size(); ++i)
    x.rel.push_back(make_rel_tensor(s, (int)i, channels));
  return x;
}

inline void check_instance(const Schema& s, const RelInstance& x) {
  if (x.rel.size() != s.relations.size()) throw DataError("relation count mismatch");
  for (size_t i = 0; i < x.rel.size(); ++i) {
    if (x.rel[i].relation != (int)i) throw DataError("relation order mismatch");
    if (x.rel[i].shape != relation_shape(s, (int)i)) throw DataError("shape mismatch");
    if (x.rel[i].channels != x.rel[0].channels) throw DataError("unequal channel counts");
  }
}

// Concatenation of dense per-relation segments in schema order; each segment
// row-major with channels innermost.
struct DenseVec {
  std::vector<double> v;
  std::vector<i64> offsets;  // per relation, in value units
  int channels = 1;
};

inline DenseVec vectorize(const Schema& s, const RelInstance& x) {
  check_instance(s, x);
  DenseVec out;
  out.channels = x.channels();
  for (const auto& t : x.rel) {
    out.offsets.push_back((i64)out.v.size());
    auto d = t.to_dense();
    out.v.insert(out.v.end(), d.begin(), d.end());
  }
  return out;
}

// Dense values back to an instance; every position becomes an entry.
inline RelInstance unvectorize(const Schema& s, const DenseVec& dv) {
  i64 want = 0;
  for (size_t i = 0; i < s.relations.size(); ++i) want += relation_size(s, (int)i);
  if ((i64)dv.v.size() != want * dv.channels) throw DataError("length does not match schema");
  RelInstance x = make_instance(s, dv.channels);
  i64 at = 0;
  for (auto& t : x.rel) {
    i64 n = t.size();
    t.pos.resize((size_t)n);
    for (i64 p = 0; p < n; ++p) t.pos[(size_t)p] = p;
    t.val.assign(dv.v.begin() + at, dv.v.begin() + at + n * dv.channels);
    at += n * dv.channels;
  }
  return x;
}

inline void write_dense_vec(std::ostream& out, const Schema& s, const DenseVec& dv) {
  for (size_t i = 0; i < s.relations.size(); ++i) {
    i64 len = relation_size(s, (int)i) * dv.channels;
    out << "# relation " << s.relations[i].name << " offset " << dv.offsets[i] << " len " << len
        << "\n";
    char buf[64];
    for (i64 q = 0; q < len; ++q) {
      std::snprintf(buf, sizeof buf, "%.17g", dv.v[(size_t)(dv.offsets[i] + q)]);
      out << buf << "\n";
    }
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> f;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) {
    while (!cur.empty() && std::isspace((unsigned char)cur.front())) cur.erase(cur.begin());
    while (!cur.empty() && std::isspace((unsigned char)cur.back())) cur.pop_back();
    f.push_back(cur);
  }
  if (!line.empty() && line.back() == ',') f.push_back("");
  return f;
}

}  // namespace detail

// CSV per relation: header row names the member entities in order, then the
// channel columns; data rows carry 1-based instance indices then values.
inline SparseRelTensor ingest_csv(const Schema& s, const std::string& relation_name,
                                  std::istream& in) {
  int ri = s.relation_index(relation_name);
  if (ri < 0) throw DataError("unknown relation '" + relation_name + "'");
  const Relation& r = s.relations[ri];
  std::string line;
  if (!std::getline(in, line)) throw DataError(relation_name + ": empty file");
  auto head = detail::split_csv_line(line);
  size_t arity = r.members.size();
  if (head.size() <= arity) throw DataError(relation_name + ": header too short");
  for (size_t a = 0; a < arity; ++a)
    if (head[a] != s.entities[r.members[a]].name)
      throw DataError(relation_name + ": header column " + std::to_string(a + 1) + " is '" +
                      head[a] + "', expected '" + s.entities[r.members[a]].name + "'");
  int channels = (int)(head.size() - arity);
  SparseRelTensor t = make_rel_tensor(s, ri, channels);
  int lineno = 1;
  std::vector<i64> idx(arity);
  std::vector<double> v(channels);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != head.size())
      throw DataError(relation_name + " line " + std::to_string(lineno) + ": expected " +
                      std::to_string(head.size()) + " fields");
    try {
      for (size_t a = 0; a < arity; ++a) {
        size_t used = 0;
        idx[a] = std::stoll(f[a], &used) - 1;  // external indices are 1-based
        if (used != f[a].size()) throw std::invalid_argument(f[a]);
      }
      for (int k = 0; k < channels; ++k) {
        size_t used = 0;
        v[k] = std::stod(f[arity + k], &used);
        if (used != f[arity + k].size()) throw std::invalid_argument(f[arity + k]);
      }
    } catch (const DataError&) {
      throw;
    } catch (const std::exception&) {
      throw DataError(relation_name + " line " + std::to_string(lineno) + ": malformed field");
    }
    try {
      t.add(idx, v);
    } catch (const DataError& e) {
      throw DataError(relation_name + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return t;
}

inline void write_csv(std::ostream& out, const Schema& s, const SparseRelTensor& t,
                      const std::vector<std::string>& channel_names = {}) {
  const Relation& r = s.relations[t.relation];
  for (size_t a = 0; a < r.members.size(); ++a)
    out << (a ? "," : "") << s.entities[r.members[a]].name;
  for (int k = 0; k < t.channels; ++k) {
    if (channel_names.empty())
      out << ",c" << (k + 1);
    else
      out << "," << channel_names[k];
  }
  out << "\n";
  char buf[64];
  for (size_t e = 0; e < t.pos.size(); ++e) {
    auto idx = tuple_of(t.shape, t.pos[e]);
    for (size_t a = 0; a < idx.size(); ++a) out << (a ? "," : "") << (idx[a] + 1);
    for (int k = 0; k < t.channels; ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", t.val[e * t.channels + k]);
      out << "," << buf;
    }
    out << "\n";
  }
}

}  // namespace eer
