#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "eer/relstore.hpp"
#include "eer/rng.hpp"

namespace eer {

// Synthetic three-entity benchmark: latent factors per entity, three pairwise
// relations, each relation the (optionally core-twisted) product of its two
// factor matrices.  With an identity core both modes emit identical data.
struct SynthConfig {
  std::vector<i64> counts{50, 50, 50};
  int h = 2;
  bool tucker = false;
  std::vector<double> observed{0.5, 0.5, 0.5};  // per relation
  i64 min_per_line = 5;
  std::uint64_t seed = 0;
};

struct SynthData {
  Schema schema;
  RelInstance full;                     // every entry present
  std::vector<std::vector<double>> z;   // per entity, count * h
  std::vector<std::vector<double>> core;  // per relation when tucker
};

inline SynthData generate(const SynthConfig& cfg) {
  if (cfg.counts.size() != 3) throw std::invalid_argument("generate: needs three entity counts");
  if (cfg.h < 1) throw std::invalid_argument("generate: latent dim must be positive");
  SynthData d;
  for (int e = 0; e < 3; ++e)
    d.schema.entities.push_back({"ent" + std::to_string(e + 1), cfg.counts[(size_t)e]});
  d.schema.relations.push_back({"r12", {0, 1}, -1});
  d.schema.relations.push_back({"r13", {0, 2}, -1});
  d.schema.relations.push_back({"r23", {1, 2}, -1});
  RngHub hub{cfg.seed};
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int e = 0; e < 3; ++e) {
    auto g = hub.stream("synth-z", (std::uint64_t)e);
    std::vector<double> z((size_t)(cfg.counts[(size_t)e] * cfg.h));
    for (double& v : z) v = u(g);
    d.z.push_back(std::move(z));
  }
  if (cfg.tucker)
    for (int i = 0; i < 3; ++i) {
      auto g = hub.stream("synth-core", (std::uint64_t)i);
      std::vector<double> c((size_t)cfg.h * cfg.h);
      for (double& v : c) v = u(g);
      d.core.push_back(std::move(c));
    }
  d.full = make_instance(d.schema);
  for (size_t i = 0; i < 3; ++i) {
    auto& t = d.full.rel[i];
    int d1 = d.schema.relations[i].members[0], d2 = d.schema.relations[i].members[1];
    i64 rows = t.shape[0], cols = t.shape[1];
    t.pos.resize((size_t)(rows * cols));
    t.val.resize((size_t)(rows * cols));
    for (i64 a = 0; a < rows; ++a)
      for (i64 b = 0; b < cols; ++b) {
        double v = 0.0;
        const double* za = &d.z[d1][(size_t)(a * cfg.h)];
        const double* zb = &d.z[d2][(size_t)(b * cfg.h)];
        if (!cfg.tucker) {
          for (int r = 0; r < cfg.h; ++r) v += za[r] * zb[r];
        } else {
          const double* c = d.core[i].data();
          for (int r = 0; r < cfg.h; ++r) {
            double acc = 0.0;
            for (int q = 0; q < cfg.h; ++q) acc += c[(size_t)(r * cfg.h + q)] * zb[q];
            v += za[r] * acc;
          }
        }
        t.pos[(size_t)(a * cols + b)] = a * cols + b;
        t.val[(size_t)(a * cols + b)] = v;
      }
  }
  return d;
}

// Train positions per relation plus their complements.  Lines are the
// (axis, instance) slices; every line ends up with at least min_per_line
// observed entries, augmenting the uniform draw where needed.
struct SplitMasks {
  std::vector<std::vector<i64>> train, test;
};

inline SplitMasks sparsify(const Schema& s, const SynthConfig& cfg) {
  if (cfg.observed.size() != s.relations.size())
    throw std::invalid_argument("sparsify: one observed fraction per relation");
  RngHub hub{cfg.seed};
  SplitMasks m;
  for (size_t i = 0; i < s.relations.size(); ++i) {
    auto shape = relation_shape(s, (int)i);
    i64 n = relation_size(s, (int)i);
    for (size_t a = 0; a < shape.size(); ++a)
      if (cfg.min_per_line > n / shape[a])
        throw std::invalid_argument("sparsify: min_per_line exceeds line capacity");
    auto g = hub.stream("masks", (std::uint64_t)i);
    std::vector<i64> order((size_t)n);
    for (i64 p = 0; p < n; ++p) order[(size_t)p] = p;
    std::shuffle(order.begin(), order.end(), g);
    i64 want = std::llround(cfg.observed[i] * (double)n);
    want = std::clamp<i64>(want, 0, n);
    std::vector<char> picked((size_t)n, 0);
    for (i64 p = 0; p < want; ++p) picked[(size_t)order[(size_t)p]] = 1;

    auto st = strides_of(shape);
    // line counts per axis per instance
    std::vector<std::vector<i64>> line((size_t)shape.size());
    for (size_t a = 0; a < shape.size(); ++a) line[a].assign((size_t)shape[a], 0);
    for (i64 p = 0; p < n; ++p)
      if (picked[(size_t)p])
        for (size_t a = 0; a < shape.size(); ++a) ++line[a][(size_t)((p / st[a]) % shape[a])];
    for (;;) {
      size_t worst_axis = 0;
      i64 worst_v = -1, worst = cfg.min_per_line;
      for (size_t a = 0; a < shape.size(); ++a)
        for (i64 v = 0; v < shape[a]; ++v)
          if (line[a][(size_t)v] < worst) {
            worst = line[a][(size_t)v];
            worst_axis = a;
            worst_v = v;
          }
      if (worst_v < 0) break;
      // unobserved entries on the worst line
      std::vector<i64> cand;
      for (i64 p = 0; p < n; ++p)
        if (!picked[(size_t)p] && (p / st[worst_axis]) % shape[worst_axis] == worst_v)
          cand.push_back(p);
      if (cand.empty()) throw std::invalid_argument("sparsify: line already fully observed");
      std::uniform_int_distribution<size_t> pick(0, cand.size() - 1);
      i64 p = cand[pick(g)];
      picked[(size_t)p] = 1;
      for (size_t a = 0; a < shape.size(); ++a) ++line[a][(size_t)((p / st[a]) % shape[a])];
    }
    std::vector<i64> train, test;
    for (i64 p = 0; p < n; ++p) (picked[(size_t)p] ? train : test).push_back(p);
    m.train.push_back(std::move(train));
    m.test.push_back(std::move(test));
  }
  return m;
}

// The instance restricted to the given positions (values from the source).
inline RelInstance restrict_to(const Schema& s, const RelInstance& x,
                               const std::vector<std::vector<i64>>& positions) {
  check_instance(s, x);
  RelInstance out = make_instance(s, x.channels());
  for (size_t i = 0; i < x.rel.size(); ++i) {
    const auto& t = x.rel[i];
    auto& o = out.rel[i];
    o.pos = positions[i];
    std::sort(o.pos.begin(), o.pos.end());
    o.val.resize(o.pos.size() * (size_t)t.channels);
    for (size_t e = 0; e < o.pos.size(); ++e) {
      auto it = std::lower_bound(t.pos.begin(), t.pos.end(), o.pos[e]);
      if (it == t.pos.end() || *it != o.pos[e])
        throw std::invalid_argument("restrict_to: position not present in source");
      size_t at = (size_t)(it - t.pos.begin());
      for (int k = 0; k < t.channels; ++k)
        o.val[e * t.channels + k] = t.val[at * t.channels + k];
    }
  }
  return out;
}

// Sets aside round(fraction * size) entries of the target relation; the
// other relations keep everything.  Draws are nested: a larger fraction's
// set contains every smaller fraction's set for the same seed.
struct Heldout {
  std::vector<std::vector<i64>> test;  // only the target slot is nonempty
  std::vector<std::vector<i64>> rest;
};

inline Heldout heldout_split(const Schema& s, int target, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("heldout_split: bad fraction");
  Heldout h;
  RngHub hub{seed};
  for (size_t i = 0; i < s.relations.size(); ++i) {
    i64 n = relation_size(s, (int)i);
    if ((int)i != target) {
      h.test.emplace_back();
      std::vector<i64> all((size_t)n);
      for (i64 p = 0; p < n; ++p) all[(size_t)p] = p;
      h.rest.push_back(std::move(all));
      continue;
    }
    std::vector<i64> order((size_t)n);
    for (i64 p = 0; p < n; ++p) order[(size_t)p] = p;
    auto g = hub.stream("heldout");
    std::shuffle(order.begin(), order.end(), g);
    i64 take = std::llround(fraction * (double)n);
    h.test.emplace_back(order.begin(), order.begin() + take);
    h.rest.emplace_back(order.begin() + take, order.end());
  }
  return h;
}

inline void write_dataset(const std::string& dir, const Schema& s, const RelInstance& full,
                          const SplitMasks& masks) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream sch(dir + "/schema.txt");
  sch << render_schema(s);
  RelInstance train = restrict_to(s, full, masks.train);
  RelInstance test = restrict_to(s, full, masks.test);
  for (size_t i = 0; i < s.relations.size(); ++i) {
    std::ofstream tr(dir + "/" + s.relations[i].name + ".train.csv");
    write_csv(tr, s, train.rel[i]);
    std::ofstream te(dir + "/" + s.relations[i].name + ".test.csv");
    write_csv(te, s, test.rel[i]);
  }
}

struct Dataset {
  Schema schema;
  RelInstance train, test;
};

inline Dataset read_dataset(const std::string& dir) {
  std::ifstream sch(dir + "/schema.txt");
  if (!sch) throw DataError("read_dataset: missing schema.txt");
  std::stringstream buf;
  buf << sch.rdbuf();
  Dataset d;
  d.schema = parse_schema(buf.str());
  d.train = make_instance(d.schema);
  d.test = make_instance(d.schema);
  for (size_t i = 0; i < d.schema.relations.size(); ++i) {
    const std::string& name = d.schema.relations[i].name;
    std::ifstream tr(dir + "/" + name + ".train.csv");
    if (!tr) throw DataError("read_dataset: missing " + name + ".train.csv");
    d.train.rel[i] = ingest_csv(d.schema, name, tr);
    std::ifstream te(dir + "/" + name + ".test.csv");
    if (te) d.test.rel[i] = ingest_csv(d.schema, name, te);
  }
  int k = d.train.channels();
  for (auto& t : d.test.rel)
    if (t.pos.empty()) t.channels = k;
  return d;
}

}  // namespace eer
