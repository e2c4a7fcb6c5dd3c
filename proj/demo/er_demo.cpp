// End-to-end tour on a three-relation schema: tying counts, an exact
// commutation check against the dense matrix, pooled-vs-dense agreement,
// and a short training run on synthetic data.

#include <cstdio>
#include <random>

#include "eer/cmtf.hpp"
#include "eer/eerl.hpp"
#include "eer/model.hpp"
#include "eer/oracle.hpp"
#include "eer/synthgen.hpp"

using namespace eer;

int main() {
  Schema s = parse_schema(
      "entity student 5\n"
      "entity course 4\n"
      "entity prof 3\n"
      "relation takes student course\n"
      "relation prereq course course\n"
      "relation refs student prof\n");

  std::printf("coupled vector size: %lld\n", (long long)total_size(s));
  for (size_t i = 0; i < s.relations.size(); ++i)
    for (size_t j = 0; j < s.relations.size(); ++j)
      std::printf("block %s x %s: %llu free parameters\n", s.relations[i].name.c_str(),
                  s.relations[j].name.c_str(),
                  (unsigned long long)num_free_params(s, (int)i, (int)j));

  // tied weights commute with every per-entity relabeling, exactly
  std::mt19937_64 g(7);
  TiedWeights w = make_tied_weights(s);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& blk : w.block)
    for (double& v : blk) v = u(g);
  DenseMatrix W = materialize_W(s, w);
  double dev = 0.0;
  for (int t = 0; t < 20; ++t)
    dev = std::max(dev, max_commute_dev(W, perm_index_map(s, random_legal_perm(s, g))));
  std::printf("max commutation deviation over 20 relabelings: %g\n", dev);

  // the pooled layer gives the same numbers without forming the matrix
  SynthConfig sc;
  sc.counts = {20, 16, 12};
  sc.observed = {0.6, 0.6, 0.6};
  sc.min_per_line = 2;
  sc.seed = 1;
  SynthData d = generate(sc);
  TiedWeights wp = make_tied_weights(d.schema);
  for (auto& blk : wp.block)
    for (double& v : blk) v = u(g);
  RelInstance pooled = forward(d.schema, d.full, wp, identity_act(), PoolMode::Sum);
  RelInstance oracle = forward_dense_oracle(d.schema, d.full, wp, identity_act());
  double diff = 0.0;
  for (size_t i = 0; i < pooled.rel.size(); ++i)
    for (size_t q = 0; q < pooled.rel[i].val.size(); ++q)
      diff = std::max(diff, std::fabs(pooled.rel[i].val[q] - oracle.rel[i].val[q]));
  std::printf("pooled vs dense forward deviation: %g\n", diff);

  // short reconstruction run on the synthetic database
  SplitMasks masks = sparsify(d.schema, sc);
  RelInstance train = restrict_to(d.schema, d.full, masks.train);
  RelInstance test = restrict_to(d.schema, d.full, masks.test);
  AutoEncoderConfig cfg;
  cfg.enc_widths = {12};
  cfg.dec_widths = {12};
  cfg.code_dim = 6;
  cfg.epochs = 600;
  cfg.lr = 1e-2;
  TrainResult res = train_autoencoder(d.schema, cfg, train);
  std::printf("training loss %.4f -> %.4f over %d epochs\n", res.train_loss.front(),
              res.train_loss.back(), cfg.epochs);
  std::printf("held-out rmse: %.4f\n", evaluate(res.model, d.schema, train, test));

  CmtfOptions copt;
  copt.rank = 4;
  copt.iters = 500;
  CmtfResult cp = fit_ccpf(d.schema, train, copt);
  std::printf("coupled cp baseline held-out rmse: %.4f\n",
              evaluate_cmtf(cp.factors, d.schema, test));
  return 0;
}
