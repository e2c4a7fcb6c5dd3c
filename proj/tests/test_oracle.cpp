#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "eer/oracle.hpp"
#include "test_support.hpp"

using namespace eer;

TEST_CASE("entity permutations induce a permutation of the coupled vector") {
  Schema s = parse_schema(ts::university_schema());
  auto id = perm_index_map(s, identity_perm(s));
  for (i64 q = 0; q < (i64)id.size(); ++q) CHECK(id[(size_t)q] == q);

  std::mt19937_64 g(41);
  for (int t = 0; t < 20; ++t) {
    LegalPerm a = random_legal_perm(s, g);
    LegalPerm b = random_legal_perm(s, g);
    auto sa = perm_index_map(s, a);
    auto sb = perm_index_map(s, b);
    auto sc = perm_index_map(s, compose(a, b));
    std::vector<bool> hit(sa.size(), false);
    for (size_t q = 0; q < sa.size(); ++q) {
      CHECK(sc[q] == sa[(size_t)sb[q]]);
      hit[(size_t)sa[q]] = true;
    }
    CHECK(std::count(hit.begin(), hit.end(), false) == 0);
  }
}

TEST_CASE("permutation matrix matches the index map") {
  Schema s = parse_schema(ts::university_schema());
  std::mt19937_64 g(42);
  LegalPerm p = random_legal_perm(s, g);
  auto sigma = perm_index_map(s, p);
  auto gm = perm_matrix(s, p);
  i64 n = total_size(s);
  for (i64 r = 0; r < n; ++r)
    for (i64 c = 0; c < n; ++c)
      CHECK(gm[(size_t)(r * n + c)] == (sigma[(size_t)c] == r ? 1.0 : 0.0));
}

TEST_CASE("sparse re-indexing agrees with the dense index map") {
  Schema s = parse_schema(ts::university_schema());
  std::mt19937_64 g(43);
  for (int t = 0; t < 10; ++t) {
    RelInstance x = ts::random_sparse_instance(s, g, 0.5, 2);
    LegalPerm p = random_legal_perm(s, g);
    RelInstance y = apply_perm(s, p, x);
    check_instance(s, y);
    auto sigma = perm_index_map(s, p);
    DenseVec dx = vectorize(s, x);
    DenseVec dy = vectorize(s, y);
    for (i64 q = 0; q < (i64)sigma.size(); ++q)
      for (int k = 0; k < 2; ++k)
        CHECK(dy.v[(size_t)(sigma[(size_t)q] * 2 + k)] == dx.v[(size_t)(q * 2 + k)]);
    for (size_t i = 0; i < x.rel.size(); ++i) CHECK(y.rel[i].nnz() == x.rel[i].nnz());
  }
}

TEST_CASE("pattern ids are invariant under legal permutations") {
  Schema s = parse_schema(ts::university_schema());
  PatternTable pt = make_pattern_table(s);
  CHECK(pt.n == 51);
  CHECK(pt.total_classes == 41);
  auto pat = pattern_matrix(s);
  std::mt19937_64 g(44);
  for (int t = 0; t < 10; ++t) {
    auto sigma = perm_index_map(s, random_legal_perm(s, g));
    for (i64 r = 0; r < pt.n; ++r)
      for (i64 c = 0; c < pt.n; ++c)
        CHECK(pat[(size_t)(r * pt.n + c)] ==
              pat[(size_t)(sigma[(size_t)r] * pt.n + sigma[(size_t)c])]);
  }
  // block-disjoint global ids
  std::vector<i64> seen_in(41, -1);
  for (i64 r = 0; r < pt.n; ++r)
    for (i64 c = 0; c < pt.n; ++c) {
      i64 id = pat[(size_t)(r * pt.n + c)];
      REQUIRE(id >= 0);
      REQUIRE(id < 41);
      i64 bi = (r < 20 ? 0 : r < 36 ? 1 : 2) * 3 + (c < 20 ? 0 : c < 36 ? 1 : 2);
      if (seen_in[(size_t)id] == -1) seen_in[(size_t)id] = bi;
      CHECK(seen_in[(size_t)id] == bi);
    }
}

TEST_CASE("materialized layers commute with every legal permutation") {
  std::mt19937_64 g(45);
  Schema uni = parse_schema(ts::university_schema());
  for (int t = 0; t < 12; ++t) {
    Schema s = t == 0 ? uni : ts::random_schema(g, false);
    TiedWeights w = make_tied_weights(s);
    ts::random_weights(w, g);
    DenseMatrix m = materialize_W(s, w);
    auto bias = materialize_bias(s, w);
    for (int k = 0; k < 5; ++k) {
      LegalPerm p = random_legal_perm(s, g);
      auto sigma = perm_index_map(s, p);
      CHECK(max_commute_dev(m, sigma) == 0.0);
      CHECK(commutes(m, sigma));
      for (i64 q = 0; q < m.n; ++q)
        CHECK(bias[(size_t)sigma[(size_t)q]] == bias[(size_t)q]);
    }
  }
}

TEST_CASE("an untied entry breaks commutation") {
  Schema s = parse_schema(ts::university_schema());
  std::mt19937_64 g(46);
  TiedWeights w = make_tied_weights(s);
  ts::random_weights(w, g);
  DenseMatrix m = materialize_W(s, w);
  LegalPerm p = identity_perm(s);
  std::swap(p.perm[0][0], p.perm[0][1]);  // exchange two students
  auto sigma = perm_index_map(s, p);
  CHECK(commutes(m, sigma));
  m.at(0, 1) += 1.0;  // takes(1,1) row, takes(1,2) column
  CHECK(!commutes(m, sigma));
  CHECK(max_commute_dev(m, sigma) >= 1.0);
}

TEST_CASE("dense equivariance of the affine map") {
  Schema s = parse_schema(ts::university_schema());
  std::mt19937_64 g(47);
  TiedWeights w = make_tied_weights(s);
  ts::random_weights(w, g);
  DenseMatrix m = materialize_W(s, w);
  auto bias = materialize_bias(s, w);
  i64 n = m.n;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 5; ++t) {
    std::vector<double> v((size_t)n);
    for (auto& e : v) e = u(g);
    auto sigma = perm_index_map(s, random_legal_perm(s, g));
    std::vector<double> gv((size_t)n), wgv((size_t)n), wv((size_t)n), gwv((size_t)n);
    for (i64 q = 0; q < n; ++q) gv[(size_t)sigma[(size_t)q]] = v[(size_t)q];
    for (i64 r = 0; r < n; ++r) {
      double s1 = bias[(size_t)r], s2 = bias[(size_t)r];
      for (i64 c = 0; c < n; ++c) {
        s1 += m.at(r, c) * gv[(size_t)c];
        s2 += m.at(r, c) * v[(size_t)c];
      }
      wgv[(size_t)r] = s1;
      wv[(size_t)r] = s2;
    }
    for (i64 q = 0; q < n; ++q) gwv[(size_t)sigma[(size_t)q]] = wv[(size_t)q];
    CHECK(ts::max_abs_diff(wgv, gwv) <= 1e-12);
  }
}

TEST_CASE("legality test accepts factored maps and rejects others") {
  Schema s = parse_schema(ts::university_schema());
  std::mt19937_64 g(48);
  for (int t = 0; t < 20; ++t)
    CHECK(is_legal_perm_map(s, perm_index_map(s, random_legal_perm(s, g))));

  i64 n = total_size(s);
  std::vector<i64> id((size_t)n);
  std::iota(id.begin(), id.end(), 0);
  CHECK(is_legal_perm_map(s, id));

  auto swapped = id;
  std::swap(swapped[0], swapped[1]);  // one cell pair inside takes
  CHECK(!is_legal_perm_map(s, swapped));

  swapped = id;
  std::swap(swapped[0], swapped[20]);  // across segments
  CHECK(!is_legal_perm_map(s, swapped));

  // a course exchange applied inside takes but not inside prereq
  LegalPerm p = identity_perm(s);
  std::swap(p.perm[1][0], p.perm[1][1]);
  auto sigma = perm_index_map(s, p);
  CHECK(is_legal_perm_map(s, sigma));
  auto hybrid = id;
  for (i64 q = 0; q < 20; ++q) hybrid[(size_t)q] = sigma[(size_t)q];
  CHECK(!is_legal_perm_map(s, hybrid));

  CHECK(!is_legal_perm_map(s, std::vector<i64>((size_t)n - 1, 0)));
}

TEST_CASE("one-to-many merge shows up in the materialized matrix") {
  Schema s = parse_schema(
      "entity prof 3\nentity student 4\n"
      "relation advises prof student one student\n"
      "relation likes prof student\n");
  std::mt19937_64 g(49);
  TiedWeights w = make_tied_weights(s);
  ts::random_weights(w, g);
  DenseMatrix m = materialize_W(s, w);
  // advises x advises: same prof, other student collapses onto the diagonal
  for (i64 p = 0; p < 3; ++p)
    for (i64 a = 0; a < 4; ++a)
      for (i64 b = 0; b < 4; ++b)
        CHECK(m.at(p * 4 + a, p * 4 + a) == m.at(p * 4 + a, p * 4 + b));
  // likes x likes keeps the two classes distinct
  i64 off = 12;
  CHECK(m.at(off + 0, off + 0) != m.at(off + 0, off + 1));
  // the merged layer still commutes
  for (int t = 0; t < 10; ++t) {
    auto sigma = perm_index_map(s, random_legal_perm(s, g));
    CHECK(commutes(m, sigma));
  }
}

TEST_CASE("block recursion matches the subset sum formula") {
  Schema s = parse_schema("entity a 3\nentity b 2\nentity c 2\nrelation r a b c\n");
  std::mt19937_64 g(50);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> params(8);
  for (auto& v : params) v = u(g);
  DenseMatrix m = recursive_block(s, {0, 1, 2}, params);
  REQUIRE(m.n == 12);
  auto shape = relation_shape(s, 0);
  for (i64 r = 0; r < m.n; ++r) {
    auto tr = tuple_of(shape, r);
    for (i64 c = 0; c < m.n; ++c) {
      auto tc = tuple_of(shape, c);
      double want = 0.0;
      for (int p = 0; p < 8; ++p) {
        bool fits = true;
        for (int a = 0; a < 3; ++a)
          if (((p >> a) & 1) && tr[(size_t)a] != tc[(size_t)a]) fits = false;
        if (fits) want += params[(size_t)p];
      }
      CHECK(m.at(r, c) == Catch::Approx(want).margin(1e-12));
    }
  }
}

TEST_CASE("block recursion agrees with the tied materialization") {
  Schema s = parse_schema("entity a 3\nentity b 2\nrelation r a b\n");
  // powers of two keep every subset sum exact regardless of add order
  std::vector<double> params{1.0, 2.0, 4.0, 8.0};
  TiedWeights w = make_tied_weights(s);
  for (int agree_a : {0, 1})
    for (int agree_b : {0, 1}) {
      std::vector<i64> ti{0, 0};
      std::vector<i64> tj{agree_a ? 0 : 1, agree_b ? 0 : 1};
      std::uint64_t cls = class_of(s, 0, ti, 0, tj);
      double sum = 0.0;
      for (int p = 0; p < 4; ++p) {
        bool need_a = p & 1, need_b = p & 2;
        if ((need_a && !agree_a) || (need_b && !agree_b)) continue;
        sum += params[(size_t)p];
      }
      w.w(s, 0, 0, cls, 0, 0) = sum;
    }
  DenseMatrix direct = materialize_W(s, w);
  DenseMatrix rec = recursive_block(s, {0, 1}, params);
  REQUIRE(direct.n == rec.n);
  CHECK(ts::max_abs_diff(direct.a, rec.a) == 0.0);

  CHECK_THROWS_AS(recursive_block(s, {0, 0}, params), std::invalid_argument);
  CHECK_THROWS_AS(recursive_block(s, {0, 1}, std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("dense paths refuse oversized schemas") {
  Schema s = parse_schema("entity a 70\nrelation r a a\n");
  CHECK(total_size(s) == 4900);
  CHECK_THROWS_AS(pattern_matrix(s), std::invalid_argument);
  TiedWeights w = make_tied_weights(s);
  CHECK_THROWS_AS(materialize_W(s, w), std::invalid_argument);
  CHECK_THROWS_AS(perm_matrix(s, identity_perm(s)), std::invalid_argument);
  Schema wide = parse_schema("entity a 5000\nrelation r a\n");
  CHECK_THROWS_AS(recursive_block(wide, {0}, std::vector<double>(2)), std::invalid_argument);
}

TEST_CASE("pattern image and report") {
  Schema s = parse_schema(ts::university_schema());
  std::stringstream img;
  write_pattern_pgm(img, s);
  std::string head;
  i64 wpx = 0, hpx = 0, maxval = 0;
  img >> head >> wpx >> hpx >> maxval;
  CHECK(head == "P2");
  CHECK(wpx == 51);
  CHECK(hpx == 51);
  CHECK(maxval == 41);
  i64 count = 0, v = 0, top = -1;
  while (img >> v) {
    REQUIRE(v >= 0);
    REQUIRE(v <= maxval);
    top = std::max(top, v);
    ++count;
  }
  CHECK(count == 51 * 51);
  CHECK(top == 40);

  std::stringstream rep;
  write_pattern_report(rep, s);
  std::string text = rep.str();
  CHECK(text.find("block takes x prereq: 5 classes") != std::string::npos);
  CHECK(text.find("block prereq x prereq: 15 classes") != std::string::npos);
  CHECK(text.find("bias prereq: 2 classes") != std::string::npos);
  CHECK(text.find("total classes: 45") != std::string::npos);
}
