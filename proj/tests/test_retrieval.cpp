#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "stalign/linalg.hpp"
#include "stalign/retrieval.hpp"
#include "stalign/rng.hpp"

using namespace stalign;

namespace {

EmbeddingDb make_db(const Mat& embeddings, const Mat& expression) {
  EmbeddingDb db;
  db.embeddings = embeddings;
  db.expression_ref = expression;
  for (Index i = 0; i < embeddings.rows(); ++i)
    db.spot_ids.push_back("s" + std::to_string(i));
  for (Index j = 0; j < expression.cols(); ++j)
    db.gene_names.push_back("G" + std::to_string(j));
  return db;
}

}  // namespace

TEST_CASE("query_topk: a database row retrieves itself with similarity 1") {
  Rng rng(1);
  const Mat emb = l2_normalize_rows(rng.normal_matrix(10, 4));
  const EmbeddingDb db = make_db(emb, rng.normal_matrix(10, 3));
  const TopkResult res = query_topk(db, emb, 1);
  for (Index q = 0; q < 10; ++q) {
    CHECK(res.indices[static_cast<std::size_t>(q)][0] == q);
    CHECK(res.scores[static_cast<std::size_t>(q)][0] ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("query_topk: K = n returns a full descending permutation") {
  Rng rng(2);
  const Mat emb = l2_normalize_rows(rng.normal_matrix(8, 3));
  const EmbeddingDb db = make_db(emb, rng.normal_matrix(8, 2));
  const Mat queries = l2_normalize_rows(rng.normal_matrix(3, 3));
  const TopkResult res = query_topk(db, queries, 8);
  for (const auto& idx : res.indices) {
    std::vector<Index> sorted = idx;
    std::sort(sorted.begin(), sorted.end());
    for (Index i = 0; i < 8; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  }
  for (const auto& sc : res.scores)
    for (std::size_t r = 1; r < sc.size(); ++r) CHECK(sc[r - 1] >= sc[r]);
  CHECK_THROWS_AS((void)query_topk(db, queries, 0), ParamError);
  CHECK_THROWS_AS((void)query_topk(db, queries, 9), ParamError);
}

TEST_CASE("query_topk: matches a full stable argsort oracle, with ties") {
  Rng rng(3);
  const Index n = 1000, d = 6, k = 25;
  Mat emb = l2_normalize_rows(rng.normal_matrix(n, d));
  // Plant exact duplicates so tie-breaking by ascending index is exercised.
  for (Index i = 0; i < 50; ++i) emb.row(900 + i) = emb.row(i);
  const EmbeddingDb db = make_db(emb, rng.normal_matrix(n, 2));
  const Mat queries = l2_normalize_rows(rng.normal_matrix(200, d));

  const TopkResult res = query_topk(db, queries, k);
  for (Index q = 0; q < queries.rows(); ++q) {
    const Vec sims = emb * queries.row(q).transpose();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return sims(a) > sims(b);
    });
    const auto& got = res.indices[static_cast<std::size_t>(q)];
    for (Index r = 0; r < k; ++r) {
      CHECK(got[static_cast<std::size_t>(r)] ==
            order[static_cast<std::size_t>(r)]);
      CHECK(res.scores[static_cast<std::size_t>(q)][static_cast<std::size_t>(
                r)] == doctest::Approx(sims(order[static_cast<std::size_t>(r)]))
                           .epsilon(1e-14));
    }
  }
}

TEST_CASE("predict_expression: uniform mean of the retrieved rows") {
  Mat expr(2, 2);
  expr << 1, 0, 0, 1;
  Mat emb(2, 2);
  emb << 1, 0, 0, 1;
  const EmbeddingDb db = make_db(emb, expr);

  TopkResult tk;
  tk.indices = {{0, 1}};
  tk.scores = {{0.9, 0.1}};
  const Mat pred = predict_expression(db, tk);
  CHECK(pred(0, 0) == doctest::Approx(0.5));
  CHECK(pred(0, 1) == doctest::Approx(0.5));

  tk.indices = {{1}};
  tk.scores = {{1.0}};
  const Mat single = predict_expression(db, tk);
  CHECK(single(0, 0) == 0.0);
  CHECK(single(0, 1) == 1.0);
}

TEST_CASE("predict_expression: similarity weighting and uniform fallback") {
  Mat expr(2, 1);
  expr << 2.0, 6.0;
  const EmbeddingDb db = make_db(Mat::Identity(2, 2), expr);

  TopkResult tk;
  tk.indices = {{0, 1}};
  tk.scores = {{3.0, 1.0}};
  const Mat weighted = predict_expression(db, tk, true);
  CHECK(weighted(0, 0) == doctest::Approx((3.0 * 2.0 + 1.0 * 6.0) / 4.0));

  tk.scores = {{-0.5, -0.2}};  // all nonpositive: uniform fallback
  const Mat fallback = predict_expression(db, tk, true);
  CHECK(fallback(0, 0) == doctest::Approx(4.0));

  tk.scores = {{-0.5, 0.5}};  // negative scores are clipped to zero
  const Mat clipped = predict_expression(db, tk, true);
  CHECK(clipped(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("predict_expression: predictions stay inside the retrieved hull") {
  Rng rng(7);
  const Mat expr = rng.uniform_matrix(20, 4, 0.0, 10.0);
  const EmbeddingDb db = make_db(l2_normalize_rows(rng.normal_matrix(20, 3)),
                                 expr);
  const Mat queries = l2_normalize_rows(rng.normal_matrix(5, 3));
  const TopkResult tk = query_topk(db, queries, 6);
  for (const bool weighted : {false, true}) {
    const Mat pred = predict_expression(db, tk, weighted);
    for (Index q = 0; q < 5; ++q)
      for (Index g = 0; g < 4; ++g) {
        double lo = 1e300, hi = -1e300;
        for (const Index i : tk.indices[static_cast<std::size_t>(q)]) {
          lo = std::min(lo, expr(i, g));
          hi = std::max(hi, expr(i, g));
        }
        CHECK(pred(q, g) >= lo - 1e-12);
        CHECK(pred(q, g) <= hi + 1e-12);
      }
  }
}

TEST_CASE("save_database/load_database: exact round trip") {
  Rng rng(9);
  const EmbeddingDb db = make_db(l2_normalize_rows(rng.normal_matrix(6, 3)),
                                 rng.uniform_matrix(6, 4, 0.0, 5.0));
  const std::string dir =
      (std::filesystem::temp_directory_path() / "stalign_db_rt").string();
  save_database(db, dir, 42, 0xABCDEF);
  const EmbeddingDb loaded = load_database(dir);
  CHECK(loaded.spot_ids == db.spot_ids);
  CHECK(loaded.gene_names == db.gene_names);
  CHECK((loaded.embeddings - db.embeddings).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.expression_ref - db.expression_ref).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(std::filesystem::exists(dir + "/manifest.json"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("build_database/embed_queries: unit rows and shape checks") {
  Rng rng(12);
  const Index n = 9;
  const Mat coords = rng.uniform_matrix(n, 2, 0.0, 3.0);
  const SpotGraph graph = build_radius_adjacency(coords, 1.2);

  BranchParams gene = init_branch(4, 5, 3, 1);
  BranchParams image = init_branch(6, 5, 3, 2);
  ModelParams model{gene, image};

  const Mat t_alpha = rng.normal_matrix(n, 4);
  const Mat expr = rng.uniform_matrix(n, 7, 0.0, 4.0);
  std::vector<std::string> spot_ids, gene_names;
  for (Index i = 0; i < n; ++i) spot_ids.push_back("s" + std::to_string(i));
  for (Index j = 0; j < 7; ++j) gene_names.push_back("G" + std::to_string(j));

  const EmbeddingDb db =
      build_database(model, graph, t_alpha, expr, spot_ids, gene_names);
  CHECK(db.embeddings.rows() == n);
  CHECK(db.embeddings.cols() == 3);
  for (Index i = 0; i < n; ++i)
    CHECK(db.embeddings.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));

  const Mat q = embed_queries(model, graph, rng.normal_matrix(n, 6));
  CHECK(q.rows() == n);
  for (Index i = 0; i < n; ++i)
    CHECK(q.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS((void)embed_queries(model, graph, rng.normal_matrix(3, 6)),
                  DataError);
}
