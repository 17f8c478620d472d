#include "stalign/retrieval.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "stalign/data.hpp"

namespace stalign {

namespace {

Mat branch_embed(const BranchParams& branch, const SpotGraph& graph,
                 const Mat& X) {
  const Mat hidden =
      branch.has_gcn ? gcn_forward(graph.propagation, X, branch.gcn) : X;
  return head_forward(hidden, branch.head);
}

}  // namespace

EmbeddingDb build_database(const ModelParams& model, const SpotGraph& graph,
                           const Mat& t_alpha, const Mat& expression_ref,
                           const std::vector<std::string>& spot_ids,
                           const std::vector<std::string>& gene_names) {
  if (t_alpha.rows() != expression_ref.rows())
    throw DataError("build_database: row-count mismatch");
  EmbeddingDb db;
  db.embeddings = branch_embed(model.gene, graph, t_alpha);
  db.expression_ref = expression_ref;
  db.spot_ids = spot_ids;
  db.gene_names = gene_names;
  return db;
}

Mat embed_queries(const ModelParams& model, const SpotGraph& query_graph,
                  const Mat& image_features) {
  if (query_graph.propagation.rows() != image_features.rows())
    throw DataError("embed_queries: query graph/features mismatch");
  return branch_embed(model.image, query_graph, image_features);
}

TopkResult query_topk(const EmbeddingDb& db, const Mat& query_embeddings,
                      Index k) {
  const Index n = db.embeddings.rows();
  if (k < 1 || k > n) throw ParamError("query_topk: K out of range");
  TopkResult result;
  result.indices.resize(static_cast<std::size_t>(query_embeddings.rows()));
  result.scores.resize(static_cast<std::size_t>(query_embeddings.rows()));
  for (Index q = 0; q < query_embeddings.rows(); ++q) {
    const Vec sims = db.embeddings * query_embeddings.row(q).transpose();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](Index a, Index b) {
                        if (sims(a) != sims(b)) return sims(a) > sims(b);
                        return a < b;
                      });
    order.resize(static_cast<std::size_t>(k));
    auto& sc = result.scores[static_cast<std::size_t>(q)];
    for (const Index i : order) sc.push_back(sims(i));
    result.indices[static_cast<std::size_t>(q)] = std::move(order);
  }
  return result;
}

Mat predict_expression(const EmbeddingDb& db, const TopkResult& topk,
                       bool similarity_weighted) {
  Mat pred(static_cast<Index>(topk.indices.size()), db.expression_ref.cols());
  for (std::size_t q = 0; q < topk.indices.size(); ++q) {
    const auto& idx = topk.indices[q];
    const auto& sc = topk.scores[q];
    Vec acc = Vec::Zero(db.expression_ref.cols());
    double wsum = 0.0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0 || idx[r] >= db.expression_ref.rows())
        throw DataError("predict_expression: index out of range");
      const double w = similarity_weighted ? std::max(0.0, sc[r]) : 1.0;
      acc += w * db.expression_ref.row(idx[r]).transpose();
      wsum += w;
    }
    if (wsum <= 0.0) {  // all similarities nonpositive: fall back to uniform
      acc.setZero();
      for (const Index i : idx) acc += db.expression_ref.row(i).transpose();
      wsum = static_cast<double>(idx.size());
    }
    pred.row(static_cast<Index>(q)) = (acc / wsum).transpose();
  }
  return pred;
}

void save_database(const EmbeddingDb& db, const std::string& dir,
                   std::uint64_t seed, std::uint64_t model_hash) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> emb_cols;
  for (Index j = 0; j < db.embeddings.cols(); ++j)
    emb_cols.push_back("e" + std::to_string(j));
  write_matrix_csv(dir + "/embeddings.csv", db.embeddings, db.spot_ids,
                   emb_cols);
  write_matrix_csv(dir + "/expression_ref.csv", db.expression_ref,
                   db.spot_ids, db.gene_names);
  nlohmann::json manifest{{"n_spots", db.embeddings.rows()},
                          {"embed_dim", db.embeddings.cols()},
                          {"n_genes", db.expression_ref.cols()},
                          {"seed", seed},
                          {"model_hash", model_hash}};
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw DataError("cannot write " + dir + "/manifest.json");
  out << manifest.dump(2) << '\n';
}

EmbeddingDb load_database(const std::string& dir) {
  EmbeddingDb db;
  auto [emb, emb_ids, emb_cols] = read_matrix_csv(dir + "/embeddings.csv");
  auto [expr, expr_ids, gene_names] =
      read_matrix_csv(dir + "/expression_ref.csv");
  if (emb_ids != expr_ids)
    throw DataError(dir + ": embeddings/expression spot ids disagree");
  db.embeddings = std::move(emb);
  db.expression_ref = std::move(expr);
  db.spot_ids = std::move(emb_ids);
  db.gene_names = std::move(gene_names);
  return db;
}

}  // namespace stalign
