#pragma once

#include <string>
#include <vector>

#include "stalign/encoders.hpp"
#include "stalign/spatial_graph.hpp"

namespace stalign {

// Gene-embedding database built from the training spots: unit-norm
// embeddings paired with the processed expression profiles they index.
struct EmbeddingDb {
  Mat embeddings;       // n_train x d, unit rows
  Mat expression_ref;   // n_train x g
  std::vector<std::string> spot_ids;
  std::vector<std::string> gene_names;
};

EmbeddingDb build_database(const ModelParams& model, const SpotGraph& graph,
                           const Mat& t_alpha, const Mat& expression_ref,
                           const std::vector<std::string>& spot_ids,
                           const std::vector<std::string>& gene_names);

// Image-branch forward over the query slide's own graph.
Mat embed_queries(const ModelParams& model, const SpotGraph& query_graph,
                  const Mat& image_features);

struct TopkResult {
  std::vector<std::vector<Index>> indices;   // per query, descending score
  std::vector<std::vector<double>> scores;
};

// Exact top-k by inner product; ties broken by ascending database index.
TopkResult query_topk(const EmbeddingDb& db, const Mat& query_embeddings,
                      Index k);

// Mean of the retrieved expression rows; optionally similarity-weighted
// (weights max(score, 0), uniform fallback when all scores are <= 0).
Mat predict_expression(const EmbeddingDb& db, const TopkResult& topk,
                       bool similarity_weighted = false);

// Two CSVs (embeddings, expression) plus a JSON manifest.
void save_database(const EmbeddingDb& db, const std::string& dir,
                   std::uint64_t seed, std::uint64_t model_hash);
EmbeddingDb load_database(const std::string& dir);

}  // namespace stalign
