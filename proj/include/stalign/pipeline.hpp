#pragma once

#include <string>
#include <vector>

#include "stalign/data.hpp"
#include "stalign/eval.hpp"
#include "stalign/retrieval.hpp"
#include "stalign/trainer.hpp"

namespace stalign {

// Disjoint union of per-slide graphs: block-diagonal adjacency and
// propagation, stacked coordinates. Slides never gain cross-slide edges.
SpotGraph disjoint_union(const std::vector<SpotGraph>& graphs);

struct TrainedPipeline {
  TrainConfig cfg;
  PreprocessModel prep;
  ModelParams model;
  std::vector<LossBreakdown> history;
  EmbeddingDb db;
};

// Preprocess -> train -> build the gene-embedding database.
TrainedPipeline run_training(const std::vector<SlideDataset>& slides,
                             const TrainConfig& cfg);

struct PredictionResult {
  Mat predicted;   // query spots x selected genes (log-normalized scale)
  Mat truth_norm;  // query ground truth on the same scale
  std::vector<std::string> spot_ids;
  std::vector<std::string> gene_names;
  Mat coords;
};

PredictionResult run_prediction(const TrainedPipeline& trained,
                                const SlideDataset& query);

// ---- Flat key=value config files ----

TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config_file(const std::string& path);
std::string config_to_text(const TrainConfig& cfg);

// ---- Preprocess-model persistence ----

void save_preprocess(const PreprocessModel& prep, const std::string& path);
PreprocessModel load_preprocess(const std::string& path);

// ---- Trained-pipeline persistence (a directory of artifacts) ----

void save_pipeline(const TrainedPipeline& trained, const std::string& dir);
TrainedPipeline load_pipeline(const std::string& dir);

}  // namespace stalign
