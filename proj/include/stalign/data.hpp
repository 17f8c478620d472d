#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stalign/common.hpp"
#include "stalign/linalg.hpp"
#include "stalign/spatial_graph.hpp"

namespace stalign {

struct SlideDataset {
  std::string slide_id;
  std::vector<std::string> spot_ids;
  std::vector<std::string> gene_names;
  Mat expression;      // spots x genes, nonnegative
  Mat coords;          // spots x 2
  Mat image_features;  // spots x f (0 cols when absent)
  Mat latents;         // spots x r, synthetic ground truth (diagnostics only)
};

// Rows aligned to the expression file's spot order; coords/features files
// may list spots in any order but must cover every expression spot.
SlideDataset load_slide(const std::string& expression_path,
                        const std::string& coords_path,
                        const std::string& features_path = "");

void save_slide(const SlideDataset& slide, const std::string& dir);

// Shared preprocessing state fit on the training slides, reusable on a
// held-out query slide without leakage.
struct PreprocessModel {
  std::vector<std::string> selected_genes;
  std::vector<Index> selected_cols;  // into the training gene order
  double median_total = 1.0;
  bool use_pca = true;
  PcaModel pca;
};

struct ProcessedSlide {
  std::string slide_id;
  std::vector<std::string> spot_ids;
  Mat expression_norm;  // n x selected genes, log-normalized
  Mat t_alpha;          // n x k (expression_norm when PCA is disabled)
  SpotGraph graph;
};

// Library-size normalization to the median training total, log1p, joint
// top-variance gene selection, PCA fit on the concatenated training slides.
// radius <= 0 selects default_radius per slide.
std::pair<PreprocessModel, std::vector<ProcessedSlide>> preprocess(
    const std::vector<SlideDataset>& slides, Index k, Index n_genes = 2000,
    bool use_pca = true, double radius = 0.0);

// Applies a fitted preprocessing model to a new slide. Gene columns are
// matched by name; genes absent from the slide are an error.
ProcessedSlide apply_preprocess(const PreprocessModel& model,
                                const SlideDataset& slide,
                                double radius = 0.0);

enum class GridKind { square, hex };

struct SyntheticConfig {
  Index n_spots = 800;
  Index n_genes = 200;
  Index f_img = 30;
  std::uint64_t seed = 0;
  GridKind grid = GridKind::square;
  // Distinct slices from the same seed share the gene/image weights but
  // draw fresh latent fields and noise.
  std::uint64_t slice = 0;
};

// Spots on a regular grid; expression and image features both driven by a
// low-frequency spatial latent field, so a cross-modal signal is planted.
SlideDataset generate_synthetic(const SyntheticConfig& cfg);

// CSV helpers (header + row-major numeric body, first column spot_id).
void write_matrix_csv(const std::string& path, const Mat& m,
                      const std::vector<std::string>& row_ids,
                      const std::vector<std::string>& col_names);
std::tuple<Mat, std::vector<std::string>, std::vector<std::string>>
read_matrix_csv(const std::string& path);

}  // namespace stalign
