#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "stalign/common.hpp"

namespace stalign {

struct GcnLayerParams {
  Mat weight;                 // in_dim x hid_dim
  double prelu_slope = 0.25;  // shared scalar
};

struct ProjectionHeadParams {
  Mat weight;  // hid_dim x embed_dim
  Vec bias;    // embed_dim
};

struct DiscriminatorParams {
  Mat bilinear;  // d x d
};

// One modality branch: GCN encoder (optionally bypassed for the ablation
// variants), projection head, and DGI discriminator.
struct BranchParams {
  bool has_gcn = true;
  GcnLayerParams gcn;
  ProjectionHeadParams head;
  DiscriminatorParams disc;
};

struct ModelParams {
  BranchParams gene;
  BranchParams image;
};

// Xavier-uniform init for a full two-branch model.
BranchParams init_branch(Index in_dim, Index hid_dim, Index embed_dim,
                         std::uint64_t seed, bool has_gcn = true);

enum class Readout { sum, mean };

// ---- Forward passes (tapes cache what backward needs) ----

struct GcnTape {
  Mat propagated_input;  // propagation * X
  Mat pre_activation;    // propagated_input * weight
};

// PReLU(propagation * X * weight)
Mat gcn_forward(const Mat& propagation, const Mat& X,
                const GcnLayerParams& params, GcnTape* tape = nullptr);

struct HeadTape {
  Mat input;   // Z
  Mat linear;  // Z * weight + bias, before row normalization
};

// l2_normalize_rows(Z * weight + bias)
Mat head_forward(const Mat& Z, const ProjectionHeadParams& params,
                 HeadTape* tape = nullptr);

Vec readout(const Mat& Z, Readout mode = Readout::sum);

// sigma(z^T M h) clamped to [1e-7, 1 - 1e-7]
double discriminate(const Vec& z, const Vec& h,
                    const DiscriminatorParams& params);

// ---- Backward passes ----

struct GcnGrads {
  Mat weight;
  double prelu_slope = 0.0;
  Mat input;
};

GcnGrads gcn_backward(const Mat& propagation, const GcnLayerParams& params,
                      const GcnTape& tape, const Mat& d_out);

struct HeadGrads {
  Mat weight;
  Vec bias;
  Mat input;
};

HeadGrads head_backward(const ProjectionHeadParams& params,
                        const HeadTape& tape, const Mat& d_out);

// d(loss)/dZ rows given d(loss)/dh.
Mat readout_backward(Index n, const Vec& d_h, Readout mode = Readout::sum);

// ---- Image featurization ----

// Pixel patch as 3 channel matrices, values in [0, 255].
using PixelPatch = std::array<Mat, 3>;

struct ImageFeatureSource {
  enum class Mode { precomputed, simple };
  Mode mode = Mode::precomputed;
  Mat features;                    // precomputed: one row per spot
  std::vector<PixelPatch> patches; // simple mode input
  Index patch_size = 0;            // metadata only
};

// Per-channel mean, std, and 8-bin histogram -> 30 features per patch.
constexpr Index kSimpleFeatureDim = 30;

Mat image_featurize(const ImageFeatureSource& source,
                    const std::vector<Index>& spot_indices);

}  // namespace stalign
