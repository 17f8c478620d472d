#include "stalign/encoders.hpp"

#include <cmath>

#include "stalign/linalg.hpp"
#include "stalign/rng.hpp"

namespace stalign {

namespace {

Mat xavier_uniform(Index fan_in, Index fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return rng.uniform_matrix(fan_in, fan_out, -a, a);
}

}  // namespace

BranchParams init_branch(Index in_dim, Index hid_dim, Index embed_dim,
                         std::uint64_t seed, bool has_gcn) {
  Rng rng(seed);
  BranchParams b;
  b.has_gcn = has_gcn;
  const Index head_in = has_gcn ? hid_dim : in_dim;
  if (has_gcn) {
    b.gcn.weight = xavier_uniform(in_dim, hid_dim, rng);
    b.gcn.prelu_slope = 0.25;
  }
  b.head.weight = xavier_uniform(head_in, embed_dim, rng);
  b.head.bias = Vec::Zero(embed_dim);
  b.disc.bilinear = xavier_uniform(head_in, head_in, rng);
  return b;
}

Mat gcn_forward(const Mat& propagation, const Mat& X,
                const GcnLayerParams& params, GcnTape* tape) {
  if (propagation.cols() != X.rows() || X.cols() != params.weight.rows())
    throw DataError("gcn_forward: dimension mismatch");
  Mat px = propagation * X;
  Mat pre = px * params.weight;
  Mat out = pre.unaryExpr([a = params.prelu_slope](double v) {
    return v >= 0.0 ? v : a * v;
  });
  if (tape) {
    tape->propagated_input = std::move(px);
    tape->pre_activation = std::move(pre);
  }
  return out;
}

GcnGrads gcn_backward(const Mat& propagation, const GcnLayerParams& params,
                      const GcnTape& tape, const Mat& d_out) {
  GcnGrads g;
  // PReLU: d/dpre = 1 for pre >= 0, slope otherwise; d/dslope = min(pre, 0)
  Mat d_pre = d_out.cwiseProduct(tape.pre_activation.unaryExpr(
      [a = params.prelu_slope](double v) { return v >= 0.0 ? 1.0 : a; }));
  g.prelu_slope =
      d_out.cwiseProduct(tape.pre_activation.cwiseMin(0.0)).sum();
  g.weight = tape.propagated_input.transpose() * d_pre;
  g.input = propagation.transpose() * (d_pre * params.weight.transpose());
  return g;
}

Mat head_forward(const Mat& Z, const ProjectionHeadParams& params,
                 HeadTape* tape) {
  if (Z.cols() != params.weight.rows())
    throw DataError("head_forward: dimension mismatch");
  Mat lin = (Z * params.weight).rowwise() + params.bias.transpose();
  Mat out = l2_normalize_rows(lin);
  if (tape) {
    tape->input = Z;
    tape->linear = std::move(lin);
  }
  return out;
}

HeadGrads head_backward(const ProjectionHeadParams& params,
                        const HeadTape& tape, const Mat& d_out) {
  // Row normalization: t = y / |y|, dy = (dt - t (t . dt)) / |y|.
  Mat d_lin(tape.linear.rows(), tape.linear.cols());
  for (Index i = 0; i < tape.linear.rows(); ++i) {
    const double norm = tape.linear.row(i).norm();
    if (norm == 0.0) {
      d_lin.row(i).setZero();
      continue;
    }
    const Vec t = tape.linear.row(i).transpose() / norm;
    const Vec dt = d_out.row(i).transpose();
    d_lin.row(i) = ((dt - t * t.dot(dt)) / norm).transpose();
  }
  HeadGrads g;
  g.weight = tape.input.transpose() * d_lin;
  g.bias = d_lin.colwise().sum().transpose();
  g.input = d_lin * params.weight.transpose();
  return g;
}

Vec readout(const Mat& Z, Readout mode) {
  if (Z.rows() < 1) throw DataError("readout: empty input");
  Vec h = Z.colwise().sum().transpose();
  if (mode == Readout::mean) h /= static_cast<double>(Z.rows());
  return h;
}

Mat readout_backward(Index n, const Vec& d_h, Readout mode) {
  const double s = mode == Readout::mean ? 1.0 / static_cast<double>(n) : 1.0;
  return Vec::Ones(n) * (s * d_h.transpose());
}

double discriminate(const Vec& z, const Vec& h,
                    const DiscriminatorParams& params) {
  if (z.size() != params.bilinear.rows() || h.size() != params.bilinear.cols())
    throw DataError("discriminate: dimension mismatch");
  const double score = z.dot(params.bilinear * h);
  const double p = 1.0 / (1.0 + std::exp(-score));
  return std::min(1.0 - 1e-7, std::max(1e-7, p));
}

Mat image_featurize(const ImageFeatureSource& source,
                    const std::vector<Index>& spot_indices) {
  if (source.mode == ImageFeatureSource::Mode::precomputed) {
    Mat out(static_cast<Index>(spot_indices.size()), source.features.cols());
    Index r = 0;
    for (const Index idx : spot_indices) {
      if (idx < 0 || idx >= source.features.rows())
        throw DataError("image_featurize: missing feature row " +
                        std::to_string(idx));
      out.row(r++) = source.features.row(idx);
    }
    return out;
  }

  constexpr int kBins = 8;
  Mat out(static_cast<Index>(spot_indices.size()), kSimpleFeatureDim);
  Index r = 0;
  for (const Index idx : spot_indices) {
    if (idx < 0 || idx >= static_cast<Index>(source.patches.size()))
      throw DataError("image_featurize: missing patch " + std::to_string(idx));
    const PixelPatch& patch = source.patches[static_cast<std::size_t>(idx)];
    Index col = 0;
    for (const Mat& channel : patch) {
      const double n = static_cast<double>(channel.size());
      const double mean = channel.mean();
      const double var = (channel.array() - mean).square().sum() / n;
      out(r, col++) = mean;
      out(r, col++) = std::sqrt(var);
      double hist[kBins] = {};
      for (Index i = 0; i < channel.rows(); ++i)
        for (Index j = 0; j < channel.cols(); ++j) {
          int bin = static_cast<int>(channel(i, j) / 256.0 * kBins);
          bin = std::min(kBins - 1, std::max(0, bin));
          hist[bin] += 1.0 / n;
        }
      for (int b = 0; b < kBins; ++b) out(r, col++) = hist[b];
    }
    ++r;
  }
  return out;
}

}  // namespace stalign
