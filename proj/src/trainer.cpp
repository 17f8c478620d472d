#include "stalign/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "stalign/hsic.hpp"
#include "stalign/rng.hpp"

namespace stalign {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ b);
}

void branch_blocks(const BranchParams& b, const std::string& prefix,
                   std::vector<ParamBlock>& blocks, Index& at) {
  auto add = [&](const std::string& name, Index size) {
    blocks.push_back({prefix + name, at, size});
    at += size;
  };
  if (b.has_gcn) {
    add(".gcn.weight", b.gcn.weight.size());
    add(".gcn.prelu_slope", 1);
  }
  add(".head.weight", b.head.weight.size());
  add(".head.bias", b.head.bias.size());
  if (b.has_gcn) add(".disc.bilinear", b.disc.bilinear.size());
}

template <typename F>
void for_each_param(BranchParams& b, F&& f) {
  if (b.has_gcn) {
    f(b.gcn.weight.data(), b.gcn.weight.size());
    f(&b.gcn.prelu_slope, 1);
  }
  f(b.head.weight.data(), b.head.weight.size());
  f(b.head.bias.data(), b.head.bias.size());
  if (b.has_gcn) f(b.disc.bilinear.data(), b.disc.bilinear.size());
}

template <typename F>
void for_each_param(ModelParams& m, F&& f) {
  for_each_param(m.gene, f);
  for_each_param(m.image, f);
}

Index total_size(const ModelParams& params) {
  Index n = 0;
  for_each_param(const_cast<ModelParams&>(params),
                 [&](double*, Index size) { n += size; });
  return n;
}

}  // namespace

std::vector<ParamBlock> param_blocks(const ModelParams& params) {
  std::vector<ParamBlock> blocks;
  Index at = 0;
  branch_blocks(params.gene, "gene", blocks, at);
  branch_blocks(params.image, "image", blocks, at);
  return blocks;
}

Vec flatten(const ModelParams& params) {
  Vec flat(total_size(params));
  Index at = 0;
  for_each_param(const_cast<ModelParams&>(params),
                 [&](double* p, Index size) {
                   std::memcpy(flat.data() + at, p,
                               static_cast<std::size_t>(size) * sizeof(double));
                   at += size;
                 });
  return flat;
}

void unflatten(const Vec& flat, ModelParams& params) {
  if (flat.size() != total_size(params))
    throw DataError("unflatten: size mismatch");
  Index at = 0;
  for_each_param(params, [&](double* p, Index size) {
    std::memcpy(p, flat.data() + at,
                static_cast<std::size_t>(size) * sizeof(double));
    at += size;
  });
}

ModelParams init_model(const TrainConfig& cfg, Index gene_in_dim,
                       Index image_in_dim) {
  ModelParams m;
  m.gene = init_branch(gene_in_dim, cfg.hid_dim, cfg.embed_dim,
                       mix(cfg.seed, 0x67656E65, 0), cfg.ablation != 'D');
  m.image = init_branch(image_in_dim, cfg.hid_dim, cfg.embed_dim,
                        mix(cfg.seed, 0x696D6167, 0), cfg.ablation != 'C');
  return m;
}

namespace {

struct BranchForward {
  Mat hidden;  // GCN output (or the raw input when the GCN is bypassed)
  Mat embed;   // projection-head output, unit rows
  GcnTape gcn_tape;
  HeadTape head_tape;
};

BranchForward branch_forward(const BranchParams& b, const Mat& propagation,
                             const Mat& X) {
  BranchForward f;
  f.hidden = b.has_gcn ? gcn_forward(propagation, X, b.gcn, &f.gcn_tape) : X;
  f.embed = head_forward(f.hidden, b.head, &f.head_tape);
  return f;
}

Mat slice_rows(const Mat& m, const std::vector<Index>& rows) {
  Mat out(static_cast<Index>(rows.size()), m.cols());
  for (Index i = 0; i < out.rows(); ++i)
    out.row(i) = m.row(rows[static_cast<std::size_t>(i)]);
  return out;
}

void scatter_add(Mat& target, const std::vector<Index>& rows, const Mat& add,
                 double scale) {
  for (Index i = 0; i < add.rows(); ++i)
    target.row(rows[static_cast<std::size_t>(i)]) += scale * add.row(i);
}

struct BranchGrads {
  Mat gcn_weight;
  double prelu_slope = 0.0;
  Mat head_weight;
  Vec head_bias;
  Mat disc;
};

void pack_branch(const BranchParams& b, const BranchGrads& g, Vec& flat,
                 Index& at) {
  auto put = [&](const double* p, Index size) {
    std::memcpy(flat.data() + at, p,
                static_cast<std::size_t>(size) * sizeof(double));
    at += size;
  };
  if (b.has_gcn) {
    put(g.gcn_weight.data(), g.gcn_weight.size());
    put(&g.prelu_slope, 1);
  }
  put(g.head_weight.data(), g.head_weight.size());
  put(g.head_bias.data(), g.head_bias.size());
  if (b.has_gcn) put(g.disc.data(), g.disc.size());
}

}  // namespace

LossBreakdown epoch_loss(const ModelParams& params, const TrainInputs& inputs,
                         const EpochPlan& plan, BandwidthCache& bandwidths,
                         Vec* flat_grads) {
  const Mat& prop = inputs.graph.propagation;
  const Index n = inputs.t_alpha.rows();
  if (prop.rows() != n || inputs.image_features.rows() != n)
    throw DataError("epoch_loss: spot count mismatch between inputs and graph");

  const bool want_grads = flat_grads != nullptr;
  LossBreakdown lb;
  lb.weights = plan.weights;

  BranchForward gene = branch_forward(params.gene, prop, inputs.t_alpha);
  BranchForward image =
      branch_forward(params.image, prop, inputs.image_features);

  // DGI terms: full graph, fresh shuffled negatives.
  GcnTape gene_neg_tape, image_neg_tape;
  DgiGrads gene_dgi, image_dgi;
  if (params.gene.has_gcn) {
    const Mat neg_in = shuffle_rows(inputs.t_alpha, plan.neg_seed_gene);
    const Mat z_neg =
        gcn_forward(prop, neg_in, params.gene.gcn, &gene_neg_tape);
    const Vec h = readout(gene.hidden, plan.readout);
    lb.dgi_gene =
        want_grads
            ? dgi_loss_grad(gene.hidden, z_neg, h, params.gene.disc, gene_dgi)
            : dgi_loss(gene.hidden, z_neg, h, params.gene.disc);
  }
  if (params.image.has_gcn) {
    const Mat neg_in = shuffle_rows(inputs.image_features, plan.neg_seed_image);
    const Mat z_neg =
        gcn_forward(prop, neg_in, params.image.gcn, &image_neg_tape);
    const Vec h = readout(image.hidden, plan.readout);
    lb.dgi_image = want_grads
                       ? dgi_loss_grad(image.hidden, z_neg, h,
                                       params.image.disc, image_dgi)
                       : dgi_loss(image.hidden, z_neg, h, params.image.disc);
  }

  // Alignment + bottleneck on minibatches sliced from the full-graph pass.
  Mat d_t_iota = Mat::Zero(gene.embed.rows(), gene.embed.cols());
  Mat d_g_f = Mat::Zero(image.embed.rows(), image.embed.cols());
  Mat d_z_gene = Mat::Zero(gene.hidden.rows(), gene.hidden.cols());

  if (!bandwidths.filled) bandwidths.per_batch.resize(plan.batches.size());
  std::size_t usable = 0;
  for (std::size_t bi = 0; bi < plan.batches.size(); ++bi)
    if (plan.batches[bi].size() >= 2) ++usable;
  const double inv_nb = usable > 0 ? 1.0 / static_cast<double>(usable) : 0.0;

  for (std::size_t bi = 0; bi < plan.batches.size(); ++bi) {
    const auto& batch = plan.batches[bi];
    if (batch.size() < 2) continue;
    const Mat ta_b = slice_rows(inputs.t_alpha, batch);
    const Mat zg_b = slice_rows(gene.hidden, batch);
    const Mat ti_b = slice_rows(gene.embed, batch);
    const Mat gf_b = slice_rows(image.embed, batch);

    if (!bandwidths.filled)
      bandwidths.per_batch[bi] = {median_bandwidth(ta_b),
                                  median_bandwidth(zg_b),
                                  median_bandwidth(ti_b)};
    const auto [sa, sr, si] = bandwidths.per_batch[bi];

    if (want_grads) {
      Mat da, dg;
      lb.alignment += inv_nb * alignment_loss_grad(ti_b, gf_b,
                                                   plan.weights.tau, da, dg);
      scatter_add(d_t_iota, batch, da, inv_nb);
      scatter_add(d_g_f, batch, dg, inv_nb);
      BottleneckGrads bg;
      lb.bottleneck += inv_nb * bottleneck_objective_grad_sigmas(
                                    ta_b, zg_b, ti_b, plan.weights.beta, sa,
                                    sr, si, bg);
      const double lh = plan.weights.lambda_hsic;
      scatter_add(d_z_gene, batch, bg.t_rho, inv_nb * lh);
      scatter_add(d_t_iota, batch, bg.t_iota, inv_nb * lh);
    } else {
      lb.alignment +=
          inv_nb * alignment_loss(ti_b, gf_b, plan.weights.tau);
      lb.bottleneck +=
          inv_nb * bottleneck_objective_sigmas(ta_b, zg_b, ti_b,
                                               plan.weights.beta, sa, sr, si);
    }
  }
  bandwidths.filled = true;
  lb.finalize();
  if (!want_grads) return lb;

  auto backward_branch = [&](const BranchParams& b, const BranchForward& fwd,
                             const GcnTape& neg_tape, const DgiGrads& dgi,
                             Mat d_embed, Mat d_hidden_extra) -> BranchGrads {
    BranchGrads g;
    Mat d_hidden = std::move(d_hidden_extra);
    const double ld = plan.weights.lambda_dgi;
    if (b.has_gcn && ld != 0.0)
      d_hidden +=
          ld * (dgi.z + readout_backward(fwd.hidden.rows(), dgi.h,
                                         plan.readout));
    HeadGrads hg = head_backward(b.head, fwd.head_tape, d_embed);
    g.head_weight = std::move(hg.weight);
    g.head_bias = std::move(hg.bias);
    d_hidden += hg.input;
    if (b.has_gcn) {
      GcnGrads pos = gcn_backward(prop, b.gcn, fwd.gcn_tape, d_hidden);
      g.gcn_weight = std::move(pos.weight);
      g.prelu_slope = pos.prelu_slope;
      if (ld != 0.0) {
        GcnGrads neg = gcn_backward(prop, b.gcn, neg_tape, ld * dgi.zneg);
        g.gcn_weight += neg.weight;
        g.prelu_slope += neg.prelu_slope;
      }
      g.disc = ld != 0.0 ? (ld * dgi.bilinear).eval()
                         : Mat::Zero(b.disc.bilinear.rows(),
                                     b.disc.bilinear.cols())
                               .eval();
    }
    return g;
  };

  const BranchGrads gene_grads =
      backward_branch(params.gene, gene, gene_neg_tape, gene_dgi,
                      std::move(d_t_iota), std::move(d_z_gene));
  const BranchGrads image_grads = backward_branch(
      params.image, image, image_neg_tape, image_dgi, std::move(d_g_f),
      Mat::Zero(image.hidden.rows(), image.hidden.cols()));

  flat_grads->resize(total_size(params));
  Index at = 0;
  pack_branch(params.gene, gene_grads, *flat_grads, at);
  pack_branch(params.image, image_grads, *flat_grads, at);
  return lb;
}

EpochPlan make_epoch_plan(const TrainConfig& cfg, Index n_spots, int epoch) {
  EpochPlan plan;
  plan.neg_seed_gene = mix(cfg.seed, static_cast<std::uint64_t>(epoch), 1);
  plan.neg_seed_image = mix(cfg.seed, static_cast<std::uint64_t>(epoch), 2);
  plan.readout = cfg.readout;
  plan.weights = {cfg.lambda_dgi,
                  cfg.ablation == 'A' ? 0.0 : cfg.lambda_hsic, cfg.beta,
                  cfg.tau};

  Rng rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch), 3));
  const auto perm = rng.permutation(n_spots);
  const Index b = cfg.batch_size;
  for (Index start = 0; start < n_spots; start += b) {
    const Index len = std::min<Index>(b, n_spots - start);
    plan.batches.emplace_back(perm.begin() + start, perm.begin() + start + len);
  }
  // A trailing singleton cannot feed the kernel terms; fold it back.
  if (plan.batches.size() > 1 && plan.batches.back().size() < 2) {
    auto tail = plan.batches.back();
    plan.batches.pop_back();
    auto& prev = plan.batches.back();
    prev.insert(prev.end(), tail.begin(), tail.end());
  }
  return plan;
}

TrainResult train(const TrainInputs& inputs, const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result;
  result.params = init_model(cfg, inputs.t_alpha.cols(),
                             inputs.image_features.cols());

  Vec flat = flatten(result.params);
  OptState state(flat.size());
  const AdamWConfig adam{cfg.lr, cfg.weight_decay, cfg.adam_beta1,
                         cfg.adam_beta2, cfg.adam_eps};

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochPlan plan = make_epoch_plan(cfg, inputs.t_alpha.rows(), epoch);
    if (cfg.two_stage) {
      if (epoch < cfg.epochs / 2) {
        // Stage 1: DGI pretraining only.
        plan.batches.clear();
        plan.weights.lambda_hsic = 0.0;
      } else {
        // Stage 2: alignment + bottleneck only.
        plan.weights.lambda_dgi = 0.0;
      }
    }

    Vec grads;
    BandwidthCache bandwidths;
    LossBreakdown lb =
        epoch_loss(result.params, inputs, plan, bandwidths, &grads);

    if (!std::isfinite(lb.total)) {
      std::string term = !std::isfinite(lb.alignment)    ? "alignment"
                         : !std::isfinite(lb.bottleneck) ? "bottleneck"
                         : !std::isfinite(lb.dgi_gene)   ? "dgi_gene"
                                                         : "dgi_image";
      throw DataError("train: non-finite loss in term " + term + " at epoch " +
                      std::to_string(epoch));
    }

    adamw_step(flat, grads, state, adam);
    unflatten(flat, result.params);
    result.history.push_back(lb);
  }
  return result;
}

GradCheckReport gradient_check(std::uint64_t seed, bool corrupt_block) {
  // Tiny random instance: n = 8, dims <= 6.
  Rng rng(splitmix64(seed + 17));
  const Index n = 8, k = 5, f = 4;

  TrainConfig cfg;
  cfg.seed = seed;
  cfg.hid_dim = 4;
  cfg.embed_dim = 3;
  cfg.batch_size = 4;
  cfg.epochs = 1;

  TrainInputs inputs;
  inputs.t_alpha = rng.normal_matrix(n, k);
  inputs.image_features = rng.normal_matrix(n, f);
  Mat coords = rng.uniform_matrix(n, 2, 0.0, 3.0);
  inputs.graph = build_radius_adjacency(coords, 1.2);

  ModelParams params = init_model(cfg, k, f);
  EpochPlan plan = make_epoch_plan(cfg, n, 0);

  BandwidthCache bandwidths;
  Vec analytic;
  epoch_loss(params, inputs, plan, bandwidths, &analytic);

  const auto blocks = param_blocks(params);
  if (corrupt_block && !blocks.empty()) {
    const auto& blk = blocks[blocks.size() / 2];
    analytic.segment(blk.offset, blk.size).array() =
        analytic.segment(blk.offset, blk.size).array() * 1.5 + 0.05;
  }

  Vec flat = flatten(params);
  const double eps = 1e-5;
  Vec fd(flat.size());
  ModelParams probe = params;
  for (Index i = 0; i < flat.size(); ++i) {
    const double orig = flat(i);
    flat(i) = orig + eps;
    unflatten(flat, probe);
    const double up = epoch_loss(probe, inputs, plan, bandwidths, nullptr).total;
    flat(i) = orig - eps;
    unflatten(flat, probe);
    const double dn = epoch_loss(probe, inputs, plan, bandwidths, nullptr).total;
    flat(i) = orig;
    fd(i) = (up - dn) / (2.0 * eps);
  }
  unflatten(flat, probe);

  GradCheckReport report;
  report.worst = 0.0;
  for (const auto& blk : blocks) {
    double worst = 0.0;
    for (Index i = blk.offset; i < blk.offset + blk.size; ++i) {
      const double denom =
          std::max({std::abs(analytic(i)), std::abs(fd(i)), 1e-6});
      worst = std::max(worst, std::abs(analytic(i) - fd(i)) / denom);
    }
    report.block_errors.emplace_back(blk.name, worst);
    report.worst = std::max(report.worst, worst);
  }
  report.pass = report.worst < 1e-4;
  return report;
}

namespace {

constexpr char kModelMagic[8] = {'S', 'T', 'A', 'L', 'M', 'D', 'L', '1'};

void write_mat(std::ofstream& out, const Mat& m) {
  const std::int64_t r = m.rows(), c = m.cols();
  out.write(reinterpret_cast<const char*>(&r), sizeof(r));
  out.write(reinterpret_cast<const char*>(&c), sizeof(c));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double)) * m.size());
}

Mat read_mat(std::ifstream& in) {
  std::int64_t r = 0, c = 0;
  in.read(reinterpret_cast<char*>(&r), sizeof(r));
  in.read(reinterpret_cast<char*>(&c), sizeof(c));
  if (!in || r < 0 || c < 0) throw DataError("model file: corrupt matrix header");
  Mat m(r, c);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double)) * m.size());
  if (!in) throw DataError("model file: truncated matrix data");
  return m;
}

void write_branch(std::ofstream& out, const BranchParams& b) {
  const std::uint8_t has_gcn = b.has_gcn ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&has_gcn), 1);
  if (b.has_gcn) {
    write_mat(out, b.gcn.weight);
    out.write(reinterpret_cast<const char*>(&b.gcn.prelu_slope),
              sizeof(double));
  }
  write_mat(out, b.head.weight);
  write_mat(out, b.head.bias);
  write_mat(out, b.disc.bilinear);
}

BranchParams read_branch(std::ifstream& in) {
  BranchParams b;
  std::uint8_t has_gcn = 0;
  in.read(reinterpret_cast<char*>(&has_gcn), 1);
  b.has_gcn = has_gcn != 0;
  if (b.has_gcn) {
    b.gcn.weight = read_mat(in);
    in.read(reinterpret_cast<char*>(&b.gcn.prelu_slope), sizeof(double));
  }
  b.head.weight = read_mat(in);
  b.head.bias = read_mat(in).col(0);
  b.disc.bilinear = read_mat(in);
  return b;
}

}  // namespace

void save_model(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(kModelMagic, sizeof(kModelMagic));
  write_branch(out, params.gene);
  write_branch(out, params.image);
  if (!out) throw DataError("write failed: " + path);
}

ModelParams load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw DataError(path + ": not a model file");
  ModelParams m;
  m.gene = read_branch(in);
  m.image = read_branch(in);
  return m;
}

std::uint64_t fnv1a_hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ULL;
    }
    if (!in) break;
  }
  return h;
}

}  // namespace stalign
