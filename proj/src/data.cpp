#include "stalign/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "stalign/rng.hpp"

namespace stalign {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& s, const std::string& path, Index row,
                  Index col) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(path + ": non-numeric cell at row " + std::to_string(row) +
                    ", col " + std::to_string(col) + " ('" + s + "')");
  }
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::tuple<Mat, std::vector<std::string>, std::vector<std::string>>
read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  if (header.size() < 2) throw DataError(path + ": header needs >= 2 columns");
  std::vector<std::string> col_names(header.begin() + 1, header.end());

  std::vector<std::string> row_ids;
  std::vector<std::vector<double>> rows;
  Index row_no = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError(path + ": row " + std::to_string(row_no) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(header.size()));
    row_ids.push_back(fields[0]);
    std::vector<double> vals(fields.size() - 1);
    for (std::size_t c = 1; c < fields.size(); ++c)
      vals[c - 1] = parse_cell(fields[c], path, row_no,
                               static_cast<Index>(c));
    rows.push_back(std::move(vals));
    ++row_no;
  }
  Mat m(static_cast<Index>(rows.size()), static_cast<Index>(col_names.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return {std::move(m), std::move(row_ids), std::move(col_names)};
}

void write_matrix_csv(const std::string& path, const Mat& m,
                      const std::vector<std::string>& row_ids,
                      const std::vector<std::string>& col_names) {
  if (static_cast<Index>(row_ids.size()) != m.rows() ||
      static_cast<Index>(col_names.size()) != m.cols())
    throw DataError("write_matrix_csv: label/shape mismatch");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "spot_id";
  for (const auto& c : col_names) out << ',' << c;
  out << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    out << row_ids[static_cast<std::size_t>(i)];
    for (Index j = 0; j < m.cols(); ++j) out << ',' << format_value(m(i, j));
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

SlideDataset load_slide(const std::string& expression_path,
                        const std::string& coords_path,
                        const std::string& features_path) {
  SlideDataset slide;
  slide.slide_id =
      std::filesystem::path(expression_path).parent_path().filename().string();

  auto [expr, spot_ids, gene_names] = read_matrix_csv(expression_path);
  slide.expression = std::move(expr);
  slide.spot_ids = std::move(spot_ids);
  slide.gene_names = std::move(gene_names);
  require_finite(slide.expression, expression_path);

  // Reorder companion files to the expression spot order.
  auto align = [&](const std::string& path, const Mat& m,
                   const std::vector<std::string>& ids, const char* what) {
    std::unordered_map<std::string, Index> pos;
    for (Index i = 0; i < static_cast<Index>(ids.size()); ++i)
      pos[ids[static_cast<std::size_t>(i)]] = i;
    Mat out(static_cast<Index>(slide.spot_ids.size()), m.cols());
    std::vector<std::string> missing;
    for (Index i = 0; i < out.rows(); ++i) {
      const auto& id = slide.spot_ids[static_cast<std::size_t>(i)];
      auto it = pos.find(id);
      if (it == pos.end()) {
        missing.push_back(id);
        continue;
      }
      out.row(i) = m.row(it->second);
    }
    if (!missing.empty()) {
      std::string msg = path + ": missing " + what + " for spot_id(s):";
      for (const auto& id : missing) msg += " " + id;
      throw DataError(msg);
    }
    return out;
  };

  auto [coords, coord_ids, coord_cols] = read_matrix_csv(coords_path);
  if (coords.cols() != 2)
    throw DataError(coords_path + ": expected columns spot_id,x,y");
  slide.coords = align(coords_path, coords, coord_ids, "coordinates");
  require_finite(slide.coords, coords_path);

  if (!features_path.empty()) {
    auto [feats, feat_ids, feat_cols] = read_matrix_csv(features_path);
    slide.image_features = align(features_path, feats, feat_ids, "features");
    require_finite(slide.image_features, features_path);
  }
  return slide;
}

void save_slide(const SlideDataset& slide, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_matrix_csv(dir + "/expression.csv", slide.expression, slide.spot_ids,
                   slide.gene_names);
  std::vector<std::string> xy = {"x", "y"};
  write_matrix_csv(dir + "/coords.csv", slide.coords, slide.spot_ids, xy);
  if (slide.image_features.cols() > 0) {
    std::vector<std::string> fnames;
    for (Index j = 0; j < slide.image_features.cols(); ++j)
      fnames.push_back("f" + std::to_string(j));
    write_matrix_csv(dir + "/features.csv", slide.image_features,
                     slide.spot_ids, fnames);
  }
  if (slide.latents.cols() > 0) {
    std::vector<std::string> lnames;
    for (Index j = 0; j < slide.latents.cols(); ++j)
      lnames.push_back("l" + std::to_string(j));
    write_matrix_csv(dir + "/latents.csv", slide.latents, slide.spot_ids,
                     lnames);
  }
}

namespace {

Mat log_normalize(const Mat& expression, double median_total) {
  Mat out(expression.rows(), expression.cols());
  for (Index i = 0; i < expression.rows(); ++i) {
    const double total = expression.row(i).sum();
    const double scale = total > 0.0 ? median_total / total : 0.0;
    out.row(i) = (expression.row(i).array() * scale).log1p();
  }
  return out;
}

SpotGraph make_graph(const Mat& coords, double radius) {
  const double r = radius > 0.0
                       ? radius
                       : (coords.rows() >= 2 ? default_radius(coords) : 1.0);
  return build_radius_adjacency(coords, r);
}

}  // namespace

std::pair<PreprocessModel, std::vector<ProcessedSlide>> preprocess(
    const std::vector<SlideDataset>& slides, Index k, Index n_genes,
    bool use_pca, double radius) {
  if (slides.empty()) throw ParamError("preprocess: need >= 1 slide");
  const auto& gene_names = slides.front().gene_names;
  for (const auto& s : slides)
    if (s.gene_names != gene_names)
      throw DataError("preprocess: training slides disagree on gene columns");

  PreprocessModel model;

  std::vector<double> totals;
  for (const auto& s : slides)
    for (Index i = 0; i < s.expression.rows(); ++i)
      totals.push_back(s.expression.row(i).sum());
  std::sort(totals.begin(), totals.end());
  const std::size_t mid = totals.size() / 2;
  model.median_total = totals.size() % 2 == 1
                           ? totals[mid]
                           : 0.5 * (totals[mid - 1] + totals[mid]);
  if (model.median_total <= 0.0) model.median_total = 1.0;

  // Joint log-normalized matrix over all training spots.
  Index n_total = 0;
  for (const auto& s : slides) n_total += s.expression.rows();
  Mat joint(n_total, static_cast<Index>(gene_names.size()));
  Index at = 0;
  for (const auto& s : slides) {
    joint.middleRows(at, s.expression.rows()) =
        log_normalize(s.expression, model.median_total);
    at += s.expression.rows();
  }

  // Top-variance gene selection, ties broken by gene name.
  const Vec means = joint.colwise().mean();
  Vec variances(joint.cols());
  for (Index j = 0; j < joint.cols(); ++j)
    variances(j) = (joint.col(j).array() - means(j)).square().sum() /
                   static_cast<double>(std::max<Index>(1, n_total - 1));
  std::vector<Index> order(static_cast<std::size_t>(joint.cols()));
  for (Index j = 0; j < joint.cols(); ++j)
    order[static_cast<std::size_t>(j)] = j;
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (variances(a) != variances(b)) return variances(a) > variances(b);
    return gene_names[static_cast<std::size_t>(a)] <
           gene_names[static_cast<std::size_t>(b)];
  });
  const Index n_keep = std::min<Index>(n_genes, joint.cols());
  order.resize(static_cast<std::size_t>(n_keep));
  std::sort(order.begin(), order.end());  // keep original column order
  model.selected_cols = order;
  for (const Index j : order)
    model.selected_genes.push_back(gene_names[static_cast<std::size_t>(j)]);

  Mat joint_sel(n_total, n_keep);
  for (Index j = 0; j < n_keep; ++j)
    joint_sel.col(j) = joint.col(model.selected_cols[static_cast<std::size_t>(j)]);

  model.use_pca = use_pca;
  if (use_pca) {
    const Index k_eff = std::min<Index>(k, std::min(n_total - 1, n_keep));
    if (k_eff < 1) throw ParamError("preprocess: cannot fit PCA with k < 1");
    auto [pca, scores] = pca_fit_transform(joint_sel, k_eff);
    model.pca = std::move(pca);
  }

  std::vector<ProcessedSlide> processed;
  for (const auto& s : slides) processed.push_back(apply_preprocess(model, s, radius));
  return {std::move(model), std::move(processed)};
}

ProcessedSlide apply_preprocess(const PreprocessModel& model,
                                const SlideDataset& slide, double radius) {
  std::unordered_map<std::string, Index> pos;
  for (Index j = 0; j < static_cast<Index>(slide.gene_names.size()); ++j)
    pos[slide.gene_names[static_cast<std::size_t>(j)]] = j;

  ProcessedSlide out;
  out.slide_id = slide.slide_id;
  out.spot_ids = slide.spot_ids;

  Mat raw_sel(slide.expression.rows(),
              static_cast<Index>(model.selected_genes.size()));
  for (Index j = 0; j < raw_sel.cols(); ++j) {
    const auto& name = model.selected_genes[static_cast<std::size_t>(j)];
    auto it = pos.find(name);
    if (it == pos.end())
      throw DataError("apply_preprocess: slide lacks selected gene " + name);
    raw_sel.col(j) = slide.expression.col(it->second);
  }
  out.expression_norm = log_normalize(raw_sel, model.median_total);
  out.t_alpha =
      model.use_pca ? model.pca.transform(out.expression_norm)
                    : out.expression_norm;
  out.graph = make_graph(slide.coords, radius);
  return out;
}

SlideDataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_spots < 16) throw ParamError("generate_synthetic: n_spots >= 16");
  constexpr Index kLatentDim = 8;

  // Weights depend on the seed only, so slices from one seed share the
  // same gene/image model and can serve as train/query pairs.
  Rng weight_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);
  const Mat w_gene = weight_rng.normal_matrix(kLatentDim, cfg.n_genes, 0.35);
  const Vec b_gene =
      weight_rng.uniform_matrix(cfg.n_genes, 1, 0.5, 1.8).col(0);
  const Mat w_img = weight_rng.normal_matrix(kLatentDim, cfg.f_img, 0.8);

  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 7919 * (cfg.slice + 1));

  SlideDataset slide;
  slide.slide_id = "synthetic_s" + std::to_string(cfg.slice);
  const auto side =
      static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(cfg.n_spots))));
  slide.coords.resize(cfg.n_spots, 2);
  for (Index i = 0; i < cfg.n_spots; ++i) {
    const Index row = i / side, col = i % side;
    if (cfg.grid == GridKind::square) {
      slide.coords(i, 0) = static_cast<double>(col);
      slide.coords(i, 1) = static_cast<double>(row);
    } else {
      slide.coords(i, 0) =
          static_cast<double>(col) + (row % 2 == 1 ? 0.5 : 0.0);
      slide.coords(i, 1) = static_cast<double>(row) * std::numbers::sqrt3 / 2.0;
    }
    slide.spot_ids.push_back("spot_" + std::to_string(i));
  }
  const double extent = static_cast<double>(side);

  // Low-frequency sinusoidal latent field plus a little rough noise.
  slide.latents = Mat::Zero(cfg.n_spots, kLatentDim);
  for (Index d = 0; d < kLatentDim; ++d) {
    constexpr int kWaves = 3;
    double fx[kWaves], fy[kWaves], phase[kWaves], amp[kWaves];
    for (int w = 0; w < kWaves; ++w) {
      const double freq = rng.uniform(0.5, 1.5) / extent;  // 1-2 periods
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      fx[w] = freq * std::cos(angle);
      fy[w] = freq * std::sin(angle);
      phase[w] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      amp[w] = rng.uniform(0.5, 1.0);
    }
    for (Index i = 0; i < cfg.n_spots; ++i) {
      double v = 0.0;
      for (int w = 0; w < kWaves; ++w)
        v += amp[w] * std::sin(2.0 * std::numbers::pi *
                                   (fx[w] * slide.coords(i, 0) +
                                    fy[w] * slide.coords(i, 1)) +
                               phase[w]);
      slide.latents(i, d) = v + 0.1 * rng.normal();
    }
  }

  // Counts: exp-link with mild multiplicative overdispersion.
  slide.expression.resize(cfg.n_spots, cfg.n_genes);
  const Mat log_rate =
      (slide.latents * w_gene).rowwise() + b_gene.transpose();
  for (Index i = 0; i < cfg.n_spots; ++i)
    for (Index j = 0; j < cfg.n_genes; ++j) {
      const double rate =
          std::exp(std::min(6.0, log_rate(i, j)) + 0.25 * rng.normal());
      slide.expression(i, j) = std::max(0.0, std::round(rate));
    }
  for (Index j = 0; j < cfg.n_genes; ++j)
    slide.gene_names.push_back("G" + std::to_string(j));

  slide.image_features = slide.latents * w_img +
                         rng.normal_matrix(cfg.n_spots, cfg.f_img, 1.5);
  return slide;
}

}  // namespace stalign
