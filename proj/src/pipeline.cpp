#include "stalign/pipeline.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace stalign {

SpotGraph disjoint_union(const std::vector<SpotGraph>& graphs) {
  if (graphs.empty()) throw ParamError("disjoint_union: need >= 1 graph");
  if (graphs.size() == 1) return graphs.front();
  Index n = 0;
  for (const auto& g : graphs) n += g.coords.rows();
  SpotGraph out;
  out.radius = graphs.front().radius;
  out.coords.resize(n, 2);
  out.adjacency = Mat::Zero(n, n);
  out.propagation = Mat::Zero(n, n);
  Index at = 0;
  for (const auto& g : graphs) {
    const Index m = g.coords.rows();
    out.coords.middleRows(at, m) = g.coords;
    out.adjacency.block(at, at, m, m) = g.adjacency;
    out.propagation.block(at, at, m, m) = g.propagation;
    at += m;
  }
  return out;
}

TrainedPipeline run_training(const std::vector<SlideDataset>& slides,
                             const TrainConfig& cfg) {
  cfg.validate();
  if (slides.empty()) throw ParamError("run_training: need >= 1 slide");
  for (const auto& s : slides)
    if (s.image_features.cols() == 0)
      throw DataError("run_training: slide " + s.slide_id +
                      " has no image features");

  TrainedPipeline out;
  out.cfg = cfg;

  const bool use_pca = cfg.ablation != 'B';
  auto [prep, processed] =
      preprocess(slides, cfg.pca_dim, cfg.n_genes, use_pca, cfg.radius);
  out.prep = std::move(prep);

  Index n_total = 0;
  for (const auto& p : processed) n_total += p.t_alpha.rows();

  TrainInputs inputs;
  inputs.t_alpha.resize(n_total, processed.front().t_alpha.cols());
  inputs.image_features.resize(n_total, slides.front().image_features.cols());
  Mat expression_norm(n_total, processed.front().expression_norm.cols());
  std::vector<std::string> spot_ids;
  std::vector<SpotGraph> graphs;
  Index at = 0;
  for (std::size_t s = 0; s < processed.size(); ++s) {
    const Index m = processed[s].t_alpha.rows();
    inputs.t_alpha.middleRows(at, m) = processed[s].t_alpha;
    inputs.image_features.middleRows(at, m) = slides[s].image_features;
    expression_norm.middleRows(at, m) = processed[s].expression_norm;
    for (const auto& id : processed[s].spot_ids)
      spot_ids.push_back(processed[s].slide_id + ":" + id);
    graphs.push_back(processed[s].graph);
    at += m;
  }
  inputs.graph = disjoint_union(graphs);

  TrainResult result = train(inputs, cfg);
  out.model = std::move(result.params);
  out.history = std::move(result.history);
  out.db = build_database(out.model, inputs.graph, inputs.t_alpha,
                          expression_norm, spot_ids, out.prep.selected_genes);
  return out;
}

PredictionResult run_prediction(const TrainedPipeline& trained,
                                const SlideDataset& query) {
  if (query.image_features.cols() == 0)
    throw DataError("run_prediction: query slide has no image features");
  const ProcessedSlide proc =
      apply_preprocess(trained.prep, query, trained.cfg.radius);

  const Mat query_emb =
      embed_queries(trained.model, proc.graph, query.image_features);
  const Index k =
      std::min<Index>(trained.cfg.topk, trained.db.embeddings.rows());
  const TopkResult topk = query_topk(trained.db, query_emb, k);

  PredictionResult out;
  out.predicted =
      predict_expression(trained.db, topk, trained.cfg.weighted_average);
  out.truth_norm = proc.expression_norm;
  out.spot_ids = proc.spot_ids;
  out.gene_names = trained.prep.selected_genes;
  out.coords = query.coords;
  return out;
}

// ---- Config files ----

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParamError("config: bad numeric value for key '" + key + "': " + v);
  }
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParamError("config: expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "epochs") cfg.epochs = static_cast<int>(to_double(key, value));
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(to_double(key, value));
    else if (key == "lr") cfg.lr = to_double(key, value);
    else if (key == "weight_decay") cfg.weight_decay = to_double(key, value);
    else if (key == "adam_beta1") cfg.adam_beta1 = to_double(key, value);
    else if (key == "adam_beta2") cfg.adam_beta2 = to_double(key, value);
    else if (key == "adam_eps") cfg.adam_eps = to_double(key, value);
    else if (key == "tau") cfg.tau = to_double(key, value);
    else if (key == "beta") cfg.beta = to_double(key, value);
    else if (key == "lambda_dgi") cfg.lambda_dgi = to_double(key, value);
    else if (key == "lambda_hsic") cfg.lambda_hsic = to_double(key, value);
    else if (key == "pca_dim") cfg.pca_dim = static_cast<Index>(to_double(key, value));
    else if (key == "hid_dim") cfg.hid_dim = static_cast<Index>(to_double(key, value));
    else if (key == "embed_dim") cfg.embed_dim = static_cast<Index>(to_double(key, value));
    else if (key == "radius") cfg.radius = to_double(key, value);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_double(key, value));
    else if (key == "topk") cfg.topk = static_cast<Index>(to_double(key, value));
    else if (key == "n_genes") cfg.n_genes = static_cast<Index>(to_double(key, value));
    else if (key == "two_stage") cfg.two_stage = to_double(key, value) != 0.0;
    else if (key == "weighted_average") cfg.weighted_average = to_double(key, value) != 0.0;
    else if (key == "readout") {
      if (value == "sum") cfg.readout = Readout::sum;
      else if (value == "mean") cfg.readout = Readout::mean;
      else throw ParamError("config: readout must be sum or mean");
    } else if (key == "ablation") {
      if (value == "none" || value.empty()) cfg.ablation = 0;
      else if (value.size() == 1 && value[0] >= 'A' && value[0] <= 'D')
        cfg.ablation = value[0];
      else throw ParamError("config: ablation must be none or A..D");
    } else {
      throw ParamError("config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const TrainConfig& cfg) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "epochs = " << cfg.epochs << '\n'
      << "batch_size = " << cfg.batch_size << '\n'
      << "lr = " << num(cfg.lr) << '\n'
      << "weight_decay = " << num(cfg.weight_decay) << '\n'
      << "adam_beta1 = " << num(cfg.adam_beta1) << '\n'
      << "adam_beta2 = " << num(cfg.adam_beta2) << '\n'
      << "adam_eps = " << num(cfg.adam_eps) << '\n'
      << "tau = " << num(cfg.tau) << '\n'
      << "beta = " << num(cfg.beta) << '\n'
      << "lambda_dgi = " << num(cfg.lambda_dgi) << '\n'
      << "lambda_hsic = " << num(cfg.lambda_hsic) << '\n'
      << "pca_dim = " << cfg.pca_dim << '\n'
      << "hid_dim = " << cfg.hid_dim << '\n'
      << "embed_dim = " << cfg.embed_dim << '\n'
      << "radius = " << num(cfg.radius) << '\n'
      << "readout = " << (cfg.readout == Readout::sum ? "sum" : "mean") << '\n'
      << "seed = " << cfg.seed << '\n'
      << "topk = " << cfg.topk << '\n'
      << "n_genes = " << cfg.n_genes << '\n'
      << "ablation = " << (cfg.ablation ? std::string(1, cfg.ablation)
                                        : std::string("none")) << '\n'
      << "two_stage = " << (cfg.two_stage ? 1 : 0) << '\n'
      << "weighted_average = " << (cfg.weighted_average ? 1 : 0) << '\n';
  return out.str();
}

// ---- Preprocess persistence ----

namespace {

void write_string(std::ofstream& out, const std::string& s) {
  const std::uint64_t len = s.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(s.data(), static_cast<std::streamsize>(len));
}

std::string read_string(std::ifstream& in) {
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 30)) throw DataError("preprocess file: corrupt");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  return s;
}

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
  if (!in || r < 0 || c < 0) throw DataError("preprocess file: corrupt matrix");
  Mat m(r, c);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double)) * m.size());
  if (!in) throw DataError("preprocess file: truncated");
  return m;
}

constexpr char kPrepMagic[8] = {'S', 'T', 'A', 'L', 'P', 'R', 'P', '1'};

}  // namespace

void save_preprocess(const PreprocessModel& prep, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(kPrepMagic, sizeof(kPrepMagic));
  const std::uint64_t n = prep.selected_genes.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const auto& g : prep.selected_genes) write_string(out, g);
  out.write(reinterpret_cast<const char*>(&prep.median_total), sizeof(double));
  const std::uint8_t use_pca = prep.use_pca ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&use_pca), 1);
  if (prep.use_pca) {
    write_mat(out, prep.pca.mean);
    write_mat(out, prep.pca.components);
    write_mat(out, prep.pca.explained_variance);
  }
  if (!out) throw DataError("write failed: " + path);
}

PreprocessModel load_preprocess(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kPrepMagic, sizeof(magic)) != 0)
    throw DataError(path + ": not a preprocess file");
  PreprocessModel prep;
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  for (std::uint64_t i = 0; i < n; ++i)
    prep.selected_genes.push_back(read_string(in));
  in.read(reinterpret_cast<char*>(&prep.median_total), sizeof(double));
  std::uint8_t use_pca = 0;
  in.read(reinterpret_cast<char*>(&use_pca), 1);
  prep.use_pca = use_pca != 0;
  if (prep.use_pca) {
    prep.pca.mean = read_mat(in).col(0);
    prep.pca.components = read_mat(in);
    prep.pca.explained_variance = read_mat(in).col(0);
  }
  return prep;
}

void save_pipeline(const TrainedPipeline& trained, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_model(trained.model, dir + "/model.bin");
  save_preprocess(trained.prep, dir + "/preprocess.bin");
  {
    std::ofstream out(dir + "/config.txt");
    if (!out) throw DataError("cannot write " + dir + "/config.txt");
    out << config_to_text(trained.cfg);
  }
  {
    std::ofstream out(dir + "/history.csv");
    if (!out) throw DataError("cannot write " + dir + "/history.csv");
    out << "epoch,dgi_gene,dgi_image,bottleneck,alignment,total\n";
    char buf[160];
    for (std::size_t e = 0; e < trained.history.size(); ++e) {
      const auto& lb = trained.history[e];
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", e,
                    lb.dgi_gene, lb.dgi_image, lb.bottleneck, lb.alignment,
                    lb.total);
      out << buf;
    }
  }
  save_database(trained.db, dir + "/db", trained.cfg.seed,
                fnv1a_hash_file(dir + "/model.bin"));
}

TrainedPipeline load_pipeline(const std::string& dir) {
  TrainedPipeline trained;
  trained.cfg = load_config_file(dir + "/config.txt");
  trained.model = load_model(dir + "/model.bin");
  trained.prep = load_preprocess(dir + "/preprocess.bin");
  trained.db = load_database(dir + "/db");
  return trained;
}

}  // namespace stalign
