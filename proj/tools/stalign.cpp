#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stalign/pipeline.hpp"

namespace fs = std::filesystem;
using namespace stalign;

namespace {

using Clock = std::chrono::steady_clock;

struct ManifestBuilder {
  nlohmann::json j;
  Clock::time_point start = Clock::now();

  ManifestBuilder() {
    j["inputs"] = nlohmann::json::object();
    j["artifacts"] = nlohmann::json::object();
  }
  void input(const std::string& path) {
    j["inputs"][path] = fnv1a_hash_file(path);
  }
  void artifact(const std::string& path) {
    j["artifacts"][path] = fnv1a_hash_file(path);
  }
  void write(const std::string& path) {
    j["wall_clock_seconds"] =
        std::chrono::duration<double>(Clock::now() - start).count();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(2) << '\n';
  }
};

std::vector<std::string> slide_files(const std::string& dir) {
  return {dir + "/expression.csv", dir + "/coords.csv", dir + "/features.csv"};
}

SlideDataset load_slide_dir(const std::string& dir) {
  const auto files = slide_files(dir);
  const std::string features =
      fs::exists(files[2]) ? files[2] : std::string{};
  SlideDataset s = load_slide(files[0], files[1], features);
  s.slide_id = fs::path(dir).filename().string();
  return s;
}

void write_predictions(const std::string& path, const PredictionResult& res) {
  write_matrix_csv(path, res.predicted, res.spot_ids, res.gene_names);
}

EvalReport evaluate_prediction(const PredictionResult& res,
                               const std::vector<std::string>& markers) {
  const Vec corr = gene_correlations(res.predicted, res.truth_norm);
  return summarize(corr, res.truth_norm, res.gene_names, markers);
}

int run(int argc, char** argv) {
  CLI::App app{"Cross-modal spatial expression embedding toolkit"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand(
      "synth", "Generate a synthetic paired expression/image dataset");
  SyntheticConfig scfg;
  std::string synth_out = "synth_data";
  std::string grid_kind = "square";
  synth->add_option("--spots", scfg.n_spots, "Number of spots (>= 16)");
  synth->add_option("--genes", scfg.n_genes, "Number of genes");
  synth->add_option("--img-features", scfg.f_img, "Image feature dimension");
  synth->add_option("--seed", scfg.seed, "RNG seed (fixes the gene model)");
  synth->add_option("--slice", scfg.slice,
                    "Slice index (same seed + new slice = fresh tissue)");
  synth->add_option("--grid", grid_kind, "square or hex");
  synth->add_option("--out-dir", synth_out, "Output directory");
  synth->callback([&] {
    if (grid_kind == "hex") scfg.grid = GridKind::hex;
    else if (grid_kind != "square") throw ParamError("--grid: square or hex");
    const SlideDataset slide = generate_synthetic(scfg);
    ManifestBuilder manifest;
    save_slide(slide, synth_out);
    for (const auto& name :
         {"expression.csv", "coords.csv", "features.csv", "latents.csv"})
      manifest.artifact(synth_out + "/" + name);
    manifest.j["seed"] = scfg.seed;
    manifest.j["slice"] = scfg.slice;
    manifest.write(synth_out + "/manifest.json");
    std::cout << "wrote " << slide.expression.rows() << " spots to "
              << synth_out << "\n";
  });

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Train the two-branch model");
  std::vector<std::string> train_dirs;
  std::string config_path, out_model = "model";
  std::string ablation_flag;
  int epochs_flag = -1;
  std::int64_t seed_flag = -1;
  train_cmd->add_option("--train-dirs", train_dirs, "Training slide dirs")
      ->required();
  train_cmd->add_option("--config", config_path, "key = value config file");
  train_cmd->add_option("--out-model", out_model, "Output model directory");
  train_cmd->add_option("--ablation", ablation_flag, "A|B|C|D variant");
  train_cmd->add_option("--epochs", epochs_flag, "Override epochs");
  train_cmd->add_option("--seed", seed_flag, "Override seed");
  train_cmd->callback([&] {
    TrainConfig cfg = config_path.empty() ? TrainConfig{}
                                          : load_config_file(config_path);
    if (!ablation_flag.empty()) {
      if (ablation_flag.size() != 1 || ablation_flag[0] < 'A' ||
          ablation_flag[0] > 'D')
        throw ParamError("--ablation must be one of A, B, C, D");
      cfg.ablation = ablation_flag[0];
    }
    if (epochs_flag >= 0) cfg.epochs = epochs_flag;
    if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
    cfg.validate();

    ManifestBuilder manifest;
    std::vector<SlideDataset> slides;
    for (const auto& dir : train_dirs) {
      slides.push_back(load_slide_dir(dir));
      for (const auto& f : slide_files(dir))
        if (fs::exists(f)) manifest.input(f);
    }
    const TrainedPipeline trained = run_training(slides, cfg);
    save_pipeline(trained, out_model);
    manifest.j["config"] = config_to_text(trained.cfg);
    manifest.j["seed"] = trained.cfg.seed;
    for (const auto& name : {"model.bin", "preprocess.bin", "history.csv"})
      manifest.artifact(out_model + "/" + name);
    manifest.write(out_model + "/manifest.json");
    std::cout << "trained " << trained.history.size() << " epochs";
    if (!trained.history.empty())
      std::cout << ", final total loss " << trained.history.back().total;
    std::cout << "\n";
  });

  // ---- predict ----
  auto* predict = app.add_subcommand(
      "predict", "Impute expression for a query slide by top-k retrieval");
  std::string model_dir, query_dir, pred_out = "predicted.csv";
  std::string truth_out;
  std::vector<std::string> db_dirs;
  std::int64_t topk_flag = -1;
  predict->add_option("--model", model_dir, "Trained model directory")
      ->required();
  predict->add_option("--db-dirs", db_dirs,
                      "Rebuild the database from these slide dirs");
  predict->add_option("--query-dir", query_dir, "Query slide directory")
      ->required();
  predict->add_option("--topk", topk_flag, "Neighbors to average");
  predict->add_option("--out", pred_out, "Predicted expression CSV");
  predict->add_option("--truth-out", truth_out,
                      "Also write the query's processed truth CSV");
  predict->callback([&] {
    TrainedPipeline trained = load_pipeline(model_dir);
    if (topk_flag == 0) throw ParamError("--topk must be >= 1");
    if (topk_flag > 0) trained.cfg.topk = topk_flag;
    if (!db_dirs.empty()) {
      // Rebuild the database from fresh slides with the loaded weights.
      std::vector<SlideDataset> slides;
      for (const auto& dir : db_dirs) slides.push_back(load_slide_dir(dir));
      std::vector<SpotGraph> graphs;
      Index n_total = 0;
      std::vector<ProcessedSlide> processed;
      for (const auto& s : slides) {
        processed.push_back(apply_preprocess(trained.prep, s,
                                             trained.cfg.radius));
        n_total += processed.back().t_alpha.rows();
        graphs.push_back(processed.back().graph);
      }
      Mat t_alpha(n_total, processed.front().t_alpha.cols());
      Mat expr(n_total, processed.front().expression_norm.cols());
      std::vector<std::string> ids;
      Index at = 0;
      for (std::size_t s = 0; s < processed.size(); ++s) {
        const Index m = processed[s].t_alpha.rows();
        t_alpha.middleRows(at, m) = processed[s].t_alpha;
        expr.middleRows(at, m) = processed[s].expression_norm;
        for (const auto& id : processed[s].spot_ids)
          ids.push_back(processed[s].slide_id + ":" + id);
        at += m;
      }
      trained.db = build_database(trained.model, disjoint_union(graphs),
                                  t_alpha, expr, ids,
                                  trained.prep.selected_genes);
    }
    const SlideDataset query = load_slide_dir(query_dir);
    const PredictionResult res = run_prediction(trained, query);
    ManifestBuilder manifest;
    write_predictions(pred_out, res);
    manifest.artifact(pred_out);
    if (!truth_out.empty()) {
      write_matrix_csv(truth_out, res.truth_norm, res.spot_ids,
                       res.gene_names);
      manifest.artifact(truth_out);
    }
    manifest.write(pred_out + ".manifest.json");
    std::cout << "predicted " << res.predicted.rows() << " spots x "
              << res.predicted.cols() << " genes\n";
  });

  // ---- eval ----
  auto* eval_cmd =
      app.add_subcommand("eval", "Score predictions against ground truth");
  std::string eval_pred, eval_truth, report_out = "report.json";
  std::string markers_csv;
  std::vector<std::string> emit_maps;
  std::string coords_path;
  eval_cmd->add_option("--pred", eval_pred, "Predicted expression CSV")
      ->required();
  eval_cmd->add_option("--truth", eval_truth, "Ground-truth CSV")->required();
  eval_cmd->add_option("--markers", markers_csv,
                       "Comma-separated marker gene list");
  eval_cmd->add_option("--out-report", report_out, "Report JSON path");
  eval_cmd->add_option("--emit-maps", emit_maps,
                       "gene=NAME spatial map requests (needs --coords)");
  eval_cmd->add_option("--coords", coords_path, "Coordinates CSV for maps");
  eval_cmd->callback([&] {
    auto [pred, pred_ids, pred_genes] = read_matrix_csv(eval_pred);
    auto [truth, truth_ids, truth_genes] = read_matrix_csv(eval_truth);
    if (pred_genes != truth_genes)
      throw DataError("eval: prediction/truth gene columns disagree");
    if (pred_ids != truth_ids)
      throw DataError("eval: prediction/truth spot ids disagree");

    std::vector<std::string> markers = kDefaultMarkers;
    if (!markers_csv.empty()) {
      markers.clear();
      std::stringstream ss(markers_csv);
      std::string m;
      while (std::getline(ss, m, ',')) markers.push_back(m);
    }
    const Vec corr = gene_correlations(pred, truth);
    const EvalReport report = summarize(corr, truth, pred_genes, markers);

    ManifestBuilder manifest;
    manifest.input(eval_pred);
    manifest.input(eval_truth);
    {
      std::ofstream out(report_out);
      if (!out) throw DataError("cannot write " + report_out);
      out << report_to_json(report) << '\n';
    }
    manifest.artifact(report_out);

    for (const auto& req : emit_maps) {
      if (req.rfind("gene=", 0) != 0)
        throw ParamError("--emit-maps entries look like gene=NAME");
      const std::string gene = req.substr(5);
      const auto it = std::find(pred_genes.begin(), pred_genes.end(), gene);
      if (it == pred_genes.end())
        throw DataError("--emit-maps: gene not found: " + gene);
      if (coords_path.empty())
        throw ParamError("--emit-maps requires --coords");
      auto [coords, coord_ids, coord_cols] = read_matrix_csv(coords_path);
      const std::string path = report_out + "." + gene + ".svg";
      emit_spatial_map(coords,
                       pred.col(it - pred_genes.begin()), path);
      manifest.artifact(path);
    }
    manifest.write(report_out + ".manifest.json");
    for (const auto& w : report.markers_missing)
      std::cerr << "warning: marker gene not found: " << w << "\n";
    std::printf("MG %s HVG %.4f HEG %.4f Cor>0.3 %lld AG %.4f\n",
                report.mg_available
                    ? (std::to_string(report.mg_mean).c_str())
                    : "n/a",
                report.hvg50_mean, report.heg50_mean,
                static_cast<long long>(report.count_above_0_3), report.ag);
  });

  // ---- ablate ----
  auto* ablate = app.add_subcommand(
      "ablate", "Train and evaluate the baseline plus variants A-D");
  std::vector<std::string> ab_train_dirs;
  std::string ab_query_dir, ab_config, ab_out = "ablation";
  ablate->add_option("--train-dirs", ab_train_dirs, "Training slide dirs")
      ->required();
  ablate->add_option("--query-dir", ab_query_dir, "Query slide directory")
      ->required();
  ablate->add_option("--config", ab_config, "Config file");
  ablate->add_option("--out-dir", ab_out, "Output directory");
  ablate->callback([&] {
    TrainConfig base = ab_config.empty() ? TrainConfig{}
                                         : load_config_file(ab_config);
    std::vector<SlideDataset> slides;
    for (const auto& dir : ab_train_dirs) slides.push_back(load_slide_dir(dir));
    const SlideDataset query = load_slide_dir(ab_query_dir);

    fs::create_directories(ab_out);
    std::vector<std::pair<std::string, EvalReport>> reports;
    for (const char variant : {'\0', 'A', 'B', 'C', 'D'}) {
      TrainConfig cfg = base;
      cfg.ablation = variant;
      const std::string name =
          variant ? std::string("Model ") + variant : "Baseline";
      const TrainedPipeline trained = run_training(slides, cfg);
      const PredictionResult res = run_prediction(trained, query);
      const EvalReport report = evaluate_prediction(res, kDefaultMarkers);
      const std::string tag = variant ? std::string(1, variant) : "baseline";
      std::ofstream rep(ab_out + "/report_" + tag + ".json");
      rep << report_to_json(report) << '\n';
      reports.emplace_back(name, report);
      std::cout << name << " done (AG " << report.ag << ")\n";
    }
    const std::string table = ablation_table(reports);
    std::ofstream out(ab_out + "/table.txt");
    out << table;
    std::cout << table;
  });

  // ---- gradcheck ----
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference check of all analytic gradients");
  std::uint64_t gc_seed = 0;
  int gc_sweep = 1;
  bool gc_corrupt = false;
  gradcheck->add_option("--seed", gc_seed, "Base seed");
  gradcheck->add_option("--seed-sweep", gc_sweep, "Number of seeds to test");
  gradcheck->add_flag("--corrupt", gc_corrupt,
                      "Corrupt one gradient block (harness self-test)");
  gradcheck->callback([&] {
    bool all_pass = true;
    for (int s = 0; s < gc_sweep; ++s) {
      const GradCheckReport report =
          gradient_check(gc_seed + static_cast<std::uint64_t>(s), gc_corrupt);
      std::printf("seed %llu: worst rel err %.3e [%s]\n",
                  static_cast<unsigned long long>(gc_seed + s), report.worst,
                  report.pass ? "pass" : "FAIL");
      for (const auto& [name, err] : report.block_errors)
        if (err >= 1e-4) std::printf("  block %s: %.3e\n", name.c_str(), err);
      all_pass = all_pass && report.pass;
    }
    if (!all_pass) throw ParamError("gradient check failed");
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ParamError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
