// fiseclip: batch zero-shot anomaly scoring from exported feature bundles.
//
//   fiseclip score   --bundle DIR [--config FILE] --out DIR
//   fiseclip eval    --scores DIR --bundle DIR --report FILE
//   fiseclip synth   --seed N --images B --grid G --dim D --anomaly-frac F --offset DELTA --out DIR
//   fiseclip heatmap --scores DIR --out DIR
//
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 undefined metric.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "fiseclip/bundle.hpp"
#include "fiseclip/config.hpp"
#include "fiseclip/error.hpp"
#include "fiseclip/pipeline.hpp"
#include "fiseclip/synth.hpp"

namespace fs = std::filesystem;
using namespace fiseclip;

int main(int argc, char** argv) {
  CLI::App app{"Batch zero-shot anomaly scoring over feature bundles"};
  app.require_subcommand(1);

  std::string bundle_dir;
  std::string config_path;
  std::string out_dir;
  auto* score = app.add_subcommand("score", "Score every image of a bundle");
  score->add_option("--bundle", bundle_dir, "Feature bundle directory")->required();
  score->add_option("--config", config_path, "Run configuration (INI)");
  score->add_option("--out", out_dir, "Output directory for maps and scores.json")->required();

  std::string scores_path;
  std::string report_path;
  auto* eval = app.add_subcommand("eval", "Evaluate scores against bundle ground truth");
  eval->add_option("--scores", scores_path, "Score artifact directory")->required();
  eval->add_option("--bundle", bundle_dir, "Feature bundle directory")->required();
  eval->add_option("--report", report_path, "Report file to write")->required();

  SynthParams synth_params;
  auto* synth = app.add_subcommand("synth", "Write a synthetic bundle with planted anomalies");
  synth->add_option("--seed", synth_params.seed, "Generator seed")->required();
  synth->add_option("--images", synth_params.images, "Number of images B")->required();
  synth->add_option("--grid", synth_params.grid, "Patch grid side")->required();
  synth->add_option("--dim", synth_params.dim, "Feature dimension")->required();
  synth->add_option("--anomaly-frac", synth_params.anomaly_frac, "Fraction of anomalous images")->required();
  synth->add_option("--offset", synth_params.offset, "Anomaly displacement in units of sigma")->required();
  synth->add_option("--out", out_dir, "Output bundle directory")->required();

  auto* heatmap = app.add_subcommand("heatmap", "Render score maps as PGM images");
  heatmap->add_option("--scores", scores_path, "Score artifact directory")->required();
  heatmap->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kValidation);
  }

  try {
    if (score->parsed()) {
      const Bundle bundle = read_bundle(bundle_dir);
      const RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
      const ScoreRun run = score_bundle(bundle, config);
      for (const auto& w : run.warnings) std::cerr << "warning: " << w << '\n';
      write_scores(run, out_dir);
      std::cout << "scored " << run.images.size() << " images -> " << (fs::path(out_dir) / kScoresFile).string()
                << '\n';
    } else if (eval->parsed()) {
      const ScoreRun run = read_scores(scores_path);
      const Bundle bundle = read_bundle(bundle_dir);
      const EvalReport report = evaluate(run, bundle);
      const std::string text = report.to_text();
      if (const auto parent = fs::path(report_path).parent_path(); !parent.empty()) fs::create_directories(parent);
      std::ofstream out(report_path, std::ios::trunc);
      if (!out) throw IoError("cannot write report '" + report_path + "'");
      out << text;
      if (!out) throw IoError("failed writing report '" + report_path + "'");
      std::cout << text;
    } else if (synth->parsed()) {
      write_synthetic_bundle(synth_params, out_dir);
      std::cout << "wrote synthetic bundle (" << synth_params.images << " images) -> " << out_dir << '\n';
    } else if (heatmap->parsed()) {
      const ScoreRun run = read_scores(scores_path);
      write_heatmaps(run, out_dir);
      std::cout << "wrote " << run.images.size() << " heatmaps -> " << out_dir << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kIo);
  }
  return 0;
}
