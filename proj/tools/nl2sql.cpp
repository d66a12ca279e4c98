#include <cstdio>
#include <iostream>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "nl2sql/checkpoint.hpp"
#include "nl2sql/gradcheck.hpp"
#include "nl2sql/metrics.hpp"
#include "nl2sql/synthetic.hpp"
#include "nl2sql/train.hpp"

namespace {

using namespace nl2sql;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int cmd_train(const std::string& config_path, bool quiet) {
  const TrainConfig config = TrainConfig::from_json(read_file(config_path));
  const TrainSummary summary = train(config, [&](const EpochLog& log) {
    if (quiet) return;
    std::printf("epoch %zu phase %d loss %.6f |g_word| %.3e |g_char| %.3e", log.epoch, log.phase, log.loss,
                log.max_word_grad_norm, log.max_char_grad_norm);
    if (log.dev) std::printf(" dev %s", log.dev->to_text().c_str());
    std::printf("\n");
    std::fflush(stdout);
  });
  if (summary.best_dev) std::printf("best dev %s\n", summary.best_dev->to_text().c_str());
  if (!config.checkpoint_dir.empty()) std::printf("checkpoints in %s\n", config.checkpoint_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& predictions_path, const std::string& data,
             const std::string& tables_path, bool as_json) {
  const TableMap tables = load_tables_file(tables_path);
  const std::vector<Example> examples = load_examples_file(data, tables);
  Metrics metrics;
  if (!predictions_path.empty()) {
    metrics = evaluate_predictions(load_predictions_file(predictions_path), examples, tables);
  } else {
    metrics = evaluate(load_checkpoint(model_path), examples, tables);
  }
  std::printf("%s\n", as_json ? metrics.to_json().c_str() : metrics.to_text().c_str());
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& tables_path, const std::string& question,
                const std::string& table_id, bool as_json) {
  const TableMap tables = load_tables_file(tables_path);
  const auto it = tables.find(table_id);
  if (it == tables.end()) {
    std::fprintf(stderr, "error: unknown table id '%s'\n", table_id.c_str());
    return 1;
  }
  const Model model = load_checkpoint(model_path);
  const PreparedTable table = model.prepare_table(it->second);
  const Prediction pred = model.predict(model.prepare(question, table));
  if (as_json) {
    std::printf("%s\n", sketch_to_json(pred.sketch).c_str());
  } else {
    std::printf("%s\n", canonical_string(pred.sketch, it->second).c_str());
  }
  if (pred.value_truncated) std::fprintf(stderr, "warning: a condition value hit the decode step cap\n");
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t seeds, bool verbose) {
  GradCheckOptions options;
  options.seed = seed;
  options.seeds = seeds;
  const GradCheckReport report = run_gradient_suite(options);
  if (verbose) {

    for (const auto& c : report.cases) {
      std::printf("%-22s seed %-4llu coords %-4zu max rel err %.3e  %s\n", c.name.c_str(),
                  static_cast<unsigned long long>(c.seed), c.coordinates, c.max_error, c.detail.c_str());
    }
  }
  std::printf("%s: %s\n", report.passed() ? "PASS" : "FAIL", report.summary().c_str());
  return report.passed() ? 0 : 1;
}

int cmd_synth(const std::string& dir, std::size_t count, std::size_t dev_count, std::uint64_t seed) {
  write_synthetic_dataset(dir, count, dev_count, seed);
  std::printf("wrote %zu train and %zu dev examples to %s\n", count, dev_count, dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sketch-based natural-language-to-SQL parser with bi-directional attention"};
  app.require_subcommand(1);

  std::string config_path;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON config");
  train_cmd->add_option("--config", config_path, "Training config (JSON)")->required();
  train_cmd->add_flag("--quiet", quiet, "Suppress per-epoch logs");

  std::string model_path, predictions_path, data_path, tables_path;
  bool as_json = false;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint or a predictions file");
  auto* model_opt = eval_cmd->add_option("--model", model_path, "Checkpoint directory");
  auto* pred_opt = eval_cmd->add_option("--predictions", predictions_path, "JSONL sketches, one per example");
  model_opt->excludes(pred_opt);
  eval_cmd->add_option("--data", data_path, "Examples (JSONL)")->required();
  eval_cmd->add_option("--tables", tables_path, "Tables (JSONL)")->required();
  eval_cmd->add_flag("--json", as_json, "Print metrics as one JSON object");

  std::string question, table_id;
  auto* predict_cmd = app.add_subcommand("predict", "Parse one question against a table");
  predict_cmd->add_option("--model", model_path, "Checkpoint directory")->required();
  predict_cmd->add_option("--tables", tables_path, "Tables (JSONL)")->required();
  predict_cmd->add_option("--question", question, "Question text")->required();
  predict_cmd->add_option("--table-id", table_id, "Table id")->required();
  predict_cmd->add_flag("--json", as_json, "Print the sketch as WikiSQL JSON");

  std::uint64_t seed = 0;
  std::size_t seeds = 10;
  bool verbose = false;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Run the gradient verification suite");
  grad_cmd->add_option("--seed", seed, "First seed");
  grad_cmd->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  grad_cmd->add_flag("--verbose", verbose, "Print every check");

  std::string out_dir;
  std::size_t count = 32, dev_count = 16;
  std::uint64_t synth_seed = 1;
  auto* synth_cmd = app.add_subcommand("synth", "Write the synthetic corpus and a matching config");
  synth_cmd->add_option("--out", out_dir, "Output directory")->required();
  synth_cmd->add_option("--count", count, "Training examples");
  synth_cmd->add_option("--dev-count", dev_count, "Dev examples");
  synth_cmd->add_option("--seed", synth_seed, "Corpus seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(config_path, quiet);
    if (*eval_cmd) {
      if (model_path.empty() && predictions_path.empty()) {
        std::cerr << "error: eval needs --model or --predictions\n\n" << eval_cmd->help();
        return 2;
      }
      return cmd_eval(model_path, predictions_path, data_path, tables_path, as_json);
    }
    if (*predict_cmd) return cmd_predict(model_path, tables_path, question, table_id, as_json);
    if (*grad_cmd) return cmd_gradcheck(seed, seeds, verbose);
    if (*synth_cmd) return cmd_synth(out_dir, count, dev_count, synth_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
