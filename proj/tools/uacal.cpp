// SPDX-License-Identifier: Apache-2.0
//
// uacal: command-line front end. Errors print one line "E_CODE message" on
// stderr and exit with status 1.
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uacal/config.hpp"
#include "uacal/error.hpp"
#include "uacal/pipeline.hpp"

namespace {

using namespace uacal;

struct Options {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss;
  std::optional<double> temperature;
  std::optional<int> samples;
  bool deterministic = false;
  std::optional<std::string> out;
  std::map<std::string, std::string> overrides;

  std::string world_dir;
  std::string base_checkpoint;
  std::string checkpoint;
  std::string splits = "eval,ood";
  std::string generations;
  std::string report_a, report_b;
  std::string label_a = "a", label_b = "b";
  std::vector<std::string> evals;
  std::vector<std::string> logs;
  std::string losses = "clm,ua_clm";
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config_path ? load_config(*o.config_path) : RunConfig{};
  std::map<std::string, std::string> overrides = o.overrides;
  if (o.seed) overrides["seed"] = std::to_string(*o.seed);
  if (o.loss) overrides["loss"] = *o.loss;
  if (o.temperature) overrides["generate.temperature"] = CLI::detail::to_string(*o.temperature);
  if (o.samples) overrides["generate.num_samples"] = std::to_string(*o.samples);
  cfg = apply_overrides(cfg, overrides);
  cfg.validate();
  return cfg;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  for (char c : text + ",") {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else {
      item += c;
    }
  }
  return out;
}

std::pair<std::string, std::string> labeled(const std::string& spec, const char* flag) {
  const auto eq = spec.find('=');
  require(eq != std::string::npos && eq > 0 && eq + 1 < spec.size(), ErrorCode::invalid_argument,
          std::string(flag) + " expects LABEL=PATH, got '" + spec + "'");
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

World world_from(const std::string& dir) {
  require(!dir.empty(), ErrorCode::invalid_argument, "--world DIR is required");
  return load_world(fs::path(dir) / "world.jsonl", fs::path(dir) / "vocab.txt");
}

int run_command(const std::string& verb, const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const CommandOptions copts{o.deterministic};
  std::optional<fs::path> out;
  if (o.out) out = fs::path(*o.out);
  RunDirectory run = RunDirectory::create(out, cfg.seed);

  if (verb == "genworld") {
    cmd_genworld(cfg, run);
  } else if (verb == "pretrain") {
    cmd_pretrain(cfg, world_from(o.world_dir), run);
  } else if (verb == "finetune") {
    require(!o.base_checkpoint.empty(), ErrorCode::invalid_argument, "--base PATH is required");
    cmd_finetune(cfg, world_from(o.world_dir), o.base_checkpoint, cfg.loss, run);
  } else if (verb == "generate") {
    require(!o.checkpoint.empty(), ErrorCode::invalid_argument, "--checkpoint PATH is required");
    std::vector<Split> splits;
    for (const auto& s : split_list(o.splits)) splits.push_back(parse_split(s));
    cmd_generate(cfg, world_from(o.world_dir), o.checkpoint, splits, copts, run);
  } else if (verb == "evaluate") {
    require(!o.generations.empty(), ErrorCode::invalid_argument, "--generations PATH is required");
    cmd_evaluate(cfg, o.generations, world_from(o.world_dir).items, run);
  } else if (verb == "compare") {
    require(!o.report_a.empty() && !o.report_b.empty(), ErrorCode::invalid_argument,
            "--a and --b report paths are required");
    cmd_compare(o.report_a, o.report_b, o.label_a, o.label_b, run);
  } else if (verb == "report") {
    require(!o.evals.empty(), ErrorCode::invalid_argument, "at least one --eval LABEL=PATH");
    std::map<std::string, std::string> logs;
    for (const auto& spec : o.logs) logs.insert(labeled(spec, "--log"));
    std::vector<ReportInput> inputs;
    for (const auto& spec : o.evals) {
      const auto [label, path] = labeled(spec, "--eval");
      ReportInput in{label, path, std::nullopt};
      if (const auto it = logs.find(label); it != logs.end()) in.train_log = it->second;
      inputs.push_back(std::move(in));
    }
    cmd_report(inputs, cfg.metrics.ece_bins, run);
  } else if (verb == "mirror") {
    std::vector<LossKind> losses;
    for (const auto& s : split_list(o.losses)) losses.push_back(parse_loss_kind(s));
    const MirrorResult result = cmd_mirror(cfg, losses, copts, run);
    for (const auto& arm : result.arms) {
      const auto& row = arm.report.rows.front();
      std::printf("%-9s accuracy %.4f  ece %.4f  perplexity auroc %s  entropy gap %.4f\n",
                  std::string(loss_kind_name(arm.loss)).c_str(), arm.report.accuracy,
                  arm.report.ece, row.auroc ? std::to_string(*row.auroc).c_str() : "n/a",
                  arm.entropy.gap());
    }
  }
  if (verb != "mirror") run.write_manifest(verb);
  std::printf("%s\n", run.root().string().c_str());
  return 0;
}

std::string one_line(std::string text) {
  for (char& c : text) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware fine-tuning and calibration experiments on a toy language model"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;

  app.add_option("--config", o.config_path, "RunConfig JSON file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Seed for every random stream");
  app.add_option("--loss", o.loss, "Fine-tuning loss: clm, ua_clm, annealed or ult");
  app.add_option("--temperature", o.temperature, "Sampling temperature (default 0.3)");
  app.add_option("--samples", o.samples, "Samples per prompt (default 5)");
  app.add_flag("--deterministic", o.deterministic, "Single-threaded, bit-stable execution");
  app.add_option("--out", o.out, "Output directory (default $UACAL_RUN_DIR/<timestamp>-seed<N>)");
  auto* dotted = app.add_option_group("config fields", "Override any RunConfig field");
  for (const auto& [key, value] : config_leaves()) {
    if (app.get_option_no_throw("--" + key) != nullptr) continue;  // --seed, --loss
    dotted->add_option_function<std::string>(
        "--" + key, [&o, key = key](const std::string& v) { o.overrides[key] = v; },
        "default: " + value.dump());
  }

  auto* genworld = app.add_subcommand("genworld", "Generate the synthetic QA world");
  auto* pretrain = app.add_subcommand("pretrain", "Full-parameter CLM pretraining");
  auto* finetune = app.add_subcommand("finetune", "LoRA fine-tuning from a base checkpoint");
  auto* generate = app.add_subcommand("generate", "Greedy decoding plus sampled responses");
  auto* evaluate = app.add_subcommand("evaluate", "Uncertainty scores and calibration report");
  auto* compare = app.add_subcommand("compare", "Field-wise delta between two reports");
  auto* report = app.add_subcommand("report", "Markdown report and SVG plots");
  auto* mirror = app.add_subcommand("mirror", "Full CLM vs UA-CLM recipe from one seed");
  (void)genworld;

  for (auto* sub : {pretrain, finetune, generate, evaluate}) {
    sub->add_option("--world", o.world_dir, "Directory holding world.jsonl and vocab.txt")
        ->required()
        ->check(CLI::ExistingDirectory);
  }
  finetune->add_option("--base", o.base_checkpoint, "Base checkpoint")->check(CLI::ExistingFile);
  generate->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  generate->add_option("--split", o.splits, "Comma-separated splits (default eval,ood)");
  evaluate->add_option("--generations", o.generations, "generations.jsonl")
      ->check(CLI::ExistingFile);
  compare->add_option("--a", o.report_a, "Baseline report.json")->check(CLI::ExistingFile);
  compare->add_option("--b", o.report_b, "Candidate report.json")->check(CLI::ExistingFile);
  compare->add_option("--label-a", o.label_a, "Label for --a");
  compare->add_option("--label-b", o.label_b, "Label for --b");
  report->add_option("--eval", o.evals, "LABEL=records.jsonl, repeatable");
  report->add_option("--log", o.logs, "LABEL=train_log.csv, repeatable");
  mirror->add_option("--losses", o.losses, "Comma-separated loss kinds (default clm,ua_clm)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "E_USAGE " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    return run_command(app.get_subcommands().front()->get_name(), o);
  } catch (const Error& e) {
    std::cerr << error_code_name(e.code()) << ' ' << one_line(e.what()) << '\n';
  } catch (const std::exception& e) {
    std::cerr << "E_INTERNAL " << one_line(e.what()) << '\n';
  }
  return 1;
}
