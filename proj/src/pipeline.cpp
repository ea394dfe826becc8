// SPDX-License-Identifier: Apache-2.0
#include "uacal/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "uacal/checkpoint.hpp"
#include "uacal/error.hpp"
#include "uacal/generate.hpp"
#include "uacal/hashing.hpp"
#include "uacal/uncertainty.hpp"

namespace uacal {
namespace {

using Json = nlohmann::ordered_json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<Json> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      fail(ErrorCode::parse_error,
           path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

ModelParams load_params(const fs::path& checkpoint, const Vocab& vocab) {
  ModelParams params = load_checkpoint(checkpoint).params;
  require(params.config.vocab_size == vocab.size(), ErrorCode::state_error,
          "checkpoint " + checkpoint.string() + " has vocab_size " +
              std::to_string(params.config.vocab_size) + " but the vocabulary has " +
              std::to_string(vocab.size()) + " tokens");
  return params;
}

void write_config(const RunConfig& cfg, RunDirectory& run) {
  run.write_text("config.json", config_to_json(cfg).dump(2) + "\n");
}

}  // namespace

// ---------------------------------------------------------------------------
// RunDirectory

RunDirectory::RunDirectory(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  require(!ec, ErrorCode::io_error, "cannot create run directory " + root_.string());
}

RunDirectory RunDirectory::create(const std::optional<fs::path>& out, std::uint64_t seed) {
  if (out) return RunDirectory(*out);
  const char* env = std::getenv("UACAL_RUN_DIR");
  const fs::path base = env && *env ? fs::path(env) : fs::path("runs");
  const std::string stem = utc_timestamp() + "-seed" + std::to_string(seed);
  fs::path candidate = base / stem;
  for (int k = 1; fs::exists(candidate); ++k) candidate = base / (stem + "-" + std::to_string(k));
  return RunDirectory(candidate);
}

fs::path RunDirectory::path(const std::string& relative) const {
  const fs::path p = root_ / relative;
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  require(!ec, ErrorCode::io_error, "cannot create " + p.parent_path().string());
  return p;
}

void RunDirectory::write_text(const std::string& relative, const std::string& content) {
  const fs::path p = path(relative);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
  require(static_cast<bool>(out), ErrorCode::io_error, "cannot write " + p.string());
  record(relative);
}

void RunDirectory::record(const std::string& relative) {
  if (std::find(artifacts_.begin(), artifacts_.end(), relative) == artifacts_.end()) {
    artifacts_.push_back(relative);
  }
}

RunDirectory RunDirectory::child(const std::string& name) const { return RunDirectory(root_ / name); }

void RunDirectory::adopt(const RunDirectory& child, const std::string& name) {
  for (const auto& a : child.artifacts()) record(name + "/" + a);
}

void RunDirectory::write_manifest(const std::string& command) const {
  Json j;
  j["command"] = command;
  Json list = Json::array();
  for (const auto& a : artifacts_) {
    const fs::path p = root_ / a;
    list.push_back(Json{{"path", a},
                        {"sha256", sha256_file(p)},
                        {"bytes", static_cast<std::uint64_t>(fs::file_size(p))}});
  }
  j["artifacts"] = std::move(list);
  std::ofstream out(root_ / "manifest.json", std::ios::binary | std::ios::trunc);
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::io_error, "cannot write manifest");
}

std::vector<std::pair<std::string, std::string>> read_manifest(const fs::path& run_dir) {
  std::vector<std::pair<std::string, std::string>> out;
  try {
    const Json j = Json::parse(read_file(run_dir / "manifest.json"));
    for (const auto& a : j.at("artifacts")) {
      out.emplace_back(a.at("path").get<std::string>(), a.at("sha256").get<std::string>());
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::parse_error, "manifest: " + std::string(e.what()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data

World load_world(const fs::path& dataset, const fs::path& vocab) {
  World w{load_jsonl(dataset), Vocab::from_text(read_file(vocab))};
  for (const auto& item : w.items) {
    for (int id : w.vocab.encode(item.prompt)) {
      require(id != kUnkId, ErrorCode::state_error,
              "item '" + item.id + "' has words missing from " + vocab.string());
    }
  }
  return w;
}

std::vector<TrainExample> training_examples(const World& world, Split split, bool full_sequence) {
  std::vector<TrainExample> out;
  for (const auto& item : world.items) {
    if (item.split != split) continue;
    const EncodedItem enc = encode_item(world.vocab, item);
    out.push_back({enc.ids, full_sequence ? 1 : enc.answer_start});
  }
  require(!out.empty(), ErrorCode::invalid_argument,
          "dataset has no " + std::string(split_name(split)) + " items");
  return out;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_genworld(const RunConfig& cfg, RunDirectory& run) {
  const auto items = generate_world(cfg.world_config());
  run.write_text("world.jsonl", items_to_jsonl(items));
  run.write_text("vocab.txt", Vocab::build(items).to_text());
  write_config(cfg, run);
}

void cmd_pretrain(const RunConfig& cfg, const World& world, RunDirectory& run) {
  const auto examples = training_examples(world, Split::pretrain, cfg.pretrain.full_sequence);
  ModelParams params = init_base_model(cfg.model_config(world.vocab.size()));
  const TrainResult result = train(params, examples, cfg.pretrain_config());
  Checkpoint ckpt{params, "clm", static_cast<std::uint64_t>(result.steps)};
  save_checkpoint(ckpt, run.path("base.ckpt"));
  run.record("base.ckpt");
  run.write_text("pretrain_log.csv", result.log.to_csv());
  write_config(cfg, run);
}

void cmd_finetune(const RunConfig& cfg, const World& world, const fs::path& base_checkpoint,
                  LossKind loss, RunDirectory& run) {
  ModelParams params = load_params(base_checkpoint, world.vocab);
  require(!params.has_adapters(), ErrorCode::state_error,
          "finetune: " + base_checkpoint.string() + " already carries adapters");
  attach_adapters(params, cfg.lora, cfg.seed);
  const auto examples = training_examples(world, Split::finetune, cfg.finetune.full_sequence);
  const std::string name(loss_kind_name(loss));

  TrainCallbacks callbacks;
  callbacks.on_epoch_end = [&](int epoch, const ModelParams& p, std::int64_t step) {
    const std::string rel = "checkpoints/" + name + "_epoch" + std::to_string(epoch + 1) + ".ckpt";
    save_checkpoint({p, name, static_cast<std::uint64_t>(step)}, run.path(rel));
    run.record(rel);
  };
  const TrainResult result = train(params, examples, cfg.finetune_config(loss), callbacks);
  if (result.skipped > 0) {
    std::fprintf(stderr, "finetune: skipped %d sequences longer than the context\n",
                 result.skipped);
  }
  save_checkpoint({params, name, static_cast<std::uint64_t>(result.steps)},
                  run.path("adapter_" + name + ".ckpt"));
  run.record("adapter_" + name + ".ckpt");
  run.write_text("train_log_" + name + ".csv", result.log.to_csv());
  write_config(cfg, run);
}

void cmd_generate(const RunConfig& cfg, const World& world, const fs::path& checkpoint,
                  std::span<const Split> splits, const CommandOptions& options,
                  RunDirectory& run) {
  const ModelParams params = load_params(checkpoint, world.vocab);
  const GenConfig gen = cfg.gen_config();
  std::vector<const QAItem*> todo;
  for (const auto& item : world.items) {
    if (std::find(splits.begin(), splits.end(), item.split) != splits.end()) todo.push_back(&item);
  }
  require(!todo.empty(), ErrorCode::invalid_argument, "generate: no items in the requested splits");

  // Each record draws from its own seeded streams, so the output is the same
  // for any thread count.
  std::vector<GenerationRecord> records(todo.size());
  const unsigned n_threads =
      options.deterministic ? 1u : std::max(1u, std::thread::hardware_concurrency());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < todo.size(); i += stride) {
      records[i] = generate_record(params, world.vocab, *todo[i], gen);
    }
  };
  if (n_threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(work, t, n_threads);
  }

  std::string out;
  for (const auto& rec : records) {
    out += generation_to_json(rec, gen.record_untempered).dump() + "\n";
  }
  run.write_text("generations.jsonl", out);
  write_config(cfg, run);
}

CalibrationReport cmd_evaluate(const RunConfig& cfg, const fs::path& generations,
                               const std::vector<QAItem>& dataset, RunDirectory& run) {
  std::unordered_map<std::string, const QAItem*> by_id;
  for (const auto& item : dataset) by_id.emplace(item.id, &item);
  const UncertaintyOptions options = cfg.metrics.uncertainty_options();

  std::vector<EvalRecord> records;
  std::string out;
  for (const auto& j : read_jsonl(generations)) {
    const GenerationRecord gen = generation_from_json(j);
    const auto it = by_id.find(gen.id);
    require(it != by_id.end(), ErrorCode::state_error,
            "evaluate: generation '" + gen.id + "' has no dataset item");
    records.push_back(make_eval_record(gen.id, gen.response, it->second->answers,
                                       it->second->ood, compute_uncertainty(gen, options)));
    out += eval_record_to_json(records.back()).dump() + "\n";
  }
  require(!records.empty(), ErrorCode::invalid_argument, "evaluate: no generations");
  const CalibrationReport report = evaluate_records(records, cfg.metrics.ece_bins);
  run.write_text("records.jsonl", out);
  run.write_text("report.json", report_to_json(report).dump(2) + "\n");
  run.write_text("report.csv", report_to_csv(report));
  run.write_text("report.md", report_to_markdown(report, "Evaluation"));
  write_config(cfg, run);
  return report;
}

ReportDelta cmd_compare(const fs::path& report_a, const fs::path& report_b,
                        const std::string& label_a, const std::string& label_b,
                        RunDirectory& run) {
  auto load = [](const fs::path& p) {
    try {
      return report_from_json(Json::parse(read_file(p)));
    } catch (const Json::parse_error& e) {
      fail(ErrorCode::parse_error, p.string() + ": " + e.what());
    }
  };
  ReportDelta delta = compare_reports(load(report_a), load(report_b));
  delta.title = label_b + " - " + label_a;
  Json j;
  j["a"] = label_a;
  j["b"] = label_b;
  j["deltas"] = delta.deltas;
  run.write_text("delta.json", j.dump(2) + "\n");
  run.write_text("delta.md", delta_to_markdown(delta, label_a, label_b));
  return delta;
}

void cmd_report(std::span<const ReportInput> inputs, int ece_bins, RunDirectory& run) {
  std::vector<ReportArm> arms;
  for (const auto& in : inputs) {
    ReportArm arm{in.label, {}, std::nullopt};
    for (const auto& j : read_jsonl(in.records)) arm.records.push_back(eval_record_from_json(j));
    if (in.train_log) arm.log = TrainLog::from_csv(read_file(*in.train_log));
    arms.push_back(std::move(arm));
  }
  for (const auto& file : build_report(arms, ece_bins)) run.write_text(file.name, file.content);
}

EntropySummary final_epoch_entropy(const TrainLog& log, int epochs) {
  EntropySummary s;
  if (log.steps.empty() || epochs <= 0) return s;
  const std::size_t per_epoch = (log.steps.size() + epochs - 1) / epochs;
  double sum_c = 0.0;
  double sum_i = 0.0;
  for (std::size_t k = log.steps.size() - std::min(per_epoch, log.steps.size());
       k < log.steps.size(); ++k) {
    const auto& r = log.steps[k];
    sum_c += r.entropy_correct * r.n_correct;
    sum_i += r.entropy_incorrect * r.n_incorrect;
    s.n_correct += r.n_correct;
    s.n_incorrect += r.n_incorrect;
  }
  s.entropy_correct = s.n_correct > 0 ? sum_c / s.n_correct : 0.0;
  s.entropy_incorrect = s.n_incorrect > 0 ? sum_i / s.n_incorrect : 0.0;
  return s;
}

MirrorResult cmd_mirror(const RunConfig& cfg, std::span<const LossKind> losses,
                        const CommandOptions& options, RunDirectory& run) {
  require(!losses.empty(), ErrorCode::invalid_argument, "mirror: no loss kinds given");
  write_config(cfg, run);

  RunDirectory world_dir = run.child("world");
  cmd_genworld(cfg, world_dir);
  world_dir.write_manifest("genworld");
  run.adopt(world_dir, "world");
  const World world =
      load_world(world_dir.root() / "world.jsonl", world_dir.root() / "vocab.txt");

  RunDirectory pre_dir = run.child("pretrain");
  cmd_pretrain(cfg, world, pre_dir);
  pre_dir.write_manifest("pretrain");
  run.adopt(pre_dir, "pretrain");

  MirrorResult result;
  std::vector<ReportInput> report_inputs;
  const Split eval_splits[] = {Split::eval, Split::ood};
  for (LossKind loss : losses) {
    const std::string name(loss_kind_name(loss));
    RunDirectory arm_dir = run.child(name);
    cmd_finetune(cfg, world, pre_dir.root() / "base.ckpt", loss, arm_dir);
    cmd_generate(cfg, world, arm_dir.root() / ("adapter_" + name + ".ckpt"), eval_splits, options,
                 arm_dir);
    MirrorArm arm;
    arm.loss = loss;
    arm.report = cmd_evaluate(cfg, arm_dir.root() / "generations.jsonl", world.items, arm_dir);
    const TrainLog log =
        TrainLog::from_csv(read_file(arm_dir.root() / ("train_log_" + name + ".csv")));
    arm.entropy = final_epoch_entropy(log, cfg.finetune.epochs);
    arm_dir.write_manifest("finetune+generate+evaluate");
    run.adopt(arm_dir, name);
    result.arms.push_back(std::move(arm));
    report_inputs.push_back({name, arm_dir.root() / "records.jsonl",
                             arm_dir.root() / ("train_log_" + name + ".csv")});
  }

  if (result.arms.size() >= 2) {
    const std::string a(loss_kind_name(losses[0]));
    const std::string b(loss_kind_name(losses[1]));
    RunDirectory cmp_dir = run.child("compare");
    result.delta = cmd_compare(run.root() / a / "report.json", run.root() / b / "report.json", a,
                               b, cmp_dir);
    cmp_dir.write_manifest("compare");
    run.adopt(cmp_dir, "compare");
  }
  RunDirectory report_dir = run.child("report");
  cmd_report(report_inputs, cfg.metrics.ece_bins, report_dir);
  report_dir.write_manifest("report");
  run.adopt(report_dir, "report");
  run.write_manifest("mirror");
  return result;
}

}  // namespace uacal
