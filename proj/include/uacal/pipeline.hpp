// SPDX-License-Identifier: Apache-2.0
//
// Command implementations shared by the CLI and the acceptance harness. Each
// command writes its artifacts into a RunDirectory and finishes with a
// manifest.json listing every artifact and its SHA-256.
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uacal/config.hpp"
#include "uacal/metrics.hpp"
#include "uacal/report.hpp"
#include "uacal/synthworld.hpp"
#include "uacal/trainer.hpp"

namespace uacal {

namespace fs = std::filesystem;

class RunDirectory {
 public:
  /// Uses out when given, else <root>/<UTC timestamp>-seed<seed> where root is
  /// $UACAL_RUN_DIR or ./runs. A numeric suffix avoids collisions.
  static RunDirectory create(const std::optional<fs::path>& out, std::uint64_t seed);
  explicit RunDirectory(fs::path root);

  const fs::path& root() const { return root_; }
  /// Absolute path of an artifact; parent directories are created.
  fs::path path(const std::string& relative) const;

  void write_text(const std::string& relative, const std::string& content);
  /// Registers a file written through path().
  void record(const std::string& relative);
  /// A nested run directory root/name; adopt() lists its artifacts here.
  RunDirectory child(const std::string& name) const;
  void adopt(const RunDirectory& child, const std::string& name);
  const std::vector<std::string>& artifacts() const { return artifacts_; }

  /// manifest.json: {"command", "artifacts": [{"path", "sha256", "bytes"}]}.
  void write_manifest(const std::string& command) const;

 private:
  fs::path root_;
  std::vector<std::string> artifacts_;
};

/// Parsed manifest entries, path -> sha256.
std::vector<std::pair<std::string, std::string>> read_manifest(const fs::path& run_dir);

struct World {
  std::vector<QAItem> items;
  Vocab vocab;
};

World load_world(const fs::path& dataset, const fs::path& vocab);
std::vector<TrainExample> training_examples(const World& world, Split split, bool full_sequence);

struct CommandOptions {
  bool deterministic = false;
};

/// world.jsonl, vocab.txt, config.json.
void cmd_genworld(const RunConfig& cfg, RunDirectory& run);

/// base.ckpt (full-parameter CLM on the pretrain split), pretrain_log.csv.
void cmd_pretrain(const RunConfig& cfg, const World& world, RunDirectory& run);

/// adapter_<loss>.ckpt, train_log_<loss>.csv, checkpoints/<loss>_epoch<k>.ckpt.
void cmd_finetune(const RunConfig& cfg, const World& world, const fs::path& base_checkpoint,
                  LossKind loss, RunDirectory& run);

/// generations.jsonl for every item of the requested splits.
void cmd_generate(const RunConfig& cfg, const World& world, const fs::path& checkpoint,
                  std::span<const Split> splits, const CommandOptions& options,
                  RunDirectory& run);

/// records.jsonl, report.json, report.csv, report.md.
CalibrationReport cmd_evaluate(const RunConfig& cfg, const fs::path& generations,
                               const std::vector<QAItem>& dataset, RunDirectory& run);

/// delta.json, delta.md (b - a).
ReportDelta cmd_compare(const fs::path& report_a, const fs::path& report_b,
                        const std::string& label_a, const std::string& label_b,
                        RunDirectory& run);

struct ReportInput {
  std::string label;
  fs::path records;                 // records.jsonl from evaluate
  std::optional<fs::path> train_log;
};
void cmd_report(std::span<const ReportInput> inputs, int ece_bins, RunDirectory& run);

/// Token-level entropy summary over the final epoch of a training log,
/// weighted by the per-step counts.
struct EntropySummary {
  double entropy_correct = 0.0;
  double entropy_incorrect = 0.0;
  long n_correct = 0;
  long n_incorrect = 0;
  double gap() const { return entropy_incorrect - entropy_correct; }
};
EntropySummary final_epoch_entropy(const TrainLog& log, int epochs);

struct MirrorArm {
  LossKind loss{};
  CalibrationReport report;
  EntropySummary entropy;
};

struct MirrorResult {
  std::vector<MirrorArm> arms;
  ReportDelta delta;  // second arm minus first
};

/// The default recipe: genworld, pretrain, finetune with each loss from the
/// same base, generate on eval+ood, evaluate, compare, report. Each stage
/// lives in its own subdirectory of run.
MirrorResult cmd_mirror(const RunConfig& cfg, std::span<const LossKind> losses,
                        const CommandOptions& options, RunDirectory& run);

}  // namespace uacal
