#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpref/dpo.hpp"
#include "mpref/pair_builder.hpp"
#include "mpref/types.hpp"

namespace mpref::pipeline {

enum class Mode { toy, export_data };
enum class Status { pending, generated, paired, trained, evaluated };

const char* to_string(Mode m);
const char* to_string(Status s);
Status status_from_string(const std::string& s);

struct PipelineConfig {
  pairs::LanguageConfig langs;
  std::string prompts_path;
  EndpointConfig endpoint;
  EndpointConfig judge;
  dpo::TrainingHyperparams hp;
  int iterations = 2;
  std::uint64_t seed = 0;
  std::string workdir;
  Mode mode = Mode::export_data;
  bool filter_chosen_language = true;
  int reward_sample_size = 100;

  void validate() const;

  /// Flat `key = value` file with dotted sections (langs.*, endpoint.*,
  /// judge.*, hp.*); '#' starts a comment. Unknown keys are an error.
  static PipelineConfig load(const std::string& path);
};

struct IterationRecord {
  int t = 0;
  Status status = Status::pending;
  std::map<std::string, std::string> digests;  // artifact file -> sha256
  std::string metrics_json;                    // serialized metrics, empty until evaluated
};

struct IterationState {
  std::vector<std::string> model_tags;  // M_0 .. M_T provenance
  std::map<int, IterationRecord> iterations;
  std::uint64_t seed = 0;

  Status status_of(int t) const;
  static IterationState load(const std::string& path);
  void save(const std::string& path) const;
};

/// One full cycle for iteration t: generate -> self-translate -> build pairs
/// -> filter -> train or export -> evaluate, artifacts under workdir/iter_t/.
/// A failed stage leaves state at the last completed stage; rerunning resumes
/// and a completed iteration is a no-op.
IterationState run_iteration(const PipelineConfig& cfg, IterationState state, int t);

// Individual stages behind the matching CLI subcommands. Each loads its
// inputs from workdir/iter_t and persists state.
IterationState stage_generate(const PipelineConfig& cfg, IterationState state, int t);
IterationState stage_translate(const PipelineConfig& cfg, IterationState state, int t);
IterationState stage_build_pairs(const PipelineConfig& cfg, IterationState state, int t);
IterationState stage_train_or_export(const PipelineConfig& cfg, IterationState state, int t);
IterationState stage_evaluate(const PipelineConfig& cfg, IterationState state, int t);

/// Aligned per-iteration metric tables; errors when nothing is evaluated yet.
std::string report_text(const IterationState& state, const PipelineConfig& cfg);
std::string report_json(const IterationState& state, const PipelineConfig& cfg);

/// `mpref <subcommand> ...`; returns 0 on success, 1 on usage errors, 2 on
/// pipeline errors.
int run_cli(const std::vector<std::string>& args);

}  // namespace mpref::pipeline
