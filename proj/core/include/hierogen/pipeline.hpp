#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hierogen/config.hpp"
#include "hierogen/corpus.hpp"
#include "hierogen/eval.hpp"
#include "hierogen/generator.hpp"
#include "hierogen/grpo.hpp"
#include "hierogen/reward.hpp"
#include "hierogen/rollouts.hpp"

namespace hierogen::pipeline {

using Path = std::filesystem::path;

/// One sub-task record of a corpus manifest (paths relative to the manifest).
struct CorpusRow {
  int item = 0;
  int sub = 0;
  std::string instruction;  // full item instruction; `sub` indexes into it
  std::string scene;        // stage scene json
  std::string bsb;
  std::string video;        // frame directory
};

struct Manifest {
  Path root;
  std::vector<CorpusRow> rows;

  Path resolve(const std::string& rel) const { return root / rel; }
};

/// Seeded corpus of (scene, instruction, oracle video) triples; one directory
/// per item, one row per sub-task. Items already on disk with a matching seed
/// marker are kept (resumable); the whole corpus is a pure function of
/// (seed, config).
Manifest gen_data(const Path& dir, const config::RunConfig& cfg, uint64_t master_seed);

Manifest load_manifest(const Path& manifest_path);
void save_manifest(const Path& manifest_path, const Manifest& manifest);

/// Runs the annotation pipeline over every row; recovered BSBs replace the
/// planned ones in the returned manifest, failures land in failures.jsonl.
struct AnnotateOutcome {
  Manifest manifest;
  int failures = 0;
};
AnnotateOutcome annotate_corpus(const Manifest& input, const Path& out_dir);

reward::WorldModel fit_world_model_from(const Manifest& manifest, const config::RunConfig& cfg,
                                        int max_videos = 0);

struct SftProgress {
  int step = 0;
  double loss = 0.0;
};
using SftLogFn = std::function<void(const SftProgress&)>;

generator::Checkpoint train_sft(const Manifest& manifest, const config::RunConfig& cfg,
                                uint64_t master_seed, int steps, const SftLogFn& log = {});

using GrpoLogFn = std::function<void(int iter, const grpo::TrainMetrics&)>;

generator::Checkpoint train_grpo(const generator::Checkpoint& sft, const Manifest& plans,
                                 const reward::WorldModel& wm, const config::RunConfig& cfg,
                                 uint64_t master_seed, int iterations, const GrpoLogFn& log = {});

/// Plan cases (scene + planned BSB) for GRPO sampling.
std::vector<grpo::PlanCase> load_plan_cases(const Manifest& manifest, int max_cases = 0);

/// Full staged rollout for one instruction; writes per-stage candidates,
/// reports, the stitched video and a run summary under out_dir. Wall-clock
/// data goes to the timing.json sidecar only.
rollouts::LongHorizonResult rollout_to_dir(const Path& out_dir, const world::Scene& scene,
                                           const std::string& instruction,
                                           const generator::Checkpoint& ckpt,
                                           const reward::WorldModel& wm,
                                           const config::RunConfig& cfg, uint64_t seed);

/// Scores every rollout run directory under runs_dir.
eval::EvalReport eval_runs(const Path& runs_dir, const reward::WorldModel& wm,
                           const config::RunConfig& cfg);

/// Idempotency marker: a command's output directory records the resolved
/// config hash; a re-run with the same hash is a no-op.
bool up_to_date(const Path& dir, const std::string& command, const std::string& config_hash);
void mark_done(const Path& dir, const std::string& command, const std::string& config_hash,
               const fs::json& lineage);

}  // namespace hierogen::pipeline
