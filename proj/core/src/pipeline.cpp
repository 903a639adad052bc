#include "hierogen/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "hierogen/annotator.hpp"
#include "hierogen/planner.hpp"
#include "hierogen/video_io.hpp"

namespace hierogen::pipeline {

namespace {

std::string item_dir_name(int item) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "item_%04d", item);
  return buf;
}

std::string sub_dir_name(int sub) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sub_%02d", sub);
  return buf;
}

fs::json row_to_json(const CorpusRow& r) {
  return {{"item", r.item},   {"sub", r.sub},     {"instruction", r.instruction},
          {"scene", r.scene}, {"bsb", r.bsb},     {"video", r.video}};
}

CorpusRow row_from_json(const fs::json& j) {
  CorpusRow r;
  try {
    r.item = j.at("item").get<int>();
    r.sub = j.at("sub").get<int>();
    r.instruction = j.at("instruction").get<std::string>();
    r.scene = j.at("scene").get<std::string>();
    r.bsb = j.at("bsb").get<std::string>();
    r.video = j.at("video").get<std::string>();
  } catch (const fs::json::exception& e) {
    fail(ErrorKind::Parse, std::string("manifest row: ") + e.what());
  }
  return r;
}

std::string gen_data_hash(const config::RunConfig& cfg, uint64_t master_seed) {
  fs::json j;
  j["seed"] = master_seed;
  j["gen_data"] = cfg.to_json()["gen_data"];
  j["phase_counts"] = cfg.to_json()["phase_counts"];
  return fs::fnv1a_hex(j.dump());
}

}  // namespace

Manifest gen_data(const Path& dir, const config::RunConfig& cfg, uint64_t master_seed) {
  fs::ensure_dir(dir);
  const std::string corpus_hash = gen_data_hash(cfg, master_seed);
  std::vector<std::vector<CorpusRow>> per_item(static_cast<size_t>(cfg.gen_data.count));

  parallel_for(cfg.gen_data.count, [&](int64_t i) {
    const Path idir = dir / item_dir_name(static_cast<int>(i));
    const Path marker = idir / "item_done.json";
    const uint64_t item_seed = derive_seed(master_seed, "gen-data", static_cast<uint64_t>(i));
    if (std::filesystem::exists(marker)) {
      const fs::json done = fs::read_json(marker);
      if (done.value("hash", "") == corpus_hash) {
        for (const auto& jr : done.at("rows"))
          per_item[static_cast<size_t>(i)].push_back(row_from_json(jr));
        return;  // resumable: this item is already on disk
      }
    }
    const corpus::Item item = corpus::generate_item(item_seed, cfg.gen_data, cfg.phase_counts);
    fs::ensure_dir(idir);
    fs::write_json_atomic(idir / "scene.json", world::scene_to_json(item.scene));
    fs::write_text_atomic(idir / "instruction.txt", item.instruction + "\n");
    fs::json rows = fs::json::array();
    for (size_t k = 0; k < item.subtasks.size(); ++k) {
      const Path sdir = idir / sub_dir_name(static_cast<int>(k));
      fs::ensure_dir(sdir);
      fs::write_json_atomic(sdir / "scene.json",
                            world::scene_to_json(item.stage_scenes[k]));
      bsb::save(sdir / "bsb.json", item.plans[k]);
      world::save_video(sdir / "video", item.videos[k]);
      CorpusRow row;
      row.item = static_cast<int>(i);
      row.sub = static_cast<int>(k);
      row.instruction = planner::to_text({item.subtasks[k]});
      row.scene = item_dir_name(static_cast<int>(i)) + "/" + sub_dir_name(static_cast<int>(k)) +
                  "/scene.json";
      row.bsb = item_dir_name(static_cast<int>(i)) + "/" + sub_dir_name(static_cast<int>(k)) +
                "/bsb.json";
      row.video = item_dir_name(static_cast<int>(i)) + "/" + sub_dir_name(static_cast<int>(k)) +
                  "/video";
      rows.push_back(row_to_json(row));
      per_item[static_cast<size_t>(i)].push_back(std::move(row));
    }
    fs::write_json_atomic(marker, {{"hash", corpus_hash},
                                   {"seed", item_seed},
                                   {"lineage", {{"master_seed", master_seed},
                                                {"path", "gen-data/" + std::to_string(i)}}},
                                   {"rows", rows}});
  });

  Manifest m;
  m.root = dir;
  for (auto& rows : per_item)
    for (auto& r : rows) m.rows.push_back(std::move(r));
  save_manifest(dir / "manifest.jsonl", m);
  return m;
}

Manifest load_manifest(const Path& manifest_path) {
  std::ifstream in(manifest_path);
  require(in.good(), ErrorKind::Io, "cannot open: " + manifest_path.string());
  Manifest m;
  m.root = manifest_path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      m.rows.push_back(row_from_json(fs::json::parse(line)));
    } catch (const fs::json::parse_error& e) {
      fail(ErrorKind::Parse, manifest_path.string() + ":" + std::to_string(lineno) + ": " +
                                 e.what() + " (byte offset " + std::to_string(e.byte) + ")");
    }
  }
  return m;
}

void save_manifest(const Path& manifest_path, const Manifest& manifest) {
  std::ostringstream ss;
  for (const auto& r : manifest.rows) ss << row_to_json(r).dump() << "\n";
  fs::write_text_atomic(manifest_path, ss.str());
}

AnnotateOutcome annotate_corpus(const Manifest& input, const Path& out_dir) {
  fs::ensure_dir(out_dir);
  AnnotateOutcome out;
  out.manifest.root = out_dir;
  std::vector<std::optional<CorpusRow>> results(input.rows.size());
  std::vector<std::string> errors(input.rows.size());

  parallel_for(static_cast<int64_t>(input.rows.size()), [&](int64_t i) {
    const CorpusRow& row = input.rows[static_cast<size_t>(i)];
    try {
      const world::Scene scene = world::scene_from_json(fs::read_json(input.resolve(row.scene)));
      const world::Video video = world::load_video(input.resolve(row.video));
      const bsb::BSB rec = annotator::annotate(video, row.instruction, scene);
      char name[48];
      std::snprintf(name, sizeof(name), "bsb_%04d_%02d.json", row.item, row.sub);
      bsb::save(out_dir / name, rec);
      CorpusRow ann = row;
      // scene/video stay in the source corpus; the annotated bsb replaces the plan
      ann.scene = std::filesystem::relative(input.resolve(row.scene), out_dir).string();
      ann.video = std::filesystem::relative(input.resolve(row.video), out_dir).string();
      ann.bsb = name;
      results[static_cast<size_t>(i)] = std::move(ann);
    } catch (const Error& e) {
      errors[static_cast<size_t>(i)] = e.what();
    }
  });

  std::ostringstream failures;
  for (size_t i = 0; i < results.size(); ++i) {
    if (results[i]) {
      out.manifest.rows.push_back(*results[i]);
    } else {
      ++out.failures;
      failures << fs::json({{"item", input.rows[i].item},
                            {"sub", input.rows[i].sub},
                            {"error", errors[i]}})
                      .dump()
               << "\n";
    }
  }
  fs::write_text_atomic(out_dir / "failures.jsonl", failures.str());
  save_manifest(out_dir / "manifest.jsonl", out.manifest);
  return out;
}

reward::WorldModel fit_world_model_from(const Manifest& manifest, const config::RunConfig& cfg,
                                        int max_videos) {
  size_t n = manifest.rows.size();
  if (max_videos > 0) n = std::min(n, static_cast<size_t>(max_videos));
  std::vector<world::Video> videos(n);
  parallel_for(static_cast<int64_t>(n), [&](int64_t i) {
    videos[static_cast<size_t>(i)] =
        world::load_video(manifest.resolve(manifest.rows[static_cast<size_t>(i)].video));
  });
  std::vector<const world::Video*> ptrs;
  ptrs.reserve(videos.size());
  for (const auto& v : videos) ptrs.push_back(&v);
  return reward::fit_world_model(ptrs, cfg.ridge_lambda, cfg.pfc);
}

generator::Checkpoint train_sft(const Manifest& manifest, const config::RunConfig& cfg,
                                uint64_t master_seed, int steps, const SftLogFn& log) {
  require(!manifest.rows.empty(), ErrorKind::InsufficientData, "empty training manifest");
  const generator::LatentCodec codec;

  // Preload: raw latents first (stats must be fit before standardizing).
  const size_t n = manifest.rows.size();
  std::vector<Tensor> latents(n);
  std::vector<Tensor> guidance(n);
  std::vector<int> frames(n);
  parallel_for(static_cast<int64_t>(n), [&](int64_t i) {
    const CorpusRow& row = manifest.rows[static_cast<size_t>(i)];
    const world::Video video = world::load_video(manifest.resolve(row.video));
    const world::Scene scene = world::scene_from_json(fs::read_json(manifest.resolve(row.scene)));
    const bsb::BSB plan = bsb::load(manifest.resolve(row.bsb));
    latents[static_cast<size_t>(i)] = codec.encode(video);
    guidance[static_cast<size_t>(i)] = bsb::build_guidance(plan, scene, codec).data;
    frames[static_cast<size_t>(i)] = video.t();
  });

  generator::Checkpoint ckpt;
  ckpt.stats = generator::LatentStats::fit(latents);
  std::vector<generator::SftExample> examples(n);
  for (size_t i = 0; i < n; ++i) {
    examples[i].latent_tokens = generator::chw_to_tokens(ckpt.stats.standardize(latents[i]));
    examples[i].guidance = std::move(guidance[i]);
    examples[i].frames = frames[i];
    latents[i] = Tensor();  // release the raw copy
  }

  ckpt.denoiser = generator::Denoiser(derive_seed(master_seed, "sft-init"));
  const generator::NoiseSchedule sched;
  nn::Adam opt(&ckpt.denoiser.params(), cfg.sft.lr(), 0.9, 0.999, 1e-8, cfg.sft.grad_clip);

  const int batch = std::max(1, cfg.sft.batch);
  for (int step = 0; step < steps; ++step) {
    Rng rng(derive_seed(master_seed, "sft-step", static_cast<uint64_t>(step)));
    std::vector<const generator::SftExample*> picks;
    picks.reserve(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b)
      picks.push_back(&examples[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(n) - 1))]);
    ckpt.denoiser.params().zero_grad();
    const double loss = generator::sft_loss(ckpt.denoiser, sched, picks, rng, true);
    opt.step();
    if (log && (step % 25 == 0 || step + 1 == steps)) log({step, loss});
  }

  ckpt.lineage = {{"master_seed", master_seed},
                  {"path", "train-sft"},
                  {"steps", steps},
                  {"corpus_rows", n}};
  return ckpt;
}

std::vector<grpo::PlanCase> load_plan_cases(const Manifest& manifest, int max_cases) {
  size_t n = manifest.rows.size();
  if (max_cases > 0) n = std::min(n, static_cast<size_t>(max_cases));
  std::vector<grpo::PlanCase> cases(n);
  parallel_for(static_cast<int64_t>(n), [&](int64_t i) {
    const CorpusRow& row = manifest.rows[static_cast<size_t>(i)];
    cases[static_cast<size_t>(i)].scene =
        world::scene_from_json(fs::read_json(manifest.resolve(row.scene)));
    cases[static_cast<size_t>(i)].plan = bsb::load(manifest.resolve(row.bsb));
  });
  return cases;
}

generator::Checkpoint train_grpo(const generator::Checkpoint& sft, const Manifest& plans,
                                 const reward::WorldModel& wm, const config::RunConfig& cfg,
                                 uint64_t master_seed, int iterations, const GrpoLogFn& log) {
  const std::vector<grpo::PlanCase> cases = load_plan_cases(plans);
  require(!cases.empty(), ErrorKind::InsufficientData, "no plan cases for GRPO");

  generator::Checkpoint ckpt;
  ckpt.denoiser = sft.denoiser;  // policy starts from the reference
  ckpt.stats = sft.stats;
  const generator::Denoiser& ref = sft.denoiser;
  const generator::NoiseSchedule sched;
  const generator::LatentCodec codec;

  grpo::StepContext ctx;
  ctx.sched = &sched;
  ctx.codec = &codec;
  ctx.stats = &ckpt.stats;
  ctx.world_model = &wm;
  ctx.pfc = cfg.pfc;
  ctx.weights = cfg.reward_weights;

  nn::Adam opt(&ckpt.denoiser.params(), cfg.grpo.lr(), 0.9, 0.999, 1e-8, cfg.grpo.grad_clip);
  const uint64_t seed = derive_seed(master_seed, "grpo");
  for (int iter = 0; iter < iterations; ++iter) {
    const grpo::TrainMetrics m = grpo::grpo_step(ckpt.denoiser, ref, ctx, cases, cfg.grpo, opt,
                                                 seed, iter);
    if (log) log(iter, m);
  }
  ckpt.lineage = {{"master_seed", master_seed},
                  {"path", "train-grpo"},
                  {"iterations", iterations},
                  {"reference", sft.lineage}};
  return ckpt;
}

namespace {

fs::json score_to_json(const rollouts::CandidateScore& s) {
  fs::json fb = fs::json::array();
  for (const auto& f : s.feedback)
    fb.push_back({{"code", rollouts::to_string(f.code)}, {"distance", f.distance}, {"frame", f.frame}});
  return {{"success", s.success},
          {"pfc", s.pfc},
          {"aesthetic_norm", s.aesthetic_norm},
          {"composite", s.composite},
          {"feedback", fb}};
}

fs::json report_to_json(const rollouts::StageReport& r) {
  fs::json cands = fs::json::array();
  for (const auto& c : r.candidates)
    cands.push_back({{"round", c.round},
                     {"index", c.index},
                     {"plan_ok", c.plan_ok},
                     {"score", score_to_json(c.score)}});
  return {{"candidates", cands},
          {"rounds", r.rounds},
          {"generation_calls", r.generation_calls},
          {"selected_round", r.selected_round},
          {"selected_index", r.selected_index},
          {"success", r.success}};
}

}  // namespace

rollouts::LongHorizonResult rollout_to_dir(const Path& out_dir, const world::Scene& scene,
                                           const std::string& instruction,
                                           const generator::Checkpoint& ckpt,
                                           const reward::WorldModel& wm,
                                           const config::RunConfig& cfg, uint64_t seed) {
  fs::ensure_dir(out_dir);
  const generator::NoiseSchedule sched;
  const generator::LatentCodec codec;
  rollouts::GenContext gen{&ckpt.denoiser, &sched, &codec, &ckpt.stats};

  rollouts::StageSink sink = [&](int stage, const rollouts::StageOutcome& outcome) {
    char sdir_name[24];
    std::snprintf(sdir_name, sizeof(sdir_name), "stage_%d", stage);
    const Path sdir = out_dir / sdir_name;
    fs::ensure_dir(sdir);
    for (size_t c = 0; c < outcome.candidate_videos.size(); ++c) {
      if (outcome.candidate_videos[c].frames.empty()) continue;
      char cdir[32];
      std::snprintf(cdir, sizeof(cdir), "candidate_%d", static_cast<int>(c));
      world::save_video(sdir / cdir, outcome.candidate_videos[c]);
    }
    fs::write_json_atomic(sdir / "report.json", report_to_json(outcome.report));
    if (outcome.result) {
      bsb::save(sdir / "selected.json", outcome.result->plan);
      world::save_video(sdir / "video", outcome.result->video);
      fs::write_json_atomic(sdir / "scene.json", world::scene_to_json(outcome.result->advanced_scene));
    }
  };

  rollouts::LongHorizonResult res = rollouts::run_long_horizon(
      scene, instruction, gen, wm, cfg.pfc, cfg.rollout, cfg.phase_counts, seed, sink);

  if (res.stitched.t() > 0) world::save_video(out_dir / "stitched", res.stitched);

  fs::json stages = fs::json::array();
  for (const auto& st : res.stages)
    stages.push_back({{"success", st.report.success},
                      {"generation_calls", st.report.generation_calls},
                      {"rounds", st.report.rounds}});
  fs::write_json_atomic(out_dir / "run.json",
                        {{"instruction", instruction},
                         {"attempted", res.attempted},
                         {"completed", res.completed},
                         {"stages", stages},
                         {"stage_peak_bytes", res.stage_peak_bytes},
                         {"seed", seed}});
  fs::write_json_atomic(out_dir / "timing.json", {{"stage_seconds", res.stage_seconds}});
  return res;
}

eval::EvalReport eval_runs(const Path& runs_dir, const reward::WorldModel& wm,
                           const config::RunConfig& cfg) {
  std::vector<Path> run_dirs;
  for (const auto& entry : std::filesystem::directory_iterator(runs_dir))
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "run.json"))
      run_dirs.push_back(entry.path());
  std::sort(run_dirs.begin(), run_dirs.end());
  require(!run_dirs.empty(), ErrorKind::InvalidArgument,
          "no rollout runs under " + runs_dir.string());

  std::vector<eval::TaskEval> tasks(run_dirs.size());
  parallel_for(static_cast<int64_t>(run_dirs.size()), [&](int64_t i) {
    const Path& rd = run_dirs[static_cast<size_t>(i)];
    const fs::json run = fs::read_json(rd / "run.json");
    eval::TaskEval te;
    te.name = rd.filename().string();
    const int attempted = run.at("attempted").get<int>();
    double pfc_sum = 0.0;
    int pfc_count = 0;
    double subj_sum = 0.0;
    int subj_count = 0;
    for (int s = 0; s < attempted; ++s) {
      const auto& js = run.at("stages").size() > static_cast<size_t>(s)
                           ? run.at("stages").at(static_cast<size_t>(s))
                           : fs::json({{"success", false}});
      const bool ok = js.value("success", false);
      te.subtask_success.push_back(ok ? 1 : 0);
      char sdir[24];
      std::snprintf(sdir, sizeof(sdir), "stage_%d", s);
      const Path video_dir = rd / sdir / "video";
      if (ok && std::filesystem::exists(video_dir / "video.json")) {
        const world::Video v = world::load_video(video_dir);
        pfc_sum += reward::pfc_score(v, wm, cfg.pfc).r_physics;
        ++pfc_count;
        const bsb::BSB plan = bsb::load(rd / sdir / "selected.json");
        if (plan.meta) {
          const world::Scene sc =
              world::scene_from_json(fs::read_json(rd / sdir / "scene.json"));
          if (const auto* obj = sc.find_object(plan.meta->object)) {
            subj_sum += eval::subject_consistency(v, obj->color);
            ++subj_count;
          }
        }
      }
    }
    if (std::filesystem::exists(rd / "stitched" / "video.json")) {
      const world::Video stitched = world::load_video(rd / "stitched");
      te.flicker = eval::flicker(stitched);
      te.background_consistency = eval::background_consistency(stitched);
    }
    te.mean_pfc = pfc_count ? pfc_sum / pfc_count : 0.0;
    te.subject_consistency = subj_count ? subj_sum / subj_count : 0.0;
    tasks[static_cast<size_t>(i)] = std::move(te);
  });
  return eval::aggregate(std::move(tasks));
}

bool up_to_date(const Path& dir, const std::string& command, const std::string& config_hash) {
  const Path marker = dir / "hierogen_run.json";
  if (!std::filesystem::exists(marker)) return false;
  try {
    const fs::json j = fs::read_json(marker);
    return j.value("command", "") == command && j.value("config_hash", "") == config_hash &&
           j.value("done", false);
  } catch (const Error&) {
    return false;
  }
}

void mark_done(const Path& dir, const std::string& command, const std::string& config_hash,
               const fs::json& lineage) {
  fs::write_json_atomic(dir / "hierogen_run.json", {{"command", command},
                                                    {"config_hash", config_hash},
                                                    {"lineage", lineage},
                                                    {"done", true}});
}

}  // namespace hierogen::pipeline
