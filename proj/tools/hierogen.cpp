// hierogen: hierarchical plan -> bridge -> generate -> align -> rollout
// pipeline over the deterministic 2D tabletop world, one subcommand per stage.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"

#include "hierogen/annotator.hpp"
#include "hierogen/config.hpp"
#include "hierogen/fsutil.hpp"
#include "hierogen/pipeline.hpp"
#include "hierogen/planner.hpp"
#include "hierogen/video_io.hpp"

namespace hg = hierogen;
using hg::Tensor;
using hg::fs::json;
using Path = std::filesystem::path;

namespace {

int exit_code_for(hg::ErrorKind kind) {
  switch (kind) {
    case hg::ErrorKind::Parse:
    case hg::ErrorKind::InvalidArgument:
    case hg::ErrorKind::NotFound:
    case hg::ErrorKind::Io:
    case hg::ErrorKind::PlanInfeasible:
    case hg::ErrorKind::ExecutionInfeasible:
    case hg::ErrorKind::AnnotationFailed:
    case hg::ErrorKind::InsufficientData:
      return 2;
    case hg::ErrorKind::StagedFailure:
      return 3;
    default:
      return 1;
  }
}

struct CommonOpts {
  std::string config_path;
  int64_t seed = -1;  // -1: use config value

  hg::config::RunConfig resolve() const {
    hg::config::RunConfig cfg;
    if (!config_path.empty()) cfg = hg::config::RunConfig::load(config_path);
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonOpts* opts) {
  cmd->add_option("--config", opts->config_path, "run config JSON (defaults apply otherwise)");
  cmd->add_option("--seed", opts->seed, "master seed override");
}

void write_resolved(const Path& out, const hg::config::RunConfig& cfg) {
  hg::fs::ensure_dir(out);
  cfg.save(out / "resolved_config.json");
}

hg::world::Scene load_scene(const std::string& path) {
  return hg::world::scene_from_json(hg::fs::read_json(path));
}

json lineage_for(const hg::config::RunConfig& cfg, const std::string& path) {
  return {{"master_seed", cfg.seed}, {"path", path}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierogen: hierarchical video-generation pipeline over a 2D tabletop world"};
  app.require_subcommand(1);

  auto* c_gen = app.add_subcommand("gen-data", "seeded corpus of scenes, plans and oracle videos");
  CommonOpts gen_opts;
  add_common(c_gen, &gen_opts);
  int gen_count = -1, gen_min_sub = -1, gen_max_sub = -1;
  std::string gen_out = "corpus";
  c_gen->add_option("--count", gen_count, "number of corpus items");
  c_gen->add_option("--min-subtasks", gen_min_sub);
  c_gen->add_option("--max-subtasks", gen_max_sub);
  c_gen->add_option("--out", gen_out, "output corpus directory");

  auto* c_plan = app.add_subcommand("plan", "decompose an instruction and plan each sub-task");
  CommonOpts plan_opts;
  add_common(c_plan, &plan_opts);
  std::string plan_scene, plan_instruction, plan_out = "plan";
  c_plan->add_option("--scene", plan_scene)->required();
  c_plan->add_option("--instruction", plan_instruction)->required();
  c_plan->add_option("--out", plan_out);

  auto* c_ann = app.add_subcommand("annotate", "recover BSB annotations from videos");
  CommonOpts ann_opts;
  add_common(c_ann, &ann_opts);
  std::string ann_video, ann_scene, ann_instruction, ann_out, ann_manifest;
  c_ann->add_option("--video", ann_video, "single video directory");
  c_ann->add_option("--scene", ann_scene);
  c_ann->add_option("--instruction", ann_instruction);
  c_ann->add_option("--manifest", ann_manifest, "batch mode: corpus manifest.jsonl");
  c_ann->add_option("--out", ann_out)->required();

  auto* c_wm = app.add_subcommand("fit-world-model", "ridge world model from oracle videos");
  CommonOpts wm_opts;
  add_common(c_wm, &wm_opts);
  std::string wm_data, wm_out = "wm";
  double wm_lambda = -1.0;
  c_wm->add_option("--data", wm_data, "corpus manifest.jsonl")->required();
  c_wm->add_option("--out", wm_out);
  c_wm->add_option("--lambda", wm_lambda, "ridge strength override");

  auto* c_sft = app.add_subcommand("train-sft", "supervised fine-tuning of the generator");
  CommonOpts sft_opts;
  add_common(c_sft, &sft_opts);
  std::string sft_data, sft_out = "sft";
  int sft_steps = -1;
  c_sft->add_option("--data", sft_data, "training manifest.jsonl (annotated)")->required();
  c_sft->add_option("--steps", sft_steps, "optimizer steps");
  c_sft->add_option("--out", sft_out);

  auto* c_grpo = app.add_subcommand("train-grpo", "group-relative policy optimization");
  CommonOpts grpo_opts;
  add_common(c_grpo, &grpo_opts);
  std::string grpo_ckpt, grpo_wm, grpo_plans, grpo_out = "grpo";
  int grpo_iters = -1;
  c_grpo->add_option("--ckpt", grpo_ckpt, "reference (SFT) checkpoint dir")->required();
  c_grpo->add_option("--world-model", grpo_wm)->required();
  c_grpo->add_option("--plans", grpo_plans, "plan manifest.jsonl")->required();
  c_grpo->add_option("--iters", grpo_iters);
  c_grpo->add_option("--out", grpo_out);

  auto* c_generate = app.add_subcommand("generate", "DDIM sample one video from a plan");
  CommonOpts generate_opts;
  add_common(c_generate, &generate_opts);
  std::string g_ckpt, g_bsb, g_scene, g_out = "generated";
  c_generate->add_option("--ckpt", g_ckpt)->required();
  c_generate->add_option("--bsb", g_bsb)->required();
  c_generate->add_option("--scene", g_scene)->required();
  c_generate->add_option("--out", g_out);

  auto* c_roll = app.add_subcommand("rollout", "staged propose-verify-refine long-horizon run");
  CommonOpts roll_opts;
  add_common(c_roll, &roll_opts);
  std::string r_scene, r_instruction, r_ckpt, r_wm, r_out = "run";
  int r_k = -1;
  c_roll->add_option("--scene", r_scene)->required();
  c_roll->add_option("--instruction", r_instruction)->required();
  c_roll->add_option("--ckpt", r_ckpt)->required();
  c_roll->add_option("--world-model", r_wm)->required();
  c_roll->add_option("--k", r_k, "candidate count override");
  c_roll->add_option("--out", r_out);

  auto* c_eval = app.add_subcommand("eval", "score rollout runs and print the metric table");
  CommonOpts eval_opts;
  add_common(c_eval, &eval_opts);
  std::string e_runs, e_wm, e_out = "report.json";
  c_eval->add_option("--runs", e_runs)->required();
  c_eval->add_option("--world-model", e_wm)->required();
  c_eval->add_option("--out", e_out);

  auto* c_render = app.add_subcommand("render", "rasterize a scene to a single frame");
  CommonOpts render_opts;
  add_common(c_render, &render_opts);
  std::string rd_scene, rd_out = "rendered";
  c_render->add_option("--scene", rd_scene)->required();
  c_render->add_option("--out", rd_out);

  auto* c_score = app.add_subcommand("score", "physical-foresight score of one video");
  CommonOpts score_opts;
  add_common(c_score, &score_opts);
  std::string s_video, s_wm;
  c_score->add_option("--video", s_video)->required();
  c_score->add_option("--world-model", s_wm)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_gen) {
      hg::config::RunConfig cfg = gen_opts.resolve();
      if (gen_count > 0) cfg.gen_data.count = gen_count;
      if (gen_min_sub > 0) cfg.gen_data.min_subtasks = gen_min_sub;
      if (gen_max_sub > 0) cfg.gen_data.max_subtasks = gen_max_sub;
      const Path out = gen_out;
      if (hg::pipeline::up_to_date(out, "gen-data", cfg.hash())) {
        std::printf("gen-data: %s is up to date\n", out.string().c_str());
        return 0;
      }
      write_resolved(out, cfg);
      const auto manifest = hg::pipeline::gen_data(out, cfg, cfg.seed);
      hg::pipeline::mark_done(out, "gen-data", cfg.hash(), lineage_for(cfg, "gen-data"));
      std::printf("gen-data: %zu sub-task rows in %s\n", manifest.rows.size(),
                  out.string().c_str());
    } else if (*c_plan) {
      hg::config::RunConfig cfg = plan_opts.resolve();
      const Path out = plan_out;
      if (hg::pipeline::up_to_date(out, "plan:" + plan_instruction, cfg.hash())) {
        std::printf("plan: %s is up to date\n", out.string().c_str());
        return 0;
      }
      write_resolved(out, cfg);
      hg::world::Scene scene = load_scene(plan_scene);
      const auto tasks = hg::planner::parse(plan_instruction, scene);
      json manifest = json::array();
      for (size_t i = 0; i < tasks.size(); ++i) {
        const auto pc = hg::planner::fit_phase_counts(scene, tasks[i], cfg.phase_counts);
        const hg::bsb::BSB plan = hg::planner::plan_trajectory(scene, tasks[i], pc);
        char name[32];
        std::snprintf(name, sizeof(name), "bsb_%02zu.json", i);
        hg::bsb::save(out / name, plan);
        manifest.push_back({{"index", i},
                            {"subtask", hg::planner::to_text({tasks[i]})},
                            {"bsb", name}});
        if (i + 1 < tasks.size())
          hg::world::execute_plan(scene, plan, &scene);  // oracle-advance for the next stage
      }
      hg::fs::write_json_atomic(out / "plan_manifest.json", manifest);
      hg::pipeline::mark_done(out, "plan:" + plan_instruction, cfg.hash(),
                              lineage_for(cfg, "plan"));
      std::printf("plan: %zu sub-task plans in %s\n", tasks.size(), out.string().c_str());
    } else if (*c_ann) {
      hg::config::RunConfig cfg = ann_opts.resolve();
      if (!ann_manifest.empty()) {
        const Path out = ann_out;
        if (hg::pipeline::up_to_date(out, "annotate", cfg.hash())) {
          std::printf("annotate: %s is up to date\n", out.string().c_str());
          return 0;
        }
        write_resolved(out, cfg);
        const auto input = hg::pipeline::load_manifest(ann_manifest);
        const auto res = hg::pipeline::annotate_corpus(input, out);
        hg::pipeline::mark_done(out, "annotate", cfg.hash(), lineage_for(cfg, "annotate"));
        std::printf("annotate: %zu ok, %d failed (failures.jsonl)\n", res.manifest.rows.size(),
                    res.failures);
        return res.failures == static_cast<int>(input.rows.size()) ? 2 : 0;
      }
      hg::require(!ann_video.empty() && !ann_scene.empty() && !ann_instruction.empty(),
                  hg::ErrorKind::InvalidArgument,
                  "single mode needs --video, --scene and --instruction");
      const hg::world::Scene scene = load_scene(ann_scene);
      const hg::world::Video video = hg::world::load_video(ann_video);
      const hg::bsb::BSB rec = hg::annotator::annotate(video, ann_instruction, scene);
      hg::bsb::save(ann_out, rec);
      std::printf("annotate: wrote %s\n", ann_out.c_str());
    } else if (*c_wm) {
      hg::config::RunConfig cfg = wm_opts.resolve();
      if (wm_lambda > 0) cfg.ridge_lambda = wm_lambda;
      const Path out = wm_out;
      if (hg::pipeline::up_to_date(out, "fit-world-model", cfg.hash())) {
        std::printf("fit-world-model: %s is up to date\n", out.string().c_str());
        return 0;
      }
      write_resolved(out, cfg);
      const auto manifest = hg::pipeline::load_manifest(wm_data);
      const auto wm = hg::pipeline::fit_world_model_from(manifest, cfg);
      hg::reward::save_world_model(out, wm);
      hg::pipeline::mark_done(out, "fit-world-model", cfg.hash(),
                              lineage_for(cfg, "fit-world-model"));
      std::printf("fit-world-model: residual %.6f, saved to %s\n", wm.train_residual,
                  out.string().c_str());
    } else if (*c_sft) {
      hg::config::RunConfig cfg = sft_opts.resolve();
      if (sft_steps > 0) cfg.sft.steps = sft_steps;
      const Path out = sft_out;
      if (hg::pipeline::up_to_date(out, "train-sft", cfg.hash())) {
        std::printf("train-sft: %s is up to date\n", out.string().c_str());
        return 0;
      }
      write_resolved(out, cfg);
      const auto manifest = hg::pipeline::load_manifest(sft_data);
      std::string log_lines;
      const auto ckpt = hg::pipeline::train_sft(
          manifest, cfg, cfg.seed, cfg.sft.steps, [&](const hg::pipeline::SftProgress& p) {
            std::printf("train-sft: step %d loss %.6f\n", p.step, p.loss);
            log_lines += json({{"step", p.step}, {"loss", p.loss}}).dump() + "\n";
          });
      ckpt.save(out);
      hg::fs::write_text_atomic(out / "training_log.jsonl", log_lines);
      hg::pipeline::mark_done(out, "train-sft", cfg.hash(), lineage_for(cfg, "train-sft"));
      std::printf("train-sft: checkpoint in %s\n", out.string().c_str());
    } else if (*c_grpo) {
      hg::config::RunConfig cfg = grpo_opts.resolve();
      if (grpo_iters > 0) cfg.grpo.iterations = grpo_iters;
      const Path out = grpo_out;
      if (hg::pipeline::up_to_date(out, "train-grpo", cfg.hash())) {
        std::printf("train-grpo: %s is up to date\n", out.string().c_str());
        return 0;
      }
      write_resolved(out, cfg);
      const auto sft = hg::generator::Checkpoint::load(grpo_ckpt);
      const auto wm = hg::reward::load_world_model(grpo_wm);
      const auto plans = hg::pipeline::load_manifest(grpo_plans);
      std::string metrics;
      const auto ckpt = hg::pipeline::train_grpo(
          sft, plans, wm, cfg, cfg.seed, cfg.grpo.iterations,
          [&](int iter, const hg::grpo::TrainMetrics& m) {
            metrics += json({{"iter", iter},
                             {"mean_reward", m.mean_reward},
                             {"approx_kl", m.approx_kl},
                             {"clip_fraction", m.clip_fraction}})
                           .dump() +
                       "\n";
            if (iter % 10 == 0)
              std::printf("train-grpo: iter %d reward %.4f kl %.4f clip %.3f\n", iter,
                          m.mean_reward, m.approx_kl, m.clip_fraction);
          });
      ckpt.save(out);
      hg::fs::write_text_atomic(out / "metrics.jsonl", metrics);
      hg::pipeline::mark_done(out, "train-grpo", cfg.hash(), lineage_for(cfg, "train-grpo"));
      std::printf("train-grpo: checkpoint in %s\n", out.string().c_str());
    } else if (*c_generate) {
      hg::config::RunConfig cfg = generate_opts.resolve();
      const auto ckpt = hg::generator::Checkpoint::load(g_ckpt);
      const hg::world::Scene scene = load_scene(g_scene);
      const hg::bsb::BSB plan = hg::bsb::load(g_bsb);
      const hg::generator::NoiseSchedule sched;
      const hg::generator::LatentCodec codec;
      const auto video = hg::generator::sample_ddim(ckpt.denoiser, sched, codec, ckpt.stats, plan,
                                                    scene, cfg.ddim_steps, cfg.seed);
      hg::world::save_video(g_out, video);
      hg::fs::write_json_atomic(Path(g_out) / "lineage.json", lineage_for(cfg, "generate"));
      std::printf("generate: %d frames in %s\n", video.t(), g_out.c_str());
    } else if (*c_roll) {
      hg::config::RunConfig cfg = roll_opts.resolve();
      if (r_k > 0) cfg.rollout.k = r_k;
      const Path out = r_out;
      const std::string cmd_id = "rollout:" + r_instruction;
      if (hg::pipeline::up_to_date(out, cmd_id, cfg.hash())) {
        std::printf("rollout: %s is up to date\n", out.string().c_str());
        return 0;
      }
      write_resolved(out, cfg);
      const auto ckpt = hg::generator::Checkpoint::load(r_ckpt);
      const auto wm = hg::reward::load_world_model(r_wm);
      const hg::world::Scene scene = load_scene(r_scene);
      const auto res =
          hg::pipeline::rollout_to_dir(out, scene, r_instruction, ckpt, wm, cfg, cfg.seed);
      hg::pipeline::mark_done(out, cmd_id, cfg.hash(), lineage_for(cfg, "rollout"));
      std::printf("rollout: %d/%d stages completed, outputs in %s\n", res.completed,
                  res.attempted, out.string().c_str());
      if (res.completed < res.attempted) {
        std::fprintf(stderr, "rollout: staged failure at stage %d (report written)\n",
                     res.completed);
        return 3;
      }
    } else if (*c_eval) {
      hg::config::RunConfig cfg = eval_opts.resolve();
      const auto wm = hg::reward::load_world_model(e_wm);
      const auto report = hg::pipeline::eval_runs(e_runs, wm, cfg);
      json jt = json::array();
      for (const auto& t : report.tasks)
        jt.push_back({{"name", t.name},
                      {"subtask_success", t.subtask_success},
                      {"mean_pfc", t.mean_pfc},
                      {"flicker", t.flicker},
                      {"subject_consistency", t.subject_consistency},
                      {"background_consistency", t.background_consistency}});
      hg::fs::write_json_atomic(e_out,
                                {{"tasks", jt},
                                 {"task_success_rate", report.task_success_rate},
                                 {"mean_pfc", report.mean_pfc},
                                 {"mean_flicker", report.mean_flicker},
                                 {"mean_subject_consistency", report.mean_subject_consistency},
                                 {"mean_background_consistency",
                                  report.mean_background_consistency}});
      std::printf("%s", hg::eval::render_table(report).c_str());
      std::printf("eval: report written to %s\n", e_out.c_str());
    } else if (*c_render) {
      const hg::world::Scene scene = load_scene(rd_scene);
      hg::world::Video v;
      v.frames = Tensor({1, 3, scene.height, scene.width});
      const Tensor f = hg::world::render(scene);
      std::copy(f.data(), f.data() + f.numel(), v.frames.data());
      hg::world::save_video(rd_out, v);
      std::printf("render: frame in %s\n", rd_out.c_str());
    } else if (*c_score) {
      hg::config::RunConfig cfg = score_opts.resolve();
      const auto wm = hg::reward::load_world_model(s_wm);
      const auto video = hg::world::load_video(s_video);
      const auto res = hg::reward::pfc_score(video, wm, cfg.pfc);
      json out = {{"r_physics", res.r_physics},
                  {"scores", res.scores},
                  {"weights", res.weights},
                  {"aesthetic", hg::reward::aesthetic_score(video)},
                  {"composite",
                   hg::reward::composite_reward(video, wm, cfg.pfc, cfg.reward_weights)}};
      std::printf("%s\n", out.dump(2).c_str());
    }
  } catch (const hg::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return 0;
}
