#include "hierogen/config.hpp"

#include <set>

namespace hierogen::config {

namespace {

void check_keys(const fs::json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    require(ok.count(it.key()) > 0, ErrorKind::Parse,
            "unknown config key '" + it.key() + "' in " + where);
}

template <typename T>
void get_if(const fs::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

fs::json RunConfig::to_json() const {
  fs::json j;
  j["seed"] = seed;
  j["workers"] = workers;
  j["ddim_steps"] = ddim_steps;
  j["phase_counts"] = {phase_counts.pre, phase_counts.interact, phase_counts.post};
  j["pfc"] = {{"context_len", pfc.context_len},
              {"target_len", pfc.target_len},
              {"stride", pfc.stride},
              {"temperature", pfc.temperature}};
  j["reward_weights"] = {{"physics", reward_weights.physics},
                         {"aesthetic", reward_weights.aesthetic}};
  j["ridge_lambda"] = ridge_lambda;
  j["grpo"] = {{"group_size", grpo.group_size}, {"clip", grpo.clip},
               {"kl_coef", grpo.kl_coef},       {"base_lr", grpo.base_lr},
               {"lr_scale", grpo.lr_scale},     {"iterations", grpo.iterations},
               {"sample_steps", grpo.sample_steps}, {"grad_clip", grpo.grad_clip}};
  j["rollout"] = {{"k", rollout.k},
                  {"success_threshold", rollout.success_threshold},
                  {"max_replans", rollout.max_replans},
                  {"w_success", rollout.w_success},
                  {"w_pfc", rollout.w_pfc},
                  {"w_aesthetic", rollout.w_aesthetic}};
  j["sft"] = {{"base_lr", sft.base_lr}, {"lr_scale", sft.lr_scale}, {"batch", sft.batch},
              {"grad_clip", sft.grad_clip}, {"steps", sft.steps}};
  j["gen_data"] = {{"count", gen_data.count},
                   {"min_subtasks", gen_data.min_subtasks},
                   {"max_subtasks", gen_data.max_subtasks},
                   {"min_objects", gen_data.min_objects},
                   {"max_objects", gen_data.max_objects}};
  return j;
}

RunConfig RunConfig::from_json(const fs::json& j) {
  RunConfig c;
  try {
    check_keys(j,
               {"seed", "workers", "ddim_steps", "phase_counts", "pfc", "reward_weights",
                "ridge_lambda", "grpo", "rollout", "sft", "gen_data"},
               "config root");
    get_if(j, "seed", c.seed);
    get_if(j, "workers", c.workers);
    get_if(j, "ddim_steps", c.ddim_steps);
    if (j.contains("phase_counts")) {
      c.phase_counts.pre = j.at("phase_counts").at(0).get<int>();
      c.phase_counts.interact = j.at("phase_counts").at(1).get<int>();
      c.phase_counts.post = j.at("phase_counts").at(2).get<int>();
    }
    if (j.contains("pfc")) {
      const auto& p = j.at("pfc");
      check_keys(p, {"context_len", "target_len", "stride", "temperature"}, "pfc");
      get_if(p, "context_len", c.pfc.context_len);
      get_if(p, "target_len", c.pfc.target_len);
      get_if(p, "stride", c.pfc.stride);
      get_if(p, "temperature", c.pfc.temperature);
    }
    if (j.contains("reward_weights")) {
      const auto& p = j.at("reward_weights");
      check_keys(p, {"physics", "aesthetic"}, "reward_weights");
      get_if(p, "physics", c.reward_weights.physics);
      get_if(p, "aesthetic", c.reward_weights.aesthetic);
      require(c.reward_weights.physics >= 0 && c.reward_weights.aesthetic >= 0 &&
                  std::abs(c.reward_weights.physics + c.reward_weights.aesthetic - 1.0) < 1e-9,
              ErrorKind::Parse, "reward weights must be nonnegative and sum to 1");
    }
    get_if(j, "ridge_lambda", c.ridge_lambda);
    if (j.contains("grpo")) {
      const auto& p = j.at("grpo");
      check_keys(p,
                 {"group_size", "clip", "kl_coef", "base_lr", "lr_scale", "iterations",
                  "sample_steps", "grad_clip"},
                 "grpo");
      get_if(p, "group_size", c.grpo.group_size);
      get_if(p, "clip", c.grpo.clip);
      get_if(p, "kl_coef", c.grpo.kl_coef);
      get_if(p, "base_lr", c.grpo.base_lr);
      get_if(p, "lr_scale", c.grpo.lr_scale);
      get_if(p, "iterations", c.grpo.iterations);
      get_if(p, "sample_steps", c.grpo.sample_steps);
      get_if(p, "grad_clip", c.grpo.grad_clip);
      c.grpo.check();
    }
    if (j.contains("rollout")) {
      const auto& p = j.at("rollout");
      check_keys(p, {"k", "success_threshold", "max_replans", "w_success", "w_pfc", "w_aesthetic"},
                 "rollout");
      get_if(p, "k", c.rollout.k);
      get_if(p, "success_threshold", c.rollout.success_threshold);
      get_if(p, "max_replans", c.rollout.max_replans);
      get_if(p, "w_success", c.rollout.w_success);
      get_if(p, "w_pfc", c.rollout.w_pfc);
      get_if(p, "w_aesthetic", c.rollout.w_aesthetic);
      require(std::abs(c.rollout.w_success + c.rollout.w_pfc + c.rollout.w_aesthetic - 1.0) < 1e-9,
              ErrorKind::Parse, "rollout verifier weights must sum to 1");
      c.rollout.check();
    }
    if (j.contains("sft")) {
      const auto& p = j.at("sft");
      check_keys(p, {"base_lr", "lr_scale", "batch", "grad_clip", "steps"}, "sft");
      get_if(p, "base_lr", c.sft.base_lr);
      get_if(p, "lr_scale", c.sft.lr_scale);
      get_if(p, "batch", c.sft.batch);
      get_if(p, "grad_clip", c.sft.grad_clip);
      get_if(p, "steps", c.sft.steps);
    }
    if (j.contains("gen_data")) {
      const auto& p = j.at("gen_data");
      check_keys(p, {"count", "min_subtasks", "max_subtasks", "min_objects", "max_objects"},
                 "gen_data");
      get_if(p, "count", c.gen_data.count);
      get_if(p, "min_subtasks", c.gen_data.min_subtasks);
      get_if(p, "max_subtasks", c.gen_data.max_subtasks);
      get_if(p, "min_objects", c.gen_data.min_objects);
      get_if(p, "max_objects", c.gen_data.max_objects);
    }
    c.rollout.ddim_steps = c.ddim_steps;
  } catch (const fs::json::exception& e) {
    fail(ErrorKind::Parse, std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return from_json(fs::read_json(path));
}

void RunConfig::save(const std::filesystem::path& path) const {
  fs::write_json_atomic(path, to_json());
}

std::string RunConfig::hash() const { return fs::fnv1a_hex(to_json().dump()); }

}  // namespace hierogen::config
