#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "ctgv/analysis.hpp"
#include "ctgv/io.hpp"
#include "ctgv/sampler.hpp"
#include "ctgv/thread_pool.hpp"
#include "ctgv/trainer.hpp"
#include "json.hpp"

namespace {

using namespace ctgv;

std::vector<std::string> read_prompt_lines(const std::string& path) {
  std::istringstream is(read_file(path));
  std::vector<std::string> prompts;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) prompts.push_back(line);
  }
  check(!prompts.empty(), "no prompts in " + path);
  return prompts;
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty()) {
    std::cout << content;
  } else {
    write_file(out_path, content);
  }
}

int run_train(const std::string& config_path, const std::string& out_dir) {
  TrainConfig cfg =
      train_config_from_json(nlohmann::json::parse(read_file(config_path)));
  std::filesystem::create_directories(out_dir);
  TrainState st = init_training(cfg);
  std::string csv;
  train(st, &csv, &std::cout, 100);
  write_file(out_dir + "/loss.csv", csv);
  write_file(out_dir + "/config.json", train_config_to_json(cfg).dump(2) + "\n");
  save_checkpoint(st, out_dir + "/checkpoint.ckpt");
  std::cout << "wrote " << out_dir << "/checkpoint.ckpt\n";
  return 0;
}

struct SampleArgs {
  std::string ckpt, caption, out_dir;
  std::vector<std::string> images;
  std::vector<int64_t> mask_frames;
  int64_t steps = 50;
  double cfg_scale = 7.5;
  uint64_t seed = 0;
  int64_t attn_steps = 10;
  int64_t block = -1;
};

SampleRequest to_request(const SampleArgs& a, int64_t attn_steps) {
  SampleRequest req;
  req.caption = a.caption;
  req.steps = a.steps;
  req.cfg_scale = a.cfg_scale;
  req.seed = a.seed;
  req.attn_steps = attn_steps;
  req.mask_frames = a.mask_frames;
  for (const std::string& p : a.images) req.images.push_back(load_tensor(p));
  return req;
}

int run_sample(const SampleArgs& a) {
  TrainState st = load_checkpoint(a.ckpt);
  SampleResult res = sample_video(st, to_request(a, 0));
  std::filesystem::create_directories(a.out_dir);
  save_tensor(a.out_dir + "/video.tnsr", res.video);
  write_video_frames(a.out_dir, "video", res.video);
  std::cout << "wrote " << a.out_dir << "/video.tnsr\n";
  return 0;
}

int run_attn(const SampleArgs& a) {
  TrainState st = load_checkpoint(a.ckpt);
  int64_t verb =
      verb_position(tokenize(a.caption, st.model.vocab), st.model.vocab);
  SampleResult res = sample_video(st, to_request(a, a.attn_steps));
  check(!res.mean_attn.empty(), "attention capture disabled (attn-steps 0)");
  int64_t n_blocks = static_cast<int64_t>(res.mean_attn.size());
  check(a.block >= -1 && a.block < n_blocks,
        "block " + std::to_string(a.block) + " out of range for " +
            std::to_string(n_blocks) + " blocks");

  const ModelConfig& mc = st.cfg.model;
  Tensor map;
  std::string stem;
  if (a.block >= 0) {
    map = res.mean_attn[static_cast<size_t>(a.block)];
    stem = "block" + std::to_string(a.block);
  } else {
    std::vector<double> acc(res.mean_attn[0].values());
    for (int64_t b = 1; b < n_blocks; ++b) {
      const auto& v = res.mean_attn[static_cast<size_t>(b)].values();
      for (size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
    }
    for (double& x : acc) x /= static_cast<double>(n_blocks);
    map = Tensor(res.mean_attn[0].shape(), std::move(acc));
    stem = "block_mean";
  }
  dump_attention(a.out_dir, stem, map, verb, mc.h, mc.w);
  std::cout << "wrote " << a.out_dir << "/" << stem << ".csv and "
            << map.dim(0) << " heatmaps (verb column " << verb << ")\n";
  return 0;
}

int run_drift(const std::string& trace_path, int64_t verb_index, int64_t h,
              int64_t w, const std::string& out_path) {
  DriftReport rep = centroid_drift(read_trace_csv(trace_path), verb_index, h, w);
  std::ostringstream os;
  os << "frame,centroid_x,centroid_y,entropy\n" << std::setprecision(17);
  for (size_t fr = 0; fr < rep.centroids.size(); ++fr) {
    os << fr << "," << rep.centroids[fr][0] << "," << rep.centroids[fr][1]
       << "," << rep.entropy[fr] << "\n";
  }
  os << "total_drift," << rep.total_drift << ",,\n";
  emit(out_path, os.str());
  return 0;
}

int run_motion(const std::string& video_path, const std::string& out_path) {
  std::ostringstream os;
  os << "motion_energy\n"
     << std::setprecision(17) << motion_energy(load_tensor(video_path))
     << "\n";
  emit(out_path, os.str());
  return 0;
}

int run_ablate(const std::string& ckpt_ctgm, const std::string& ckpt_vanilla,
               const std::string& prompts_path,
               const std::vector<uint64_t>& seeds, int64_t steps,
               double cfg_scale, int64_t attn_steps,
               const std::string& out_path) {
  TrainState arm_a = load_checkpoint(ckpt_ctgm);
  TrainState arm_b = load_checkpoint(ckpt_vanilla);
  AblateReport rep = ablate(arm_a, arm_b, read_prompt_lines(prompts_path),
                            seeds, steps, cfg_scale, attn_steps);
  emit(out_path, ablate_to_csv(rep));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy text+image-to-video diffusion: train, sample, inspect"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads,
                 "Worker threads (0 = hardware default). Results are "
                 "bit-identical for any value.");

  std::string config_path, out_dir;
  CLI::App* train_cmd = app.add_subcommand("train", "Train from a JSON config");
  train_cmd->add_option("--config", config_path, "TrainConfig JSON")
      ->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();

  SampleArgs sa;
  CLI::App* sample_cmd =
      app.add_subcommand("sample", "Sample a video from a checkpoint");
  sample_cmd->add_option("--ckpt", sa.ckpt, "Checkpoint path")->required();
  sample_cmd->add_option("--caption", sa.caption, "Caption text")->required();
  sample_cmd->add_option("--image", sa.images,
                         "Conditioning image tensor blob (repeatable)");
  sample_cmd->add_option("--mask-frames", sa.mask_frames,
                         "Frame indices the images condition")
      ->delimiter(',');
  sample_cmd->add_option("--steps", sa.steps, "DDIM steps");
  sample_cmd->add_option("--cfg", sa.cfg_scale, "Guidance scale");
  sample_cmd->add_option("--seed", sa.seed, "Noise seed");
  sample_cmd->add_option("--out", sa.out_dir, "Output directory")->required();

  SampleArgs aa;
  CLI::App* attn_cmd = app.add_subcommand(
      "attn", "Dump per-frame verb-attention heatmaps and the raw map");
  attn_cmd->add_option("--ckpt", aa.ckpt, "Checkpoint path")->required();
  attn_cmd->add_option("--caption", aa.caption, "Caption text")->required();
  attn_cmd->add_option("--block", aa.block,
                       "Block index, -1 averages over blocks");
  attn_cmd->add_option("--steps", aa.steps, "DDIM steps");
  attn_cmd->add_option("--cfg", aa.cfg_scale, "Guidance scale");
  attn_cmd->add_option("--seed", aa.seed, "Noise seed");
  attn_cmd->add_option("--attn-steps", aa.attn_steps,
                       "How many final sampling steps to average");
  attn_cmd->add_option("--out", aa.out_dir, "Output directory")->required();

  CLI::App* metrics_cmd = app.add_subcommand("metrics", "Analysis metrics");
  metrics_cmd->require_subcommand(1);

  std::string trace_path, drift_out;
  int64_t verb_index = 0, grid_h = 0, grid_w = 0;
  CLI::App* drift_cmd = metrics_cmd->add_subcommand(
      "drift", "Verb-attention centroid drift from a dumped trace");
  drift_cmd->add_option("--trace", trace_path, "Trace CSV")->required();
  drift_cmd->add_option("--verb-index", verb_index, "Token column")
      ->required();
  drift_cmd->add_option("--height", grid_h, "Grid height")->required();
  drift_cmd->add_option("--width", grid_w, "Grid width")->required();
  drift_cmd->add_option("--out", drift_out, "Output CSV (default stdout)");

  std::string video_path, motion_out;
  CLI::App* motion_cmd =
      metrics_cmd->add_subcommand("motion", "Mean absolute inter-frame change");
  motion_cmd->add_option("--video", video_path, "Video tensor blob")
      ->required();
  motion_cmd->add_option("--out", motion_out, "Output CSV (default stdout)");

  std::string ck_ctgm, ck_vanilla, prompts_path, ablate_out;
  std::vector<uint64_t> seeds;
  int64_t ab_steps = 50, ab_attn = 10;
  double ab_cfg = 7.5;
  CLI::App* ablate_cmd = metrics_cmd->add_subcommand(
      "ablate", "Compare a CTGM checkpoint against a vanilla one");
  ablate_cmd->add_option("--ckpt-ctgm", ck_ctgm, "CTGM checkpoint")
      ->required();
  ablate_cmd->add_option("--ckpt-vanilla", ck_vanilla, "Vanilla checkpoint")
      ->required();
  ablate_cmd->add_option("--prompts", prompts_path, "Prompt file, one per line")
      ->required();
  ablate_cmd->add_option("--seeds", seeds, "Noise seeds")
      ->required()
      ->delimiter(',');
  ablate_cmd->add_option("--steps", ab_steps, "DDIM steps");
  ablate_cmd->add_option("--cfg", ab_cfg, "Guidance scale");
  ablate_cmd->add_option("--attn-steps", ab_attn,
                         "How many final sampling steps to average");
  ablate_cmd->add_option("--out", ablate_out, "Output CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (threads == 0) {
      threads = static_cast<int>(std::thread::hardware_concurrency());
      if (threads < 1) threads = 1;
    }
    ctgv::set_threads(threads);

    if (*train_cmd) return run_train(config_path, out_dir);
    if (*sample_cmd) return run_sample(sa);
    if (*attn_cmd) return run_attn(aa);
    if (*drift_cmd)
      return run_drift(trace_path, verb_index, grid_h, grid_w, drift_out);
    if (*motion_cmd) return run_motion(video_path, motion_out);
    if (*ablate_cmd)
      return run_ablate(ck_ctgm, ck_vanilla, prompts_path, seeds, ab_steps,
                        ab_cfg, ab_attn, ablate_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
