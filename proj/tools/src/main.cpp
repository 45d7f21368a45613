#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nlden/error.hpp"
#include "nlden_cli/commands.hpp"
#include "nlden_cli/config.hpp"

namespace {

using namespace nlden;
using namespace nlden::cli;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Experiment config (JSON)");
  sub->add_option("--seed", c.seed, "Global seed, overrides the config");
  sub->add_option("--out", c.out, "Output location, overrides the config");
  sub->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  if (cfg.out.empty()) throw Error(ErrorKind::Config, "out: no output location given (--out or config 'out')");
  return cfg;
}

void print_report(const EvaluationReport& r) {
  std::printf("images %zu\n", r.rows.size());
  std::printf("mean psnr input %.4f a %.4f b %.4f\n", r.mean.psnr_input, r.mean.psnr_a, r.mean.psnr_b);
  std::printf("mean ssim input %.4f a %.4f b %.4f\n", r.mean.ssim_input, r.mean.ssim_a, r.mean.ssim_b);
  if (r.psnr_test) std::printf("psnr paired t %.4f p %.3g\n", r.psnr_test->t_stat, r.psnr_test->p_two_sided);
  if (r.ssim_test) std::printf("ssim paired t %.4f p %.3g\n", r.ssim_test->t_stat, r.ssim_test->p_two_sided);
  for (const std::string& note : r.notes) std::printf("note: %s\n", note.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-level-aware volumetric denoising experiments"};
  app.require_subcommand(1);

  Common sim_c, patch_c, train_c, den_c, eval_c;
  CLI::App* sim = app.add_subcommand("simulate", "Generate paired phantom datasets");
  add_common(sim, sim_c);

  CLI::App* patches = app.add_subcommand("patches", "Build the patch store and descriptor manifest");
  add_common(patches, patch_c);
  std::string dataset;
  patches->add_option("dataset", dataset, "Dataset directory from simulate")->required();

  CLI::App* train = app.add_subcommand("train", "Train a denoiser on a patch store");
  add_common(train, train_c);
  std::string store;
  TrainOptions topts;
  bool use_nle = false;
  bool no_nle = false;
  std::optional<std::size_t> stop_at, steps;
  train->add_option("store", store, "Patch store directory")->required();
  train->add_flag("--use-nle", use_nle, "Condition on the noise-level embedding (default)");
  train->add_flag("--no-nle", no_nle, "Train the backbone without the embedding");
  train->add_flag("--resume", topts.resume, "Continue from the checkpoint in --out");
  train->add_option("--steps", steps, "Total steps, overrides the config");
  train->add_option("--stop-at", stop_at, "Checkpoint and stop after this step count");

  CLI::App* denoise = app.add_subcommand("denoise", "Denoise a volume with a checkpoint");
  add_common(denoise, den_c);
  std::string input, checkpoint;
  std::optional<std::size_t> patch_size, stride;
  std::optional<double> fraction;
  denoise->add_option("input", input, "Input NVOL volume")->required();
  denoise->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  denoise->add_option("--patch", patch_size, "Patch edge (default: train.patch)");
  denoise->add_option("--stride", stride, "Window stride (default: eval.stride)");
  denoise->add_option("--fraction", fraction, "SUV-normalise a counts input acquired at this dose fraction");

  CLI::App* eval = app.add_subcommand("eval", "Metrics, paired tests and box data");
  add_common(eval, eval_c);
  std::string pairing, csv;
  auto* pairing_opt = eval->add_option("--pairing", pairing, "Pairing manifest (JSON)");
  auto* csv_opt = eval->add_option("--from-csv", csv, "Import a metrics CSV instead of volumes");
  pairing_opt->excludes(csv_opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim) {
      const ExperimentConfig cfg = resolve(sim_c);
      cmd_simulate(cfg, cfg.out);
      std::printf("wrote dataset to %s\n", cfg.out.string().c_str());
    } else if (*patches) {
      const ExperimentConfig cfg = resolve(patch_c);
      const PatchStoreSummary s = cmd_patches(dataset, cfg, cfg.out);
      std::printf("patches %zu (excluded %zu)\n", s.patch_count, s.excluded.size());
      for (std::size_t b = 0; b < kNoiseBinCount; ++b) {
        std::printf("  %s %zu\n", std::string(to_string(static_cast<NoiseBin>(b))).c_str(), s.bin_counts[b]);
      }
      for (const ExcludedPatch& x : s.excluded) {
        std::fprintf(stderr, "excluded %s (%zu,%zu,%zu): %s\n", x.volume_id.c_str(), x.origin[0], x.origin[1],
                     x.origin[2], x.reason.c_str());
      }
    } else if (*train) {
      if (no_nle && use_nle) throw Error(ErrorKind::Config, "--use-nle and --no-nle are exclusive");
      topts.use_nle = !no_nle;
      const ExperimentConfig cfg = resolve(train_c);
      topts.stop_at = stop_at;
      topts.total_steps = steps;
      const TrainSummary s = cmd_train(store, cfg, topts, cfg.out);
      std::printf("steps %zu (iteration %zu) loss %.6g -> %.6g\n", s.steps_run, s.iteration, s.first_loss,
                  s.last_loss);
    } else if (*denoise) {
      const ExperimentConfig cfg = resolve(den_c);
      DenoiseOptions o;
      o.patch_size = patch_size.value_or(cfg.train.patch);
      o.stride = stride.value_or(cfg.eval.stride);
      o.fraction = fraction;
      o.threads = cfg.threads;
      cmd_denoise(input, checkpoint, cfg, o, cfg.out);
      std::printf("wrote %s\n", cfg.out.string().c_str());
    } else if (*eval) {
      const ExperimentConfig cfg = resolve(eval_c);
      if (pairing.empty() == csv.empty()) throw Error(ErrorKind::Config, "eval needs exactly one of --pairing, --from-csv");
      const EvaluationReport r = csv.empty() ? cmd_eval(pairing, cfg, cfg.out) : cmd_eval_csv(csv, cfg.out);
      print_report(r);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
