#include <fstream>
// Command-line entry points for the separation pipeline:
//   synth-data  generate a synthetic speech/music corpus
//   analyze     estimate the latent node count from the data distribution
//   train       train the multinode VAE, record losses, locate the window
//   separate    run a checkpoint + RPCA mask over one file
//   evaluate    score mixture/reference pairs before and after separation

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mnvae/mnvae.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string profile;
  // Values only applied when the flag was passed.
  std::optional<std::size_t> nodes, epochs, batch_size, rpca_max_iter;
  std::optional<double> lambda_scale, mask_gain, mask_alpha, rpca_tol;
  std::optional<double> kl_weight_start, kl_weight_end, learning_rate;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_dir, checkpoint_dir, output_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file (mirrors PipelineConfig)");
  cmd->add_option("--profile", args.profile, "configuration profile: paper (default) or desk")
      ->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--nodes", args.nodes, "latent nodes K");
  cmd->add_option("--epochs", args.epochs, "training epochs");
  cmd->add_option("--batch-size", args.batch_size, "segments per optimizer step");
  cmd->add_option("--learning-rate", args.learning_rate, "Adam learning rate");
  cmd->add_option("--kl-weight-start", args.kl_weight_start, "annealing start weight");
  cmd->add_option("--kl-weight-end", args.kl_weight_end, "annealing end weight");
  cmd->add_option("--seed", args.seed, "RNG seed");
  cmd->add_option("--data-dir", args.data_dir, "directory of training/analysis WAVs");
  cmd->add_option("--checkpoint-dir", args.checkpoint_dir, "checkpoint directory");
  cmd->add_option("--output-dir", args.output_dir, "artifact directory");
  cmd->add_option("--lambda-scale", args.lambda_scale, "RPCA lambda scale (0.3 default)");
  cmd->add_option("--mask-gain", args.mask_gain, "mask gain factor g");
  cmd->add_option("--mask-alpha", args.mask_alpha, "mask sigmoid slope");
  cmd->add_option("--rpca-tol", args.rpca_tol, "RPCA residual tolerance");
  cmd->add_option("--rpca-max-iter", args.rpca_max_iter, "RPCA iteration cap");
}

mnvae::PipelineConfig build_config(const CommonArgs& args) {
  // Defaults, then profile, then config file, then explicit flags.
  mnvae::PipelineConfig cfg;
  if (args.profile == "desk") mnvae::apply_desk_profile(cfg);
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) throw std::runtime_error("cannot open config " + args.config_path);
    nlohmann::json j = nlohmann::json::parse(in);
    if (args.profile.empty() && j.contains("profile") && j["profile"] == "desk")
      mnvae::apply_desk_profile(cfg);
    mnvae::from_json(j, cfg);
  }
  if (args.nodes) cfg.model.num_nodes = *args.nodes;
  if (args.epochs) cfg.train.epochs = *args.epochs;
  if (args.batch_size) cfg.train.batch_size = *args.batch_size;
  if (args.learning_rate) cfg.train.adam.lr = *args.learning_rate;
  if (args.kl_weight_start) cfg.train.kl_weight_start = *args.kl_weight_start;
  if (args.kl_weight_end) cfg.train.kl_weight_end = *args.kl_weight_end;
  if (args.seed) cfg.train.seed = *args.seed;
  if (args.data_dir) cfg.paths.data_dir = *args.data_dir;
  if (args.checkpoint_dir) cfg.paths.checkpoint_dir = *args.checkpoint_dir;
  if (args.output_dir) cfg.paths.output_dir = *args.output_dir;
  if (args.lambda_scale) cfg.rpca.lambda_scale = *args.lambda_scale;
  if (args.mask_gain) cfg.mask.gain = *args.mask_gain;
  if (args.mask_alpha) cfg.mask.alpha = *args.mask_alpha;
  if (args.rpca_tol) cfg.rpca.tol = *args.rpca_tol;
  if (args.rpca_max_iter) cfg.rpca.max_iter = *args.rpca_max_iter;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unsupervised speech/music separation (multinode VAE + RPCA mask)"};
  app.require_subcommand(1);

  CommonArgs train_args, analyze_args, separate_args, evaluate_args;

  auto* train_cmd = app.add_subcommand("train", "train the VAE and locate the separation window");
  add_common(train_cmd, train_args);

  auto* analyze_cmd = app.add_subcommand("analyze", "estimate the latent node count");
  std::size_t max_components = 8;
  add_common(analyze_cmd, analyze_args);
  analyze_cmd->add_option("--max-components", max_components, "largest GMM size on the curve");

  auto* separate_cmd = app.add_subcommand("separate", "separate speech from one WAV");
  std::string ck_path, in_wav, out_wav;
  mnvae::SeparateOptions sep_opts;
  add_common(separate_cmd, separate_args);
  separate_cmd->add_option("--checkpoint", ck_path, "trained checkpoint");
  separate_cmd->add_option("--in", in_wav, "input WAV")->required();
  separate_cmd->add_option("--out", out_wav, "output WAV")->required();
  separate_cmd->add_flag("--bypass-vae", sep_opts.bypass_vae,
                         "feed the mixture magnitude straight to RPCA");
  separate_cmd->add_flag("--mask-ones", sep_opts.mask_ones, "skip masking (identity enhancement)");
  separate_cmd->add_option("--dump-dir", sep_opts.dump_dir, "dump intermediate spectrograms here");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "SI-SDR before/after separation");
  std::string pairs_csv, eval_out = "eval.csv";
  mnvae::SeparateOptions eval_opts;
  std::string eval_ck;
  add_common(evaluate_cmd, evaluate_args);
  evaluate_cmd->add_option("--checkpoint", eval_ck, "trained checkpoint");
  evaluate_cmd->add_option("--pairs", pairs_csv, "CSV of mixture,reference paths")->required();
  evaluate_cmd->add_option("--out", eval_out, "output CSV");
  evaluate_cmd->add_flag("--bypass-vae", eval_opts.bypass_vae, "score the RPCA mask alone");

  auto* synth_cmd = app.add_subcommand("synth-data", "generate a synthetic corpus");
  std::string synth_out;
  mnvae::SynthDataOptions synth_opts;
  synth_cmd->add_option("--out", synth_out, "corpus directory")->required();
  synth_cmd->add_option("--train-speech-clips", synth_opts.train_speech_clips);
  synth_cmd->add_option("--train-mix-clips", synth_opts.train_mix_clips);
  synth_cmd->add_option("--test-clips", synth_opts.test_clips);
  synth_cmd->add_option("--duration", synth_opts.clip_seconds, "clip length in seconds");
  synth_cmd->add_option("--modes", synth_opts.modes, "number of distinct voices");
  synth_cmd->add_option("--snr", synth_opts.snr_db, "speech-over-music ratio in dB");
  synth_cmd->add_option("--percussion", synth_opts.percussion_level, "percussive burst level");
  synth_cmd->add_option("--sample-rate", synth_opts.sample_rate);
  synth_cmd->add_option("--seed", synth_opts.seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return mnvae::cmd_train(build_config(train_args));
    if (*analyze_cmd) return mnvae::cmd_analyze(build_config(analyze_args), max_components);
    if (*separate_cmd)
      return mnvae::cmd_separate(build_config(separate_args), ck_path, in_wav, out_wav, sep_opts);
    if (*evaluate_cmd)
      return mnvae::cmd_evaluate(build_config(evaluate_args), eval_ck, pairs_csv, eval_out,
                                 eval_opts);
    if (*synth_cmd) return mnvae::cmd_synth_data(synth_out, synth_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
