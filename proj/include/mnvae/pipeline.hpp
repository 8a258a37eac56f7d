#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mnvae/audio.hpp"
#include "mnvae/gmm.hpp"
#include "mnvae/node_estimate.hpp"
#include "mnvae/rpca.hpp"
#include "mnvae/sisdr.hpp"
#include "mnvae/stft.hpp"
#include "mnvae/synth.hpp"
#include "mnvae/train.hpp"
#include "mnvae/vae.hpp"
#include "mnvae/window.hpp"

namespace mnvae {

/// Everything the command-line pipeline needs, mirrored 1:1 by the JSON
/// config file.
struct PipelineConfig {
  StftConfig stft;
  ModelConfig model;
  TrainConfig train;
  WindowConfig window;
  RpcaConfig rpca;
  MaskConfig mask;
  struct Paths {
    std::string data_dir;
    std::string checkpoint_dir;
    std::string output_dir;
  } paths;
};

/// Reduced-scale profile: 64-bin spectrograms, 64-wide recurrences, 16-dim
/// latents. The MSE threshold scales with the bin count (the loss sums over
/// bins); the KL threshold is per-node and stays put.
inline void apply_desk_profile(PipelineConfig& cfg) {
  cfg.stft.fft_size = 128;
  cfg.stft.hop = 64;
  cfg.model.input_dim = 64;
  cfg.model.enc_hidden = 64;
  cfg.model.dec_hidden = 64;
  cfg.model.latent_dim = 16;
  cfg.model.context_dim = 16;
  cfg.window.mse_threshold = 250.0 * 64.0 / 512.0;  // 31.25
  cfg.window.kl_threshold = 60.0;
}

// --- JSON (field names mirror the structs) ---------------------------------

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["stft"] = {{"fft_size", c.stft.fft_size}, {"hop", c.stft.hop}, {"window", c.stft.window}};
  j["model"] = {{"input_dim", c.model.input_dim},   {"enc_hidden", c.model.enc_hidden},
                {"dec_hidden", c.model.dec_hidden}, {"latent_dim", c.model.latent_dim},
                {"num_nodes", c.model.num_nodes},   {"context_dim", c.model.context_dim}};
  j["train"] = {{"epochs", c.train.epochs},
                {"learning_rate", c.train.adam.lr},
                {"beta1", c.train.adam.beta1},
                {"beta2", c.train.adam.beta2},
                {"adam_eps", c.train.adam.eps},
                {"kl_weight_start", c.train.kl_weight_start},
                {"kl_weight_end", c.train.kl_weight_end},
                {"batch_size", c.train.batch_size},
                {"segment_frames", c.train.segment_frames},
                {"clip_grad_norm", c.train.clip_grad_norm},
                {"seed", c.train.seed}};
  j["window"] = {{"mse_threshold", c.window.mse_threshold},
                 {"kl_threshold", c.window.kl_threshold}};
  j["rpca"] = {{"lambda_scale", c.rpca.lambda_scale},
               {"max_iter", c.rpca.max_iter},
               {"tol", c.rpca.tol},
               {"mu_init_factor", c.rpca.mu_init_factor},
               {"mu_growth", c.rpca.mu_growth}};
  j["mask"] = {{"gain", c.mask.gain}, {"alpha", c.mask.alpha}};
  j["paths"] = {{"data_dir", c.paths.data_dir},
                {"checkpoint_dir", c.paths.checkpoint_dir},
                {"output_dir", c.paths.output_dir}};
  return j;
}

inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
  auto get = [](const nlohmann::json& obj, const char* key, auto& dst) {
    if (obj.contains(key)) dst = obj.at(key).get<std::decay_t<decltype(dst)>>();
  };
  if (j.contains("stft")) {
    get(j["stft"], "fft_size", c.stft.fft_size);
    get(j["stft"], "hop", c.stft.hop);
    get(j["stft"], "window", c.stft.window);
  }
  if (j.contains("model")) {
    get(j["model"], "input_dim", c.model.input_dim);
    get(j["model"], "enc_hidden", c.model.enc_hidden);
    get(j["model"], "dec_hidden", c.model.dec_hidden);
    get(j["model"], "latent_dim", c.model.latent_dim);
    get(j["model"], "num_nodes", c.model.num_nodes);
    get(j["model"], "context_dim", c.model.context_dim);
  }
  if (j.contains("train")) {
    get(j["train"], "epochs", c.train.epochs);
    get(j["train"], "learning_rate", c.train.adam.lr);
    get(j["train"], "beta1", c.train.adam.beta1);
    get(j["train"], "beta2", c.train.adam.beta2);
    get(j["train"], "adam_eps", c.train.adam.eps);
    get(j["train"], "kl_weight_start", c.train.kl_weight_start);
    get(j["train"], "kl_weight_end", c.train.kl_weight_end);
    get(j["train"], "batch_size", c.train.batch_size);
    get(j["train"], "segment_frames", c.train.segment_frames);
    get(j["train"], "clip_grad_norm", c.train.clip_grad_norm);
    get(j["train"], "seed", c.train.seed);
  }
  if (j.contains("window")) {
    get(j["window"], "mse_threshold", c.window.mse_threshold);
    get(j["window"], "kl_threshold", c.window.kl_threshold);
  }
  if (j.contains("rpca")) {
    get(j["rpca"], "lambda_scale", c.rpca.lambda_scale);
    get(j["rpca"], "max_iter", c.rpca.max_iter);
    get(j["rpca"], "tol", c.rpca.tol);
    get(j["rpca"], "mu_init_factor", c.rpca.mu_init_factor);
    get(j["rpca"], "mu_growth", c.rpca.mu_growth);
  }
  if (j.contains("mask")) {
    get(j["mask"], "gain", c.mask.gain);
    get(j["mask"], "alpha", c.mask.alpha);
  }
  if (j.contains("paths")) {
    get(j["paths"], "data_dir", c.paths.data_dir);
    get(j["paths"], "checkpoint_dir", c.paths.checkpoint_dir);
    get(j["paths"], "output_dir", c.paths.output_dir);
  }
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  PipelineConfig cfg;
  if (j.contains("profile") && j["profile"].get<std::string>() == "desk") apply_desk_profile(cfg);
  from_json(j, cfg);
  return cfg;
}

// --- Spectrogram dumps ------------------------------------------------------
// magic "SPEC0001", five little-endian uint32 (frames, bins, sample_rate,
// fft_size, hop), then mag and phase as float32 row-major.

constexpr char kSpectrogramMagic[8] = {'S', 'P', 'E', 'C', '0', '0', '0', '1'};

inline void write_spectrogram(const Spectrogram& spec, const std::string& path) {
  std::vector<unsigned char> out;
  detail::put_bytes(out, kSpectrogramMagic, 8);
  const std::uint32_t dims[5] = {static_cast<std::uint32_t>(spec.frames()),
                                 static_cast<std::uint32_t>(spec.bins()),
                                 static_cast<std::uint32_t>(spec.sample_rate),
                                 static_cast<std::uint32_t>(spec.config.fft_size),
                                 static_cast<std::uint32_t>(spec.config.hop)};
  detail::put_bytes(out, dims, sizeof(dims));
  detail::put_f32_block(out, spec.mag.data);
  detail::put_f32_block(out, spec.phase.data);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_spectrogram: cannot open " + path);
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!os) throw std::runtime_error("write_spectrogram: short write to " + path);
}

inline Spectrogram read_spectrogram(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_spectrogram: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  detail::ByteReader r{bytes.data(), bytes.size()};
  char magic[8];
  r.read(magic, 8, "magic");
  if (std::memcmp(magic, kSpectrogramMagic, 8) != 0)
    throw std::runtime_error("read_spectrogram: " + path + " is not a spectrogram dump");
  Spectrogram spec;
  const std::uint32_t frames = r.u32("frames");
  const std::uint32_t bins = r.u32("bins");
  spec.sample_rate = static_cast<int>(r.u32("sample_rate"));
  spec.config.fft_size = r.u32("fft_size");
  spec.config.hop = r.u32("hop");
  spec.mag = Matrix(frames, bins);
  spec.phase = Matrix(frames, bins);
  r.f32_block(spec.mag.data, "mag");
  r.f32_block(spec.phase.data, "phase");
  return spec;
}

// --- Separation chain -------------------------------------------------------

struct SeparateOptions {
  bool bypass_vae = false;  // feed the mixture magnitude straight to RPCA
  bool mask_ones = false;   // skip masking (identity enhancement)
  std::string dump_dir;     // when set, write intermediate spectrograms
};

struct SeparationResult {
  AudioBuffer output;
  Spectrogram vae_spec;     // magnitude handed to RPCA (mixture phase)
  Spectrogram masked_spec;  // masked magnitude (mixture phase)
  RpcaDecomposition rpca_parts;
};

/// read -> stft -> VAE reconstruction (mean latents) -> RPCA -> soft mask ->
/// istft with the mixture phase. The model may be null only with bypass_vae.
inline SeparationResult separate_buffer(const VaeModel* model, const AudioBuffer& input,
                                        const PipelineConfig& cfg,
                                        const SeparateOptions& opts = {}) {
  AudioBuffer buf = normalize_peak(input);
  Spectrogram spec = stft(buf, cfg.stft);

  SeparationResult res;
  res.vae_spec = spec;
  if (!opts.bypass_vae) {
    if (model == nullptr) throw std::invalid_argument("separate_buffer: model required");
    if (model->cfg.input_dim != spec.bins())
      throw std::invalid_argument("separate_buffer: model input_dim does not match spectrogram");
    ForwardTrace trace;
    LatentPosterior post = encode(*model, spec.mag, trace);
    Matrix zero_noise(post.mu.rows, post.mu.cols);
    Matrix z = sample_latent(post, zero_noise);  // inference uses the mean
    Matrix x_r = decode(*model, z, spec.frames(), trace);
    // The decoder head is affine; clip negatives to keep a valid magnitude.
    for (double& val : x_r.data) val = std::max(val, 0.0);
    res.vae_spec.mag = std::move(x_r);
  }

  res.rpca_parts = rpca(res.vae_spec.mag, cfg.rpca);
  Matrix w;
  if (opts.mask_ones) {
    w = Matrix(res.vae_spec.mag.rows, res.vae_spec.mag.cols, 1.0);
  } else {
    w = soft_mask(res.rpca_parts.s, res.vae_spec.mag, cfg.mask);
  }
  res.masked_spec = res.vae_spec;
  res.masked_spec.mag = apply_mask(w, res.vae_spec.mag);

  res.output = istft(res.masked_spec);
  for (double& s : res.output.samples) s = std::clamp(s, -1.0, 1.0);

  if (!opts.dump_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(opts.dump_dir);
    write_spectrogram(spec, (fs::path(opts.dump_dir) / "mixture.spec").string());
    write_spectrogram(res.vae_spec, (fs::path(opts.dump_dir) / "vae_output.spec").string());
    Spectrogram parts = res.vae_spec;
    parts.mag = res.rpca_parts.l;
    write_spectrogram(parts, (fs::path(opts.dump_dir) / "low_rank.spec").string());
    parts.mag = res.rpca_parts.s;
    write_spectrogram(parts, (fs::path(opts.dump_dir) / "sparse.spec").string());
    write_spectrogram(res.masked_spec, (fs::path(opts.dump_dir) / "masked.spec").string());
  }
  return res;
}

// --- Evaluation --------------------------------------------------------------

struct EvalReport {
  struct Row {
    std::string file;
    double sdr_mixture;    // SI-SDR(reference, mixture)
    double sdr_separated;  // SI-SDR(reference, separated)
    double improvement;
  };
  std::vector<Row> rows;
  double mean_mixture = 0.0;
  double mean_separated = 0.0;
  double mean_improvement = 0.0;
};

/// Score each (mixture, reference) pair before and after separation. Signals
/// are truncated to the common length (synthesis loses up to one hop).
inline EvalReport evaluate_pairs(const VaeModel* model,
                                 const std::vector<std::pair<std::string, std::string>>& pairs,
                                 const PipelineConfig& cfg, const SeparateOptions& opts = {}) {
  EvalReport report;
  for (const auto& [mix_path, ref_path] : pairs) {
    AudioBuffer mix = read_wav(mix_path);
    AudioBuffer ref = read_wav(ref_path);
    if (mix.samples.size() != ref.samples.size())
      throw std::invalid_argument("evaluate: length mismatch between " + mix_path + " and " +
                                  ref_path);
    SeparationResult sep = separate_buffer(model, mix, cfg, opts);

    const std::size_t n = std::min(ref.samples.size(), sep.output.samples.size());
    AudioBuffer ref_t, mix_t, sep_t;
    ref_t.sample_rate = mix_t.sample_rate = sep_t.sample_rate = ref.sample_rate;
    ref_t.samples.assign(ref.samples.begin(), ref.samples.begin() + n);
    mix_t.samples.assign(mix.samples.begin(), mix.samples.begin() + n);
    sep_t.samples.assign(sep.output.samples.begin(), sep.output.samples.begin() + n);

    EvalReport::Row row;
    row.file = mix_path;
    row.sdr_mixture = si_sdr(ref_t, mix_t);
    row.sdr_separated = si_sdr(ref_t, sep_t);
    row.improvement = row.sdr_separated - row.sdr_mixture;
    report.rows.push_back(row);
  }
  if (!report.rows.empty()) {
    for (const auto& r : report.rows) {
      report.mean_mixture += r.sdr_mixture;
      report.mean_separated += r.sdr_separated;
      report.mean_improvement += r.improvement;
    }
    const double n = static_cast<double>(report.rows.size());
    report.mean_mixture /= n;
    report.mean_separated /= n;
    report.mean_improvement /= n;
  }
  return report;
}

inline void write_eval_csv(const EvalReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_eval_csv: cannot open " + path);
  os << "file,si_sdr_mixture_db,si_sdr_separated_db,improvement_db\n";
  char buf[512];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g\n", r.file.c_str(), r.sdr_mixture,
                  r.sdr_separated, r.improvement);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.17g,%.17g,%.17g\n", report.mean_mixture,
                report.mean_separated, report.mean_improvement);
  os << buf;
}

// --- Commands ----------------------------------------------------------------

namespace detail {

inline std::vector<std::string> list_wavs(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<Spectrogram> load_spectrograms(const std::string& dir,
                                                  const StftConfig& stft_cfg) {
  std::vector<Spectrogram> specs;
  for (const auto& path : list_wavs(dir))
    specs.push_back(stft(normalize_peak(read_wav(path)), stft_cfg));
  if (specs.empty()) throw std::runtime_error("no .wav files found in " + dir);
  return specs;
}

inline std::string checkpoint_name(std::size_t epoch) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "checkpoint_epoch_%03zu.mnvae", epoch);
  return buf;
}

}  // namespace detail

/// Train on every WAV in data_dir, write per-epoch checkpoints, losses.csv
/// and window.csv. Exit status 0 when a separation window exists, 2 when not.
inline int cmd_train(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  std::vector<Spectrogram> specs = detail::load_spectrograms(cfg.paths.data_dir, cfg.stft);
  fs::create_directories(cfg.paths.checkpoint_dir);
  fs::create_directories(cfg.paths.output_dir);

  VaeModel model = init_model(cfg.model, cfg.train.seed);
  CheckpointSink sink = [&](std::size_t epoch, const VaeModel& m, const AdamState& st) {
    save_checkpoint(m, &st,
                    (fs::path(cfg.paths.checkpoint_dir) / detail::checkpoint_name(epoch)).string());
  };
  LossTrace trace = train(model, specs, cfg.train, sink);
  write_loss_csv(trace, (fs::path(cfg.paths.output_dir) / "losses.csv").string());

  SeparationWindow win = detect_window(trace, cfg.window);
  write_window_csv(win, cfg.window, (fs::path(cfg.paths.output_dir) / "window.csv").string());

  if (win.has_selection) {
    std::cout << "separation window found: width " << window_width(win) << ", selected epoch "
              << win.selected_epoch << "\n";
    return 0;
  }
  std::cout << "no separation window under thresholds (mse " << cfg.window.mse_threshold
            << ", kl " << cfg.window.kl_threshold << ")\n";
  return 2;
}

/// PCA + GMM node-count analysis; writes curve.csv, density.csv and nodes.csv.
inline int cmd_analyze(const PipelineConfig& cfg, std::size_t max_components = 8) {
  namespace fs = std::filesystem;
  std::vector<Spectrogram> specs = detail::load_spectrograms(cfg.paths.data_dir, cfg.stft);
  fs::create_directories(cfg.paths.output_dir);

  Matrix feats = frame_features(specs);
  std::vector<std::size_t> k_range;
  for (std::size_t k = 1; k <= std::min<std::size_t>(max_components, feats.rows); ++k)
    k_range.push_back(k);
  LikelihoodCurve curve = likelihood_curve(feats, k_range, cfg.train.seed);
  NodeEstimate est = estimate_nodes(curve);

  {
    std::ofstream os((fs::path(cfg.paths.output_dir) / "curve.csv").string(), std::ios::trunc);
    os << "k,log_likelihood\n";
    char buf[96];
    for (const auto& [k, ll] : curve.points) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", k, ll);
      os << buf;
    }
  }
  {
    // 2-D histogram of the projected frames.
    const std::size_t grid = 60;
    double lo0 = 1e300, hi0 = -1e300, lo1 = 1e300, hi1 = -1e300;
    for (std::size_t i = 0; i < feats.rows; ++i) {
      lo0 = std::min(lo0, feats(i, 0));
      hi0 = std::max(hi0, feats(i, 0));
      lo1 = std::min(lo1, feats(i, 1));
      hi1 = std::max(hi1, feats(i, 1));
    }
    const double step0 = (hi0 - lo0) / grid, step1 = (hi1 - lo1) / grid;
    std::vector<std::size_t> counts(grid * grid, 0);
    for (std::size_t i = 0; i < feats.rows; ++i) {
      std::size_t b0 = step0 > 0 ? std::min<std::size_t>((feats(i, 0) - lo0) / step0, grid - 1) : 0;
      std::size_t b1 = step1 > 0 ? std::min<std::size_t>((feats(i, 1) - lo1) / step1, grid - 1) : 0;
      ++counts[b0 * grid + b1];
    }
    std::ofstream os((fs::path(cfg.paths.output_dir) / "density.csv").string(), std::ios::trunc);
    os << "x,y,count\n";
    char buf[128];
    for (std::size_t a = 0; a < grid; ++a) {
      for (std::size_t b = 0; b < grid; ++b) {
        if (counts[a * grid + b] == 0) continue;
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu\n", lo0 + (a + 0.5) * step0,
                      lo1 + (b + 0.5) * step1, counts[a * grid + b]);
        os << buf;
      }
    }
  }
  {
    std::ofstream os((fs::path(cfg.paths.output_dir) / "nodes.csv").string(), std::ios::trunc);
    os << "elbow_components,k,k_safe\n"
       << est.elbow_components << "," << est.k << "," << est.k_safe << "\n";
  }
  std::cout << "estimated latent nodes: " << est.k << " (elbow at " << est.elbow_components
            << " clusters; with safety margin: " << est.k_safe << ")\n";
  return 0;
}

/// Separate one file with a trained checkpoint.
inline int cmd_separate(const PipelineConfig& cfg, const std::string& checkpoint_path,
                        const std::string& in_wav, const std::string& out_wav,
                        const SeparateOptions& opts = {}) {
  VaeModel model;
  const VaeModel* model_ptr = nullptr;
  if (!opts.bypass_vae) {
    Checkpoint ck = load_checkpoint(checkpoint_path, cfg.model);
    model = std::move(ck.model);
    model_ptr = &model;
  }
  AudioBuffer input = read_wav(in_wav);
  if (input.samples.size() < cfg.stft.fft_size)
    throw std::runtime_error("separate: audio shorter than one analysis frame");
  SeparationResult res = separate_buffer(model_ptr, input, cfg, opts);
  write_wav(res.output, out_wav);
  return 0;
}

/// Parse "mixture,reference" lines.
inline std::vector<std::pair<std::string, std::string>> read_pairs_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_pairs_csv: cannot open " + path);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "mixture,reference") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("read_pairs_csv: malformed line: " + line);
    pairs.emplace_back(line.substr(0, comma), line.substr(comma + 1));
  }
  return pairs;
}

inline int cmd_evaluate(const PipelineConfig& cfg, const std::string& checkpoint_path,
                        const std::string& pairs_csv, const std::string& out_csv,
                        const SeparateOptions& opts = {}) {
  VaeModel model;
  const VaeModel* model_ptr = nullptr;
  if (!opts.bypass_vae) {
    Checkpoint ck = load_checkpoint(checkpoint_path, cfg.model);
    model = std::move(ck.model);
    model_ptr = &model;
  }
  EvalReport report = evaluate_pairs(model_ptr, read_pairs_csv(pairs_csv), cfg, opts);
  write_eval_csv(report, out_csv);
  std::cout << "mean SI-SDR: mixture " << report.mean_mixture << " dB, separated "
            << report.mean_separated << " dB, improvement " << report.mean_improvement << " dB\n";
  return 0;
}

// --- Synthetic corpus ---------------------------------------------------------

struct SynthDataOptions {
  std::size_t train_speech_clips = 5;
  std::size_t train_mix_clips = 5;
  std::size_t test_clips = 10;
  double clip_seconds = 4.0;
  std::size_t modes = 1;  // number of distinct voices
  double snr_db = 0.0;
  double percussion_level = 1.0;
  int sample_rate = 16000;
  std::uint64_t seed = 0;
};

/// Emit train/ (speech-only plus speech+music clips) and test/ (mixture +
/// reference pairs with pairs.csv).
inline int cmd_synth_data(const std::string& out_dir, const SynthDataOptions& opts) {
  namespace fs = std::filesystem;
  const fs::path train_dir = fs::path(out_dir) / "train";
  const fs::path test_dir = fs::path(out_dir) / "test";
  fs::create_directories(train_dir);
  fs::create_directories(test_dir);

  char name[64];
  for (std::size_t i = 0; i < opts.train_speech_clips; ++i) {
    AudioBuffer speech = synth_speech(opts.clip_seconds, opts.sample_rate,
                                      synth_voice(i % opts.modes), Rng::mix(opts.seed, 10 + i));
    std::snprintf(name, sizeof(name), "speech_%03zu.wav", i);
    write_wav(normalize_peak(speech), (train_dir / name).string());
  }
  for (std::size_t i = 0; i < opts.train_mix_clips; ++i) {
    AudioBuffer speech = synth_speech(opts.clip_seconds, opts.sample_rate,
                                      synth_voice(i % opts.modes), Rng::mix(opts.seed, 500 + i));
    AudioBuffer music = synth_music(opts.clip_seconds, opts.sample_rate, Rng::mix(opts.seed, 900 + i),
                                    0.5, opts.percussion_level);
    AudioBuffer mix = mix_at_snr(speech, music, opts.snr_db);
    std::snprintf(name, sizeof(name), "mix_%03zu.wav", i);
    write_wav(normalize_peak(mix), (train_dir / name).string());
  }

  std::ofstream pairs((test_dir / "pairs.csv").string(), std::ios::trunc);
  pairs << "mixture,reference\n";
  for (std::size_t i = 0; i < opts.test_clips; ++i) {
    AudioBuffer speech = synth_speech(opts.clip_seconds, opts.sample_rate,
                                      synth_voice(i % opts.modes), Rng::mix(opts.seed, 7000 + i));
    AudioBuffer music = synth_music(opts.clip_seconds, opts.sample_rate,
                                    Rng::mix(opts.seed, 7700 + i), 0.5, opts.percussion_level);
    AudioBuffer mix = mix_at_snr(speech, music, opts.snr_db);
    // One shared gain keeps mixture and reference aligned in scale.
    double peak = 0.0;
    for (double s : mix.samples) peak = std::max(peak, std::abs(s));
    const double gain = peak > 0 ? 0.95 / peak : 1.0;
    for (double& s : mix.samples) s *= gain;
    for (double& s : speech.samples) s *= gain;

    std::snprintf(name, sizeof(name), "mix_%03zu.wav", i);
    const std::string mix_path = (test_dir / name).string();
    write_wav(mix, mix_path);
    std::snprintf(name, sizeof(name), "ref_%03zu.wav", i);
    const std::string ref_path = (test_dir / name).string();
    write_wav(speech, ref_path);
    pairs << mix_path << "," << ref_path << "\n";
  }
  return 0;
}

}  // namespace mnvae
