#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "avmae/errors.hpp"
#include "avmae/flops.hpp"
#include "avmae/model.hpp"
#include "avmae/losses.hpp"
#include "avmae/schedulers.hpp"
#include "avmae/synthetic.hpp"

namespace avmae {

using json = nlohmann::json;

struct OptimizerConfig {
    double lr = 4e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 1e-5;
    double eps = 1e-8;
    double min_lr = 1e-6;
    size_t warmup_epochs = 8;
    bool lr_scale_with_batch = false;
};

struct DiffusionConfig {
    size_t steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double phi = 0.8;
    bool alpha_bar_uses_raw_beta = false;

    DiffusionSchedule build() const {
        return build_schedule(steps, beta_start, beta_end, phi, alpha_bar_uses_raw_beta);
    }
};

struct DataConfig {
    size_t audio_time = 1024;
    size_t audio_freq = 128;
    size_t audio_patch_time = 16;
    size_t audio_patch_freq = 16;
    size_t video_frames = 16;
    size_t video_height = 224;
    size_t video_width = 224;
    size_t video_channels = 3;
    size_t video_patch_frames = 2;
    size_t video_patch_space = 16;
    size_t dataset_size = 64;
    size_t eval_pairs = 64;
    size_t synth_atoms = 3;
    double synth_noise_std = 0.05;
    size_t synth_latent_dim = 6;

    SyntheticConfig synthetic() const {
        SyntheticConfig s;
        s.audio_time = audio_time;
        s.audio_freq = audio_freq;
        s.video_frames = video_frames;
        s.video_height = video_height;
        s.video_width = video_width;
        s.atoms = synth_atoms;
        s.noise_std = synth_noise_std;
        s.latent_dim = synth_latent_dim;
        return s;
    }
};

struct RunConfig {
    Mode mode = Mode::diffmavil;
    uint64_t seed = 0;
    size_t base_batch = 8;
    bool adaptive_batching = false;
    size_t steps_override = 0;  // 0 = run the full schedule
    size_t contrastive_passes = 4;
    std::string out_dir = "runs/out";

    CurriculumSchedule curriculum = CurriculumSchedule::fixed(0.8, 1);
    ModelConfig model;
    DiffusionConfig diffusion;
    OptimizerConfig optimizer;
    LossWeights loss;
    DataConfig data;

    size_t epochs() const { return curriculum.total_epochs; }

    WorkloadSpec workload() const {
        WorkloadSpec w;
        w.model = model;
        w.curriculum = curriculum;
        w.dataset_size = data.dataset_size;
        w.base_batch = base_batch;
        w.adaptive_batching = adaptive_batching;
        w.contrastive_passes = contrastive_passes;
        return w;
    }
};

namespace config_detail {

inline void check_known_keys(const json& j, const std::string& path,
                             const std::set<std::string>& allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ConfigError(path + "." + it.key() + ": unknown field");
        }
    }
}

template <typename T>
T get_number(const json& j, const std::string& path, const char* key, T def) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(path + "." + key + ": expected a number");
    } else {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.template get<int64_t>() >= 0)) {
            throw ConfigError(path + "." + key + ": expected a non-negative integer");
        }
    }
    return v.template get<T>();
}

inline bool get_bool(const json& j, const std::string& path, const char* key, bool def) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_boolean()) throw ConfigError(path + "." + key + ": expected a boolean");
    return j.at(key).get<bool>();
}

inline std::string get_string(const json& j, const std::string& path, const char* key,
                              const std::string& def) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_string()) throw ConfigError(path + "." + key + ": expected a string");
    return j.at(key).get<std::string>();
}

inline Mode parse_mode(const std::string& s, const std::string& path) {
    if (s == "diffmavil") return Mode::diffmavil;
    if (s == "mavil_baseline") return Mode::mavil_baseline;
    if (s == "audiomae") return Mode::audiomae;
    if (s == "audiomae_diffusion") return Mode::audiomae_diffusion;
    throw ConfigError(path + ": unknown mode '" + s +
                      "' (expected diffmavil, mavil_baseline, audiomae, audiomae_diffusion)");
}

}  // namespace config_detail

inline RunConfig parse_run_config(const json& j) {
    using namespace config_detail;
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    check_known_keys(j, "config",
                     {"mode", "seed", "epochs", "base_batch", "adaptive_batching",
                      "contrastive_passes", "out_dir", "masking", "model", "diffusion",
                      "optimizer", "loss", "data"});

    RunConfig cfg;
    cfg.mode = parse_mode(get_string(j, "config", "mode", "diffmavil"), "config.mode");
    cfg.seed = get_number<uint64_t>(j, "config", "seed", 0);
    cfg.base_batch = get_number<size_t>(j, "config", "base_batch", 8);
    cfg.adaptive_batching = get_bool(j, "config", "adaptive_batching", false);
    cfg.out_dir = get_string(j, "config", "out_dir", "runs/out");
    const size_t epochs = get_number<size_t>(j, "config", "epochs", 1);

    // masking
    {
        const json m = j.contains("masking") ? j.at("masking") : json::object();
        if (!m.is_object()) throw ConfigError("config.masking: expected an object");
        check_known_keys(m, "config.masking", {"kind", "rho", "rho1", "rho2"});
        const std::string kind = get_string(m, "config.masking", "kind", "fixed");
        if (kind == "fixed") {
            const double rho = get_number<double>(m, "config.masking", "rho", 0.8);
            cfg.curriculum = CurriculumSchedule::fixed(rho, epochs);
        } else if (kind == "linear") {
            const double r1 = get_number<double>(m, "config.masking", "rho1", 0.9);
            const double r2 = get_number<double>(m, "config.masking", "rho2", 0.8);
            cfg.curriculum = CurriculumSchedule::linear(r1, r2, epochs);
        } else {
            throw ConfigError("config.masking.kind: expected 'fixed' or 'linear', got '" +
                              kind + "'");
        }
    }

    // data
    {
        const json d = j.contains("data") ? j.at("data") : json::object();
        if (!d.is_object()) throw ConfigError("config.data: expected an object");
        check_known_keys(d, "config.data",
                         {"audio_time", "audio_freq", "audio_patch_time", "audio_patch_freq",
                          "video_frames", "video_height", "video_width", "video_channels",
                          "video_patch_frames", "video_patch_space", "dataset_size",
                          "eval_pairs", "synth_atoms", "synth_noise_std",
                          "synth_latent_dim"});
        DataConfig& dc = cfg.data;
        dc.audio_time = get_number<size_t>(d, "config.data", "audio_time", 1024);
        dc.audio_freq = get_number<size_t>(d, "config.data", "audio_freq", 128);
        dc.audio_patch_time = get_number<size_t>(d, "config.data", "audio_patch_time", 16);
        dc.audio_patch_freq = get_number<size_t>(d, "config.data", "audio_patch_freq", 16);
        dc.video_frames = get_number<size_t>(d, "config.data", "video_frames", 16);
        dc.video_height = get_number<size_t>(d, "config.data", "video_height", 224);
        dc.video_width = get_number<size_t>(d, "config.data", "video_width", 224);
        dc.video_channels = get_number<size_t>(d, "config.data", "video_channels", 3);
        dc.video_patch_frames = get_number<size_t>(d, "config.data", "video_patch_frames", 2);
        dc.video_patch_space = get_number<size_t>(d, "config.data", "video_patch_space", 16);
        dc.dataset_size = get_number<size_t>(d, "config.data", "dataset_size", 64);
        dc.eval_pairs = get_number<size_t>(d, "config.data", "eval_pairs", 64);
        dc.synth_atoms = get_number<size_t>(d, "config.data", "synth_atoms", 3);
        dc.synth_noise_std = get_number<double>(d, "config.data", "synth_noise_std", 0.05);
        dc.synth_latent_dim = get_number<size_t>(d, "config.data", "synth_latent_dim", 6);

        auto divisible = [](size_t extent, size_t patch, const char* field) {
            if (patch == 0 || extent == 0 || extent % patch != 0) {
                throw ConfigError(std::string("config.data.") + field + ": extent " +
                                  std::to_string(extent) + " not divisible by patch " +
                                  std::to_string(patch));
            }
        };
        divisible(dc.audio_time, dc.audio_patch_time, "audio_time");
        divisible(dc.audio_freq, dc.audio_patch_freq, "audio_freq");
        if (mode_uses_video(cfg.mode)) {
            divisible(dc.video_frames, dc.video_patch_frames, "video_frames");
            divisible(dc.video_height, dc.video_patch_space, "video_height");
            divisible(dc.video_width, dc.video_patch_space, "video_width");
            if (dc.video_channels == 0) {
                throw ConfigError("config.data.video_channels: must be >= 1");
            }
        }
        if (dc.dataset_size == 0) throw ConfigError("config.data.dataset_size: must be >= 1");
    }

    // model
    {
        const json m = j.contains("model") ? j.at("model") : json::object();
        if (!m.is_object()) throw ConfigError("config.model: expected an object");
        check_known_keys(m, "config.model",
                         {"enc_dim", "enc_blocks", "enc_heads", "fusion_blocks",
                          "fusion_heads", "dec_dim", "dec_blocks", "dec_heads",
                          "video_attention", "audio_attention", "window",
                          "shifted_windows", "project_then_mask",
                          "cross_attention_direction", "ln_eps"});
        ModelConfig& mc = cfg.model;
        mc.mode = cfg.mode;
        mc.enc_dim = get_number<size_t>(m, "config.model", "enc_dim", 768);
        mc.enc_blocks = get_number<size_t>(m, "config.model", "enc_blocks", 12);
        mc.enc_heads = get_number<size_t>(m, "config.model", "enc_heads", 12);
        mc.fusion_blocks = get_number<size_t>(m, "config.model", "fusion_blocks", 2);
        mc.fusion_heads = get_number<size_t>(m, "config.model", "fusion_heads", 12);
        mc.dec_dim = get_number<size_t>(m, "config.model", "dec_dim", 512);
        mc.dec_blocks = get_number<size_t>(m, "config.model", "dec_blocks", 8);
        mc.dec_heads = get_number<size_t>(m, "config.model", "dec_heads", 16);
        mc.decoder_window = get_number<size_t>(m, "config.model", "window", 16);
        mc.shifted_windows = get_bool(m, "config.model", "shifted_windows", false);
        mc.project_then_mask = get_bool(m, "config.model", "project_then_mask",
                                        cfg.mode == Mode::mavil_baseline);
        mc.ln_eps = get_number<double>(m, "config.model", "ln_eps", 1e-6);
        mc.masking_ratio = cfg.curriculum.rho1;

        const std::string va = get_string(m, "config.model", "video_attention",
                                          cfg.mode == Mode::mavil_baseline ? "self" : "cross");
        if (va == "self") {
            mc.video_decoder_attention = AttentionKind::self_attention;
        } else if (va == "cross") {
            mc.video_decoder_attention = AttentionKind::cross_attention;
        } else {
            throw ConfigError("config.model.video_attention: expected 'self' or 'cross'");
        }
        const std::string aa =
            get_string(m, "config.model", "audio_attention", "local_window");
        if (aa == "self") {
            mc.audio_decoder_attention = AttentionKind::self_attention;
        } else if (aa == "local_window") {
            mc.audio_decoder_attention = AttentionKind::local_window;
        } else {
            throw ConfigError("config.model.audio_attention: expected 'self' or 'local_window'");
        }
        const std::string dir = get_string(m, "config.model", "cross_attention_direction",
                                           "masked_queries");
        if (dir == "masked_queries") {
            mc.cross_attention_direction = ModelConfig::CrossDirection::masked_queries;
        } else if (dir == "visible_queries") {
            mc.cross_attention_direction = ModelConfig::CrossDirection::visible_queries;
        } else {
            throw ConfigError("config.model.cross_attention_direction: expected "
                              "'masked_queries' or 'visible_queries'");
        }

        mc.audio.grid_dims = {cfg.data.audio_time / cfg.data.audio_patch_time,
                              cfg.data.audio_freq / cfg.data.audio_patch_freq};
        mc.audio.patch_dim = cfg.data.audio_patch_time * cfg.data.audio_patch_freq;
        if (mode_uses_video(cfg.mode)) {
            mc.video.grid_dims = {cfg.data.video_frames / cfg.data.video_patch_frames,
                                  cfg.data.video_height / cfg.data.video_patch_space,
                                  cfg.data.video_width / cfg.data.video_patch_space};
            mc.video.patch_dim = cfg.data.video_patch_frames * cfg.data.video_patch_space *
                                 cfg.data.video_patch_space * cfg.data.video_channels;
        }
        mc.validate();
    }

    // diffusion
    {
        const json d = j.contains("diffusion") ? j.at("diffusion") : json::object();
        if (!d.is_object()) throw ConfigError("config.diffusion: expected an object");
        check_known_keys(d, "config.diffusion",
                         {"steps", "beta_start", "beta_end", "phi", "alpha_bar_uses_raw_beta"});
        cfg.diffusion.steps = get_number<size_t>(d, "config.diffusion", "steps", 1000);
        cfg.diffusion.beta_start = get_number<double>(d, "config.diffusion", "beta_start", 1e-4);
        cfg.diffusion.beta_end = get_number<double>(d, "config.diffusion", "beta_end", 0.02);
        cfg.diffusion.phi = get_number<double>(d, "config.diffusion", "phi", 0.8);
        cfg.diffusion.alpha_bar_uses_raw_beta =
            get_bool(d, "config.diffusion", "alpha_bar_uses_raw_beta", false);
        if (mode_uses_diffusion(cfg.mode)) cfg.diffusion.build();  // validates ranges
    }

    // optimizer
    {
        const json o = j.contains("optimizer") ? j.at("optimizer") : json::object();
        if (!o.is_object()) throw ConfigError("config.optimizer: expected an object");
        check_known_keys(o, "config.optimizer",
                         {"lr", "beta1", "beta2", "weight_decay", "eps", "min_lr",
                          "warmup_epochs", "lr_scale_with_batch"});
        OptimizerConfig& oc = cfg.optimizer;
        oc.lr = get_number<double>(o, "config.optimizer", "lr", 4e-4);
        oc.beta1 = get_number<double>(o, "config.optimizer", "beta1", 0.9);
        oc.beta2 = get_number<double>(o, "config.optimizer", "beta2", 0.95);
        oc.weight_decay = get_number<double>(o, "config.optimizer", "weight_decay", 1e-5);
        oc.eps = get_number<double>(o, "config.optimizer", "eps", 1e-8);
        oc.min_lr = get_number<double>(o, "config.optimizer", "min_lr", 1e-6);
        oc.warmup_epochs = get_number<size_t>(o, "config.optimizer", "warmup_epochs", 8);
        oc.lr_scale_with_batch = get_bool(o, "config.optimizer", "lr_scale_with_batch", false);
        if (!(oc.lr > 0.0)) throw ConfigError("config.optimizer.lr: must be > 0");
        if (!(oc.beta1 >= 0.0 && oc.beta1 < 1.0) || !(oc.beta2 >= 0.0 && oc.beta2 < 1.0)) {
            throw ConfigError("config.optimizer.beta1/beta2: must lie in [0,1)");
        }
    }

    // loss
    {
        const json l = j.contains("loss") ? j.at("loss") : json::object();
        if (!l.is_object()) throw ConfigError("config.loss: expected an object");
        check_known_keys(l, "config.loss",
                         {"lambda_inter", "lambda_intra", "temperature", "mse_masked_only"});
        cfg.loss.lambda_inter = get_number<double>(l, "config.loss", "lambda_inter", 0.01);
        cfg.loss.lambda_intra = get_number<double>(l, "config.loss", "lambda_intra", 0.01);
        cfg.loss.temperature = get_number<double>(l, "config.loss", "temperature", 0.1);
        cfg.loss.mse_masked_only = get_bool(l, "config.loss", "mse_masked_only", false);
        if (!(cfg.loss.temperature > 0.0)) {
            throw ConfigError("config.loss.temperature: must be > 0");
        }
        if (cfg.loss.lambda_inter < 0.0 || cfg.loss.lambda_intra < 0.0) {
            throw ConfigError("config.loss.lambda_inter/lambda_intra: must be >= 0");
        }
    }

    cfg.contrastive_passes = get_number<size_t>(j, "config", "contrastive_passes",
                                                mode_uses_video(cfg.mode) ? 4 : 2);
    cfg.workload().views();  // validates divisibility

    if (cfg.base_batch == 0) throw ConfigError("config.base_batch: must be >= 1");
    const bool contrastive = cfg.loss.lambda_inter > 0.0 || cfg.loss.lambda_intra > 0.0;
    if (contrastive) {
        if (cfg.base_batch < 2) {
            throw ConfigError("config.base_batch: contrastive terms need batches of >= 2");
        }
        BatchPlan plan = BatchPlan::make(cfg.curriculum, cfg.base_batch,
                                         cfg.data.dataset_size, cfg.adaptive_batching);
        for (size_t e = 0; e < cfg.epochs(); ++e) {
            for (size_t b : epoch_batch_sizes(cfg.data.dataset_size, batch_size_at(plan, e))) {
                if (b < 2) {
                    throw ConfigError("config.base_batch: epoch " + std::to_string(e) +
                                      " would run a single-sample step; contrastive terms "
                                      "need batches of >= 2");
                }
            }
        }
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw ConfigError("config: cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config: JSON parse error in '" + path + "': " + e.what());
    }
    return parse_run_config(j);
}

// Fully-resolved echo of a parsed config (every default made explicit).
inline json run_config_to_json(const RunConfig& cfg) {
    json j;
    j["mode"] = mode_name(cfg.mode);
    j["seed"] = cfg.seed;
    j["epochs"] = cfg.epochs();
    j["base_batch"] = cfg.base_batch;
    j["adaptive_batching"] = cfg.adaptive_batching;
    j["contrastive_passes"] = cfg.contrastive_passes;
    j["out_dir"] = cfg.out_dir;
    j["masking"] = {
        {"kind", cfg.curriculum.kind == CurriculumSchedule::Kind::fixed ? "fixed" : "linear"},
        {"rho1", cfg.curriculum.rho1},
        {"rho2", cfg.curriculum.rho2}};
    j["model"] = {
        {"enc_dim", cfg.model.enc_dim},
        {"enc_blocks", cfg.model.enc_blocks},
        {"enc_heads", cfg.model.enc_heads},
        {"fusion_blocks", cfg.model.fusion_blocks},
        {"fusion_heads", cfg.model.fusion_heads},
        {"dec_dim", cfg.model.dec_dim},
        {"dec_blocks", cfg.model.dec_blocks},
        {"dec_heads", cfg.model.dec_heads},
        {"video_attention",
         cfg.model.video_decoder_attention == AttentionKind::cross_attention ? "cross"
                                                                             : "self"},
        {"audio_attention",
         cfg.model.audio_decoder_attention == AttentionKind::local_window ? "local_window"
                                                                          : "self"},
        {"window", cfg.model.decoder_window},
        {"shifted_windows", cfg.model.shifted_windows},
        {"project_then_mask", cfg.model.project_then_mask},
        {"cross_attention_direction",
         cfg.model.cross_attention_direction == ModelConfig::CrossDirection::masked_queries
             ? "masked_queries"
             : "visible_queries"},
        {"ln_eps", cfg.model.ln_eps},
        {"audio_grid", cfg.model.audio.grid_dims},
        {"audio_patch_dim", cfg.model.audio.patch_dim},
        {"video_grid", cfg.model.video.grid_dims},
        {"video_patch_dim", cfg.model.video.patch_dim}};
    j["diffusion"] = {{"steps", cfg.diffusion.steps},
                      {"beta_start", cfg.diffusion.beta_start},
                      {"beta_end", cfg.diffusion.beta_end},
                      {"phi", cfg.diffusion.phi},
                      {"alpha_bar_uses_raw_beta", cfg.diffusion.alpha_bar_uses_raw_beta},
                      {"enabled", mode_uses_diffusion(cfg.mode)}};
    j["optimizer"] = {{"lr", cfg.optimizer.lr},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"weight_decay", cfg.optimizer.weight_decay},
                      {"eps", cfg.optimizer.eps},
                      {"min_lr", cfg.optimizer.min_lr},
                      {"warmup_epochs", cfg.optimizer.warmup_epochs},
                      {"lr_scale_with_batch", cfg.optimizer.lr_scale_with_batch}};
    j["loss"] = {{"lambda_inter", cfg.loss.lambda_inter},
                 {"lambda_intra", cfg.loss.lambda_intra},
                 {"temperature", cfg.loss.temperature},
                 {"mse_masked_only", cfg.loss.mse_masked_only}};
    j["data"] = {{"audio_time", cfg.data.audio_time},
                 {"audio_freq", cfg.data.audio_freq},
                 {"audio_patch_time", cfg.data.audio_patch_time},
                 {"audio_patch_freq", cfg.data.audio_patch_freq},
                 {"video_frames", cfg.data.video_frames},
                 {"video_height", cfg.data.video_height},
                 {"video_width", cfg.data.video_width},
                 {"video_channels", cfg.data.video_channels},
                 {"video_patch_frames", cfg.data.video_patch_frames},
                 {"video_patch_space", cfg.data.video_patch_space},
                 {"dataset_size", cfg.data.dataset_size},
                 {"eval_pairs", cfg.data.eval_pairs},
                 {"synth_atoms", cfg.data.synth_atoms},
                 {"synth_noise_std", cfg.data.synth_noise_std},
                 {"synth_latent_dim", cfg.data.synth_latent_dim}};
    return j;
}

}  // namespace avmae
