#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "avmae/checkpoint.hpp"
#include "avmae/config.hpp"
#include "avmae/flops.hpp"
#include "avmae/losses.hpp"
#include "avmae/optimizer.hpp"
#include "avmae/synthetic.hpp"

namespace avmae {

// Instrumentation: audio-only modes must never touch the video pipeline.
struct RunCounters {
    size_t audio_samples_generated = 0;
    size_t video_clips_generated = 0;
};

struct MetricsRecord {
    size_t step = 0;
    size_t epoch = 0;
    double rho = 0.0;
    size_t batch_effective = 0;  // B_e from the plan
    size_t batch_actual = 0;     // samples in this step
    double lr = 0.0;
    LossBreakdown losses;
    double cumulative_flops = 0.0;
    double wall_seconds = 0.0;
};

inline json metrics_record_json(const MetricsRecord& r) {
    return json{{"step", r.step},
                {"epoch", r.epoch},
                {"rho", r.rho},
                {"batch_effective", r.batch_effective},
                {"batch_actual", r.batch_actual},
                {"lr", r.lr},
                {"mse_audio", r.losses.mse_audio},
                {"mse_video", r.losses.mse_video},
                {"nce_inter", r.losses.nce_inter},
                {"nce_intra_audio", r.losses.nce_intra_audio},
                {"nce_intra_video", r.losses.nce_intra_video},
                {"total", r.losses.total},
                {"cumulative_flops", r.cumulative_flops},
                {"wall_seconds", r.wall_seconds}};
}

namespace trainer_detail {

constexpr uint64_t kModelKey = 0x0dull;
constexpr uint64_t kTrainDataKey = 0x1000000ull;
constexpr uint64_t kEvalDataKey = 0x2000000ull;
constexpr uint64_t kEpochShuffleKey = 0x3000000ull;
constexpr uint64_t kStepKey = 0x4000000ull;
constexpr uint64_t kEvalPassKey = 0x5000000ull;

inline BatchInstance make_instance(const RunConfig& cfg, uint64_t data_key, uint64_t index,
                                   RunCounters& counters) {
    const Rng base(cfg.seed);
    LatentSpec latent = make_latent(base.fork(data_key + index).seed(),
                                    cfg.data.synth_latent_dim);
    const SyntheticConfig synth = cfg.data.synthetic();
    BatchInstance inst;
    inst.audio = patchify_audio(generate_spectrogram(latent, synth),
                                cfg.data.audio_patch_time, cfg.data.audio_patch_freq);
    ++counters.audio_samples_generated;
    if (mode_uses_video(cfg.mode)) {
        inst.video = patchify_video(generate_clip(latent, synth), cfg.data.video_patch_frames,
                                    cfg.data.video_patch_space, cfg.data.video_patch_space);
        ++counters.video_clips_generated;
    }
    return inst;
}

inline std::vector<BatchInstance> make_eval_instances(const RunConfig& cfg,
                                                      RunCounters& counters) {
    std::vector<BatchInstance> out;
    out.reserve(cfg.data.eval_pairs);
    for (size_t i = 0; i < cfg.data.eval_pairs; ++i) {
        out.push_back(make_instance(cfg, kEvalDataKey, i, counters));
    }
    return out;
}

}  // namespace trainer_detail

// Reconstruction MSE (audio + video) over held-out instances with frozen
// evaluation seeds, so before/after comparisons see identical masks, noise
// and timesteps.
inline double eval_reconstruction_mse(const Model& model,
                                      const std::vector<BatchInstance>& instances,
                                      double rho, const DiffusionSchedule* sched,
                                      const LossWeights& weights, uint64_t eval_seed) {
    double total = 0.0;
    size_t chunks = 0;
    const size_t chunk = 8;
    LossWeights eval_weights = weights;
    eval_weights.lambda_inter = 0.0;  // MSE only; skip logits work
    eval_weights.lambda_intra = 0.0;
    for (size_t start = 0; start < instances.size(); start += chunk) {
        const size_t len = std::min(chunk, instances.size() - start);
        std::vector<BatchInstance> slice(instances.begin() + start,
                                         instances.begin() + start + len);
        Rng rng(Rng(eval_seed).fork(trainer_detail::kEvalPassKey + start).seed());
        LossBreakdown lb = stage1_objective(model, slice, rho, sched, eval_weights, rng);
        total += lb.mse_audio + lb.mse_video;
        ++chunks;
    }
    return total / static_cast<double>(chunks);
}

// Mean cosine similarity of matched audio/video instance embeddings against
// the mean over mismatched pairs, on held-out instances.
struct AlignmentStats {
    double positive_mean = 0.0;
    double negative_mean = 0.0;
};

inline AlignmentStats eval_embedding_alignment(const Model& model,
                                               const std::vector<BatchInstance>& instances,
                                               double rho, uint64_t eval_seed) {
    const size_t n = instances.size();
    if (n < 2) throw ContractError("eval_embedding_alignment: need >= 2 instances");
    const size_t d = model.config().enc_dim;
    std::vector<std::vector<double>> a_embs(n), v_embs(n);
    const Rng base(eval_seed);
    for (size_t i = 0; i < n; ++i) {
        if (!instances[i].video.has_value()) {
            throw ContractError("eval_embedding_alignment: instance lacks video");
        }
        const MaskingPlan plan_a = make_masking_plan(instances[i].audio.num_patches(), rho,
                                                     base.fork(2 * i).seed());
        const MaskingPlan plan_v = make_masking_plan(instances[i].video->num_patches(), rho,
                                                     base.fork(2 * i + 1).seed());
        Tensor a_emb = mean_rows(model.encode(Modality::audio, instances[i].audio, plan_a));
        Tensor v_emb = mean_rows(model.encode(Modality::video, *instances[i].video, plan_v));
        a_embs[i].assign(a_emb.data().begin(), a_emb.data().end());
        v_embs[i].assign(v_emb.data().begin(), v_emb.data().end());
    }
    auto cosine = [d](const std::vector<double>& x, const std::vector<double>& y) {
        double dot = 0.0, nx = 0.0, ny = 0.0;
        for (size_t j = 0; j < d; ++j) {
            dot += x[j] * y[j];
            nx += x[j] * x[j];
            ny += y[j] * y[j];
        }
        return dot / std::sqrt(nx * ny);
    };
    AlignmentStats stats;
    size_t negatives = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t k = 0; k < n; ++k) {
            const double c = cosine(a_embs[i], v_embs[k]);
            if (i == k) {
                stats.positive_mean += c;
            } else {
                stats.negative_mean += c;
                ++negatives;
            }
        }
    }
    stats.positive_mean /= static_cast<double>(n);
    stats.negative_mean /= static_cast<double>(negatives);
    return stats;
}

struct PretrainResult {
    size_t total_steps = 0;
    double cumulative_flops = 0.0;
    double initial_eval_mse = 0.0;
    double final_eval_mse = 0.0;
    AlignmentStats alignment;  // audio-video modes only
    RunCounters counters;
    std::vector<MetricsRecord> metrics;
    std::vector<size_t> epoch_steps;
    std::string checkpoint_path;
    std::string metrics_path;
    bool diverged = false;
};

// Full pre-training driver: per epoch the schedulers fix (rho_e, B_e,
// steps); each step samples a batch, draws two masking plans per modality
// and one diffusion timestep inside the objective, backpropagates and
// applies one optimizer update; one JSONL metrics record per step, flushed
// immediately. A non-finite loss aborts with a diagnostic record.
inline PretrainResult pretrain(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    using trainer_detail::make_instance;

    const auto t_start = std::chrono::steady_clock::now();
    auto wall_seconds = [&t_start]() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    };

    fs::create_directories(cfg.out_dir);
    PretrainResult result;
    result.metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
    result.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.avmae").string();
    std::ofstream metrics_out(result.metrics_path);
    if (!metrics_out.good()) {
        throw ConfigError("pretrain: cannot open metrics file '" + result.metrics_path + "'");
    }
    const json config_echo = run_config_to_json(cfg);
    metrics_out << json{{"type", "config"}, {"config", config_echo}}.dump() << "\n";
    metrics_out.flush();

    const Rng base(cfg.seed);
    Model model(cfg.model, base.fork(trainer_detail::kModelKey).seed());
    DiffusionSchedule sched_storage;
    const DiffusionSchedule* sched = nullptr;
    if (cfg.model.uses_diffusion()) {
        sched_storage = cfg.diffusion.build();
        sched = &sched_storage;
    }
    AdamW opt(model.parameters(), cfg.optimizer.beta1, cfg.optimizer.beta2,
              cfg.optimizer.weight_decay, cfg.optimizer.eps);
    const BatchPlan plan = BatchPlan::make(cfg.curriculum, cfg.base_batch,
                                           cfg.data.dataset_size, cfg.adaptive_batching);
    const WorkloadSpec workload = cfg.workload();

    size_t total_steps = 0, warmup_steps = 0;
    for (size_t e = 0; e < cfg.epochs(); ++e) {
        const size_t steps = steps_per_epoch(plan, e);
        result.epoch_steps.push_back(steps);
        total_steps += steps;
        if (e < cfg.optimizer.warmup_epochs) warmup_steps += steps;
    }

    std::vector<BatchInstance> eval_instances =
        trainer_detail::make_eval_instances(cfg, result.counters);
    const double eval_rho = cfg.curriculum.min_rho();
    result.initial_eval_mse = eval_reconstruction_mse(model, eval_instances, eval_rho, sched,
                                                      cfg.loss, cfg.seed);

    size_t global_step = 0;
    bool stop = false;
    for (size_t e = 0; e < cfg.epochs() && !stop; ++e) {
        const double rho_e = masking_ratio_at(cfg.curriculum, e);
        const size_t B_e = batch_size_at(plan, e);
        const ModuleFlops per_sample = flops_per_sample(workload, rho_e);

        std::vector<uint64_t> order(cfg.data.dataset_size);
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(base.fork(trainer_detail::kEpochShuffleKey + e).seed());
        shuffle_rng.shuffle(order);

        size_t offset = 0;
        for (size_t b_actual : epoch_batch_sizes(cfg.data.dataset_size, B_e)) {
            std::vector<BatchInstance> batch;
            batch.reserve(b_actual);
            for (size_t k = 0; k < b_actual; ++k) {
                batch.push_back(make_instance(cfg, trainer_detail::kTrainDataKey,
                                              order[offset + k], result.counters));
            }
            offset += b_actual;

            opt.zero_grad();
            LossBreakdown lb;
            {
                Tape tape;
                Rng step_rng(base.fork(trainer_detail::kStepKey + global_step).seed());
                lb = stage1_objective(model, batch, rho_e, sched, cfg.loss, step_rng);
                if (!lb.finite()) {
                    metrics_out << json{{"type", "diverged"},
                                        {"step", global_step},
                                        {"epoch", e},
                                        {"total", lb.total}}
                                       .dump()
                                << "\n";
                    metrics_out.flush();
                    result.diverged = true;
                    throw NumericError("pretrain: non-finite loss at step " +
                                       std::to_string(global_step));
                }
                backward(lb.total_tensor);
            }
            double lr = lr_at(global_step, total_steps, cfg.optimizer.lr, warmup_steps,
                              cfg.optimizer.min_lr);
            if (cfg.optimizer.lr_scale_with_batch) {
                lr *= static_cast<double>(B_e) / static_cast<double>(cfg.base_batch);
            }
            opt.step(lr);

            result.cumulative_flops += per_sample.total() * static_cast<double>(b_actual) +
                                       flops_contrastive_batch(workload, b_actual).total();

            MetricsRecord rec;
            rec.step = global_step;
            rec.epoch = e;
            rec.rho = rho_e;
            rec.batch_effective = B_e;
            rec.batch_actual = b_actual;
            rec.lr = lr;
            rec.losses = lb;
            rec.cumulative_flops = result.cumulative_flops;
            rec.wall_seconds = wall_seconds();
            metrics_out << metrics_record_json(rec).dump() << "\n";
            metrics_out.flush();
            result.metrics.push_back(rec);

            ++global_step;
            if (cfg.steps_override > 0 && global_step >= cfg.steps_override) {
                stop = true;
                break;
            }
        }
    }
    result.total_steps = global_step;

    result.final_eval_mse = eval_reconstruction_mse(model, eval_instances, eval_rho, sched,
                                                    cfg.loss, cfg.seed);
    if (cfg.model.uses_video() && eval_instances.size() >= 2) {
        result.alignment =
            eval_embedding_alignment(model, eval_instances, eval_rho, cfg.seed);
    }
    save_checkpoint(model, config_echo, result.checkpoint_path);
    return result;
}

}  // namespace avmae
