#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sr/data.hpp"
#include "sr/metrics.hpp"
#include "sr/model.hpp"
#include "sr/optim.hpp"

namespace sr::trainer {

struct TrainConfig {
    int batch_size = 16;
    double lr = 1e-4;
    int64_t total_iters = 1000;
    optim::OptimizerHyper optimizer = optim::OptimizerHyper::adam(1e-4);
    optim::ScheduleConfig schedule;
    int patch_size = 48;  // LR patch edge
    optim::Precision precision = optim::Precision::fp32;
    data::SamplerConfig sampler;
    double stochastic_depth_p = 0.0;  // recipe value 0.5 when enabled
    int64_t eval_every = 0;           // 0 disables periodic evaluation
    uint64_t seed = 0;
    int val_split = 0;       // hold out the last N index entries (sorted) for eval
    bool grad_clip = false;  // stub: enabling is a config error

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
        if (total_iters < 1) throw ConfigError("total_iters: must be >= 1");
        if (stochastic_depth_p < 0 || stochastic_depth_p > 1)
            throw ConfigError("stochastic_depth_p: must lie in [0,1]");
        if (grad_clip)
            throw ConfigError("grad_clip: gradient clipping is not supported (future work)");
        optimizer.validate();
        schedule.validate();
        sampler.validate();
    }
};

// Training abort triggered by the non-finite guard. Carries enough context to
// reproduce the failure.
struct NanAbort : std::runtime_error {
    int64_t iteration;
    std::string tensor;  // empty when the loss itself is non-finite
    NanAbort(int64_t t, std::string tensor_name, uint64_t seed, double lr)
        : std::runtime_error("non-finite " + (tensor_name.empty() ? std::string("loss") : tensor_name) +
                             " at iteration " + std::to_string(t) + " (seed " + std::to_string(seed) +
                             ", lr " + std::to_string(lr) + ")"),
          iteration(t),
          tensor(std::move(tensor_name)) {}
};

struct Checkpoint {
    uint32_t version = 1;
    std::string stage = "train";        // provenance: train / large_patch / warm_tail / warm_full
    int64_t iteration = 0;              // cumulative across stages
    std::string model_config_json;
    std::string train_config_json;
    std::vector<std::pair<std::string, Tensor<float>>> params;
    std::vector<std::pair<std::string, Tensor<float>>> opt_m, opt_v;
    int64_t opt_step = 0;
    std::string rng_state;
    std::vector<std::pair<int64_t, double>> metric_history;  // (iteration, val PSNR dB)
};

struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json);
std::string train_config_to_json(const TrainConfig& cfg);

Model<float> model_from_checkpoint(const Checkpoint& ckpt);
void pack_model(const Model<float>& m, Checkpoint& ckpt);

// Mean absolute error over all elements.
template <typename T>
double l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    check_same_shape(pred, target, "l1_loss");
    double s = 0;
    for (size_t i = 0; i < pred.data.size(); ++i)
        s += std::fabs(static_cast<double>(pred.data[i]) - target.data[i]);
    return s / static_cast<double>(pred.data.size());
}

template <typename T>
Tensor<T> l1_loss_grad(const Tensor<T>& pred, const Tensor<T>& target) {
    check_same_shape(pred, target, "l1_loss_grad");
    Tensor<T> g(pred.shape);
    const T inv = static_cast<T>(1.0 / static_cast<double>(pred.numel()));
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const T d = pred.data[i] - target.data[i];
        g.data[i] = d > 0 ? inv : (d < 0 ? -inv : T(0));
    }
    return g;
}

// Aborts when the loss or any parameter is non-finite. Gradient overflow
// under fp16_mixed is handled by the loss scaler, not here.
void nan_guard(double loss, const Model<float>& model, int64_t t, uint64_t seed, double lr);

// Stochastic depth: during training each residual branch is dropped with
// probability p_skip; at evaluation every branch runs scaled by 1 - p_skip.
Tensor<float> stochastic_depth_forward(const Model<float>& m, const Tensor<float>& x, double p_skip,
                                       std::mt19937_64& rng);

struct TrainCallbacks {
    std::function<void(int64_t, double&)> on_loss;  // may inspect/corrupt the loss (tests)
    std::function<void(int64_t, std::vector<Tensor<float>*>&)> on_grads;
    std::function<void(int64_t, Model<float>&)> on_after_step;
    std::function<void(int64_t, double lr, double loss)> on_step;
    std::function<void(int64_t, double val_psnr)> on_eval;
};

struct TrainOptions {
    std::string stage = "train";
    int64_t start_iteration = 0;  // budget accounting across stages
    std::function<bool(const std::string&)> trainable;  // default: everything
    // stop when val PSNR improves < plateau_eps over two consecutive eval
    // windows (used by warm-start stage 1)
    std::optional<double> plateau_eps;
    TrainCallbacks callbacks;
};

// Runs exactly cfg.total_iters steps (fewer only under plateau stop):
// sample batch -> forward -> l1 -> backward -> optimizer step at eta(t) ->
// periodic eval. Deterministic under fixed seed, fp32, single worker.
Checkpoint train(Model<float>& model, const std::vector<data::IndexEntry>& index,
                 const TrainConfig& cfg, const TrainOptions& opts = {});

// Resumes from checkpoint parameters with a fresh cosine schedule, larger
// patches, and a restarted optimizer. Batch size defaults to
// floor(bs * (old_patch/new_patch)^2) to keep per-step pixel count level.
Checkpoint finetune_large_patch(const Checkpoint& src, const std::vector<data::IndexEntry>& index,
                                TrainConfig cfg, int patch_size = 64,
                                std::optional<int> batch_size = std::nullopt);

// Two-stage transfer from a x2 checkpoint: tail-only training (head/body
// frozen) until plateau or tail_iters, then full finetuning for full_iters.
Checkpoint warm_start(const Checkpoint& ckpt_x2, int target_scale,
                      const std::vector<data::IndexEntry>& index, int64_t tail_iters,
                      int64_t full_iters, TrainConfig cfg, const TrainCallbacks& callbacks = {});

// Evaluation adapter: wraps a model as a metrics::SrFn (eval mode).
metrics::SrFn model_fn(const Model<float>& m);

// No-ensemble Y-channel PSNR of the model over index entries (crop = scale).
double validate_psnr(const Model<float>& m, const std::vector<data::IndexEntry>& entries, int scale);

}  // namespace sr::trainer
