#include "sr/trainer.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sr::trainer {

using nlohmann::json;

// ---- config serialization ----

std::string model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["scale"] = cfg.scale;
    j["n_groups"] = cfg.n_groups;
    j["n_blocks_per_group"] = cfg.n_blocks_per_group;
    j["n_feats"] = cfg.n_feats;
    j["reduction"] = cfg.reduction;
    j["activation"] = cfg.activation == nn::Activation::silu ? "silu" : "relu";
    j["in_channels"] = cfg.in_channels;
    j["res_scale"] = cfg.res_scale;
    j["init"] = "uniform_fan_in";  // recorded so checkpoints are reproducible from seed
    if (cfg.mean_shift)
        j["mean_shift"] = *cfg.mean_shift;
    else
        j["mean_shift"] = nullptr;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig cfg;
    cfg.scale = j.at("scale");
    cfg.n_groups = j.at("n_groups");
    cfg.n_blocks_per_group = j.at("n_blocks_per_group");
    cfg.n_feats = j.at("n_feats");
    cfg.reduction = j.at("reduction");
    cfg.activation = j.at("activation") == "silu" ? nn::Activation::silu : nn::Activation::relu;
    cfg.in_channels = j.at("in_channels");
    cfg.res_scale = j.value("res_scale", 1.0);
    if (j.contains("mean_shift") && !j.at("mean_shift").is_null()) {
        std::array<double, 3> ms = j.at("mean_shift");
        cfg.mean_shift = ms;
    }
    return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["batch_size"] = cfg.batch_size;
    j["lr"] = cfg.lr;
    j["total_iters"] = cfg.total_iters;
    j["optimizer"] = {{"kind", cfg.optimizer.kind == optim::OptimizerKind::adam ? "adam" : "lamb"},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"eps", cfg.optimizer.eps},
                      {"weight_decay", cfg.optimizer.weight_decay}};
    j["schedule"] = {{"kind", cfg.schedule.kind == optim::ScheduleKind::cosine ? "cosine" : "multistep"},
                     {"eta_min", cfg.schedule.eta_min},
                     {"warmup_iters", cfg.schedule.warmup_iters}};
    j["patch_size"] = cfg.patch_size;
    j["precision"] = cfg.precision == optim::Precision::fp32 ? "fp32" : "fp16_mixed";
    j["stochastic_depth_p"] = cfg.stochastic_depth_p;
    j["eval_every"] = cfg.eval_every;
    j["seed"] = cfg.seed;
    j["val_split"] = cfg.val_split;
    j["geo_aug"] = cfg.sampler.geo_aug;
    j["color_aug"] = cfg.sampler.color_aug;
    if (cfg.sampler.mixup_alpha) j["mixup_alpha"] = *cfg.sampler.mixup_alpha;
    if (cfg.sampler.rejection)
        j["rejection"] = {{"threshold_db", cfg.sampler.rejection->threshold_db},
                          {"reject_prob", cfg.sampler.rejection->reject_prob}};
    return j.dump();
}

// ---- checkpoint container ----
// Layout: magic "SRCKPT01", u32 version, strings (u64 length + bytes),
// i64 iteration/opt_step, named tensor records (name, dtype byte, rank,
// dims, little-endian payload).

namespace {

constexpr char kMagic[8] = {'S', 'R', 'C', 'K', 'P', 'T', '0', '1'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void write_str(std::ostream& os, const std::string& s) {
    write_i64(os, static_cast<int64_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_tensor(std::ostream& os, const std::string& name, const Tensor<float>& t) {
    write_str(os, name);
    os.put(0);  // dtype: float32
    write_u32(os, static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) write_i64(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

uint32_t read_u32(std::istream& is) {
    uint32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw LoadError("checkpoint truncated");
    return v;
}
int64_t read_i64(std::istream& is) {
    int64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw LoadError("checkpoint truncated");
    return v;
}
double read_f64(std::istream& is) {
    double v;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw LoadError("checkpoint truncated");
    return v;
}
std::string read_str(std::istream& is) {
    const int64_t n = read_i64(is);
    if (n < 0 || n > (1 << 28)) throw LoadError("checkpoint corrupt: bad string length");
    std::string s(static_cast<size_t>(n), '\0');
    is.read(s.data(), n);
    if (!is) throw LoadError("checkpoint truncated");
    return s;
}
std::pair<std::string, Tensor<float>> read_tensor(std::istream& is) {
    std::string name = read_str(is);
    const int dtype = is.get();
    if (dtype != 0) throw LoadError("checkpoint corrupt: unknown dtype");
    const uint32_t rank = read_u32(is);
    if (rank > 8) throw LoadError("checkpoint corrupt: bad rank");
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) d = read_i64(is);
    Tensor<float> t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!is) throw LoadError("checkpoint truncated");
    return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path);
    os.write(kMagic, 8);
    write_u32(os, ckpt.version);
    write_str(os, ckpt.stage);
    write_i64(os, ckpt.iteration);
    write_str(os, ckpt.model_config_json);
    write_str(os, ckpt.train_config_json);
    write_str(os, ckpt.rng_state);
    write_i64(os, static_cast<int64_t>(ckpt.metric_history.size()));
    for (const auto& [it, v] : ckpt.metric_history) {
        write_i64(os, it);
        write_f64(os, v);
    }
    write_i64(os, static_cast<int64_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params) write_tensor(os, name, t);
    write_i64(os, ckpt.opt_step);
    write_i64(os, static_cast<int64_t>(ckpt.opt_m.size()));
    for (const auto& [name, t] : ckpt.opt_m) write_tensor(os, name, t);
    for (const auto& [name, t] : ckpt.opt_v) write_tensor(os, name, t);
    if (!os) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw LoadError("not a checkpoint file: " + path);
    Checkpoint ckpt;
    ckpt.version = read_u32(is);
    if (ckpt.version > kVersion)
        throw LoadError("checkpoint version " + std::to_string(ckpt.version) +
                        " is newer than supported version " + std::to_string(kVersion));
    ckpt.stage = read_str(is);
    ckpt.iteration = read_i64(is);
    ckpt.model_config_json = read_str(is);
    ckpt.train_config_json = read_str(is);
    ckpt.rng_state = read_str(is);
    const int64_t nh = read_i64(is);
    for (int64_t i = 0; i < nh; ++i) {
        const int64_t it = read_i64(is);
        const double v = read_f64(is);
        ckpt.metric_history.emplace_back(it, v);
    }
    const int64_t np = read_i64(is);
    for (int64_t i = 0; i < np; ++i) ckpt.params.push_back(read_tensor(is));
    ckpt.opt_step = read_i64(is);
    const int64_t ns = read_i64(is);
    for (int64_t i = 0; i < ns; ++i) ckpt.opt_m.push_back(read_tensor(is));
    for (int64_t i = 0; i < ns; ++i) ckpt.opt_v.push_back(read_tensor(is));
    return ckpt;
}

void pack_model(const Model<float>& m, Checkpoint& ckpt) {
    ckpt.model_config_json = model_config_to_json(m.config);
    ckpt.params.clear();
    m.visit([&](const std::string& name, const Tensor<float>& t) { ckpt.params.emplace_back(name, t); });
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
    const ModelConfig cfg = model_config_from_json(ckpt.model_config_json);
    std::mt19937_64 rng(0);
    Model<float> m = build_model<float>(cfg, rng);
    size_t k = 0;
    m.visit([&](const std::string& name, Tensor<float>& t) {
        if (k >= ckpt.params.size() || ckpt.params[k].first != name)
            throw LoadError("checkpoint parameter mismatch at " + name);
        if (ckpt.params[k].second.shape != t.shape)
            throw LoadError("checkpoint shape mismatch for " + name);
        t = ckpt.params[k].second;
        ++k;
    });
    if (k != ckpt.params.size()) throw LoadError("checkpoint has extra parameters");
    return m;
}

// ---- training ----

void nan_guard(double loss, const Model<float>& model, int64_t t, uint64_t seed, double lr) {
    if (!std::isfinite(loss)) throw NanAbort(t, "", seed, lr);
    std::string bad;
    model.visit([&](const std::string& name, const Tensor<float>& tensor) {
        if (!bad.empty()) return;
        for (const float v : tensor.data)
            if (!std::isfinite(v)) {
                bad = name;
                return;
            }
    });
    if (!bad.empty()) throw NanAbort(t, bad, seed, lr);
}

Tensor<float> stochastic_depth_forward(const Model<float>& m, const Tensor<float>& x, double p_skip,
                                       std::mt19937_64& rng) {
    ForwardOptions opts;
    opts.train_mode = true;
    opts.stochastic_depth_p = p_skip;
    opts.rng = &rng;
    return forward(m, x, opts);
}

metrics::SrFn model_fn(const Model<float>& m) {
    return [&m](const Image& lr) {
        Tensor<float> x = image_to_tensor<float>(lr);
        Tensor<float> y = forward(m, x);
        return tensor_to_image(y, 0, lr.colorspace);
    };
}

double validate_psnr(const Model<float>& m, const std::vector<data::IndexEntry>& entries, int scale) {
    if (entries.empty()) throw data::SamplingError("validate_psnr: no validation entries");
    const auto fn = model_fn(m);
    double total = 0;
    for (const auto& e : entries) {
        Image hr = read_png(e.hr_path);
        hr = crop(hr, 0, 0, (hr.h / scale) * scale, (hr.w / scale) * scale);
        Image lr = e.lr_path ? read_png(*e.lr_path) : bicubic_resize(hr, hr.h / scale, hr.w / scale);
        Image sr = fn(lr);
        sr.clamp01();
        sr.quantize8();
        total += metrics::psnr(metrics::rgb_to_y(sr), metrics::rgb_to_y(hr), scale);
    }
    return total / static_cast<double>(entries.size());
}

Checkpoint train(Model<float>& model, const std::vector<data::IndexEntry>& index,
                 const TrainConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    model.config.validate();
    if (index.empty()) throw data::SamplingError("train: empty dataset index");

    std::vector<data::IndexEntry> train_index = index, val_index;
    if (cfg.val_split > 0 && static_cast<size_t>(cfg.val_split) < index.size()) {
        val_index.assign(index.end() - cfg.val_split, index.end());
        train_index.assign(index.begin(), index.end() - cfg.val_split);
    }

    data::SamplerConfig sampler = cfg.sampler;
    sampler.patch_size = cfg.patch_size;
    sampler.seed = cfg.seed;
    data::BatchStream stream(train_index, model.config.scale, sampler, cfg.batch_size);

    std::mt19937_64 model_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    const auto trainable = opts.trainable ? opts.trainable
                                          : std::function<bool(const std::string&)>(
                                                [](const std::string&) { return true; });

    std::vector<std::string> names;
    std::vector<Tensor<float>*> params;
    model.visit([&](const std::string& name, Tensor<float>& t) {
        if (trainable(name)) {
            names.push_back(name);
            params.push_back(&t);
        }
    });
    Model<float> grads = zeros_like(model);
    std::vector<Tensor<float>*> grad_ptrs;
    grads.visit([&](const std::string& name, Tensor<float>& t) {
        if (trainable(name)) grad_ptrs.push_back(&t);
    });

    auto state = optim::OptimizerState<float>::init(params);
    optim::ScheduleConfig sched = cfg.schedule;
    sched.total_iters = cfg.total_iters;

    optim::LossScaler scaler;
    const bool fp16 = cfg.precision == optim::Precision::fp16_mixed;

    std::vector<std::pair<int64_t, double>> history;
    double prev_psnr = -1e9, prev_improve = 1e9;
    int64_t t = 0;
    for (; t < cfg.total_iters; ++t) {
        const int64_t global_t = opts.start_iteration + t;
        const double lr_t = optim::schedule_lr(t, sched, cfg.lr);

        data::Batch batch = stream.next();
        ForwardCache<float> cache;
        ForwardOptions fo;
        fo.train_mode = true;
        fo.stochastic_depth_p = cfg.stochastic_depth_p;
        fo.rng = &model_rng;
        Tensor<float> pred = forward(model, batch.lr, fo, &cache);

        double loss = l1_loss(pred, batch.hr);
        if (opts.callbacks.on_loss) opts.callbacks.on_loss(global_t, loss);
        nan_guard(loss, model, global_t, cfg.seed, lr_t);

        Tensor<float> grad_out = l1_loss_grad(pred, batch.hr);
        if (fp16)
            for (auto& v : grad_out.data) v = static_cast<float>(v * scaler.scale);

        grads.visit([](const std::string&, Tensor<float>& g) { g.fill(0.0f); });
        backward(model, cache, grad_out, grads);
        if (fp16)
            for (auto* g : grad_ptrs)
                for (auto& v : g->data) v = optim::to_fp16_and_back(v);
        if (opts.callbacks.on_grads) opts.callbacks.on_grads(global_t, grad_ptrs);

        bool do_step = true;
        if (fp16) do_step = scaler.unscale_and_check(grad_ptrs);
        if (do_step) {
            if (cfg.optimizer.kind == optim::OptimizerKind::adam)
                optim::adam_step(params, grad_ptrs, state, cfg.optimizer, lr_t);
            else
                optim::lamb_step(params, grad_ptrs, state, cfg.optimizer, lr_t);
        }
        if (opts.callbacks.on_after_step) opts.callbacks.on_after_step(global_t, model);
        if (opts.callbacks.on_step) opts.callbacks.on_step(global_t, lr_t, loss);

        if (cfg.eval_every > 0 && !val_index.empty() &&
            ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.total_iters)) {
            const double psnr = validate_psnr(model, val_index, model.config.scale);
            history.emplace_back(global_t + 1, psnr);
            if (opts.callbacks.on_eval) opts.callbacks.on_eval(global_t + 1, psnr);
            if (opts.plateau_eps) {
                const double improve = psnr - prev_psnr;
                if (prev_psnr > -1e8 && improve < *opts.plateau_eps && prev_improve < *opts.plateau_eps) {
                    ++t;
                    break;
                }
                prev_improve = improve;
                prev_psnr = psnr;
            }
        }
    }

    Checkpoint ckpt;
    ckpt.stage = opts.stage;
    ckpt.iteration = opts.start_iteration + t;
    ckpt.train_config_json = train_config_to_json(cfg);
    pack_model(model, ckpt);
    ckpt.opt_step = state.step;
    for (size_t i = 0; i < names.size(); ++i) {
        ckpt.opt_m.emplace_back(names[i], state.m[i]);
        ckpt.opt_v.emplace_back(names[i], state.v[i]);
    }
    std::ostringstream rs;
    rs << model_rng;
    ckpt.rng_state = rs.str();
    ckpt.metric_history = std::move(history);
    return ckpt;
}

Checkpoint finetune_large_patch(const Checkpoint& src, const std::vector<data::IndexEntry>& index,
                                TrainConfig cfg, int patch_size, std::optional<int> batch_size) {
    if (cfg.total_iters == 0) {
        Checkpoint out = src;
        out.stage = "large_patch";
        return out;
    }
    Model<float> model = model_from_checkpoint(src);
    const double ratio = static_cast<double>(cfg.patch_size) / patch_size;
    cfg.batch_size = batch_size.value_or(
        std::max(1, static_cast<int>(cfg.batch_size * ratio * ratio)));
    cfg.patch_size = patch_size;
    cfg.schedule.kind = optim::ScheduleKind::cosine;  // fresh cosine restart
    cfg.schedule.warmup_iters = 0;

    TrainOptions opts;
    opts.stage = "large_patch";
    opts.start_iteration = src.iteration;
    return train(model, index, cfg, opts);
}

Checkpoint warm_start(const Checkpoint& ckpt_x2, int target_scale,
                      const std::vector<data::IndexEntry>& index, int64_t tail_iters,
                      int64_t full_iters, TrainConfig cfg, const TrainCallbacks& callbacks) {
    Model<float> src = model_from_checkpoint(ckpt_x2);
    if (src.config.scale != 2)
        throw ConfigError("warm_start: source checkpoint has scale " +
                          std::to_string(src.config.scale) + ", expected 2");
    if (target_scale != 3 && target_scale != 4)
        throw ConfigError("warm_start: target scale must be 3 or 4");

    std::mt19937_64 rng(cfg.seed);
    Model<float> model = swap_tail(src, target_scale, rng);

    Checkpoint stage1;
    if (tail_iters > 0) {
        TrainConfig c1 = cfg;
        c1.total_iters = tail_iters;
        c1.schedule.kind = optim::ScheduleKind::cosine;
        TrainOptions o1;
        o1.stage = "warm_tail";
        o1.start_iteration = ckpt_x2.iteration;
        o1.trainable = [](const std::string& name) { return name.rfind("tail.", 0) == 0; };
        o1.plateau_eps = 0.01;  // stand-in for "until convergence"
        o1.callbacks = callbacks;
        stage1 = train(model, index, c1, o1);
    } else {
        stage1.stage = "warm_tail";
        stage1.iteration = ckpt_x2.iteration;
        pack_model(model, stage1);
        stage1.train_config_json = train_config_to_json(cfg);
    }

    if (full_iters <= 0) return stage1;
    TrainConfig c2 = cfg;
    c2.total_iters = full_iters;
    c2.schedule.kind = optim::ScheduleKind::cosine;
    TrainOptions o2;
    o2.stage = "warm_full";
    o2.start_iteration = stage1.iteration;
    o2.callbacks = callbacks;
    return train(model, index, c2, o2);
}

}  // namespace sr::trainer
