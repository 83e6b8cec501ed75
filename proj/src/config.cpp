#include "sr/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sr::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int64_t i = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

// Shortest decimal that round-trips the exact double.
std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

}  // namespace

void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    auto& m = cfg.model;
    auto& t = cfg.train;
    if (key == "scale") m.scale = static_cast<int>(parse_int(key, v));
    else if (key == "n_groups") m.n_groups = static_cast<int>(parse_int(key, v));
    else if (key == "n_blocks_per_group") m.n_blocks_per_group = static_cast<int>(parse_int(key, v));
    else if (key == "n_feats") m.n_feats = static_cast<int>(parse_int(key, v));
    else if (key == "reduction") m.reduction = static_cast<int>(parse_int(key, v));
    else if (key == "in_channels") m.in_channels = static_cast<int>(parse_int(key, v));
    else if (key == "res_scale") m.res_scale = parse_double(key, v);
    else if (key == "activation") {
        if (v == "relu") m.activation = nn::Activation::relu;
        else if (v == "silu") m.activation = nn::Activation::silu;
        else throw ConfigError("activation: expected relu or silu, got '" + v + "'");
    } else if (key == "mean_shift") {
        if (v == "none") {
            m.mean_shift.reset();
        } else {
            std::array<double, 3> ms{};
            std::istringstream is(v);
            std::string part;
            for (int i = 0; i < 3; ++i) {
                if (!std::getline(is, part, ',')) throw ConfigError("mean_shift: expected r,g,b");
                ms[static_cast<size_t>(i)] = parse_double(key, trim(part));
            }
            m.mean_shift = ms;
        }
    } else if (key == "batch_size") t.batch_size = static_cast<int>(parse_int(key, v));
    else if (key == "lr") { t.lr = parse_double(key, v); t.optimizer.lr = t.lr; }
    else if (key == "total_iters") t.total_iters = parse_int(key, v);
    else if (key == "optimizer") {
        if (v == "adam") t.optimizer.kind = optim::OptimizerKind::adam;
        else if (v == "lamb") t.optimizer.kind = optim::OptimizerKind::lamb;
        else throw ConfigError("optimizer: expected adam or lamb, got '" + v + "'");
    } else if (key == "beta1") t.optimizer.beta1 = parse_double(key, v);
    else if (key == "beta2") t.optimizer.beta2 = parse_double(key, v);
    else if (key == "eps") t.optimizer.eps = parse_double(key, v);
    else if (key == "weight_decay") t.optimizer.weight_decay = parse_double(key, v);
    else if (key == "schedule") {
        if (v == "cosine") t.schedule.kind = optim::ScheduleKind::cosine;
        else if (v == "multistep") t.schedule.kind = optim::ScheduleKind::multistep;
        else throw ConfigError("schedule: expected cosine or multistep, got '" + v + "'");
    } else if (key == "eta_min") t.schedule.eta_min = parse_double(key, v);
    else if (key == "warmup_iters") t.schedule.warmup_iters = parse_int(key, v);
    else if (key == "patch_size") t.patch_size = static_cast<int>(parse_int(key, v));
    else if (key == "precision") {
        if (v == "fp32") t.precision = optim::Precision::fp32;
        else if (v == "fp16_mixed") t.precision = optim::Precision::fp16_mixed;
        else throw ConfigError("precision: expected fp32 or fp16_mixed, got '" + v + "'");
    } else if (key == "stochastic_depth_p") t.stochastic_depth_p = parse_double(key, v);
    else if (key == "eval_every") t.eval_every = parse_int(key, v);
    else if (key == "seed") t.seed = static_cast<uint64_t>(parse_int(key, v));
    else if (key == "val_split") t.val_split = static_cast<int>(parse_int(key, v));
    else if (key == "grad_clip") t.grad_clip = parse_bool(key, v);
    else if (key == "geo_aug") t.sampler.geo_aug = parse_bool(key, v);
    else if (key == "color_aug") t.sampler.color_aug = parse_bool(key, v);
    else if (key == "mixup_alpha") {
        if (v == "none") t.sampler.mixup_alpha.reset();
        else t.sampler.mixup_alpha = parse_double(key, v);
    } else if (key == "rejection") {
        if (parse_bool(key, v)) {
            if (!t.sampler.rejection) t.sampler.rejection = data::RejectionConfig{};
        } else t.sampler.rejection.reset();
    } else if (key == "rejection_threshold_db") {
        if (!t.sampler.rejection) t.sampler.rejection = data::RejectionConfig{};
        t.sampler.rejection->threshold_db = parse_double(key, v);
    } else if (key == "rejection_reject_prob") {
        if (!t.sampler.rejection) t.sampler.rejection = data::RejectionConfig{};
        t.sampler.rejection->reject_prob = parse_double(key, v);
    } else if (key == "data_root") cfg.data_root = v;
    else if (key == "out_dir") cfg.out_dir = v;
    else if (key == "finetune_iters") cfg.finetune_iters = parse_int(key, v);
    else if (key == "finetune_patch") cfg.finetune_patch = static_cast<int>(parse_int(key, v));
    else if (key == "colorspace") {
        if (v != "y" && v != "rgb") throw ConfigError("colorspace: expected y or rgb, got '" + v + "'");
        cfg.colorspace = v;
    } else if (key == "full_swing") cfg.full_swing = parse_bool(key, v);
    else if (key == "ensemble") cfg.ensemble = parse_bool(key, v);
    else if (key == "quantize") cfg.quantize = parse_bool(key, v);
    else if (key == "crop_border") cfg.crop_border = static_cast<int>(parse_int(key, v));
    else if (key == "preset") cfg.preset = v;
    else throw ConfigError("unknown config key: " + key);
}

void apply_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        apply_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

std::string to_config_text(const RunConfig& cfg) {
    const auto& m = cfg.model;
    const auto& t = cfg.train;
    std::ostringstream os;
    os << "preset = " << (cfg.preset.empty() ? "none" : cfg.preset) << "\n";
    os << "scale = " << m.scale << "\n";
    os << "n_groups = " << m.n_groups << "\n";
    os << "n_blocks_per_group = " << m.n_blocks_per_group << "\n";
    os << "n_feats = " << m.n_feats << "\n";
    os << "reduction = " << m.reduction << "\n";
    os << "in_channels = " << m.in_channels << "\n";
    os << "activation = " << (m.activation == nn::Activation::silu ? "silu" : "relu") << "\n";
    os << "res_scale = " << fmt(m.res_scale) << "\n";
    if (m.mean_shift)
        os << "mean_shift = " << fmt((*m.mean_shift)[0]) << "," << fmt((*m.mean_shift)[1]) << ","
           << fmt((*m.mean_shift)[2]) << "\n";
    else
        os << "mean_shift = none\n";
    os << "batch_size = " << t.batch_size << "\n";
    os << "lr = " << fmt(t.lr) << "\n";
    os << "total_iters = " << t.total_iters << "\n";
    os << "optimizer = " << (t.optimizer.kind == optim::OptimizerKind::adam ? "adam" : "lamb") << "\n";
    os << "beta1 = " << fmt(t.optimizer.beta1) << "\n";
    os << "beta2 = " << fmt(t.optimizer.beta2) << "\n";
    os << "eps = " << fmt(t.optimizer.eps) << "\n";
    os << "weight_decay = " << fmt(t.optimizer.weight_decay) << "\n";
    os << "schedule = " << (t.schedule.kind == optim::ScheduleKind::cosine ? "cosine" : "multistep")
       << "\n";
    os << "eta_min = " << fmt(t.schedule.eta_min) << "\n";
    os << "warmup_iters = " << t.schedule.warmup_iters << "\n";
    os << "patch_size = " << t.patch_size << "\n";
    os << "precision = " << (t.precision == optim::Precision::fp32 ? "fp32" : "fp16_mixed") << "\n";
    os << "stochastic_depth_p = " << fmt(t.stochastic_depth_p) << "\n";
    os << "eval_every = " << t.eval_every << "\n";
    os << "seed = " << t.seed << "\n";
    os << "val_split = " << t.val_split << "\n";
    os << "grad_clip = " << (t.grad_clip ? "true" : "false") << "\n";
    os << "geo_aug = " << (t.sampler.geo_aug ? "true" : "false") << "\n";
    os << "color_aug = " << (t.sampler.color_aug ? "true" : "false") << "\n";
    os << "mixup_alpha = " << (t.sampler.mixup_alpha ? fmt(*t.sampler.mixup_alpha) : "none") << "\n";
    os << "rejection = " << (t.sampler.rejection ? "true" : "false") << "\n";
    if (t.sampler.rejection) {
        os << "rejection_threshold_db = " << fmt(t.sampler.rejection->threshold_db) << "\n";
        os << "rejection_reject_prob = " << fmt(t.sampler.rejection->reject_prob) << "\n";
    }
    os << "data_root = " << cfg.data_root << "\n";
    os << "out_dir = " << cfg.out_dir << "\n";
    os << "finetune_iters = " << cfg.finetune_iters << "\n";
    os << "finetune_patch = " << cfg.finetune_patch << "\n";
    os << "colorspace = " << cfg.colorspace << "\n";
    os << "full_swing = " << (cfg.full_swing ? "true" : "false") << "\n";
    os << "ensemble = " << (cfg.ensemble ? "true" : "false") << "\n";
    os << "quantize = " << (cfg.quantize ? "true" : "false") << "\n";
    os << "crop_border = " << cfg.crop_border << "\n";
    return os.str();
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value': " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "preset" && value == "none") continue;
        apply_kv(cfg, key, value);
    }
    return cfg;
}

bool run_config_equal(const RunConfig& a, const RunConfig& b) {
    return to_config_text(a) == to_config_text(b);
}

RunConfig preset(const std::string& name) {
    RunConfig cfg;
    cfg.preset = name;
    auto& m = cfg.model;
    auto& t = cfg.train;
    m.scale = 2;
    m.n_groups = 10;
    m.n_blocks_per_group = 20;
    m.n_feats = 64;
    m.reduction = 16;

    if (name == "original") {
        t.batch_size = 16;
        t.lr = 1e-4;
        t.optimizer = optim::OptimizerHyper::adam(t.lr);
        t.schedule.kind = optim::ScheduleKind::multistep;
        t.total_iters = 1725000;
        t.patch_size = 48;
        return cfg;
    }
    if (name == "baseline" || name == "longer" || name == "rcan-it") {
        t.batch_size = 256;
        t.lr = 0.0032;
        t.optimizer = optim::OptimizerHyper::lamb(t.lr);
        t.schedule.kind = optim::ScheduleKind::cosine;
        t.total_iters = name == "baseline" ? 80000 : 160000;
        t.patch_size = 48;
        if (name == "rcan-it") {
            m.activation = nn::Activation::silu;
            cfg.finetune_iters = 40000;
            cfg.finetune_patch = 64;
        }
        return cfg;
    }
    throw ConfigError("unknown preset: " + name +
                      " (expected original, baseline, longer, or rcan-it)");
}

}  // namespace sr::cli
