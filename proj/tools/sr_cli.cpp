#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "sr/config.hpp"
#include "sr/data.hpp"
#include "sr/metrics.hpp"
#include "sr/trainer.hpp"

namespace fs = std::filesystem;
using namespace sr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigSources {
    std::string config_file;
    std::string preset_name;
    std::vector<std::string> overrides;  // key=value
};

void add_config_options(CLI::App* cmd, ConfigSources& src) {
    cmd->add_option("--config", src.config_file, "Config file of flat `key = value` pairs");
    cmd->add_option("--preset", src.preset_name,
                    "Hyperparameter preset: original (BS 16, lr 1e-4, Adam, multistep halving, "
                    "1725K iters), baseline (BS 256, lr 0.0032, Lamb, cosine, 80K), longer "
                    "(baseline with 160K), rcan-it (longer with SiLU plus 40K finetune at 64x64)");
    cmd->add_option("--set", src.overrides, "Override a single key, e.g. --set seed=7")
        ->take_all();
}

cli::RunConfig resolve_config(const ConfigSources& src) {
    cli::RunConfig cfg;
    if (!src.preset_name.empty()) cfg = cli::preset(src.preset_name);
    if (!src.config_file.empty()) cli::apply_file(cfg, src.config_file);
    for (const auto& kv : src.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        cli::apply_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
}

void require_dir(const std::string& path, const char* what) {
    if (!fs::is_directory(path))
        throw UsageError(std::string(what) + " directory not found: " + path);
}

void require_file(const std::string& path, const char* what) {
    if (!fs::is_regular_file(path))
        throw UsageError(std::string(what) + " not found: " + path);
}

metrics::Protocol protocol_of(const cli::RunConfig& cfg, bool ensemble) {
    metrics::Protocol p;
    p.colorspace = cfg.colorspace;
    p.full_swing = cfg.full_swing;
    p.crop_border = cfg.crop_border >= 0 ? cfg.crop_border : cfg.model.scale;
    p.ensemble = ensemble;
    p.quantize = cfg.quantize;
    p.scale = cfg.model.scale;
    return p;
}

void save_history(const trainer::Checkpoint& ckpt, const fs::path& path) {
    std::ostringstream os;
    os << "iteration\tval_psnr_db\n";
    for (const auto& [it, v] : ckpt.metric_history) os << it << "\t" << v << "\n";
    write_text(path, os.str());
}

int cmd_prepare_data(const std::string& root, std::vector<int> scales, bool dry_run) {
    require_dir(root, "dataset root");
    require_dir((fs::path(root) / "HR").string(), "HR");
    if (scales.empty()) scales = {2, 3, 4};
    if (dry_run) {
        std::cout << "prepare-data (dry run)\nroot = " << root << "\nscales =";
        for (int s : scales) std::cout << " " << s;
        std::cout << "\n";
        return kExitOk;
    }
    const data::PrepareResult r = data::prepare_data(root, scales);
    std::cout << "images = " << r.images << "\nlr_written = " << r.lr_written << "\nmean_rgb = "
              << r.mean_rgb[0] << " " << r.mean_rgb[1] << " " << r.mean_rgb[2] << "\n";
    return kExitOk;
}

int cmd_train(const cli::RunConfig& cfg, bool dry_run) {
    if (dry_run) {
        std::cout << cli::to_config_text(cfg);
        return kExitOk;
    }
    require_dir(cfg.data_root, "dataset root");
    cfg.model.validate();
    cfg.train.validate();

    const auto index = data::scan_dataset(cfg.data_root, cfg.model.scale);
    std::mt19937_64 rng(cfg.train.seed);
    Model<float> model = build_model<float>(cfg.model, rng);

    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    write_text(out / "config.txt", cli::to_config_text(cfg));

    trainer::TrainOptions opts;
    opts.callbacks.on_step = [](int64_t t, double lr, double loss) {
        if ((t + 1) % 100 == 0)
            std::cout << "iter " << (t + 1) << "  lr " << lr << "  l1 " << loss << "\n";
    };
    opts.callbacks.on_eval = [](int64_t t, double psnr) {
        std::cout << "iter " << t << "  val_psnr " << psnr << " dB\n";
    };
    trainer::Checkpoint ckpt = trainer::train(model, index, cfg.train, opts);
    trainer::save_checkpoint(ckpt, (out / "model.ckpt").string());
    save_history(ckpt, out / "history.tsv");

    if (cfg.finetune_iters > 0) {
        trainer::TrainConfig ft = cfg.train;
        ft.total_iters = cfg.finetune_iters;
        ckpt = trainer::finetune_large_patch(ckpt, index, ft, cfg.finetune_patch);
        trainer::save_checkpoint(ckpt, (out / "model_large_patch.ckpt").string());
        save_history(ckpt, out / "history_large_patch.tsv");
    }
    std::cout << "final checkpoint at iteration " << ckpt.iteration << "\n";
    return kExitOk;
}

int cmd_warm_start(const std::string& from, int target_scale, const cli::RunConfig& cfg,
                   bool dry_run) {
    const int64_t full_iters = cfg.train.total_iters / 2;  // 50% of the base budget
    const int64_t tail_iters = cfg.train.total_iters / 10;
    if (dry_run) {
        std::cout << "warm-start (dry run)\nfrom = " << from << "\ntarget_scale = " << target_scale
                  << "\nstage 1: tail-only, head/body frozen, up to tail_iters = " << tail_iters
                  << " (plateau stop)\nstage 2: full finetune, full_iters = " << full_iters << "\n"
                  << cli::to_config_text(cfg);
        return kExitOk;
    }
    require_file(from, "checkpoint");
    require_dir(cfg.data_root, "dataset root");

    const trainer::Checkpoint src = trainer::load_checkpoint(from);
    const auto index = data::scan_dataset(cfg.data_root, target_scale);
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    write_text(out / "config.txt", cli::to_config_text(cfg));

    cli::RunConfig run = cfg;
    run.model.scale = target_scale;
    trainer::TrainCallbacks cbs;
    cbs.on_eval = [](int64_t t, double psnr) {
        std::cout << "iter " << t << "  val_psnr " << psnr << " dB\n";
    };
    trainer::Checkpoint ckpt =
        trainer::warm_start(src, target_scale, index, tail_iters, full_iters, run.train, cbs);
    trainer::save_checkpoint(ckpt, (out / ("model_" + ckpt.stage + ".ckpt")).string());
    save_history(ckpt, out / "history.tsv");
    std::cout << "stage " << ckpt.stage << " checkpoint at iteration " << ckpt.iteration << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& benchmark, bool ensemble,
             const std::string& json_out, const cli::RunConfig& proto_cfg, bool dry_run) {
    if (dry_run) {
        std::cout << "eval (dry run)\nckpt = " << ckpt_path << "\nbenchmark = " << benchmark
                  << "\nensemble = " << (ensemble ? "true" : "false") << "\n"
                  << cli::to_config_text(proto_cfg);
        return kExitOk;
    }
    require_file(ckpt_path, "checkpoint");
    require_dir(benchmark, "benchmark");

    const trainer::Checkpoint ckpt = trainer::load_checkpoint(ckpt_path);
    const Model<float> model = trainer::model_from_checkpoint(ckpt);
    cli::RunConfig cfg = proto_cfg;
    cfg.model = model.config;
    const metrics::MetricReport report = metrics::evaluate_benchmark(
        trainer::model_fn(model), benchmark, model.config.scale, ensemble,
        protocol_of(cfg, ensemble));
    std::cout << report.to_table();
    if (!json_out.empty()) write_text(json_out, report.to_json());
    return kExitOk;
}

int cmd_infer(const std::string& ckpt_path, const std::string& in_path, const std::string& out_path,
              bool ensemble, std::optional<int> tile, bool dry_run) {
    if (dry_run) {
        std::cout << "infer (dry run)\nckpt = " << ckpt_path << "\nin = " << in_path
                  << "\nout = " << out_path << "\nensemble = " << (ensemble ? "true" : "false")
                  << "\ntile = " << (tile ? std::to_string(*tile) : "none") << "\n";
        return kExitOk;
    }
    require_file(ckpt_path, "checkpoint");
    require_file(in_path, "input image");

    const trainer::Checkpoint ckpt = trainer::load_checkpoint(ckpt_path);
    const Model<float> model = trainer::model_from_checkpoint(ckpt);
    metrics::infer_image(trainer::model_fn(model), model.config.scale, in_path, out_path, ensemble,
                         tile);
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Super-resolution training and evaluation toolkit"};
    app.require_subcommand(1);
    bool dry_run = false;

    // prepare-data
    auto* prep = app.add_subcommand("prepare-data", "Generate LR_bicubic trees and meta.json");
    std::string prep_root;
    std::vector<int> prep_scales;
    prep->add_option("--root", prep_root, "Dataset root containing HR/")->required();
    prep->add_option("--scales", prep_scales, "Scales to generate (default 2 3 4)");
    prep->add_flag("--dry-run", dry_run, "Print the plan without writing files");

    // train
    auto* train = app.add_subcommand("train", "Train a model");
    ConfigSources train_src;
    add_config_options(train, train_src);
    train->add_flag("--dry-run", dry_run, "Print the resolved configuration and exit");

    // warm-start
    auto* warm = app.add_subcommand("warm-start", "Transfer a x2 checkpoint to x3/x4");
    ConfigSources warm_src;
    std::string warm_from;
    int warm_scale = 4;
    warm->add_option("--from", warm_from, "Source x2 checkpoint")->required();
    warm->add_option("--scale", warm_scale, "Target scale (3 or 4)")->required();
    add_config_options(warm, warm_src);
    warm->add_flag("--dry-run", dry_run, "Print the stage plan and exit");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a benchmark directory");
    ConfigSources eval_src;
    std::string eval_ckpt, eval_benchmark, eval_json;
    bool eval_ensemble = false;
    eval->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
    eval->add_option("--benchmark", eval_benchmark, "Benchmark root (HR/ plus optional LR_bicubic/)")
        ->required();
    eval->add_flag("--ensemble", eval_ensemble, "Eight-transform self-ensemble");
    eval->add_option("--json", eval_json, "Write the JSON report here");
    add_config_options(eval, eval_src);
    eval->add_flag("--dry-run", dry_run, "Print the protocol and exit");

    // infer
    auto* infer = app.add_subcommand("infer", "Super-resolve one PNG");
    std::string infer_ckpt, infer_in, infer_out;
    bool infer_ensemble = false;
    int infer_tile = 0;
    infer->add_option("--ckpt", infer_ckpt, "Checkpoint file")->required();
    infer->add_option("--in", infer_in, "Input LR PNG")->required();
    infer->add_option("--out", infer_out, "Output PNG path")->required();
    infer->add_flag("--ensemble", infer_ensemble, "Eight-transform self-ensemble");
    infer->add_option("--tile", infer_tile, "Process in overlapping LR tiles of this size");
    infer->add_flag("--dry-run", dry_run, "Print the plan and exit");

    CLI11_PARSE(app, argc, argv);

    try {
        if (prep->parsed()) return cmd_prepare_data(prep_root, prep_scales, dry_run);
        if (train->parsed()) return cmd_train(resolve_config(train_src), dry_run);
        if (warm->parsed())
            return cmd_warm_start(warm_from, warm_scale, resolve_config(warm_src), dry_run);
        if (eval->parsed())
            return cmd_eval(eval_ckpt, eval_benchmark, eval_ensemble, eval_json,
                            resolve_config(eval_src), dry_run);
        if (infer->parsed())
            return cmd_infer(infer_ckpt, infer_in, infer_out, infer_ensemble,
                             infer_tile > 0 ? std::optional<int>(infer_tile) : std::nullopt,
                             dry_run);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const data::IndexError& e) {
        std::cerr << "index error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
