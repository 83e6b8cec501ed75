#pragma once

#include <string>

#include "sr/model.hpp"
#include "sr/trainer.hpp"

namespace sr::cli {

// Flat run configuration: model topology, training hyperparameters, sampler
// flags, and the evaluation protocol. Loaded from `key = value` text files;
// command-line flags override file values. Unknown keys are rejected.
struct RunConfig {
    ModelConfig model;
    trainer::TrainConfig train;

    std::string data_root;
    std::string out_dir = "runs/out";

    // optional large-patch finetuning stage appended after the main run
    int64_t finetune_iters = 0;
    int finetune_patch = 64;

    // evaluation protocol
    std::string colorspace = "y";
    bool full_swing = false;
    bool ensemble = false;
    bool quantize = true;
    int crop_border = -1;  // -1: use the scale

    std::string preset;  // informational: which preset seeded this config
};

// Named hyperparameter rows. `original` is the reference protocol
// (BS 16, lr 1e-4, Adam, multistep halving, 1725K iters); `baseline` the
// large-batch one (BS 256, lr 0.0032, Lamb, cosine, 80K); `longer` doubles
// the budget to 160K; `rcan-it` adds SiLU and a 40K finetune at 64x64 patches.
RunConfig preset(const std::string& name);

// Parse one `key = value` assignment. Throws ConfigError on unknown keys or
// unparsable values.
void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value);

// Load a UTF-8 config file of flat assignments ('#' starts a comment).
void apply_file(RunConfig& cfg, const std::string& path);

// Serialize every key; parsing the result reproduces the config exactly.
std::string to_config_text(const RunConfig& cfg);

RunConfig parse_config_text(const std::string& text);

bool run_config_equal(const RunConfig& a, const RunConfig& b);

}  // namespace sr::cli
