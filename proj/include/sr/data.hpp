#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sr/image.hpp"
#include "sr/tensor.hpp"

namespace sr::data {

struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SamplingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IndexEntry {
    std::string stem;
    std::string hr_path;
    std::optional<std::string> lr_path;  // synthesized on the fly when absent
};

// Expects <root>/HR/*.png, optionally <root>/LR_bicubic/X{scale}/*.png with
// identical stems. Entries are sorted by filename.
std::vector<IndexEntry> scan_dataset(const std::string& root, int scale);

struct PatchPair {
    Image lr, hr;
    std::string source_id;
    int row = 0, col = 0;  // LR coordinates of the crop
};

struct RejectionConfig {
    double threshold_db = 24.0;
    double reject_prob = 0.8;
};

struct SamplerConfig {
    int patch_size = 48;  // LR patch edge
    bool geo_aug = true;
    bool color_aug = false;
    std::optional<double> mixup_alpha;  // recipe value 0.15
    std::optional<RejectionConfig> rejection;
    uint64_t seed = 0;

    void validate() const {
        if (patch_size < 8) throw ConfigError("patch_size: must be >= 8");
        if (rejection && (rejection->reject_prob < 0 || rejection->reject_prob > 1))
            throw ConfigError("reject_prob: must lie in [0,1]");
        if (mixup_alpha && *mixup_alpha <= 0) throw ConfigError("mixup_alpha: must be positive");
    }
};

// Uniform aligned crop; HR offset = scale * LR offset.
PatchPair sample_patch_pair(const Image& hr, const Image& lr, int scale, const SamplerConfig& cfg,
                            std::mt19937_64& rng);

// Independent 50% horizontal flip, vertical flip and transpose, identical on
// both members.
PatchPair augment_geometric(PatchPair pair, std::mt19937_64& rng);

// 50% invert (x -> 1-x), 50% uniformly random channel permutation, identical
// on both members.
PatchPair augment_color(PatchPair pair, std::mt19937_64& rng);

double beta_sample(double alpha, std::mt19937_64& rng);

// One lambda ~ Beta(alpha,alpha) per batch; random permutation partner; both
// LR and HR mixed with the same lambda and pairing.
void mixup_batch(std::vector<PatchPair>& batch, double alpha, std::mt19937_64& rng);

// Accept iff bicubic upsampling of the LR patch scores below threshold_db
// against the HR patch (full RGB, no crop), else accept with prob 1-reject_prob.
bool rejection_filter(const PatchPair& pair, double threshold_db, double reject_prob,
                      std::mt19937_64& rng);

struct Batch {
    Tensor<float> lr;  // (B,C,p,p)
    Tensor<float> hr;  // (B,C,s*p,s*p)
    std::vector<std::string> source_ids;
};

// Infinite deterministic stream of augmented batches. Decoded images are
// cached in memory across draws.
class BatchStream {
public:
    BatchStream(std::vector<IndexEntry> index, int scale, SamplerConfig cfg, int batch_size);
    Batch next();

private:
    PatchPair draw_pair();
    const Image& hr_of(size_t i);
    const Image& lr_of(size_t i);

    std::vector<IndexEntry> index_;
    int scale_;
    SamplerConfig cfg_;
    int batch_size_;
    std::mt19937_64 rng_;
    std::vector<std::optional<Image>> hr_cache_, lr_cache_;
};

struct PrepareResult {
    int images = 0;
    int lr_written = 0;
    std::array<double, 3> mean_rgb{};
};

// Generates <root>/LR_bicubic/X{s}/ trees and <root>/meta.json. Idempotent:
// rerunning leaves file contents unchanged.
PrepareResult prepare_data(const std::string& root, const std::vector<int>& scales);

}  // namespace sr::data
