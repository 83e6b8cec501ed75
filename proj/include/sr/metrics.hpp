#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sr/image.hpp"

namespace sr::metrics {

struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A super-resolver: maps an LR image to its SR output at a fixed scale.
using SrFn = std::function<Image(const Image&)>;

// Studio-swing BT.601 luma on the [0,1] domain (the convention published SR
// benchmark numbers assume). `full_swing` switches to the 0.299/0.587/0.114
// variant.
Image rgb_to_y(const Image& img, bool full_swing = false);

// 10*log10(1/MSE) on [0,1]; identical images return the 100 dB cap.
double psnr(const Image& a, const Image& b, int crop_border = 0);
constexpr double kPsnrCap = 100.0;

// Windowed SSIM, 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03, dynamic
// range 1.0, averaged over valid window positions. Single-channel inputs.
double ssim(const Image& a, const Image& b);

// Dihedral transforms used by self-ensemble: index 0..7 = {rot0..rot270} x
// {no-flip, h-flip}.
Image rotate90(const Image& img, int times);
Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);
Image transpose(const Image& img);
Image dihedral_apply(const Image& img, int k);
Image dihedral_invert(const Image& img, int k);

// Average of the model output over the 8 dihedral transforms of the input,
// each inverse-transformed back.
Image self_ensemble(const SrFn& model, const Image& lr);

struct Protocol {
    std::string colorspace = "y";    // "y" or "rgb"
    bool full_swing = false;
    int crop_border = 0;
    bool ensemble = false;
    bool quantize = true;
    int scale = 2;
};

struct MetricReport {
    struct Entry {
        std::string name;
        double psnr_db = 0;
        double ssim = 0;
    };
    std::vector<Entry> per_image;
    double mean_psnr = 0;
    double mean_ssim = 0;
    Protocol protocol;

    std::string to_json() const;
    std::string to_table() const;
};

// Benchmark root follows the dataset layout (HR/ plus optional
// LR_bicubic/X{scale}/). Missing LR images are synthesized by bicubic_resize.
MetricReport evaluate_benchmark(const SrFn& model, const std::string& benchmark_root, int scale,
                                bool ensemble, std::optional<Protocol> protocol = std::nullopt);

// Single-image inference to an 8-bit PNG. `tile` processes overlapping LR
// tiles blended by center-cropping.
void infer_image(const SrFn& model, int scale, const std::string& lr_path,
                 const std::string& out_path, bool ensemble, std::optional<int> tile = std::nullopt);

// Tiled SR without file I/O (used by infer_image and tests directly).
Image sr_tiled(const SrFn& model, int scale, const Image& lr, int tile);

}  // namespace sr::metrics
