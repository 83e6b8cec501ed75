#include <cmath>

#include "sr/image.hpp"

namespace sr {

namespace {

// Cubic convolution kernel, a = -0.5 (Keys).
double cubic(double x) {
    x = std::fabs(x);
    if (x < 1.0) return 1.5 * x * x * x - 2.5 * x * x + 1.0;
    if (x < 2.0) return -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0;
    return 0.0;
}

struct Taps {
    std::vector<int> index;       // clamped source indices, flattened per output pixel
    std::vector<double> weight;   // normalized weights
    int taps = 0;
};

// Per-dimension contribution table. When downscaling the kernel is stretched
// by 1/scale so it acts as a low-pass filter.
Taps make_taps(int in_n, int out_n) {
    const double scale = static_cast<double>(out_n) / in_n;
    const double kscale = scale < 1.0 ? scale : 1.0;
    const double support = 2.0 / kscale;
    const int taps = static_cast<int>(std::ceil(support)) * 2 + 2;

    Taps t;
    t.taps = taps;
    t.index.resize(static_cast<size_t>(out_n) * taps);
    t.weight.resize(static_cast<size_t>(out_n) * taps);
    for (int i = 0; i < out_n; ++i) {
        const double u = (i + 0.5) / scale - 0.5;  // source coordinate of output center
        const int left = static_cast<int>(std::floor(u - support)) + 1;
        double sum = 0.0;
        for (int k = 0; k < taps; ++k) {
            const double w = cubic((u - (left + k)) * kscale) * kscale;
            t.weight[static_cast<size_t>(i) * taps + k] = w;
            sum += w;
        }
        for (int k = 0; k < taps; ++k) {
            t.weight[static_cast<size_t>(i) * taps + k] /= sum;
            int idx = left + k;
            if (idx < 0) idx = 0;
            if (idx >= in_n) idx = in_n - 1;  // replicate border
            t.index[static_cast<size_t>(i) * taps + k] = idx;
        }
    }
    return t;
}

}  // namespace

Image bicubic_resize(const Image& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("bicubic_resize: output dims must be >= 1");
    const Taps ty = make_taps(img.h, out_h);
    const Taps tx = make_taps(img.w, out_w);

    // rows first (vertical), then columns
    Image tmp(out_h, img.w, img.c, img.colorspace);
    for (int y = 0; y < out_h; ++y) {
        const int* idx = ty.index.data() + static_cast<size_t>(y) * ty.taps;
        const double* wt = ty.weight.data() + static_cast<size_t>(y) * ty.taps;
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.c; ++c) {
                double acc = 0.0;
                for (int k = 0; k < ty.taps; ++k) acc += wt[k] * img.at(idx[k], x, c);
                tmp.at(y, x, c) = static_cast<float>(acc);
            }
    }
    Image out(out_h, out_w, img.c, img.colorspace);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const int* idx = tx.index.data() + static_cast<size_t>(x) * tx.taps;
            const double* wt = tx.weight.data() + static_cast<size_t>(x) * tx.taps;
            for (int c = 0; c < img.c; ++c) {
                double acc = 0.0;
                for (int k = 0; k < tx.taps; ++k) acc += wt[k] * tmp.at(y, idx[k], c);
                out.at(y, x, c) = static_cast<float>(acc);
            }
        }
    return out;
}

}  // namespace sr
