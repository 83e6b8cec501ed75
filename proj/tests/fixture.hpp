#pragma once

// Deterministic synthetic fixtures shared by the unit and acceptance tests:
// smooth natural-looking images (mixtures of sinusoids plus gradients) and
// on-disk dataset trees in the HR/ + LR_bicubic/ layout.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "sr/data.hpp"
#include "sr/image.hpp"

namespace fixture {

inline sr::Image synth_image(int h, int w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> freq(0.05, 0.45);
    std::uniform_real_distribution<double> phase(0.0, 6.28318);
    sr::Image img(h, w, 3);
    for (int ch = 0; ch < 3; ++ch) {
        const double fy1 = freq(rng), fx1 = freq(rng), p1 = phase(rng);
        const double fy2 = freq(rng), fx2 = freq(rng), p2 = phase(rng);
        const double gx = phase(rng) / 6.28318, gy = phase(rng) / 6.28318;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double v = 0.5;
                v += 0.18 * std::sin(fy1 * y + fx1 * x + p1);
                v += 0.12 * std::sin(fy2 * y - fx2 * x + p2);
                v += 0.1 * (gx * x / std::max(1, w - 1) + gy * y / std::max(1, h - 1));
                img.at(y, x, ch) = static_cast<float>(std::clamp(v, 0.02, 0.98));
            }
    }
    img.quantize8();  // match what PNG round trips would produce
    return img;
}

// Sharp-edged content (random rectangles over a gradient, plus mild texture):
// bicubic interpolation blurs these edges, so a trained model has headroom.
inline sr::Image synth_sharp(int h, int w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> px(0, w - 1), py(0, h - 1);
    sr::Image img(h, w, 3);
    const double g0 = unit(rng), g1 = unit(rng);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double t = 0.5 * (static_cast<double>(x) / std::max(1, w - 1) +
                                    static_cast<double>(y) / std::max(1, h - 1));
            for (int ch = 0; ch < 3; ++ch)
                img.at(y, x, ch) = static_cast<float>(0.25 + 0.5 * (g0 * (1 - t) + g1 * t));
        }
    for (int k = 0; k < 14; ++k) {
        int x0 = px(rng), x1 = px(rng), y0 = py(rng), y1 = py(rng);
        if (x0 > x1) std::swap(x0, x1);
        if (y0 > y1) std::swap(y0, y1);
        const double r = unit(rng), g = unit(rng), b = unit(rng);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                img.at(y, x, 0) = static_cast<float>(0.05 + 0.9 * r);
                img.at(y, x, 1) = static_cast<float>(0.05 + 0.9 * g);
                img.at(y, x, 2) = static_cast<float>(0.05 + 0.9 * b);
            }
    }
    // mild high-frequency texture so flat regions still carry signal
    const double fy = 0.9 + 0.6 * unit(rng), fx = 0.9 + 0.6 * unit(rng);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                const double v = img.at(y, x, ch) + 0.04 * std::sin(fy * y) * std::sin(fx * x);
                img.at(y, x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    img.quantize8();
    return img;
}

// HR fixtures that are 2x pixel replications of sharp half-resolution content.
// The ideal x2 upscaler for these is a learnable local operation (piecewise
// constant blocks), while plain bicubic interpolation blurs them — giving a
// trained model measurable headroom over the bicubic baseline.
inline sr::Image synth_blocky(int h, int w, uint64_t seed) {
    sr::Image half = synth_sharp(h / 2, w / 2, seed);
    sr::Image img(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = half.at(y / 2, x / 2, ch);
    return img;
}

// Writes `n` HR images (h x w) under root/HR. Returns the root as a string.
inline std::string write_dataset(const std::filesystem::path& root, int n, int h, int w,
                                 uint64_t seed) {
    std::filesystem::create_directories(root / "HR");
    for (int i = 0; i < n; ++i) {
        char name[16];
        std::snprintf(name, sizeof(name), "img%03d.png", i);
        sr::write_png((root / "HR" / name).string(), synth_image(h, w, seed + static_cast<uint64_t>(i)));
    }
    return root.string();
}

inline std::string write_blocky_dataset(const std::filesystem::path& root, int n, int h, int w,
                                       uint64_t seed) {
    std::filesystem::create_directories(root / "HR");
    for (int i = 0; i < n; ++i) {
        char name[16];
        std::snprintf(name, sizeof(name), "img%03d.png", i);
        sr::write_png((root / "HR" / name).string(),
                      synth_blocky(h, w, seed + static_cast<uint64_t>(i)));
    }
    return root.string();
}

inline std::filesystem::path temp_dir(const std::string& tag) {
    const auto p = std::filesystem::temp_directory_path() / ("sr_test_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace fixture
