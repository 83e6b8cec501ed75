#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sr/tensor.hpp"

namespace sr {

enum class Colorspace { rgb, y };

// H x W x C image with real values in [0,1] (clamped at I/O boundaries).
struct Image {
    int h = 0, w = 0, c = 0;
    Colorspace colorspace = Colorspace::rgb;
    std::vector<float> data;  // HWC

    Image() = default;
    Image(int h_, int w_, int c_, Colorspace cs = Colorspace::rgb)
        : h(h_), w(w_), c(c_), colorspace(cs), data(static_cast<size_t>(h_) * w_ * c_, 0.0f) {
        if (h_ < 1 || w_ < 1 || c_ < 1) throw ShapeError("Image: dims must be >= 1");
    }

    float& at(int y, int x, int ch) { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
    float at(int y, int x, int ch) const { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }

    void clamp01() {
        for (auto& v : data) v = std::clamp(v, 0.0f, 1.0f);
    }

    // Quantize to 8-bit levels and back; matches file-based evaluation.
    void quantize8() {
        for (auto& v : data) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
    }
};

// Single image <-> (1,C,H,W) batch tensor.
template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
    Tensor<T> t({1, img.c, img.h, img.w});
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                t[(static_cast<size_t>(ch) * img.h + y) * img.w + x] = static_cast<T>(img.at(y, x, ch));
    return t;
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t, int batch_index = 0, Colorspace cs = Colorspace::rgb) {
    const int c = static_cast<int>(t.dim(1)), h = static_cast<int>(t.dim(2)), w = static_cast<int>(t.dim(3));
    Image img(h, w, c, cs);
    const T* base = t.ptr() + static_cast<size_t>(batch_index) * c * h * w;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                img.at(y, x, ch) = static_cast<float>(base[(static_cast<size_t>(ch) * h + y) * w + x]);
    return img;
}

inline Image crop(const Image& img, int y0, int x0, int ch_, int cw) {
    if (y0 < 0 || x0 < 0 || y0 + ch_ > img.h || x0 + cw > img.w)
        throw ShapeError("crop: window outside image");
    Image out(ch_, cw, img.c, img.colorspace);
    for (int y = 0; y < ch_; ++y)
        for (int x = 0; x < cw; ++x)
            for (int k = 0; k < img.c; ++k) out.at(y, x, k) = img.at(y0 + y, x0 + x, k);
    return out;
}

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// 8-bit PNG I/O (libpng). Grayscale files are expanded to RGB on read.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

// Separable cubic-convolution resize (a = -0.5) with the kernel support
// widened by the scale factor when downscaling (antialiasing). This is the
// de-facto SR benchmark resizer.
Image bicubic_resize(const Image& img, int out_h, int out_w);

}  // namespace sr
