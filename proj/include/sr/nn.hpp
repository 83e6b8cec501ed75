#pragma once

#include <cmath>

#include "sr/tensor.hpp"

// Low-level NCHW kernels. All loops are serial with a fixed iteration order so
// training runs are bitwise reproducible.

namespace sr::nn {

template <typename T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Copies one image (C,H,W) into a zero-padded buffer (C,H+2p,W+2p).
template <typename T>
void pad_image(const T* src, int c, int h, int w, int pad, std::vector<T>& dst) {
    const int hp = h + 2 * pad, wp = w + 2 * pad;
    dst.assign(static_cast<size_t>(c) * hp * wp, T(0));
    for (int ch = 0; ch < c; ++ch) {
        const T* s = src + static_cast<size_t>(ch) * h * w;
        T* d = dst.data() + static_cast<size_t>(ch) * hp * wp + static_cast<size_t>(pad) * wp + pad;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) d[static_cast<size_t>(y) * wp + x] = s[static_cast<size_t>(y) * w + x];
    }
}

// in: (N,IC,H,W), w: (OC,IC,k,k), b: (OC). Stride 1, spatial dims preserved
// when pad == k/2.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b, int pad) {
    const int n = static_cast<int>(in.dim(0)), ic = static_cast<int>(in.dim(1));
    const int h = static_cast<int>(in.dim(2)), wd = static_cast<int>(in.dim(3));
    const int oc = static_cast<int>(w.dim(0)), k = static_cast<int>(w.dim(2));
    if (static_cast<int>(w.dim(1)) != ic)
        throw ShapeError("conv2d: input channels " + std::to_string(ic) + " != weight in-channels " +
                         std::to_string(w.dim(1)));
    const int oh = h + 2 * pad - k + 1, ow = wd + 2 * pad - k + 1;
    const int wp = wd + 2 * pad;
    Tensor<T> out({n, oc, oh, ow});

    std::vector<T> padbuf;
    for (int ni = 0; ni < n; ++ni) {
        pad_image(in.ptr() + static_cast<size_t>(ni) * ic * h * wd, ic, h, wd, pad, padbuf);
        for (int o = 0; o < oc; ++o) {
            T* obase = out.ptr() + (static_cast<size_t>(ni) * oc + o) * oh * ow;
            const T bias = b.numel() ? b[o] : T(0);
            for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i) obase[i] = bias;
            for (int c = 0; c < ic; ++c) {
                const T* pimg = padbuf.data() + static_cast<size_t>(c) * (h + 2 * pad) * wp;
                const T* wk = w.ptr() + ((static_cast<size_t>(o) * ic + c) * k) * k;
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = wk[ky * k + kx];
                        for (int oy = 0; oy < oh; ++oy) {
                            const T* ip = pimg + static_cast<size_t>(oy + ky) * wp + kx;
                            T* op = obase + static_cast<size_t>(oy) * ow;
                            for (int ox = 0; ox < ow; ++ox) op[ox] += wv * ip[ox];
                        }
                    }
                }
            }
        }
    }
    return out;
}

// Accumulates into grad_w / grad_b (and grad_in when non-null); caller zeroes.
template <typename T>
void conv2d_backward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& grad_out, int pad,
                     Tensor<T>* grad_in, Tensor<T>& grad_w, Tensor<T>& grad_b) {
    const int n = static_cast<int>(in.dim(0)), ic = static_cast<int>(in.dim(1));
    const int h = static_cast<int>(in.dim(2)), wd = static_cast<int>(in.dim(3));
    const int oc = static_cast<int>(w.dim(0)), k = static_cast<int>(w.dim(2));
    const int oh = static_cast<int>(grad_out.dim(2)), ow = static_cast<int>(grad_out.dim(3));
    const int hp = h + 2 * pad, wp = wd + 2 * pad;

    std::vector<T> padbuf, gpad;
    for (int ni = 0; ni < n; ++ni) {
        pad_image(in.ptr() + static_cast<size_t>(ni) * ic * h * wd, ic, h, wd, pad, padbuf);
        if (grad_in) gpad.assign(static_cast<size_t>(ic) * hp * wp, T(0));
        for (int o = 0; o < oc; ++o) {
            const T* gobase = grad_out.ptr() + (static_cast<size_t>(ni) * oc + o) * oh * ow;
            if (grad_b.numel()) {
                T s = 0;
                for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i) s += gobase[i];
                grad_b[o] += s;
            }
            for (int c = 0; c < ic; ++c) {
                const T* pimg = padbuf.data() + static_cast<size_t>(c) * hp * wp;
                T* gw = grad_w.ptr() + ((static_cast<size_t>(o) * ic + c) * k) * k;
                const T* wk = w.ptr() + ((static_cast<size_t>(o) * ic + c) * k) * k;
                T* gp = grad_in ? gpad.data() + static_cast<size_t>(c) * hp * wp : nullptr;
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        T acc = 0;
                        const T wv = wk[ky * k + kx];
                        for (int oy = 0; oy < oh; ++oy) {
                            const T* ip = pimg + static_cast<size_t>(oy + ky) * wp + kx;
                            const T* go = gobase + static_cast<size_t>(oy) * ow;
                            for (int ox = 0; ox < ow; ++ox) acc += go[ox] * ip[ox];
                            if (gp) {
                                T* gr = gp + static_cast<size_t>(oy + ky) * wp + kx;
                                for (int ox = 0; ox < ow; ++ox) gr[ox] += wv * go[ox];
                            }
                        }
                        gw[ky * k + kx] += acc;
                    }
                }
            }
        }
        if (grad_in) {
            for (int c = 0; c < ic; ++c) {
                const T* gp = gpad.data() + static_cast<size_t>(c) * hp * wp + static_cast<size_t>(pad) * wp + pad;
                T* gi = grad_in->ptr() + (static_cast<size_t>(ni) * ic + c) * h * wd;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < wd; ++x)
                        gi[static_cast<size_t>(y) * wd + x] += gp[static_cast<size_t>(y) * wp + x];
            }
        }
    }
}

// (N, C*r*r, H, W) -> (N, C, H*r, W*r); input channel c*r*r + dy*r + dx feeds
// output pixel (h*r+dy, w*r+dx) of channel c.
template <typename T>
Tensor<T> pixel_shuffle_forward(const Tensor<T>& in, int r) {
    const int n = static_cast<int>(in.dim(0)), cin = static_cast<int>(in.dim(1));
    const int h = static_cast<int>(in.dim(2)), w = static_cast<int>(in.dim(3));
    if (cin % (r * r) != 0) throw ShapeError("pixel_shuffle: channels not divisible by r^2");
    const int c = cin / (r * r);
    Tensor<T> out({n, c, static_cast<int64_t>(h) * r, static_cast<int64_t>(w) * r});
    const int ohw = h * r * w * r;
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const T* src = in.ptr() + (static_cast<size_t>(ni) * cin + ci * r * r + dy * r + dx) * h * w;
                    T* dst = out.ptr() + static_cast<size_t>(ni) * c * ohw + static_cast<size_t>(ci) * ohw;
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                            dst[(static_cast<size_t>(y) * r + dy) * (w * r) + x * r + dx] =
                                src[static_cast<size_t>(y) * w + x];
                }
    return out;
}

template <typename T>
Tensor<T> pixel_shuffle_backward(const Tensor<T>& grad_out, int r) {
    const int n = static_cast<int>(grad_out.dim(0)), c = static_cast<int>(grad_out.dim(1));
    const int oh = static_cast<int>(grad_out.dim(2)), ow = static_cast<int>(grad_out.dim(3));
    const int h = oh / r, w = ow / r;
    Tensor<T> gin({n, static_cast<int64_t>(c) * r * r, h, w});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    T* dst = gin.ptr() + (static_cast<size_t>(ni) * c * r * r + ci * r * r + dy * r + dx) * h * w;
                    const T* src = grad_out.ptr() + (static_cast<size_t>(ni) * c + ci) * oh * ow;
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                            dst[static_cast<size_t>(y) * w + x] =
                                src[(static_cast<size_t>(y) * r + dy) * ow + x * r + dx];
                }
    return gin;
}

enum class Activation { relu, silu };

template <typename T>
void activation_forward(Activation a, const Tensor<T>& in, Tensor<T>& out) {
    out.shape = in.shape;
    out.data.resize(in.data.size());
    if (a == Activation::relu) {
        for (size_t i = 0; i < in.data.size(); ++i) out.data[i] = in.data[i] > T(0) ? in.data[i] : T(0);
    } else {
        for (size_t i = 0; i < in.data.size(); ++i) out.data[i] = in.data[i] * sigmoid(in.data[i]);
    }
}

template <typename T>
void activation_backward(Activation a, const Tensor<T>& pre, const Tensor<T>& grad_out, Tensor<T>& grad_in) {
    grad_in.shape = pre.shape;
    grad_in.data.resize(pre.data.size());
    if (a == Activation::relu) {
        for (size_t i = 0; i < pre.data.size(); ++i)
            grad_in.data[i] = pre.data[i] > T(0) ? grad_out.data[i] : T(0);
    } else {
        for (size_t i = 0; i < pre.data.size(); ++i) {
            const T s = sigmoid(pre.data[i]);
            grad_in.data[i] = grad_out.data[i] * (s * (T(1) + pre.data[i] * (T(1) - s)));
        }
    }
}

// (N,C,H,W) -> (N,C,1,1)
template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& in) {
    const int n = static_cast<int>(in.dim(0)), c = static_cast<int>(in.dim(1));
    const size_t hw = static_cast<size_t>(in.dim(2)) * in.dim(3);
    Tensor<T> out({n, c, 1, 1});
    for (int i = 0; i < n * c; ++i) {
        const T* p = in.ptr() + static_cast<size_t>(i) * hw;
        T s = 0;
        for (size_t j = 0; j < hw; ++j) s += p[j];
        out[i] = s / static_cast<T>(hw);
    }
    return out;
}

template <typename T>
void global_avg_pool_backward(const Tensor<T>& grad_out, int h, int w, Tensor<T>& grad_in) {
    const int n = static_cast<int>(grad_out.dim(0)), c = static_cast<int>(grad_out.dim(1));
    const size_t hw = static_cast<size_t>(h) * w;
    grad_in = Tensor<T>({n, c, h, w});
    for (int i = 0; i < n * c; ++i) {
        const T g = grad_out[i] / static_cast<T>(hw);
        T* p = grad_in.ptr() + static_cast<size_t>(i) * hw;
        for (size_t j = 0; j < hw; ++j) p[j] = g;
    }
}

}  // namespace sr::nn
