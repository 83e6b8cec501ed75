#pragma once

#include <array>
#include <optional>
#include <random>
#include <utility>

#include "sr/nn.hpp"
#include "sr/tensor.hpp"

namespace sr {

struct ModelConfig {
    int scale = 2;
    int n_groups = 10;
    int n_blocks_per_group = 20;
    int n_feats = 64;
    int reduction = 16;
    nn::Activation activation = nn::Activation::relu;
    int in_channels = 3;
    std::optional<std::array<double, 3>> mean_shift;  // per-channel, [0,1] domain
    double res_scale = 1.0;

    void validate() const {
        if (scale < 2 || scale > 4) throw ConfigError("scale: must be in {2,3,4}");
        if (n_groups < 1) throw ConfigError("n_groups: must be >= 1");
        if (n_blocks_per_group < 1) throw ConfigError("n_blocks_per_group: must be >= 1");
        if (n_feats < 1) throw ConfigError("n_feats: must be >= 1");
        if (reduction < 1) throw ConfigError("reduction: must be >= 1");
        if (n_feats % reduction != 0)
            throw ConfigError("reduction: n_feats (" + std::to_string(n_feats) +
                              ") not divisible by reduction (" + std::to_string(reduction) + ")");
        if (in_channels < 1) throw ConfigError("in_channels: must be >= 1");
    }
};

template <typename T>
struct Conv {
    Tensor<T> w;  // (OC,IC,k,k)
    Tensor<T> b;  // (OC)
};

template <typename T>
struct BlockParams {
    Conv<T> conv1, conv2;   // 3x3
    Conv<T> ca_fc1, ca_fc2; // 1x1 attention bottleneck
};

template <typename T>
struct GroupParams {
    std::vector<BlockParams<T>> blocks;
    Conv<T> tailconv;  // trailing 3x3
};

template <typename T>
struct TailParams {
    std::vector<Conv<T>> up;  // one stage for x2/x3, two cascaded x2 stages for x4
    Conv<T> final_conv;
};

// RCAN-family model: head conv, residual-in-residual body with channel
// attention, scale-specific pixel-shuffle tail. Parameter naming
// (head.* / body.groupI.blockJ.* / body.groupI.tailconv.* / tail.*) is the
// warm-start transfer contract and must stay stable.
template <typename T>
struct Model {
    ModelConfig config;
    Conv<T> head;
    std::vector<GroupParams<T>> groups;
    TailParams<T> tail;

    template <typename Self, typename F>
    static void visit_impl(Self& m, F&& fn) {
        fn("head.conv.weight", m.head.w);
        fn("head.conv.bias", m.head.b);
        for (size_t g = 0; g < m.groups.size(); ++g) {
            const std::string gp = "body.group" + std::to_string(g) + ".";
            for (size_t b = 0; b < m.groups[g].blocks.size(); ++b) {
                const std::string bp = gp + "block" + std::to_string(b) + ".";
                auto& blk = m.groups[g].blocks[b];
                fn(bp + "conv1.weight", blk.conv1.w);
                fn(bp + "conv1.bias", blk.conv1.b);
                fn(bp + "conv2.weight", blk.conv2.w);
                fn(bp + "conv2.bias", blk.conv2.b);
                fn(bp + "ca.fc1.weight", blk.ca_fc1.w);
                fn(bp + "ca.fc1.bias", blk.ca_fc1.b);
                fn(bp + "ca.fc2.weight", blk.ca_fc2.w);
                fn(bp + "ca.fc2.bias", blk.ca_fc2.b);
            }
            fn(gp + "tailconv.weight", m.groups[g].tailconv.w);
            fn(gp + "tailconv.bias", m.groups[g].tailconv.b);
        }
        for (size_t u = 0; u < m.tail.up.size(); ++u) {
            const std::string up = "tail.up" + std::to_string(u) + ".conv.";
            fn(up + "weight", m.tail.up[u].w);
            fn(up + "bias", m.tail.up[u].b);
        }
        fn("tail.final.weight", m.tail.final_conv.w);
        fn("tail.final.bias", m.tail.final_conv.b);
    }

    template <typename F>
    void visit(F&& fn) { visit_impl(*this, std::forward<F>(fn)); }
    template <typename F>
    void visit(F&& fn) const { visit_impl(*this, std::forward<F>(fn)); }

    int64_t parameter_count() const {
        int64_t n = 0;
        visit([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
        return n;
    }
};

enum class ParamGroup { head, body, tail };

inline ParamGroup param_group_of(const std::string& name) {
    if (name.rfind("head.", 0) == 0) return ParamGroup::head;
    if (name.rfind("body.", 0) == 0) return ParamGroup::body;
    if (name.rfind("tail.", 0) == 0) return ParamGroup::tail;
    throw ConfigError("parameter name outside head/body/tail partition: " + name);
}

namespace detail {

// Uniform fan-in init: w ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero bias.
template <typename T>
Conv<T> make_conv(int oc, int ic, int k, std::mt19937_64& rng) {
    Conv<T> c;
    c.w = Tensor<T>({oc, ic, k, k});
    c.b = Tensor<T>({oc});
    const double bound = 1.0 / std::sqrt(static_cast<double>(ic) * k * k);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : c.w.data) v = static_cast<T>(dist(rng));
    return c;
}

template <typename T>
TailParams<T> make_tail(const ModelConfig& cfg, std::mt19937_64& rng) {
    TailParams<T> tail;
    if (cfg.scale == 2 || cfg.scale == 3) {
        tail.up.push_back(make_conv<T>(cfg.n_feats * cfg.scale * cfg.scale, cfg.n_feats, 3, rng));
    } else if (cfg.scale == 4) {
        tail.up.push_back(make_conv<T>(cfg.n_feats * 4, cfg.n_feats, 3, rng));
        tail.up.push_back(make_conv<T>(cfg.n_feats * 4, cfg.n_feats, 3, rng));
    } else {
        throw ConfigError("scale: unsupported value " + std::to_string(cfg.scale));
    }
    tail.final_conv = make_conv<T>(cfg.in_channels, cfg.n_feats, 3, rng);
    return tail;
}

}  // namespace detail

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    Model<T> m;
    m.config = cfg;
    m.head = detail::make_conv<T>(cfg.n_feats, cfg.in_channels, 3, rng);
    m.groups.resize(cfg.n_groups);
    for (auto& g : m.groups) {
        g.blocks.resize(cfg.n_blocks_per_group);
        for (auto& b : g.blocks) {
            b.conv1 = detail::make_conv<T>(cfg.n_feats, cfg.n_feats, 3, rng);
            b.conv2 = detail::make_conv<T>(cfg.n_feats, cfg.n_feats, 3, rng);
            b.ca_fc1 = detail::make_conv<T>(cfg.n_feats / cfg.reduction, cfg.n_feats, 1, rng);
            b.ca_fc2 = detail::make_conv<T>(cfg.n_feats, cfg.n_feats / cfg.reduction, 1, rng);
        }
        g.tailconv = detail::make_conv<T>(cfg.n_feats, cfg.n_feats, 3, rng);
    }
    m.tail = detail::make_tail<T>(cfg, rng);
    return m;
}

// Head/body tensors are shared bitwise with the source; only the tail is
// reinitialized for the new scale.
template <typename T>
Model<T> swap_tail(const Model<T>& src, int new_scale, std::mt19937_64& rng) {
    if (new_scale < 2 || new_scale > 4)
        throw ConfigError("scale: unsupported value " + std::to_string(new_scale));
    Model<T> m = src;
    m.config.scale = new_scale;
    m.tail = detail::make_tail<T>(m.config, rng);
    return m;
}

// Zero-valued clone with identical structure; used as a gradient store.
template <typename T>
Model<T> zeros_like(const Model<T>& m) {
    Model<T> z = m;
    z.visit([](const std::string&, Tensor<T>& t) { t.fill(T(0)); });
    return z;
}

// ---- forward / backward ----

template <typename T>
struct BlockCache {
    Tensor<T> in, pre1, act1, branch;           // conv path
    Tensor<T> gap, fc1_pre, fc1_act, gate;      // attention path (gate = sigmoid(fc2))
    bool dropped = false;                        // stochastic depth
};

template <typename T>
struct GroupCache {
    Tensor<T> in;
    std::vector<BlockCache<T>> blocks;
    Tensor<T> tail_in;
};

template <typename T>
struct ForwardCache {
    Tensor<T> input;      // after mean shift
    Tensor<T> head_out;
    std::vector<GroupCache<T>> groups;
    Tensor<T> body_plus;  // body out + head out
    std::vector<Tensor<T>> up_in;   // input of each upsampler conv
    Tensor<T> final_in;
};

struct ForwardOptions {
    bool train_mode = false;
    double stochastic_depth_p = 0.0;  // skip probability per residual block
    std::mt19937_64* rng = nullptr;   // required when train_mode && p > 0
};

// Channel attention: gap -> 1x1 (C->C/r) -> act -> 1x1 (C/r->C) -> sigmoid,
// gate multiplies the input per channel.
template <typename T>
Tensor<T> channel_attention_forward(const Tensor<T>& x, const BlockParams<T>& p,
                                    nn::Activation act, BlockCache<T>* cache) {
    if (x.dim(1) % p.ca_fc1.w.dim(1) != 0 || x.dim(1) != p.ca_fc1.w.dim(1))
        throw ShapeError("channel_attention: channel count mismatch");
    Tensor<T> gap = nn::global_avg_pool_forward(x);
    Tensor<T> fc1_pre = nn::conv2d_forward(gap, p.ca_fc1.w, p.ca_fc1.b, 0);
    Tensor<T> fc1_act;
    nn::activation_forward(act, fc1_pre, fc1_act);
    Tensor<T> fc2 = nn::conv2d_forward(fc1_act, p.ca_fc2.w, p.ca_fc2.b, 0);
    Tensor<T> gate = fc2;
    for (auto& v : gate.data) v = nn::sigmoid(v);

    const int n = static_cast<int>(x.dim(0)), c = static_cast<int>(x.dim(1));
    const size_t hw = static_cast<size_t>(x.dim(2)) * x.dim(3);
    Tensor<T> out = x;
    for (int i = 0; i < n * c; ++i) {
        T* o = out.ptr() + static_cast<size_t>(i) * hw;
        const T g = gate[i];
        for (size_t j = 0; j < hw; ++j) o[j] *= g;
    }
    if (cache) {
        cache->gap = std::move(gap);
        cache->fc1_pre = std::move(fc1_pre);
        cache->fc1_act = std::move(fc1_act);
        cache->gate = std::move(gate);
    }
    return out;
}

template <typename T>
Tensor<T> forward(const Model<T>& m, const Tensor<T>& x, const ForwardOptions& opts = {},
                  ForwardCache<T>* cache = nullptr) {
    const auto& cfg = m.config;
    if (x.shape.size() != 4 || x.dim(1) != cfg.in_channels)
        throw ShapeError("forward: expected (N," + std::to_string(cfg.in_channels) +
                         ",H,W) input, got " + shape_str(x.shape));
    if (x.dim(2) < 1 || x.dim(3) < 1) throw ShapeError("forward: empty spatial dims");

    Tensor<T> cur = x;
    if (cfg.mean_shift) {
        const int n = static_cast<int>(x.dim(0));
        const size_t hw = static_cast<size_t>(x.dim(2)) * x.dim(3);
        for (int ni = 0; ni < n; ++ni)
            for (int c = 0; c < cfg.in_channels; ++c) {
                T* p = cur.ptr() + (static_cast<size_t>(ni) * cfg.in_channels + c) * hw;
                const T mu = static_cast<T>((*cfg.mean_shift)[static_cast<size_t>(c % 3)]);
                for (size_t j = 0; j < hw; ++j) p[j] -= mu;
            }
    }
    if (cache) cache->input = cur;

    Tensor<T> head_out = nn::conv2d_forward(cur, m.head.w, m.head.b, 1);
    if (cache) {
        cache->head_out = head_out;
        cache->groups.resize(m.groups.size());
    }

    std::bernoulli_distribution drop(opts.stochastic_depth_p);
    const T survive = static_cast<T>(1.0 - opts.stochastic_depth_p);

    Tensor<T> body = head_out;
    for (size_t gi = 0; gi < m.groups.size(); ++gi) {
        const auto& g = m.groups[gi];
        GroupCache<T>* gc = cache ? &cache->groups[gi] : nullptr;
        if (gc) {
            gc->in = body;
            gc->blocks.resize(g.blocks.size());
        }
        Tensor<T> gin = body;
        for (size_t bi = 0; bi < g.blocks.size(); ++bi) {
            const auto& blk = g.blocks[bi];
            BlockCache<T>* bc = gc ? &gc->blocks[bi] : nullptr;
            bool dropped = false;
            if (opts.train_mode && opts.stochastic_depth_p > 0.0) {
                if (!opts.rng) throw ConfigError("stochastic depth in train mode requires an rng");
                dropped = drop(*opts.rng);
            }
            if (bc) {
                bc->in = body;
                bc->dropped = dropped;
            }
            if (dropped) continue;  // branch skipped, block output = block input

            Tensor<T> pre1 = nn::conv2d_forward(body, blk.conv1.w, blk.conv1.b, 1);
            Tensor<T> act1;
            nn::activation_forward(cfg.activation, pre1, act1);
            Tensor<T> branch = nn::conv2d_forward(act1, blk.conv2.w, blk.conv2.b, 1);
            Tensor<T> ca = channel_attention_forward(branch, blk, cfg.activation, bc);
            T scale = static_cast<T>(cfg.res_scale);
            if (!opts.train_mode && opts.stochastic_depth_p > 0.0) scale *= survive;
            for (size_t j = 0; j < body.data.size(); ++j) body.data[j] += scale * ca.data[j];
            if (bc) {
                bc->pre1 = std::move(pre1);
                bc->act1 = std::move(act1);
                bc->branch = std::move(branch);
            }
        }
        if (gc) gc->tail_in = body;
        Tensor<T> gout = nn::conv2d_forward(body, g.tailconv.w, g.tailconv.b, 1);
        for (size_t j = 0; j < gout.data.size(); ++j) gout.data[j] += gin.data[j];  // group skip
        body = std::move(gout);
    }

    for (size_t j = 0; j < body.data.size(); ++j) body.data[j] += head_out.data[j];  // long skip
    if (cache) cache->body_plus = body;

    Tensor<T> t = std::move(body);
    if (cache) cache->up_in.clear();
    for (size_t u = 0; u < m.tail.up.size(); ++u) {
        if (cache) cache->up_in.push_back(t);
        const int r = (cfg.scale == 4) ? 2 : cfg.scale;
        Tensor<T> pre = nn::conv2d_forward(t, m.tail.up[u].w, m.tail.up[u].b, 1);
        t = nn::pixel_shuffle_forward(pre, r);
    }
    if (cache) cache->final_in = t;
    Tensor<T> out = nn::conv2d_forward(t, m.tail.final_conv.w, m.tail.final_conv.b, 1);

    if (cfg.mean_shift) {
        const int n = static_cast<int>(out.dim(0));
        const size_t hw = static_cast<size_t>(out.dim(2)) * out.dim(3);
        for (int ni = 0; ni < n; ++ni)
            for (int c = 0; c < cfg.in_channels; ++c) {
                T* p = out.ptr() + (static_cast<size_t>(ni) * cfg.in_channels + c) * hw;
                const T mu = static_cast<T>((*cfg.mean_shift)[static_cast<size_t>(c % 3)]);
                for (size_t j = 0; j < hw; ++j) p[j] += mu;
            }
    }
    return out;
}

// Accumulates parameter gradients into `grads` (a zeros_like clone).
// `grad_out` is dL/d(model output); mean shift is an affine map so it does not
// alter gradients.
template <typename T>
void backward(const Model<T>& m, const ForwardCache<T>& cache, const Tensor<T>& grad_out,
              Model<T>& grads) {
    const auto& cfg = m.config;
    const T res_scale = static_cast<T>(cfg.res_scale);

    // tail
    Tensor<T> g = Tensor<T>(cache.final_in.shape);
    nn::conv2d_backward(cache.final_in, m.tail.final_conv.w, grad_out, 1, &g,
                        grads.tail.final_conv.w, grads.tail.final_conv.b);
    for (size_t u = m.tail.up.size(); u-- > 0;) {
        const int r = (cfg.scale == 4) ? 2 : cfg.scale;
        Tensor<T> g_pre = nn::pixel_shuffle_backward(g, r);
        Tensor<T> g_in = Tensor<T>(cache.up_in[u].shape);
        nn::conv2d_backward(cache.up_in[u], m.tail.up[u].w, g_pre, 1, &g_in,
                            grads.tail.up[u].w, grads.tail.up[u].b);
        g = std::move(g_in);
    }

    Tensor<T> g_head = g;  // long skip

    // body, reversed
    for (size_t gi = m.groups.size(); gi-- > 0;) {
        const auto& gp = m.groups[gi];
        auto& ggrad = grads.groups[gi];
        const auto& gc = cache.groups[gi];

        Tensor<T> g_skip = g;  // group skip to group input
        Tensor<T> g_tail_in = Tensor<T>(gc.tail_in.shape);
        nn::conv2d_backward(gc.tail_in, gp.tailconv.w, g, 1, &g_tail_in,
                            ggrad.tailconv.w, ggrad.tailconv.b);
        g = std::move(g_tail_in);

        for (size_t bi = gp.blocks.size(); bi-- > 0;) {
            const auto& blk = gp.blocks[bi];
            auto& bgrad = ggrad.blocks[bi];
            const auto& bc = gc.blocks[bi];
            if (bc.dropped) continue;  // identity: gradient passes through unchanged

            // d(ca_out) = res_scale * g
            Tensor<T> g_ca = g;
            for (auto& v : g_ca.data) v *= res_scale;

            // channel attention backward: y = branch * gate
            const int n = static_cast<int>(bc.branch.dim(0));
            const int c = static_cast<int>(bc.branch.dim(1));
            const int h = static_cast<int>(bc.branch.dim(2)), w = static_cast<int>(bc.branch.dim(3));
            const size_t hw = static_cast<size_t>(h) * w;
            Tensor<T> g_branch = g_ca;
            Tensor<T> g_gate({n, c, 1, 1});
            for (int i = 0; i < n * c; ++i) {
                const T* gy = g_ca.ptr() + static_cast<size_t>(i) * hw;
                const T* br = bc.branch.ptr() + static_cast<size_t>(i) * hw;
                T* gb = g_branch.ptr() + static_cast<size_t>(i) * hw;
                T acc = 0;
                const T gatev = bc.gate[i];
                for (size_t j = 0; j < hw; ++j) {
                    acc += gy[j] * br[j];
                    gb[j] = gy[j] * gatev;
                }
                g_gate[i] = acc;
            }
            // through sigmoid
            for (int i = 0; i < n * c; ++i) g_gate[i] *= bc.gate[i] * (T(1) - bc.gate[i]);
            Tensor<T> g_fc1_act = Tensor<T>(bc.fc1_act.shape);
            nn::conv2d_backward(bc.fc1_act, blk.ca_fc2.w, g_gate, 0, &g_fc1_act,
                                bgrad.ca_fc2.w, bgrad.ca_fc2.b);
            Tensor<T> g_fc1_pre;
            nn::activation_backward(cfg.activation, bc.fc1_pre, g_fc1_act, g_fc1_pre);
            Tensor<T> g_gap = Tensor<T>(bc.gap.shape);
            nn::conv2d_backward(bc.gap, blk.ca_fc1.w, g_fc1_pre, 0, &g_gap,
                                bgrad.ca_fc1.w, bgrad.ca_fc1.b);
            Tensor<T> g_gap_spread;
            nn::global_avg_pool_backward(g_gap, h, w, g_gap_spread);
            for (size_t j = 0; j < g_branch.data.size(); ++j) g_branch.data[j] += g_gap_spread.data[j];

            // conv path
            Tensor<T> g_act1 = Tensor<T>(bc.act1.shape);
            nn::conv2d_backward(bc.act1, blk.conv2.w, g_branch, 1, &g_act1,
                                bgrad.conv2.w, bgrad.conv2.b);
            Tensor<T> g_pre1;
            nn::activation_backward(cfg.activation, bc.pre1, g_act1, g_pre1);
            Tensor<T> g_blk_in = Tensor<T>(bc.in.shape);
            nn::conv2d_backward(bc.in, blk.conv1.w, g_pre1, 1, &g_blk_in,
                                bgrad.conv1.w, bgrad.conv1.b);
            for (size_t j = 0; j < g.data.size(); ++j) g.data[j] += g_blk_in.data[j];
        }
        for (size_t j = 0; j < g.data.size(); ++j) g.data[j] += g_skip.data[j];
    }

    for (size_t j = 0; j < g.data.size(); ++j) g.data[j] += g_head.data[j];  // head receives long skip + body

    nn::conv2d_backward(cache.input, m.head.w, g, 1, static_cast<Tensor<T>*>(nullptr),
                        grads.head.w, grads.head.b);
}

template <typename T>
inline Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> out;
    nn::activation_forward(nn::Activation::silu, x, out);
    return out;
}

}  // namespace sr
