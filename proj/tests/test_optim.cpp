#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "sr/optim.hpp"

using namespace sr;
using namespace sr::optim;

namespace {

Tensor<float> randt(std::vector<int64_t> shape, std::mt19937_64& rng) {
    Tensor<float> t(std::move(shape));
    std::normal_distribution<double> d(0.0, 1.0);
    for (auto& v : t.data) v = (float)d(rng);
    return t;
}

}  // namespace

TEST_CASE("linear scaling rule reproduces the derived rates") {
    CHECK(scale_lr(1e-4, 16, 256) == doctest::Approx(0.0016).epsilon(1e-15));
    CHECK(scale_lr(2e-4, 16, 256) == doctest::Approx(0.0032).epsilon(1e-15));
    CHECK(scale_lr(0.37, 64, 64) == 0.37);
    // composition is exact
    CHECK(scale_lr(scale_lr(1e-4, 16, 64), 64, 256) == scale_lr(1e-4, 16, 256));
    CHECK_THROWS_AS(scale_lr(1e-4, 0, 16), ConfigError);
}

TEST_CASE("cosine schedule endpoints, midpoint, warmup") {
    ScheduleConfig s;
    s.kind = ScheduleKind::cosine;
    s.total_iters = 80000;
    CHECK(cosine_lr(0, s, 0.0032) == doctest::Approx(0.0032).epsilon(1e-12));
    CHECK(cosine_lr(80000, s, 0.0032) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cosine_lr(40000, s, 0.0032) == doctest::Approx(0.0016).epsilon(1e-12));
    s.eta_min = 1e-5;
    CHECK(cosine_lr(80000, s, 0.0032) == doctest::Approx(1e-5).epsilon(1e-12));
    s.eta_min = 0;
    s.warmup_iters = 1000;
    CHECK(cosine_lr(0, s, 0.0032) == 0.0);
    CHECK(cosine_lr(500, s, 0.0032) == doctest::Approx(0.0016).epsilon(1e-12));
    CHECK(cosine_lr(1000, s, 0.0032) == doctest::Approx(0.0032).epsilon(1e-12));
    CHECK_THROWS_AS(cosine_lr(-1, s, 0.0032), ScheduleError);
    CHECK_THROWS_AS(cosine_lr(80001, s, 0.0032), ScheduleError);
}

TEST_CASE("cosine schedule is monotone non-increasing after warmup") {
    ScheduleConfig s;
    s.total_iters = 1000;
    s.warmup_iters = 100;
    double prev = 1e9;
    for (int64_t t = 100; t <= 1000; ++t) {
        const double v = cosine_lr(t, s, 0.01);
        CHECK(v <= prev + 1e-15);
        prev = v;
    }
}

TEST_CASE("multistep halves at each 20% boundary") {
    ScheduleConfig s;
    s.kind = ScheduleKind::multistep;
    s.total_iters = 1000;
    const double eta0 = 1e-4;
    CHECK(multistep_lr(0, s, eta0) == eta0);
    CHECK(multistep_lr(199, s, eta0) == eta0);
    CHECK(multistep_lr(200, s, eta0) == doctest::Approx(eta0 / 2).epsilon(1e-12));
    CHECK(multistep_lr(900, s, eta0) == doctest::Approx(eta0 / 16).epsilon(1e-12));
    // exactly 4 interior drops over [0, T)
    int drops = 0;
    for (int64_t t = 1; t < 1000; ++t)
        if (multistep_lr(t, s, eta0) != multistep_lr(t - 1, s, eta0)) ++drops;
    CHECK(drops == 4);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Tensor<float> w({3});
    w.fill(1.5f);
    Tensor<float> g({3});
    std::vector<Tensor<float>*> ps{&w}, gs{&g};
    auto st = OptimizerState<float>::init(ps);
    adam_step(ps, gs, st, OptimizerHyper::adam(0.01), 0.01);
    for (float v : w.data) CHECK(v == 1.5f);
}

TEST_CASE("adam single-step hand computation") {
    Tensor<double> w({1});
    w[0] = 1.0;
    Tensor<double> g({1});
    g[0] = 0.1;
    std::vector<Tensor<double>*> ps{&w}, gs{&g};
    auto st = OptimizerState<double>::init(ps);
    OptimizerHyper h = OptimizerHyper::adam(0.01);
    adam_step(ps, gs, st, h, 0.01);
    // m_hat = 0.1, v_hat = 0.01 -> delta = -0.01 * 0.1/(0.1 + 1e-8)
    const double want = 1.0 - 0.01 * (0.1 / (0.1 + 1e-8));
    CHECK(w[0] == doctest::Approx(want).epsilon(1e-9));
    CHECK(st.step == 1);
}

TEST_CASE("adam treats identical tensors identically") {
    std::mt19937_64 rng(3);
    Tensor<float> w1 = randt({8}, rng);
    Tensor<float> w2 = w1;
    Tensor<float> g1 = randt({8}, rng);
    Tensor<float> g2 = g1;
    std::vector<Tensor<float>*> ps{&w1, &w2}, gs{&g1, &g2};
    auto st = OptimizerState<float>::init(ps);
    adam_step(ps, gs, st, OptimizerHyper::adam(0.01), 0.01);
    CHECK(w1.data == w2.data);
}

TEST_CASE("lamb: zero gradient, zero decay, zero state leaves parameters unchanged") {
    Tensor<float> w({4});
    w.fill(0.7f);
    Tensor<float> g({4});
    std::vector<Tensor<float>*> ps{&w}, gs{&g};
    auto st = OptimizerState<float>::init(ps);
    lamb_step(ps, gs, st, OptimizerHyper::lamb(0.001), 0.001);
    for (float v : w.data) CHECK(v == 0.7f);
}

TEST_CASE("lamb single-step hand computation") {
    Tensor<double> w({1});
    w[0] = 1.0;
    Tensor<double> g({1});
    g[0] = 0.1;
    std::vector<Tensor<double>*> ps{&w}, gs{&g};
    auto st = OptimizerState<double>::init(ps);
    lamb_step(ps, gs, st, OptimizerHyper::lamb(0.001), 0.001);
    // m_hat = 0.1, v_hat = 0.01, r = 0.1/(0.1+1e-8), u = r, phi = 1/|u|
    // -> delta = -lr * phi * u = -lr exactly (phi cancels the |u|)
    CHECK(w[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-9));
}

TEST_CASE("lamb trust ratio matches the per-tensor loop oracle") {
    std::mt19937_64 rng(4);
    Tensor<float> w1 = randt({32}, rng), w2 = randt({7}, rng);
    Tensor<float> g1 = randt({32}, rng), g2 = randt({7}, rng);
    Tensor<float> w1c = w1, w2c = w2;
    OptimizerHyper h = OptimizerHyper::lamb(0.003);
    h.weight_decay = 0.01;
    std::vector<Tensor<float>*> ps{&w1, &w2}, gs{&g1, &g2};
    auto st = OptimizerState<float>::init(ps);
    lamb_step(ps, gs, st, h, 0.003);

    // loop oracle (double arithmetic, first step: m_hat = g, v_hat = g^2)
    auto oracle = [&](const Tensor<float>& w0, const Tensor<float>& g0, const Tensor<float>& got) {
        std::vector<double> u(w0.data.size());
        double wn = 0, un = 0;
        for (size_t i = 0; i < u.size(); ++i) {
            const double mh = g0[i];
            const double vh = (double)g0[i] * g0[i];
            u[i] = mh / (std::sqrt(vh) + h.eps) + h.weight_decay * w0[i];
            wn += (double)w0[i] * w0[i];
            un += u[i] * u[i];
        }
        const double phi = std::sqrt(wn) / std::sqrt(un);
        for (size_t i = 0; i < u.size(); ++i)
            CHECK((double)got[i] ==
                  doctest::Approx((double)w0[i] - 0.003 * phi * u[i]).epsilon(1e-7));
    };
    oracle(w1c, g1, w1);
    oracle(w2c, g2, w2);
}

TEST_CASE("lamb zero-norm fallback uses phi = 1") {
    Tensor<float> w({3});  // all zero
    Tensor<float> g({3});
    g[0] = 0.2f;
    g[1] = -0.1f;
    g[2] = 0.05f;
    std::vector<Tensor<float>*> ps{&w}, gs{&g};
    auto st = OptimizerState<float>::init(ps);
    OptimizerHyper h = OptimizerHyper::lamb(0.01);
    lamb_step(ps, gs, st, h, 0.01);
    for (size_t i = 0; i < 3; ++i) {
        const double u = (double)g[i] / (std::fabs((double)g[i]) + h.eps);
        CHECK(w[i] == doctest::Approx(-0.01 * u).epsilon(1e-7));
    }
}

TEST_CASE("lamb with phi forced to 1 reduces to the adam direction") {
    std::mt19937_64 rng(5);
    Tensor<float> wa = randt({16}, rng);
    Tensor<float> wl = wa;
    Tensor<float> g = randt({16}, rng);
    OptimizerHyper h = OptimizerHyper::lamb(0.002);
    std::vector<Tensor<float>*> pa{&wa}, pl{&wl}, gs{&g};
    auto sa = OptimizerState<float>::init(pa);
    auto sl = OptimizerState<float>::init(pl);
    adam_step(pa, gs, sa, h, 0.002);
    lamb_step(pl, gs, sl, h, 0.002, /*force_phi_one=*/true);
    for (size_t i = 0; i < 16; ++i) CHECK(wa[i] == doctest::Approx(wl[i]).epsilon(1e-12));
}

TEST_CASE("one lamb step on f(w)=0.5*||w||^2 decreases the norm") {
    std::mt19937_64 rng(6);
    Tensor<float> w = randt({10}, rng);
    Tensor<float> g = w;  // gradient of 0.5||w||^2
    double before = 0;
    for (float v : w.data) before += (double)v * v;
    std::vector<Tensor<float>*> ps{&w}, gs{&g};
    auto st = OptimizerState<float>::init(ps);
    lamb_step(ps, gs, st, OptimizerHyper::lamb(1e-3), 1e-3);
    double after = 0;
    for (float v : w.data) after += (double)v * v;
    CHECK(after < before);
}

TEST_CASE("fp16 round trip quantizes like IEEE binary16") {
    CHECK(to_fp16_and_back(0.0f) == 0.0f);
    CHECK(to_fp16_and_back(1.0f) == 1.0f);
    CHECK(to_fp16_and_back(0.5f) == 0.5f);
    CHECK(to_fp16_and_back(0.1f) == doctest::Approx(0.0999755859375).epsilon(1e-12));
    CHECK(std::isinf(to_fp16_and_back(1e5f)));          // above 65504
    CHECK(to_fp16_and_back(65504.0f) == 65504.0f);       // half max normal
    CHECK(to_fp16_and_back(1e-8f) == 0.0f);              // below half subnormal range
    CHECK(to_fp16_and_back(6.103515625e-05f) == 6.103515625e-05f);  // 2^-14
    // tie at 1 + 2^-11 rounds to even (down to 1.0)
    CHECK(to_fp16_and_back(1.00048828125f) == 1.0f);
    CHECK(to_fp16_and_back(-2.0f) == -2.0f);
    CHECK(std::isnan(to_fp16_and_back(std::nanf(""))));
}

TEST_CASE("loss scaler skips and halves on overflow, doubles after the growth interval") {
    LossScaler sc;
    CHECK(sc.scale == 65536.0);
    Tensor<float> g({2});
    g[0] = 65536.0f;
    g[1] = std::numeric_limits<float>::infinity();
    std::vector<Tensor<float>*> gs{&g};
    CHECK_FALSE(sc.unscale_and_check(gs));
    CHECK(sc.scale == 32768.0);
    CHECK(sc.clean_steps == 0);

    g[1] = 32768.0f;  // finite again (already multiplied by the current scale)
    CHECK(sc.unscale_and_check(gs));
    CHECK(g[1] == doctest::Approx(1.0f));

    // default growth interval: 2000 clean steps double the scale
    LossScaler sc2;
    Tensor<float> g2({1});
    std::vector<Tensor<float>*> gs2{&g2};
    for (int i = 0; i < 2000; ++i) {
        g2[0] = (float)sc2.scale;
        CHECK(sc2.unscale_and_check(gs2));
    }
    CHECK(sc2.scale == 131072.0);
    CHECK(sc2.clean_steps == 0);
}

TEST_CASE("hyper and schedule validation") {
    OptimizerHyper h = OptimizerHyper::adam(0.0);
    CHECK_THROWS_AS(h.validate(), ConfigError);
    h = OptimizerHyper::adam(1e-4);
    h.beta2 = 1.0;
    CHECK_THROWS_AS(h.validate(), ConfigError);
    ScheduleConfig s;
    s.total_iters = 10;
    s.warmup_iters = 10;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}
