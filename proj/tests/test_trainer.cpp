#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "fixture.hpp"
#include "sr/trainer.hpp"

using namespace sr;
using namespace sr::trainer;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model_config(int scale = 2) {
    ModelConfig c;
    c.scale = scale;
    c.n_groups = 1;
    c.n_blocks_per_group = 1;
    c.n_feats = 8;
    c.reduction = 2;
    return c;
}

TrainConfig tiny_train_config() {
    TrainConfig c;
    c.batch_size = 2;
    c.lr = 1e-4;
    c.total_iters = 5;
    c.optimizer = optim::OptimizerHyper::adam(1e-4);
    c.patch_size = 8;
    c.seed = 3;
    return c;
}

std::vector<data::IndexEntry> tiny_index(const std::string& tag) {
    const auto root = fixture::temp_dir(tag);
    fixture::write_dataset(root, 4, 24, 24, 7000);
    return data::scan_dataset(root.string(), 2);
}

std::string slurp(const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("l1 loss values and gradient") {
    Tensor<float> a({2, 2}), b({2, 2});
    CHECK(l1_loss(a, b) == 0.0);
    for (auto& v : b.data) v = 0.25f;
    CHECK(l1_loss(a, b) == doctest::Approx(0.25).epsilon(1e-12));
    a.data = {0.0f, 0.5f, 1.0f, 0.25f};
    b.fill(0.0f);
    CHECK(l1_loss(a, b) == doctest::Approx(0.4375).epsilon(1e-12));

    Tensor<float> g = l1_loss_grad(a, b);
    CHECK(g.data[0] == 0.0f);
    CHECK(g.data[1] == 0.25f);  // sign / N with N=4
    CHECK(g.data[2] == 0.25f);
    Tensor<float> c({3});
    CHECK_THROWS_AS(l1_loss(a, c), ShapeError);
}

TEST_CASE("checkpoint save/load round trip is byte-identical") {
    std::mt19937_64 rng(1);
    Model<float> m = build_model<float>(tiny_model_config(), rng);
    Checkpoint ckpt;
    ckpt.stage = "train";
    ckpt.iteration = 123;
    ckpt.train_config_json = train_config_to_json(tiny_train_config());
    ckpt.rng_state = "12345 67";
    ckpt.metric_history = {{100, 28.5}, {123, 29.0}};
    pack_model(m, ckpt);
    ckpt.opt_step = 123;
    for (const auto& [name, t] : ckpt.params) {
        ckpt.opt_m.emplace_back(name, Tensor<float>(t.shape));
        ckpt.opt_v.emplace_back(name, Tensor<float>(t.shape));
    }

    const auto dir = fixture::temp_dir("ckpt");
    const std::string p1 = (dir / "a.ckpt").string(), p2 = (dir / "b.ckpt").string();
    save_checkpoint(ckpt, p1);
    Checkpoint back = load_checkpoint(p1);
    CHECK(back.stage == "train");
    CHECK(back.iteration == 123);
    CHECK(back.metric_history == ckpt.metric_history);
    CHECK(back.rng_state == ckpt.rng_state);
    REQUIRE(back.params.size() == ckpt.params.size());
    for (size_t i = 0; i < back.params.size(); ++i) {
        CHECK(back.params[i].first == ckpt.params[i].first);
        CHECK(back.params[i].second.data == ckpt.params[i].second.data);
    }
    save_checkpoint(back, p2);
    CHECK(slurp(p1) == slurp(p2));

    // the model rebuilds bitwise from the checkpoint
    Model<float> m2 = model_from_checkpoint(back);
    bool equal = true;
    size_t k = 0;
    std::vector<const Tensor<float>*> src;
    m.visit([&](const std::string&, const Tensor<float>& t) { src.push_back(&t); });
    m2.visit([&](const std::string&, const Tensor<float>& t) {
        if (t.data != src[k]->data) equal = false;
        ++k;
    });
    CHECK(equal);
}

TEST_CASE("checkpoint load errors: truncation, bad magic, newer version") {
    std::mt19937_64 rng(2);
    Model<float> m = build_model<float>(tiny_model_config(), rng);
    Checkpoint ckpt;
    pack_model(m, ckpt);
    const auto dir = fixture::temp_dir("ckpt_err");
    const std::string good = (dir / "good.ckpt").string();
    save_checkpoint(ckpt, good);

    const std::string bytes = slurp(good);
    {
        std::ofstream os(dir / "trunc.ckpt", std::ios::binary);
        os.write(bytes.data(), (std::streamsize)(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint((dir / "trunc.ckpt").string()), LoadError);
    {
        std::ofstream os(dir / "junk.ckpt", std::ios::binary);
        os << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(load_checkpoint((dir / "junk.ckpt").string()), LoadError);
    {
        std::string newer = bytes;
        newer[8] = 99;  // bump the version field past the supported one
        std::ofstream os(dir / "newer.ckpt", std::ios::binary);
        os.write(newer.data(), (std::streamsize)newer.size());
    }
    CHECK_THROWS_WITH_AS(load_checkpoint((dir / "newer.ckpt").string()),
                         doctest::Contains("version"), LoadError);
    CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), LoadError);
}

TEST_CASE("nan guard reports iteration and tensor") {
    std::mt19937_64 rng(3);
    Model<float> m = build_model<float>(tiny_model_config(), rng);
    CHECK_NOTHROW(nan_guard(0.5, m, 7, 3, 1e-4));
    CHECK_THROWS_AS(nan_guard(std::numeric_limits<double>::quiet_NaN(), m, 7, 3, 1e-4), NanAbort);
    try {
        nan_guard(std::numeric_limits<double>::infinity(), m, 9, 3, 1e-4);
        FAIL("expected NanAbort");
    } catch (const NanAbort& e) {
        CHECK(e.iteration == 9);
        CHECK(e.tensor.empty());
    }
    m.groups[0].blocks[0].conv2.w[3] = std::numeric_limits<float>::infinity();
    try {
        nan_guard(0.5, m, 11, 3, 1e-4);
        FAIL("expected NanAbort");
    } catch (const NanAbort& e) {
        CHECK(e.iteration == 11);
        CHECK(e.tensor == "body.group0.block0.conv2.weight");
    }
}

TEST_CASE("stochastic depth: p=0 is plain forward; expectation matches eval mode") {
    std::mt19937_64 rng(4);
    Model<float> m = build_model<float>(tiny_model_config(), rng);
    Tensor<float> x({1, 3, 6, 6});
    std::mt19937_64 xr(5);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    for (auto& v : x.data) v = (float)d(xr);

    std::mt19937_64 sdr(6);
    Tensor<float> plain = forward(m, x);
    Tensor<float> p0 = stochastic_depth_forward(m, x, 0.0, sdr);
    CHECK(p0.data == plain.data);

    // p=1: branch always dropped
    Tensor<float> o0 = stochastic_depth_forward(m, x, 1.0, sdr);
    // p=0 in train mode: branch always kept
    Tensor<float> o1 = plain;
    // eval mode at p=0.5 scales the branch by 0.5; the tail is affine, so the
    // eval output equals the midpoint of the two extremes
    ForwardOptions eval_half;
    eval_half.stochastic_depth_p = 0.5;
    Tensor<float> ev = forward(m, x, eval_half);
    for (size_t i = 0; i < ev.data.size(); ++i)
        CHECK(ev[i] == doctest::Approx(0.5 * (o0[i] + o1[i])).epsilon(1e-4));

    // Monte-Carlo mean over draws approaches the eval output
    const int n = 2000;
    std::vector<double> acc(ev.data.size(), 0.0);
    std::mt19937_64 mc(7);
    for (int i = 0; i < n; ++i) {
        Tensor<float> o = stochastic_depth_forward(m, x, 0.5, mc);
        for (size_t j = 0; j < acc.size(); ++j) acc[j] += o[j];
    }
    for (size_t j = 0; j < acc.size(); ++j) {
        const double mean = acc[j] / n;
        const double half_gap = 0.5 * std::fabs((double)o1[j] - o0[j]);
        const double se = half_gap / std::sqrt((double)n);
        CHECK(std::fabs(mean - ev[j]) <= 3.0 * se + 1e-6);
    }

    // train mode with p>0 and no rng is a config error
    ForwardOptions bad;
    bad.train_mode = true;
    bad.stochastic_depth_p = 0.5;
    CHECK_THROWS_AS(forward(m, x, bad), ConfigError);
}

TEST_CASE("train config validation") {
    TrainConfig c = tiny_train_config();
    c.total_iters = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_train_config();
    c.grad_clip = true;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("not supported"), ConfigError);
}

TEST_CASE("train is deterministic and accounts its budget") {
    auto idx = tiny_index("train_det");
    TrainConfig cfg = tiny_train_config();

    std::mt19937_64 r1(9), r2(9);
    Model<float> m1 = build_model<float>(tiny_model_config(), r1);
    Model<float> m2 = build_model<float>(tiny_model_config(), r2);
    TrainOptions opts;
    opts.start_iteration = 100;
    Checkpoint c1 = train(m1, idx, cfg, opts);
    Checkpoint c2 = train(m2, idx, cfg, opts);
    CHECK(c1.iteration == 105);
    CHECK(c1.stage == "train");
    REQUIRE(c1.params.size() == c2.params.size());
    for (size_t i = 0; i < c1.params.size(); ++i)
        CHECK(c1.params[i].second.data == c2.params[i].second.data);

    const auto dir = fixture::temp_dir("train_det_out");
    save_checkpoint(c1, (dir / "a.ckpt").string());
    save_checkpoint(c2, (dir / "b.ckpt").string());
    CHECK(slurp((dir / "a.ckpt").string()) == slurp((dir / "b.ckpt").string()));
}

TEST_CASE("injected non-finite loss aborts with the right iteration") {
    auto idx = tiny_index("train_nan");
    TrainConfig cfg = tiny_train_config();
    cfg.total_iters = 10;
    std::mt19937_64 rng(10);
    Model<float> m = build_model<float>(tiny_model_config(), rng);
    TrainOptions opts;
    opts.callbacks.on_loss = [](int64_t t, double& loss) {
        if (t == 5) loss = std::numeric_limits<double>::quiet_NaN();
    };
    try {
        train(m, idx, cfg, opts);
        FAIL("expected NanAbort");
    } catch (const NanAbort& e) {
        CHECK(e.iteration == 5);
    }
}

TEST_CASE("fp16_mixed: injected overflow skips the optimizer step") {
    auto idx = tiny_index("train_fp16");
    TrainConfig cfg = tiny_train_config();
    cfg.total_iters = 4;
    cfg.precision = optim::Precision::fp16_mixed;
    std::mt19937_64 rng(11);
    Model<float> m = build_model<float>(tiny_model_config(), rng);

    std::vector<float> before;
    bool skipped_checked = false;
    TrainOptions opts;
    opts.callbacks.on_grads = [&](int64_t t, std::vector<Tensor<float>*>& grads) {
        if (t == 2) {
            before.clear();
            m.visit([&](const std::string&, const Tensor<float>& p) {
                before.insert(before.end(), p.data.begin(), p.data.end());
            });
            (*grads[0])[0] = std::numeric_limits<float>::infinity();
        }
    };
    opts.callbacks.on_after_step = [&](int64_t t, Model<float>& model) {
        if (t == 2) {
            std::vector<float> after;
            model.visit([&](const std::string&, const Tensor<float>& p) {
                after.insert(after.end(), p.data.begin(), p.data.end());
            });
            CHECK(after == before);
            skipped_checked = true;
        }
    };
    train(m, idx, cfg, opts);
    CHECK(skipped_checked);
}

TEST_CASE("trainable filter freezes everything outside it") {
    auto idx = tiny_index("train_freeze");
    TrainConfig cfg = tiny_train_config();
    std::mt19937_64 rng(12);
    Model<float> m = build_model<float>(tiny_model_config(), rng);
    std::vector<std::pair<std::string, std::vector<float>>> before;
    m.visit([&](const std::string& n, const Tensor<float>& t) { before.emplace_back(n, t.data); });

    TrainOptions opts;
    opts.trainable = [](const std::string& n) { return n.rfind("tail.", 0) == 0; };
    train(m, idx, cfg, opts);

    size_t k = 0;
    bool tail_changed = false;
    m.visit([&](const std::string& n, const Tensor<float>& t) {
        if (n.rfind("tail.", 0) == 0) {
            if (t.data != before[k].second) tail_changed = true;
        } else {
            CHECK(t.data == before[k].second);
        }
        ++k;
    });
    CHECK(tail_changed);
}

TEST_CASE("finetune_large_patch: zero iters is identity; batch size rescales") {
    auto idx = tiny_index("train_ft");
    TrainConfig cfg = tiny_train_config();
    cfg.batch_size = 8;
    std::mt19937_64 rng(13);
    Model<float> m = build_model<float>(tiny_model_config(), rng);
    Checkpoint base = train(m, idx, cfg);

    TrainConfig ft = cfg;
    ft.total_iters = 0;
    Checkpoint same = finetune_large_patch(base, idx, ft, 12);
    CHECK(same.stage == "large_patch");
    for (size_t i = 0; i < base.params.size(); ++i)
        CHECK(same.params[i].second.data == base.params[i].second.data);

    ft.total_iters = 2;
    Checkpoint out = finetune_large_patch(base, idx, ft, 12);
    CHECK(out.stage == "large_patch");
    CHECK(out.iteration == base.iteration + 2);
    // batch size defaults to floor(8 * (8/12)^2) = 3
    CHECK(out.train_config_json.find("\"batch_size\":3") != std::string::npos);
    CHECK(out.train_config_json.find("\"patch_size\":12") != std::string::npos);
}

TEST_CASE("warm start rejects non-x2 sources") {
    auto idx = tiny_index("train_ws");
    TrainConfig cfg = tiny_train_config();
    std::mt19937_64 rng(14);
    Model<float> m3 = build_model<float>(tiny_model_config(3), rng);
    Checkpoint c3;
    pack_model(m3, c3);
    CHECK_THROWS_AS(warm_start(c3, 4, idx, 2, 2, cfg), ConfigError);

    Model<float> m2 = build_model<float>(tiny_model_config(2), rng);
    Checkpoint c2;
    pack_model(m2, c2);
    CHECK_THROWS_AS(warm_start(c2, 5, idx, 2, 2, cfg), ConfigError);
}

TEST_CASE("run config json snapshot rejects parse drift") {
    const TrainConfig cfg = tiny_train_config();
    const std::string j = train_config_to_json(cfg);
    CHECK(j.find("\"lr\":0.0001") != std::string::npos);
    CHECK(j.find("\"optimizer\":") != std::string::npos);
    const ModelConfig mc = tiny_model_config();
    const ModelConfig back = model_config_from_json(model_config_to_json(mc));
    CHECK(back.scale == mc.scale);
    CHECK(back.n_feats == mc.n_feats);
    CHECK(back.reduction == mc.reduction);
    CHECK(back.activation == mc.activation);
    CHECK_FALSE(back.mean_shift.has_value());
}
