#include "sr/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "sr/data.hpp"

namespace sr::metrics {

Image rgb_to_y(const Image& img, bool full_swing) {
    if (img.colorspace != Colorspace::rgb || img.c != 3)
        throw MetricError("rgb_to_y: input is not a 3-channel RGB image");
    Image out(img.h, img.w, 1, Colorspace::y);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
            double v;
            if (full_swing)
                v = 0.299 * r + 0.587 * g + 0.114 * b;
            else
                v = (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
            out.at(y, x, 0) = static_cast<float>(v);
        }
    return out;
}

namespace {
Image crop_border_img(const Image& img, int cb) {
    if (cb == 0) return img;
    if (cb < 0 || 2 * cb >= img.h || 2 * cb >= img.w)
        throw MetricError("crop_border: must be >= 0 and < half of each spatial dim");
    return crop(img, cb, cb, img.h - 2 * cb, img.w - 2 * cb);
}
}  // namespace

double psnr(const Image& a, const Image& b, int crop_border) {
    if (a.h != b.h || a.w != b.w || a.c != b.c) throw ShapeError("psnr: shape mismatch");
    const Image ca = crop_border_img(a, crop_border);
    const Image cb = crop_border_img(b, crop_border);
    double mse = 0.0;
    for (size_t i = 0; i < ca.data.size(); ++i) {
        const double d = static_cast<double>(ca.data[i]) - cb.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(ca.data.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w || a.c != 1 || b.c != 1)
        throw ShapeError("ssim: expects equal-shape single-channel images");
    constexpr int win = 11;
    if (a.h < win || a.w < win) throw MetricError("ssim: image smaller than the 11x11 window");
    constexpr double sigma = 1.5, K1 = 0.01, K2 = 0.03, L = 1.0;
    const double C1 = (K1 * L) * (K1 * L), C2 = (K2 * L) * (K2 * L);

    double wtab[win * win];
    double wsum = 0.0;
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
            const double dy = y - win / 2, dx = x - win / 2;
            wtab[y * win + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            wsum += wtab[y * win + x];
        }
    for (double& w : wtab) w /= wsum;

    double total = 0.0;
    int count = 0;
    for (int y0 = 0; y0 + win <= a.h; ++y0)
        for (int x0 = 0; x0 + win <= a.w; ++x0) {
            double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
            for (int y = 0; y < win; ++y)
                for (int x = 0; x < win; ++x) {
                    const double w = wtab[y * win + x];
                    const double va = a.at(y0 + y, x0 + x, 0);
                    const double vb = b.at(y0 + y, x0 + x, 0);
                    mu_a += w * va;
                    mu_b += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            const double var_a = saa - mu_a * mu_a;
            const double var_b = sbb - mu_b * mu_b;
            const double cov = sab - mu_a * mu_b;
            const double s = ((2 * mu_a * mu_b + C1) * (2 * cov + C2)) /
                             ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
            total += s;
            ++count;
        }
    return total / count;
}

Image flip_horizontal(const Image& img) {
    Image out(img.h, img.w, img.c, img.colorspace);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.c; ++c) out.at(y, x, c) = img.at(y, img.w - 1 - x, c);
    return out;
}

Image flip_vertical(const Image& img) {
    Image out(img.h, img.w, img.c, img.colorspace);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.c; ++c) out.at(y, x, c) = img.at(img.h - 1 - y, x, c);
    return out;
}

Image transpose(const Image& img) {
    Image out(img.w, img.h, img.c, img.colorspace);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.c; ++c) out.at(x, y, c) = img.at(y, x, c);
    return out;
}

// one counter-clockwise quarter turn per step
Image rotate90(const Image& img, int times) {
    times = ((times % 4) + 4) % 4;
    Image cur = img;
    for (int t = 0; t < times; ++t) {
        Image out(cur.w, cur.h, cur.c, cur.colorspace);
        for (int y = 0; y < cur.h; ++y)
            for (int x = 0; x < cur.w; ++x)
                for (int c = 0; c < cur.c; ++c) out.at(cur.w - 1 - x, y, c) = cur.at(y, x, c);
        cur = std::move(out);
    }
    return cur;
}

Image dihedral_apply(const Image& img, int k) {
    const int rot = k % 4, flip = k / 4;
    Image x = flip ? flip_horizontal(img) : img;
    return rotate90(x, rot);
}

Image dihedral_invert(const Image& img, int k) {
    const int rot = k % 4, flip = k / 4;
    Image x = rotate90(img, 4 - rot);
    return flip ? flip_horizontal(x) : x;
}

Image self_ensemble(const SrFn& model, const Image& lr) {
    std::vector<double> acc;
    Image proto;
    for (int k = 0; k < 8; ++k) {
        Image out = dihedral_invert(model(dihedral_apply(lr, k)), k);
        if (k == 0) {
            proto = out;
            acc.assign(out.data.size(), 0.0);
        }
        if (out.h != proto.h || out.w != proto.w)
            throw ShapeError("self_ensemble: model output shape not transform-consistent");
        for (size_t i = 0; i < out.data.size(); ++i) acc[i] += out.data[i];
    }
    for (size_t i = 0; i < acc.size(); ++i) proto.data[i] = static_cast<float>(acc[i] / 8.0);
    return proto;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["protocol"] = {{"colorspace", protocol.colorspace}, {"full_swing", protocol.full_swing},
                     {"crop_border", protocol.crop_border}, {"ensemble", protocol.ensemble},
                     {"quantize", protocol.quantize},       {"scale", protocol.scale}};
    j["per_image"] = nlohmann::json::array();
    for (const auto& e : per_image)
        j["per_image"].push_back({{"name", e.name}, {"psnr_db", e.psnr_db}, {"ssim", e.ssim}});
    j["aggregate"] = {{"mean_psnr_db", mean_psnr}, {"mean_ssim", mean_ssim}};
    return j.dump(2);
}

std::string MetricReport::to_table() const {
    std::ostringstream os;
    os << "image                          PSNR(dB)    SSIM\n";
    char buf[128];
    for (const auto& e : per_image) {
        std::snprintf(buf, sizeof(buf), "%-28s %9.4f  %.4f\n", e.name.c_str(), e.psnr_db, e.ssim);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-28s %9.4f  %.4f\n", "mean", mean_psnr, mean_ssim);
    os << buf;
    return os.str();
}

MetricReport evaluate_benchmark(const SrFn& model, const std::string& benchmark_root, int scale,
                                bool ensemble, std::optional<Protocol> protocol) {
    auto index = data::scan_dataset(benchmark_root, scale);
    if (index.empty()) throw MetricError("empty benchmark: " + benchmark_root);

    MetricReport report;
    report.protocol = protocol.value_or(Protocol{});
    report.protocol.ensemble = ensemble;
    report.protocol.scale = scale;
    if (!protocol) report.protocol.crop_border = scale;

    for (const auto& entry : index) {
        Image hr = read_png(entry.hr_path);
        // trim HR so its dims are exact multiples of the scale
        hr = crop(hr, 0, 0, (hr.h / scale) * scale, (hr.w / scale) * scale);
        Image lr = entry.lr_path ? read_png(*entry.lr_path)
                                 : bicubic_resize(hr, hr.h / scale, hr.w / scale);
        Image sr = ensemble ? self_ensemble(model, lr) : model(lr);
        if (sr.h != hr.h || sr.w != hr.w)
            throw ShapeError("evaluate_benchmark: SR output " + std::to_string(sr.h) + "x" +
                             std::to_string(sr.w) + " does not match HR for " + entry.stem);
        sr.clamp01();
        if (report.protocol.quantize) sr.quantize8();

        Image ma = sr, mb = hr;
        if (report.protocol.colorspace == "y") {
            ma = rgb_to_y(ma, report.protocol.full_swing);
            mb = rgb_to_y(mb, report.protocol.full_swing);
        }
        ma = crop_border_img(ma, report.protocol.crop_border);
        mb = crop_border_img(mb, report.protocol.crop_border);

        MetricReport::Entry e;
        e.name = entry.stem;
        e.psnr_db = psnr(ma, mb, 0);
        if (ma.c == 1) {
            e.ssim = ssim(ma, mb);
        } else {
            double s = 0;
            for (int c = 0; c < ma.c; ++c) {
                Image ca(ma.h, ma.w, 1, Colorspace::y), cbi(ma.h, ma.w, 1, Colorspace::y);
                for (int y = 0; y < ma.h; ++y)
                    for (int x = 0; x < ma.w; ++x) {
                        ca.at(y, x, 0) = ma.at(y, x, c);
                        cbi.at(y, x, 0) = mb.at(y, x, c);
                    }
                s += ssim(ca, cbi);
            }
            e.ssim = s / ma.c;
        }
        report.per_image.push_back(e);
    }
    for (const auto& e : report.per_image) {
        report.mean_psnr += e.psnr_db;
        report.mean_ssim += e.ssim;
    }
    report.mean_psnr /= static_cast<double>(report.per_image.size());
    report.mean_ssim /= static_cast<double>(report.per_image.size());
    return report;
}

Image sr_tiled(const SrFn& model, int scale, const Image& lr, int tile) {
    if (tile >= lr.h && tile >= lr.w) return model(lr);
    constexpr int margin = 4;  // LR pixels; overlap 2*margin = 8 -> 8*scale in SR
    if (tile <= 2 * margin) throw ConfigError("tile: must exceed " + std::to_string(2 * margin));
    const int step = tile - 2 * margin;
    Image out(lr.h * scale, lr.w * scale, lr.c, lr.colorspace);
    for (int cy = 0; cy < lr.h; cy += step) {
        const int th = std::min(tile, lr.h);
        const int ty = std::max(0, std::min(cy - margin, lr.h - th));
        const int core_h = std::min(step, lr.h - cy);
        for (int cx = 0; cx < lr.w; cx += step) {
            const int tw = std::min(tile, lr.w);
            const int tx = std::max(0, std::min(cx - margin, lr.w - tw));
            const int core_w = std::min(step, lr.w - cx);
            Image sr = model(crop(lr, ty, tx, th, tw));
            if (sr.h != th * scale || sr.w != tw * scale)
                throw ShapeError("sr_tiled: unexpected tile output shape");
            const int oy = (cy - ty) * scale, ox = (cx - tx) * scale;
            for (int y = 0; y < core_h * scale; ++y)
                for (int x = 0; x < core_w * scale; ++x)
                    for (int c = 0; c < lr.c; ++c)
                        out.at(cy * scale + y, cx * scale + x, c) = sr.at(oy + y, ox + x, c);
        }
    }
    return out;
}

void infer_image(const SrFn& model, int scale, const std::string& lr_path,
                 const std::string& out_path, bool ensemble, std::optional<int> tile) {
    Image lr = read_png(lr_path);
    SrFn run = ensemble ? SrFn([&model](const Image& x) { return self_ensemble(model, x); }) : model;
    Image sr = tile ? sr_tiled(run, scale, lr, *tile) : run(lr);
    sr.clamp01();
    write_png(out_path, sr);
}

}  // namespace sr::metrics
