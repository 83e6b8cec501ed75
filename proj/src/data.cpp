#include "sr/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "sr/metrics.hpp"

namespace fs = std::filesystem;

namespace sr::data {

std::vector<IndexEntry> scan_dataset(const std::string& root, int scale) {
    const fs::path hr_dir = fs::path(root) / "HR";
    if (!fs::is_directory(hr_dir)) throw IoError("missing HR directory: " + hr_dir.string());
    const fs::path lr_dir = fs::path(root) / "LR_bicubic" / ("X" + std::to_string(scale));
    const bool has_lr = fs::is_directory(lr_dir);

    std::vector<IndexEntry> out;
    for (const auto& e : fs::directory_iterator(hr_dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".png") continue;
        IndexEntry entry;
        entry.stem = e.path().stem().string();
        entry.hr_path = e.path().string();
        if (has_lr) {
            const fs::path lr = lr_dir / e.path().filename();
            if (!fs::is_regular_file(lr))
                throw IndexError("LR image missing for " + e.path().filename().string() + " in " +
                                 lr_dir.string());
            entry.lr_path = lr.string();
        }
        out.push_back(std::move(entry));
    }
    std::sort(out.begin(), out.end(),
              [](const IndexEntry& a, const IndexEntry& b) { return a.hr_path < b.hr_path; });
    return out;
}

PatchPair sample_patch_pair(const Image& hr, const Image& lr, int scale, const SamplerConfig& cfg,
                            std::mt19937_64& rng) {
    const int p = cfg.patch_size;
    if (lr.h < p || lr.w < p)
        throw SamplingError("image " + std::to_string(lr.h) + "x" + std::to_string(lr.w) +
                            " smaller than patch size " + std::to_string(p));
    std::uniform_int_distribution<int> dy(0, lr.h - p), dx(0, lr.w - p);
    PatchPair pair;
    pair.row = dy(rng);
    pair.col = dx(rng);
    pair.lr = crop(lr, pair.row, pair.col, p, p);
    pair.hr = crop(hr, pair.row * scale, pair.col * scale, p * scale, p * scale);
    return pair;
}

PatchPair augment_geometric(PatchPair pair, std::mt19937_64& rng) {
    std::bernoulli_distribution coin(0.5);
    const bool hflip = coin(rng), vflip = coin(rng), tr = coin(rng);
    if (hflip) {
        pair.lr = metrics::flip_horizontal(pair.lr);
        pair.hr = metrics::flip_horizontal(pair.hr);
    }
    if (vflip) {
        pair.lr = metrics::flip_vertical(pair.lr);
        pair.hr = metrics::flip_vertical(pair.hr);
    }
    if (tr) {
        pair.lr = metrics::transpose(pair.lr);
        pair.hr = metrics::transpose(pair.hr);
    }
    return pair;
}

PatchPair augment_color(PatchPair pair, std::mt19937_64& rng) {
    std::bernoulli_distribution coin(0.5);
    if (coin(rng)) {
        for (auto& v : pair.lr.data) v = 1.0f - v;
        for (auto& v : pair.hr.data) v = 1.0f - v;
    }
    if (coin(rng)) {
        static constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                            {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
        std::uniform_int_distribution<int> pick(0, 5);
        const int* perm = perms[pick(rng)];
        auto shuffle_channels = [&](Image& img) {
            Image src = img;
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x)
                    for (int c = 0; c < 3; ++c) img.at(y, x, c) = src.at(y, x, perm[c]);
        };
        shuffle_channels(pair.lr);
        shuffle_channels(pair.hr);
    }
    return pair;
}

double beta_sample(double alpha, std::mt19937_64& rng) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    const double x = gamma(rng), y = gamma(rng);
    if (x + y == 0.0) return 0.5;
    return x / (x + y);
}

void mixup_batch(std::vector<PatchPair>& batch, double alpha, std::mt19937_64& rng) {
    if (batch.size() < 2) throw SamplingError("mixup_batch: batch size must be >= 2");
    const double lambda = beta_sample(alpha, rng);
    std::vector<size_t> perm(batch.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);

    const std::vector<PatchPair> src = batch;
    for (size_t i = 0; i < batch.size(); ++i) {
        const PatchPair& other = src[perm[i]];
        for (size_t j = 0; j < batch[i].lr.data.size(); ++j)
            batch[i].lr.data[j] =
                static_cast<float>(lambda * src[i].lr.data[j] + (1.0 - lambda) * other.lr.data[j]);
        for (size_t j = 0; j < batch[i].hr.data.size(); ++j)
            batch[i].hr.data[j] =
                static_cast<float>(lambda * src[i].hr.data[j] + (1.0 - lambda) * other.hr.data[j]);
    }
}

bool rejection_filter(const PatchPair& pair, double threshold_db, double reject_prob,
                      std::mt19937_64& rng) {
    const Image up = bicubic_resize(pair.lr, pair.hr.h, pair.hr.w);
    const double score = metrics::psnr(up, pair.hr, 0);
    if (score < threshold_db) return true;  // challenging patch, keep without drawing
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return u(rng) >= reject_prob;
}

BatchStream::BatchStream(std::vector<IndexEntry> index, int scale, SamplerConfig cfg, int batch_size)
    : index_(std::move(index)), scale_(scale), cfg_(cfg), batch_size_(batch_size), rng_(cfg.seed) {
    if (index_.empty()) throw SamplingError("BatchStream: empty dataset index");
    if (batch_size_ < 1) throw ConfigError("batch_size: must be >= 1");
    cfg_.validate();
    hr_cache_.resize(index_.size());
    lr_cache_.resize(index_.size());
}

const Image& BatchStream::hr_of(size_t i) {
    if (!hr_cache_[i]) {
        Image hr = read_png(index_[i].hr_path);
        hr_cache_[i] = crop(hr, 0, 0, (hr.h / scale_) * scale_, (hr.w / scale_) * scale_);
    }
    return *hr_cache_[i];
}

const Image& BatchStream::lr_of(size_t i) {
    if (!lr_cache_[i]) {
        if (index_[i].lr_path) {
            lr_cache_[i] = read_png(*index_[i].lr_path);
        } else {
            const Image& hr = hr_of(i);
            lr_cache_[i] = bicubic_resize(hr, hr.h / scale_, hr.w / scale_);
        }
    }
    return *lr_cache_[i];
}

PatchPair BatchStream::draw_pair() {
    std::uniform_int_distribution<size_t> pick(0, index_.size() - 1);
    for (;;) {
        const size_t i = pick(rng_);
        PatchPair pair = sample_patch_pair(hr_of(i), lr_of(i), scale_, cfg_, rng_);
        pair.source_id = index_[i].stem;
        if (cfg_.rejection &&
            !rejection_filter(pair, cfg_.rejection->threshold_db, cfg_.rejection->reject_prob, rng_))
            continue;
        if (cfg_.geo_aug) pair = augment_geometric(std::move(pair), rng_);
        if (cfg_.color_aug) pair = augment_color(std::move(pair), rng_);
        return pair;
    }
}

Batch BatchStream::next() {
    std::vector<PatchPair> pairs;
    pairs.reserve(static_cast<size_t>(batch_size_));
    for (int i = 0; i < batch_size_; ++i) pairs.push_back(draw_pair());
    if (cfg_.mixup_alpha && batch_size_ >= 2) mixup_batch(pairs, *cfg_.mixup_alpha, rng_);

    const int p = cfg_.patch_size, c = pairs[0].lr.c;
    Batch batch;
    batch.lr = Tensor<float>({batch_size_, c, p, p});
    batch.hr = Tensor<float>({batch_size_, c, static_cast<int64_t>(p) * scale_,
                              static_cast<int64_t>(p) * scale_});
    for (int b = 0; b < batch_size_; ++b) {
        Tensor<float> lt = image_to_tensor<float>(pairs[b].lr);
        Tensor<float> ht = image_to_tensor<float>(pairs[b].hr);
        std::copy(lt.data.begin(), lt.data.end(),
                  batch.lr.data.begin() + static_cast<size_t>(b) * lt.data.size());
        std::copy(ht.data.begin(), ht.data.end(),
                  batch.hr.data.begin() + static_cast<size_t>(b) * ht.data.size());
        batch.source_ids.push_back(pairs[b].source_id);
    }
    return batch;
}

PrepareResult prepare_data(const std::string& root, const std::vector<int>& scales) {
    const fs::path hr_dir = fs::path(root) / "HR";
    if (!fs::is_directory(hr_dir)) throw IoError("missing HR directory: " + hr_dir.string());

    std::vector<fs::path> hr_files;
    for (const auto& e : fs::directory_iterator(hr_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") hr_files.push_back(e.path());
    std::sort(hr_files.begin(), hr_files.end());

    PrepareResult result;
    result.images = static_cast<int>(hr_files.size());

    double sum[3] = {0, 0, 0};
    int64_t pixels = 0;
    for (const auto& f : hr_files) {
        const Image hr = read_png(f.string());
        for (int y = 0; y < hr.h; ++y)
            for (int x = 0; x < hr.w; ++x)
                for (int ch = 0; ch < 3; ++ch) sum[ch] += hr.at(y, x, ch);
        pixels += static_cast<int64_t>(hr.h) * hr.w;

        for (int s : scales) {
            const fs::path lr_dir = fs::path(root) / "LR_bicubic" / ("X" + std::to_string(s));
            fs::create_directories(lr_dir);
            const fs::path lr_path = lr_dir / f.filename();
            if (fs::exists(lr_path)) continue;  // idempotent
            Image trimmed = crop(hr, 0, 0, (hr.h / s) * s, (hr.w / s) * s);
            Image lr = bicubic_resize(trimmed, trimmed.h / s, trimmed.w / s);
            lr.clamp01();
            write_png(lr_path.string(), lr);
            ++result.lr_written;
        }
    }
    for (int ch = 0; ch < 3; ++ch)
        result.mean_rgb[static_cast<size_t>(ch)] = pixels ? sum[ch] / static_cast<double>(pixels) : 0.0;

    std::vector<int> sorted_scales = scales;
    std::sort(sorted_scales.begin(), sorted_scales.end());
    nlohmann::json meta;
    meta["mean_rgb"] = result.mean_rgb;
    meta["scale_list"] = sorted_scales;
    meta["count"] = result.images;
    std::ofstream out(fs::path(root) / "meta.json");
    out << meta.dump(2) << "\n";
    return result;
}

}  // namespace sr::data
