#include "aspvm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace aspvm::pipeline {

namespace fs = std::filesystem;

namespace {

bool has_ext(const fs::path& p, std::initializer_list<const char*> exts) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    for (const char* want : exts) {
        if (e == want) return true;
    }
    return false;
}

Tensor<float> mat_to_image(const cv::Mat& bgr) {
    const int64_t h = bgr.rows, w = bgr.cols;
    std::vector<float> data(static_cast<size_t>(3 * h * w));
    for (int64_t r = 0; r < h; ++r) {
        const auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(r));
        for (int64_t c = 0; c < w; ++c) {
            // BGR on disk -> RGB channel planes
            data[static_cast<size_t>(0 * h * w + r * w + c)] = row[c][2] / 255.0f;
            data[static_cast<size_t>(1 * h * w + r * w + c)] = row[c][1] / 255.0f;
            data[static_cast<size_t>(2 * h * w + r * w + c)] = row[c][0] / 255.0f;
        }
    }
    return Tensor<float>::from_data({3, h, w}, std::move(data));
}

}  // namespace

std::vector<Sample> load_dataset(const std::string& dir, int64_t target_size) {
    const fs::path image_dir = fs::path(dir) / "images";
    const fs::path mask_dir = fs::path(dir) / "masks";
    if (!fs::is_directory(image_dir) || !fs::is_directory(mask_dir)) {
        throw IoError("load_dataset: '" + dir + "' must contain images/ and masks/");
    }
    std::vector<std::pair<std::string, fs::path>> images;
    for (const auto& entry : fs::directory_iterator(image_dir)) {
        if (entry.is_regular_file() && has_ext(entry.path(), {".png", ".jpg", ".jpeg"})) {
            images.emplace_back(entry.path().stem().string(), entry.path());
        }
    }
    std::sort(images.begin(), images.end());
    std::vector<std::string> orphans;
    std::vector<Sample> out;
    for (const auto& [stem, img_path] : images) {
        const fs::path mask_path = mask_dir / (stem + ".png");
        if (!fs::exists(mask_path)) {
            orphans.push_back("images/" + img_path.filename().string());
            continue;
        }
        cv::Mat img = cv::imread(img_path.string(), cv::IMREAD_COLOR);
        if (img.empty()) throw IoError("load_dataset: cannot read '" + img_path.string() + "'");
        cv::Mat msk = cv::imread(mask_path.string(), cv::IMREAD_GRAYSCALE);
        if (msk.empty()) throw IoError("load_dataset: cannot read '" + mask_path.string() + "'");

        cv::Mat img_r, msk_r;
        cv::resize(img, img_r, cv::Size(static_cast<int>(target_size), static_cast<int>(target_size)),
                   0, 0, cv::INTER_LINEAR);
        cv::resize(msk, msk_r, cv::Size(static_cast<int>(target_size), static_cast<int>(target_size)),
                   0, 0, cv::INTER_NEAREST);

        std::vector<float> mdata(static_cast<size_t>(target_size * target_size));
        for (int64_t r = 0; r < target_size; ++r) {
            const auto* row = msk_r.ptr<unsigned char>(static_cast<int>(r));
            for (int64_t c = 0; c < target_size; ++c) {
                mdata[static_cast<size_t>(r * target_size + c)] = row[c] > 127 ? 1.0f : 0.0f;
            }
        }
        Sample s;
        s.image = mat_to_image(img_r);
        s.mask = Tensor<float>::from_data({1, target_size, target_size}, std::move(mdata));
        s.id = stem;
        out.push_back(std::move(s));
    }
    // masks without images are orphans too
    for (const auto& entry : fs::directory_iterator(mask_dir)) {
        if (!entry.is_regular_file() || !has_ext(entry.path(), {".png"})) continue;
        const std::string stem = entry.path().stem().string();
        const bool paired = std::any_of(images.begin(), images.end(),
                                        [&](const auto& p) { return p.first == stem; });
        if (!paired) orphans.push_back("masks/" + entry.path().filename().string());
    }
    if (!orphans.empty()) {
        std::string msg = "load_dataset: unpaired files:";
        for (const auto& o : orphans) msg += " " + o;
        throw IoError(msg);
    }
    if (out.empty()) {
        std::fprintf(stderr, "warning: load_dataset: no image/mask pairs under '%s'\n",
                     dir.c_str());
    }
    return out;
}

namespace {

struct Blob {
    double cx, cy, rx, ry, angle;
    std::array<double, 3> amp, phase;  // radial boundary perturbation

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double u = (dx * ca + dy * sa) / rx;
        const double v = (-dx * sa + dy * ca) / ry;
        const double rho = std::sqrt(u * u + v * v);
        const double phi = std::atan2(v, u);
        double boundary = 1.0;
        for (int k = 0; k < 3; ++k) {
            boundary += amp[static_cast<size_t>(k)] *
                        std::sin((k + 1) * phi + phase[static_cast<size_t>(k)]);
        }
        return rho <= boundary;
    }
};

}  // namespace

std::vector<Sample> synth_dataset(int64_t n, int64_t h, int64_t w, uint64_t seed,
                                  bool separable) {
    if (n < 1) throw ConfigError("synth_dataset: n must be >= 1");
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Rng rng = derive_rng(seed, 0, static_cast<uint64_t>(i));
        std::vector<float> mask(static_cast<size_t>(h * w));
        std::vector<Blob> blobs;
        const double min_dim = static_cast<double>(std::min(h, w));
        for (int attempt = 0; attempt < 100; ++attempt) {
            blobs.clear();
            const int64_t count = rng.uniform_int(1, 2);
            for (int64_t b = 0; b < count; ++b) {
                Blob blob;
                blob.cx = rng.uniform(0.25, 0.75) * static_cast<double>(w);
                blob.cy = rng.uniform(0.25, 0.75) * static_cast<double>(h);
                blob.rx = rng.uniform(0.12, 0.32) * min_dim;
                blob.ry = rng.uniform(0.12, 0.32) * min_dim;
                blob.angle = rng.uniform(0.0, M_PI);
                for (int k = 0; k < 3; ++k) {
                    blob.amp[static_cast<size_t>(k)] = rng.uniform(0.0, 0.15) / (k + 1);
                    blob.phase[static_cast<size_t>(k)] = rng.uniform(0.0, 2.0 * M_PI);
                }
                blobs.push_back(blob);
            }
            int64_t fg = 0;
            for (int64_t r = 0; r < h; ++r)
                for (int64_t c = 0; c < w; ++c) {
                    bool inside = false;
                    for (const auto& blob : blobs) {
                        if (blob.contains(c + 0.5, r + 0.5)) {
                            inside = true;
                            break;
                        }
                    }
                    mask[static_cast<size_t>(r * w + c)] = inside ? 1.0f : 0.0f;
                    if (inside) ++fg;
                }
            const double frac = static_cast<double>(fg) / static_cast<double>(h * w);
            if (frac >= 0.05 && frac <= 0.6) break;
        }

        std::vector<float> image(static_cast<size_t>(3 * h * w));
        std::array<double, 3> bg_color, fg_color, fx, fy, phase;
        for (int c = 0; c < 3; ++c) {
            bg_color[static_cast<size_t>(c)] = separable ? 0.8 : rng.uniform(0.55, 0.8);
            fg_color[static_cast<size_t>(c)] = separable ? 0.2 : rng.uniform(0.15, 0.45);
            fx[static_cast<size_t>(c)] = rng.uniform(1.0, 4.0);
            fy[static_cast<size_t>(c)] = rng.uniform(1.0, 4.0);
            phase[static_cast<size_t>(c)] = rng.uniform(0.0, 2.0 * M_PI);
        }
        for (int64_t r = 0; r < h; ++r)
            for (int64_t col = 0; col < w; ++col) {
                const bool inside = mask[static_cast<size_t>(r * w + col)] > 0.5f;
                for (int c = 0; c < 3; ++c) {
                    double v = inside ? fg_color[static_cast<size_t>(c)]
                                      : bg_color[static_cast<size_t>(c)];
                    if (!separable) {
                        v += 0.08 * std::sin(2.0 * M_PI *
                                                 (fx[static_cast<size_t>(c)] * col / w +
                                                  fy[static_cast<size_t>(c)] * r / h) +
                                             phase[static_cast<size_t>(c)]);
                        v += rng.uniform(-0.03, 0.03);
                    }
                    image[static_cast<size_t>(c * h * w + r * w + col)] =
                        static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }

        Sample s;
        s.image = Tensor<float>::from_data({3, h, w}, std::move(image));
        s.mask = Tensor<float>::from_data({1, h, w}, std::move(mask));
        char id[32];
        std::snprintf(id, sizeof(id), "synth_%05lld", static_cast<long long>(i));
        s.id = id;
        out.push_back(std::move(s));
    }
    return out;
}

void write_dataset(const std::vector<Sample>& samples, const std::string& out_dir) {
    const fs::path image_dir = fs::path(out_dir) / "images";
    const fs::path mask_dir = fs::path(out_dir) / "masks";
    fs::create_directories(image_dir);
    fs::create_directories(mask_dir);
    for (const auto& s : samples) {
        const int64_t h = s.image.dim(1), w = s.image.dim(2);
        cv::Mat img(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
        for (int64_t r = 0; r < h; ++r) {
            auto* row = img.ptr<cv::Vec3b>(static_cast<int>(r));
            for (int64_t c = 0; c < w; ++c) {
                for (int ch = 0; ch < 3; ++ch) {
                    const float v = s.image.data()[ch * h * w + r * w + c];
                    row[c][2 - ch] = static_cast<unsigned char>(
                        std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
                }
            }
        }
        cv::Mat msk(static_cast<int>(h), static_cast<int>(w), CV_8UC1);
        for (int64_t r = 0; r < h; ++r) {
            auto* row = msk.ptr<unsigned char>(static_cast<int>(r));
            for (int64_t c = 0; c < w; ++c) {
                row[c] = s.mask.data()[r * w + c] > 0.5f ? 255 : 0;
            }
        }
        cv::imwrite((image_dir / (s.id + ".png")).string(), img);
        cv::imwrite((mask_dir / (s.id + ".png")).string(), msk);
    }
}

NormStats compute_norm_stats(const std::vector<Sample>& samples) {
    NormStats stats;
    if (samples.empty()) return stats;
    std::array<double, 3> sum = {0, 0, 0}, sumsq = {0, 0, 0};
    int64_t count = 0;
    for (const auto& s : samples) {
        const int64_t hw = s.image.dim(1) * s.image.dim(2);
        for (int c = 0; c < 3; ++c) {
            const float* plane = s.image.data() + c * hw;
            for (int64_t i = 0; i < hw; ++i) {
                sum[static_cast<size_t>(c)] += plane[i];
                sumsq[static_cast<size_t>(c)] += static_cast<double>(plane[i]) * plane[i];
            }
        }
        count += hw;
    }
    for (int c = 0; c < 3; ++c) {
        const double mean = sum[static_cast<size_t>(c)] / count;
        const double var = sumsq[static_cast<size_t>(c)] / count - mean * mean;
        stats.mean[static_cast<size_t>(c)] = static_cast<float>(mean);
        stats.stddev[static_cast<size_t>(c)] =
            static_cast<float>(std::max(1e-3, std::sqrt(std::max(0.0, var))));
    }
    return stats;
}

namespace {

// dir: 0 none, 1 hflip, 2 vflip; rot in quarter turns ccw
template <typename Fn>
void transform_plane(const float* src, float* dst, int64_t h, int64_t w, Fn&& src_index) {
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) dst[r * w + c] = src[src_index(r, c)];
}

Tensor<float> apply_geometry(const Tensor<float>& t, bool hflip, bool vflip, int rot) {
    const int64_t ch = t.dim(0), h = t.dim(1), w = t.dim(2);
    if (rot % 2 != 0 && h != w) {
        throw DataError("augment: quarter-turn rotation requires square samples");
    }
    std::vector<float> out(static_cast<size_t>(t.numel()));
    for (int64_t c = 0; c < ch; ++c) {
        const float* src = t.data() + c * h * w;
        float* dst = out.data() + c * h * w;
        transform_plane(src, dst, h, w, [&](int64_t r, int64_t col) {
            // map output coords back through the inverse rotation, then the
            // flips (the forward transform is hflip, vflip, rotate)
            int64_t rr = r, cc = col;
            switch (rot) {
                case 1: rr = col; cc = w - 1 - r; break;          // 90 ccw (square)
                case 2: rr = h - 1 - r; cc = w - 1 - col; break;  // 180
                case 3: rr = h - 1 - col; cc = r; break;          // 270 ccw (square)
                default: break;
            }
            if (hflip) cc = w - 1 - cc;
            if (vflip) rr = h - 1 - rr;
            return rr * w + cc;
        });
    }
    return Tensor<float>::from_data(t.shape(), std::move(out));
}

}  // namespace

Sample augment_geometric(const Sample& s, Rng& rng) {
    const bool hflip = rng.bernoulli(0.5);
    const bool vflip = rng.bernoulli(0.5);
    const int rot = static_cast<int>(rng.uniform_int(0, 3));
    Sample out;
    out.image = apply_geometry(s.image, hflip, vflip, rot);
    out.mask = apply_geometry(s.mask, hflip, vflip, rot);
    out.id = s.id;
    return out;
}

Tensor<float> normalize_image(const Tensor<float>& image, const NormStats& stats) {
    const int64_t hw = image.dim(1) * image.dim(2);
    std::vector<float> data(image.vec());
    for (int c = 0; c < 3; ++c) {
        const float mean = stats.mean[static_cast<size_t>(c)];
        const float inv = 1.0f / stats.stddev[static_cast<size_t>(c)];
        float* plane = data.data() + c * hw;
        for (int64_t i = 0; i < hw; ++i) plane[i] = (plane[i] - mean) * inv;
    }
    return Tensor<float>::from_data(image.shape(), std::move(data));
}

Sample augment(const Sample& s, Rng& rng, const NormStats& stats) {
    Sample out = augment_geometric(s, rng);
    out.image = normalize_image(out.image, stats);
    return out;
}

}  // namespace aspvm::pipeline
