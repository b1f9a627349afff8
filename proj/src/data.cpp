#include "cdx/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace cdx {

namespace fs = std::filesystem;

bool ChangeShape::covers(std::size_t row, std::size_t col) const {
    const double dy = (static_cast<double>(row) + 0.5 - cy) / ry;
    const double dx = (static_cast<double>(col) + 0.5 - cx) / rx;
    if (kind == ShapeKind::Rect) return std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
    return dy * dy + dx * dx <= 1.0;
}

void validate(const SynthConfig& cfg) {
    if (cfg.size == 0 || cfg.size % 32)
        throw std::invalid_argument("synth: size must be a positive multiple of 32, got " + std::to_string(cfg.size));
    if (cfg.blobs_min > cfg.blobs_max) throw std::invalid_argument("synth: blobs_min exceeds blobs_max");
    if (cfg.changes_min > cfg.changes_max) throw std::invalid_argument("synth: changes_min exceeds changes_max");
    if (!(cfg.shape_min > 0.0 && cfg.shape_min <= cfg.shape_max && cfg.shape_max <= 0.5))
        throw std::invalid_argument("synth: need 0 < shape_min <= shape_max <= 0.5");
    if (!(cfg.removal_prob >= 0.0 && cfg.removal_prob <= 1.0))
        throw std::invalid_argument("synth: removal_prob must lie in [0, 1]");
    if (!(cfg.texture >= 0.0 && cfg.texture <= 0.05)) throw std::invalid_argument("synth: texture must lie in [0, 0.05]");
    if (!(cfg.jitter >= 0.0 && cfg.jitter < 0.5)) throw std::invalid_argument("synth: jitter must lie in [0, 0.5)");
}

namespace {

std::array<double, 3> color_in(Rng& rng, double lo, double hi) {
    return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

std::size_t count_in(Rng& rng, std::size_t lo, std::size_t hi) {
    return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

}  // namespace

SynthScene synth_scene(const SynthConfig& cfg, Rng& rng) {
    validate(cfg);
    const double S = static_cast<double>(cfg.size);
    SynthScene sc;
    sc.size = cfg.size;
    sc.base = color_in(rng, 0.05, 0.45);
    const std::size_t nb = count_in(rng, cfg.blobs_min, cfg.blobs_max);
    for (std::size_t i = 0; i < nb; ++i) {
        Blob b;
        b.cy = rng.uniform(0.0, S);
        b.cx = rng.uniform(0.0, S);
        b.radius = rng.uniform(S / 16.0, S / 4.0);
        b.color = color_in(rng, 0.05, 0.45);
        sc.blobs.push_back(b);
    }
    const std::size_t nc = count_in(rng, cfg.changes_min, cfg.changes_max);
    for (std::size_t i = 0; i < nc; ++i) {
        ChangeShape c;
        c.kind = rng.uniform() < 0.5 ? ShapeKind::Rect : ShapeKind::Ellipse;
        c.ry = rng.uniform(cfg.shape_min, cfg.shape_max) * S;
        c.rx = rng.uniform(cfg.shape_min, cfg.shape_max) * S;
        c.cy = rng.uniform(c.ry, S - c.ry);
        c.cx = rng.uniform(c.rx, S - c.rx);
        c.color = color_in(rng, 0.55, 0.95);
        c.inserted = rng.uniform() >= cfg.removal_prob;
        sc.changes.push_back(c);
    }
    sc.texture.resize(3 * cfg.size * cfg.size);
    for (auto& v : sc.texture) v = rng.uniform(-cfg.texture, cfg.texture);
    for (auto& p : sc.photo) {
        p.brightness = rng.uniform(-cfg.jitter, cfg.jitter);
        p.contrast = 1.0 + rng.uniform(-cfg.jitter, cfg.jitter);
    }
    return sc;
}

Tensor render_frame(const SynthScene& sc, int t, bool noiseless) {
    if (t != 0 && t != 1) throw std::invalid_argument("render_frame: t must be 0 or 1");
    const std::size_t S = sc.size, P = S * S;
    std::vector<double> img(3 * P);
    for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
            std::array<double, 3> c = sc.base;
            const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
            for (const auto& b : sc.blobs)
                if ((py - b.cy) * (py - b.cy) + (px - b.cx) * (px - b.cx) <= b.radius * b.radius) c = b.color;
            for (const auto& s : sc.changes)
                if (s.inserted == (t == 1) && s.covers(y, x)) c = s.color;
            for (std::size_t ch = 0; ch < 3; ++ch) img[ch * P + y * S + x] = c[ch];
        }
    if (!noiseless) {
        const auto& ph = sc.photo[static_cast<std::size_t>(t)];
        for (std::size_t i = 0; i < img.size(); ++i) {
            const double v = (img[i] + sc.texture[i] - 0.5) * ph.contrast + 0.5 + ph.brightness;
            img[i] = std::clamp(v, 0.0, 1.0);
        }
    }
    return Tensor::from({1, 3, S, S}, std::move(img));
}

Tensor render_mask(const SynthScene& sc) {
    const std::size_t S = sc.size;
    std::vector<double> m(S * S, 0.0);
    for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x)
            for (const auto& s : sc.changes)
                if (s.covers(y, x)) {
                    m[y * S + x] = 1.0;
                    break;
                }
    return Tensor::from({1, 1, S, S}, std::move(m));
}

std::vector<BiTemporalSample> synth_generate(const SynthConfig& cfg, std::size_t n) {
    validate(cfg);
    if (n == 0) throw std::invalid_argument("synth: need at least one sample");
    std::vector<BiTemporalSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = Rng::derive(cfg.seed, i);
        const auto sc = synth_scene(cfg, rng);
        char id[32];
        std::snprintf(id, sizeof id, "synth_%04zu", i);
        out.push_back({render_frame(sc, 0), render_frame(sc, 1), render_mask(sc), id});
    }
    return out;
}

// ---- PNG -------------------------------------------------------------------

namespace {

struct Raw {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> px;
};

Raw read_png(const fs::path& path, std::uint32_t format) {
    png_image im{};
    im.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&im, path.c_str()))
        throw DataError("cannot read image " + path.string() + ": " + im.message);
    im.format = format;
    Raw r;
    r.h = im.height;
    r.w = im.width;
    r.px.resize(PNG_IMAGE_SIZE(im));
    if (!png_image_finish_read(&im, nullptr, r.px.data(), 0, nullptr)) {
        std::string msg = im.message;
        png_image_free(&im);
        throw DataError("cannot decode image " + path.string() + ": " + msg);
    }
    return r;
}

void write_png(const fs::path& path, std::size_t h, std::size_t w, std::uint32_t format,
               const std::vector<std::uint8_t>& px) {
    png_image im{};
    im.version = PNG_IMAGE_VERSION;
    im.width = static_cast<png_uint_32>(w);
    im.height = static_cast<png_uint_32>(h);
    im.format = format;
    if (!png_image_write_to_file(&im, path.c_str(), 0, px.data(), 0, nullptr))
        throw DataError("cannot write image " + path.string() + ": " + im.message);
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void check_plane(const Tensor& t, std::size_t channels, const char* what) {
    if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != channels)
        throw ShapeError(std::string(what) + ": expected (1, " + std::to_string(channels) + ", H, W), got " +
                         shape_str(t.shape()));
}

}  // namespace

Tensor load_rgb(const fs::path& path) {
    auto r = read_png(path, PNG_FORMAT_RGB);
    const std::size_t P = r.h * r.w;
    std::vector<double> v(3 * P);
    for (std::size_t i = 0; i < P; ++i)
        for (std::size_t c = 0; c < 3; ++c) v[c * P + i] = r.px[3 * i + c] / 255.0;
    return Tensor::from({1, 3, r.h, r.w}, std::move(v));
}

Tensor load_mask(const fs::path& path) {
    auto r = read_png(path, PNG_FORMAT_GRAY);
    std::vector<double> v(r.px.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = r.px[i] > 127 ? 1.0 : 0.0;
    return Tensor::from({1, 1, r.h, r.w}, std::move(v));
}

void save_rgb(const Tensor& img, const fs::path& path) {
    check_plane(img, 3, "save_rgb");
    const std::size_t H = img.dim(2), W = img.dim(3), P = H * W;
    std::vector<std::uint8_t> px(3 * P);
    for (std::size_t i = 0; i < P; ++i)
        for (std::size_t c = 0; c < 3; ++c) px[3 * i + c] = to_byte(img.data()[c * P + i]);
    write_png(path, H, W, PNG_FORMAT_RGB, px);
}

void save_gray(const Tensor& map, const fs::path& path) {
    check_plane(map, 1, "save_gray");
    std::vector<std::uint8_t> px(map.numel());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(map.data()[i]);
    write_png(path, map.dim(2), map.dim(3), PNG_FORMAT_GRAY, px);
}

void save_comparison(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt, std::size_t height,
                     std::size_t width, const fs::path& path) {
    if (pred.size() != height * width || gt.size() != height * width)
        throw ShapeError("save_comparison: masks must have " + std::to_string(height * width) + " pixels");
    std::vector<std::uint8_t> px(3 * pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        std::array<std::uint8_t, 3> c{0, 0, 0};
        if (pred[i] && gt[i]) c = {255, 255, 255};
        else if (pred[i]) c = {255, 0, 0};
        else if (gt[i]) c = {0, 255, 0};
        std::copy(c.begin(), c.end(), px.begin() + static_cast<long>(3 * i));
    }
    write_png(path, height, width, PNG_FORMAT_RGB, px);
}

namespace {

std::set<std::string> png_names(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("missing directory " + dir.string());
    std::set<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") names.insert(e.path().filename().string());
    return names;
}

}  // namespace

std::vector<BiTemporalSample> load_pair_dir(const fs::path& root) {
    const auto a = png_names(root / "A"), b = png_names(root / "B"), l = png_names(root / "label");
    for (const auto* other : {&b, &l})
        for (const auto& n : *other)
            if (!a.count(n)) throw DataError("no counterpart in A/ for " + n);
    std::vector<BiTemporalSample> out;
    for (const auto& n : a) {
        if (!b.count(n)) throw DataError("missing B/" + n);
        if (!l.count(n)) throw DataError("missing label/" + n);
        BiTemporalSample s;
        s.img1 = load_rgb(root / "A" / n);
        s.img2 = load_rgb(root / "B" / n);
        s.mask = load_mask(root / "label" / n);
        const std::size_t H = s.img1.dim(2), W = s.img1.dim(3);
        if (s.img2.dim(2) != H || s.img2.dim(3) != W || s.mask.dim(2) != H || s.mask.dim(3) != W)
            throw DataError("size mismatch within triple " + n);
        if (H % 32 || W % 32)
            throw DataError(n + ": " + std::to_string(H) + "x" + std::to_string(W) + " is not a multiple of 32");
        s.id = fs::path(n).stem().string();
        out.push_back(std::move(s));
    }
    return out;
}

void save_pair_dir(const std::vector<BiTemporalSample>& samples, const fs::path& root) {
    for (const char* d : {"A", "B", "label"}) fs::create_directories(root / d);
    std::ofstream manifest(root / "manifest.txt");
    if (!manifest) throw DataError("cannot write " + (root / "manifest.txt").string());
    for (const auto& s : samples) {
        const std::string f = s.id + ".png";
        save_rgb(s.img1, root / "A" / f);
        save_rgb(s.img2, root / "B" / f);
        save_gray(s.mask, root / "label" / f);
        manifest << s.id << '\n';
    }
}

}  // namespace cdx
