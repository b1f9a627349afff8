#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdx/rng.hpp"
#include "cdx/tensor.hpp"

namespace cdx {

/// File-level failures: missing counterparts, unreadable or unwritable
/// images, size mismatches.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// img1, img2: (1, 3, H, W) in [0, 1]; mask: (1, 1, H, W) in {0, 1}.
struct BiTemporalSample {
    Tensor img1, img2, mask;
    std::string id;
};

struct SynthConfig {
    std::size_t size = 64;
    std::size_t blobs_min = 3, blobs_max = 8;
    /// Change shapes per sample, inclusive range.
    std::size_t changes_min = 1, changes_max = 4;
    /// Shape half-extents as fractions of the image side.
    double shape_min = 0.06, shape_max = 0.2;
    /// Probability that a change removes a shape present at t1 rather
    /// than inserting one at t2.
    double removal_prob = 0.3;
    /// Amplitude of the texture noise shared by both frames; at most 0.05
    /// so shapes stay separable from the background.
    double texture = 0.03;
    /// Brightness offset and contrast factor are drawn independently per
    /// frame from +-jitter and 1 +- jitter.
    double jitter = 0.05;
    std::uint64_t seed = 0;
};

enum class ShapeKind { Rect, Ellipse };

/// Axis-aligned rectangle or ellipse. A pixel belongs to it when its
/// center (row + 0.5, col + 0.5) lies inside (boundary included).
struct ChangeShape {
    ShapeKind kind = ShapeKind::Rect;
    double cy = 0, cx = 0, ry = 0, rx = 0;
    std::array<double, 3> color{};
    bool inserted = true;  // drawn at t2; otherwise drawn at t1 only

    bool covers(std::size_t row, std::size_t col) const;
};

struct Blob {
    double cy = 0, cx = 0, radius = 0;
    std::array<double, 3> color{};
};

struct Photometric {
    double brightness = 0.0, contrast = 1.0;
};

/// Everything needed to render one synthetic pair. Background and blob
/// colors stay in [0.05, 0.45] per channel and change shapes in
/// [0.55, 0.95], so a change shape always differs from what it covers.
struct SynthScene {
    std::size_t size = 0;
    std::array<double, 3> base{};
    std::vector<Blob> blobs;
    std::vector<ChangeShape> changes;
    std::vector<double> texture;  // 3 * size * size, shared by both frames
    std::array<Photometric, 2> photo;
};

/// Validates cfg; throws std::invalid_argument for a degenerate size or
/// inconsistent ranges.
void validate(const SynthConfig& cfg);

SynthScene synth_scene(const SynthConfig& cfg, Rng& rng);

/// Frame t (0 or 1). `noiseless` renders geometry only: no texture and
/// no photometric jitter.
Tensor render_frame(const SynthScene& scene, int t, bool noiseless = false);

/// Union of the change shapes.
Tensor render_mask(const SynthScene& scene);

/// n samples; sample i uses an independent stream derived from
/// (cfg.seed, i) and is named "synth_NNNN".
std::vector<BiTemporalSample> synth_generate(const SynthConfig& cfg, std::size_t n);

// ---- files -----------------------------------------------------------------

/// 8-bit RGB image as (1, 3, H, W) in [0, 1]. Gray or palette files are
/// expanded to RGB; alpha is dropped.
Tensor load_rgb(const std::filesystem::path& path);
/// 8-bit label image as (1, 1, H, W): values > 127 become 1.
Tensor load_mask(const std::filesystem::path& path);

/// Values are clamped to [0, 1] and rounded to 8 bits.
void save_rgb(const Tensor& img, const std::filesystem::path& path);
/// (1, 1, H, W) gray image; works for both binary masks and probability
/// maps.
void save_gray(const Tensor& map, const std::filesystem::path& path);
/// Four-color comparison: white TP, black TN, red FP, green FN.
void save_comparison(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt, std::size_t height,
                     std::size_t width, const std::filesystem::path& path);

/// Reads root/A, root/B and root/label. Every PNG in A needs a same-named
/// file in B and label (and vice versa); samples come back sorted by file
/// name. H and W must be multiples of 32.
std::vector<BiTemporalSample> load_pair_dir(const std::filesystem::path& root);

/// Writes samples in the A/B/label layout plus a manifest.txt listing
/// one id per line.
void save_pair_dir(const std::vector<BiTemporalSample>& samples, const std::filesystem::path& root);

}  // namespace cdx
