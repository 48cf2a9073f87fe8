#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dmvfc {

inline constexpr int kDefaultPointsPerFiber = 25;
inline constexpr int kDefaultBoldLength = 600;

// Row-major n_p x 3 coordinates, RAS frame, millimetres. Values are stored in
// single precision to match the on-disk format; kernels accumulate in double.
using PointMatrix = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct Fiber {
    PointMatrix points;

    int size() const { return static_cast<int>(points.rows()); }
    Fiber reversed() const;
};

// BOLD time series sampled at the two fiber endpoints. endpoint_a belongs to
// the first point of the fiber, endpoint_b to the last.
struct BoldPair {
    std::vector<float> endpoint_a;
    std::vector<float> endpoint_b;

    int length() const { return static_cast<int>(endpoint_a.size()); }
};

// Per-point fractional anisotropy along the fiber, each value in [0, 1].
struct FAProfile {
    std::vector<float> values;

    int size() const { return static_cast<int>(values.size()); }
};

struct FiberRecord {
    Fiber fiber;
    BoldPair bold;
    FAProfile fa;
    std::optional<std::int32_t> truth_label;
};

struct Bundle {
    std::string name;
    std::vector<FiberRecord> records;

    int size() const { return static_cast<int>(records.size()); }
    int points_per_fiber() const;
    int bold_length() const;
    bool has_labels() const;
    std::vector<int> truth_labels() const;
};

// Throws ShapeMismatch/DegenerateInput describing the first offending record.
void validate(const Bundle& bundle);

// Equal arc-length resampling with linear interpolation between raw points.
// The first and last raw points are reproduced exactly.
Fiber resample_fiber(const PointMatrix& raw, int n_points);

// Picks `target` time indices uniformly without replacement, sorts them, and
// applies the same index set to both endpoints.
BoldPair downsample_bold(const std::vector<float>& endpoint_a, const std::vector<float>& endpoint_b,
                         int target, std::uint64_t seed);

struct SynthConfig {
    int groups = 4;               // geometric groups (G)
    int subgroups = 2;            // functional subgroups per geometric group (F)
    int fibers = 400;             // total fibers, split evenly over G*F subgroups
    int points = kDefaultPointsPerFiber;
    int raw_points = 60;          // polyline density before resampling
    int bold_length = kDefaultBoldLength;
    int raw_bold_length = 1200;

    double arc_radius = 40.0;     // mm
    double arc_angle = 1.8;       // radians spanned by each template
    double group_separation = 10.0;  // mm between neighbouring templates
    double subgroup_offset = 0.0;    // mm radial shift between functional subgroups
    double subgroup_phase = 0.0;     // radians of arc rotation between functional subgroups
    double sigma_geo = 0.5;       // per-point jitter, mm
    double sigma_shift = 0.0;     // per-fiber rigid translation jitter, mm
    double sigma_rotation = 0.0;  // per-fiber rotation of the arc about its axis, radians
    double flip_probability = 0.5;

    double sigma_bold = 0.5;      // noise relative to a unit-variance latent
    double bold_smoothness = 0.8; // AR(1) coefficient of the latent series

    double fa_base = 0.45;
    double fa_group_step = 0.1;   // FA mean difference between neighbouring groups
    double sigma_fa = 0.02;

    bool shuffle = false;         // interleave records instead of grouping by label
    std::string name = "synthetic";
};

void validate(const SynthConfig& config);

// Ground-truth label of a record is group * subgroups + subgroup.
Bundle synth_bundle(const SynthConfig& config, std::uint64_t seed);

// Copy of `bundle` with independent Gaussian jitter on every coordinate.
// BOLD, FA and labels are carried over unchanged.
Bundle jitter_copy(const Bundle& bundle, double sigma, std::uint64_t seed);

// Canonical little-endian binary format, magic "DMVF".
void save_bundle(const Bundle& bundle, const std::filesystem::path& path);
Bundle load_bundle(const std::filesystem::path& path);

// Line-delimited JSON interchange variant: a header object followed by one
// record object per line.
void save_bundle_text(const Bundle& bundle, const std::filesystem::path& path);
Bundle load_bundle_text(const std::filesystem::path& path);

// Dispatches on the file's leading bytes.
Bundle load_bundle_any(const std::filesystem::path& path);

}  // namespace dmvfc
