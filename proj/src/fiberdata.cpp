#include "dmvfc/fiberdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "dmvfc/error.hpp"

namespace dmvfc {

namespace {

constexpr std::uint32_t kBundleVersion = 1;

std::string record_context(std::size_t i) { return "record " + std::to_string(i); }

bool all_finite(const std::vector<float>& v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace

Fiber Fiber::reversed() const {
    Fiber out;
    out.points = points.colwise().reverse();
    return out;
}

int Bundle::points_per_fiber() const { return records.empty() ? 0 : records.front().fiber.size(); }

int Bundle::bold_length() const { return records.empty() ? 0 : records.front().bold.length(); }

bool Bundle::has_labels() const {
    return !records.empty() &&
           std::all_of(records.begin(), records.end(), [](const FiberRecord& r) { return r.truth_label.has_value(); });
}

std::vector<int> Bundle::truth_labels() const {
    if (!has_labels()) throw ShapeMismatch("bundle '" + name + "' carries no truth labels");
    std::vector<int> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(*r.truth_label);
    return out;
}

void validate(const Bundle& bundle) {
    if (bundle.records.empty()) throw ShapeMismatch("bundle '" + bundle.name + "' has no records");
    const int n_p = bundle.points_per_fiber();
    const int t = bundle.bold_length();
    const bool labels = bundle.records.front().truth_label.has_value();
    for (std::size_t i = 0; i < bundle.records.size(); ++i) {
        const auto& r = bundle.records[i];
        const auto where = record_context(i);
        if (r.fiber.size() != n_p) throw ShapeMismatch(where + ": point count differs from the bundle");
        if (n_p < 2) throw DegenerateInput(where + ": fiber needs at least 2 points");
        if (!r.fiber.points.allFinite()) throw DegenerateInput(where + ": non-finite coordinate");
        if (r.bold.endpoint_a.size() != r.bold.endpoint_b.size() || r.bold.length() != t)
            throw ShapeMismatch(where + ": BOLD length mismatch");
        if (!all_finite(r.bold.endpoint_a) || !all_finite(r.bold.endpoint_b))
            throw DegenerateInput(where + ": non-finite BOLD sample");
        if (r.fa.size() != n_p) throw ShapeMismatch(where + ": FA profile length differs from point count");
        for (float v : r.fa.values)
            if (!(v >= 0.0f && v <= 1.0f)) throw DegenerateInput(where + ": FA value outside [0, 1]");
        if (r.truth_label.has_value() != labels) throw ShapeMismatch(where + ": labels present on some records only");
    }
}

Fiber resample_fiber(const PointMatrix& raw, int n_points) {
    if (raw.rows() < 2) throw DegenerateInput("resample_fiber: polyline needs at least 2 points");
    if (n_points < 2) throw DegenerateInput("resample_fiber: need at least 2 output points");
    if (!raw.allFinite()) throw DegenerateInput("resample_fiber: non-finite coordinate");

    const Eigen::Index m = raw.rows();
    std::vector<double> cumulative(static_cast<std::size_t>(m), 0.0);
    for (Eigen::Index i = 1; i < m; ++i) {
        const double seg = (raw.row(i).cast<double>() - raw.row(i - 1).cast<double>()).norm();
        cumulative[static_cast<std::size_t>(i)] = cumulative[static_cast<std::size_t>(i - 1)] + seg;
    }
    const double total = cumulative.back();
    if (!(total > 0.0)) throw DegenerateInput("resample_fiber: zero-length polyline");

    Fiber out;
    out.points.resize(n_points, 3);
    out.points.row(0) = raw.row(0);
    out.points.row(n_points - 1) = raw.row(m - 1);
    std::size_t seg = 1;
    for (int k = 1; k + 1 < n_points; ++k) {
        const double target = total * static_cast<double>(k) / static_cast<double>(n_points - 1);
        while (seg + 1 < cumulative.size() && cumulative[seg] < target) ++seg;
        const double s0 = cumulative[seg - 1];
        const double len = cumulative[seg] - s0;
        const double t = len > 0.0 ? (target - s0) / len : 0.0;
        const Eigen::RowVector3d p0 = raw.row(static_cast<Eigen::Index>(seg - 1)).cast<double>();
        const Eigen::RowVector3d p1 = raw.row(static_cast<Eigen::Index>(seg)).cast<double>();
        out.points.row(k) = (p0 + t * (p1 - p0)).cast<float>();
    }
    return out;
}

BoldPair downsample_bold(const std::vector<float>& endpoint_a, const std::vector<float>& endpoint_b, int target,
                         std::uint64_t seed) {
    if (endpoint_a.size() != endpoint_b.size()) throw ShapeMismatch("downsample_bold: endpoint lengths differ");
    if (target < 1) throw ConfigError("downsample_bold: target must be positive");
    const auto n = endpoint_a.size();
    if (static_cast<std::size_t>(target) > n)
        throw ShapeMismatch("downsample_bold: target " + std::to_string(target) + " exceeds series length " +
                            std::to_string(n));

    std::vector<std::size_t> index(n);
    std::iota(index.begin(), index.end(), std::size_t{0});
    if (static_cast<std::size_t>(target) < n) {
        // Partial Fisher-Yates: the first `target` slots become a uniform sample.
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < static_cast<std::size_t>(target); ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(index[i], index[pick(rng)]);
        }
        index.resize(static_cast<std::size_t>(target));
        std::sort(index.begin(), index.end());
    }

    BoldPair out;
    out.endpoint_a.reserve(index.size());
    out.endpoint_b.reserve(index.size());
    for (auto i : index) {
        out.endpoint_a.push_back(endpoint_a[i]);
        out.endpoint_b.push_back(endpoint_b[i]);
    }
    return out;
}

void validate(const SynthConfig& c) {
    if (c.groups < 1 || c.subgroups < 1) throw ConfigError("synth: groups and subgroups must be positive");
    if (c.fibers < 1) throw ConfigError("synth: fiber count must be positive");
    if (c.points < 2 || c.raw_points < 2) throw ConfigError("synth: need at least 2 points per fiber");
    if (c.bold_length < 2 || c.raw_bold_length < c.bold_length)
        throw ConfigError("synth: raw BOLD length must be >= BOLD length >= 2");
    if (!(c.arc_radius > 0.0) || !(c.arc_angle > 0.0)) throw ConfigError("synth: template arc must be non-degenerate");
    if (c.group_separation < 0.0 || c.subgroup_offset < 0.0 || c.subgroup_phase < 0.0) throw ConfigError("synth: negative separation");
    if (c.sigma_geo < 0.0 || c.sigma_shift < 0.0 || c.sigma_rotation < 0.0 || c.sigma_bold < 0.0 || c.sigma_fa < 0.0)
        throw ConfigError("synth: noise levels must be non-negative");
    if (c.flip_probability < 0.0 || c.flip_probability > 1.0) throw ConfigError("synth: flip probability outside [0, 1]");
    if (c.bold_smoothness < 0.0 || c.bold_smoothness >= 1.0) throw ConfigError("synth: BOLD smoothness must be in [0, 1)");
}

Bundle synth_bundle(const SynthConfig& c, std::uint64_t seed) {
    validate(c);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    const int n_sub = c.groups * c.subgroups;

    // One unit-variance AR(1) latent per functional subgroup.
    std::vector<std::vector<double>> latents(static_cast<std::size_t>(n_sub));
    const double innovation = std::sqrt(1.0 - c.bold_smoothness * c.bold_smoothness);
    for (auto& latent : latents) {
        latent.resize(static_cast<std::size_t>(c.raw_bold_length));
        double x = normal(rng);
        for (auto& v : latent) {
            v = x;
            x = c.bold_smoothness * x + innovation * normal(rng);
        }
    }
    const std::uint64_t downsample_seed = rng();

    Bundle bundle;
    bundle.name = c.name;
    bundle.records.reserve(static_cast<std::size_t>(c.fibers));

    for (int i = 0; i < c.fibers; ++i) {
        // Contiguous, as-even-as-possible blocks per subgroup.
        const int label = static_cast<int>(static_cast<long long>(i) * n_sub / c.fibers);
        const int group = label / c.subgroups;
        const int sub = label % c.subgroups;

        const double radius = c.arc_radius + (sub - 0.5 * (c.subgroups - 1)) * c.subgroup_offset;
        const double z0 = group * c.group_separation;
        const Eigen::Vector3d shift(c.sigma_shift * normal(rng), c.sigma_shift * normal(rng),
                                    c.sigma_shift * normal(rng));
        const double phase = (sub - 0.5 * (c.subgroups - 1)) * c.subgroup_phase + c.sigma_rotation * normal(rng);

        PointMatrix raw(c.raw_points, 3);
        for (int k = 0; k < c.raw_points; ++k) {
            const double theta = phase + c.arc_angle * k / (c.raw_points - 1);
            raw(k, 0) = static_cast<float>(radius * std::cos(theta) + shift.x());
            raw(k, 1) = static_cast<float>(radius * std::sin(theta) + shift.y());
            raw(k, 2) = static_cast<float>(z0 + shift.z());
        }
        FiberRecord rec;
        rec.fiber = resample_fiber(raw, c.points);
        for (int k = 0; k < c.points; ++k)
            for (int d = 0; d < 3; ++d)
                rec.fiber.points(k, d) = static_cast<float>(rec.fiber.points(k, d) + c.sigma_geo * normal(rng));

        std::vector<float> raw_a(static_cast<std::size_t>(c.raw_bold_length));
        std::vector<float> raw_b(static_cast<std::size_t>(c.raw_bold_length));
        const auto& latent = latents[static_cast<std::size_t>(label)];
        for (std::size_t t = 0; t < latent.size(); ++t) {
            raw_a[t] = static_cast<float>(latent[t] + c.sigma_bold * normal(rng));
            raw_b[t] = static_cast<float>(latent[t] + c.sigma_bold * normal(rng));
        }
        rec.bold = downsample_bold(raw_a, raw_b, c.bold_length, downsample_seed);

        const double level = c.fa_base + group * c.fa_group_step;
        rec.fa.values.resize(static_cast<std::size_t>(c.points));
        for (int k = 0; k < c.points; ++k) {
            const double along = static_cast<double>(k) / (c.points - 1);
            const double v = level + 0.1 * std::sin(M_PI * along) * (0.5 + along) + c.sigma_fa * normal(rng);
            rec.fa.values[static_cast<std::size_t>(k)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }

        if (uniform(rng) < c.flip_probability) {
            rec.fiber = rec.fiber.reversed();
            std::swap(rec.bold.endpoint_a, rec.bold.endpoint_b);
            std::reverse(rec.fa.values.begin(), rec.fa.values.end());
        }
        rec.truth_label = label;
        bundle.records.push_back(std::move(rec));
    }

    if (c.shuffle) std::shuffle(bundle.records.begin(), bundle.records.end(), rng);
    return bundle;
}

Bundle jitter_copy(const Bundle& bundle, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw ConfigError("jitter_copy: sigma must be non-negative");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    Bundle out = bundle;
    if (sigma == 0.0) return out;
    for (auto& r : out.records)
        for (Eigen::Index k = 0; k < r.fiber.points.rows(); ++k)
            for (int d = 0; d < 3; ++d) r.fiber.points(k, d) = static_cast<float>(r.fiber.points(k, d) + normal(rng));
    return out;
}

void save_bundle(const Bundle& bundle, const std::filesystem::path& path) {
    validate(bundle);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    detail::BinaryWriter w(out);
    const bool labels = bundle.has_labels();
    w.magic("DMVF");
    w.put<std::uint32_t>(kBundleVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(bundle.size()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(bundle.points_per_fiber()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(bundle.bold_length()));
    w.put<std::uint8_t>(labels ? 1 : 0);
    for (const auto& r : bundle.records) {
        for (Eigen::Index k = 0; k < r.fiber.points.rows(); ++k)
            for (int d = 0; d < 3; ++d) w.put<float>(r.fiber.points(k, d));
        for (float v : r.bold.endpoint_a) w.put<float>(v);
        for (float v : r.bold.endpoint_b) w.put<float>(v);
        for (float v : r.fa.values) w.put<float>(v);
        if (labels) w.put<std::int32_t>(*r.truth_label);
    }
    if (!out) throw Error("write failed for " + path.string());
}

Bundle load_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    detail::BinaryReader r(in, path.string());
    r.expect_magic("DMVF");
    const auto version = r.get<std::uint32_t>("header");
    if (version != kBundleVersion) throw ParseError(path.string() + ": unsupported version " + std::to_string(version));
    const auto n = r.get<std::uint32_t>("header");
    const auto n_p = r.get<std::uint32_t>("header");
    const auto t = r.get<std::uint32_t>("header");
    const auto has_labels = r.get<std::uint8_t>("header");
    if (n == 0) throw ParseError(path.string() + ": bundle has no records");
    if (n_p < 2 || n_p > 100000 || t > 10000000) throw ParseError(path.string() + ": implausible header dimensions");
    if (has_labels > 1) throw ParseError(path.string() + ": bad label flag");

    Bundle bundle;
    bundle.name = path.stem().string();
    bundle.records.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto ctx = record_context(i);
        auto& rec = bundle.records[i];
        rec.fiber.points.resize(n_p, 3);
        for (std::uint32_t k = 0; k < n_p; ++k)
            for (int d = 0; d < 3; ++d) rec.fiber.points(k, d) = r.get<float>(ctx);
        rec.bold.endpoint_a.resize(t);
        rec.bold.endpoint_b.resize(t);
        for (auto& v : rec.bold.endpoint_a) v = r.get<float>(ctx);
        for (auto& v : rec.bold.endpoint_b) v = r.get<float>(ctx);
        rec.fa.values.resize(n_p);
        for (auto& v : rec.fa.values) v = r.get<float>(ctx);
        if (has_labels) rec.truth_label = r.get<std::int32_t>(ctx);
    }
    if (!r.at_end()) throw ParseError(path.string() + ": trailing bytes after record " + std::to_string(n - 1));
    try {
        validate(bundle);
    } catch (const Error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return bundle;
}

void save_bundle_text(const Bundle& bundle, const std::filesystem::path& path) {
    validate(bundle);
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    nlohmann::json header = {{"format", "dmvf-text"},
                             {"version", kBundleVersion},
                             {"name", bundle.name},
                             {"n", bundle.size()},
                             {"n_p", bundle.points_per_fiber()},
                             {"T", bundle.bold_length()}};
    out << header.dump() << '\n';
    for (const auto& r : bundle.records) {
        nlohmann::json rec;
        std::vector<float> pts(r.fiber.points.data(), r.fiber.points.data() + r.fiber.points.size());
        rec["points"] = pts;
        rec["bold_a"] = r.bold.endpoint_a;
        rec["bold_b"] = r.bold.endpoint_b;
        rec["fa"] = r.fa.values;
        if (r.truth_label) rec["label"] = *r.truth_label;
        out << rec.dump() << '\n';
    }
}

Bundle load_bundle_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    Bundle bundle;
    int n_p = 0;
    try {
        auto header = nlohmann::json::parse(line);
        if (header.value("format", "") != "dmvf-text") throw ParseError(path.string() + ": not a dmvf-text file");
        bundle.name = header.value("name", path.stem().string());
        n_p = header.at("n_p").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": malformed header: " + e.what());
    }
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto ctx = path.string() + ": " + record_context(index);
        try {
            auto j = nlohmann::json::parse(line);
            FiberRecord rec;
            auto pts = j.at("points").get<std::vector<float>>();
            if (n_p < 2 || pts.size() != static_cast<std::size_t>(n_p) * 3)
                throw ParseError(ctx + ": point array length mismatch");
            rec.fiber.points = Eigen::Map<const PointMatrix>(pts.data(), n_p, 3);
            rec.bold.endpoint_a = j.at("bold_a").get<std::vector<float>>();
            rec.bold.endpoint_b = j.at("bold_b").get<std::vector<float>>();
            rec.fa.values = j.at("fa").get<std::vector<float>>();
            if (j.contains("label")) rec.truth_label = j["label"].get<std::int32_t>();
            bundle.records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(ctx + ": " + e.what());
        }
        ++index;
    }
    try {
        validate(bundle);
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return bundle;
}

Bundle load_bundle_any(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    char head[4] = {};
    in.read(head, 4);
    if (in.gcount() == 4 && std::string(head, 4) == "DMVF") return load_bundle(path);
    return load_bundle_text(path);
}

}  // namespace dmvfc
