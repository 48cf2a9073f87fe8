#include "dmvfc/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "binary_io.hpp"
#include "dmvfc/error.hpp"

namespace dmvfc {

namespace {

constexpr std::uint32_t kWeightsVersion = 1;

ad::Matrix glorot(int fan_in, int fan_out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    ad::Matrix w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    return w;
}

void add_linear(EncoderWeights& w, const std::string& name, int fan_in, int fan_out, std::mt19937_64& rng) {
    w.names.push_back(name + ".weight");
    w.params.push_back(ad::parameter(glorot(fan_in, fan_out, rng)));
    w.names.push_back(name + ".bias");
    w.params.push_back(ad::parameter(ad::Matrix::Zero(1, fan_out)));
}

ad::Var linear(const ad::Var& x, const EncoderWeights& w, std::size_t layer) {
    return ad::add(ad::matmul(x, w.params[2 * layer]), w.params[2 * layer + 1]);
}

// Recovers architecture constants from the parameter shapes.
struct GeoShape {
    int points;
    int neighbors;
    double slope;
};

GeoShape geo_shape(const EncoderWeights& w) {
    if (w.view != View::Geometric || w.params.size() != 10)
        throw ShapeMismatch("encode_geometric: weights are not a geometric encoder");
    return {w.input_size, GeometricArch{}.neighbors, GeometricArch{}.slope};
}

// Indices of the k nearest other rows of `features` within each block of
// `points` rows, ordered by (distance, index). Output is block-major,
// k entries per point, as global row indices.
std::vector<int> knn_blocks(const ad::Matrix& features, int points, int k) {
    const Eigen::Index blocks = features.rows() / points;
    std::vector<int> out(static_cast<std::size_t>(features.rows() * k));
    std::vector<std::pair<double, int>> cand(static_cast<std::size_t>(points));
    ad::Matrix d(points, points);
    for (Eigen::Index b = 0; b < blocks; ++b) {
        const auto base = static_cast<int>(b * points);
        auto block = features.middleRows(base, points);
        const Eigen::VectorXd sq = block.rowwise().squaredNorm();
        d = -2.0 * block * block.transpose();
        d.colwise() += sq;
        d.rowwise() += sq.transpose();
        for (int i = 0; i < points; ++i) {
            int m = 0;
            for (int j = 0; j < points; ++j)
                if (j != i) cand[static_cast<std::size_t>(m++)] = {d(i, j), j};
            std::partial_sort(cand.begin(), cand.begin() + k, cand.begin() + m);
            for (int c = 0; c < k; ++c)
                out[static_cast<std::size_t>((base + i) * k + c)] = base + cand[static_cast<std::size_t>(c)].second;
        }
    }
    if (auto* rec = ad::detail::active_recorder())
        for (int v : out) rec->add(static_cast<std::uint64_t>(v));
    return out;
}

// One edge-convolution block: shared two-layer perceptron over
// [x_i, x_j - x_i] for the k nearest neighbours j of i, max over j.
ad::Var edge_conv(const ad::Var& x, const EncoderWeights& w, std::size_t first_layer, int points, int k,
                  double slope) {
    const auto neighbors = knn_blocks(x.value(), points, k);
    std::vector<int> centers(neighbors.size());
    for (std::size_t e = 0; e < centers.size(); ++e) centers[e] = static_cast<int>(e / static_cast<std::size_t>(k));
    const ad::Var xc = ad::gather_rows(x, centers);
    const ad::Var xn = ad::gather_rows(x, neighbors);
    const ad::Var edges = ad::concat_cols(xc, ad::sub(xn, xc));
    ad::Var h = ad::leaky_relu(linear(edges, w, first_layer), slope);
    h = ad::leaky_relu(linear(h, w, first_layer + 1), slope);
    return ad::max_groups(h, k);
}

ad::Matrix standardize(const std::vector<float>& series) {
    const auto n = static_cast<Eigen::Index>(series.size());
    ad::Matrix row(1, n);
    double mean = 0.0;
    for (float v : series) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (float v : series) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    if (!(var > 0.0)) throw DegenerateInput("encode_functional: zero-variance BOLD series");
    const double inv = 1.0 / std::sqrt(var);
    for (Eigen::Index t = 0; t < n; ++t) row(0, t) = (series[static_cast<std::size_t>(t)] - mean) * inv;
    return row;
}

}  // namespace

const char* view_name(View view) { return view == View::Geometric ? "geo" : "func"; }

View parse_view(const std::string& text) {
    if (text == "geo" || text == "geometric" || text == "1") return View::Geometric;
    if (text == "func" || text == "functional" || text == "2") return View::Functional;
    throw ConfigError("unknown view '" + text + "' (expected geo or func)");
}

EncoderWeights EncoderWeights::clone() const {
    EncoderWeights out = *this;
    for (auto& p : out.params) p = ad::parameter(p.value());
    return out;
}

std::size_t EncoderWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += static_cast<std::size_t>(p.value().size());
    return n;
}

EncoderWeights init_geometric(std::uint64_t seed, const GeometricArch& arch) {
    if (arch.neighbors != GeometricArch{}.neighbors || arch.slope != GeometricArch{}.slope)
        throw ConfigError("init_geometric: only k=5 and slope 0.01 are supported");
    if (arch.points <= arch.neighbors) throw ConfigError("init_geometric: need more points than neighbours");
    std::mt19937_64 rng(seed);
    EncoderWeights w;
    w.view = View::Geometric;
    w.input_size = arch.points;
    add_linear(w, "edge1.fc1", 6, arch.width1, rng);
    add_linear(w, "edge1.fc2", arch.width1, arch.width1, rng);
    add_linear(w, "edge2.fc1", 2 * arch.width1, arch.width2, rng);
    add_linear(w, "edge2.fc2", arch.width2, arch.width2, rng);
    add_linear(w, "head", arch.width2, kEmbedDim, rng);
    return w;
}

EncoderWeights init_functional(std::uint64_t seed, const FunctionalArch& arch) {
    if (arch.slope != FunctionalArch{}.slope) throw ConfigError("init_functional: only slope 0.01 is supported");
    if (arch.length < 2) throw ConfigError("init_functional: series too short");
    std::mt19937_64 rng(seed);
    EncoderWeights w;
    w.view = View::Functional;
    w.input_size = arch.length;
    add_linear(w, "series.fc1", arch.length, arch.hidden1, rng);
    add_linear(w, "series.fc2", arch.hidden1, arch.hidden2, rng);
    add_linear(w, "head", arch.hidden2, kEmbedDim, rng);
    return w;
}

EncoderWeights init_encoder(View view, std::uint64_t seed, int input_size) {
    if (view == View::Geometric) {
        GeometricArch arch;
        arch.points = input_size;
        return init_geometric(seed, arch);
    }
    FunctionalArch arch;
    arch.length = input_size;
    return init_functional(seed, arch);
}

void fit_input_normalization(EncoderWeights& weights, const Bundle& bundle) {
    if (weights.view != View::Geometric) return;
    validate(bundle);
    Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
    double count = 0.0;
    for (const auto& r : bundle.records) {
        mean += r.fiber.points.cast<double>().colwise().sum();
        count += static_cast<double>(r.fiber.points.rows());
    }
    mean /= count;
    double sq = 0.0;
    for (const auto& r : bundle.records)
        sq += (r.fiber.points.cast<double>().rowwise() - mean).rowwise().squaredNorm().sum();
    const double rms = std::sqrt(sq / count);
    weights.input_shift = mean;
    weights.input_scale = rms > 0.0 ? rms : 1.0;
}

ad::Var encode_geometric(const EncoderWeights& w, const std::vector<const Fiber*>& fibers) {
    const GeoShape shape = geo_shape(w);
    if (fibers.empty()) throw ShapeMismatch("encode_geometric: empty batch");
    ad::Matrix x(static_cast<Eigen::Index>(fibers.size()) * shape.points, 3);
    for (std::size_t b = 0; b < fibers.size(); ++b) {
        const Fiber& f = *fibers[b];
        if (f.size() != shape.points)
            throw ShapeMismatch("encode_geometric: fiber has " + std::to_string(f.size()) + " points, expected " +
                                std::to_string(shape.points));
        x.middleRows(static_cast<Eigen::Index>(b) * shape.points, shape.points) =
            (f.points.cast<double>().rowwise() - w.input_shift) / w.input_scale;
    }
    const ad::Var x0 = ad::constant(std::move(x));
    const ad::Var x1 = edge_conv(x0, w, 0, shape.points, shape.neighbors, shape.slope);
    const ad::Var x2 = edge_conv(x1, w, 2, shape.points, shape.neighbors, shape.slope);
    const ad::Var pooled = ad::max_groups(x2, shape.points);
    return linear(pooled, w, 4);
}

ad::Var encode_functional(const EncoderWeights& w, const std::vector<const BoldPair*>& bolds) {
    if (w.view != View::Functional || w.params.size() != 6)
        throw ShapeMismatch("encode_functional: weights are not a functional encoder");
    if (bolds.empty()) throw ShapeMismatch("encode_functional: empty batch");
    const int t = w.input_size;
    ad::Matrix x(static_cast<Eigen::Index>(bolds.size()) * 2, t);
    for (std::size_t b = 0; b < bolds.size(); ++b) {
        const BoldPair& p = *bolds[b];
        if (p.length() != t || p.endpoint_b.size() != p.endpoint_a.size())
            throw ShapeMismatch("encode_functional: BOLD length " + std::to_string(p.length()) + ", expected " +
                                std::to_string(t));
        x.row(static_cast<Eigen::Index>(2 * b)) = standardize(p.endpoint_a);
        x.row(static_cast<Eigen::Index>(2 * b + 1)) = standardize(p.endpoint_b);
    }
    const double slope = FunctionalArch{}.slope;
    ad::Var h = ad::leaky_relu(linear(ad::constant(std::move(x)), w, 0), slope);
    h = ad::leaky_relu(linear(h, w, 1), slope);
    // Symmetric pooling across the two endpoints.
    const ad::Var pooled = ad::max_groups(h, 2);
    return linear(pooled, w, 2);
}

ad::Var encode(const EncoderWeights& weights, const Bundle& bundle, const std::vector<int>& indices) {
    if (weights.view == View::Geometric) {
        std::vector<const Fiber*> fibers;
        fibers.reserve(indices.size());
        for (int i : indices) fibers.push_back(&bundle.records.at(static_cast<std::size_t>(i)).fiber);
        return encode_geometric(weights, fibers);
    }
    std::vector<const BoldPair*> bolds;
    bolds.reserve(indices.size());
    for (int i : indices) bolds.push_back(&bundle.records.at(static_cast<std::size_t>(i)).bold);
    return encode_functional(weights, bolds);
}

ad::Matrix embed_bundle(const EncoderWeights& weights, const Bundle& bundle, int chunk) {
    const int n = bundle.size();
    ad::Matrix out(n, weights.embed_dim);
    std::vector<int> idx;
    for (int start = 0; start < n; start += chunk) {
        const int end = std::min(n, start + chunk);
        idx.resize(static_cast<std::size_t>(end - start));
        std::iota(idx.begin(), idx.end(), start);
        out.middleRows(start, end - start) = encode(weights, bundle, idx).value();
    }
    return out;
}

void save_weights(const EncoderWeights& weights, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    detail::BinaryWriter w(out);
    w.magic("DMWT");
    w.put<std::uint32_t>(kWeightsVersion);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(weights.view));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(weights.embed_dim));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(weights.input_size));
    for (int d = 0; d < 3; ++d) w.put<double>(weights.input_shift(d));
    w.put<double>(weights.input_scale);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(weights.params.size()));
    for (const auto& p : weights.params) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(p.rows()));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(p.cols()));
        for (Eigen::Index i = 0; i < p.value().size(); ++i) w.put<float>(static_cast<float>(p.value().data()[i]));
    }
    if (!out) throw Error("write failed for " + path.string());
}

EncoderWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    detail::BinaryReader r(in, path.string());
    r.expect_magic("DMWT");
    if (r.get<std::uint32_t>("header") != kWeightsVersion) throw ParseError(path.string() + ": unsupported version");
    const auto tag = r.get<std::uint8_t>("header");
    if (tag != 1 && tag != 2) throw ParseError(path.string() + ": unknown view tag");
    const auto embed_dim = r.get<std::uint32_t>("header");
    const auto input_size = r.get<std::uint32_t>("header");
    if (embed_dim != kEmbedDim) throw ParseError(path.string() + ": embedding dimension must be 10");

    EncoderWeights w = init_encoder(static_cast<View>(tag), 0, static_cast<int>(input_size));
    for (int d = 0; d < 3; ++d) w.input_shift(d) = r.get<double>("header");
    w.input_scale = r.get<double>("header");
    const auto count = r.get<std::uint32_t>("header");
    if (count != w.params.size()) throw ParseError(path.string() + ": tensor count does not match the architecture");
    for (std::size_t t = 0; t < w.params.size(); ++t) {
        const auto ctx = "tensor " + w.names[t];
        const auto rows = r.get<std::uint32_t>(ctx);
        const auto cols = r.get<std::uint32_t>(ctx);
        auto& value = w.params[t].mutable_value();
        if (rows != value.rows() || cols != value.cols())
            throw ParseError(path.string() + ": shape mismatch for " + w.names[t]);
        for (Eigen::Index i = 0; i < value.size(); ++i) {
            const float v = r.get<float>(ctx);
            if (!std::isfinite(v)) throw ParseError(path.string() + ": non-finite value in " + w.names[t]);
            value.data()[i] = v;
        }
    }
    if (!r.at_end()) throw ParseError(path.string() + ": trailing bytes");
    return w;
}

void load_weights_into(EncoderWeights& weights, const std::filesystem::path& path) {
    EncoderWeights loaded = load_weights(path);
    if (loaded.view != weights.view || loaded.params.size() != weights.params.size())
        throw ShapeMismatch(path.string() + ": checkpoint view/architecture differs");
    for (std::size_t t = 0; t < loaded.params.size(); ++t)
        if (loaded.params[t].rows() != weights.params[t].rows() || loaded.params[t].cols() != weights.params[t].cols())
            throw ShapeMismatch(path.string() + ": shape mismatch for " + weights.names[t]);
    weights = std::move(loaded);
}

}  // namespace dmvfc
