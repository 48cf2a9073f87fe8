#include "dmvfc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "dmvfc/error.hpp"
#include "dmvfc/parallel.hpp"

namespace dmvfc {

namespace {

inline double point_distance(const PointMatrix& a, Eigen::Index i, const PointMatrix& b, Eigen::Index j) {
    const double dx = static_cast<double>(a(i, 0)) - b(j, 0);
    const double dy = static_cast<double>(a(i, 1)) - b(j, 1);
    const double dz = static_cast<double>(a(i, 2)) - b(j, 2);
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Mean pointwise distance for the direct and flipped pairings.
std::pair<double, double> direct_flip(const Fiber& a, const Fiber& b) {
    if (a.size() != b.size())
        throw ShapeMismatch("mdf: point counts differ (" + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
    const Eigen::Index n = a.points.rows();
    if (n == 0) throw DegenerateInput("mdf: empty fiber");
    double direct = 0.0, flipped = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        direct += point_distance(a.points, i, b.points, i);
        flipped += point_distance(a.points, i, b.points, n - 1 - i);
    }
    return {direct / static_cast<double>(n), flipped / static_cast<double>(n)};
}

double mean_abs_diff(const std::vector<float>& a, const std::vector<float>& b, bool flip) {
    const std::size_t n = a.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::abs(static_cast<double>(a[i]) - b[flip ? n - 1 - i : i]);
    return sum / static_cast<double>(n);
}

double comb2(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

std::vector<std::vector<int>> ClusterLabels::members() const {
    std::vector<std::vector<int>> out(static_cast<std::size_t>(k));
    for (int i = 0; i < size(); ++i) out[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
    return out;
}

ClusterLabels make_labels(std::vector<int> labels) {
    ClusterLabels out;
    int max_label = -1;
    for (int l : labels) {
        if (l < 0) throw ShapeMismatch("cluster labels must be non-negative");
        max_label = std::max(max_label, l);
    }
    out.labels = std::move(labels);
    out.k = max_label + 1;
    return out;
}

double mdf(const Fiber& a, const Fiber& b) {
    auto [direct, flipped] = direct_flip(a, b);
    return std::min(direct, flipped);
}

bool mdf_prefers_flip(const Fiber& a, const Fiber& b) {
    auto [direct, flipped] = direct_flip(a, b);
    return flipped < direct;
}

double hausdorff(const Fiber& a, const Fiber& b) {
    const Eigen::Index na = a.points.rows(), nb = b.points.rows();
    if (na == 0 || nb == 0) throw DegenerateInput("hausdorff: empty fiber");
    std::vector<double> min_b(static_cast<std::size_t>(nb), std::numeric_limits<double>::infinity());
    double forward = 0.0;
    for (Eigen::Index i = 0; i < na; ++i) {
        double min_a = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < nb; ++j) {
            const double d = point_distance(a.points, i, b.points, j);
            min_a = std::min(min_a, d);
            auto& mb = min_b[static_cast<std::size_t>(j)];
            mb = std::min(mb, d);
        }
        forward = std::max(forward, min_a);
    }
    const double backward = *std::max_element(min_b.begin(), min_b.end());
    return std::max(forward, backward);
}

double pearson(const std::vector<float>& x, const std::vector<float>& y) {
    if (x.size() != y.size()) throw ShapeMismatch("pearson: series lengths differ");
    if (x.size() < 2) throw DegenerateInput("pearson: need at least 2 samples");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw DegenerateInput("pearson: zero-variance series");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double endpoint_correlation(const BoldPair& a, const BoldPair& b) {
    const double direct = 0.5 * (pearson(a.endpoint_a, b.endpoint_a) + pearson(a.endpoint_b, b.endpoint_b));
    const double flipped = 0.5 * (pearson(a.endpoint_a, b.endpoint_b) + pearson(a.endpoint_b, b.endpoint_a));
    return std::max(direct, flipped);
}

double functional_similarity(const BoldPair& a, const BoldPair& b) {
    return std::clamp((1.0 - endpoint_correlation(a, b)) / 2.0, 0.0, 1.0);
}

double fa_manhattan(const FAProfile& a, const FAProfile& b) {
    if (a.size() != b.size()) throw ShapeMismatch("fa_manhattan: profile lengths differ");
    if (a.values.empty()) throw DegenerateInput("fa_manhattan: empty profile");
    return std::min(mean_abs_diff(a.values, b.values, false), mean_abs_diff(a.values, b.values, true));
}

DistanceMatrix pairwise_distance(const std::vector<Fiber>& fibers, FiberKernel kernel) {
    const int n = static_cast<int>(fibers.size());
    DistanceMatrix m;
    m.n = n;
    m.data = Eigen::MatrixXd::Zero(n, n);
    // Row i owns the upper-triangle entries (i, j > i); each entry is written once.
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t begin, std::size_t end) {
        for (auto i = static_cast<int>(begin); i < static_cast<int>(end); ++i)
            for (int j = i + 1; j < n; ++j)
                m.data(i, j) = kernel == FiberKernel::Mdf ? mdf(fibers[static_cast<std::size_t>(i)],
                                                               fibers[static_cast<std::size_t>(j)])
                                                         : hausdorff(fibers[static_cast<std::size_t>(i)],
                                                                     fibers[static_cast<std::size_t>(j)]);
    });
    m.data.triangularView<Eigen::StrictlyLower>() = m.data.transpose();
    return m;
}

DistanceMatrix pairwise_distance(const Bundle& bundle, FiberKernel kernel) {
    std::vector<Fiber> fibers;
    fibers.reserve(bundle.records.size());
    for (const auto& r : bundle.records) fibers.push_back(r.fiber);
    return pairwise_distance(fibers, kernel);
}

template <typename Distance>
AlphaResult alpha_from(const ClusterLabels& labels, Distance&& distance) {
    AlphaResult out;
    out.per_cluster.assign(static_cast<std::size_t>(labels.k), 0.0);
    int non_empty = 0;
    double total = 0.0;
    const auto members = labels.members();
    for (std::size_t c = 0; c < members.size(); ++c) {
        const auto& m = members[c];
        if (m.empty()) continue;
        ++non_empty;
        if (m.size() < 2) continue;
        double sum = 0.0;
        for (std::size_t a = 0; a < m.size(); ++a)
            for (std::size_t b = a + 1; b < m.size(); ++b) sum += distance(m[a], m[b]);
        out.per_cluster[c] = sum / comb2(static_cast<double>(m.size()));
        total += out.per_cluster[c];
    }
    out.mean = non_empty > 0 ? total / non_empty : 0.0;
    return out;
}

AlphaResult alpha_measure(const DistanceMatrix& d, const ClusterLabels& labels) {
    if (labels.size() != d.n) throw ShapeMismatch("alpha_measure: labels do not cover the bundle");
    return alpha_from(labels, [&](int i, int j) { return d(i, j); });
}

AlphaResult alpha_measure(const Bundle& bundle, const ClusterLabels& labels) {
    if (labels.size() != bundle.size()) throw ShapeMismatch("alpha_measure: labels do not cover the bundle");
    return alpha_from(labels, [&](int i, int j) {
        return mdf(bundle.records[static_cast<std::size_t>(i)].fiber, bundle.records[static_cast<std::size_t>(j)].fiber);
    });
}

CorrelationResult intra_cluster_correlation(const Bundle& bundle, const ClusterLabels& labels) {
    if (labels.size() != bundle.size())
        throw ShapeMismatch("intra_cluster_correlation: labels do not cover the bundle");
    CorrelationResult out;
    const auto members = labels.members();
    out.per_cluster.assign(members.size(), std::numeric_limits<double>::quiet_NaN());
    parallel_for(members.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            const auto& m = members[c];
            if (m.size() < 2) continue;
            double sum = 0.0;
            for (std::size_t a = 0; a < m.size(); ++a)
                for (std::size_t b = a + 1; b < m.size(); ++b)
                    sum += endpoint_correlation(bundle.records[static_cast<std::size_t>(m[a])].bold,
                                                bundle.records[static_cast<std::size_t>(m[b])].bold);
            out.per_cluster[c] = sum / comb2(static_cast<double>(m.size()));
        }
    });
    int counted = 0;
    double total = 0.0;
    for (double v : out.per_cluster)
        if (!std::isnan(v)) {
            total += v;
            ++counted;
        }
    if (counted == 0) throw DegenerateInput("intra_cluster_correlation: no cluster has two or more fibers");
    out.mean = total / counted;
    return out;
}

ClusterLabels quickbundles(const Bundle& bundle, double threshold) {
    if (!(threshold > 0.0)) throw ConfigError("quickbundles: threshold must be positive");
    struct Cluster {
        Eigen::MatrixXd sum;  // flip-aligned sum of member points
        int count = 0;
        Fiber centroid;
    };
    std::vector<Cluster> clusters;
    ClusterLabels out;
    out.labels.resize(bundle.records.size());
    for (std::size_t i = 0; i < bundle.records.size(); ++i) {
        const Fiber& f = bundle.records[i].fiber;
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < clusters.size(); ++c) {
            const double d = mdf(f, clusters[c].centroid);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        if (best >= 0 && best_d <= threshold) {
            auto& cl = clusters[static_cast<std::size_t>(best)];
            const Fiber aligned = mdf_prefers_flip(cl.centroid, f) ? f.reversed() : f;
            cl.sum += aligned.points.cast<double>();
            ++cl.count;
            cl.centroid.points = (cl.sum / cl.count).cast<float>();
            out.labels[i] = best;
        } else {
            Cluster cl;
            cl.sum = f.points.cast<double>();
            cl.count = 1;
            cl.centroid = f;
            clusters.push_back(std::move(cl));
            out.labels[i] = static_cast<int>(clusters.size()) - 1;
        }
    }
    out.k = static_cast<int>(clusters.size());
    return out;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw ShapeMismatch("adjusted_rand_index: labelings differ in length");
    const double n = static_cast<double>(a.size());
    if (a.size() < 2) return 1.0;
    std::map<std::pair<int, int>, double> table;
    std::map<int, double> rows, cols;
    for (std::size_t i = 0; i < a.size(); ++i) {
        table[{a[i], b[i]}] += 1.0;
        rows[a[i]] += 1.0;
        cols[b[i]] += 1.0;
    }
    double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
    for (const auto& [key, count] : table) index += comb2(count);
    for (const auto& [key, count] : rows) sum_rows += comb2(count);
    for (const auto& [key, count] : cols) sum_cols += comb2(count);
    const double expected = sum_rows * sum_cols / comb2(n);
    const double max_index = 0.5 * (sum_rows + sum_cols);
    // Both partitions trivial (all-in-one or all-singletons) and identical.
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

void save_distance_matrix(const DistanceMatrix& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    detail::BinaryWriter w(out);
    w.magic("DMAT");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.n));
    for (int i = 0; i < m.n; ++i)
        for (int j = i; j < m.n; ++j) w.put<float>(static_cast<float>(m.data(i, j)));
    if (!out) throw Error("write failed for " + path.string());
}

DistanceMatrix load_distance_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    detail::BinaryReader r(in, path.string());
    r.expect_magic("DMAT");
    DistanceMatrix m;
    m.n = static_cast<int>(r.get<std::uint32_t>("header"));
    if (m.n > 1000000) throw ParseError(path.string() + ": implausible matrix size");
    m.data = Eigen::MatrixXd::Zero(m.n, m.n);
    for (int i = 0; i < m.n; ++i)
        for (int j = i; j < m.n; ++j) {
            const double v = r.get<float>("row " + std::to_string(i));
            if (!std::isfinite(v)) throw ParseError(path.string() + ": non-finite entry in row " + std::to_string(i));
            m.data(i, j) = v;
            m.data(j, i) = v;
        }
    if (!r.at_end()) throw ParseError(path.string() + ": trailing bytes");
    return m;
}

void save_labels(const ClusterLabels& labels, const std::filesystem::path& path, const std::string& comment) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "fiber_index,label\n";
    for (int i = 0; i < labels.size(); ++i) out << i << ',' << labels.labels[static_cast<std::size_t>(i)] << '\n';
}

ClusterLabels load_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    bool header = false;
    std::vector<int> labels;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != "fiber_index,label") throw ParseError(path.string() + ": expected header fiber_index,label");
            header = true;
            continue;
        }
        std::istringstream ss(line);
        int index = -1, label = -1;
        char comma = 0;
        if (!(ss >> index >> comma >> label) || comma != ',' || index != static_cast<int>(labels.size()) || label < 0)
            throw ParseError(path.string() + ": bad row at line " + std::to_string(line_no));
        labels.push_back(label);
    }
    if (!header) throw ParseError(path.string() + ": missing header");
    return make_labels(std::move(labels));
}

}  // namespace dmvfc
