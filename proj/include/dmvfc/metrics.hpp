#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "dmvfc/fiberdata.hpp"

namespace dmvfc {

// Symmetric n x n matrix with zero diagonal.
struct DistanceMatrix {
    int n = 0;
    Eigen::MatrixXd data;

    double operator()(int i, int j) const { return data(i, j); }
};

struct ClusterLabels {
    std::vector<int> labels;
    int k = 0;

    int size() const { return static_cast<int>(labels.size()); }
    // Members of each cluster, in record order.
    std::vector<std::vector<int>> members() const;
};

// Builds labels with k = max label + 1. Throws on negative labels.
ClusterLabels make_labels(std::vector<int> labels);

enum class FiberKernel { Mdf, Hausdorff };

// Minimum average direct-flip distance between equal-length fibers.
double mdf(const Fiber& a, const Fiber& b);

// True when the reversed pairing of b is strictly closer to a than the direct one.
bool mdf_prefers_flip(const Fiber& a, const Fiber& b);

double hausdorff(const Fiber& a, const Fiber& b);

// Sample Pearson correlation; throws DegenerateInput on zero variance.
double pearson(const std::vector<float>& x, const std::vector<float>& y);

// Max over direct and swapped endpoint pairings of the mean endpoint
// correlation.
double endpoint_correlation(const BoldPair& a, const BoldPair& b);

// Pseudo-label distance (1 - c) / 2 in [0, 1] from endpoint_correlation.
double functional_similarity(const BoldPair& a, const BoldPair& b);

// Mean absolute FA difference, minimised over the two fiber orientations.
double fa_manhattan(const FAProfile& a, const FAProfile& b);

DistanceMatrix pairwise_distance(const Bundle& bundle, FiberKernel kernel);
DistanceMatrix pairwise_distance(const std::vector<Fiber>& fibers, FiberKernel kernel);

struct AlphaResult {
    std::vector<double> per_cluster;  // 0 for singleton and empty clusters
    double mean = 0.0;                // over non-empty clusters
};

AlphaResult alpha_measure(const Bundle& bundle, const ClusterLabels& labels);
// Variant reusing a precomputed MDF matrix.
AlphaResult alpha_measure(const DistanceMatrix& mdf_matrix, const ClusterLabels& labels);

struct CorrelationResult {
    std::vector<double> per_cluster;  // NaN where the cluster has fewer than 2 members
    double mean = 0.0;
};

CorrelationResult intra_cluster_correlation(const Bundle& bundle, const ClusterLabels& labels);

ClusterLabels quickbundles(const Bundle& bundle, double threshold);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

// "DMAT" binary: u32 n, then the row-major upper triangle (with diagonal) as float32.
void save_distance_matrix(const DistanceMatrix& m, const std::filesystem::path& path);
DistanceMatrix load_distance_matrix(const std::filesystem::path& path);

// CSV with header `fiber_index,label`; lines starting with '#' are comments.
void save_labels(const ClusterLabels& labels, const std::filesystem::path& path, const std::string& comment = {});
ClusterLabels load_labels(const std::filesystem::path& path);

}  // namespace dmvfc
