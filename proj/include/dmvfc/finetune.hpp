#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dmvfc/autodiff.hpp"
#include "dmvfc/encoders.hpp"
#include "dmvfc/fiberdata.hpp"

namespace dmvfc {

// Per-view cluster centroids in embedding space.
struct ClusterModel {
    int k = 0;
    ad::Matrix centroids_geo;   // k x 10
    ad::Matrix centroids_func;  // k x 10, empty in geometry-only runs
    std::vector<int> centroid_fiber_indices;
    std::vector<FAProfile> fa_reference;  // filled by inference, may be empty

    bool has_functional() const { return centroids_func.rows() == k && k > 0; }
};

struct KMeansResult {
    ad::Matrix means;
    std::vector<int> labels;
    int iterations = 0;
};

// Lloyd's algorithm from k-means++ seeding. An emptied cluster is re-seeded
// with the point farthest from its current centre.
KMeansResult kmeans(const ad::Matrix& data, int k, std::uint64_t seed, int max_iterations = 50, double tol = 1e-6);

enum class InitMode {
    CrossView,    // functional centroids taken at the geometric centroid fibers
    Independent,  // separate k-means per view
};

// func may be empty (0 rows) for geometry-only runs.
ClusterModel init_centroids(const ad::Matrix& geo, const ad::Matrix& func, int k, std::uint64_t seed,
                            InitMode mode = InitMode::CrossView);

// Student-t soft assignment, q_ij proportional to 1 / (1 + ||z_i - mu_j||^2).
ad::Matrix soft_assign(const ad::Matrix& z, const ad::Matrix& centroids);
// Same kernel from precomputed squared distances (N x K).
ad::Matrix soft_assign_sq(const ad::Matrix& sq_distances);
ad::Var soft_assign(const ad::Var& z, const ad::Var& centroids);

// Sharpened target p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j'), f_j = sum_i q_ij.
ad::Matrix target_distribution(const ad::Matrix& q);

// KL(P || Q) summed over all entries, with 0 log 0 = 0.
double kl_loss(const ad::Matrix& p, const ad::Matrix& q);
ad::Var kl_loss(const ad::Matrix& p, const ad::Var& q);

std::vector<int> argmax_rows(const ad::Matrix& q);

struct FinetuneConfig {
    int epochs = 20;
    double lr = 1e-5;
    double gamma = 0.1;
    int batch = 1024;         // fibers per optimizer step
    int pairs_per_epoch = 0;  // 0 means one pair per fiber
    std::uint64_t seed = 2;
    bool use_functional = true;
};

void validate(const FinetuneConfig& config);

struct FinetuneEpoch {
    int epoch = 0;  // 1-based; odd epochs are guided by the geometric view
    double ls_geo = 0.0;
    double ls_func = 0.0;
    double lc_geo = 0.0;
    double lc_func = 0.0;
    View guide = View::Geometric;
};

struct FinetuneResult {
    EncoderWeights geo;
    EncoderWeights func;
    ClusterModel model;
    std::vector<FinetuneEpoch> history;
};

View guide_view(int epoch, bool use_functional);

// Loss of one view for a fiber batch: L_s over `pairs` (indices into
// `fibers`) plus gamma * KL(P || Q) on the batch rows. Exposed for gradient
// checks; `centroids` must be a parameter to receive gradients.
struct ViewLoss {
    ad::Var total;
    double siamese = 0.0;
    double cluster = 0.0;
};
ViewLoss finetune_view_loss(const EncoderWeights& weights, const ad::Var& centroids, const Bundle& bundle,
                            const std::vector<int>& fibers, const std::vector<std::pair<int, int>>& pairs,
                            const std::vector<double>& pair_labels, const ad::Matrix& target_rows, double gamma);

// Called after every epoch with the state so far (weights, current centroids,
// history up to and including `epoch`).
using FinetuneObserver = std::function<void(const FinetuneEpoch& epoch, const FinetuneResult& state)>;

FinetuneResult finetune(const Bundle& bundle, const EncoderWeights& geo, const EncoderWeights& func,
                        const ClusterModel& model, const FinetuneConfig& config,
                        const FinetuneObserver& observer = {});

// "DMCM": u32 K, u32 dim, u8 has_functional, K x dim float32 geometric
// centroids, [K x dim float32 functional centroids], K i32 centroid fiber
// indices, u8 has_fa, [u32 n_p, K x n_p float32 FA reference profiles].
void save_model(const ClusterModel& model, const std::filesystem::path& path);
ClusterModel load_model(const std::filesystem::path& path);

// CSV `epoch,ls_geo,ls_func,lc_geo,lc_func,guide_view`.
void save_finetune_history(const std::vector<FinetuneEpoch>& history, const std::filesystem::path& path,
                           const std::string& comment = {});

}  // namespace dmvfc
