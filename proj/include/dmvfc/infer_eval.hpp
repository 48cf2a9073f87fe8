#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dmvfc/autodiff.hpp"
#include "dmvfc/encoders.hpp"
#include "dmvfc/fiberdata.hpp"
#include "dmvfc/finetune.hpp"
#include "dmvfc/metrics.hpp"

namespace dmvfc {

struct InferenceConfig {
    double fa_weight = 30.0;
    // Off: take FA references stored in the model instead of building them
    // from provisional clusters of the inference bundle.
    bool two_pass = true;
};

void validate(const InferenceConfig& config);

struct InferenceResult {
    ClusterLabels labels;
    ad::Matrix q;                      // final soft assignment, N x K
    ad::Matrix embeddings;             // geometric embeddings, N x 10
    std::vector<int> provisional;      // pass-1 geometric argmax
    std::vector<int> centroid_fibers;  // fiber of this bundle nearest each centroid
    std::vector<FAProfile> fa_reference;
};

// Per-cluster mean FA, each member flip-aligned to the cluster's centroid
// fiber. Empty clusters take the centroid fiber's own profile.
std::vector<FAProfile> fa_references(const Bundle& bundle, const std::vector<int>& labels, int k,
                                     const std::vector<int>& centroid_fibers);

// Index of the fiber whose embedding lies nearest each centroid.
std::vector<int> nearest_fibers(const ad::Matrix& embeddings, const ad::Matrix& centroids);

InferenceResult infer(const Bundle& bundle, const EncoderWeights& geo, const ClusterModel& model,
                      const InferenceConfig& config = {});

// Member with the largest summed endpoint correlation to the other members.
int representative_pathway(const Bundle& bundle, const ClusterLabels& labels, int cluster);

struct ConsistencyRow {
    int cluster = 0;
    int subject_a = 0;
    int subject_b = 0;
    double pathway_hausdorff = 0.0;
};

struct ConsistencyReport {
    std::vector<ConsistencyRow> rows;
    std::vector<int> skipped_clusters;  // absent in at least one subject
    double mean_pathway = 0.0;
    double mean_intra_cluster = 0.0;
    double mean_bundle = 0.0;
};

ConsistencyReport consistency_report(const std::vector<Bundle>& subjects, const std::vector<ClusterLabels>& labels);

// CSV `cluster_id,subj_a,subj_b,pathway_hausdorff`, then three summary rows
// keyed mean_pathway, mean_intra_cluster and mean_bundle.
void save_consistency_report(const ConsistencyReport& report, const std::filesystem::path& path,
                             const std::string& comment = {});

struct EvalReport {
    CorrelationResult corr;
    AlphaResult alpha;
    std::optional<double> ari;
    int n_clusters_nonempty = 0;
};

EvalReport evaluate(const Bundle& bundle, const ClusterLabels& labels);
std::string to_json(const EvalReport& report);

}  // namespace dmvfc
