#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "dmvfc/encoders.hpp"
#include "dmvfc/fiberdata.hpp"
#include "dmvfc/optim.hpp"

namespace dmvfc {

struct PairSample {
    int i = 0;
    int j = 0;
    View view = View::Geometric;
    double s = 0.0;  // pseudo-label distance in [0, 1]
};

// Computes per-view pseudo-labels for fiber pairs of one bundle. The
// geometric label is MDF divided by the bundle's largest pairwise MDF; the
// functional label is functional_similarity.
class PseudoLabeler {
public:
    PseudoLabeler(const Bundle& bundle, View view);

    double label(int i, int j) const;
    double max_mdf() const { return max_mdf_; }
    View view() const { return view_; }
    int size() const { return bundle_.size(); }
    const Bundle& bundle() const { return bundle_; }

private:
    const Bundle& bundle_;
    View view_;
    double max_mdf_ = 0.0;
};

// `count` uniformly random unordered pairs with i != j, labelled in parallel.
std::vector<PairSample> make_pairs(const PseudoLabeler& labeler, int count, std::uint64_t seed);
std::vector<PairSample> make_pairs(const Bundle& bundle, View view, int count, std::uint64_t seed);

// (||a - b|| - s)^2 for one pair of embeddings.
double siamese_loss(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double s);

// Sum over rows of (||za_r - zb_r|| - s_r)^2; za, zb are P x D, s is P x 1.
ad::Var siamese_loss(const ad::Var& za, const ad::Var& zb, const ad::Matrix& s);

// Embeds the distinct fibers of `pairs` once and returns the summed loss.
ad::Var pair_batch_loss(const EncoderWeights& weights, const Bundle& bundle, const std::vector<PairSample>& pairs);

struct PretrainConfig {
    int epochs = 450;
    LrSchedule schedule = LrSchedule::pretraining();
    int batch = 1024;
    int pairs_per_epoch = 0;  // 0 means one pair per fiber
    std::uint64_t seed = 1;
    int checkpoint_every = 50;
};

void validate(const PretrainConfig& config);

struct PretrainEpoch {
    int epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double lr = 0.0;
};

struct PretrainResult {
    EncoderWeights weights;
    std::vector<PretrainEpoch> history;
};

// Called every `checkpoint_every` epochs and after the final epoch.
using CheckpointFn = std::function<void(int epoch, const EncoderWeights&)>;

// Fresh weights for `view`, seeded from config.seed, with input
// normalisation fitted to `bundle`.
EncoderWeights initial_weights(const Bundle& bundle, View view, const PretrainConfig& config);

PretrainResult pretrain_view(const Bundle& bundle, View view, const PretrainConfig& config,
                             const CheckpointFn& checkpoint = {});

// CSV `epoch,mean_loss,lr`.
void save_pretrain_history(const std::vector<PretrainEpoch>& history, const std::filesystem::path& path,
                           const std::string& comment = {});

}  // namespace dmvfc
