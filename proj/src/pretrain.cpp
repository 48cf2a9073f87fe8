#include "dmvfc/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <unordered_map>

#include "dmvfc/error.hpp"
#include "dmvfc/metrics.hpp"
#include "dmvfc/parallel.hpp"
#include "dmvfc/random.hpp"

namespace dmvfc {

PseudoLabeler::PseudoLabeler(const Bundle& bundle, View view) : bundle_(bundle), view_(view) {
    if (bundle.size() < 2) throw ShapeMismatch("pseudo-labels need at least 2 fibers");
    if (view == View::Geometric) {
        const auto n = static_cast<std::size_t>(bundle.size());
        std::vector<double> row_max(n, 0.0);
        parallel_for(n, [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i)
                for (std::size_t j = i + 1; j < n; ++j)
                    row_max[i] = std::max(row_max[i], mdf(bundle.records[i].fiber, bundle.records[j].fiber));
        });
        max_mdf_ = *std::max_element(row_max.begin(), row_max.end());
    }
}

double PseudoLabeler::label(int i, int j) const {
    const auto& a = bundle_.records.at(static_cast<std::size_t>(i));
    const auto& b = bundle_.records.at(static_cast<std::size_t>(j));
    if (view_ == View::Functional) return functional_similarity(a.bold, b.bold);
    if (max_mdf_ <= 0.0) return 0.0;
    return std::min(1.0, mdf(a.fiber, b.fiber) / max_mdf_);
}

std::vector<PairSample> make_pairs(const PseudoLabeler& labeler, int count, std::uint64_t seed) {
    if (count < 1) throw ConfigError("make_pairs: count must be positive");
    const int n = labeler.size();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> first(0, n - 1);
    std::uniform_int_distribution<int> second(0, n - 2);
    std::vector<PairSample> pairs(static_cast<std::size_t>(count));
    for (auto& p : pairs) {
        p.i = first(rng);
        p.j = second(rng);
        if (p.j >= p.i) ++p.j;
        p.view = labeler.view();
    }
    parallel_for(pairs.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) pairs[k].s = labeler.label(pairs[k].i, pairs[k].j);
    });
    return pairs;
}

std::vector<PairSample> make_pairs(const Bundle& bundle, View view, int count, std::uint64_t seed) {
    if (bundle.size() < 2) throw ShapeMismatch("make_pairs: need at least 2 fibers");
    return make_pairs(PseudoLabeler(bundle, view), count, seed);
}

double siamese_loss(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double s) {
    if (a.size() != b.size()) throw ShapeMismatch("siamese_loss: embedding dimensions differ");
    const double d = (a - b).norm() - s;
    return d * d;
}

ad::Var siamese_loss(const ad::Var& za, const ad::Var& zb, const ad::Matrix& s) {
    if (s.rows() != za.rows() || s.cols() != 1) throw ShapeMismatch("siamese_loss: labels must be P x 1");
    const ad::Var dist = ad::sqrt(ad::row_sum(ad::square_diff(za, zb)));
    return ad::sum(ad::square_diff(dist, ad::constant(s)));
}

ad::Var pair_batch_loss(const EncoderWeights& weights, const Bundle& bundle, const std::vector<PairSample>& pairs) {
    if (pairs.empty()) throw ShapeMismatch("pair_batch_loss: empty batch");
    std::vector<int> unique;
    std::unordered_map<int, int> slot;
    auto slot_of = [&](int fiber) {
        auto [it, inserted] = slot.emplace(fiber, static_cast<int>(unique.size()));
        if (inserted) unique.push_back(fiber);
        return it->second;
    };
    std::vector<int> left, right;
    ad::Matrix s(static_cast<Eigen::Index>(pairs.size()), 1);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        left.push_back(slot_of(pairs[k].i));
        right.push_back(slot_of(pairs[k].j));
        s(static_cast<Eigen::Index>(k), 0) = pairs[k].s;
    }
    const ad::Var z = encode(weights, bundle, unique);
    return siamese_loss(ad::gather_rows(z, left), ad::gather_rows(z, right), s);
}

void validate(const PretrainConfig& c) {
    if (c.epochs < 0) throw ConfigError("pretrain: epochs must be non-negative");
    if (c.batch < 1) throw ConfigError("pretrain: batch must be positive");
    if (c.pairs_per_epoch < 0) throw ConfigError("pretrain: pairs_per_epoch must be non-negative");
    if (!(c.schedule.lr0 > 0.0) || !(c.schedule.decay > 0.0)) throw ConfigError("pretrain: learning rate must be positive");
    if (c.checkpoint_every < 0) throw ConfigError("pretrain: checkpoint interval must be non-negative");
}

EncoderWeights initial_weights(const Bundle& bundle, View view, const PretrainConfig& config) {
    validate(bundle);
    const int input = view == View::Geometric ? bundle.points_per_fiber() : bundle.bold_length();
    EncoderWeights w = init_encoder(view, derive_seed(config.seed, 0), input);
    fit_input_normalization(w, bundle);
    return w;
}

PretrainResult pretrain_view(const Bundle& bundle, View view, const PretrainConfig& config,
                             const CheckpointFn& checkpoint) {
    validate(config);
    PretrainResult result{initial_weights(bundle, view, config), {}};
    if (config.epochs == 0) return result;
    if (bundle.size() < 2) throw ShapeMismatch("pretrain: need at least 2 fibers");

    const PseudoLabeler labeler(bundle, view);
    Adam adam(result.weights.params, result.weights.names);
    const int pairs_per_epoch = config.pairs_per_epoch > 0 ? config.pairs_per_epoch : bundle.size();

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const double lr = lr_at_epoch(config.schedule, epoch - 1);
        const auto pairs = make_pairs(labeler, pairs_per_epoch, derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        double total = 0.0;
        int batch_index = 0;
        for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(config.batch), ++batch_index) {
            const auto end = std::min(pairs.size(), start + static_cast<std::size_t>(config.batch));
            const std::vector<PairSample> batch(pairs.begin() + static_cast<std::ptrdiff_t>(start),
                                                pairs.begin() + static_cast<std::ptrdiff_t>(end));
            adam.zero_grad();
            ad::Var loss = pair_batch_loss(result.weights, bundle, batch);
            if (!std::isfinite(loss.item()))
                throw NumericalError("pretrain (" + std::string(view_name(view)) + "): non-finite loss at epoch " +
                                     std::to_string(epoch) + ", batch " + std::to_string(batch_index));
            total += loss.item();
            loss.backward();
            adam.step(lr);
        }
        result.history.push_back({epoch, total / static_cast<double>(pairs.size()), lr});
        if (checkpoint && ((config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) || epoch == config.epochs))
            checkpoint(epoch, result.weights);
    }
    adam.zero_grad();
    return result;
}

void save_pretrain_history(const std::vector<PretrainEpoch>& history, const std::filesystem::path& path,
                           const std::string& comment) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "epoch,mean_loss,lr\n";
    char buf[128];
    for (const auto& h : history) {
        std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g\n", h.epoch, h.mean_loss, h.lr);
        out << buf;
    }
}

}  // namespace dmvfc
