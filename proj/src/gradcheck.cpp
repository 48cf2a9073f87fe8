#include "dmvfc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dmvfc/encoders.hpp"
#include "dmvfc/error.hpp"
#include "dmvfc/fiberdata.hpp"
#include "dmvfc/finetune.hpp"
#include "dmvfc/pretrain.hpp"
#include "dmvfc/random.hpp"

namespace dmvfc {

GradCheckResult check_gradients(const std::function<ad::Var()>& loss, const std::vector<ad::Var>& params,
                                const std::vector<std::string>& names, const GradCheckOptions& options) {
    if (names.size() != params.size()) throw ShapeMismatch("check_gradients: one name per parameter required");
    if (!(options.step > 0.0)) throw ConfigError("check_gradients: step must be positive");

    std::vector<ad::Var> ps = params;
    for (auto& p : ps) p.zero_grad();
    ad::BranchRecorder recorder;
    ad::Var base = loss();
    const std::uint64_t base_signature = recorder.signature();
    const double floor = options.floor * std::max(1.0, std::abs(base.item()));
    base.backward();
    std::vector<ad::Matrix> analytic;
    for (auto& p : ps) analytic.push_back(p.has_grad() ? p.grad() : ad::Matrix::Zero(p.rows(), p.cols()));
    for (auto& p : ps) p.zero_grad();

    // f(x + delta), with its branch signature.
    auto eval = [&](ad::Var& p, Eigen::Index idx, double delta, bool& same_branch) {
        double& x = p.mutable_value().data()[idx];
        const double saved = x;
        x = saved + delta;
        recorder.reset();
        const double value = loss().item();
        same_branch = same_branch && recorder.signature() == base_signature;
        x = saved;
        return value;
    };

    GradCheckResult out;
    std::mt19937_64 rng(options.seed);
    for (std::size_t k = 0; k < ps.size(); ++k) {
        const auto size = ps[k].value().size();
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(size));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        if (options.max_entries > 0 && size > options.max_entries) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(static_cast<std::size_t>(options.max_entries));
            std::sort(idx.begin(), idx.end());
        }
        for (Eigen::Index i : idx) {
            bool smooth = true;
            const double up = eval(ps[k], i, options.step, smooth);
            const double down = eval(ps[k], i, -options.step, smooth);
            if (!smooth) {
                ++out.non_smooth;
                continue;
            }
            const double a = analytic[k].data()[i];
            const double n = (up - down) / (2.0 * options.step);
            const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
            ++out.checked;
            if (err > out.max_relative_error || out.worst.empty()) {
                out.max_relative_error = err;
                out.worst = names[k] + "[" + std::to_string(i) + "]";
                out.worst_analytic = a;
                out.worst_numeric = n;
            }
        }
    }
    return out;
}

namespace {

constexpr int kSuiteFibers = 4;
constexpr int kSuiteClusters = 3;

Bundle random_bundle(std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Bundle b;
    b.name = "gradcheck";
    for (int f = 0; f < kSuiteFibers; ++f) {
        FiberRecord r;
        r.fiber.points.resize(kDefaultPointsPerFiber, 3);
        for (Eigen::Index k = 0; k < r.fiber.points.size(); ++k) r.fiber.points.data()[k] = static_cast<float>(10.0 * normal(rng));
        r.bold.endpoint_a.resize(kDefaultBoldLength);
        r.bold.endpoint_b.resize(kDefaultBoldLength);
        for (auto& v : r.bold.endpoint_a) v = static_cast<float>(normal(rng));
        for (auto& v : r.bold.endpoint_b) v = static_cast<float>(normal(rng));
        r.fa.values.resize(kDefaultPointsPerFiber);
        for (auto& v : r.fa.values) v = static_cast<float>(unit(rng));
        b.records.push_back(std::move(r));
    }
    return b;
}

// Fresh weights with every tensor, biases included, nudged off zero so no
// rectifier or max starts at an exact tie.
EncoderWeights random_weights(View view, const Bundle& bundle, std::mt19937_64& rng) {
    const int input = view == View::Geometric ? bundle.points_per_fiber() : bundle.bold_length();
    EncoderWeights w = init_encoder(view, rng(), input);
    fit_input_normalization(w, bundle);
    std::uniform_real_distribution<double> nudge(-0.1, 0.1);
    for (auto& p : w.params)
        for (Eigen::Index i = 0; i < p.value().size(); ++i) p.mutable_value().data()[i] += nudge(rng);
    return w;
}

void merge(GradCheckResult& into, const GradCheckResult& r, int instance) {
    if (r.max_relative_error > into.max_relative_error || into.worst.empty()) {
        into.max_relative_error = r.max_relative_error;
        into.worst = "instance " + std::to_string(instance) + " " + r.worst;
        into.worst_analytic = r.worst_analytic;
        into.worst_numeric = r.worst_numeric;
    }
    into.checked += r.checked;
    into.non_smooth += r.non_smooth;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(int instances, std::uint64_t seed, const GradCheckOptions& options) {
    if (instances < 1) throw ConfigError("gradient suite: instances must be positive");
    std::vector<GradSuiteEntry> out{{"geo/siamese", {}}, {"func/siamese", {}}, {"geo/finetune", {}}, {"func/finetune", {}}};
    for (int inst = 0; inst < instances; ++inst) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(inst)));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const Bundle bundle = random_bundle(rng);

        std::vector<PairSample> pairs;
        std::vector<std::pair<int, int>> local_pairs;
        std::vector<double> labels;
        for (int a = 0; a < kSuiteFibers; ++a)
            for (int b = a + 1; b < kSuiteFibers; b += 2) {
                const double s = unit(rng);
                pairs.push_back({a, b, View::Geometric, s});
                local_pairs.emplace_back(a, b);
                labels.push_back(s);
            }
        std::vector<int> fibers(kSuiteFibers);
        std::iota(fibers.begin(), fibers.end(), 0);

        std::size_t slot = 0;
        for (View view : {View::Geometric, View::Functional}) {
            EncoderWeights w = random_weights(view, bundle, rng);
            GradCheckOptions opt = options;
            opt.seed = rng();
            const auto r1 = check_gradients([&] { return pair_batch_loss(w, bundle, pairs); }, w.params, w.names, opt);
            merge(out[slot].result, r1, inst);

            // Centroids near the embeddings keep the Student-t kernel in its
            // informative range.
            const ad::Matrix z = encode(w, bundle, fibers).value();
            ad::Matrix mu(kSuiteClusters, z.cols());
            std::normal_distribution<double> jitter(0.0, 0.1);
            for (int c = 0; c < kSuiteClusters; ++c)
                for (Eigen::Index d = 0; d < z.cols(); ++d) mu(c, d) = z(c, d) + jitter(rng);
            ad::Matrix raw_q(kSuiteFibers, kSuiteClusters);
            for (Eigen::Index i = 0; i < raw_q.size(); ++i) raw_q.data()[i] = 0.05 + unit(rng);
            raw_q.array().colwise() /= raw_q.rowwise().sum().array();
            const ad::Matrix target = target_distribution(raw_q);
            ad::Var centroids = ad::parameter(mu);
            auto params = w.params;
            auto names = w.names;
            params.push_back(centroids);
            names.push_back("centroids");
            const auto r2 = check_gradients(
                [&] { return finetune_view_loss(w, centroids, bundle, fibers, local_pairs, labels, target, 0.1).total; },
                params, names, opt);
            merge(out[slot + 2].result, r2, inst);
            ++slot;
        }
    }
    return out;
}

}  // namespace dmvfc
