#include <doctest.h>

#include <cmath>
#include <numeric>

#include <Eigen/Geometry>

#include "dmvfc/error.hpp"
#include "dmvfc/fiberdata.hpp"
#include "dmvfc/metrics.hpp"
#include "dmvfc/parallel.hpp"
#include "helpers.hpp"

using namespace dmvfc;

namespace {

BoldPair random_bold(std::mt19937_64& rng, int t) {
    return {testing::random_series(rng, t), testing::random_series(rng, t)};
}

Bundle bundle_of(const std::vector<Fiber>& fibers) {
    Bundle b;
    for (const auto& f : fibers) {
        FiberRecord r;
        r.fiber = f;
        b.records.push_back(r);
    }
    return b;
}

}  // namespace

TEST_CASE("mdf on simple fibers") {
    const Fiber a = testing::fiber({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
    const Fiber shifted = testing::fiber({{0, 1, 0}, {1, 1, 0}, {2, 1, 0}});
    CHECK(mdf(a, a) == 0.0);
    CHECK(mdf(a, shifted) == doctest::Approx(1.0));
    CHECK(mdf(a, a.reversed()) == 0.0);
    CHECK_THROWS_AS(mdf(a, testing::fiber({{0, 0, 0}, {1, 0, 0}})), ShapeMismatch);
}

TEST_CASE("mdf matches the two-loop reference on random pairs") {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 50; ++t) {
        const Fiber a = testing::random_fiber(rng, 25);
        const Fiber b = testing::random_fiber(rng, 25);
        CHECK(std::abs(mdf(a, b) - testing::naive_mdf(a, b)) < 1e-6);
        CHECK(mdf(a, b) == doctest::Approx(mdf(b, a)).epsilon(1e-12));
        CHECK(mdf(a, b.reversed()) == doctest::Approx(mdf(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("mdf is invariant under a shared rigid transform") {
    std::mt19937_64 rng(4);
    const Eigen::Matrix3d rot = (Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized())).toRotationMatrix();
    const Eigen::RowVector3d shift(5, -3, 12);
    for (int t = 0; t < 20; ++t) {
        const Fiber a = testing::random_fiber(rng, 25);
        const Fiber b = testing::random_fiber(rng, 25);
        auto move = [&](const Fiber& f) {
            Fiber out;
            out.points = ((f.points.cast<double>() * rot.transpose()).rowwise() + shift).cast<float>();
            return out;
        };
        CHECK(std::abs(mdf(move(a), move(b)) - mdf(a, b)) < 1e-4);
    }
}

TEST_CASE("hausdorff on simple fibers and against brute force") {
    const Fiber a = testing::fiber({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
    const Fiber b = testing::fiber({{0, 2, 0}, {1, 2, 0}, {2, 2, 0}});
    CHECK(hausdorff(a, a) == 0.0);
    CHECK(hausdorff(a, b) == doctest::Approx(2.0));
    std::mt19937_64 rng(8);
    for (int t = 0; t < 30; ++t) {
        const Fiber x = testing::random_fiber(rng, 7 + t % 5);
        const Fiber y = testing::random_fiber(rng, 9);
        CHECK(hausdorff(x, y) == doctest::Approx(testing::naive_hausdorff(x, y)).epsilon(1e-12));
        CHECK(hausdorff(x, y) == hausdorff(y, x));
    }
}

TEST_CASE("pairwise_distance") {
    SUBCASE("single fiber gives a 1x1 zero matrix") {
        std::mt19937_64 rng(1);
        const DistanceMatrix m = pairwise_distance(std::vector<Fiber>{testing::random_fiber(rng, 25)}, FiberKernel::Mdf);
        CHECK(m.n == 1);
        CHECK(m(0, 0) == 0.0);
    }
    SUBCASE("parallel and serial runs agree bitwise") {
        std::mt19937_64 rng(2);
        std::vector<Fiber> fibers;
        for (int i = 0; i < 60; ++i) fibers.push_back(testing::random_fiber(rng, 25));
        const std::size_t before = thread_count();
        set_thread_count(1);
        const DistanceMatrix serial = pairwise_distance(fibers, FiberKernel::Mdf);
        set_thread_count(4);
        const DistanceMatrix parallel = pairwise_distance(fibers, FiberKernel::Mdf);
        set_thread_count(before);
        CHECK(serial.data == parallel.data);
    }
    SUBCASE("symmetric, zero diagonal, non-negative") {
        const Bundle b = synth_bundle(SynthConfig{.fibers = 48}, 3);
        for (FiberKernel k : {FiberKernel::Mdf, FiberKernel::Hausdorff}) {
            const DistanceMatrix m = pairwise_distance(b, k);
            CHECK(m.data == m.data.transpose());
            CHECK(m.data.diagonal().isZero(0.0));
            CHECK(m.data.minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("distance matrix file round trip") {
    testing::TempDir dir("dmat");
    const Bundle b = synth_bundle(SynthConfig{.fibers = 16}, 3);
    const DistanceMatrix m = pairwise_distance(b, FiberKernel::Mdf);
    save_distance_matrix(m, dir / "m.dmat");
    const DistanceMatrix r = load_distance_matrix(dir / "m.dmat");
    CHECK(r.n == 16);
    CHECK((r.data - m.data).cwiseAbs().maxCoeff() < 1e-5);
    const std::string bytes = testing::slurp(dir / "m.dmat");
    CHECK(bytes.substr(0, 4) == "DMAT");
    CHECK(bytes.size() == 8 + 16 * 17 / 2 * 4);
}

TEST_CASE("pearson") {
    const std::vector<float> x{1, 2, 3, 4};
    CHECK(pearson(x, {5, 7, 9, 11}) == doctest::Approx(1.0));
    CHECK(pearson(x, {-1, -2, -3, -4}) == doctest::Approx(-1.0));
    // Deviations (-1.5,-.5,.5,1.5) and (-1.5,.5,-.5,1.5): covariance sum 4,
    // both variance sums 5.
    CHECK(pearson(x, {1, 3, 2, 4}) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK_THROWS_AS(pearson(x, {2, 2, 2, 2}), DegenerateInput);
}

TEST_CASE("functional_similarity") {
    std::mt19937_64 rng(12);
    const BoldPair a = random_bold(rng, 600);
    CHECK(functional_similarity(a, a) == doctest::Approx(0.0).epsilon(1e-12));
    const BoldPair swapped{a.endpoint_b, a.endpoint_a};
    CHECK(functional_similarity(a, swapped) == doctest::Approx(0.0).epsilon(1e-12));
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const BoldPair x = random_bold(rng, 600);
        const BoldPair y = random_bold(rng, 600);
        const double s = functional_similarity(x, y);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
        worst = std::max(worst, std::abs(s - 0.5));
        const BoldPair xs{x.endpoint_b, x.endpoint_a}, ys{y.endpoint_b, y.endpoint_a};
        CHECK(functional_similarity(xs, ys) == doctest::Approx(s).epsilon(1e-12));
    }
    CHECK(worst < 0.1);
}

TEST_CASE("fa_manhattan") {
    const FAProfile a{{0.1f, 0.2f, 0.3f, 0.4f}};
    FAProfile plus = a;
    for (auto& v : plus.values) v += 0.2f;
    FAProfile rev = a;
    std::reverse(rev.values.begin(), rev.values.end());
    CHECK(fa_manhattan(a, a) == 0.0);
    CHECK(fa_manhattan(a, plus) == doctest::Approx(0.2).epsilon(1e-6));
    CHECK(fa_manhattan(a, rev) == 0.0);
    CHECK_THROWS_AS(fa_manhattan(a, FAProfile{{0.1f}}), ShapeMismatch);
}

TEST_CASE("alpha_measure") {
    SUBCASE("two fibers at MDF 1") {
        const Bundle b = bundle_of({testing::fiber({{0, 0, 0}, {1, 0, 0}}), testing::fiber({{0, 1, 0}, {1, 1, 0}})});
        CHECK(alpha_measure(b, make_labels({0, 0})).mean == doctest::Approx(1.0));
    }
    SUBCASE("singletons give zero") {
        const Bundle b = bundle_of({testing::fiber({{0, 0, 0}, {1, 0, 0}}), testing::fiber({{0, 1, 0}, {1, 1, 0}})});
        CHECK(alpha_measure(b, make_labels({0, 1})).mean == 0.0);
    }
    SUBCASE("three fibers with pair distances 1, 2, 3") {
        // Collinear offsets 0, 1, 3 along y.
        const Bundle b = bundle_of({testing::fiber({{0, 0, 0}, {1, 0, 0}}), testing::fiber({{0, 1, 0}, {1, 1, 0}}),
                                    testing::fiber({{0, 3, 0}, {1, 3, 0}})});
        CHECK(alpha_measure(b, make_labels({0, 0, 0})).mean == doctest::Approx(2.0));
    }
    SUBCASE("never above the largest intra-cluster MDF and equals the off-diagonal mean for one cluster") {
        const Bundle b = synth_bundle(SynthConfig{.fibers = 40}, 9);
        const DistanceMatrix m = pairwise_distance(b, FiberKernel::Mdf);
        const AlphaResult all = alpha_measure(b, make_labels(std::vector<int>(40, 0)));
        CHECK(all.mean == doctest::Approx(m.data.sum() / (40.0 * 39.0)).epsilon(1e-12));
        const AlphaResult truth = alpha_measure(m, make_labels(b.truth_labels()));
        const auto members = make_labels(b.truth_labels()).members();
        for (std::size_t c = 0; c < members.size(); ++c) {
            double worst = 0.0;
            for (int i : members[c])
                for (int j : members[c]) worst = std::max(worst, m(i, j));
            CHECK(truth.per_cluster[c] <= worst);
        }
    }
}

TEST_CASE("intra_cluster_correlation") {
    SynthConfig c;
    c.fibers = 64;
    c.sigma_bold = 0.0;
    SUBCASE("identical BOLD within clusters gives 1") {
        const Bundle b = synth_bundle(c, 3);
        CHECK(intra_cluster_correlation(b, make_labels(b.truth_labels())).mean == doctest::Approx(1.0));
    }
    SUBCASE("grand mean is the unweighted mean of cluster scores") {
        const Bundle b = synth_bundle(SynthConfig{.fibers = 64}, 3);
        std::vector<int> labels = b.truth_labels();
        labels[0] = 8;  // singleton cluster: excluded
        const CorrelationResult r = intra_cluster_correlation(b, make_labels(labels));
        CHECK(std::isnan(r.per_cluster[8]));
        double sum = 0.0;
        for (int k = 0; k < 8; ++k) sum += r.per_cluster[static_cast<std::size_t>(k)];
        CHECK(r.mean == doctest::Approx(sum / 8).epsilon(1e-12));
        // Brute-force value for one cluster.
        const auto members = make_labels(labels).members()[1];
        double pair_sum = 0.0;
        int pairs = 0;
        for (std::size_t i = 0; i < members.size(); ++i)
            for (std::size_t j = i + 1; j < members.size(); ++j) {
                pair_sum += endpoint_correlation(b.records[static_cast<std::size_t>(members[i])].bold,
                                                 b.records[static_cast<std::size_t>(members[j])].bold);
                ++pairs;
            }
        CHECK(r.per_cluster[1] == doctest::Approx(pair_sum / pairs).epsilon(1e-12));
    }
    SUBCASE("truth labels beat random labels") {
        const Bundle b = synth_bundle(SynthConfig{.fibers = 96}, 4);
        std::mt19937_64 rng(1);
        std::vector<int> random(96);
        for (auto& l : random) l = static_cast<int>(rng() % 8);
        CHECK(intra_cluster_correlation(b, make_labels(b.truth_labels())).mean >
              intra_cluster_correlation(b, make_labels(random)).mean);
    }
    SUBCASE("all singletons is an error") {
        const Bundle b = synth_bundle(SynthConfig{.fibers = 8}, 4);
        std::vector<int> labels(8);
        std::iota(labels.begin(), labels.end(), 0);
        CHECK_THROWS_AS(intra_cluster_correlation(b, make_labels(labels)), DegenerateInput);
    }
}

TEST_CASE("quickbundles") {
    SUBCASE("huge threshold gives one cluster") {
        const Bundle b = synth_bundle(SynthConfig{.fibers = 40}, 2);
        CHECK(quickbundles(b, 1000.0).k == 1);
    }
    SUBCASE("single fiber") {
        const Bundle b = synth_bundle(SynthConfig{.groups = 1, .subgroups = 1, .fibers = 1}, 2);
        CHECK(quickbundles(b, 2.0).k == 1);
    }
    SUBCASE("two groups 10 mm apart at 2 mm") {
        SynthConfig c;
        c.groups = 2;
        c.subgroups = 1;
        c.fibers = 100;
        c.shuffle = true;
        const Bundle b = synth_bundle(c, 6);
        const ClusterLabels l = quickbundles(b, 2.0);
        CHECK(l.k == 2);
        CHECK(adjusted_rand_index(l.labels, b.truth_labels()) == 1.0);
    }
    SUBCASE("cluster count never grows with the threshold") {
        const Bundle b = synth_bundle(SynthConfig{.fibers = 120, .sigma_geo = 1.0}, 5);
        int previous = b.size() + 1;
        for (double t : {0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 40.0}) {
            const int k = quickbundles(b, t).k;
            CHECK(k <= previous);
            previous = k;
        }
    }
}

TEST_CASE("adjusted_rand_index") {
    const std::vector<int> a{0, 0, 0, 1, 1, 1, 2, 2};
    const std::vector<int> b{0, 0, 1, 1, 1, 2, 2, 2};
    CHECK(adjusted_rand_index(a, a) == 1.0);
    CHECK(adjusted_rand_index(a, {5, 5, 5, 9, 9, 9, 7, 7}) == 1.0);
    // Contingency pairs 3, row pairs 7, column pairs 7, total pairs 28:
    // (3 - 49/28) / (7 - 49/28) = 1.25 / 5.25.
    CHECK(adjusted_rand_index(a, b) == doctest::Approx(1.25 / 5.25).epsilon(1e-12));
}

TEST_CASE("labels CSV round trip") {
    testing::TempDir dir("labels");
    const ClusterLabels l = make_labels({2, 0, 1, 1, 2});
    save_labels(l, dir / "l.csv", "made by a test");
    const std::string text = testing::slurp(dir / "l.csv");
    CHECK(text.rfind("# made by a test\nfiber_index,label\n0,2\n", 0) == 0);
    const ClusterLabels r = load_labels(dir / "l.csv");
    CHECK(r.labels == l.labels);
    CHECK(r.k == 3);
}
