#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "dmvfc/error.hpp"
#include "dmvfc/finetune.hpp"
#include "dmvfc/metrics.hpp"
#include "dmvfc/pretrain.hpp"
#include "helpers.hpp"

using namespace dmvfc;
using ad::Matrix;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = normal(rng);
    return m;
}

Matrix random_stochastic(std::mt19937_64& rng, int r, int c) {
    std::uniform_real_distribution<double> u(0.01, 1.0);
    Matrix m(r, c);
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) m(i, j) = u(rng);
        m.row(i) /= m.row(i).sum();
    }
    return m;
}

}  // namespace

TEST_CASE("soft_assign values") {
    Matrix z(1, 2), mu(2, 2);
    z << 0, 0;
    mu << 0, 0, 1, 0;
    const Matrix q = soft_assign(z, mu);
    CHECK(q(0, 0) == doctest::Approx(2.0 / 3.0));
    CHECK(q(0, 1) == doctest::Approx(1.0 / 3.0));

    Matrix sym(2, 2);
    sym << 1, 0, -1, 0;
    const Matrix half = soft_assign(z, sym);
    CHECK(half(0, 0) == 0.5);
    CHECK(half(0, 1) == 0.5);

    std::mt19937_64 rng(1);
    const Matrix one = soft_assign(random_matrix(rng, 5, 10), random_matrix(rng, 1, 10));
    CHECK(one == Matrix::Ones(5, 1));

    const Matrix zz = random_matrix(rng, 7, 10), cc = random_matrix(rng, 3, 10);
    const Matrix via_var = soft_assign(ad::constant(zz), ad::constant(cc)).value();
    CHECK((via_var - soft_assign(zz, cc)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("target_distribution values") {
    Matrix q(2, 2);
    q << 0.8, 0.2, 0.6, 0.4;
    const Matrix p = target_distribution(q);
    // Column masses 1.4 and 0.6; row 1: (0.64/1.4, 0.04/0.6), row 2:
    // (0.36/1.4, 0.16/0.6), each renormalised.
    CHECK(p(0, 0) == doctest::Approx(0.8727272727).epsilon(1e-9));
    CHECK(p(0, 1) == doctest::Approx(0.1272727273).epsilon(1e-9));
    CHECK(p(1, 0) == doctest::Approx(0.4909090909).epsilon(1e-9));
    CHECK(p(1, 1) == doctest::Approx(0.5090909091).epsilon(1e-9));

    Matrix onehot(4, 2);
    onehot << 1, 0, 0, 1, 1, 0, 0, 1;
    CHECK(target_distribution(onehot) == onehot);
    CHECK(target_distribution(target_distribution(onehot)) == onehot);
    const Matrix uniform = Matrix::Constant(5, 4, 0.25);
    CHECK((target_distribution(uniform) - uniform).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("kl_loss values") {
    Matrix p(1, 2), q(1, 2);
    p << 1, 0;
    q << 0.5, 0.5;
    CHECK(kl_loss(p, q) == doctest::Approx(std::log(2.0)));
    CHECK(kl_loss(q, q) == 0.0);
    CHECK(kl_loss(p, ad::constant(q)).item() == doctest::Approx(std::log(2.0)));
    CHECK_THROWS_AS(kl_loss(p, Matrix::Constant(2, 2, 0.5)), ShapeMismatch);
}

TEST_CASE("distribution invariants over random inputs") {
    std::mt19937_64 rng(99);
    for (int t = 0; t < 200; ++t) {
        const int n = 1 + static_cast<int>(rng() % 20), k = 1 + static_cast<int>(rng() % 8);
        const Matrix q = soft_assign(random_matrix(rng, n, 10, 2.0), random_matrix(rng, k, 10, 2.0));
        CHECK((q.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-9);
        CHECK(q.minCoeff() > 0.0);
        const Matrix p = target_distribution(q);
        CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-9);
        CHECK(kl_loss(p, q) >= -1e-12);
        CHECK(std::abs(kl_loss(q, q)) < 1e-12);
        const Matrix r = random_stochastic(rng, n, k);
        CHECK(kl_loss(r, q) >= -1e-12);
    }
}

TEST_CASE("kmeans") {
    SUBCASE("K = N puts every point in its own cluster") {
        std::mt19937_64 rng(2);
        const Matrix x = random_matrix(rng, 9, 10);
        const ClusterModel m = init_centroids(x, Matrix(), 9, 1);
        std::vector<int> idx = m.centroid_fiber_indices;
        std::sort(idx.begin(), idx.end());
        std::vector<int> expect(9);
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(idx == expect);
    }
    SUBCASE("two blobs get one centroid fiber each") {
        std::mt19937_64 rng(3);
        Matrix x = random_matrix(rng, 40, 10, 0.1);
        x.topRows(20).array() += 5.0;
        const ClusterModel m = init_centroids(x, Matrix(), 2, 4);
        const std::set<bool> sides{m.centroid_fiber_indices[0] < 20, m.centroid_fiber_indices[1] < 20};
        CHECK(sides.size() == 2);
        for (int c = 0; c < 2; ++c) {
            // The centroid fiber's nearest mean is its own cluster's.
            const auto row = x.row(m.centroid_fiber_indices[static_cast<std::size_t>(c)]);
            CHECK((row - m.centroids_geo.row(c)).norm() < (row - m.centroids_geo.row(1 - c)).norm());
        }
    }
    SUBCASE("K > N is an error") {
        std::mt19937_64 rng(2);
        CHECK_THROWS_AS(init_centroids(random_matrix(rng, 3, 10), Matrix(), 4, 1), Error);
    }
    SUBCASE("clusters never end empty") {
        std::mt19937_64 rng(5);
        Matrix x = random_matrix(rng, 30, 10, 0.01);
        x.row(0).array() += 100.0;
        const KMeansResult r = kmeans(x, 6, 2);
        std::vector<int> count(6, 0);
        for (int l : r.labels) ++count[static_cast<std::size_t>(l)];
        for (int c : count) CHECK(c > 0);
    }
}

TEST_CASE("cross-view and independent initialisation") {
    std::mt19937_64 rng(6);
    const Matrix geo = random_matrix(rng, 50, 10), func = random_matrix(rng, 50, 10);
    const ClusterModel cross = init_centroids(geo, func, 4, 3, InitMode::CrossView);
    for (int c = 0; c < 4; ++c)
        CHECK(cross.centroids_func.row(c) == func.row(cross.centroid_fiber_indices[static_cast<std::size_t>(c)]));
    const ClusterModel same = init_centroids(geo, geo, 4, 3, InitMode::Independent);
    CHECK(same.centroids_geo == same.centroids_func);
}

TEST_CASE("alternation schedule") {
    CHECK(guide_view(1, true) == View::Geometric);
    CHECK(guide_view(2, true) == View::Functional);
    CHECK(guide_view(3, true) == View::Geometric);
    CHECK(guide_view(2, false) == View::Geometric);
}

TEST_CASE("model file round trip") {
    testing::TempDir dir("model");
    std::mt19937_64 rng(7);
    ClusterModel m;
    m.k = 3;
    m.centroids_geo = random_matrix(rng, 3, 10).cast<float>().cast<double>();
    m.centroids_func = random_matrix(rng, 3, 10).cast<float>().cast<double>();
    m.centroid_fiber_indices = {4, 0, 9};
    save_model(m, dir / "m.dmcm");
    ClusterModel r = load_model(dir / "m.dmcm");
    CHECK(r.k == 3);
    CHECK(r.centroids_geo == m.centroids_geo);
    CHECK(r.centroids_func == m.centroids_func);
    CHECK(r.centroid_fiber_indices == m.centroid_fiber_indices);
    CHECK(r.fa_reference.empty());
    m.fa_reference.assign(3, FAProfile{std::vector<float>(25, 0.5f)});
    m.centroids_func.resize(0, 0);
    save_model(m, dir / "n.dmcm");
    r = load_model(dir / "n.dmcm");
    CHECK_FALSE(r.has_functional());
    CHECK(r.fa_reference.size() == 3);
    CHECK(testing::slurp(dir / "n.dmcm").substr(0, 4) == "DMCM");
}

TEST_CASE("finetune edge cases and history") {
    const Bundle b = synth_bundle(SynthConfig{.fibers = 48}, 3);
    PretrainConfig pc;
    pc.epochs = 2;
    pc.batch = 16;
    const EncoderWeights geo = pretrain_view(b, View::Geometric, pc).weights;
    const EncoderWeights func = pretrain_view(b, View::Functional, pc).weights;
    const ClusterModel init = init_centroids(embed_bundle(geo, b), embed_bundle(func, b), 8, 1);

    SUBCASE("zero epochs leave the model unchanged") {
        FinetuneConfig fc;
        fc.epochs = 0;
        const FinetuneResult r = finetune(b, geo, func, init, fc);
        CHECK(r.model.centroids_geo == init.centroids_geo);
        CHECK(r.model.centroids_func == init.centroids_func);
        CHECK(r.history.empty());
    }
    SUBCASE("history alternates the guide and the run is reproducible") {
        FinetuneConfig fc;
        fc.epochs = 4;
        fc.batch = 16;
        fc.lr = 1e-4;
        int observed = 0;
        const FinetuneResult r = finetune(b, geo, func, init, fc, [&](const FinetuneEpoch& e, const FinetuneResult& s) {
            ++observed;
            CHECK(static_cast<int>(s.history.size()) == e.epoch);
        });
        CHECK(observed == 4);
        for (const auto& e : r.history) {
            CHECK(e.guide == guide_view(e.epoch, true));
            CHECK(e.lc_geo >= 0.0);
            CHECK(e.lc_func >= 0.0);
        }
        CHECK(r.model.centroids_geo != init.centroids_geo);
        const FinetuneResult again = finetune(b, geo, func, init, fc);
        CHECK(again.model.centroids_geo == r.model.centroids_geo);
        CHECK(again.history.back().ls_func == r.history.back().ls_func);

        testing::TempDir dir("fth");
        save_finetune_history(r.history, dir / "h.csv");
        const std::string text = testing::slurp(dir / "h.csv");
        CHECK(text.rfind("epoch,ls_geo,ls_func,lc_geo,lc_func,guide_view\n1,", 0) == 0);
        CHECK(text.find(",geo\n2,") != std::string::npos);
        CHECK(text.find(",func\n") != std::string::npos);
    }
    SUBCASE("gamma 0 leaves centroids alone") {
        FinetuneConfig fc;
        fc.epochs = 2;
        fc.gamma = 0.0;
        fc.lr = 1e-3;
        const FinetuneResult r = finetune(b, geo, func, init, fc);
        CHECK(r.model.centroids_geo == init.centroids_geo);
        CHECK(r.model.centroids_func == init.centroids_func);
        CHECK(r.geo.params[0].value() != geo.params[0].value());
    }
    SUBCASE("geometry-only run needs no functional weights") {
        FinetuneConfig fc;
        fc.epochs = 2;
        fc.use_functional = false;
        fc.gamma = 0.0;
        const ClusterModel g = init_centroids(embed_bundle(geo, b), Matrix(), 8, 1);
        const FinetuneResult r = finetune(b, geo, EncoderWeights{}, g, fc);
        CHECK_FALSE(r.model.has_functional());
        for (const auto& e : r.history) CHECK(e.guide == View::Geometric);
    }
}

TEST_CASE("functionally guided epochs pull the geometric assignment toward the functional target") {
    SynthConfig sc;
    sc.fibers = 160;
    sc.subgroup_offset = 3.0;
    const Bundle b = synth_bundle(sc, 12);
    PretrainConfig pc;
    pc.epochs = 20;
    pc.batch = 64;
    pc.checkpoint_every = 0;
    const EncoderWeights geo = pretrain_view(b, View::Geometric, pc).weights;
    pc.pairs_per_epoch = 1600;
    const EncoderWeights func = pretrain_view(b, View::Functional, pc).weights;
    const ClusterModel init = init_centroids(embed_bundle(geo, b), embed_bundle(func, b), 8, 1);
    FinetuneConfig fc;
    fc.epochs = 20;
    fc.batch = 16;
    fc.lr = 1e-4;
    const FinetuneResult r = finetune(b, geo, func, init, fc);
    REQUIRE(r.history[1].guide == View::Functional);
    MESSAGE("geometric L_c under functional guide: epoch 2 " << r.history[1].lc_geo << ", epoch 20 " << r.history[19].lc_geo);
    CHECK(r.history[19].lc_geo < r.history[1].lc_geo);
}
