#include <doctest.h>

#include <cmath>
#include <random>

#include "dmvfc/autodiff.hpp"
#include "dmvfc/encoders.hpp"
#include "dmvfc/error.hpp"
#include "dmvfc/gradcheck.hpp"
#include "dmvfc/optim.hpp"
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

double check_op(const std::function<ad::Var(const ad::Var&)>& op, const Matrix& x0) {
    ad::Var x = ad::parameter(x0);
    GradCheckOptions opt;
    return check_gradients([&] { return ad::sum(op(x)); }, {x}, {"x"}, opt).max_relative_error;
}

}  // namespace

TEST_CASE("x*x at 3 has derivative 6") {
    ad::Var x = ad::parameter(Matrix::Constant(1, 1, 3.0));
    ad::Var y = ad::mul(x, x);
    y.backward();
    CHECK(y.item() == 9.0);
    CHECK(x.grad()(0, 0) == 6.0);
}

TEST_CASE("max routes the gradient to the argmax, first index on ties") {
    Matrix v(3, 1);
    v << 1, 5, 2;
    ad::Var x = ad::parameter(v);
    ad::max_rows(x).backward();
    CHECK(x.grad()(0, 0) == 0.0);
    CHECK(x.grad()(1, 0) == 1.0);
    CHECK(x.grad()(2, 0) == 0.0);

    Matrix t(3, 1);
    t << 4, 4, 1;
    ad::Var y = ad::parameter(t);
    ad::max_rows(y).backward();
    CHECK(y.grad()(0, 0) == 1.0);
    CHECK(y.grad()(1, 0) == 0.0);
}

TEST_CASE("backward errors") {
    ad::Var x = ad::parameter(Matrix::Ones(2, 2));
    CHECK_THROWS_AS(ad::scale(x, 2.0).backward(), ShapeMismatch);
    ad::Var loss = ad::sum(ad::mul(x, x));
    loss.backward();
    CHECK_THROWS_AS(loss.backward(), Error);
}

TEST_CASE("constants receive no gradient, leaves accumulate over graphs") {
    ad::Var x = ad::parameter(Matrix::Constant(1, 1, 2.0));
    ad::Var c = ad::constant(Matrix::Constant(1, 1, 5.0));
    ad::mul(x, c).backward();
    ad::mul(x, c).backward();
    CHECK(x.grad()(0, 0) == 10.0);
    CHECK_FALSE(c.has_grad());
    x.zero_grad();
    ad::mul(x, x).backward();
    CHECK(x.grad()(0, 0) == 4.0);
}

TEST_CASE("every op matches central differences") {
    std::mt19937_64 rng(21);
    const Matrix a = random_matrix(rng, 4, 3);
    const Matrix b = random_matrix(rng, 3, 5);
    const Matrix row = random_matrix(rng, 1, 3);
    const Matrix positive = random_matrix(rng, 4, 3).cwiseAbs().array() + 0.5;
    ad::Var cb = ad::constant(b);
    ad::Var crow = ad::constant(row);
    ad::Var cother = ad::constant(random_matrix(rng, 4, 3));
    ad::Var cother2 = ad::constant(random_matrix(rng, 6, 3));
    ad::Var weights = ad::constant(random_matrix(rng, 4, 3));
    ad::Var tall = ad::constant(random_matrix(rng, 8, 3));

    CHECK(check_op([&](const ad::Var& x) { return ad::mul(ad::matmul(x, cb), ad::matmul(x, cb)); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::mul(ad::add(x, crow), weights); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::mul(ad::sub(cother, x), ad::sub(x, cother)); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::mul(ad::leaky_relu(x), weights); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::square_diff(x, cother); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::mul(ad::max_groups(x, 2), ad::constant(Matrix::Ones(2, 3))); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::mean(ad::mul(x, x)); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::mul(ad::row_sum(ad::mul(x, weights)), ad::row_sum(x)); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::mul(ad::concat_cols(x, ad::mul(x, x)), ad::constant(Matrix::Ones(4, 6))); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::mul(ad::concat_rows({x, ad::scale(x, 3.0)}), tall); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::mul(ad::gather_rows(x, {3, 0, 3, 1}), weights); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::sqrt(x); }, positive) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::log(x); }, positive) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::reciprocal(x); }, positive) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::div_rows(ad::mul(x, weights), ad::row_sum(ad::mul(x, x))); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::sq_dist(x, cother2); }, a) < 1e-6);
    CHECK(check_op([&](const ad::Var& x) { return ad::add_scalar(ad::scale(ad::mul(x, x), -0.5), 3.0); }, a) < 1e-6);
}

TEST_CASE("a random three-layer network matches central differences") {
    std::mt19937_64 rng(5);
    ad::Var w1 = ad::parameter(random_matrix(rng, 6, 8, 0.5));
    ad::Var b1 = ad::parameter(random_matrix(rng, 1, 8, 0.1));
    ad::Var w2 = ad::parameter(random_matrix(rng, 8, 8, 0.5));
    ad::Var w3 = ad::parameter(random_matrix(rng, 8, 2, 0.5));
    ad::Var x = ad::constant(random_matrix(rng, 5, 6));
    ad::Var y = ad::constant(random_matrix(rng, 5, 2));
    auto loss = [&] {
        ad::Var h = ad::leaky_relu(ad::add(ad::matmul(x, w1), b1));
        h = ad::leaky_relu(ad::matmul(h, w2));
        return ad::mean(ad::square_diff(ad::matmul(h, w3), y));
    };
    const GradCheckResult r = check_gradients(loss, {w1, b1, w2, w3}, {"w1", "b1", "w2", "w3"});
    CHECK(r.checked == 48 + 8 + 64 + 16 - r.non_smooth);
    CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("geometric encoder") {
    const EncoderWeights w = init_geometric(3);
    const Bundle b = synth_bundle(SynthConfig{.fibers = 16}, 1);
    std::vector<const Fiber*> all;
    for (const auto& r : b.records) all.push_back(&r.fiber);
    const Matrix batch = encode_geometric(w, all).value();
    CHECK(batch.rows() == 16);
    CHECK(batch.cols() == 10);
    for (int i = 0; i < 16; ++i) {
        const Matrix one = encode_geometric(w, {all[static_cast<std::size_t>(i)]}).value();
        CHECK((one - batch.row(i)).cwiseAbs().maxCoeff() < 1e-9);
    }
    CHECK(encode_geometric(w, all).value() == batch);
    const Fiber short_fiber = testing::fiber({{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}, {4, 4, 4}, {5, 5, 5}, {6, 6, 6}});
    CHECK_THROWS_AS(encode_geometric(w, {&short_fiber}), ShapeMismatch);
}

TEST_CASE("functional encoder is symmetric in the endpoints") {
    const EncoderWeights w = init_functional(4);
    std::mt19937_64 rng(2);
    const BoldPair p{testing::random_series(rng, 600), testing::random_series(rng, 600)};
    const BoldPair swapped{p.endpoint_b, p.endpoint_a};
    const Matrix a = encode_functional(w, {&p}).value();
    CHECK(a.cols() == 10);
    CHECK(a == encode_functional(w, {&swapped}).value());
    CHECK(a == encode_functional(w, {&p}).value());
    const BoldPair wrong{testing::random_series(rng, 500), testing::random_series(rng, 500)};
    CHECK_THROWS_AS(encode_functional(w, {&wrong}), ShapeMismatch);
}

TEST_CASE("seeded initialisation is reproducible") {
    for (View v : {View::Geometric, View::Functional}) {
        const EncoderWeights a = init_encoder(v, 9, v == View::Geometric ? 25 : 600);
        const EncoderWeights b = init_encoder(v, 9, v == View::Geometric ? 25 : 600);
        const EncoderWeights c = init_encoder(v, 10, v == View::Geometric ? 25 : 600);
        REQUIRE(a.params.size() == b.params.size());
        bool differs = false;
        for (std::size_t t = 0; t < a.params.size(); ++t) {
            CHECK(a.params[t].value() == b.params[t].value());
            differs = differs || a.params[t].value() != c.params[t].value();
        }
        CHECK(differs);
    }
}

TEST_CASE("weights checkpoint round trip and shape checks") {
    testing::TempDir dir("weights");
    EncoderWeights w = init_geometric(3);
    w.input_shift = Eigen::RowVector3d(1.5, -2, 3);
    w.input_scale = 0.25;
    save_weights(w, dir / "g.dmwt");
    const EncoderWeights r = load_weights(dir / "g.dmwt");
    CHECK(r.view == View::Geometric);
    CHECK(r.input_shift == w.input_shift);
    CHECK(r.input_scale == w.input_scale);
    for (std::size_t t = 0; t < w.params.size(); ++t)
        CHECK(r.params[t].value() == w.params[t].value().cast<float>().cast<double>());
    CHECK(testing::slurp(dir / "g.dmwt").substr(0, 4) == "DMWT");
    EncoderWeights f = init_functional(1);
    CHECK_THROWS_AS(load_weights_into(f, dir / "g.dmwt"), ShapeMismatch);
}

TEST_CASE("adam") {
    SUBCASE("first step with unit gradient moves by the learning rate") {
        ad::Var p = ad::parameter(Matrix::Constant(1, 1, 1.0));
        Adam adam({p}, {"p"});
        ad::sum(p).backward();
        adam.step(0.1);
        // m_hat = 1, v_hat = 1: update = 0.1 / (1 + 1e-8).
        CHECK(p.value()(0, 0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
    }
    SUBCASE("zero gradient leaves parameters unchanged") {
        ad::Var p = ad::parameter(Matrix::Constant(2, 2, 0.3));
        Adam adam({p}, {"p"});
        ad::sum(ad::scale(p, 0.0)).backward();
        adam.step(0.1);
        CHECK(p.value() == Matrix::Constant(2, 2, 0.3));
    }
    SUBCASE("equal state and gradient give equal updates") {
        ad::Var p = ad::parameter(Matrix::Constant(1, 1, 0.5));
        ad::Var q = ad::parameter(Matrix::Constant(1, 1, 0.5));
        Adam adam({p, q}, {"p", "q"});
        for (int s = 0; s < 3; ++s) {
            adam.zero_grad();
            ad::add(ad::mul(p, p), ad::mul(q, q)).backward();
            adam.step(0.01);
            CHECK(p.value() == q.value());
        }
    }
    SUBCASE("non-finite gradients are reported by name") {
        ad::Var p = ad::parameter(Matrix::Constant(1, 1, 1.0));
        ad::Var q = ad::parameter(Matrix::Constant(1, 1, 1.0));
        Adam adam({p, q}, {"p", "q"});
        ad::add(p, ad::scale(q, INFINITY)).backward();
        try {
            adam.step(0.1);
            FAIL("expected a numerical error");
        } catch (const NumericalError& e) {
            CHECK(std::string(e.what()).find("q") != std::string::npos);
        }
        CHECK(p.value()(0, 0) == 1.0);
    }
}

TEST_CASE("learning-rate schedules") {
    const LrSchedule pre = LrSchedule::pretraining();
    CHECK(lr_at_epoch(pre, 0) == doctest::Approx(3e-3));
    CHECK(lr_at_epoch(pre, 199) == doctest::Approx(3e-3));
    CHECK(lr_at_epoch(pre, 200) == doctest::Approx(3e-4));
    CHECK(lr_at_epoch(pre, 449) == doctest::Approx(3e-5));
    const LrSchedule fine = LrSchedule::finetuning();
    for (int e : {0, 1, 19, 500}) CHECK(lr_at_epoch(fine, e) == doctest::Approx(1e-5));
}

TEST_CASE("gradient suite passes on a few instances") {
    GradCheckOptions opt;
    opt.max_entries = 4;
    for (const auto& e : run_gradient_suite(3, 17, opt)) {
        INFO(e.name);
        CHECK(e.result.checked > 0);
        CHECK(e.result.max_relative_error < 1e-4);
    }
}
