#include <wlnn/finite_width.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace wlnn;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

FiniteWidthState one_by_one(double u, double w, double v, double z) {
    FiniteWidthState st;
    st.m = 1;
    st.d = 1;
    st.U = scalar(u);
    st.W = scalar(w);
    st.V = Vector::Constant(1, v);
    st.Z = scalar(z);
    return st;
}

Objective unit_point(double s = 1.0) { return Objective(DataSpec::empirical({{Vector::Ones(1), 1.0}}), LossSpec::square(), s); }

// Direct transcription of the three coupled updates with dense matrices.
struct DenseOracle {
    Matrix U, W, Z;
    Vector V;
    double m;

    Matrix tilde() const { return Z / std::sqrt(m) + W / m; }
    Vector lambda() const { return U.transpose() * tilde().transpose() * (V / m); }
    void step(double tau, const Objective& obj) {
        Vector xi = obj.xi(lambda());
        Matrix Wt = tilde();
        Matrix U1 = U - tau * Wt.transpose() * V * xi.transpose();
        Matrix W1 = W - tau * V * xi.transpose() * U.transpose();
        Vector V1 = V - tau * Wt * U * xi;
        U = U1;
        W = W1;
        V = V1;
    }
};

} // namespace

TEST(InitFinite, MiddleLayerStartsAtZero) {
    FiniteWidthState st = init_finite(4, 2, RngStream(1, 0));
    EXPECT_EQ(st.W, Matrix::Zero(4, 4));
    EXPECT_EQ(st.kappa, 0);
}

TEST(InitFinite, GaussianVarianceOfU) {
    FiniteWidthState st = init_finite(64, 10, RngStream(3, 0));
    double var = st.U.squaredNorm() / static_cast<double>(st.U.size());
    EXPECT_NEAR(var, 1.0, 0.25);
}

TEST(InitFinite, UniformEntriesBounded) {
    FiniteWidthState st = init_finite(4, 2, RngStream(1, 0), Dist::uniform);
    EXPECT_LE(st.U.cwiseAbs().maxCoeff(), std::sqrt(3.0));
}

TEST(InitFinite, SeparateDistributionForZ) {
    InitSpec init;
    init.Z = Dist::rademacher;
    FiniteWidthState st = init_finite(16, 2, RngStream(2, 0), init);
    EXPECT_TRUE((st.Z.array().abs() == 1.0).all());
    EXPECT_FALSE((st.U.array().abs() == 1.0).all());
    // U and V streams do not depend on the distribution chosen for Z
    FiniteWidthState g = init_finite(16, 2, RngStream(2, 0));
    EXPECT_EQ(st.U, g.U);
    EXPECT_EQ(st.V, g.V);
}

TEST(InitFinite, RejectsZeroWidth) { EXPECT_THROW(init_finite(0, 1, RngStream(1, 0)), DimensionError); }

TEST(PredictorFinite, ZeroWhenVIsZero) {
    FiniteWidthState st = init_finite(8, 3, RngStream(1, 0));
    st.V.setZero();
    EXPECT_EQ(predictor_finite(st), Vector::Zero(3));
}

TEST(PredictorFinite, HandValueAtWidthOne) {
    EXPECT_DOUBLE_EQ(predictor_finite(one_by_one(2, 0, 3, 1))(0), 6.0);
}

TEST(PredictorFinite, InitialSecondMomentIsDOverM) {
    const int m = 64, d = 10, seeds = 50;
    double acc = 0.0;
    for (int sd = 0; sd < seeds; ++sd) acc += predictor_finite(init_finite(m, d, RngStream(17, sd))).squaredNorm();
    EXPECT_NEAR(acc / seeds / (static_cast<double>(d) / m), 1.0, 0.2);
}

TEST(GdStepFinite, OptimalPointIsFixed) {
    FiniteWidthState st = one_by_one(1, 0, 1, 1);
    FiniteWidthState next = gd_step_finite(st, 0.1, DataSpec::empirical({{Vector::Ones(1), 1.0}}), LossSpec::square());
    EXPECT_EQ(next.U, st.U);
    EXPECT_EQ(next.W, st.W);
    EXPECT_EQ(next.V, st.V);
    EXPECT_EQ(next.kappa, 1);
}

TEST(GdStepFinite, HandStepFromZeroOutputLayer) {
    FiniteWidthState next = gd_step_finite(one_by_one(1, 0, 0, 1), 0.1, unit_point());
    EXPECT_DOUBLE_EQ(next.U(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(next.W(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(next.V(0), 0.1);
}

TEST(GdStepFinite, ScalarTrajectoryFiveSteps) {
    const double tau = 0.13;
    double u = 0.7, w = 0.0, v = -0.4, z = 1.3;
    FiniteWidthState st = one_by_one(u, w, v, z);
    Objective obj = unit_point();
    for (int k = 0; k < 5; ++k) {
        double lam = u * (z + w) * v;
        double xi = lam - 1.0;
        double u1 = u - tau * (z + w) * v * xi;
        double w1 = w - tau * v * xi * u;
        double v1 = v - tau * (z + w) * u * xi;
        u = u1;
        w = w1;
        v = v1;
        advance(st, tau, obj);
        EXPECT_NEAR(st.U(0, 0), u, 1e-14);
        EXPECT_NEAR(st.W(0, 0), w, 1e-14);
        EXPECT_NEAR(st.V(0), v, 1e-14);
        EXPECT_NEAR(predictor_finite(st)(0), u * (z + w) * v, 1e-14);
    }
}

TEST(GdStepFinite, MatchesDenseOracle) {
    const int m = 12, d = 3;
    RngStream teacher_rng(5, 0);
    Objective obj(DataSpec::synthetic(sample_vector(teacher_rng, d, Dist::gaussian)), LossSpec::square(), 1.5);
    FiniteWidthState st = init_finite(m, d, RngStream(6, 0), Dist::gaussian, 1.5);
    DenseOracle o{st.U, st.W, st.Z, st.V, static_cast<double>(m)};
    for (int k = 0; k < 20; ++k) {
        advance(st, 0.05, obj);
        o.step(0.05, obj);
    }
    EXPECT_LT((st.U - o.U).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((st.W - o.W).cwiseAbs().maxCoeff(), 1e-11);
    EXPECT_LT((st.V - o.V).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((raw_predictor(st) - o.lambda()).norm(), 1e-12);
}

TEST(GdStepFinite, ZIsNeverModified) {
    FiniteWidthState st = init_finite(10, 2, RngStream(2, 0));
    Matrix Z0 = st.Z;
    Objective obj(DataSpec::synthetic(Vector::Ones(2)), LossSpec::square());
    for (int k = 0; k < 10; ++k) advance(st, 0.1, obj);
    EXPECT_EQ(st.Z, Z0);
}

TEST(GdStepFinite, DeterministicReplay) {
    Objective obj(DataSpec::synthetic(Vector::Ones(2)), LossSpec::square());
    FiniteWidthState a = init_finite(20, 2, RngStream(3, 4)), b = init_finite(20, 2, RngStream(3, 4));
    for (int k = 0; k < 15; ++k) {
        advance(a, 0.2, obj);
        advance(b, 0.2, obj);
    }
    EXPECT_EQ(a.U, b.U);
    EXPECT_EQ(a.W, b.W);
    EXPECT_EQ(a.V, b.V);
}

TEST(GdStepFinite, DivergenceCarriesStep) {
    FiniteWidthState st = init_finite(8, 1, RngStream(1, 0));
    Objective obj(DataSpec::synthetic(Vector::Constant(1, 50.0)), LossSpec::square());
    try {
        for (int k = 0; k < 200; ++k) advance(st, 5.0, obj);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GT(e.kappa(), 0);
        EXPECT_LE(e.kappa(), 200);
    }
}

TEST(GdStepFinite, MiddleLayerVariationShrinksWithWidth) {
    Objective obj(DataSpec::synthetic(Vector::Ones(2)), LossSpec::square());
    std::vector<double> ratio;
    for (int m : {64, 256}) {
        double acc = 0.0;
        for (int sd = 0; sd < 3; ++sd) {
            FiniteWidthState st = init_finite(m, 2, RngStream(30, sd));
            for (int k = 0; k < 10; ++k) advance(st, 0.1, obj);
            double change = st.W.cwiseAbs().maxCoeff() / m;
            double init = st.Z.cwiseAbs().maxCoeff() / std::sqrt(static_cast<double>(m));
            acc += change / init;
        }
        ratio.push_back(acc / 3);
    }
    // quadrupling m halves the ratio up to log factors from the maxima
    EXPECT_NEAR(ratio[1] / ratio[0], 0.5, 0.2);
}

TEST(TildeParameterization, InitialMiddleLayerIsScaledZ) {
    FiniteWidthState st = init_finite(9, 2, RngStream(1, 0));
    TildeParams t = to_tilde_parameterization(st);
    EXPECT_EQ(t.W, st.Z / 3.0);
    EXPECT_EQ(t.V, st.V / 9.0);
}

TEST(TildeParameterization, RoundTripIsExactOnDyadicValues) {
    FiniteWidthState st = one_by_one(0, 0, 0, 0);
    st.m = 4;
    st.d = 1;
    st.Z = Matrix::Identity(4, 4) * 2.0;
    st.W = Matrix::Constant(4, 4, 0.5);
    st.U = Matrix::Constant(4, 1, 1.5);
    st.V = Vector::Constant(4, -0.25);
    FiniteWidthState back = from_tilde_parameterization(to_tilde_parameterization(st), st.Z);
    EXPECT_EQ(back.W, st.W);
    EXPECT_EQ(back.V, st.V);
    EXPECT_EQ(back.U, st.U);
}

TEST(TildeParameterization, IncrementIsWOverM) {
    const int m = 100;
    FiniteWidthState st = init_finite(m, 2, RngStream(7, 0));
    RngStream r(7, 99);
    st.W = sample_matrix(r, m, m, Dist::gaussian);
    TildeParams t = to_tilde_parameterization(st);
    Matrix diff = t.W - st.Z / std::sqrt(static_cast<double>(m));
    EXPECT_NEAR(diff.norm(), st.W.norm() / m, 1e-12);
}

TEST(LayerStatistics, Examples) {
    FiniteWidthState st = init_finite(2, 1, RngStream(1, 0));
    st.V = Vector::Constant(2, 2.0);
    EXPECT_DOUBLE_EQ(layer_statistics(st).v_kappa, 4.0);
    st.V.setZero();
    EXPECT_DOUBLE_EQ(layer_statistics(st).v_kappa, 0.0);
    FiniteWidthState big = init_finite(1024, 1, RngStream(2, 0));
    EXPECT_NEAR(layer_statistics(big).v_kappa, 1.0, 0.1);
}

TEST(Checkpoint, JsonRoundTripResumesBitIdentically) {
    Objective obj(DataSpec::synthetic(Vector::Ones(2)), LossSpec::square());
    FiniteWidthState st = init_finite(6, 2, RngStream(12, 1));
    for (int k = 0; k < 3; ++k) advance(st, 0.1, obj);
    FiniteWidthState resumed = checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(st).dump()));
    EXPECT_EQ(resumed.kappa, 3);
    for (int k = 0; k < 3; ++k) {
        advance(st, 0.1, obj);
        advance(resumed, 0.1, obj);
    }
    EXPECT_EQ(st.U, resumed.U);
    EXPECT_EQ(st.W, resumed.W);
    EXPECT_EQ(st.V, resumed.V);
}
