#include <wlnn/finite_width.hpp>
#include <wlnn/limit_system.hpp>
#include <wlnn/multilayer.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace wlnn;

namespace {

Objective unit_point() { return Objective(DataSpec::empirical({{Vector::Ones(1), 1.0}}), LossSpec::square()); }

// The L = 2 limit update with dense matrices in the binary indexing.
// M_l = Lambda_l + G_l maps layer l - 1 coefficients to layer l.
struct DenseL2 {
    Vector A, B;
    Matrix G1, G2, L1, L2;

    explicit DenseL2(long R) : A(Vector::Zero(R)), B(Vector::Zero(R)), G1(Matrix::Zero(R, R)), G2(Matrix::Zero(R, R)) {
        L1 = ladder_from_relations(1, R);
        L2 = ladder_from_relations(2, R);
        A(0) = 1.0; // N_0((0)) = 1
        B(0) = 1.0; // N_2((2)) = 1
    }
    double raw() const { return A.dot((L1 + G1).transpose() * ((L2 + G2).transpose() * B)); }
    void step(double tau, const Objective& obj) {
        double xi = obj.xi(Vector::Constant(1, raw()))(0);
        Matrix M1 = L1 + G1, M2 = L2 + G2;
        Vector back2 = M2.transpose() * B;
        Vector fwd1 = M1 * A;
        Vector A1 = A - tau * xi * (M1.transpose() * back2);
        Matrix G11 = G1 - tau * xi * back2 * A.transpose();
        Matrix G21 = G2 - tau * xi * B * fwd1.transpose();
        Vector B1 = B - tau * xi * (M2 * fwd1);
        A = A1;
        G1 = G11;
        G2 = G21;
        B = B1;
    }
};

} // namespace

TEST(Sequences, LOneAlternates) {
    auto seqs = enumerate_sequences(1, 0, 3);
    ASSERT_EQ(seqs.size(), 3u);
    EXPECT_EQ(seqs[0], (LayerSequence{0}));
    EXPECT_EQ(seqs[1], (LayerSequence{1, 0}));
    EXPECT_EQ(seqs[2], (LayerSequence{0, 1, 0}));
}

TEST(Sequences, LTwoLayerOneShortest) {
    auto seqs = enumerate_sequences(2, 1, 2);
    ASSERT_EQ(seqs.size(), 2u);
    EXPECT_EQ(seqs[0], (LayerSequence{0, 1}));
    EXPECT_EQ(seqs[1], (LayerSequence{2, 1}));
}

TEST(Sequences, AllValidAndZeroStartForcesOne) {
    for (int L : {1, 2, 3})
        for (int ell = 0; ell <= L; ++ell)
            for (const auto& s : enumerate_sequences(L, ell, 7)) {
                EXPECT_TRUE(valid_sequence(L, ell, s));
                if (s.size() >= 2 && s[0] == 0) {
                    EXPECT_EQ(s[1], 1);
                }
            }
    EXPECT_FALSE(valid_sequence(2, 1, {1}));
    EXPECT_FALSE(valid_sequence(2, 0, {0, 2, 1, 0}));
}

TEST(SequenceIndex, DisplayedExamples) {
    EXPECT_EQ(sequence_to_index(2, {0}), 1);
    EXPECT_EQ(sequence_to_index(2, {0, 1}), 2);
    EXPECT_EQ(sequence_to_index(2, {2, 1}), 3);
    EXPECT_EQ(sequence_to_index(2, {2}), 1);
    EXPECT_THROW(sequence_to_index(3, {0}), std::invalid_argument);
}

TEST(SequenceIndex, InjectiveAndInvertibleUpToLengthNine) {
    for (int ell = 0; ell <= 2; ++ell) {
        std::set<long> seen;
        auto seqs = enumerate_sequences(2, ell, 9);
        for (const auto& s : seqs) {
            long N = sequence_to_index(2, s);
            EXPECT_TRUE(seen.insert(N).second) << "duplicate index " << N;
            EXPECT_EQ(index_to_sequence(ell, N), s);
        }
        // indices are exactly the integers from the first one onwards
        EXPECT_EQ(*seen.begin(), ell == 1 ? 2 : 1);
        EXPECT_EQ(*seen.rbegin() - *seen.begin() + 1, static_cast<long>(seen.size()));
    }
}

TEST(LambdaEll, DisplayedLeadingRows) {
    Matrix L1 = lambda_ell(2, 1, 9), L2t = lambda_ell(2, 2, 9).transpose();
    const double r1[4][9] = {{1, 1, 0, 0, 0, 0, 0, 0, 0},
                             {0, 1, 0, 1, 0, 0, 0, 0, 0},
                             {0, 0, 1, 0, 0, 1, 0, 0, 0},
                             {0, 0, 0, 1, 0, 0, 0, 1, 0}};
    const double r2[4][9] = {{1, 0, 1, 0, 0, 0, 0, 0, 0},
                             {0, 1, 0, 0, 1, 0, 0, 0, 0},
                             {0, 0, 1, 0, 0, 0, 1, 0, 0},
                             {0, 0, 0, 1, 0, 0, 0, 0, 1}};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 9; ++j) {
            EXPECT_EQ(L1(i, j), r1[i][j]) << i << "," << j;
            EXPECT_EQ(L2t(i, j), r2[i][j]) << i << "," << j;
        }
}

TEST(LambdaEll, LOneIsTheThreeLayerLadder) { EXPECT_EQ(lambda_ell(1, 1, 7), LadderOperator{1}.dense(7)); }

TEST(LambdaEll, RelationsGiveTheTransposeApartFromTheCorner) {
    for (int ell = 1; ell <= 2; ++ell) {
        Matrix rel = ladder_from_relations(ell, 40);
        Matrix diff = lambda_ell(2, ell, 40) - rel.transpose();
        EXPECT_EQ(diff(0, 0), 1.0);
        diff(0, 0) = 0.0;
        EXPECT_EQ(diff.cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(MultiFinite, OptimalScalarNetworkIsFixed) {
    MultiFiniteState st = init_multi_finite(1, 2, RngStream(1, 0));
    st.U.setOnes();
    st.V.setOnes();
    for (auto& Z : st.Z) Z.setOnes();
    EXPECT_DOUBLE_EQ(predictor_multilayer_finite(st), 1.0);
    MultiFiniteState next = gd_step_multilayer_finite(st, 0.1, DataSpec::empirical({{Vector::Ones(1), 1.0}}), LossSpec::square());
    EXPECT_EQ(next.U, st.U);
    EXPECT_EQ(next.V, st.V);
    EXPECT_EQ(next.W[0], st.W[0]);
    EXPECT_EQ(next.W[1], st.W[1]);
}

TEST(MultiFinite, LayerOneMatchesThreeLayerBitForBit) {
    Objective obj = unit_point();
    FiniteWidthState f = init_finite(16, 1, RngStream(4, 2));
    MultiFiniteState g = init_multi_finite(16, 1, RngStream(4, 2));
    ASSERT_EQ(f.Z, g.Z[0]);
    for (int k = 0; k < 25; ++k) {
        advance(f, 0.1, obj);
        advance(g, 0.1, obj);
        ASSERT_EQ(predictor_finite(f)(0), predictor_multilayer_finite(g));
    }
    EXPECT_EQ(f.W, g.W[0]);
}

TEST(MultiFinite, LayerTwoMatchesDenseProducts) {
    const int m = 10;
    const double tau = 0.07;
    Objective obj(DataSpec::synthetic(Vector::Constant(1, 0.8)), LossSpec::square());
    MultiFiniteState st = init_multi_finite(m, 2, RngStream(5, 0));
    Matrix U = st.U, W1 = st.W[0], W2 = st.W[1], Z1 = st.Z[0], Z2 = st.Z[1];
    Vector V = st.V;
    const double sm = std::sqrt(static_cast<double>(m));
    for (int k = 0; k < 8; ++k) {
        Matrix T1 = Z1 / sm + W1 / m, T2 = Z2 / sm + W2 / m;
        double lam = (U.transpose() * T1.transpose() * T2.transpose() * V)(0) / m;
        double xi = lam - 0.8;
        Matrix U1 = U - tau * xi * T1.transpose() * T2.transpose() * V;
        Matrix W11 = W1 - tau * xi * (T2.transpose() * V) * U.transpose();
        Matrix W21 = W2 - tau * xi * V * (T1 * U).transpose();
        Vector V1 = V - tau * xi * T2 * T1 * U;
        U = U1;
        W1 = W11;
        W2 = W21;
        V = V1;
        advance(st, tau, obj);
    }
    EXPECT_LT((st.U - U).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((st.W[0] - W1).cwiseAbs().maxCoeff(), 1e-11);
    EXPECT_LT((st.W[1] - W2).cwiseAbs().maxCoeff(), 1e-11);
    EXPECT_LT((st.V - V).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MultiFinite, RejectsVectorInputs) {
    MultiFiniteState st = init_multi_finite(4, 2, RngStream(1, 0));
    Objective obj(DataSpec::synthetic(Vector::Ones(2)), LossSpec::square());
    EXPECT_THROW(advance(st, 0.1, obj), DimensionError);
}

TEST(MultiLimit, LayerOneMatchesThreeLayerBitForBit) {
    Objective obj = unit_point();
    LimitState a = init_limit(1, 2);
    MultiLimitState b = init_multi_limit(1);
    for (int k = 0; k < 30; ++k) {
        advance(a, 0.1, obj);
        advance(b, 0.1, obj);
        ASSERT_EQ(predictor_limit(a)(0), predictor_multilayer_limit(b)) << "step " << k;
    }
}

TEST(MultiLimit, FixedWhenXiVanishes) {
    Objective obj(DataSpec::synthetic(Vector::Zero(1)), LossSpec::square());
    MultiLimitState st = init_multi_limit(2);
    double before = predictor_multilayer_limit(st);
    advance(st, 0.2, obj);
    advance(st, 0.2, obj);
    EXPECT_EQ(predictor_multilayer_limit(st), before);
    DenseMultiLimit d = dense_binary(st, 8);
    EXPECT_EQ(d.G1.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(d.G2.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MultiLimit, LayerTwoMatchesDenseRecursion) {
    Objective obj = unit_point();
    MultiLimitState st = init_multi_limit(2);
    const long R = 128;
    DenseL2 o(R);
    EXPECT_NEAR(predictor_multilayer_limit(st), o.raw(), 1e-15);
    for (int k = 0; k < 4; ++k) {
        advance(st, 0.1, obj);
        o.step(0.1, obj);
        EXPECT_NEAR(predictor_multilayer_limit(st), o.raw(), 1e-14) << "step " << k;
        DenseMultiLimit d = dense_binary(st, R);
        EXPECT_LT((d.A - o.A).cwiseAbs().maxCoeff(), 1e-14);
        EXPECT_LT((d.B - o.B).cwiseAbs().maxCoeff(), 1e-14);
        EXPECT_LT((d.G1 - o.G1).cwiseAbs().maxCoeff(), 1e-14);
        EXPECT_LT((d.G2 - o.G2).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(MultiLimit, ZeroInputLayerGivesZeroPredictor) {
    MultiLimitState st = init_multi_limit(2);
    st.A(0, 0) = 0.0;
    EXPECT_EQ(predictor_multilayer_limit(st), 0.0);
}

TEST(MultiLimit, FiniteWidthMeanApproachesLimitAtInit) {
    // E over Z of the finite predictor equals the limit value up to O(1/m)
    const int m = 200, seeds = 200;
    double acc = 0.0;
    for (int sd = 0; sd < seeds; ++sd) acc += predictor_multilayer_finite(init_multi_finite(m, 2, RngStream(40, sd)));
    double se = 1.0 / std::sqrt(static_cast<double>(m) * seeds);
    EXPECT_NEAR(acc / seeds, predictor_multilayer_limit(init_multi_limit(2)), 5.0 * se);
}

TEST(PsiOracle, ShortSequences) {
    const int m = 6;
    RelationSample s = draw_relation_sample(m, RngStream(3, 0));
    std::vector<Matrix> Zs{s.Z1, s.Z2};
    EXPECT_EQ(psi_basis_oracle({0}, Zs, s.psi0, s.psi2), s.psi0);
    Vector one = psi_basis_oracle({0, 1}, Zs, s.psi0, s.psi2);
    EXPECT_LT((one - s.Z1 * s.psi0 / std::sqrt(6.0)).cwiseAbs().maxCoeff(), 1e-14);
    Vector down = psi_basis_oracle({2, 1}, Zs, s.psi0, s.psi2);
    EXPECT_LT((down - s.Z2.transpose() * s.psi2 / std::sqrt(6.0)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(PsiOracle, LOneReducesToChainVectors) {
    const int m = 6;
    RngStream r(8, 0);
    Matrix Z = sample_matrix(r, m, m, Dist::gaussian);
    Vector u = sample_vector(r, m, Dist::gaussian), v = sample_vector(r, m, Dist::gaussian);
    // (0, 1, 0): Z^T then Z, no repeated vertex on layer 0
    Vector got = psi_basis_oracle({0, 1, 0}, {Z}, u, v);
    Vector ref = Z.transpose() * Z * u;
    for (int i = 0; i < m; ++i) ref(i) -= Z.col(i).squaredNorm() * u(i);
    EXPECT_LT((got - ref / m).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Relations, ResidualsShrinkWithWidth) {
    std::vector<double> mean;
    for (int m : {12, 24}) {
        std::vector<RelationSample> ss;
        for (int sd = 0; sd < 6; ++sd) ss.push_back(draw_relation_sample(m, RngStream(70, static_cast<std::uint64_t>(m * 100 + sd))));
        auto rows = verify_relations_L2(m, 2, ss);
        double acc = 0.0;
        for (const auto& r : rows)
            if (r.relation != "ortho" && !r.skipped) acc += r.residual;
        mean.push_back(acc);
        bool has_skip = false;
        for (const auto& r : rows) has_skip = has_skip || r.skipped;
        EXPECT_TRUE(has_skip); // psi^1_1 does not exist
    }
    EXPECT_LT(mean[1], mean[0]);
}
