// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "avloc/attention.hpp"
#include "avloc/numkern/gradcheck.hpp"
#include "oracles/attention_oracle.hpp"
#include "test_util.hpp"

using namespace avloc;
using namespace avloc::attention;
using nk::Matrix;
using nk::Parameter;
using nk::Tape;
using test::random_matrix;

namespace {

// Cross-modal corner of the mask without the CLS rows: rows video, cols video then audio.
Matrix content_block(const AttentionMask& m) {
    const std::size_t n = m.video_len + m.audio_len;
    Matrix out(n, n);
    auto tok = [&](std::size_t i) { return i < m.video_len ? m.video(i) : m.audio(i - m.video_len); };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) = m(tok(i), tok(j));
    return out;
}

Matrix eval_attention(const Matrix& x, const AttentionMask& mask, const Matrix& wq, const Matrix& wk,
                      const Matrix& wv, int heads, AttentionTrace* trace = nullptr) {
    Tape t;
    return adaptive_attention(t.constant(x), mask, t.constant(wq), t.constant(wk), t.constant(wv), heads, trace)
        .value();
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(Mask, EqualLengthTwo) {
    const Matrix want{{1, 1, 1, 0}, {1, 1, 0, 1}, {1, 0, 1, 1}, {0, 1, 1, 1}};
    EXPECT_EQ(content_block(build_mask(2, 2)), want);
}

TEST(Mask, SingleTokens) {
    const auto m = build_mask(1, 1);
    EXPECT_EQ(content_block(m), Matrix::ones(2, 2));
}

TEST(Mask, UnequalLengthsUseRounding) {
    const auto m = build_mask(4, 2);
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(m(m.audio(j), m.video(i)), (i == 2 * j) ? 1.0 : 0.0);
    EXPECT_EQ(aligned_video_index(1, 4, 2), 2u);
    EXPECT_EQ(aligned_video_index(3, 2, 4), 1u);  // 1.5 rounds away from zero
}

TEST(Mask, ClsWiring) {
    const auto m = build_mask(3, 2);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(m(m.cls_video(), m.video(i)), 1.0);
        EXPECT_EQ(m(m.cls_audio(), m.video(i)), 0.0);
    }
    for (std::size_t j = 0; j < 2; ++j) {
        EXPECT_EQ(m(m.cls_audio(), m.audio(j)), 1.0);
        EXPECT_EQ(m(m.cls_video(), m.audio(j)), 0.0);
    }
    EXPECT_EQ(m(m.cls_video(), m.cls_audio()), 1.0);
    EXPECT_EQ(m(m.cls_video(), m.cls_video()), 1.0);
}

TEST(Mask, ExhaustiveInvariantsUpToSix) {
    for (std::size_t lv = 1; lv <= 6; ++lv)
        for (std::size_t la = 1; la <= 6; ++la) EXPECT_EQ(test::oracle::check_mask_invariants(lv, la), "");
}

TEST(Mask, RejectsEmptyStreams) {
    EXPECT_THROW(build_mask(0, 3), std::invalid_argument);
    EXPECT_THROW(build_mask(3, 0), std::invalid_argument);
}

TEST(AdaptiveAttention, AllOnesMaskEqualsVanilla) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t lv = 1 + rng() % 5, la = 1 + rng() % 5, d = 8;
        const auto mask = full_mask(lv, la);
        const Matrix x = random_matrix(mask.size(), d, rng);
        const Matrix wq = random_matrix(d, d, rng), wk = random_matrix(d, d, rng), wv = random_matrix(d, d, rng);
        const int heads = trial % 2 ? 2 : 4;
        EXPECT_LE(max_abs_diff(eval_attention(x, mask, wq, wk, wv, heads),
                               test::oracle::vanilla_attention(x, wq, wk, wv, heads)),
                  1e-12);
    }
}

TEST(AdaptiveAttention, UniformAttentionAveragesRows) {
    std::mt19937_64 rng(12);
    const auto mask = full_mask(3, 2);
    const Matrix x = random_matrix(mask.size(), 4, rng);
    const Matrix out = eval_attention(x, mask, Matrix(4, 4), Matrix(4, 4), Matrix::identity(4), 2);
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) mean += x(r, c) / double(x.rows());
        for (std::size_t r = 0; r < x.rows(); ++r) EXPECT_NEAR(out(r, c), mean, 1e-14);
    }
}

TEST(AdaptiveAttention, DiagonalMaskIsIdentity) {
    std::mt19937_64 rng(13);
    AttentionMask m{2, 3, std::make_shared<const Matrix>(Matrix::identity(7))};
    const Matrix x = random_matrix(7, 4, rng);
    const Matrix out = eval_attention(x, m, random_matrix(4, 4, rng), random_matrix(4, 4, rng), Matrix::identity(4), 1);
    EXPECT_LE(max_abs_diff(out, x), 1e-15);
}

TEST(AdaptiveAttention, MatchesTwoLoopOracle) {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t lv = 1 + rng() % 6, la = 1 + rng() % 6, d = 8;
        const auto mask = build_mask(lv, la);
        const Matrix x = random_matrix(mask.size(), d, rng, -2, 2);
        const Matrix wq = random_matrix(d, d, rng), wk = random_matrix(d, d, rng), wv = random_matrix(d, d, rng);
        EXPECT_LE(max_abs_diff(eval_attention(x, mask, wq, wk, wv, 2),
                               test::oracle::brute_force_attention(x, *mask.bits, wq, wk, wv, 2)),
                  1e-10);
    }
}

TEST(AdaptiveAttention, RowsAreStochasticOverSupport) {
    std::mt19937_64 rng(15);
    const auto mask = build_mask(5, 3);
    AttentionTrace trace;
    eval_attention(random_matrix(mask.size(), 8, rng, -3, 3), mask, random_matrix(8, 8, rng),
                   random_matrix(8, 8, rng), random_matrix(8, 8, rng), 4, &trace);
    ASSERT_EQ(trace.probabilities.size(), 4u);
    for (const Matrix& p : trace.probabilities)
        for (std::size_t i = 0; i < p.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < p.cols(); ++j) {
                if (mask(i, j) == 0.0) EXPECT_EQ(p(i, j), 0.0);
                s += p(i, j);
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
}

TEST(AdaptiveAttention, ShapeMismatchIsRejected) {
    std::mt19937_64 rng(16);
    const auto mask = build_mask(2, 2);
    EXPECT_THROW(eval_attention(random_matrix(5, 4, rng), mask, Matrix(4, 4), Matrix(4, 4), Matrix(4, 4), 1),
                 std::invalid_argument);
    EXPECT_THROW(eval_attention(random_matrix(6, 4, rng), mask, Matrix(4, 4), Matrix(4, 4), Matrix(4, 4), 3),
                 std::invalid_argument);
}

TEST(Aligner, ZeroResidualBranchesPassInputsThrough) {
    std::mt19937_64 rng(17);
    nk::ParameterSet ps;
    AttentionConfig cfg{8, 2, 2, 16, true};
    Aligner aligner(ps, cfg, 5, 6, rng);
    for (auto& b : aligner.blocks()) {
        b.out.zero();
        b.ffn_out.zero();
    }
    Tape t;
    const Matrix v = random_matrix(4, 8, rng), a = random_matrix(3, 8, rng);
    auto out = aligner.align_projected(t, t.constant(v), t.constant(a));
    EXPECT_EQ(out.video.value(), v);
    EXPECT_EQ(out.audio.value(), a);
    EXPECT_EQ(out.cls_video.value(), ps.find("align.cls_v")->value);
    EXPECT_EQ(out.cls_audio.value(), ps.find("align.cls_a")->value);
}

TEST(Aligner, OutputShapesFollowInputs) {
    std::mt19937_64 rng(18);
    nk::ParameterSet ps;
    Aligner aligner(ps, AttentionConfig{}, 7, 5, rng);
    Tape t;
    auto out = aligner.align(t, t.constant(random_matrix(6, 7, rng)), t.constant(random_matrix(3, 5, rng)));
    EXPECT_EQ(out.video.value().shape_string(), "6x64");
    EXPECT_EQ(out.audio.value().shape_string(), "3x64");
    EXPECT_EQ(out.cls_video.value().shape_string(), "1x64");
    EXPECT_THROW(Aligner(ps, AttentionConfig{10, 4, 1, 8, true}, 3, 3, rng), std::invalid_argument);
}

TEST(Aligner, AudioPermutationKeepsVideoPatternWithoutCrossBits) {
    std::mt19937_64 rng(19);
    const std::size_t lv = 4, la = 4, d = 8;
    auto bits = *build_mask(lv, la).bits;
    AttentionMask m{lv, la, nullptr};
    for (std::size_t i = 0; i < lv; ++i)
        for (std::size_t j = 0; j < la; ++j) bits(m.video(i), m.audio(j)) = bits(m.audio(j), m.video(i)) = 0.0;
    m.bits = std::make_shared<const Matrix>(bits);
    const Matrix x = random_matrix(m.size(), d, rng);
    Matrix xp = x;
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    for (std::size_t j = 0; j < la; ++j)
        for (std::size_t c = 0; c < d; ++c) xp(m.audio(j), c) = x(m.audio(perm[j]), c);
    const Matrix wq = random_matrix(d, d, rng), wk = random_matrix(d, d, rng), wv = random_matrix(d, d, rng);
    AttentionTrace t1, t2;
    eval_attention(x, m, wq, wk, wv, 2, &t1);
    eval_attention(xp, m, wq, wk, wv, 2, &t2);
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t i = 0; i <= lv; ++i)
            for (std::size_t j = 0; j <= lv; ++j) EXPECT_EQ(t1.probabilities[h](i, j), t2.probabilities[h](i, j));
}

TEST(Aligner, ClsReadoutGradientWrtQueryProjection) {
    std::mt19937_64 rng(20);
    nk::ParameterSet ps;
    Aligner aligner(ps, AttentionConfig{8, 2, 1, 8, true}, 4, 3, rng);
    const Matrix v = random_matrix(5, 4, rng), a = random_matrix(4, 3, rng), head = random_matrix(1, 8, rng);
    Parameter* wq = ps.find("align.block0.w_q");
    ASSERT_NE(wq, nullptr);
    std::vector<Parameter*> params{wq};
    auto rep = nk::check_gradients(
        [&](Tape& t) {
            auto out = aligner.align(t, t.constant(v), t.constant(a));
            return nk::sum_all(nk::mul(out.cls_video, t.constant(head)));
        },
        params);
    EXPECT_GT(rep.entries[0].analytic_norm, 0.0);
    EXPECT_LE(rep.max_relative_error, 1e-6);
}

// d(output video i) / d(input audio j) through one block, by finite differences on the input.
TEST(Aligner, NoLeakAcrossMaskedPairs) {
    std::mt19937_64 rng(21);
    nk::ParameterSet ps;
    AttentionConfig cfg{8, 2, 1, 16, true};
    Aligner aligner(ps, cfg, 8, 8, rng);
    const std::size_t lv = 4, la = 4;
    const auto mask = build_mask(lv, la);
    Matrix v = random_matrix(lv, 8, rng), a = random_matrix(la, 8, rng);
    for (std::size_t i = 0; i < lv; ++i)
        for (std::size_t j = 0; j < la; ++j) {
            auto out_row = [&](const Matrix& audio) {
                Tape t;
                auto out = aligner.align_projected(t, t.constant(v), t.constant(audio));
                Matrix row(1, 8);
                for (std::size_t c = 0; c < 8; ++c) row(0, c) = out.video.value()(i, c);
                return row;
            };
            double sens = 0.0;
            for (std::size_t c = 0; c < 8; ++c) {
                Matrix ap = a, am = a;
                ap(j, c) += 1e-6;
                am(j, c) -= 1e-6;
                sens = std::max(sens, max_abs_diff(out_row(ap), out_row(am)) / 2e-6);
            }
            if (mask(mask.video(i), mask.audio(j)) == 0.0)
                EXPECT_LE(sens, 1e-9) << i << "," << j;
            else
                EXPECT_GT(sens, 1e-6) << i << "," << j;
        }
}
