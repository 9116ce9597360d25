#include <gtest/gtest.h>

#include <random>

#include "../support/oracles.hpp"
#include "keyscore/errors.hpp"
#include "keyscore/evaluation.hpp"

namespace keyscore {
namespace {

TEST(Accuracy, CountsExactMatches) {
    EXPECT_DOUBLE_EQ(accuracy(std::vector{0, 1, 2, 3}, std::vector{0, 1, 2, 3}), 1.0);
    EXPECT_DOUBLE_EQ(accuracy(std::vector{0, 1, 2, 3}, std::vector{0, 1, 2, 0}), 0.75);
}

TEST(Accuracy, RejectsLengthMismatch) {
    EXPECT_THROW(accuracy(std::vector{0, 1}, std::vector{0}), ValidationError);
    EXPECT_THROW(accuracy(std::vector<int>{}, std::vector<int>{}), ValidationError);
}

TEST(Accuracy, AllZeroGraderOnMajorityDistribution) {
    std::vector<int> human;
    for (auto [score, count] : {std::pair{0, 53}, {1, 19}, {2, 17}, {3, 11}}) human.insert(human.end(), count, score);
    std::vector<int> zeros(human.size(), 0);
    EXPECT_NEAR(accuracy(human, zeros), 0.53, 1e-12);
    EXPECT_NEAR(majority_accuracy(human), 0.53, 1e-12);
}

TEST(Qwk, PerfectAgreementIsOne) {
    EXPECT_DOUBLE_EQ(qwk(std::vector{0, 1, 2, 3, 1}, std::vector{0, 1, 2, 3, 1}, 4), 1.0);
}

TEST(Qwk, FullReversalIsMinusOne) {
    // Pairwise oracle: observed 36/4 = 9, expected 72/4 = 18 per answer -> 1 - 36/18.
    EXPECT_NEAR(qwk(std::vector{0, 0, 3, 3}, std::vector{3, 3, 0, 0}, 4), -1.0, 1e-12);
}

TEST(Qwk, DegenerateExpectedMatrixThrows) {
    EXPECT_THROW(qwk(std::vector{2, 2, 2}, std::vector{2, 2, 2}, 4), ValidationError);
    EXPECT_THROW(qwk(std::vector{1}, std::vector{1}, 4), ValidationError);
}

TEST(Qwk, ConstantButDifferentSidesIsZero) {
    EXPECT_NEAR(qwk(std::vector{0, 0, 0}, std::vector{2, 2, 2}, 4), 0.0, 1e-12);
}

TEST(Qwk, MatchesPairwiseOracleAndIsSymmetric) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> h(200), s(200);
        for (auto& v : h) v = static_cast<int>(rng() % 4);
        for (auto& v : s) v = static_cast<int>(rng() % 4);
        const double k = qwk(h, s, 4);
        EXPECT_NEAR(k, oracle::qwk(h, s), 1e-9);
        EXPECT_NEAR(k, qwk(s, h, 4), 1e-12);
        EXPECT_GE(k, -1.0);
        EXPECT_LE(k, 1.0);
    }
}

TEST(Pearson, IdentityAndNegation) {
    std::vector<double> x{1, 2, 4, 8}, neg{-1, -2, -4, -8};
    EXPECT_NEAR(pearson(x, x), 1.0, 1e-12);
    EXPECT_NEAR(pearson(x, neg), -1.0, 1e-12);
}

TEST(Pearson, FrozenTenPointFixture) {
    // Frozen from numpy.corrcoef on the same vectors.
    std::vector<double> x{3, 1, 4, 1, 5, 9, 2, 6, 5, 3}, y{2, 7, 1, 8, 2, 8, 1, 8, 2, 8};
    EXPECT_NEAR(pearson(x, y), 0.10492284287735874, 1e-9);
    EXPECT_NEAR(pearson(x, y), oracle::pearson(x, y), 1e-9);
}

TEST(Pearson, ZeroVarianceThrows) {
    EXPECT_THROW(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), ValidationError);
}

TEST(EvalReport, AccuracyEqualsConfusionTrace) {
    std::mt19937_64 rng(5);
    std::vector<int> h(50), s(50);
    for (auto& v : h) v = static_cast<int>(rng() % 4);
    for (auto& v : s) v = static_cast<int>(rng() % 4);
    const auto r = evaluate(h, s, 3, "x");
    std::size_t trace = 0;
    for (std::size_t i = 0; i < 4; ++i) trace += r.confusion[i][i];
    EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(trace) / 50.0);
    EXPECT_EQ(r.n, 50u);
    ASSERT_TRUE(r.qwk.has_value());
    ASSERT_TRUE(r.pearson.has_value());
}

TEST(EvalReport, ConstantSystemLeavesPearsonUndefined) {
    const auto r = evaluate(std::vector{0, 1, 2, 3}, std::vector{0, 0, 0, 0}, 3);
    EXPECT_FALSE(r.pearson.has_value());
    EXPECT_TRUE(r.qwk.has_value());
    EXPECT_TRUE(to_json(r)["pearson"].is_null());
}

TEST(KeyOverlap, ContainmentCountsAsCorrect) {
    EXPECT_TRUE(key_matches("the cells lyse", "and the cells lyse"));
    EXPECT_TRUE(key_matches("The cells lyse.", "so, the cells lyse because of osmosis"));
}

TEST(KeyOverlap, NineOfTenTokensIsNotEnough) {
    const std::string manual = "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10";
    const std::string nine = "w1 w2 w3 w4 w5 w6 w7 w8 w9 x";
    EXPECT_DOUBLE_EQ(token_overlap(manual, nine), 0.9);
    EXPECT_FALSE(key_matches(manual, nine));
    EXPECT_TRUE(key_matches(manual, "w10 w9 w8 w7 w6 w5 w4 w3 w2 w1"));
}

TEST(KeyOverlap, ContainmentIgnoresLengthRatio) {
    EXPECT_TRUE(key_matches("osmosis", "water moves by osmosis across the membrane into the cell which then bursts"));
}

TEST(KeyOverlap, GreedyAlignmentWithinAnswer) {
    std::map<std::string, std::vector<std::string>> manual{{"1", {"the cells lyse", "water enters the cell"}},
                                                           {"2", {"salt draws water out"}}};
    std::map<std::string, std::vector<std::string>> system{{"1", {"so water enters the cell", "and the cells lyse"}},
                                                           {"2", {"the answer is unrelated"}}};
    const auto r = key_overlap_eval(manual, system);
    EXPECT_EQ(r.total_keys, 3u);
    EXPECT_EQ(r.correct_keys, 2u);
    EXPECT_NEAR(r.accuracy, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(r.mean_words_manual, (3 + 4 + 4) / 3.0, 1e-12);
    EXPECT_NEAR(r.mean_words_system, (5 + 4 + 4) / 3.0, 1e-12);
}

TEST(KeyOverlap, MissingSystemKeysAreIncorrect) {
    const auto r = key_overlap_eval({{"1", {"a b", "c d"}}}, {{"1", {"a b"}}});
    EXPECT_EQ(r.total_keys, 2u);
    EXPECT_EQ(r.correct_keys, 1u);
}

}  // namespace
}  // namespace keyscore
