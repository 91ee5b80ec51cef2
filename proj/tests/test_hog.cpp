#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "hgllim/hog.hpp"
#include "hgllim/netpbm.hpp"

namespace {

using namespace hgllim;

constexpr Eigen::Index kBlock = 32;

Patch random_patch(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Patch p(kPatchSize, kPatchSize);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
    return p;
}

Image grey_image(const Matrix& m) {
    Image img;
    img.width = m.cols();
    img.height = m.rows();
    for (Eigen::Index y = 0; y < m.rows(); ++y)
        for (Eigen::Index x = 0; x < m.cols(); ++x) img.pixels.push_back(m(y, x));
    return img;
}

/// Offset of (level, block row, block col, cell row, cell col, bin) in the descriptor.
Eigen::Index slot(int level, Eigen::Index by, Eigen::Index bx, Eigen::Index dy, Eigen::Index dx, int bin) {
    Eigen::Index base = 0;
    for (int l = 0; l < level; ++l) {
        const Eigen::Index b = kPatchSize / kCellSizes[static_cast<std::size_t>(l)] - 1;
        base += b * b * kBlock;
    }
    const Eigen::Index blocks = kPatchSize / kCellSizes[static_cast<std::size_t>(level)] - 1;
    return base + (by * blocks + bx) * kBlock + (dy * 2 + dx) * kOrientationBins + bin;
}

/// Fraction of each non-empty block's norm carried by one orientation bin; returns the minimum.
double min_bin_share(const Vector& y, int bin) {
    double worst = 1.0;
    for (Eigen::Index start = 0; start < y.size(); start += kBlock) {
        const Vector blk = y.segment(start, kBlock);
        if (blk.norm() < 1e-3) continue;
        double in_bin = 0.0;
        for (int c = 0; c < 4; ++c) in_bin += blk[c * kOrientationBins + bin] * blk[c * kOrientationBins + bin];
        worst = std::min(worst, std::sqrt(in_bin) / blk.norm());
    }
    return worst;
}

TEST(Phog, DimensionIs1888) {
    EXPECT_EQ(kPhogDim, 1888);
    std::mt19937_64 rng(1);
    EXPECT_EQ(phog(random_patch(rng)).size(), 1888);
}

TEST(Phog, ConstantPatchGivesZeroVector) {
    const Vector y = phog(Patch::Constant(kPatchSize, kPatchSize, 0.37));
    ASSERT_EQ(y.size(), 1888);
    EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Phog, RejectsWrongExtent) { EXPECT_THROW(phog(Patch::Zero(32, 64)), ContractError); }

TEST(Phog, HorizontalStepVotesNinetyDegrees) {
    Patch p = Patch::Zero(kPatchSize, kPatchSize);
    p.bottomRows(27).setOnes();  // intensity changes along rows: gradient points down
    const Vector y = phog(p);
    EXPECT_GT(y.norm(), 0.0);
    EXPECT_GT(min_bin_share(y, 4), 0.8);
}

TEST(Phog, VerticalStepVotesZeroDegrees) {
    Patch p = Patch::Zero(kPatchSize, kPatchSize);
    p.rightCols(40).setOnes();
    const Vector y = phog(p);
    EXPECT_GT(min_bin_share(y, 0), 0.8);
    // dark-to-bright and bright-to-dark edges share a bin (unsigned orientation)
    EXPECT_LT((phog(Patch::Ones(kPatchSize, kPatchSize) - p) - y).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Phog, TransposeMirrorsOrientationAboutFortyFiveDegrees) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const Patch p = random_patch(rng);
        const Vector y = phog(p);
        const Vector yt = phog(p.transpose());
        for (int level = 0; level < 3; ++level) {
            const Eigen::Index blocks = kPatchSize / kCellSizes[static_cast<std::size_t>(level)] - 1;
            for (Eigen::Index by = 0; by < blocks; ++by)
                for (Eigen::Index bx = 0; bx < blocks; ++bx)
                    for (Eigen::Index dy = 0; dy < 2; ++dy)
                        for (Eigen::Index dx = 0; dx < 2; ++dx)
                            for (int b = 0; b < kOrientationBins; ++b)
                                ASSERT_NEAR(y[slot(level, by, bx, dy, dx, b)],
                                            yt[slot(level, bx, by, dx, dy, (12 - b) % kOrientationBins)], 1e-12);
        }
    }
}

TEST(Phog, HorizontalFlipNegatesOrientation) {
    std::mt19937_64 rng(4);
    const Patch p = random_patch(rng);
    const Vector y = phog(p);
    const Vector yf = phog(p.rowwise().reverse());
    for (int level = 0; level < 3; ++level) {
        const Eigen::Index blocks = kPatchSize / kCellSizes[static_cast<std::size_t>(level)] - 1;
        for (Eigen::Index by = 0; by < blocks; ++by)
            for (Eigen::Index bx = 0; bx < blocks; ++bx)
                for (Eigen::Index dy = 0; dy < 2; ++dy)
                    for (Eigen::Index dx = 0; dx < 2; ++dx)
                        for (int b = 0; b < kOrientationBins; ++b)
                            ASSERT_NEAR(y[slot(level, by, bx, dy, dx, b)],
                                        yf[slot(level, by, blocks - 1 - bx, dy, 1 - dx, (8 - b) % kOrientationBins)],
                                        1e-12);
    }
}

TEST(Phog, NonNegativeAndBlockNormBounded) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 1000; ++i) {
        const Vector y = phog(random_patch(rng));
        ASSERT_EQ(y.size(), 1888);
        ASSERT_GE(y.minCoeff(), 0.0);
        for (Eigen::Index start = 0; start < y.size(); start += kBlock)
            ASSERT_LE(y.segment(start, kBlock).norm(), 1.0 + 1e-12);
    }
}

TEST(Phog, IntensityAffineInvariance) {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 20; ++i) {
        const Patch p = random_patch(rng);
        const Patch q = (0.4 * p.array() + 0.3).matrix();
        EXPECT_LT((phog(p) - phog(q)).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Preprocess, ConstantImageGivesConstantPatch) {
    const Image img = grey_image(Matrix::Constant(90, 120, 0.6));
    const Patch p = preprocess(img, {10.3, 5.0, 50.0, 70.0});
    EXPECT_EQ(p.rows(), 64);
    EXPECT_EQ(p.cols(), 64);
    EXPECT_EQ(p.maxCoeff(), p.minCoeff());
    EXPECT_EQ(phog(p).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Preprocess, EqualizedCropIsFixedPoint) {
    // 16 distinct levels with distinct counts, already equalized
    Matrix m(64, 64);
    for (Eigen::Index r = 0; r < 64; ++r)
        for (Eigen::Index c = 0; c < 64; ++c) m(r, c) = static_cast<double>((r * 64 + c) * (r * 64 + c) / 262144) / 15.0;
    const Patch eq = equalize(m);
    const Patch once = preprocess(grey_image(eq), {0.0, 0.0, 64.0, 64.0});
    EXPECT_LT((once - eq).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((equalize(once) - once).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Preprocess, CheckerboardHalvesPeriod) {
    Matrix board(160, 160);
    for (Eigen::Index r = 0; r < 160; ++r)
        for (Eigen::Index c = 0; c < 160; ++c) board(r, c) = ((r / 4 + c / 4) % 2) ? 0.8 : 0.2;
    const Patch p = preprocess(grey_image(board), {16.0, 8.0, 128.0, 128.0});
    for (Eigen::Index r = 0; r < 64; ++r)
        for (Eigen::Index c = 0; c < 64; ++c) {
            const bool bright = ((2 * r + 8) / 4 + (2 * c + 16) / 4) % 2;
            ASSERT_EQ(p(r, c), bright ? 1.0 : 0.0) << r << "," << c;
        }
}

TEST(Preprocess, MirrorPadsOutsideImage) {
    Matrix ramp(64, 100);
    for (Eigen::Index c = 0; c < 100; ++c) ramp.col(c).setConstant(static_cast<double>(c) / 99.0);
    const Patch p = preprocess(grey_image(ramp), {-8.0, 0.0, 64.0, 64.0});
    for (Eigen::Index c = 0; c <= 8; ++c) EXPECT_EQ(p(5, c), p(5, 16 - c));
    EXPECT_LT(p(5, 8), p(5, 9));
}

TEST(Preprocess, LumaUsesBt601Weights) {
    Image img;
    img.width = 8;
    img.height = 8;
    img.channels = 3;
    for (int i = 0; i < 64; ++i) {
        img.pixels.push_back(i < 32 ? 1.0 : 0.0);
        img.pixels.push_back(i < 32 ? 0.0 : 1.0);
        img.pixels.push_back(0.5);
    }
    const Matrix g = detail::luma(img);
    EXPECT_NEAR(g(0, 0), 0.299 + 0.057, 1e-15);
    EXPECT_NEAR(g(7, 7), 0.587 + 0.057, 1e-15);
}

TEST(Preprocess, Errors) {
    const Image img = grey_image(Matrix::Constant(50, 50, 0.5));
    EXPECT_THROW(preprocess(img, {60.0, 0.0, 10.0, 10.0}), OutOfBoundsError);
    EXPECT_THROW(preprocess(img, {-20.0, -20.0, 20.0, 20.0}), OutOfBoundsError);
    EXPECT_THROW(preprocess(img, {0.0, 0.0, 1.0, 3.0}), ContractError);
    EXPECT_NO_THROW(preprocess(img, {-19.0, -19.0, 20.0, 20.0}));
}

TEST(Netpbm, BinaryRoundTrip) {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> u(0, 255);
    Image img;
    img.width = 7;
    img.height = 5;
    img.channels = 3;
    for (int i = 0; i < 7 * 5 * 3; ++i) img.pixels.push_back(u(rng) / 255.0);
    const auto path = (std::filesystem::temp_directory_path() / "hgllim_netpbm_test.ppm").string();
    netpbm::write(path, img);
    const Image back = netpbm::read(path);
    std::filesystem::remove(path);
    EXPECT_EQ(back.width, 7);
    EXPECT_EQ(back.height, 5);
    EXPECT_EQ(back.channels, 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 1e-15);
}

TEST(Netpbm, AsciiAndSixteenBit) {
    const Image a = netpbm::decode("P2\n# comment\n3 1\n4\n0 2 4\n");
    ASSERT_EQ(a.pixels.size(), 3u);
    EXPECT_DOUBLE_EQ(a.pixels[1], 0.5);
    std::string raw = "P5 2 1 65535\n";
    raw += std::string("\x80\x00\xff\xff", 4);
    const Image b = netpbm::decode(raw);
    EXPECT_DOUBLE_EQ(b.pixels[0], 32768.0 / 65535.0);
    EXPECT_DOUBLE_EQ(b.pixels[1], 1.0);
    EXPECT_THROW(netpbm::decode("P5 2 2 255\n\x01"), DataError);
    EXPECT_THROW(netpbm::decode("GIF89a"), DataError);
}

}  // namespace
