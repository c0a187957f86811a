// SPDX-License-Identifier: Apache-2.0
//
// dmusic: differentiable MUSIC direction-of-arrival estimation and array calibration
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------


#include "../support.hpp"

#include <gtest/gtest.h>

using namespace dmusic;
using namespace dmusic::testing;

namespace
{
    Spectrum synthetic(const AngularGrid &grid, const std::function<double(double)> &f)
    {
        Spectrum s{grid, RVector(Eigen::Index(grid.size())), 0};
        for (std::size_t i = 0; i < grid.size(); ++i)
            s.values(Eigen::Index(i)) = f(grid[i]);
        return s;
    }
}

TEST(DiffMusic, MaskShapes)
{
    const AngularGrid grid = AngularGrid::span(0.0, 1.0, 201);
    const AngularMask one = make_mask_at(grid, 57, 1);
    EXPECT_EQ(one.indices, (std::vector<std::size_t>{57}));
    EXPECT_EQ(make_mask_at(grid, 0, 5).indices, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(make_mask_at(grid, 100, 5).indices, (std::vector<std::size_t>{98, 99, 100, 101, 102}));
    EXPECT_EQ(make_mask_at(grid, 100, 4).indices, (std::vector<std::size_t>{99, 100, 101, 102}));
    EXPECT_EQ(make_mask_at(grid, 200, 4).indices, (std::vector<std::size_t>{199, 200}));
    EXPECT_EQ(make_mask(grid, grid[100], 5).center_index, 100u);
    EXPECT_THROW(make_mask_at(grid, 0, 0), ConfigError);
    for (std::size_t window = 1; window < 12; ++window)
        for (std::size_t c : {std::size_t(0), std::size_t(1), std::size_t(199), std::size_t(200)})
            EXPECT_GE(make_mask_at(grid, c, window).size(), (window + 1) / 2);
}

TEST(DiffMusic, SoftmaxProperties)
{
    RVector v(4);
    v << 1e12, 1e12 - 1.0, 3.0, -2.0;
    const RVector w = softmax(v, 1.0);
    EXPECT_TRUE(w.allFinite());
    EXPECT_NEAR(w.sum(), 1.0, 1e-12);
    EXPECT_GE(w.minCoeff(), 0.0);
}

TEST(DiffMusic, SymmetricSpectrumGivesPeakAngle)
{
    const AngularGrid grid = AngularGrid::span(-1.0, 1.0, 201);
    const double c = grid[120];
    const Spectrum s = synthetic(grid, [&](double x)
                                 { return 1.0 / (1e-2 + std::pow(x - c, 2)); });
    const DiffEstimate e = diffmusic_estimate(s, 1, 7, 1.0);
    EXPECT_NEAR(e.thetas_hat[0], c, 1e-13);
    EXPECT_NEAR(e.weights[0].sum(), 1.0, 1e-12);
}

TEST(DiffMusic, LowTemperatureIsArgmax)
{
    const AngularGrid grid = AngularGrid::span(-1.0, 1.0, 201);
    const Spectrum s = synthetic(grid, [](double x)
                                 { return 2.0 + std::sin(3.0 * x) + 0.5 * std::cos(11.0 * x); });
    const Peaks p = find_peaks(s, 2);
    std::vector<double> expected = p.angles;
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(diffmusic_estimate(s, 2, 9, 1e-12).thetas_hat, expected);
    EXPECT_EQ(diffmusic_estimate(s, 2, 1, 1.0).thetas_hat, expected);
}

TEST(DiffMusic, ConvexityAndAscending)
{
    const SimConfig c = small_config(16, 5, 100, 10.0);
    const ArrayParams phys = physical_array(c);
    const ArrayParams nom = nominal_array(c);
    const AngularGrid grid = AngularGrid(deg2rad(-90.0), deg2rad(0.05), 3600);
    for (const auto &scene : generate_dataset(c, phys, 10, 3, 1))
    {
        const Spectrum s = music_spectrum(noise_subspace_of(scene.snapshots, 5), nom, grid);
        const DiffEstimate e = diffmusic_estimate(s, 5, 12, 50.0);
        EXPECT_TRUE(std::is_sorted(e.thetas_hat.begin(), e.thetas_hat.end()));
        for (std::size_t i = 0; i < 5; ++i)
        {
            EXPECT_GE(e.thetas_hat[i], e.masks[i].angles.front());
            EXPECT_LE(e.thetas_hat[i], e.masks[i].angles.back());
            EXPECT_NEAR(e.weights[i].sum(), 1.0, 1e-12);
        }
    }
}

TEST(DiffMusic, OneSampleWindowMatchesMusic)
{
    const SimConfig c = small_config(16, 5, 100, 10.0);
    const ArrayParams phys = physical_array(c);
    const AngularGrid grid = default_grid();
    const GridSteering st = grid_steering(phys, grid);
    for (const auto &scene : generate_dataset(c, phys, 10, 8, 1))
        EXPECT_EQ(diffmusic_doas(scene.snapshots, 5, st, 1, 1.0), music_estimate(scene.snapshots, 5, st));
}

// Exact covariance, source midway between two grid points: the softmax over the mask lands closer
// to the truth than either neighbouring grid point
TEST(DiffMusic, OffGridRefinement)
{
    const AngularGrid grid = AngularGrid(deg2rad(-90.0), deg2rad(1.0), 180);
    const ArrayParams p = nominal_ula(16);
    int improved = 0, total = 0;
    for (std::size_t i = 30; i < 150; i += 7)
    {
        const double truth = 0.5 * (grid[i] + grid[i + 1]);
        const std::vector<double> thetas{truth};
        const NoiseSubspace un = noise_subspace(hermitian_evd(exact_covariance(p, thetas, 0.1)), 1);
        const Spectrum s = music_spectrum(un, p, grid);
        const double hard = find_peaks(s, 1).angles[0];
        const double soft = diffmusic_estimate(s, 1, 8, 1.0).thetas_hat[0];
        ++total;
        if (std::abs(soft - truth) < std::abs(hard - truth))
            ++improved;
    }
    EXPECT_EQ(improved, total);
}

TEST(DiffMusic, SpectrumGradientMatchesFiniteDifferences)
{
    Rng rng(21);
    std::uniform_real_distribution<double> angle(-1.4, 1.4);
    for (std::uint64_t seed = 1; seed <= 20; ++seed)
    {
        const SimConfig c = small_config(8, 2, 50, 20.0, seed);
        const ArrayParams phys = physical_array(c);
        const Dataset ds = generate_dataset(c, phys, 1, seed, 1);
        const NoiseSubspace un = noise_subspace_of(ds[0].snapshots, 2);
        const ArrayParams p = sample_impaired_array(phys, 0.01, 1e-3, rng);
        for (double theta : {angle(rng), ds[0].thetas[0]})
        {
            const SpectrumPoint sp = spectrum_gradient(un, p, theta);
            EXPECT_DOUBLE_EQ(sp.value, spectrum_at(un, p, std::vector<double>{theta})[0]);
            const RVector fd = fd_gradient([&](const RVector &x)
                                           { return spectrum_at(un, p.with_vector(x), std::vector<double>{theta})[0]; },
                                           p.to_vector());
            EXPECT_LT(relative_error(sp.grad, fd), 1e-4) << "seed " << seed;
        }
    }
}

TEST(DiffMusic, EstimateGradientMatchesFiniteDifferences)
{
    const AngularGrid grid = AngularGrid(deg2rad(-90.0), deg2rad(0.02), 9000);
    int checked = 0;
    for (std::uint64_t seed = 1; seed <= 12; ++seed)
    {
        const GradientCase gc = gradient_case(seed, grid, 8, 1);
        if (!peaks_stable(gc, grid))
            continue;
        ++checked;
        const PreparedScene &s = gc.scenes[0];
        const DiffGradient dg = diffmusic_gradient(s.noise, gc.params, grid_steering(gc.params, grid), 2, 8, gc.tau);
        const auto masks = base_masks(s, gc.params, grid, 8);
        RMatrix fd(2, gc.params.n_real());
        for (std::size_t i = 0; i < 2; ++i)
            fd.row(Eigen::Index(i)) = fd_gradient([&](const RVector &x)
                                                  { return estimate_offset(s, gc.params.with_vector(x), masks[i], gc.tau); },
                                                  gc.params.to_vector())
                                          .transpose();
        EXPECT_LT(relative_error(dg.jacobian, fd), 1e-4) << "seed " << seed;
    }
    EXPECT_GE(checked, 8);
}

TEST(DiffMusic, SinglePointMaskHasZeroGradient)
{
    const GradientCase gc = gradient_case(3, default_grid(), 1, 1);
    const AngularGrid grid = default_grid();
    const DiffGradient dg =
        diffmusic_gradient(gc.scenes[0].noise, gc.params, grid_steering(gc.params, grid), 2, 1, 1.0);
    EXPECT_EQ(dg.jacobian.cwiseAbs().maxCoeff(), 0.0);
}

TEST(DiffMusic, DuplicatedSnapshotsChangeNothing)
{
    const SimConfig c = small_config(8, 2, 50, 15.0, 4);
    const ArrayParams phys = physical_array(c);
    const ArrayParams nom = nominal_array(c);
    const Dataset ds = generate_dataset(c, phys, 1, 4, 1);
    CMatrix doubled(8, 100);
    doubled << ds[0].snapshots, ds[0].snapshots;
    EXPECT_LT((sample_covariance(doubled) - sample_covariance(ds[0].snapshots)).norm(), 1e-14);

    const AngularGrid grid = AngularGrid(deg2rad(-90.0), deg2rad(0.05), 3600);
    const DiffGradient a = estimate_gradient(ds[0].snapshots, nom, grid, 2, 8, 10.0);
    const DiffGradient b = estimate_gradient(doubled, nom, grid, 2, 8, 10.0);
    EXPECT_EQ(a.estimate.masks[0].indices, b.estimate.masks[0].indices);
    for (std::size_t i = 0; i < 2; ++i)
        EXPECT_NEAR(a.estimate.thetas_hat[i], b.estimate.thetas_hat[i], 1e-12);
    EXPECT_LT((a.jacobian - b.jacobian).cwiseAbs().maxCoeff(), 1e-8 * a.jacobian.cwiseAbs().maxCoeff());
}
