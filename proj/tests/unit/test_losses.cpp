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
    std::vector<double> deg(std::initializer_list<double> values)
    {
        std::vector<double> out;
        for (double v : values)
            out.push_back(deg2rad(v));
        return out;
    }
}

TEST(Losses, ModPiExamples)
{
    EXPECT_EQ(mod_pi(0.0), 0.0);
    EXPECT_NEAR(mod_pi(deg2rad(179.0)), deg2rad(-1.0), 1e-12);
    EXPECT_NEAR(mod_pi(deg2rad(-90.5)), deg2rad(89.5), 1e-12);
    EXPECT_NEAR(mod_pi(pi / 2), pi / 2, 1e-15);
    EXPECT_NEAR(mod_pi(-pi / 2), pi / 2, 1e-15);
    Rng rng(1);
    std::uniform_real_distribution<double> d(-20.0, 20.0);
    for (int i = 0; i < 1000; ++i)
    {
        const double x = d(rng), y = mod_pi(x);
        EXPECT_GT(y, -pi / 2);
        EXPECT_LE(y, pi / 2);
        EXPECT_NEAR(std::remainder(x - y, pi), 0.0, 1e-12);
    }
}

TEST(Losses, RmspeExamples)
{
    const auto truth = deg({10.0, 20.0, -35.0});
    EXPECT_EQ(rmspe(truth, truth), 0.0);
    EXPECT_EQ(rmspe(truth, deg({-35.0, 10.0, 20.0})), 0.0);
    EXPECT_NEAR(rmspe(deg({10.0, 20.0}), deg({21.0, 9.0})), deg2rad(1.0), 1e-12);
    EXPECT_THROW(rmspe(truth, deg({1.0})), DimensionError);
    EXPECT_THROW(rmspe(std::vector<double>(9, 0.0), std::vector<double>(9, 0.0)), DimensionError);
}

TEST(Losses, RmspeSymmetries)
{
    Rng rng(2);
    std::uniform_real_distribution<double> a(-1.4, 1.4);
    for (int trial = 0; trial < 200; ++trial)
    {
        std::vector<double> t(4), e(4);
        for (std::size_t i = 0; i < 4; ++i)
        {
            t[i] = a(rng);
            e[i] = a(rng);
        }
        const double r = rmspe(t, e);
        std::vector<std::size_t> perm{2, 0, 3, 1};
        std::vector<double> tp(4), ep(4);
        for (std::size_t i = 0; i < 4; ++i)
        {
            tp[i] = t[perm[i]];
            ep[i] = e[perm[i]];
        }
        EXPECT_NEAR(rmspe(tp, ep), r, 1e-15);
        std::vector<double> shifted = e;
        shifted[trial % 4] += pi;
        EXPECT_NEAR(rmspe(t, shifted), r, 1e-12);
    }
}

TEST(Losses, RmspeTieBreakIsLexicographic)
{
    const Assignment a = best_assignment(deg({0.0, 10.0}), deg({5.0, 5.0}));
    EXPECT_EQ(a.permutation, (std::vector<std::size_t>{0, 1}));
}

TEST(Losses, JainExamples)
{
    EXPECT_NEAR(jain_index(RVector::Constant(6, 2.5)), 1.0, 1e-15);
    RVector hot = RVector::Zero(5);
    hot(3) = 7.0;
    EXPECT_NEAR(jain_index(hot), 0.2, 1e-15);
    RVector v(3);
    v << 1.0, 2.0, 3.0;
    EXPECT_NEAR(jain_index(v), 6.0 / 7.0, 1e-15);
    EXPECT_THROW(jain_index(RVector::Zero(4)), ConfigError);
    EXPECT_THROW(jain_index(RVector()), DimensionError);
}

TEST(Losses, JainRangeAndGradient)
{
    Rng rng(3);
    std::exponential_distribution<double> d(1.0);
    for (int trial = 0; trial < 200; ++trial)
    {
        RVector x(2 + trial % 20);
        for (auto &v : x)
            v = d(rng);
        const double j = jain_index(x);
        EXPECT_GE(j, 1.0 / double(x.size()) - 1e-15);
        EXPECT_LE(j, 1.0 + 1e-15);
        const RVector fd = fd_gradient([](const RVector &y)
                                       { return jain_index(y); }, x);
        EXPECT_LT(relative_error(jain_index_gradient(x), fd), 1e-6);
    }
}

TEST(Losses, SlThetaNoiselessOnGrid)
{
    SimConfig c = small_config(8, 2, 100, 30.0, 3);
    c.snr_db = std::numeric_limits<double>::infinity();
    const ArrayParams phys = physical_array(c);
    const AngularGrid grid = AngularGrid(deg2rad(-90.0), deg2rad(0.05), 3600);
    Rng rng(5);
    std::vector<Scene> batch;
    for (int i = 0; i < 4; ++i)
    {
        auto thetas = sample_doas(c, rng);
        for (auto &t : thetas)
            t = grid[grid.nearest_index(t)];
        const CMatrix a = steering_matrix(phys, thetas);
        CMatrix s(2, 100);
        for (auto &v : s.reshaped())
            v = complex_normal(rng, 1.0);
        batch.push_back(Scene{thetas, a * s});
    }
    EXPECT_LT(loss_sl_theta(batch, phys, grid, 8).value, grid.step());
}

TEST(Losses, BatchMeanOfDuplicates)
{
    const SimConfig c = small_config(8, 2, 50, 10.0, 6);
    const ArrayParams phys = physical_array(c), nom = nominal_array(c);
    const Dataset one = generate_dataset(c, phys, 1, 6, 1);
    const Dataset two{one[0], one[0]};
    const AngularGrid grid = AngularGrid(deg2rad(-90.0), deg2rad(0.05), 3600);
    EXPECT_DOUBLE_EQ(loss_sl_theta(one, nom, grid, 8).value, loss_sl_theta(two, nom, grid, 8).value);
    EXPECT_DOUBLE_EQ(loss_sl_p(one, nom).value, loss_sl_p(two, nom).value);
    EXPECT_DOUBLE_EQ(loss_ul(one, nom, grid, 2, 20).value, loss_ul(two, nom, grid, 2, 20).value);
}

TEST(Losses, SlPAtExactCovariance)
{
    Rng rng(7);
    const SimConfig c = small_config(16, 5, 100, 30.0);
    const ArrayParams phys = physical_array(c);
    std::vector<Scene> batch;
    for (int i = 0; i < 3; ++i)
    {
        const auto thetas = sample_doas(c, rng);
        batch.push_back(Scene{thetas, covariance_snapshots(exact_covariance(phys, thetas, c.noise_power()))});
    }
    EXPECT_LT(loss_sl_p(batch, phys).value, -1e6 * 5.0);
}

TEST(Losses, SlPEmptyLabels)
{
    const SimConfig c = small_config();
    const ArrayParams phys = physical_array(c);
    Dataset ds = generate_dataset(c, phys, 2, 1, 1);
    const LossValue both = loss_sl_p(ds, phys);
    ds[1].thetas.clear();
    const LossValue first = loss_sl_p(ds, phys);
    const Dataset only{ds[0]};
    EXPECT_NEAR(first.value, 0.5 * loss_sl_p(only, phys).value, 1e-9 * std::abs(first.value));
    EXPECT_NE(both.value, first.value);
}

TEST(Losses, GradientsMatchFiniteDifferences)
{
    const AngularGrid grid = AngularGrid(deg2rad(-90.0), deg2rad(0.02), 9000);
    int checked = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed)
    {
        const GradientCase gc = gradient_case(seed, grid, 8);
        if (!peaks_stable(gc, grid))
            continue;
        ++checked;
        const RVector x = gc.params.to_vector();
        const GridSteering st = grid_steering(gc.params, grid);

        std::vector<std::vector<AngularMask>> masks, wide;
        for (const auto &s : gc.scenes)
        {
            masks.push_back(base_masks(s, gc.params, grid, 8));
            wide.push_back(base_masks(s, gc.params, grid, 50));
        }
        const LossValue theta = loss_sl_theta(gc.scenes, gc.params, st, 8, gc.tau);
        EXPECT_NEAR(theta.value, oracle_sl_theta(gc, masks, x), 1e-12);
        EXPECT_LT(relative_error(theta.grad, fd_gradient([&](const RVector &y)
                                                         { return oracle_sl_theta(gc, masks, y); }, x)),
                  1e-4);

        const LossValue p = loss_sl_p(gc.scenes, gc.params);
        EXPECT_LT(relative_error(p.grad, fd_gradient([&](const RVector &y)
                                                     { return oracle_sl_p(gc, y); }, x)),
                  1e-5);

        const LossValue ul = loss_ul(gc.scenes, gc.params, st, 50);
        EXPECT_NEAR(ul.value, oracle_ul(gc, wide, x), 1e-12);
        EXPECT_LT(relative_error(ul.grad, fd_gradient([&](const RVector &y)
                                                      { return oracle_ul(gc, wide, y); }, x)),
                  1e-4);
    }
    EXPECT_GE(checked, 6);
}

TEST(Losses, SlPImprovesTowardsPhysical)
{
    int monotone_seeds = 0;
    const int seeds = 10;
    for (int seed = 1; seed <= seeds; ++seed)
    {
        const SimConfig c = small_config(16, 5, 100, 30.0, std::uint64_t(seed));
        const ArrayParams phys = physical_array(c), nom = nominal_array(c);
        const auto prepared = prepare_scenes(generate_dataset(c, phys, 20, 100 + std::uint64_t(seed), 1));
        const RVector a = nom.to_vector(), b = phys.to_vector();
        double previous = std::numeric_limits<double>::infinity();
        bool monotone = true;
        for (int k = 0; k <= 20; ++k)
        {
            const double v = loss_sl_p(prepared, nom.with_vector(a + (b - a) * (k / 20.0))).value;
            monotone = monotone && v < previous;
            previous = v;
        }
        monotone_seeds += monotone ? 1 : 0;
    }
    EXPECT_GE(monotone_seeds, 9);
}

TEST(Losses, UlPrefersSharperArray)
{
    const SimConfig c = small_config(16, 5, 100, 30.0, 2);
    const ArrayParams phys = physical_array(c), nom = nominal_array(c);
    const Dataset ds = generate_dataset(c, phys, 20, 9, 1);
    const AngularGrid grid = AngularGrid(deg2rad(-90.0), deg2rad(0.05), 3600);
    EXPECT_LT(loss_ul(ds, phys, grid, 5, 40).value, loss_ul(ds, nom, grid, 5, 40).value);
}
