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

#ifndef DMUSIC_LOSSES_HPP
#define DMUSIC_LOSSES_HPP

#include "diffmusic.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace dmusic
{
    struct LossValue
    {
        double value = 0.0;
        RVector grad; // length 3N: d/d Re g, d/d Im g, d/d p
    };

    // Wraps an angle difference into (-pi/2, pi/2]
    inline double mod_pi(double delta)
    {
        return delta - pi * std::ceil(delta / pi - 0.5);
    }

    struct Assignment
    {
        double rmspe = 0.0;
        std::vector<std::size_t> permutation; // truth[j] is paired with estimate[permutation[j]]
    };

    constexpr std::size_t max_exhaustive_sources = 8;

    // Minimum over all pairings of ||mod_pi(theta - P theta_hat)||_2 / sqrt(M), exhaustive search.
    // Ties keep the lexicographically-first permutation. Beyond 8 sources an assignment solver
    // (Hungarian algorithm) would be needed; not implemented.
    inline Assignment best_assignment(std::span<const double> truth, std::span<const double> estimate)
    {
        if (truth.size() != estimate.size())
            throw DimensionError("rmspe: truth and estimate differ in length");
        const std::size_t m = truth.size();
        if (m > max_exhaustive_sources)
            throw DimensionError("rmspe: exhaustive permutation search is limited to 8 sources");
        Assignment best;
        best.permutation.resize(m);
        std::iota(best.permutation.begin(), best.permutation.end(), std::size_t(0));
        if (m == 0)
            return best;

        std::vector<std::size_t> perm = best.permutation;
        double best_sq = std::numeric_limits<double>::infinity();
        do
        {
            double sq = 0.0;
            for (std::size_t j = 0; j < m; ++j)
            {
                const double e = mod_pi(truth[j] - estimate[perm[j]]);
                sq += e * e;
            }
            if (sq < best_sq)
            {
                best_sq = sq;
                best.permutation = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        best.rmspe = std::sqrt(best_sq / double(m));
        return best;
    }

    inline double rmspe(std::span<const double> truth, std::span<const double> estimate)
    {
        return best_assignment(truth, estimate).rmspe;
    }

    // (sum x)^2 / (n sum x^2)
    inline double jain_index(const RVector &x)
    {
        if (x.size() == 0)
            throw DimensionError("jain_index of an empty vector");
        const double s2 = x.squaredNorm();
        if (!(s2 > 0.0))
            throw ConfigError("jain_index undefined for an all-zero vector");
        const double s1 = x.sum();
        return s1 * s1 / (double(x.size()) * s2);
    }

    // d J / d x_k = 2 S1 / (n S2) - 2 S1^2 x_k / (n S2^2)
    inline RVector jain_index_gradient(const RVector &x)
    {
        const double n = double(x.size());
        const double s1 = x.sum();
        const double s2 = x.squaredNorm();
        return (2.0 * s1 / (n * s2)) * RVector::Ones(x.size()) - (2.0 * s1 * s1 / (n * s2 * s2)) * x;
    }

    // A scene with its noise subspace precomputed. The noise subspace depends on the snapshots only,
    // so it is invariant across optimization steps.
    struct PreparedScene
    {
        std::vector<double> thetas;
        NoiseSubspace noise;
        std::size_t n_sources = 0;
    };

    inline PreparedScene prepare_scene(const Scene &scene, std::size_t n_sources)
    {
        return PreparedScene{scene.thetas, noise_subspace_of(scene.snapshots, Eigen::Index(n_sources)), n_sources};
    }

    // Labeled scenes use their own source count
    inline std::vector<PreparedScene> prepare_scenes(std::span<const Scene> scenes, std::size_t n_sources = 0,
                                                     unsigned threads = 0)
    {
        std::vector<PreparedScene> out(scenes.size());
        parallel_for(scenes.size(), [&](std::size_t i)
                     {
            const std::size_t m = n_sources > 0 ? n_sources : scenes[i].thetas.size();
            if (m == 0)
                throw ConfigError("scene has no labels and no source count was given");
            out[i] = prepare_scene(scenes[i], m); }, threads);
        return out;
    }

    namespace detail
    {
        template <typename Term>
        LossValue batch_mean(std::size_t count, Eigen::Index n_real, Term &&term, unsigned threads)
        {
            if (count == 0)
                throw ConfigError("loss over an empty batch");
            std::vector<LossValue> parts(count);
            parallel_for(count, [&](std::size_t i)
                         { parts[i] = term(i); }, threads);
            LossValue out{0.0, RVector::Zero(n_real)};
            for (const auto &p : parts) // fixed scene order
            {
                out.value += p.value;
                out.grad += p.grad;
            }
            out.value /= double(count);
            out.grad /= double(count);
            return out;
        }
    }

    // Per-scene RMSPE of the diffMUSIC estimate, differentiated through the winning permutation only
    inline LossValue scene_loss_sl_theta(const PreparedScene &scene, const ArrayParams &params,
                                         const GridSteering &steering, std::size_t window, double tau)
    {
        const DiffGradient dg = diffmusic_gradient(scene.noise, params, steering, scene.n_sources, window, tau);
        const Assignment best = best_assignment(scene.thetas, dg.estimate.thetas_hat);
        LossValue out{best.rmspe, RVector::Zero(params.n_real())};
        if (best.rmspe > 0.0)
        {
            const double m = double(scene.thetas.size());
            for (std::size_t j = 0; j < scene.thetas.size(); ++j)
            {
                const std::size_t k = best.permutation[j];
                const double e = mod_pi(scene.thetas[j] - dg.estimate.thetas_hat[k]);
                out.grad -= (e / (m * best.rmspe)) * dg.jacobian.row(Eigen::Index(k)).transpose();
            }
        }
        return out;
    }

    inline LossValue loss_sl_theta(std::span<const PreparedScene> batch, const ArrayParams &params,
                                   const GridSteering &steering, std::size_t window, double tau, unsigned threads = 1)
    {
        return detail::batch_mean(batch.size(), params.n_real(), [&](std::size_t i)
                                  { return scene_loss_sl_theta(batch[i], params, steering, window, tau); }, threads);
    }

    inline LossValue loss_sl_theta(std::span<const Scene> batch, const ArrayParams &params, const AngularGrid &grid,
                                   std::size_t window, double tau = 1.0)
    {
        const auto prepared = prepare_scenes(batch, 0, 1);
        return loss_sl_theta(prepared, params, grid_steering(params, grid), window, tau);
    }

    // -sum_i P(theta_i) for one scene; never touches an angular grid
    inline LossValue scene_loss_sl_p(const PreparedScene &scene, const ArrayParams &params)
    {
        LossValue out{0.0, RVector::Zero(params.n_real())};
        for (double theta : scene.thetas)
        {
            const SpectrumPoint p = spectrum_gradient(scene.noise, params, theta);
            out.value -= p.value;
            out.grad -= p.grad;
        }
        return out;
    }

    inline LossValue loss_sl_p(std::span<const PreparedScene> batch, const ArrayParams &params, unsigned threads = 1)
    {
        return detail::batch_mean(batch.size(), params.n_real(), [&](std::size_t i)
                                  { return scene_loss_sl_p(batch[i], params); }, threads);
    }

    // Scenes with an empty DoA list contribute zero
    inline LossValue loss_sl_p(std::span<const Scene> batch, const ArrayParams &params)
    {
        return detail::batch_mean(batch.size(), params.n_real(), [&](std::size_t i)
                                  {
            if (batch[i].thetas.empty())
                return LossValue{0.0, RVector::Zero(params.n_real())};
            return scene_loss_sl_p(prepare_scene(batch[i], batch[i].thetas.size()), params); }, 1);
    }

    // Sum over the scene's masks of the Jain index of the masked spectrum; masks come from the
    // current forward pass and are held fixed for the gradient
    inline LossValue scene_loss_ul(const PreparedScene &scene, const ArrayParams &params, const GridSteering &steering,
                                   std::size_t window)
    {
        const Spectrum spectrum = music_spectrum(scene.noise, steering);
        const Peaks peaks = find_peaks(spectrum, scene.n_sources);
        LossValue out{0.0, RVector::Zero(params.n_real())};
        for (std::size_t idx : peaks.indices)
        {
            const AngularMask mask = make_mask_at(spectrum.grid, idx, window);
            const MaskSpectrum ms = mask_spectrum(scene.noise, params, mask);
            out.value += jain_index(ms.values);
            out.grad += ms.jacobian.transpose() * jain_index_gradient(ms.values);
        }
        return out;
    }

    inline LossValue loss_ul(std::span<const PreparedScene> batch, const ArrayParams &params,
                             const GridSteering &steering, std::size_t window, unsigned threads = 1)
    {
        return detail::batch_mean(batch.size(), params.n_real(), [&](std::size_t i)
                                  { return scene_loss_ul(batch[i], params, steering, window); }, threads);
    }

    // DoA labels are ignored; every scene is assumed to hold m sources
    inline LossValue loss_ul(std::span<const Scene> batch, const ArrayParams &params, const AngularGrid &grid,
                             std::size_t m, std::size_t window)
    {
        const auto prepared = prepare_scenes(batch, m, 1);
        return loss_ul(prepared, params, grid_steering(params, grid), window);
    }
}

#endif
