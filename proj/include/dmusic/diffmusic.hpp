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

#ifndef DMUSIC_DIFFMUSIC_HPP
#define DMUSIC_DIFFMUSIC_HPP

#include "music.hpp"

#include <numeric>

namespace dmusic
{
    // Contiguous window of grid points around a spectrum peak
    struct AngularMask
    {
        std::size_t center_index = 0;
        std::vector<std::size_t> indices;
        std::vector<double> angles;

        std::size_t size() const { return indices.size(); }
    };

    // Window of L points centred on `center` (even L: the extra point goes to the high-angle side),
    // clipped at the grid boundaries
    inline AngularMask make_mask_at(const AngularGrid &grid, std::size_t center, std::size_t window)
    {
        if (window < 1)
            throw ConfigError("mask window size must be >= 1");
        if (center >= grid.size())
            throw DimensionError("mask centre outside the grid");
        const std::ptrdiff_t c = std::ptrdiff_t(center);
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, c - std::ptrdiff_t((window - 1) / 2));
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(std::ptrdiff_t(grid.size()) - 1, c + std::ptrdiff_t(window / 2));
        AngularMask mask;
        mask.center_index = center;
        for (std::ptrdiff_t i = lo; i <= hi; ++i)
        {
            mask.indices.push_back(std::size_t(i));
            mask.angles.push_back(grid[std::size_t(i)]);
        }
        return mask;
    }

    inline AngularMask make_mask(const AngularGrid &grid, double peak_angle, std::size_t window)
    {
        return make_mask_at(grid, grid.nearest_index(peak_angle), window);
    }

    struct DiffEstimate
    {
        std::vector<double> thetas_hat;   // ascending
        std::vector<AngularMask> masks;   // paired with thetas_hat
        std::vector<RVector> weights;     // softmax weights per mask, each sums to 1
        bool degraded = false;            // peak finder had to pad
    };

    // softmax(values / tau), shifted by the maximum so large spectrum values stay finite
    inline RVector softmax(const RVector &values, double tau)
    {
        if (!(tau > 0.0))
            throw ConfigError("softmax temperature must be positive");
        RVector w = ((values.array() - values.maxCoeff()) / tau).exp();
        return w / w.sum();
    }

    namespace detail
    {
        // Permutation that sorts thetas ascending
        inline std::vector<std::size_t> ascending_order(const std::vector<double> &thetas)
        {
            std::vector<std::size_t> order(thetas.size());
            std::iota(order.begin(), order.end(), std::size_t(0));
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b)
                             { return thetas[a] < thetas[b]; });
            return order;
        }

        inline double weighted_angle(const AngularMask &mask, const RVector &w)
        {
            double theta = 0.0;
            for (std::size_t l = 0; l < mask.size(); ++l)
                theta += w(Eigen::Index(l)) * mask.angles[l];
            return theta;
        }
    }

    // Peaks by hard argmax (no gradient), then theta_hat_i = mask_angles^T softmax(P(mask_angles) / tau)
    inline DiffEstimate diffmusic_estimate(const Spectrum &spectrum, std::size_t m, std::size_t window, double tau = 1.0)
    {
        const Peaks peaks = find_peaks(spectrum, m);
        std::vector<double> thetas;
        std::vector<AngularMask> masks;
        std::vector<RVector> weights;
        for (std::size_t idx : peaks.indices)
        {
            AngularMask mask = make_mask_at(spectrum.grid, idx, window);
            RVector values(Eigen::Index(mask.size()));
            for (std::size_t l = 0; l < mask.size(); ++l)
                values(Eigen::Index(l)) = spectrum.values(Eigen::Index(mask.indices[l]));
            RVector w = softmax(values, tau);
            thetas.push_back(detail::weighted_angle(mask, w));
            masks.push_back(std::move(mask));
            weights.push_back(std::move(w));
        }

        DiffEstimate out;
        out.degraded = peaks.degraded;
        for (std::size_t k : detail::ascending_order(thetas))
        {
            out.thetas_hat.push_back(thetas[k]);
            out.masks.push_back(std::move(masks[k]));
            out.weights.push_back(std::move(weights[k]));
        }
        return out;
    }

    // Spectrum values over a mask and their parameter Jacobian (rows: mask points, cols: 3N parameters)
    struct MaskSpectrum
    {
        RVector values;
        RMatrix jacobian;
    };

    inline MaskSpectrum mask_spectrum(const NoiseSubspace &noise, const ArrayParams &params, const AngularMask &mask)
    {
        MaskSpectrum out{RVector(Eigen::Index(mask.size())), RMatrix(Eigen::Index(mask.size()), params.n_real())};
        for (std::size_t l = 0; l < mask.size(); ++l)
        {
            const SpectrumPoint p = spectrum_gradient(noise, params, mask.angles[l]);
            out.values(Eigen::Index(l)) = p.value;
            out.jacobian.row(Eigen::Index(l)) = p.grad.transpose();
        }
        return out;
    }

    struct DiffGradient
    {
        DiffEstimate estimate;
        RMatrix jacobian; // row i: d theta_hat_i / d (Re g, Im g, p)
    };

    // diffMUSIC estimate and its gradient. Peak locations and masks come from the full-grid forward
    // pass and are constants for differentiation; inside each mask the spectrum is recomputed together
    // with its analytic gradient, so the softmax sees exactly the values being differentiated.
    //   d theta_hat / d P_l = w_l (theta_l - theta_hat) / tau
    inline DiffGradient diffmusic_gradient(const NoiseSubspace &noise, const ArrayParams &params,
                                           const GridSteering &steering, std::size_t m, std::size_t window, double tau)
    {
        const Spectrum spectrum = music_spectrum(noise, steering);
        const Peaks peaks = find_peaks(spectrum, m);

        std::vector<double> thetas;
        std::vector<AngularMask> masks;
        std::vector<RVector> weights;
        RMatrix rows(Eigen::Index(m), params.n_real());
        for (std::size_t i = 0; i < peaks.indices.size(); ++i)
        {
            AngularMask mask = make_mask_at(spectrum.grid, peaks.indices[i], window);
            const MaskSpectrum ms = mask_spectrum(noise, params, mask);
            RVector w = softmax(ms.values, tau);
            const double theta_hat = detail::weighted_angle(mask, w);
            RVector d_theta_d_p(Eigen::Index(mask.size()));
            for (std::size_t l = 0; l < mask.size(); ++l)
                d_theta_d_p(Eigen::Index(l)) = w(Eigen::Index(l)) * (mask.angles[l] - theta_hat) / tau;
            rows.row(Eigen::Index(i)) = d_theta_d_p.transpose() * ms.jacobian;
            thetas.push_back(theta_hat);
            masks.push_back(std::move(mask));
            weights.push_back(std::move(w));
        }

        DiffGradient out;
        out.estimate.degraded = peaks.degraded;
        out.jacobian.resize(Eigen::Index(m), params.n_real());
        Eigen::Index r = 0;
        for (std::size_t k : detail::ascending_order(thetas))
        {
            out.estimate.thetas_hat.push_back(thetas[k]);
            out.estimate.masks.push_back(std::move(masks[k]));
            out.estimate.weights.push_back(std::move(weights[k]));
            out.jacobian.row(r++) = rows.row(Eigen::Index(k));
        }
        return out;
    }

    inline DiffGradient estimate_gradient(const SnapshotMatrix &x, const ArrayParams &params, const AngularGrid &grid,
                                          std::size_t m, std::size_t window, double tau = 1.0)
    {
        if (x.rows() != params.size())
            throw DimensionError("estimate_gradient: snapshot rows differ from array size");
        return diffmusic_gradient(noise_subspace_of(x, Eigen::Index(m)), params, grid_steering(params, grid), m, window, tau);
    }

    // diffMUSIC DoA estimates (no gradient) on a precomputed grid steering matrix
    inline std::vector<double> diffmusic_doas(const SnapshotMatrix &x, std::size_t m, const GridSteering &steering,
                                              std::size_t window, double tau = 1.0)
    {
        const NoiseSubspace noise = noise_subspace_of(x, Eigen::Index(m));
        return diffmusic_estimate(music_spectrum(noise, steering), m, window, tau).thetas_hat;
    }
}

#endif
