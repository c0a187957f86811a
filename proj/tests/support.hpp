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


// Oracles shared by the unit and acceptance suites: central finite differences, random arrays,
// exact model covariances.

#ifndef DMUSIC_TEST_SUPPORT_HPP
#define DMUSIC_TEST_SUPPORT_HPP

#include <dmusic/experiment.hpp>

#include <functional>

namespace dmusic::testing
{
    constexpr double fd_step = 1e-6;

    // Central differences of a scalar function of the packed 3N parameter vector
    inline RVector fd_gradient(const std::function<double(const RVector &)> &f, const RVector &x, double h = fd_step)
    {
        RVector g(x.size());
        RVector xp = x, xm = x;
        for (Eigen::Index k = 0; k < x.size(); ++k)
        {
            xp(k) = x(k) + h;
            xm(k) = x(k) - h;
            g(k) = (f(xp) - f(xm)) / (2.0 * h);
            xp(k) = x(k);
            xm(k) = x(k);
        }
        return g;
    }

    // Elementwise relative error with a floor: |a_k - f_k| / max(|f_k|, floor * max_k |f_k|).
    // Components far below the gradient's scale are compared at the floor, where the
    // finite-difference rounding error lives.
    inline double relative_error(const RVector &analytic, const RVector &fd, double floor = 1e-3)
    {
        const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-300);
        double worst = 0.0;
        for (Eigen::Index k = 0; k < fd.size(); ++k)
            worst = std::max(worst, std::abs(analytic(k) - fd(k)) / std::max(std::abs(fd(k)), floor * scale));
        return worst;
    }

    // Same with the floor taken over a whole Jacobian (one row per estimate); a spurious flat peak
    // has a gradient orders of magnitude below the others
    inline double relative_error(const RMatrix &analytic, const RMatrix &fd, double floor = 1e-3)
    {
        const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-300);
        double worst = 0.0;
        for (Eigen::Index i = 0; i < fd.rows(); ++i)
            for (Eigen::Index k = 0; k < fd.cols(); ++k)
                worst = std::max(worst, std::abs(analytic(i, k) - fd(i, k)) / std::max(std::abs(fd(i, k)), floor * scale));
        return worst;
    }

    inline ArrayParams random_array(Rng &rng, Eigen::Index n, double eta = 0.25, double gain_var = 0.36)
    {
        return sample_impaired_array(nominal_ula(n), eta, gain_var, rng);
    }

    // sigma_s^2 A A^H + sigma_n^2 I
    inline CMatrix exact_covariance(const ArrayParams &params, std::span<const double> thetas, double noise_power,
                                    double source_power = 1.0)
    {
        std::vector<double> powers(thetas.size(), source_power);
        return model_covariance(params, thetas, powers, noise_power);
    }

    // Snapshot matrix whose sample covariance equals `gamma` exactly (X = Gamma^(1/2) sqrt(N))
    inline SnapshotMatrix covariance_snapshots(const CMatrix &gamma)
    {
        const EigenDecomposition evd = hermitian_evd(gamma);
        const RVector root = evd.eigenvalues.cwiseMax(0.0).cwiseSqrt();
        const double t = double(gamma.rows());
        return evd.eigenvectors * root.cast<cdouble>().asDiagonal() * std::sqrt(t);
    }

    inline SimConfig small_config(Eigen::Index n = 8, Eigen::Index m = 2, Eigen::Index t = 50, double snr_db = 20.0,
                                  std::uint64_t seed = 1)
    {
        SimConfig c;
        c.n_antennas = n;
        c.n_sources = m;
        c.n_snapshots = t;
        c.snr_db = snr_db;
        c.seed = seed;
        return c;
    }

    // One gradient-check configuration: N = 8, M = 2, T = 50, 20 dB, the physical array jittered by a
    // small random offset so the parameters sit away from the optimum
    struct GradientCase
    {
        ArrayParams params;
        std::vector<PreparedScene> scenes;
        double tau = 1.0; // of the order of the spectrum's spread over the masks
    };

    inline GradientCase gradient_case(std::uint64_t seed, const AngularGrid &grid, std::size_t window,
                                      std::size_t n_scenes = 2)
    {
        const SimConfig c = small_config(8, 2, 50, 20.0, seed);
        const ArrayParams phys = physical_array(c);
        Rng rng(child_seed(seed, 0xF0));
        GradientCase out;
        out.params = sample_impaired_array(phys, 0.005, 1e-4, rng);
        const Dataset ds = generate_dataset(c, phys, n_scenes, child_seed(seed, 0xF1), 1);
        out.scenes = prepare_scenes(ds, 0, 1);
        // A saturated softmax has an identically zero gradient and a nearly uniform one is
        // dominated by finite-difference rounding; tau at the spectrum's spread over the masks
        // exercises every term.
        const GridSteering st = grid_steering(out.params, grid);
        double spread = 0.0;
        for (const auto &s : out.scenes)
            for (std::size_t idx : find_peaks(music_spectrum(s.noise, st), s.n_sources).indices)
            {
                const RVector v = mask_spectrum(s.noise, out.params, make_mask_at(grid, idx, window)).values;
                spread = std::max(spread, v.maxCoeff() - v.minCoeff());
            }
        out.tau = spread > 0.0 ? spread : 1.0;
        return out;
    }

    // True when no +-h perturbation of a single parameter moves any detected peak
    inline bool peaks_stable(const GradientCase &gc, const AngularGrid &grid, double h = fd_step)
    {
        std::vector<std::vector<std::size_t>> base;
        const GridSteering st = grid_steering(gc.params, grid);
        for (const auto &s : gc.scenes)
            base.push_back(find_peaks(music_spectrum(s.noise, st), s.n_sources).indices);
        const RVector x = gc.params.to_vector();
        for (Eigen::Index k = 0; k < x.size(); ++k)
            for (double sign : {-1.0, 1.0})
            {
                RVector y = x;
                y(k) += sign * h;
                const ArrayParams q = gc.params.with_vector(y);
                const GridSteering sq = grid_steering(q, grid);
                for (std::size_t i = 0; i < gc.scenes.size(); ++i)
                    if (find_peaks(music_spectrum(gc.scenes[i].noise, sq), gc.scenes[i].n_sources).indices != base[i])
                        return false;
            }
        return true;
    }

    // Fixed masks of one scene at the base parameters, ascending by centre angle
    inline std::vector<AngularMask> base_masks(const PreparedScene &s, const ArrayParams &params, const AngularGrid &grid,
                                               std::size_t window)
    {
        std::vector<std::size_t> idx = find_peaks(music_spectrum(s.noise, params, grid), s.n_sources).indices;
        std::sort(idx.begin(), idx.end());
        std::vector<AngularMask> out;
        for (std::size_t i : idx)
            out.push_back(make_mask_at(grid, i, window));
        return out;
    }

    // Offset of the softmax estimate from the mask's first angle. Evaluating the offset rather than
    // the absolute angle keeps the finite differences clear of cancellation.
    inline double estimate_offset(const PreparedScene &s, const ArrayParams &q, const AngularMask &mask, double tau)
    {
        const std::vector<double> p = spectrum_at(s.noise, q, mask.angles);
        const double top = *std::max_element(p.begin(), p.end());
        double num = 0.0, den = 0.0;
        for (std::size_t l = 0; l < p.size(); ++l)
        {
            const double w = std::exp((p[l] - top) / tau);
            num += w * (mask.angles[l] - mask.angles[0]);
            den += w;
        }
        return num / den;
    }

    // Brute-force RMSPE from the truth-minus-mask-origin differences and the estimate offsets
    inline double oracle_rmspe(const PreparedScene &s, const std::vector<AngularMask> &masks,
                               const std::vector<double> &offsets)
    {
        std::vector<std::size_t> perm(masks.size());
        std::iota(perm.begin(), perm.end(), std::size_t(0));
        double best = std::numeric_limits<double>::infinity();
        do
        {
            double sq = 0.0;
            for (std::size_t j = 0; j < perm.size(); ++j)
            {
                const double e = mod_pi((s.thetas[j] - masks[perm[j]].angles[0]) - offsets[perm[j]]);
                sq += e * e;
            }
            best = std::min(best, sq);
        } while (std::next_permutation(perm.begin(), perm.end()));
        return std::sqrt(best / double(perm.size()));
    }

    inline double oracle_sl_theta(const GradientCase &gc, const std::vector<std::vector<AngularMask>> &masks,
                                  const RVector &x)
    {
        const ArrayParams q = gc.params.with_vector(x);
        double sum = 0.0;
        for (std::size_t i = 0; i < gc.scenes.size(); ++i)
        {
            std::vector<double> offsets;
            for (const auto &m : masks[i])
                offsets.push_back(estimate_offset(gc.scenes[i], q, m, gc.tau));
            sum += oracle_rmspe(gc.scenes[i], masks[i], offsets);
        }
        return sum / double(gc.scenes.size());
    }

    inline double oracle_sl_p(const GradientCase &gc, const RVector &x)
    {
        const ArrayParams q = gc.params.with_vector(x);
        double sum = 0.0;
        for (const auto &s : gc.scenes)
            for (double v : spectrum_at(s.noise, q, s.thetas))
                sum -= v;
        return sum / double(gc.scenes.size());
    }

    inline double oracle_ul(const GradientCase &gc, const std::vector<std::vector<AngularMask>> &masks, const RVector &x)
    {
        const ArrayParams q = gc.params.with_vector(x);
        double sum = 0.0;
        for (std::size_t i = 0; i < gc.scenes.size(); ++i)
            for (const auto &m : masks[i])
            {
                const std::vector<double> p = spectrum_at(gc.scenes[i].noise, q, m.angles);
                double s1 = 0.0, s2 = 0.0;
                for (double v : p)
                {
                    s1 += v;
                    s2 += v * v;
                }
                sum += s1 * s1 / (double(p.size()) * s2);
            }
        return sum / double(gc.scenes.size());
    }
}

#endif
