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

#ifndef DMUSIC_MUSIC_HPP
#define DMUSIC_MUSIC_HPP

#include "array_model.hpp"
#include "parallel.hpp"
#include "subspace.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <numeric>
#include <vector>

namespace dmusic
{
    // Spectrum values are clamped to this cap; 1 / ||U_N^H a||^2 diverges on exact orthogonality
    constexpr double spectrum_cap = 1e12;

    namespace instrumentation
    {
        // Number of full-grid spectrum evaluations since process start
        inline std::atomic<std::uint64_t> full_grid_spectra{0};
        // Number of single-angle spectrum evaluations since process start
        inline std::atomic<std::uint64_t> point_spectra{0};
    }

    // Uniform angular grid, radians
    class AngularGrid
    {
    public:
        AngularGrid(double low, double step, std::size_t count) : low_(low), step_(step)
        {
            if (count < 2)
                throw ConfigError("angular grid needs at least 2 points");
            if (!(step > 0.0) || !std::isfinite(low))
                throw ConfigError("angular grid step must be positive");
            angles_.resize(count);
            for (std::size_t i = 0; i < count; ++i)
                angles_[i] = low + double(i) * step;
        }

        // `count` points spanning [low, high] inclusive
        static AngularGrid span(double low, double high, std::size_t count)
        {
            if (count < 2 || !(high > low))
                throw ConfigError("angular grid needs count >= 2 and high > low");
            return AngularGrid(low, (high - low) / double(count - 1), count);
        }

        std::size_t size() const { return angles_.size(); }
        double step() const { return step_; }
        double low() const { return low_; }
        double high() const { return angles_.back(); }
        double operator[](std::size_t i) const { return angles_[i]; }
        const std::vector<double> &angles() const { return angles_; }

        // Index of the grid point nearest to theta (clamped)
        std::size_t nearest_index(double theta) const
        {
            const double r = std::round((theta - low_) / step_);
            if (r <= 0.0)
                return 0;
            return std::min(size() - 1, std::size_t(r));
        }

    private:
        double low_;
        double step_;
        std::vector<double> angles_;
    };

    // 18000 points from -90 deg in 0.01 deg steps
    inline AngularGrid default_grid()
    {
        return AngularGrid(deg2rad(-90.0), deg2rad(0.01), 18000);
    }

    struct Spectrum
    {
        AngularGrid grid;
        RVector values;
        std::size_t capped = 0; // number of values clamped to spectrum_cap
    };

    // Steering vectors of a whole grid for one parameter set; reused across scenes
    struct GridSteering
    {
        const AngularGrid *grid = nullptr;
        CMatrix vectors; // N x N_theta
    };

    inline GridSteering grid_steering(const ArrayParams &params, const AngularGrid &grid)
    {
        return GridSteering{&grid, steering_matrix(params, grid.angles())};
    }

    namespace detail
    {
        // NaN passes through so callers can detect corrupted parameters
        inline double capped_inverse(double denom, std::size_t &capped)
        {
            if (std::isnan(denom))
                return denom;
            if (!(denom > 1.0 / spectrum_cap))
            {
                ++capped;
                return spectrum_cap;
            }
            return 1.0 / denom;
        }

        constexpr Eigen::Index spectrum_block = 512;

        // ||U_N^H a||^2 with U_N^H given as u_adj (K x N). One fixed summation order shared by the
        // grid, point and gradient paths, so they agree bitwise. U_N^H a is left in `proj`.
        inline double projection_energy(const CMatrix &u_adj, const cdouble *a, cdouble *proj)
        {
            const Eigen::Index k_dim = u_adj.rows(), n = u_adj.cols();
            const double *u = reinterpret_cast<const double *>(u_adj.data());
            double *c = reinterpret_cast<double *>(proj);
            for (Eigen::Index j = 0; j < 2 * k_dim; ++j)
                c[j] = 0.0;
            for (Eigen::Index i = 0; i < n; ++i)
            {
                const double ar = a[i].real(), ai = a[i].imag();
                const double *col = u + 2 * i * k_dim;
                for (Eigen::Index j = 0; j < k_dim; ++j)
                {
                    const double ur = col[2 * j], ui = col[2 * j + 1];
                    c[2 * j] += ur * ar - ui * ai;
                    c[2 * j + 1] += ur * ai + ui * ar;
                }
            }
            double d = 0.0;
            for (Eigen::Index j = 0; j < k_dim; ++j)
                d += c[2 * j] * c[2 * j] + c[2 * j + 1] * c[2 * j + 1];
            return d;
        }
    }

    // P(theta_g) = 1 / ||U_N^H a(theta_g)||^2 over a precomputed grid steering matrix.
    // Columns are processed in fixed blocks, so the result is identical for any thread count.
    inline Spectrum music_spectrum(const NoiseSubspace &noise, const GridSteering &steering, unsigned threads = 1)
    {
        if (steering.grid == nullptr || steering.vectors.cols() != Eigen::Index(steering.grid->size()))
            throw DimensionError("music_spectrum: grid steering does not match its grid");
        if (noise.n_antennas() != steering.vectors.rows())
            throw DimensionError("music_spectrum: noise subspace and array sizes differ");
        ++instrumentation::full_grid_spectra;

        const Eigen::Index n_theta = steering.vectors.cols();
        RVector denom(n_theta);
        const Eigen::Index n_blocks = (n_theta + detail::spectrum_block - 1) / detail::spectrum_block;
        const CMatrix u_adj = noise.basis.adjoint();
        parallel_for(std::size_t(n_blocks), [&](std::size_t b)
                     {
            const Eigen::Index lo = Eigen::Index(b) * detail::spectrum_block;
            const Eigen::Index len = std::min(detail::spectrum_block, n_theta - lo);
            CVector proj(u_adj.rows());
            for (Eigen::Index i = lo; i < lo + len; ++i)
                denom(i) = detail::projection_energy(u_adj, steering.vectors.col(i).data(), proj.data()); }, threads);

        Spectrum out{*steering.grid, RVector(n_theta), 0};
        for (Eigen::Index i = 0; i < n_theta; ++i)
            out.values(i) = detail::capped_inverse(denom(i), out.capped);
        return out;
    }

    inline Spectrum music_spectrum(const NoiseSubspace &noise, const ArrayParams &params, const AngularGrid &grid,
                                   unsigned threads = 1)
    {
        return music_spectrum(noise, grid_steering(params, grid), threads);
    }

    // Spectrum at arbitrary (off-grid) angles
    inline std::vector<double> spectrum_at(const NoiseSubspace &noise, const ArrayParams &params,
                                           std::span<const double> thetas)
    {
        if (noise.n_antennas() != params.size())
            throw DimensionError("spectrum_at: noise subspace and array sizes differ");
        std::vector<double> out;
        out.reserve(thetas.size());
        std::size_t capped = 0;
        const CMatrix u_adj = noise.basis.adjoint();
        CVector proj(u_adj.rows());
        for (double theta : thetas)
        {
            ++instrumentation::point_spectra;
            const CVector a = steering_vector(params, theta);
            out.push_back(detail::capped_inverse(detail::projection_energy(u_adj, a.data(), proj.data()), capped));
        }
        return out;
    }

    struct SpectrumPoint
    {
        double value = 0.0;
        RVector grad; // d value / d (Re g, Im g, p), length 3N
        bool capped = false;
    };

    // Spectrum value at one angle and its gradient with respect to all 3N real parameters.
    //
    // With d = a^H Q a, Q = U_N U_N^H and b = Q a:
    //   dd/dp_k    = 2 Re(conj(b_k) (-j k u) a_k)
    //   dd/dRe g_k = 2 Re(conj(b_k) phi_k) / ||g|| - 2 d Re(g_k) / ||g||^2
    //   dd/dIm g_k = 2 Re(conj(b_k) j phi_k) / ||g|| - 2 d Im(g_k) / ||g||^2
    // and dP/dx = -dd/dx / d^2. The gradient is zero where the value is capped.
    inline SpectrumPoint spectrum_gradient(const NoiseSubspace &noise, const ArrayParams &params, double theta)
    {
        const Eigen::Index n = params.size();
        if (noise.n_antennas() != n)
            throw DimensionError("spectrum_gradient: noise subspace and array sizes differ");
        ++instrumentation::point_spectra;

        const double norm = params.gain_norm();
        if (norm == 0.0)
            throw NormalizationError("all antenna gains are zero; steering normalization undefined");
        const double ku = params.wavenumber() * direction_value(params.direction, theta);
        CVector phase(n), a(n);
        for (Eigen::Index i = 0; i < n; ++i)
        {
            phase(i) = std::polar(1.0, -ku * params.positions(i));
            a(i) = params.gains(i) * std::polar(1.0 / norm, -ku * params.positions(i)); // as steering_vector
        }
        CVector proj(noise.dimension());
        const double d = detail::projection_energy(noise.basis.adjoint(), a.data(), proj.data());

        SpectrumPoint out;
        out.grad = RVector::Zero(3 * n);
        if (std::isnan(d))
        {
            out.value = d;
            out.grad.setConstant(d);
            return out;
        }
        if (!(d > 1.0 / spectrum_cap))
        {
            out.value = spectrum_cap;
            out.capped = true;
            return out;
        }
        out.value = 1.0 / d;
        const CVector b = noise.basis * proj;
        const double scale = -out.value * out.value; // dP/dd
        const double inv_norm = 1.0 / norm;
        const double inv_norm2 = inv_norm * inv_norm;
        for (Eigen::Index k = 0; k < n; ++k)
        {
            const cdouble bp = std::conj(b(k)) * phase(k);
            const double d_re = 2.0 * bp.real() * inv_norm - 2.0 * d * params.gains(k).real() * inv_norm2;
            const double d_im = -2.0 * bp.imag() * inv_norm - 2.0 * d * params.gains(k).imag() * inv_norm2;
            const double d_pos = 2.0 * (std::conj(b(k)) * cdouble(0.0, -ku) * a(k)).real();
            out.grad(k) = scale * d_re;
            out.grad(n + k) = scale * d_im;
            out.grad(2 * n + k) = scale * d_pos;
        }
        return out;
    }

    struct Peaks
    {
        std::vector<std::size_t> indices; // grid indices, descending peak value
        std::vector<double> angles;
        bool degraded = false; // fewer than m local maxima; padded from the remaining grid values
    };

    // The m largest local maxima (strictly greater than both neighbours; a boundary point needs only
    // to exceed its single neighbour). If fewer than m exist, the largest remaining grid values pad the list.
    inline Peaks find_peaks(const Spectrum &spectrum, std::size_t m)
    {
        const std::size_t n = std::size_t(spectrum.values.size());
        if (m < 1 || m > n)
            throw DimensionError("find_peaks: need 1 <= m <= grid size");
        const RVector &v = spectrum.values;
        auto by_value = [&](std::size_t a, std::size_t b)
        { return v(Eigen::Index(a)) > v(Eigen::Index(b)) || (v(Eigen::Index(a)) == v(Eigen::Index(b)) && a < b); };

        std::vector<std::size_t> maxima;
        for (std::size_t i = 0; i < n; ++i)
        {
            const double x = v(Eigen::Index(i));
            const bool above_left = i == 0 || x > v(Eigen::Index(i - 1));
            const bool above_right = i + 1 == n || x > v(Eigen::Index(i + 1));
            if (above_left && above_right)
                maxima.push_back(i);
        }

        Peaks out;
        if (maxima.size() >= m)
        {
            std::partial_sort(maxima.begin(), maxima.begin() + std::ptrdiff_t(m), maxima.end(), by_value);
            out.indices.assign(maxima.begin(), maxima.begin() + std::ptrdiff_t(m));
        }
        else
        {
            out.degraded = true;
            std::sort(maxima.begin(), maxima.end(), by_value);
            out.indices = maxima;
            std::vector<bool> taken(n, false);
            for (auto i : maxima)
                taken[i] = true;
            std::vector<std::size_t> rest;
            rest.reserve(n - maxima.size());
            for (std::size_t i = 0; i < n; ++i)
                if (!taken[i])
                    rest.push_back(i);
            const std::size_t need = m - maxima.size();
            std::partial_sort(rest.begin(), rest.begin() + std::ptrdiff_t(need), rest.end(), by_value);
            out.indices.insert(out.indices.end(), rest.begin(), rest.begin() + std::ptrdiff_t(need));
        }
        for (auto i : out.indices)
            out.angles.push_back(spectrum.grid[i]);
        return out;
    }

    // Classical MUSIC on a precomputed grid steering matrix; DoAs returned ascending
    inline std::vector<double> music_estimate(const SnapshotMatrix &x, Eigen::Index m, const GridSteering &steering)
    {
        const NoiseSubspace noise = noise_subspace_of(x, m);
        const Spectrum spectrum = music_spectrum(noise, steering);
        std::vector<double> doas = find_peaks(spectrum, std::size_t(m)).angles;
        std::sort(doas.begin(), doas.end());
        return doas;
    }

    inline std::vector<double> music_estimate(const SnapshotMatrix &x, Eigen::Index m, const AngularGrid &grid,
                                              const ArrayParams &params)
    {
        if (x.rows() != params.size())
            throw DimensionError("music_estimate: snapshot rows differ from array size");
        return music_estimate(x, m, grid_steering(params, grid));
    }
}

#endif
