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

#ifndef DMUSIC_SIGNAL_SIM_HPP
#define DMUSIC_SIGNAL_SIM_HPP

#include "array_model.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace dmusic
{
    using Rng = std::mt19937_64;

    // Snapshot block X, N x T
    using SnapshotMatrix = CMatrix;

    // Deterministic child seed: splitmix64 finalizer over (parent, index).
    // Scene i of a dataset with parent seed s is generated from Rng(child_seed(s, i)).
    constexpr std::uint64_t child_seed(std::uint64_t parent, std::uint64_t index)
    {
        std::uint64_t z = parent + (index + 1) * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Named seed streams derived from one experiment seed
    namespace streams
    {
        constexpr std::uint64_t array = 0xA11A;
        constexpr std::uint64_t train = 0x7A11;
        constexpr std::uint64_t test = 0x7E57;
        constexpr std::uint64_t shuffle = 0x5F1E;
    }

    struct SimConfig
    {
        Eigen::Index n_antennas = 16;
        Eigen::Index n_sources = 5;
        Eigen::Index n_snapshots = 100;
        double snr_db = 30.0;
        double source_power = 1.0;
        double doa_low = deg2rad(-80.0);
        double doa_high = deg2rad(80.0);
        double min_separation = deg2rad(2.0); // only applied when n_sources > 1
        double wavelength = 1.0;
        double position_spread = 0.5 * 0.5;   // eta, meters (0.5 * lambda/2 at lambda = 1)
        double gain_variance = 0.36;
        Direction direction = Direction::sin;
        std::uint64_t seed = 1;
        int max_retries = 100000;

        double noise_power() const { return source_power * std::pow(10.0, -snr_db / 10.0); }

        void validate() const
        {
            if (n_antennas < 2)
                throw ConfigError("n_antennas must be >= 2");
            if (n_sources < 1 || n_sources >= n_antennas)
                throw ConfigError("need 1 <= n_sources < n_antennas");
            if (n_snapshots < 1)
                throw ConfigError("n_snapshots must be >= 1");
            if (!(source_power > 0.0))
                throw ConfigError("source_power must be positive");
            if (!(position_spread >= 0.0) || !(gain_variance >= 0.0))
                throw ConfigError("impairment spreads must be non-negative");
            if (!(doa_low < doa_high) || doa_low < -pi / 2 || doa_high > pi / 2)
                throw ConfigError("need -pi/2 <= doa_low < doa_high <= pi/2");
            if (!(min_separation >= 0.0))
                throw ConfigError("min_separation must be non-negative");
            if (!(wavelength > 0.0))
                throw ConfigError("wavelength must be positive");
            if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity())
                throw ConfigError("snr_db must be a number above -inf");
        }
    };

    struct Scene
    {
        std::vector<double> thetas; // ascending; may be empty for unlabeled scenes
        SnapshotMatrix snapshots;   // N x T
    };

    using Dataset = std::vector<Scene>;

    // Circularly-symmetric complex Gaussian with E|z|^2 = variance
    inline cdouble complex_normal(Rng &rng, double variance)
    {
        std::normal_distribution<double> dist(0.0, std::sqrt(variance / 2.0));
        const double re = dist(rng);
        const double im = dist(rng);
        return {re, im};
    }

    // p_i = p~_i + U[-eta, eta], g_i = g~_i + CN(0, gain_var)
    inline ArrayParams sample_impaired_array(const ArrayParams &nominal, double eta, double gain_var, Rng &rng)
    {
        if (!(eta >= 0.0) || !(gain_var >= 0.0))
            throw ConfigError("sample_impaired_array: eta and gain_var must be non-negative");
        ArrayParams out = nominal;
        for (Eigen::Index i = 0; i < nominal.size(); ++i)
        {
            if (eta > 0.0)
                out.positions(i) += std::uniform_real_distribution<double>(-eta, eta)(rng);
            if (gain_var > 0.0)
                out.gains(i) += complex_normal(rng, gain_var);
        }
        out.validate();
        return out;
    }

    inline ArrayParams nominal_array(const SimConfig &config)
    {
        return nominal_ula(config.n_antennas, config.wavelength, config.direction);
    }

    // The impaired array of an experiment, drawn from the config's seed
    inline ArrayParams physical_array(const SimConfig &config)
    {
        config.validate();
        Rng rng(child_seed(config.seed, streams::array));
        return sample_impaired_array(nominal_array(config), config.position_spread, config.gain_variance, rng);
    }

    // Draws sorted DoAs uniform on [low, high], rejecting draws with a pairwise gap <= min_separation
    inline std::vector<double> sample_doas(const SimConfig &config, Rng &rng)
    {
        std::uniform_real_distribution<double> doa(config.doa_low, config.doa_high);
        const auto m = std::size_t(config.n_sources);
        std::vector<double> thetas(m);
        for (int attempt = 0; attempt < config.max_retries; ++attempt)
        {
            for (auto &t : thetas)
                t = doa(rng);
            std::sort(thetas.begin(), thetas.end());
            bool ok = true;
            for (std::size_t i = 1; i < m && ok; ++i)
            {
                const double gap = thetas[i] - thetas[i - 1];
                ok = config.min_separation > 0.0 ? gap > config.min_separation : gap > 0.0;
            }
            if (ok)
                return thetas;
        }
        throw DegenerateDoaError("could not draw DoAs with the requested minimum separation");
    }

    // X = A(theta) S + N. Draw order: DoAs, then per snapshot t the M source samples followed by the N
    // noise samples. Noise is drawn at unit scale and multiplied by sigma_n, so two configs that differ
    // only in SNR see identical DoAs and sources, and a shorter T is a prefix of a longer one.
    inline Scene generate_scene(const SimConfig &config, const ArrayParams &physical, Rng &rng)
    {
        config.validate();
        if (physical.size() != config.n_antennas)
            throw DimensionError("generate_scene: physical array size differs from n_antennas");
        Scene scene;
        scene.thetas = sample_doas(config, rng);
        const CMatrix a = steering_matrix(physical, scene.thetas);

        const Eigen::Index n = config.n_antennas, m = config.n_sources, t_count = config.n_snapshots;
        const double noise_power = config.noise_power();
        const double sigma_n = std::isfinite(noise_power) ? std::sqrt(noise_power) : 0.0;
        CVector s(m), noise(n);
        scene.snapshots.resize(n, t_count);
        for (Eigen::Index t = 0; t < t_count; ++t)
        {
            for (Eigen::Index k = 0; k < m; ++k)
                s(k) = complex_normal(rng, config.source_power);
            for (Eigen::Index i = 0; i < n; ++i)
                noise(i) = complex_normal(rng, 1.0);
            scene.snapshots.col(t) = a * s + sigma_n * noise;
        }
        return scene;
    }

    // Scene i uses Rng(child_seed(parent_seed, i)); results do not depend on `threads`
    inline Dataset generate_dataset(const SimConfig &config, const ArrayParams &physical, std::size_t n_scenes,
                                    std::uint64_t parent_seed, unsigned threads = 0)
    {
        if (n_scenes < 1)
            throw ConfigError("generate_dataset: n_scenes must be >= 1");
        config.validate();
        Dataset out(n_scenes);
        parallel_for(n_scenes, [&](std::size_t i)
                     {
            Rng rng(child_seed(parent_seed, i));
            out[i] = generate_scene(config, physical, rng); }, threads);
        return out;
    }
}

#endif
