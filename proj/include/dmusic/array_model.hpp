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

#ifndef DMUSIC_ARRAY_MODEL_HPP
#define DMUSIC_ARRAY_MODEL_HPP

#include "error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <string_view>

namespace dmusic
{
    using cdouble = std::complex<double>;
    using CVector = Eigen::VectorXcd;
    using CMatrix = Eigen::MatrixXcd;
    using RVector = Eigen::VectorXd;
    using RMatrix = Eigen::MatrixXd;

    // Steering vector of one direction, unit Euclidean norm
    using SteeringVector = CVector;

    constexpr double pi = std::numbers::pi;
    constexpr double deg2rad(double deg) { return deg * pi / 180.0; }
    constexpr double rad2deg(double rad) { return rad * 180.0 / pi; }

    // Direction function u(theta) mapping an angle to the phase-progression coordinate.
    //   sin: theta measured from broadside, bijective on [-pi/2, pi/2] (default)
    //   cos: theta measured from the array axis, even in theta
    enum class Direction
    {
        sin,
        cos
    };

    inline double direction_value(Direction d, double theta)
    {
        return d == Direction::sin ? std::sin(theta) : std::cos(theta);
    }

    inline std::string_view to_string(Direction d)
    {
        return d == Direction::sin ? "sin" : "cos";
    }

    inline Direction direction_from_string(std::string_view s)
    {
        if (s == "sin")
            return Direction::sin;
        if (s == "cos")
            return Direction::cos;
        throw ConfigError("unknown direction function '" + std::string(s) + "' (expected sin or cos)");
    }

    // Physical parametrization of a linear array: one complex gain and one axial position per antenna.
    //
    // The 3N real degrees of freedom are packed as [Re g_0..Re g_{N-1}, Im g_0..Im g_{N-1}, p_0..p_{N-1}]
    // by to_vector() / with_vector(); gradients throughout the library use the same layout.
    struct ArrayParams
    {
        CVector gains;                         // dimensionless
        RVector positions;                     // meters along the array axis
        double wavelength = 1.0;               // meters
        Direction direction = Direction::sin;  // u(theta)

        Eigen::Index size() const { return gains.size(); }
        Eigen::Index n_real() const { return 3 * gains.size(); }

        double gain_norm() const { return gains.norm(); }

        // Throws ConfigError / NormalizationError when invariants are violated
        void validate() const
        {
            if (gains.size() < 2)
                throw DimensionError("array needs at least 2 antennas");
            if (positions.size() != gains.size())
                throw DimensionError("gains and positions differ in length");
            if (!(wavelength > 0.0) || !std::isfinite(wavelength))
                throw ConfigError("wavelength must be positive and finite");
            if (!gains.allFinite() || !positions.allFinite())
                throw ConfigError("array parameters must be finite");
            if (gains.squaredNorm() == 0.0)
                throw NormalizationError("all antenna gains are zero; steering normalization undefined");
        }

        RVector to_vector() const
        {
            const Eigen::Index n = size();
            RVector v(3 * n);
            v.segment(0, n) = gains.real();
            v.segment(n, n) = gains.imag();
            v.segment(2 * n, n) = positions;
            return v;
        }

        ArrayParams with_vector(const RVector &v) const
        {
            const Eigen::Index n = size();
            if (v.size() != 3 * n)
                throw DimensionError("parameter vector length must be 3N");
            ArrayParams out = *this;
            for (Eigen::Index i = 0; i < n; ++i)
                out.gains(i) = cdouble(v(i), v(n + i));
            out.positions = v.segment(2 * n, n);
            return out;
        }

        double wavenumber() const { return 2.0 * pi / wavelength; }

        bool operator==(const ArrayParams &o) const
        {
            return wavelength == o.wavelength && direction == o.direction && gains.size() == o.gains.size() &&
                   positions.size() == o.positions.size() && gains == o.gains && positions == o.positions;
        }
    };

    // Uniform linear array with half-wavelength spacing, antenna i at i*lambda/2, unit gains
    inline ArrayParams nominal_ula(Eigen::Index n_antennas, double wavelength = 1.0, Direction direction = Direction::sin)
    {
        ArrayParams p;
        p.gains = CVector::Constant(n_antennas, cdouble(1.0, 0.0));
        p.positions.resize(n_antennas);
        for (Eigen::Index i = 0; i < n_antennas; ++i)
            p.positions(i) = double(i) * wavelength / 2.0;
        p.wavelength = wavelength;
        p.direction = direction;
        p.validate();
        return p;
    }

    // a_i(theta) = g_i exp(-j k p_i u(theta)) / ||g||
    inline SteeringVector steering_vector(const ArrayParams &params, double theta)
    {
        const double norm = params.gain_norm();
        if (norm == 0.0)
            throw NormalizationError("all antenna gains are zero; steering normalization undefined");
        const double ku = params.wavenumber() * direction_value(params.direction, theta);
        const Eigen::Index n = params.size();
        SteeringVector a(n);
        for (Eigen::Index i = 0; i < n; ++i)
            a(i) = params.gains(i) * std::polar(1.0 / norm, -ku * params.positions(i));
        return a;
    }

    // Column m is the steering vector of thetas[m]
    inline CMatrix steering_matrix(const ArrayParams &params, std::span<const double> thetas)
    {
        if (thetas.empty())
            throw DimensionError("steering_matrix needs at least one angle");
        const double norm = params.gain_norm();
        if (norm == 0.0)
            throw NormalizationError("all antenna gains are zero; steering normalization undefined");
        const Eigen::Index n = params.size();
        const double k = params.wavenumber();
        CMatrix a(n, Eigen::Index(thetas.size()));
        for (Eigen::Index m = 0; m < a.cols(); ++m)
        {
            const double ku = k * direction_value(params.direction, thetas[std::size_t(m)]);
            for (Eigen::Index i = 0; i < n; ++i)
                a(i, m) = params.gains(i) * std::polar(1.0 / norm, -ku * params.positions(i));
        }
        return a;
    }

    // Partial derivatives of a steering vector: entry (i, k) is d a_i / d (parameter k)
    struct SteeringJacobian
    {
        CMatrix d_re_gain;
        CMatrix d_im_gain;
        CMatrix d_position; // diagonal
    };

    inline SteeringJacobian steering_jacobian(const ArrayParams &params, double theta)
    {
        const double norm = params.gain_norm();
        if (norm == 0.0)
            throw NormalizationError("all antenna gains are zero; steering normalization undefined");
        const Eigen::Index n = params.size();
        const double ku = params.wavenumber() * direction_value(params.direction, theta);

        CVector phase(n); // exp(-j k p_i u)
        for (Eigen::Index i = 0; i < n; ++i)
            phase(i) = std::polar(1.0, -ku * params.positions(i));
        const CVector a = params.gains.cwiseProduct(phase) / norm;

        SteeringJacobian jac;
        // d(1/||g||)/d Re g_k = -Re g_k / ||g||^3, couples every entry
        const double inv_norm2 = 1.0 / (norm * norm);
        jac.d_re_gain = -a * params.gains.real().transpose().cast<cdouble>() * inv_norm2;
        jac.d_im_gain = -a * params.gains.imag().transpose().cast<cdouble>() * inv_norm2;
        jac.d_position = CMatrix::Zero(n, n);
        const cdouble j(0.0, 1.0);
        for (Eigen::Index i = 0; i < n; ++i)
        {
            jac.d_re_gain(i, i) += phase(i) / norm;
            jac.d_im_gain(i, i) += j * phase(i) / norm;
            jac.d_position(i, i) = -j * ku * a(i);
        }
        return jac;
    }

    // Removes the gauge freedoms (global complex gain factor, global position offset) of `learned`
    // relative to `reference`: positions are shifted so the mean shift is zero, gains are scaled by
    // the least-squares complex factor c minimizing ||c g_learned - g_reference||.
    inline ArrayParams gauge_align(const ArrayParams &learned, const ArrayParams &reference)
    {
        if (learned.size() != reference.size())
            throw DimensionError("gauge_align: arrays differ in size");
        ArrayParams out = learned;
        const double offset = (learned.positions - reference.positions).mean();
        out.positions.array() -= offset;
        const double g2 = learned.gains.squaredNorm();
        if (g2 == 0.0)
            throw NormalizationError("gauge_align: all gains zero");
        const cdouble c = learned.gains.dot(reference.gains) / g2; // dot conjugates the first argument
        out.gains = learned.gains * c;
        return out;
    }

    // Canonical gauge without a reference: g_0 real positive, ||g|| = sqrt(N), and positions shifted so
    // that their mean matches `nominal`'s mean.
    inline ArrayParams gauge_fix(const ArrayParams &params, const ArrayParams &nominal)
    {
        if (params.size() != nominal.size())
            throw DimensionError("gauge_fix: arrays differ in size");
        ArrayParams out = params;
        out.positions.array() += nominal.positions.mean() - params.positions.mean();
        const double norm = params.gain_norm();
        if (norm == 0.0)
            throw NormalizationError("gauge_fix: all gains zero");
        const double phase = std::abs(params.gains(0)) > 0.0 ? std::arg(params.gains(0)) : 0.0;
        out.gains = params.gains * std::polar(std::sqrt(double(params.size())) / norm, -phase);
        return out;
    }
}

#endif
