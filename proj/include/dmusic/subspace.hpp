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

#ifndef DMUSIC_SUBSPACE_HPP
#define DMUSIC_SUBSPACE_HPP

#include "array_model.hpp"
#include "signal_sim.hpp"

#include <Eigen/Eigenvalues>

#include <span>

namespace dmusic
{
    struct EigenDecomposition
    {
        RVector eigenvalues;  // descending
        CMatrix eigenvectors; // column i pairs with eigenvalue i
    };

    // Orthonormal basis of the noise subspace, N x (N - M)
    struct NoiseSubspace
    {
        CMatrix basis;

        Eigen::Index n_antennas() const { return basis.rows(); }
        Eigen::Index dimension() const { return basis.cols(); }
    };

    // X X^H / T, symmetrized so the result is exactly Hermitian
    inline CMatrix sample_covariance(const SnapshotMatrix &x)
    {
        if (x.cols() < 1)
            throw DimensionError("sample_covariance needs at least one snapshot");
        CMatrix gamma = x * x.adjoint() / double(x.cols());
        return (gamma + gamma.adjoint()) * 0.5;
    }

    // A diag(powers) A^H + sigma_n^2 I
    inline CMatrix model_covariance(const ArrayParams &params, std::span<const double> thetas,
                                    std::span<const double> source_powers, double noise_power)
    {
        if (thetas.size() != source_powers.size())
            throw DimensionError("model_covariance: one power per source required");
        const Eigen::Index n = params.size();
        CMatrix gamma = noise_power * CMatrix::Identity(n, n);
        if (thetas.empty())
            return gamma;
        const CMatrix a = steering_matrix(params, thetas);
        for (std::size_t m = 0; m < thetas.size(); ++m)
            gamma += source_powers[m] * a.col(Eigen::Index(m)) * a.col(Eigen::Index(m)).adjoint();
        return (gamma + gamma.adjoint()) * 0.5;
    }

    // Hermitian EVD with eigenvalues sorted descending. Each eigenvector is rotated so that its
    // largest-magnitude entry (first one on ties) is real and positive.
    inline EigenDecomposition hermitian_evd(const CMatrix &gamma)
    {
        if (gamma.rows() != gamma.cols() || gamma.rows() == 0)
            throw DimensionError("hermitian_evd needs a non-empty square matrix");
        const double scale = std::max(1.0, gamma.cwiseAbs().maxCoeff());
        if ((gamma - gamma.adjoint()).cwiseAbs().maxCoeff() > 1e-10 * scale)
            throw ConfigError("hermitian_evd: input is not Hermitian");

        const CMatrix sym = (gamma + gamma.adjoint()) * 0.5;
        Eigen::SelfAdjointEigenSolver<CMatrix> solver(sym);
        if (solver.info() != Eigen::Success)
        {
            throw NumericalError("hermitian_evd: eigen-solver did not converge",
                                 (sym * solver.eigenvectors() - solver.eigenvectors() * solver.eigenvalues().asDiagonal()).norm());
        }

        const Eigen::Index n = sym.rows();
        EigenDecomposition evd;
        evd.eigenvalues.resize(n);
        evd.eigenvectors.resize(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
        {
            const Eigen::Index src = n - 1 - i;
            evd.eigenvalues(i) = solver.eigenvalues()(src);
            CVector v = solver.eigenvectors().col(src);
            Eigen::Index k = 0;
            double best = -1.0;
            for (Eigen::Index r = 0; r < n; ++r)
            {
                if (std::abs(v(r)) > best)
                {
                    best = std::abs(v(r));
                    k = r;
                }
            }
            if (best > 0.0)
                v *= std::conj(v(k)) / best;
            v(k) = cdouble(v(k).real(), 0.0);
            evd.eigenvectors.col(i) = v;
        }
        return evd;
    }

    // The N - M eigenvectors paired with the smallest eigenvalues
    inline NoiseSubspace noise_subspace(const EigenDecomposition &evd, Eigen::Index m_sources)
    {
        const Eigen::Index n = evd.eigenvectors.rows();
        if (m_sources < 1 || m_sources >= n)
            throw DimensionError("noise_subspace: need 1 <= M < N");
        return NoiseSubspace{evd.eigenvectors.rightCols(n - m_sources)};
    }

    inline NoiseSubspace noise_subspace_of(const SnapshotMatrix &x, Eigen::Index m_sources)
    {
        return noise_subspace(hermitian_evd(sample_covariance(x)), m_sources);
    }
}

#endif
