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

#ifndef DMUSIC_ERROR_HPP
#define DMUSIC_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dmusic
{
    // Root of the library's exception hierarchy
    class Error : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    // Invalid configuration or precondition violation (CLI exit code 2)
    class ConfigError : public Error
    {
    public:
        using Error::Error;
    };

    // Incompatible matrix/vector dimensions or counts
    class DimensionError : public ConfigError
    {
    public:
        using ConfigError::ConfigError;
    };

    // All antenna gains are zero, so the steering normalization is undefined
    class NormalizationError : public ConfigError
    {
    public:
        using ConfigError::ConfigError;
    };

    // Rejection sampling of DoAs ran out of retries
    class DegenerateDoaError : public ConfigError
    {
    public:
        using ConfigError::ConfigError;
    };

    // Numerical failure (CLI exit code 3)
    class NumericalError : public Error
    {
    public:
        NumericalError(const std::string &what, double residual = 0.0)
            : Error(what), residual_(residual) {}
        double residual() const noexcept { return residual_; }

    private:
        double residual_;
    };

    // Non-finite loss or gradient during training
    class NonFiniteError : public NumericalError
    {
    public:
        NonFiniteError(const std::string &what, std::size_t batch_index)
            : NumericalError(what + " (batch " + std::to_string(batch_index) + ")"), batch_index_(batch_index) {}
        std::size_t batch_index() const noexcept { return batch_index_; }

    private:
        std::size_t batch_index_;
    };

    // Malformed file or document
    class FormatError : public ConfigError
    {
    public:
        using ConfigError::ConfigError;
    };
}

#endif
