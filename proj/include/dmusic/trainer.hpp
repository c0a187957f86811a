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

#ifndef DMUSIC_TRAINER_HPP
#define DMUSIC_TRAINER_HPP

#include "losses.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace dmusic
{
    enum class LossKind
    {
        sl_theta,
        sl_p,
        ul
    };

    enum class OptimizerKind
    {
        sgd,
        momentum,
        adaptive
    };

    enum class Estimator
    {
        music,
        diffmusic
    };

    inline std::string_view to_string(LossKind k)
    {
        switch (k)
        {
        case LossKind::sl_theta:
            return "sl_theta";
        case LossKind::sl_p:
            return "sl_p";
        default:
            return "ul";
        }
    }

    inline LossKind loss_kind_from_string(std::string_view s)
    {
        if (s == "sl_theta")
            return LossKind::sl_theta;
        if (s == "sl_p")
            return LossKind::sl_p;
        if (s == "ul")
            return LossKind::ul;
        throw ConfigError("unknown loss '" + std::string(s) + "' (expected sl_theta, sl_p or ul)");
    }

    inline std::string_view to_string(OptimizerKind k)
    {
        switch (k)
        {
        case OptimizerKind::sgd:
            return "sgd";
        case OptimizerKind::momentum:
            return "momentum";
        default:
            return "adaptive";
        }
    }

    inline OptimizerKind optimizer_kind_from_string(std::string_view s)
    {
        if (s == "sgd")
            return OptimizerKind::sgd;
        if (s == "momentum")
            return OptimizerKind::momentum;
        if (s == "adaptive")
            return OptimizerKind::adaptive;
        throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected sgd, momentum or adaptive)");
    }

    inline std::string_view to_string(Estimator e)
    {
        return e == Estimator::music ? "music" : "diffmusic";
    }

    inline Estimator estimator_from_string(std::string_view s)
    {
        if (s == "music")
            return Estimator::music;
        if (s == "diffmusic")
            return Estimator::diffmusic;
        throw ConfigError("unknown estimator '" + std::string(s) + "' (expected music or diffmusic)");
    }

    // Model-selection criterion on the validation split
    enum class ValidationMetric
    {
        loss,  // the training loss evaluated on the validation scenes
        rmspe  // mean MUSIC RMSPE with the current parameters (needs labels)
    };

    inline std::string_view to_string(ValidationMetric v)
    {
        return v == ValidationMetric::loss ? "loss" : "rmspe";
    }

    inline ValidationMetric validation_metric_from_string(std::string_view s)
    {
        if (s == "loss")
            return ValidationMetric::loss;
        if (s == "rmspe")
            return ValidationMetric::rmspe;
        throw ConfigError("unknown validation metric '" + std::string(s) + "' (expected loss or rmspe)");
    }

    // Grid description kept separate from AngularGrid so configs stay plain data
    struct GridSpec
    {
        double low_deg = -90.0;
        double step_deg = 0.01;
        std::size_t count = 18000;

        AngularGrid make() const { return AngularGrid(deg2rad(low_deg), deg2rad(step_deg), count); }
    };

    struct TrainConfig
    {
        LossKind loss = LossKind::sl_p;
        OptimizerKind optimizer = OptimizerKind::adaptive;
        std::size_t epochs = 100;
        std::size_t batch_size = 32;
        double lr_gain = 1e-3;
        double lr_pos = 1e-3 * 0.5; // meters; 1e-3 * lambda/2 at lambda = 1
        double momentum = 0.9;      // momentum / first-moment decay
        double beta2 = 0.999;       // second-moment decay (adaptive)
        double epsilon = 1e-8;
        std::size_t window = 8;     // L
        double tau = 1.0;
        GridSpec grid;
        std::uint64_t seed = 1;
        std::size_t patience = 0;   // epochs without validation improvement before stopping; 0 disables
        double validation_fraction = 0.1;
        ValidationMetric selection = ValidationMetric::loss;
        std::size_t n_sources = 0;  // required for ul on unlabeled scenes; 0 = take from labels
        unsigned threads = 0;

        void validate() const
        {
            if (epochs < 1)
                throw ConfigError("epochs must be >= 1");
            if (batch_size < 1)
                throw ConfigError("batch_size must be >= 1");
            if (!(lr_gain > 0.0) || !(lr_pos > 0.0))
                throw ConfigError("step sizes must be positive");
            if (window < 1)
                throw ConfigError("window must be >= 1");
            if (!(tau > 0.0))
                throw ConfigError("tau must be positive");
            if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
                throw ConfigError("validation_fraction must lie in [0, 1)");
            if (!(momentum >= 0.0 && momentum < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
                throw ConfigError("moment decay rates must lie in [0, 1)");
        }
    };

    struct EpochRecord
    {
        std::size_t epoch = 0;
        double train_loss = 0.0;   // mean over the epoch's batches (NaN at epoch 0)
        double val_loss = 0.0;
        double val_rmspe_deg = 0.0; // NaN when validation scenes carry no labels
        double seconds = 0.0;
    };

    struct TrainReport
    {
        EpochRecord start;               // validation of the starting parameters (epoch 0)
        std::vector<EpochRecord> epochs; // one record per epoch actually run
        ArrayParams initial;
        ArrayParams final_params; // best on validation
        std::size_t best_epoch = 0;
        std::size_t steps = 0;
        double step_seconds = 0.0;                  // total wall time spent in optimization steps
        std::uint64_t step_grid_evaluations = 0;    // full-grid spectra computed inside optimization steps
        std::uint64_t validation_grid_evaluations = 0;
    };

    // First-order update rules over the packed 3N parameter vector
    class Optimizer
    {
    public:
        Optimizer(const TrainConfig &config, Eigen::Index n_antennas)
            : kind_(config.optimizer), beta1_(config.momentum), beta2_(config.beta2), eps_(config.epsilon),
              lr_(3 * n_antennas), m_(RVector::Zero(3 * n_antennas)), v_(RVector::Zero(3 * n_antennas))
        {
            lr_.head(2 * n_antennas).setConstant(config.lr_gain);
            lr_.tail(n_antennas).setConstant(config.lr_pos);
        }

        void step(RVector &x, const RVector &grad)
        {
            ++t_;
            switch (kind_)
            {
            case OptimizerKind::sgd:
                x -= lr_.cwiseProduct(grad);
                break;
            case OptimizerKind::momentum:
                m_ = beta1_ * m_ + grad;
                x -= lr_.cwiseProduct(m_);
                break;
            case OptimizerKind::adaptive:
            {
                m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
                v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
                const double c1 = 1.0 - std::pow(beta1_, double(t_));
                const double c2 = 1.0 - std::pow(beta2_, double(t_));
                const RVector m_hat = m_ / c1;
                const RVector v_hat = v_ / c2;
                x.array() -= lr_.array() * m_hat.array() / (v_hat.array().sqrt() + eps_);
                break;
            }
            }
        }

    private:
        OptimizerKind kind_;
        double beta1_, beta2_, eps_;
        RVector lr_, m_, v_;
        long t_ = 0;
    };

    // Per-scene RMSPE in radians (scenes must carry labels)
    inline std::vector<double> scene_errors(std::span<const Scene> dataset, const ArrayParams &params, Estimator estimator,
                                            const AngularGrid &grid, std::size_t window = 1, double tau = 1.0,
                                            unsigned threads = 0)
    {
        const GridSteering steering = grid_steering(params, grid);
        std::vector<double> out(dataset.size());
        parallel_for(dataset.size(), [&](std::size_t i)
                     {
            const Scene &s = dataset[i];
            const std::size_t m = s.thetas.size();
            if (m == 0)
                throw ConfigError("evaluation needs labeled scenes");
            const std::vector<double> est = estimator == Estimator::music
                                                ? music_estimate(s.snapshots, Eigen::Index(m), steering)
                                                : diffmusic_doas(s.snapshots, m, steering, window, tau);
            out[i] = rmspe(s.thetas, est); }, threads);
        return out;
    }

    // Mean RMSPE over the dataset, degrees
    inline double evaluate(std::span<const Scene> dataset, const ArrayParams &params, Estimator estimator,
                           const AngularGrid &grid, std::size_t window = 1, double tau = 1.0, unsigned threads = 0)
    {
        const auto errors = scene_errors(dataset, params, estimator, grid, window, tau, threads);
        double sum = 0.0;
        for (double e : errors)
            sum += e;
        return rad2deg(sum / double(errors.size()));
    }

    inline double median(std::vector<double> values)
    {
        if (values.empty())
            throw DimensionError("median of an empty list");
        const std::size_t mid = values.size() / 2;
        std::nth_element(values.begin(), values.begin() + std::ptrdiff_t(mid), values.end());
        double hi = values[mid];
        if (values.size() % 2 == 1)
            return hi;
        const double lo = *std::max_element(values.begin(), values.begin() + std::ptrdiff_t(mid));
        return 0.5 * (lo + hi);
    }

    namespace detail
    {
        inline LossValue batch_loss(LossKind kind, std::span<const PreparedScene> batch, const ArrayParams &params,
                                    const AngularGrid &grid, const TrainConfig &config)
        {
            switch (kind)
            {
            case LossKind::sl_p:
                return loss_sl_p(batch, params, config.threads);
            case LossKind::sl_theta:
                return loss_sl_theta(batch, params, grid_steering(params, grid), config.window, config.tau, config.threads);
            default:
                return loss_ul(batch, params, grid_steering(params, grid), config.window, config.threads);
            }
        }
    }

    // Mini-batch gradient descent over the 3N array parameters starting from `nominal`.
    // Deterministic for a given (dataset, config): fixed split, fixed shuffling, fixed reduction order.
    inline TrainReport train(std::span<const Scene> dataset, const ArrayParams &nominal, const TrainConfig &config)
    {
        using clock = std::chrono::steady_clock;
        config.validate();
        nominal.validate();
        if (dataset.empty())
            throw ConfigError("train: empty dataset");
        const bool supervised = config.loss != LossKind::ul;
        for (const auto &s : dataset)
        {
            if (s.snapshots.rows() != nominal.size())
                throw DimensionError("train: snapshot rows differ from array size");
            if (supervised && s.thetas.empty())
                throw ConfigError("train: supervised losses need DoA labels on every scene");
        }
        if (!supervised && config.n_sources == 0 && dataset.front().thetas.empty())
            throw ConfigError("train: ul on unlabeled scenes needs n_sources");

        const AngularGrid grid = config.grid.make();
        const std::size_t source_count = supervised ? 0 : config.n_sources;

        // Split: a seeded permutation, the first floor(fraction * n) scenes validate
        std::vector<std::size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), std::size_t(0));
        Rng split_rng(child_seed(config.seed, streams::shuffle));
        std::shuffle(order.begin(), order.end(), split_rng);
        const std::size_t n_val = std::size_t(std::floor(config.validation_fraction * double(dataset.size())));
        std::vector<Scene> train_scenes, val_scenes;
        for (std::size_t i = 0; i < order.size(); ++i)
            (i < n_val ? val_scenes : train_scenes).push_back(dataset[order[i]]);
        if (train_scenes.empty())
            throw ConfigError("train: validation split leaves no training scenes");
        if (val_scenes.empty())
            val_scenes = train_scenes;

        const auto prepared_train = prepare_scenes(train_scenes, source_count, config.threads);
        const auto prepared_val = prepare_scenes(val_scenes, source_count, config.threads);
        const bool val_labeled = std::all_of(val_scenes.begin(), val_scenes.end(), [](const Scene &s)
                                             { return !s.thetas.empty(); });

        TrainReport report;
        report.initial = nominal;

        auto validate_params = [&](const ArrayParams &params, EpochRecord &rec)
        {
            const auto before = instrumentation::full_grid_spectra.load();
            rec.val_loss = detail::batch_loss(config.loss, prepared_val, params, grid, config).value;
            rec.val_rmspe_deg = val_labeled ? evaluate(val_scenes, params, Estimator::music, grid, 1, 1.0, config.threads)
                                            : std::numeric_limits<double>::quiet_NaN();
            report.validation_grid_evaluations += instrumentation::full_grid_spectra.load() - before;
        };
        if (config.selection == ValidationMetric::rmspe && !val_labeled)
            throw ConfigError("train: rmspe model selection needs labeled scenes");
        // Lower is better
        auto metric = [&](const EpochRecord &rec)
        { return config.selection == ValidationMetric::rmspe ? rec.val_rmspe_deg : rec.val_loss; };

        report.start.train_loss = std::numeric_limits<double>::quiet_NaN();
        validate_params(nominal, report.start);
        double best_metric = metric(report.start);
        report.final_params = nominal;

        ArrayParams params = nominal;
        RVector x = nominal.to_vector();
        Optimizer optimizer(config, nominal.size());
        Rng shuffle_rng(child_seed(config.seed, streams::shuffle + 1));
        std::vector<std::size_t> idx(prepared_train.size());
        std::iota(idx.begin(), idx.end(), std::size_t(0));
        std::size_t since_best = 0;
        std::size_t batch_counter = 0;

        for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch)
        {
            const auto t0 = clock::now();
            std::shuffle(idx.begin(), idx.end(), shuffle_rng);
            double loss_sum = 0.0;
            std::size_t n_batches = 0;
            for (std::size_t lo = 0; lo < idx.size(); lo += config.batch_size, ++batch_counter)
            {
                const std::size_t hi = std::min(idx.size(), lo + config.batch_size);
                std::vector<PreparedScene> batch;
                batch.reserve(hi - lo);
                for (std::size_t k = lo; k < hi; ++k)
                    batch.push_back(prepared_train[idx[k]]);

                const auto s0 = clock::now();
                const auto grid_before = instrumentation::full_grid_spectra.load();
                const LossValue loss = detail::batch_loss(config.loss, batch, params, grid, config);
                if (!std::isfinite(loss.value) || !loss.grad.allFinite())
                    throw NonFiniteError("non-finite loss or gradient", batch_counter);
                optimizer.step(x, loss.grad);
                params = params.with_vector(x);
                report.step_grid_evaluations += instrumentation::full_grid_spectra.load() - grid_before;
                report.step_seconds += std::chrono::duration<double>(clock::now() - s0).count();
                ++report.steps;
                loss_sum += loss.value;
                ++n_batches;
            }

            EpochRecord rec;
            rec.epoch = epoch;
            rec.train_loss = loss_sum / double(n_batches);
            validate_params(params, rec);
            rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
            report.epochs.push_back(rec);

            if (metric(rec) < best_metric)
            {
                best_metric = metric(rec);
                report.final_params = params;
                report.best_epoch = epoch;
                since_best = 0;
            }
            else if (config.patience > 0 && ++since_best >= config.patience)
            {
                break;
            }
        }
        return report;
    }
}

#endif
