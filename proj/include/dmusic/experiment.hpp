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

// Experiment protocol shared by the CLI and the acceptance suite: sweeps over SNR or snapshot
// count, per-cell training, window-size search, CSV tables and run manifests.
//
// CSV schemas (columns are only ever appended):
//   results:  method,M,snr_db,T,rmspe_deg,median_deg,n_scenes
//   training: epoch,loss,val_loss,val_rmspe,seconds
//   search-l: L,rmspe_deg
//   spectrum: angle_deg,value

#ifndef DMUSIC_EXPERIMENT_HPP
#define DMUSIC_EXPERIMENT_HPP

#include "io.hpp"

#include <iomanip>
#include <sstream>
#include <utility>

#ifndef DMUSIC_VERSION
#define DMUSIC_VERSION "0.1.0"
#endif

namespace dmusic
{
    enum class SweepAxis
    {
        none,
        snr_db,
        snapshots
    };

    inline std::string_view to_string(SweepAxis a)
    {
        switch (a)
        {
        case SweepAxis::snr_db:
            return "snr";
        case SweepAxis::snapshots:
            return "snapshots";
        default:
            return "none";
        }
    }

    inline SweepAxis sweep_axis_from_string(std::string_view s)
    {
        if (s == "none")
            return SweepAxis::none;
        if (s == "snr")
            return SweepAxis::snr_db;
        if (s == "snapshots" || s == "T")
            return SweepAxis::snapshots;
        throw ConfigError("unknown sweep axis '" + std::string(s) + "' (expected none, snr or snapshots)");
    }

    struct ExperimentSpec
    {
        SimConfig sim;
        TrainConfig train;
        SweepAxis axis = SweepAxis::none;
        std::vector<double> sweep_values;
        std::vector<Estimator> estimators{Estimator::music, Estimator::diffmusic};
        std::vector<LossKind> train_losses; // arrays learned afresh in every sweep cell
        std::size_t n_train = 1000;
        std::size_t n_test = 1000;

        void validate() const
        {
            sim.validate();
            train.validate();
            if (axis != SweepAxis::none && sweep_values.empty())
                throw ConfigError("sweep values must be non-empty when a sweep axis is set");
            if (estimators.empty())
                throw ConfigError("at least one estimator is required");
            if (n_test < 1)
                throw ConfigError("n_test must be >= 1");
            if (!train_losses.empty() && n_train < 1)
                throw ConfigError("n_train must be >= 1 when training");
        }

        // Simulation settings of each sweep cell
        std::vector<SimConfig> cells() const
        {
            if (axis == SweepAxis::none)
                return {sim};
            std::vector<SimConfig> out;
            for (double v : sweep_values)
            {
                SimConfig c = sim;
                if (axis == SweepAxis::snr_db)
                    c.snr_db = v;
                else
                {
                    if (v < 1 || v != std::floor(v))
                        throw ConfigError("snapshot sweep values must be positive integers");
                    c.n_snapshots = Eigen::Index(v);
                }
                out.push_back(c);
            }
            return out;
        }
    };

    struct ResultRow
    {
        std::string method; // <estimator>_<array>
        Eigen::Index n_sources = 0;
        double snr_db = 0.0;
        Eigen::Index n_snapshots = 0;
        double rmspe_deg = 0.0;
        double median_deg = 0.0;
        std::size_t n_scenes = 0;
    };

    // Training and test scenes of one cell; DoAs and source samples are shared across cells that
    // differ only in SNR or snapshot count (matched seeds)
    inline Dataset test_scenes(const SimConfig &cell, const ArrayParams &physical, std::size_t n, unsigned threads = 0)
    {
        return generate_dataset(cell, physical, n, child_seed(cell.seed, streams::test), threads);
    }

    inline Dataset train_scenes(const SimConfig &cell, const ArrayParams &physical, std::size_t n, unsigned threads = 0)
    {
        return generate_dataset(cell, physical, n, child_seed(cell.seed, streams::train), threads);
    }

    inline ResultRow evaluate_row(std::string method, const SimConfig &cell, std::span<const Scene> test,
                                  const ArrayParams &params, Estimator estimator, const TrainConfig &tc)
    {
        const AngularGrid grid = tc.grid.make();
        const auto errors = scene_errors(test, params, estimator, grid, tc.window, tc.tau, tc.threads);
        double sum = 0.0;
        for (double e : errors)
            sum += e;
        return ResultRow{std::move(method), cell.n_sources, cell.snr_db, cell.n_snapshots,
                         rad2deg(sum / double(errors.size())), rad2deg(median(errors)), errors.size()};
    }

    // One row per (estimator, array knowledge) pair and sweep cell. Array knowledge: nominal, physical,
    // every entry of `fixed_arrays`, and one array trained per loss in spec.train_losses.
    inline std::vector<ResultRow> run_experiment(const ExperimentSpec &spec,
                                                 const std::vector<std::pair<std::string, ArrayParams>> &fixed_arrays = {})
    {
        spec.validate();
        std::vector<ResultRow> rows;
        for (const SimConfig &cell : spec.cells())
        {
            const ArrayParams nominal = nominal_array(cell);
            const ArrayParams physical = physical_array(cell);
            const Dataset test = test_scenes(cell, physical, spec.n_test, spec.train.threads);

            std::vector<std::pair<std::string, ArrayParams>> arrays{{"nominal", nominal}, {"physical", physical}};
            for (const auto &fa : fixed_arrays)
                arrays.push_back(fa);
            if (!spec.train_losses.empty())
            {
                const Dataset training = train_scenes(cell, physical, spec.n_train, spec.train.threads);
                for (LossKind loss : spec.train_losses)
                {
                    TrainConfig tc = spec.train;
                    tc.loss = loss;
                    if (loss == LossKind::ul && tc.n_sources == 0)
                        tc.n_sources = std::size_t(cell.n_sources);
                    arrays.emplace_back(std::string(to_string(loss)), train(training, nominal, tc).final_params);
                }
            }
            for (const auto &[name, params] : arrays)
                for (Estimator e : spec.estimators)
                    rows.push_back(evaluate_row(std::string(to_string(e)) + "_" + name, cell, test, params, e, spec.train));
        }
        return rows;
    }

    struct WindowSearch
    {
        std::vector<std::pair<std::size_t, double>> rows; // (L, mean RMSPE in degrees)
        std::size_t best_window = 0;
        double best_rmspe_deg = 0.0;
    };

    // Grid search of the diffMUSIC window size; the first minimal candidate wins ties
    inline WindowSearch search_window(std::span<const Scene> validation, const ArrayParams &params,
                                      const AngularGrid &grid, std::span<const std::size_t> candidates, double tau = 1.0,
                                      unsigned threads = 0)
    {
        if (candidates.empty())
            throw ConfigError("search_window: no candidates");
        WindowSearch out;
        out.best_rmspe_deg = std::numeric_limits<double>::infinity();
        for (std::size_t window : candidates)
        {
            if (window < 1)
                throw ConfigError("search_window: window sizes must be >= 1");
            const double r = evaluate(validation, params, Estimator::diffmusic, grid, window, tau, threads);
            out.rows.emplace_back(window, r);
            if (r < out.best_rmspe_deg)
            {
                out.best_rmspe_deg = r;
                out.best_window = window;
            }
        }
        return out;
    }

    namespace csv
    {
        inline std::string number(double v)
        {
            std::ostringstream s;
            s << std::setprecision(12) << v;
            return s.str();
        }

        inline std::string results(const std::vector<ResultRow> &rows)
        {
            std::ostringstream s;
            s << "method,M,snr_db,T,rmspe_deg,median_deg,n_scenes\n";
            for (const auto &r : rows)
                s << r.method << ',' << r.n_sources << ',' << number(r.snr_db) << ',' << r.n_snapshots << ','
                  << number(r.rmspe_deg) << ',' << number(r.median_deg) << ',' << r.n_scenes << '\n';
            return s.str();
        }

        // Wall-clock seconds are the only non-reproducible column
        inline std::string training(const TrainReport &report)
        {
            std::ostringstream s;
            s << "epoch,loss,val_loss,val_rmspe,seconds\n";
            auto line = [&](const EpochRecord &e)
            {
                s << e.epoch << ',' << number(e.train_loss) << ',' << number(e.val_loss) << ','
                  << number(e.val_rmspe_deg) << ',' << number(e.seconds) << '\n';
            };
            line(report.start);
            for (const auto &e : report.epochs)
                line(e);
            return s.str();
        }

        inline std::string window_search(const WindowSearch &search)
        {
            std::ostringstream s;
            s << "L,rmspe_deg\n";
            for (const auto &[window, r] : search.rows)
                s << window << ',' << number(r) << '\n';
            return s.str();
        }

        inline std::string spectrum(const Spectrum &sp)
        {
            std::ostringstream s;
            s << "angle_deg,value\n";
            for (std::size_t i = 0; i < sp.grid.size(); ++i)
                s << number(rad2deg(sp.grid[i])) << ',' << number(sp.values(Eigen::Index(i))) << '\n';
            return s.str();
        }
    }

    // Full config echo + library version + seed
    inline io::json manifest(std::string_view command, const SimConfig &sim, const TrainConfig &train,
                             io::json extra = io::json::object())
    {
        return {{"tool", "dmusic"},
                {"library_version", DMUSIC_VERSION},
                {"command", std::string(command)},
                {"seed", sim.seed},
                {"sim", io::to_json(sim)},
                {"train", io::to_json(train)},
                {"extra", std::move(extra)}};
    }
}

#endif
