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

// Command-line front end. Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <dmusic/experiment.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace dmusic;

namespace
{
    constexpr int exit_config = 2;
    constexpr int exit_numerical = 3;

    struct SimFlags
    {
        SimConfig c;
        double doa_low_deg = -80.0, doa_high_deg = 80.0, min_sep_deg = 2.0;
        std::optional<double> eta;
        std::string direction = "sin";

        void add(CLI::App *app)
        {
            app->add_option("--antennas", c.n_antennas, "Number of antennas N")->capture_default_str();
            app->add_option("--sources", c.n_sources, "Number of sources M")->capture_default_str();
            app->add_option("--snapshots", c.n_snapshots, "Snapshots per scene T")->capture_default_str();
            app->add_option("--snr", c.snr_db, "Sensing SNR in dB")->capture_default_str();
            app->add_option("--source-power", c.source_power, "Source power")->capture_default_str();
            app->add_option("--doa-low", doa_low_deg, "Lowest DoA, degrees")->capture_default_str();
            app->add_option("--doa-high", doa_high_deg, "Highest DoA, degrees")->capture_default_str();
            app->add_option("--min-sep", min_sep_deg, "Minimum DoA separation, degrees")->capture_default_str();
            app->add_option("--wavelength", c.wavelength, "Wavelength, meters")->capture_default_str();
            app->add_option("--eta", eta, "Position spread, meters (default 0.5 * wavelength / 2)");
            app->add_option("--gain-var", c.gain_variance, "Gain perturbation variance")->capture_default_str();
            app->add_option("--direction", direction, "Direction function u(theta): sin or cos")->capture_default_str();
            app->add_option("--seed", c.seed, "Experiment seed")->capture_default_str();
        }

        SimConfig resolve() const
        {
            SimConfig out = c;
            out.doa_low = deg2rad(doa_low_deg);
            out.doa_high = deg2rad(doa_high_deg);
            out.min_separation = deg2rad(min_sep_deg);
            out.position_spread = eta ? *eta : 0.5 * c.wavelength / 2.0;
            out.direction = direction_from_string(direction);
            return out;
        }
    };

    struct TrainFlags
    {
        TrainConfig c;
        std::string loss = "sl_p", optimizer = "adaptive", selection = "loss";
        std::optional<double> lr_pos;
        std::uint64_t seed = 1;

        void add(CLI::App *app, bool with_seed = false)
        {
            if (with_seed)
                app->add_option("--seed", seed, "Shuffling and split seed")->capture_default_str();
            app->add_option("--loss", loss, "Training loss: sl_theta, sl_p or ul")->capture_default_str();
            app->add_option("--optimizer", optimizer, "sgd, momentum or adaptive")->capture_default_str();
            app->add_option("--epochs", c.epochs)->capture_default_str();
            app->add_option("--batch", c.batch_size)->capture_default_str();
            app->add_option("--lr-gain", c.lr_gain)->capture_default_str();
            app->add_option("--lr-pos", lr_pos, "Position step size, meters (default 1e-3 * wavelength / 2)");
            app->add_option("-L,--window", c.window, "diffMUSIC window size L")->capture_default_str();
            app->add_option("--tau", c.tau, "Softmax temperature")->capture_default_str();
            app->add_option("--grid-low", c.grid.low_deg, "Grid start, degrees")->capture_default_str();
            app->add_option("--grid-step", c.grid.step_deg, "Grid step, degrees")->capture_default_str();
            app->add_option("--grid-count", c.grid.count, "Grid points")->capture_default_str();
            app->add_option("--patience", c.patience, "Early-stop patience in epochs (0 = off)")->capture_default_str();
            app->add_option("--val-frac", c.validation_fraction)->capture_default_str();
            app->add_option("--selection", selection, "Model selection: loss or rmspe")->capture_default_str();
            app->add_option("--threads", c.threads, "Worker threads (0 = all cores)")->capture_default_str();
        }

        TrainConfig resolve(const SimConfig &sim, std::uint64_t seed) const
        {
            TrainConfig out = c;
            out.loss = loss_kind_from_string(loss);
            out.optimizer = optimizer_kind_from_string(optimizer);
            out.selection = validation_metric_from_string(selection);
            out.lr_pos = lr_pos ? *lr_pos : 1e-3 * sim.wavelength / 2.0;
            out.seed = seed;
            return out;
        }
    };

    template <typename T, typename Parse>
    std::vector<T> parse_list(const std::vector<std::string> &items, Parse parse)
    {
        std::vector<T> out;
        for (const auto &s : items)
            out.push_back(parse(s));
        return out;
    }

    void ensure_dir(const std::string &dir)
    {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec)
            throw ConfigError("cannot create directory '" + dir + "': " + ec.message());
    }

    std::string join(const std::string &dir, const std::string &name) { return (fs::path(dir) / name).string(); }

    // Array by keyword or path; `physical` needs a dataset
    ArrayParams resolve_array(const std::string &which, const io::DatasetFile *ds)
    {
        if (which == "physical")
        {
            if (ds == nullptr)
                throw ConfigError("'physical' array needs a dataset");
            return ds->physical;
        }
        if (which == "nominal")
        {
            if (ds == nullptr)
                throw ConfigError("'nominal' array needs a dataset");
            return nominal_array(ds->config);
        }
        return io::load_array_or_checkpoint(which);
    }

    // Config file overrides flags: {"sim": {...}, "train": {...}, "experiment": {...}}
    void apply_config_file(const std::string &path, SimConfig &sim, TrainConfig &train, ExperimentSpec *spec)
    {
        if (path.empty())
            return;
        const io::json j = io::read_json(path);
        if (j.contains("sim"))
            sim = io::sim_config_from_json(j.at("sim"), sim);
        if (j.contains("train"))
            train = io::train_config_from_json(j.at("train"), train);
        if (spec != nullptr && j.contains("experiment"))
        {
            const io::json &e = j.at("experiment");
            try
            {
                if (e.contains("sweep"))
                    spec->axis = sweep_axis_from_string(e.at("sweep").get<std::string>());
                if (e.contains("values"))
                    spec->sweep_values = e.at("values").get<std::vector<double>>();
                if (e.contains("n_train"))
                    spec->n_train = e.at("n_train").get<std::size_t>();
                if (e.contains("n_test"))
                    spec->n_test = e.at("n_test").get<std::size_t>();
                if (e.contains("estimators"))
                    spec->estimators = parse_list<Estimator>(e.at("estimators").get<std::vector<std::string>>(), estimator_from_string);
                if (e.contains("train_losses"))
                    spec->train_losses = parse_list<LossKind>(e.at("train_losses").get<std::vector<std::string>>(), loss_kind_from_string);
            }
            catch (const io::json::exception &ex)
            {
                throw FormatError(std::string("experiment section: ") + ex.what());
            }
        }
    }

    int cmd_simulate(const SimConfig &sim, std::size_t n_train, std::size_t n_test, const std::string &out_dir,
                     unsigned threads)
    {
        sim.validate();
        ensure_dir(out_dir);
        const ArrayParams nominal = nominal_array(sim);
        const ArrayParams physical = physical_array(sim);
        io::save_array(join(out_dir, "nominal_array.json"), nominal);
        io::save_array(join(out_dir, "physical_array.json"), physical);
        if (n_train > 0)
            io::save_dataset(join(out_dir, "train.dmds"), {sim, physical, train_scenes(sim, physical, n_train, threads)});
        io::save_dataset(join(out_dir, "test.dmds"), {sim, physical, test_scenes(sim, physical, n_test, threads)});
        io::write_json(join(out_dir, "manifest.json"),
                       manifest("simulate", sim, TrainConfig{}, {{"n_train", n_train}, {"n_test", n_test}}));

        const RVector dp = physical.positions - nominal.positions;
        const CVector dg = physical.gains - nominal.gains;
        std::cout << "N=" << sim.n_antennas << " M=" << sim.n_sources << " T=" << sim.n_snapshots
                  << " SNR=" << sim.snr_db << " dB\n"
                  << "eta=" << sim.position_spread << " m  gain_var=" << sim.gain_variance << "\n"
                  << "max |position shift| = " << dp.cwiseAbs().maxCoeff() << " m, rms |gain shift| = "
                  << std::sqrt(dg.squaredNorm() / double(dg.size())) << "\n"
                  << "wrote " << n_train << " training and " << n_test << " test scenes to " << out_dir << "\n";
        return 0;
    }

    int cmd_train(const std::string &dataset_path, TrainConfig tc, bool unlabeled, std::size_t sources,
                  const std::string &out_dir)
    {
        io::DatasetFile ds = io::load_dataset(dataset_path);
        if (unlabeled)
        {
            for (auto &s : ds.scenes)
                s.thetas.clear();
            if (tc.loss != LossKind::ul)
                throw ConfigError("unlabeled training only supports the ul loss");
        }
        if (tc.loss == LossKind::ul && tc.n_sources == 0)
            tc.n_sources = sources > 0 ? sources : std::size_t(ds.config.n_sources);
        const ArrayParams nominal = nominal_array(ds.config);
        const TrainReport report = train(ds.scenes, nominal, tc);

        ensure_dir(out_dir);
        io::save_checkpoint(join(out_dir, "checkpoint.json"), {report.final_params, tc, report.best_epoch});
        io::write_text(join(out_dir, "report.csv"), csv::training(report));
        io::write_json(join(out_dir, "manifest.json"),
                       manifest("train", ds.config, tc,
                                {{"dataset", dataset_path}, {"unlabeled", unlabeled},
                                 {"best_epoch", report.best_epoch}, {"steps", report.steps},
                                 {"step_grid_evaluations", report.step_grid_evaluations}}));

        const ArrayParams aligned = gauge_align(report.final_params, ds.physical);
        std::cout << "loss=" << to_string(tc.loss) << " epochs run=" << report.epochs.size()
                  << " best epoch=" << report.best_epoch << " steps=" << report.steps << "\n"
                  << "full-grid spectra inside optimization steps: " << report.step_grid_evaluations << "\n"
                  << "mean step time: " << report.step_seconds / double(std::max<std::size_t>(1, report.steps)) << " s\n"
                  << "gauge-aligned max |position error| vs physical: "
                  << (aligned.positions - ds.physical.positions).cwiseAbs().maxCoeff() << " m\n"
                  << "gauge-aligned max |gain error| vs physical: "
                  << (aligned.gains - ds.physical.gains).cwiseAbs().maxCoeff() << "\n";
        return 0;
    }

    int cmd_evaluate(const ExperimentSpec &spec, const std::vector<std::string> &array_args, const std::string &out_dir)
    {
        std::vector<std::pair<std::string, ArrayParams>> fixed;
        for (const auto &arg : array_args)
        {
            const auto eq = arg.find('=');
            if (eq == std::string::npos || eq == 0)
                throw ConfigError("--array expects NAME=PATH, got '" + arg + "'");
            fixed.emplace_back(arg.substr(0, eq), io::load_array_or_checkpoint(arg.substr(eq + 1)));
        }
        const auto rows = run_experiment(spec, fixed);
        const std::string table = csv::results(rows);
        ensure_dir(out_dir);
        io::write_text(join(out_dir, "results.csv"), table);
        io::json extra{{"sweep", std::string(to_string(spec.axis))}, {"values", spec.sweep_values},
                       {"n_train", spec.n_train}, {"n_test", spec.n_test}, {"arrays", array_args}};
        std::vector<std::string> est, losses;
        for (auto e : spec.estimators)
            est.emplace_back(to_string(e));
        for (auto l : spec.train_losses)
            losses.emplace_back(to_string(l));
        extra["estimators"] = est;
        extra["train_losses"] = losses;
        io::write_json(join(out_dir, "manifest.json"), manifest("evaluate", spec.sim, spec.train, extra));
        std::cout << table;
        return 0;
    }

    int cmd_spectrum(const std::string &dataset_path, std::size_t scene_index, const std::string &array_arg,
                     const TrainConfig &tc, const std::string &out_path)
    {
        const io::DatasetFile ds = io::load_dataset(dataset_path);
        if (scene_index >= ds.scenes.size())
            throw ConfigError("scene index out of range");
        const Scene &scene = ds.scenes[scene_index];
        const ArrayParams params = resolve_array(array_arg, &ds);
        const std::size_t m = tc.n_sources > 0 ? tc.n_sources : scene.thetas.size();
        if (m == 0)
            throw ConfigError("scene has no labels; pass --sources");
        const AngularGrid grid = tc.grid.make();
        const Spectrum sp = music_spectrum(noise_subspace_of(scene.snapshots, Eigen::Index(m)), params, grid);
        const std::string table = csv::spectrum(sp);
        if (out_path.empty() || out_path == "-")
            std::cout << table;
        else
            io::write_text(out_path, table);
        if (sp.capped > 0)
            std::cerr << "warning: " << sp.capped << " spectrum values clamped to " << spectrum_cap << "\n";
        return 0;
    }

    int cmd_search_l(const std::string &dataset_path, const std::string &array_arg, const std::vector<std::size_t> &candidates,
                     const TrainConfig &tc, const std::string &out_dir)
    {
        const io::DatasetFile ds = io::load_dataset(dataset_path);
        const ArrayParams params = resolve_array(array_arg, &ds);
        const WindowSearch search = search_window(ds.scenes, params, tc.grid.make(), candidates, tc.tau, tc.threads);
        const std::string table = csv::window_search(search);
        ensure_dir(out_dir);
        io::write_text(join(out_dir, "search_l.csv"), table);
        io::write_json(join(out_dir, "manifest.json"),
                       manifest("search-l", ds.config, tc,
                                {{"dataset", dataset_path}, {"array", array_arg}, {"candidates", candidates},
                                 {"best_window", search.best_window}}));
        std::cout << table << "best L = " << search.best_window << " (" << search.best_rmspe_deg << " deg)\n";
        return 0;
    }
}

int main(int argc, char **argv)
{
    CLI::App app{"Differentiable MUSIC DoA estimation and array impairment learning"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file; its values override flags");

    // simulate
    auto *sim_cmd = app.add_subcommand("simulate", "Generate an impaired array and datasets");
    SimFlags sim_flags;
    sim_flags.add(sim_cmd);
    std::size_t n_train = 1000, n_test = 1000;
    std::string out_dir = "out";
    unsigned sim_threads = 0;
    sim_cmd->add_option("--n-train", n_train, "Training scenes")->capture_default_str();
    sim_cmd->add_option("--n-test", n_test, "Test scenes")->capture_default_str();
    sim_cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();
    sim_cmd->add_option("--threads", sim_threads)->capture_default_str();

    // train
    auto *train_cmd = app.add_subcommand("train", "Learn the array parametrization from a dataset");
    TrainFlags train_flags;
    train_flags.add(train_cmd, true);
    std::string dataset_path;
    bool unlabeled = false;
    std::size_t sources = 0;
    train_cmd->add_option("--dataset", dataset_path, "Training dataset (.dmds)")->required();
    train_cmd->add_flag("--unlabeled", unlabeled, "Drop DoA labels (ul loss only)");
    train_cmd->add_option("--sources", sources, "Source count for ul (default: dataset config)");
    train_cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();

    // evaluate
    auto *eval_cmd = app.add_subcommand("evaluate", "RMSPE table over a sweep");
    SimFlags eval_sim;
    TrainFlags eval_train;
    eval_sim.add(eval_cmd);
    eval_train.add(eval_cmd);
    std::string sweep = "none";
    std::vector<double> sweep_values;
    std::vector<std::string> estimators{"music", "diffmusic"}, train_losses, array_args;
    eval_cmd->add_option("--sweep", sweep, "Sweep axis: none, snr or snapshots")->capture_default_str();
    eval_cmd->add_option("--values", sweep_values, "Sweep values")->delimiter(',');
    eval_cmd->add_option("--estimators", estimators, "music, diffmusic")->delimiter(',')->capture_default_str();
    eval_cmd->add_option("--train-losses", train_losses, "Losses to train in every cell")->delimiter(',');
    eval_cmd->add_option("--array", array_args, "Extra array NAME=PATH (array or checkpoint file)");
    eval_cmd->add_option("--n-train", n_train)->capture_default_str();
    eval_cmd->add_option("--n-test", n_test)->capture_default_str();
    eval_cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();

    // spectrum
    auto *spec_cmd = app.add_subcommand("spectrum", "Dump a MUSIC spectrum as CSV");
    TrainFlags spec_train;
    spec_train.add(spec_cmd);
    std::size_t scene_index = 0;
    std::string array_arg = "physical", out_path = "-";
    spec_cmd->add_option("--dataset", dataset_path, "Dataset (.dmds)")->required();
    spec_cmd->add_option("--scene", scene_index, "Scene index")->capture_default_str();
    spec_cmd->add_option("--array", array_arg, "nominal, physical or a file")->capture_default_str();
    spec_cmd->add_option("--sources", sources, "Source count (default: scene labels)");
    spec_cmd->add_option("--out", out_path, "Output CSV ('-' for stdout)")->capture_default_str();

    // search-l
    auto *search_cmd = app.add_subcommand("search-l", "Grid search of the diffMUSIC window size");
    TrainFlags search_train;
    search_train.add(search_cmd);
    std::vector<std::size_t> candidates{1, 2, 4, 8, 16, 32};
    search_cmd->add_option("--dataset", dataset_path, "Validation dataset (.dmds)")->required();
    search_cmd->add_option("--array", array_arg, "nominal, physical or a file")->capture_default_str();
    search_cmd->add_option("--candidates", candidates, "Window sizes")->delimiter(',')->capture_default_str();
    search_cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try
    {
        if (*sim_cmd)
        {
            SimConfig sim = sim_flags.resolve();
            TrainConfig unused;
            apply_config_file(config_path, sim, unused, nullptr);
            return cmd_simulate(sim, n_train, n_test, out_dir, sim_threads);
        }
        if (*train_cmd)
        {
            SimConfig sim;
            TrainConfig tc = train_flags.resolve(sim, train_flags.seed);
            apply_config_file(config_path, sim, tc, nullptr);
            return cmd_train(dataset_path, tc, unlabeled, sources, out_dir);
        }
        if (*eval_cmd)
        {
            ExperimentSpec spec;
            spec.sim = eval_sim.resolve();
            spec.train = eval_train.resolve(spec.sim, spec.sim.seed);
            spec.axis = sweep_axis_from_string(sweep);
            spec.sweep_values = sweep_values;
            spec.estimators = parse_list<Estimator>(estimators, estimator_from_string);
            spec.train_losses = parse_list<LossKind>(train_losses, loss_kind_from_string);
            spec.n_train = n_train;
            spec.n_test = n_test;
            apply_config_file(config_path, spec.sim, spec.train, &spec);
            return cmd_evaluate(spec, array_args, out_dir);
        }
        if (*spec_cmd)
        {
            SimConfig sim;
            TrainConfig tc = spec_train.resolve(sim, sim.seed);
            tc.n_sources = sources;
            apply_config_file(config_path, sim, tc, nullptr);
            return cmd_spectrum(dataset_path, scene_index, array_arg, tc, out_path);
        }
        if (*search_cmd)
        {
            SimConfig sim;
            TrainConfig tc = search_train.resolve(sim, sim.seed);
            apply_config_file(config_path, sim, tc, nullptr);
            return cmd_search_l(dataset_path, array_arg, candidates, tc, out_dir);
        }
    }
    catch (const NumericalError &e)
    {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return exit_numerical;
    }
    catch (const ConfigError &e)
    {
        std::cerr << "configuration error: " << e.what() << "\n";
        return exit_config;
    }
    catch (const Error &e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
