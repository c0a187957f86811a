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

// File formats:
//
//   Array document (JSON)
//     {"wavelength": w, "direction": "sin"|"cos",
//      "antennas": [{"re_gain": .., "im_gain": .., "position": ..}, ...]}
//     Doubles are written in shortest round-trip form, so save/load is lossless.
//
//   Dataset container (binary, little-endian)
//     8 bytes   magic "DMUSICDS"
//     u32       format version (1)
//     u64       header length H
//     H bytes   JSON header {"config": SimConfig, "physical": Array, "n_scenes": K}
//     K records:
//       u32 M, u32 N, u32 T
//       M x f64 DoAs in radians
//       N*T x (f64 re, f64 im) snapshots, row-major (antenna-major)
//
//   Checkpoint (JSON)
//     {"magic": "dmusic-checkpoint", "version": 1, "epoch": k, "config": TrainConfig, "array": Array}

#ifndef DMUSIC_IO_HPP
#define DMUSIC_IO_HPP

#include "trainer.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

namespace dmusic::io
{
    using json = nlohmann::json;

    static_assert(std::endian::native == std::endian::little, "dataset container assumes a little-endian host");

    constexpr char dataset_magic[8] = {'D', 'M', 'U', 'S', 'I', 'C', 'D', 'S'};
    constexpr std::uint32_t dataset_version = 1;
    constexpr const char *checkpoint_magic = "dmusic-checkpoint";
    constexpr int checkpoint_version = 1;

    template <typename T>
    T get_or(const json &j, const char *key, T fallback)
    {
        return j.contains(key) ? j.at(key).get<T>() : fallback;
    }

    inline json to_json(const ArrayParams &p)
    {
        json antennas = json::array();
        for (Eigen::Index i = 0; i < p.size(); ++i)
            antennas.push_back({{"re_gain", p.gains(i).real()}, {"im_gain", p.gains(i).imag()}, {"position", p.positions(i)}});
        return {{"wavelength", p.wavelength}, {"direction", std::string(to_string(p.direction))}, {"antennas", antennas}};
    }

    inline ArrayParams array_from_json(const json &j)
    {
        try
        {
            ArrayParams p;
            p.wavelength = j.at("wavelength").get<double>();
            p.direction = direction_from_string(get_or<std::string>(j, "direction", "sin"));
            const json &ant = j.at("antennas");
            const auto n = Eigen::Index(ant.size());
            p.gains.resize(n);
            p.positions.resize(n);
            for (Eigen::Index i = 0; i < n; ++i)
            {
                const json &a = ant.at(std::size_t(i));
                p.gains(i) = cdouble(a.at("re_gain").get<double>(), a.at("im_gain").get<double>());
                p.positions(i) = a.at("position").get<double>();
            }
            p.validate();
            return p;
        }
        catch (const json::exception &e)
        {
            throw FormatError(std::string("array document: ") + e.what());
        }
    }

    inline json to_json(const SimConfig &c)
    {
        return {{"n_antennas", c.n_antennas},
                {"n_sources", c.n_sources},
                {"n_snapshots", c.n_snapshots},
                {"snr_db", c.snr_db},
                {"source_power", c.source_power},
                {"doa_low_deg", rad2deg(c.doa_low)},
                {"doa_high_deg", rad2deg(c.doa_high)},
                {"min_separation_deg", rad2deg(c.min_separation)},
                {"wavelength", c.wavelength},
                {"position_spread", c.position_spread},
                {"gain_variance", c.gain_variance},
                {"direction", std::string(to_string(c.direction))},
                {"seed", c.seed},
                {"max_retries", c.max_retries}};
    }

    // Missing keys keep the values already in `base`
    inline SimConfig sim_config_from_json(const json &j, SimConfig c = {})
    {
        try
        {
            c.n_antennas = get_or(j, "n_antennas", c.n_antennas);
            c.n_sources = get_or(j, "n_sources", c.n_sources);
            c.n_snapshots = get_or(j, "n_snapshots", c.n_snapshots);
            c.snr_db = get_or(j, "snr_db", c.snr_db);
            c.source_power = get_or(j, "source_power", c.source_power);
            c.doa_low = deg2rad(get_or(j, "doa_low_deg", rad2deg(c.doa_low)));
            c.doa_high = deg2rad(get_or(j, "doa_high_deg", rad2deg(c.doa_high)));
            c.min_separation = deg2rad(get_or(j, "min_separation_deg", rad2deg(c.min_separation)));
            c.wavelength = get_or(j, "wavelength", c.wavelength);
            c.position_spread = get_or(j, "position_spread", c.position_spread);
            c.gain_variance = get_or(j, "gain_variance", c.gain_variance);
            c.direction = direction_from_string(get_or<std::string>(j, "direction", std::string(to_string(c.direction))));
            c.seed = get_or(j, "seed", c.seed);
            c.max_retries = get_or(j, "max_retries", c.max_retries);
            return c;
        }
        catch (const json::exception &e)
        {
            throw FormatError(std::string("simulation config: ") + e.what());
        }
    }

    inline json to_json(const TrainConfig &c)
    {
        return {{"loss", std::string(to_string(c.loss))},
                {"optimizer", std::string(to_string(c.optimizer))},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lr_gain", c.lr_gain},
                {"lr_pos", c.lr_pos},
                {"momentum", c.momentum},
                {"beta2", c.beta2},
                {"epsilon", c.epsilon},
                {"window", c.window},
                {"tau", c.tau},
                {"grid", {{"low_deg", c.grid.low_deg}, {"step_deg", c.grid.step_deg}, {"count", c.grid.count}}},
                {"seed", c.seed},
                {"patience", c.patience},
                {"validation_fraction", c.validation_fraction},
                {"selection", std::string(to_string(c.selection))},
                {"n_sources", c.n_sources}};
    }

    inline TrainConfig train_config_from_json(const json &j, TrainConfig c = {})
    {
        try
        {
            c.loss = loss_kind_from_string(get_or<std::string>(j, "loss", std::string(to_string(c.loss))));
            c.optimizer = optimizer_kind_from_string(get_or<std::string>(j, "optimizer", std::string(to_string(c.optimizer))));
            c.epochs = get_or(j, "epochs", c.epochs);
            c.batch_size = get_or(j, "batch_size", c.batch_size);
            c.lr_gain = get_or(j, "lr_gain", c.lr_gain);
            c.lr_pos = get_or(j, "lr_pos", c.lr_pos);
            c.momentum = get_or(j, "momentum", c.momentum);
            c.beta2 = get_or(j, "beta2", c.beta2);
            c.epsilon = get_or(j, "epsilon", c.epsilon);
            c.window = get_or(j, "window", c.window);
            c.tau = get_or(j, "tau", c.tau);
            if (j.contains("grid"))
            {
                const json &g = j.at("grid");
                c.grid.low_deg = get_or(g, "low_deg", c.grid.low_deg);
                c.grid.step_deg = get_or(g, "step_deg", c.grid.step_deg);
                c.grid.count = get_or(g, "count", c.grid.count);
            }
            c.seed = get_or(j, "seed", c.seed);
            c.patience = get_or(j, "patience", c.patience);
            c.validation_fraction = get_or(j, "validation_fraction", c.validation_fraction);
            c.selection = validation_metric_from_string(get_or<std::string>(j, "selection", std::string(to_string(c.selection))));
            c.n_sources = get_or(j, "n_sources", c.n_sources);
            return c;
        }
        catch (const json::exception &e)
        {
            throw FormatError(std::string("training config: ") + e.what());
        }
    }

    inline json read_json(const std::string &path)
    {
        std::ifstream in(path);
        if (!in)
            throw ConfigError("cannot open '" + path + "'");
        try
        {
            return json::parse(in);
        }
        catch (const json::exception &e)
        {
            throw FormatError("'" + path + "': " + e.what());
        }
    }

    inline void write_text(const std::string &path, const std::string &text)
    {
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw ConfigError("cannot write '" + path + "'");
        out << text;
    }

    inline void write_json(const std::string &path, const json &j)
    {
        write_text(path, j.dump(2) + "\n");
    }

    inline void save_array(const std::string &path, const ArrayParams &p) { write_json(path, to_json(p)); }
    inline ArrayParams load_array(const std::string &path) { return array_from_json(read_json(path)); }

    struct DatasetFile
    {
        SimConfig config;
        ArrayParams physical;
        Dataset scenes;
    };

    namespace detail
    {
        template <typename T>
        void put(std::ostream &out, T value)
        {
            out.write(reinterpret_cast<const char *>(&value), sizeof(T));
        }

        template <typename T>
        T take(std::istream &in)
        {
            T value{};
            if (!in.read(reinterpret_cast<char *>(&value), sizeof(T)))
                throw FormatError("dataset container truncated");
            return value;
        }
    }

    inline void write_dataset(std::ostream &out, const DatasetFile &ds)
    {
        const std::string header = json{{"config", to_json(ds.config)}, {"physical", to_json(ds.physical)},
                                         {"n_scenes", ds.scenes.size()}}
                                       .dump();
        out.write(dataset_magic, sizeof(dataset_magic));
        detail::put<std::uint32_t>(out, dataset_version);
        detail::put<std::uint64_t>(out, header.size());
        out.write(header.data(), std::streamsize(header.size()));
        for (const Scene &s : ds.scenes)
        {
            detail::put<std::uint32_t>(out, std::uint32_t(s.thetas.size()));
            detail::put<std::uint32_t>(out, std::uint32_t(s.snapshots.rows()));
            detail::put<std::uint32_t>(out, std::uint32_t(s.snapshots.cols()));
            for (double t : s.thetas)
                detail::put<double>(out, t);
            for (Eigen::Index r = 0; r < s.snapshots.rows(); ++r)
                for (Eigen::Index c = 0; c < s.snapshots.cols(); ++c)
                {
                    detail::put<double>(out, s.snapshots(r, c).real());
                    detail::put<double>(out, s.snapshots(r, c).imag());
                }
        }
        if (!out)
            throw ConfigError("dataset write failed");
    }

    inline DatasetFile read_dataset(std::istream &in)
    {
        char magic[8];
        if (!in.read(magic, 8) || std::memcmp(magic, dataset_magic, 8) != 0)
            throw FormatError("not a dataset container (bad magic)");
        const auto version = detail::take<std::uint32_t>(in);
        if (version != dataset_version)
            throw FormatError("unsupported dataset version " + std::to_string(version));
        const auto header_len = detail::take<std::uint64_t>(in);
        if (header_len > (std::uint64_t(1) << 32))
            throw FormatError("dataset header too large");
        std::string header(header_len, '\0');
        if (!in.read(header.data(), std::streamsize(header_len)))
            throw FormatError("dataset container truncated");

        DatasetFile ds;
        json h;
        try
        {
            h = json::parse(header);
        }
        catch (const json::exception &e)
        {
            throw FormatError(std::string("dataset header: ") + e.what());
        }
        ds.config = sim_config_from_json(h.at("config"));
        ds.physical = array_from_json(h.at("physical"));
        const auto n_scenes = h.at("n_scenes").get<std::size_t>();
        ds.scenes.resize(n_scenes);
        for (Scene &s : ds.scenes)
        {
            const auto m = detail::take<std::uint32_t>(in);
            const auto n = detail::take<std::uint32_t>(in);
            const auto t = detail::take<std::uint32_t>(in);
            s.thetas.resize(m);
            for (auto &theta : s.thetas)
                theta = detail::take<double>(in);
            s.snapshots.resize(n, t);
            for (std::uint32_t r = 0; r < n; ++r)
                for (std::uint32_t c = 0; c < t; ++c)
                {
                    const double re = detail::take<double>(in);
                    const double im = detail::take<double>(in);
                    s.snapshots(r, c) = cdouble(re, im);
                }
        }
        return ds;
    }

    inline void save_dataset(const std::string &path, const DatasetFile &ds)
    {
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw ConfigError("cannot write '" + path + "'");
        write_dataset(out, ds);
    }

    inline DatasetFile load_dataset(const std::string &path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw ConfigError("cannot open '" + path + "'");
        return read_dataset(in);
    }

    struct Checkpoint
    {
        ArrayParams array;
        TrainConfig config;
        std::size_t epoch = 0;
    };

    inline json to_json(const Checkpoint &c)
    {
        return {{"magic", checkpoint_magic}, {"version", checkpoint_version}, {"epoch", c.epoch},
                {"config", to_json(c.config)}, {"array", to_json(c.array)}};
    }

    inline Checkpoint checkpoint_from_json(const json &j)
    {
        if (!j.is_object() || get_or<std::string>(j, "magic", "") != checkpoint_magic)
            throw FormatError("not a checkpoint (bad magic)");
        if (get_or(j, "version", 0) != checkpoint_version)
            throw FormatError("unsupported checkpoint version");
        return Checkpoint{array_from_json(j.at("array")), train_config_from_json(j.at("config")),
                          j.at("epoch").get<std::size_t>()};
    }

    inline void save_checkpoint(const std::string &path, const Checkpoint &c) { write_json(path, to_json(c)); }
    inline Checkpoint load_checkpoint(const std::string &path) { return checkpoint_from_json(read_json(path)); }

    // A checkpoint or a bare array document
    inline ArrayParams load_array_or_checkpoint(const std::string &path)
    {
        const json j = read_json(path);
        if (j.is_object() && j.contains("magic"))
            return checkpoint_from_json(j).array;
        return array_from_json(j);
    }
}

#endif
