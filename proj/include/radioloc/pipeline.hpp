// SPDX-License-Identifier: Apache-2.0
//
// radioloc: urban radio-map localization benchmark
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

#pragma once

// File-backed pipeline stages shared by the command-line tool and the acceptance run. Every stage
// writes a manifest.json with the full run configuration, the tool version, the checksums of the
// manifests it consumed and the checksums of what it wrote. Timings go to timing.json so that the
// rest of a stage directory is reproducible byte for byte.

#include "radioloc/dataset.hpp"
#include "radioloc/eval.hpp"
#include "radioloc/fingerprint.hpp"
#include "radioloc/locnet.hpp"
#include "radioloc/nn/optim.hpp"
#include "radioloc/toa.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace radioloc::pipeline
{

namespace fs = std::filesystem;

inline constexpr const char *tool_version = "1.0.0";
inline constexpr const char *manifest_format = "radioloc-run";
inline constexpr int manifest_version = 1;

// ---------------------------------------------------------------------------------------------
// Run configuration

struct RunConfig
{
    SceneGenConfig scenes;
    LinkBudget budget;
    DpmConfig dpm;
    std::uint64_t dataset_seed = 7;
    Scenario scenario = Scenario::Nominal;
    ToaConfig toa;
    std::vector<double> toa_sigmas{1e-4, 10.0, 20.0};
    std::vector<double> toa_bias{0.7, 20.0};
    int toa_anchors = 3;
    std::string net_preset = "desk"; // desk | full
    int net_grid = 64;
    Activation activation = Activation::LeakyRelu;
    InputEncoding inputs;
    TrainConfig train;
    std::vector<int> knn_k{16};
    AdaptiveKnnConfig adaptive;
    std::vector<double> margins_db{0.0, 10.0};
    int jobs = 1;

    // Desk scale: 128 px cities at 2 m, networks on a 64 grid, 20 maps.
    static RunConfig desk()
    {
        RunConfig c;
        auto &s = c.scenes;
        s.n_maps = 20;
        s.grid.size_px = 128;
        s.grid.pixel_len_m = 2.0;
        s.street_pitch_px = 20;
        s.street_width_min_px = 4;
        s.street_width_max_px = 6;
        s.n_bs_pool = 8;
        s.n_ue = 40;
        s.n_deployments = 4;
        s.bs_per_deployment = 3;
        c.net_grid = 64;
        c.net_preset = "desk";
        c.train.lr = 1e-3;
        c.train.epochs = 20;
        c.train.lr_drop_epoch = 0;
        c.knn_k = {16, 40};
        return c;
    }

    // Full scale: 256 px cities at 1 m, 99 maps, the full network.
    static RunConfig full()
    {
        RunConfig c;
        c.net_preset = "full";
        c.net_grid = 256;
        c.scenes.bs_per_deployment = 5;
        c.knn_k = {16, 40, 300, 1500};
        return c;
    }

    [[nodiscard]] NetConfig net() const
    {
        const int J = scenes.bs_per_deployment;
        NetConfig n;
        if (net_preset == "desk")
            n = NetConfig::desk(J, inputs);
        else if (net_preset == "full")
            n = NetConfig::full(J, inputs);
        else
            throw ConfigError("unknown net preset '" + net_preset + "'");
        n.grid = net_grid;
        n.final_activation = activation;
        return n;
    }

    [[nodiscard]] SimulationConfig simulation(bool with_cars) const
    {
        SimulationConfig s;
        s.scenes = scenes;
        s.budget = budget;
        s.dpm = dpm;
        s.with_cars = with_cars;
        s.jobs = jobs;
        return s;
    }

    void validate() const
    {
        scenes.validate();
        budget.validate();
        dpm.validate();
        train.validate();
        (void)net();
        if (toa_anchors < 3)
            throw ConfigError("toa_anchors must be at least 3");
        if (jobs < 1)
            throw ConfigError("jobs must be at least 1");
        for (int k : knn_k)
            if (k < 1)
                throw ConfigError("knn k must be positive");
    }
};

inline nlohmann::json to_json(const RunConfig &c)
{
    const auto &s = c.scenes;
    nlohmann::json j;
    j["scenes"] = {{"seed", s.seed},
                   {"n_maps", s.n_maps},
                   {"size_px", s.grid.size_px},
                   {"pixel_len_m", s.grid.pixel_len_m},
                   {"street_pitch_px", s.street_pitch_px},
                   {"street_width_min_px", s.street_width_min_px},
                   {"street_width_max_px", s.street_width_max_px},
                   {"building_fill", s.building_fill},
                   {"n_cars", s.n_cars},
                   {"car_width_m", s.car_width_m},
                   {"car_length_m", s.car_length_m},
                   {"n_bs_pool", s.n_bs_pool},
                   {"n_ue", s.n_ue},
                   {"n_deployments", s.n_deployments},
                   {"bs_per_deployment", s.bs_per_deployment},
                   {"min_bs_separation_m", s.min_bs_separation_m}};
    j["budget"] = radioloc::to_json(c.budget);
    const auto &d = c.dpm;
    j["dpm"] = {{"fs_ref_loss_db", d.fs_ref_loss_db},     {"fs_exponent", d.fs_exponent},
                {"diff_loss_base_db", d.diff_loss_base_db}, {"diff_loss_growth", d.diff_loss_growth},
                {"diff_angle_ref_deg", d.diff_angle_ref_deg}, {"diff_loss_cap_db", d.diff_loss_cap_db},
                {"max_diff_count", d.max_diff_count},       {"neighborhood", d.neighborhood},
                {"min_distance_m", d.min_distance_m}};
    j["dataset"] = {{"seed", c.dataset_seed}, {"scenario", to_string(c.scenario)}};
    j["toa"] = {{"noise_sigma_m", c.toa.noise_sigma_m},
                {"apply_excess_delay", c.toa.apply_excess_delay},
                {"wall_permittivity", c.toa.wall_permittivity},
                {"wall_thickness_m", c.toa.wall_thickness_m},
                {"sigmas", c.toa_sigmas},
                {"bias_m", c.toa_bias},
                {"anchors", c.toa_anchors}};
    j["net"] = {{"preset", c.net_preset},
                {"grid", c.net_grid},
                {"activation", to_string(c.activation)},
                {"use_city", c.inputs.use_city},
                {"use_tx", c.inputs.use_tx}};
    const auto &t = c.train;
    j["train"] = {{"loss", to_string(t.loss)},        {"lr", t.lr},         {"lr_drop_factor", t.lr_drop_factor},
                  {"lr_drop_epoch", t.lr_drop_epoch}, {"epochs", t.epochs}, {"batch", t.batch},
                  {"seed", t.seed},                   {"warmup_epochs", t.warmup_epochs}};
    j["eval"] = {{"knn_k", c.knn_k},
                 {"adaptive_alpha", c.adaptive.alpha},
                 {"adaptive_k_max", c.adaptive.k_max},
                 {"margins_db", c.margins_db}};
    return j;
}

namespace detail
{

template <class T>
void take(const nlohmann::json &j, const char *key, T &dst, const std::string &section)
{
    if (!j.contains(key))
        return;
    try
    {
        dst = j.at(key).get<T>();
    }
    catch (const nlohmann::json::exception &e)
    {
        throw ConfigError("config " + section + "." + key + ": " + e.what());
    }
}

inline void check_keys(const nlohmann::json &j, const std::vector<std::string> &known, const std::string &section)
{
    if (!j.is_object())
        throw ConfigError("config " + section + ": expected an object");
    for (const auto &[k, v] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ConfigError("config " + section + ": unknown key '" + k + "'");
}

} // namespace detail

// Overlays the keys present in `j` on `base`. Accepts either a bare config object or any stage
// manifest, whose "config" member is then used.
inline RunConfig from_json(const nlohmann::json &in, RunConfig base = RunConfig::desk())
{
    using detail::take;
    const nlohmann::json &j = in.contains("config") && in.contains("format") ? in.at("config") : in;
    detail::check_keys(j, {"scenes", "budget", "dpm", "dataset", "toa", "net", "train", "eval"}, "root");
    RunConfig c = std::move(base);
    if (j.contains("scenes"))
    {
        const auto &s = j.at("scenes");
        auto &o = c.scenes;
        detail::check_keys(s, {"seed", "n_maps", "size_px", "pixel_len_m", "street_pitch_px", "street_width_min_px",
                               "street_width_max_px", "building_fill", "n_cars", "car_width_m", "car_length_m",
                               "n_bs_pool", "n_ue", "n_deployments", "bs_per_deployment", "min_bs_separation_m"},
                           "scenes");
        take(s, "seed", o.seed, "scenes");
        take(s, "n_maps", o.n_maps, "scenes");
        take(s, "size_px", o.grid.size_px, "scenes");
        take(s, "pixel_len_m", o.grid.pixel_len_m, "scenes");
        take(s, "street_pitch_px", o.street_pitch_px, "scenes");
        take(s, "street_width_min_px", o.street_width_min_px, "scenes");
        take(s, "street_width_max_px", o.street_width_max_px, "scenes");
        take(s, "building_fill", o.building_fill, "scenes");
        take(s, "n_cars", o.n_cars, "scenes");
        take(s, "car_width_m", o.car_width_m, "scenes");
        take(s, "car_length_m", o.car_length_m, "scenes");
        take(s, "n_bs_pool", o.n_bs_pool, "scenes");
        take(s, "n_ue", o.n_ue, "scenes");
        take(s, "n_deployments", o.n_deployments, "scenes");
        take(s, "bs_per_deployment", o.bs_per_deployment, "scenes");
        take(s, "min_bs_separation_m", o.min_bs_separation_m, "scenes");
    }
    if (j.contains("budget"))
    {
        const auto &b = j.at("budget");
        detail::check_keys(b, {"tx_power_dbm", "noise_psd_dbm_hz", "bandwidth_hz", "noise_floor_db", "carrier_ghz"},
                           "budget");
        take(b, "tx_power_dbm", c.budget.tx_power_dbm, "budget");
        take(b, "noise_psd_dbm_hz", c.budget.noise_psd_dbm_hz, "budget");
        take(b, "bandwidth_hz", c.budget.bandwidth_hz, "budget");
        take(b, "noise_floor_db", c.budget.noise_floor_db, "budget");
        take(b, "carrier_ghz", c.budget.carrier_ghz, "budget");
    }
    if (j.contains("dpm"))
    {
        const auto &d = j.at("dpm");
        detail::check_keys(d, {"fs_ref_loss_db", "fs_exponent", "diff_loss_base_db", "diff_loss_growth",
                               "diff_angle_ref_deg", "diff_loss_cap_db", "max_diff_count", "neighborhood",
                               "min_distance_m"},
                           "dpm");
        take(d, "fs_ref_loss_db", c.dpm.fs_ref_loss_db, "dpm");
        take(d, "fs_exponent", c.dpm.fs_exponent, "dpm");
        take(d, "diff_loss_base_db", c.dpm.diff_loss_base_db, "dpm");
        take(d, "diff_loss_growth", c.dpm.diff_loss_growth, "dpm");
        take(d, "diff_angle_ref_deg", c.dpm.diff_angle_ref_deg, "dpm");
        take(d, "diff_loss_cap_db", c.dpm.diff_loss_cap_db, "dpm");
        take(d, "max_diff_count", c.dpm.max_diff_count, "dpm");
        take(d, "neighborhood", c.dpm.neighborhood, "dpm");
        take(d, "min_distance_m", c.dpm.min_distance_m, "dpm");
    }
    if (j.contains("dataset"))
    {
        const auto &d = j.at("dataset");
        detail::check_keys(d, {"seed", "scenario"}, "dataset");
        take(d, "seed", c.dataset_seed, "dataset");
        if (d.contains("scenario"))
            c.scenario = scenario_from_string(d.at("scenario").get<std::string>());
    }
    if (j.contains("toa"))
    {
        const auto &t = j.at("toa");
        detail::check_keys(t, {"noise_sigma_m", "apply_excess_delay", "wall_permittivity", "wall_thickness_m",
                               "sigmas", "bias_m", "anchors"},
                           "toa");
        take(t, "noise_sigma_m", c.toa.noise_sigma_m, "toa");
        take(t, "apply_excess_delay", c.toa.apply_excess_delay, "toa");
        take(t, "wall_permittivity", c.toa.wall_permittivity, "toa");
        take(t, "wall_thickness_m", c.toa.wall_thickness_m, "toa");
        take(t, "sigmas", c.toa_sigmas, "toa");
        take(t, "bias_m", c.toa_bias, "toa");
        take(t, "anchors", c.toa_anchors, "toa");
    }
    if (j.contains("net"))
    {
        const auto &n = j.at("net");
        detail::check_keys(n, {"preset", "grid", "activation", "use_city", "use_tx"}, "net");
        take(n, "preset", c.net_preset, "net");
        take(n, "grid", c.net_grid, "net");
        if (n.contains("activation"))
            c.activation = activation_from_string(n.at("activation").get<std::string>());
        take(n, "use_city", c.inputs.use_city, "net");
        take(n, "use_tx", c.inputs.use_tx, "net");
    }
    if (j.contains("train"))
    {
        const auto &t = j.at("train");
        detail::check_keys(t, {"loss", "lr", "lr_drop_factor", "lr_drop_epoch", "epochs", "batch", "seed",
                               "warmup_epochs"},
                           "train");
        if (t.contains("loss"))
            c.train.loss = loss_from_string(t.at("loss").get<std::string>());
        take(t, "lr", c.train.lr, "train");
        take(t, "lr_drop_factor", c.train.lr_drop_factor, "train");
        take(t, "lr_drop_epoch", c.train.lr_drop_epoch, "train");
        take(t, "epochs", c.train.epochs, "train");
        take(t, "batch", c.train.batch, "train");
        take(t, "seed", c.train.seed, "train");
        take(t, "warmup_epochs", c.train.warmup_epochs, "train");
    }
    if (j.contains("eval"))
    {
        const auto &e = j.at("eval");
        detail::check_keys(e, {"knn_k", "adaptive_alpha", "adaptive_k_max", "margins_db"}, "eval");
        take(e, "knn_k", c.knn_k, "eval");
        take(e, "adaptive_alpha", c.adaptive.alpha, "eval");
        take(e, "adaptive_k_max", c.adaptive.k_max, "eval");
        take(e, "margins_db", c.margins_db, "eval");
    }
    return c;
}

// ---------------------------------------------------------------------------------------------
// Manifests

struct StageWriter
{
    fs::path dir;
    nlohmann::json outputs = nlohmann::json::object();

    void write(const std::string &rel, const std::string &bytes)
    {
        io::write_atomic(dir / rel, bytes);
        outputs[rel] = io::hex32(io::crc32_bytes(bytes.data(), bytes.size()));
    }

    // Records a file that some other writer already placed under dir.
    void record(const std::string &rel) { outputs[rel] = io::file_crc32(dir / rel); }
};

inline std::string manifest_checksum(const fs::path &dir) { return io::file_crc32(dir / "manifest.json"); }

inline void finish_stage(const StageWriter &w, const std::string &stage, const RunConfig &cfg,
                         const nlohmann::json &inputs, const nlohmann::json &extra = nlohmann::json::object())
{
    nlohmann::json j = {{"format", manifest_format},
                        {"version", manifest_version},
                        {"stage", stage},
                        {"tool_version", tool_version},
                        {"config", to_json(cfg)},
                        {"inputs", inputs},
                        {"outputs", w.outputs}};
    for (const auto &[k, v] : extra.items())
        j[k] = v;
    io::write_atomic(w.dir / "manifest.json", j.dump(2) + "\n");
}

inline nlohmann::json read_stage_manifest(const fs::path &dir, const std::string &stage)
{
    const auto path = dir / "manifest.json";
    nlohmann::json j;
    try
    {
        j = nlohmann::json::parse(io::read_file(path));
    }
    catch (const nlohmann::json::exception &e)
    {
        throw MalformedFileError(path.string() + ": " + e.what());
    }
    if (j.value("format", "") != manifest_format)
        throw MalformedFileError(path.string() + ": not a run manifest");
    if (j.value("version", 0) != manifest_version)
        throw VersionMismatchError(path.string() + ": unsupported manifest version");
    if (j.value("stage", "") != stage)
        throw MalformedFileError(path.string() + ": expected a '" + stage + "' stage, found '" +
                                 j.value("stage", "") + "'");
    for (const auto &[rel, crc] : j.at("outputs").items())
        if (io::file_crc32(dir / rel) != crc.get<std::string>())
            throw ChecksumError(path.string() + ": checksum mismatch for " + rel);
    return j;
}

// Inputs are recorded relative to the stage's own directory so a moved run tree stays valid.
inline nlohmann::json input_ref(const fs::path &dir, const fs::path &out)
{
    const auto rel = fs::absolute(dir).lexically_normal().lexically_relative(fs::absolute(out).lexically_normal());
    return {{"path", rel.generic_string()}, {"manifest_crc32", manifest_checksum(dir)}};
}

inline void write_timing(const fs::path &dir, const nlohmann::json &t)
{
    io::write_atomic(dir / "timing.json", t.dump(2) + "\n");
}

using Progress = std::function<void(const std::string &)>;

// ---------------------------------------------------------------------------------------------
// gen-scenes: map_NNNN/{buildings.mask, cars.mask, city.png, scene.json}

namespace detail
{

inline nlohmann::json positions_json(const std::vector<Position> &ps)
{
    nlohmann::json a = nlohmann::json::array();
    for (const auto &p : ps)
        a.push_back({p.x, p.y});
    return a;
}

inline std::vector<Position> positions_from(const nlohmann::json &a)
{
    std::vector<Position> out;
    for (const auto &p : a)
        out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return out;
}

} // namespace detail

inline void gen_scenes(const RunConfig &cfg, const fs::path &out, const Progress &progress = {})
{
    cfg.scenes.validate();
    fs::create_directories(out);
    StageWriter w{out};
    std::vector<GeneratedMap> maps(std::size_t(std::max(cfg.scenes.n_maps, 0)));
    parallel_for(maps.size(), cfg.jobs, [&](std::size_t i) { maps[i] = generate_map(cfg.scenes, int(i)); });
    nlohmann::json list = nlohmann::json::array();
    for (const auto &m : maps)
    {
        const auto sub = radioloc::detail::map_dir_name(m.map_id);
        w.write(sub + "/buildings.mask", io::encode_binary_grid(m.scene.buildings));
        w.write(sub + "/cars.mask", io::encode_binary_grid(m.scene.cars));
        w.write(sub + "/city.png", io::encode_png_gray8(radioloc::detail::city_image(m.scene.buildings)));
        nlohmann::json deps = nlohmann::json::array();
        for (const auto &d : m.deployments)
            deps.push_back(d.bs_ids);
        const nlohmann::json sj = {{"map_id", m.map_id},
                                   {"attempt", m.attempt},
                                   {"spec", radioloc::to_json(m.scene.spec)},
                                   {"bs", detail::positions_json(m.scene.bs)},
                                   {"ue", detail::positions_json(m.scene.ue)},
                                   {"deployments", deps}};
        w.write(sub + "/scene.json", sj.dump(2) + "\n");
        list.push_back(m.map_id);
        if (progress)
            progress("scene " + sub + " (attempt " + std::to_string(m.attempt) + ")");
    }
    finish_stage(w, "gen-scenes", cfg, nlohmann::json::object(), {{"maps", list}});
}

inline std::vector<GeneratedMap> load_scenes(const fs::path &dir)
{
    const auto j = read_stage_manifest(dir, "gen-scenes");
    std::vector<GeneratedMap> out;
    for (const auto &id : j.at("maps"))
    {
        const int map_id = id.get<int>();
        const auto sub = radioloc::detail::map_dir_name(map_id);
        const auto sj = nlohmann::json::parse(io::read_file(dir / sub / "scene.json"));
        GeneratedMap m;
        m.map_id = map_id;
        m.attempt = sj.at("attempt").get<int>();
        m.scene.spec = radioloc::detail::grid_spec_from_json(sj.at("spec"), sub + "/scene.json");
        m.scene.buildings = io::decode_binary_grid(io::read_file(dir / sub / "buildings.mask"), sub);
        m.scene.cars = io::decode_binary_grid(io::read_file(dir / sub / "cars.mask"), sub);
        m.scene.bs = detail::positions_from(sj.at("bs"));
        m.scene.ue = detail::positions_from(sj.at("ue"));
        for (const auto &d : sj.at("deployments"))
            m.deployments.push_back({d.get<std::vector<int>>()});
        out.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// simulate: map_NNNN/{bs_NNN.rmap, bs_NNN.png}, map_NNNN/done.json written last. A map whose
// done.json is present and whose files match it is skipped, so an interrupted run resumes per map.

inline void simulate(const RunConfig &cfg, const fs::path &scenes_dir, bool with_cars, const fs::path &out,
                     const Progress &progress = {})
{
    cfg.budget.validate();
    cfg.dpm.validate();
    const auto scenes = load_scenes(scenes_dir);
    fs::create_directories(out);
    nlohmann::json timing = nlohmann::json::object();
    StageWriter w{out};
    nlohmann::json list = nlohmann::json::array();
    for (const auto &m : scenes)
    {
        const auto sub = radioloc::detail::map_dir_name(m.map_id);
        const auto done = out / sub / "done.json";
        bool resume = false;
        if (fs::exists(done))
        {
            try
            {
                const auto dj = nlohmann::json::parse(io::read_file(done));
                resume = true;
                for (const auto &[rel, crc] : dj.at("files").items())
                    if (!fs::exists(out / rel) || io::file_crc32(out / rel) != crc.get<std::string>())
                        resume = false;
            }
            catch (const std::exception &)
            {
                resume = false;
            }
        }
        const auto t0 = std::chrono::steady_clock::now();
        if (!resume)
        {
            const auto maps = simulate_scene(m.scene, with_cars, cfg.budget, cfg.dpm, cfg.jobs);
            StageWriter mw{out};
            for (std::size_t b = 0; b < maps.size(); ++b)
            {
                const auto stem = sub + "/" + radioloc::detail::bs_file_stem(int(b));
                mw.write(stem + ".rmap", radioloc::detail::radiomap_bytes(maps[b]));
                mw.write(stem + ".png", io::encode_png_gray8(io::quantize_gray(to_gray(maps[b], cfg.budget))));
            }
            io::write_atomic(done, nlohmann::json{{"files", mw.outputs}}.dump(2) + "\n");
        }
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        timing[sub] = sec;
        for (std::size_t b = 0; b < m.scene.bs.size(); ++b)
        {
            const auto stem = sub + "/" + radioloc::detail::bs_file_stem(int(b));
            w.record(stem + ".rmap");
            w.record(stem + ".png");
        }
        list.push_back(m.map_id);
        if (progress)
        {
            std::ostringstream s;
            s << "simulated " << sub << " (" << m.scene.bs.size() << " BSs, cars " << (with_cars ? "on" : "off")
              << ") in " << (resume ? "0 s, resumed" : std::to_string(sec) + " s");
            progress(s.str());
        }
    }
    finish_stage(w, "simulate", cfg, {{"scenes", input_ref(scenes_dir, out)}},
                 {{"maps", list}, {"with_cars", with_cars}});
    write_timing(out, {{"per_map_s", timing}});
}

inline std::vector<RadioMapPtr> load_radio_maps(const fs::path &dir, const GeneratedMap &m)
{
    const auto sub = radioloc::detail::map_dir_name(m.map_id);
    std::vector<RadioMapPtr> out;
    for (std::size_t b = 0; b < m.scene.bs.size(); ++b)
    {
        const auto rel = sub + "/" + radioloc::detail::bs_file_stem(int(b)) + ".rmap";
        out.push_back(std::make_shared<RadioMap>(
            radioloc::detail::radiomap_from_bytes(io::read_file(dir / rel), m.scene.spec, m.scene.bs[b], rel)));
    }
    return out;
}

// Reassembles MapProducts from a scenes directory and up to two simulation directories.
inline std::vector<MapProducts> load_products(const fs::path &scenes_dir, const fs::path &sim_no_cars,
                                              const std::optional<fs::path> &sim_with_cars)
{
    const auto scenes = load_scenes(scenes_dir);
    const auto a = read_stage_manifest(sim_no_cars, "simulate");
    if (a.at("with_cars").get<bool>())
        throw MissingProductError(sim_no_cars.string() + " holds maps simulated with cars");
    if (sim_with_cars)
    {
        const auto b = read_stage_manifest(*sim_with_cars, "simulate");
        if (!b.at("with_cars").get<bool>())
            throw MissingProductError(sim_with_cars->string() + " holds maps simulated without cars");
    }
    std::vector<MapProducts> out;
    for (const auto &m : scenes)
    {
        MapProducts p;
        p.map_id = m.map_id;
        p.deployments = m.deployments;
        p.scene = std::make_shared<CityScene>(m.scene);
        p.maps_no_cars = load_radio_maps(sim_no_cars, m);
        if (sim_with_cars)
            p.maps_with_cars = load_radio_maps(*sim_with_cars, m);
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// make-dataset: the RSS dataset layout of the dataset module plus a run manifest.

inline void make_dataset(const RunConfig &cfg, const fs::path &scenes_dir, const fs::path &sim_no_cars,
                         const std::optional<fs::path> &sim_with_cars, const fs::path &out)
{
    const auto prods = load_products(scenes_dir, sim_no_cars, sim_with_cars);
    const auto ds = build_rss_dataset(prods, cfg.scenario, cfg.budget, cfg.dataset_seed);
    fs::create_directories(out);
    save_dataset(ds, out);
    StageWriter w{out};
    w.record("dataset.json");
    nlohmann::json inputs = {{"scenes", input_ref(scenes_dir, out)}, {"sim_no_cars", input_ref(sim_no_cars, out)}};
    if (sim_with_cars)
        inputs["sim_with_cars"] = input_ref(*sim_with_cars, out);
    finish_stage(w, "make-dataset", cfg, inputs,
                 {{"instances", ds.instances.size()},
                  {"train", ds.splits.train.size()},
                  {"val", ds.splits.val.size()},
                  {"test", ds.splits.test.size()}});
}

inline RssDataset load_dataset_stage(const fs::path &dir)
{
    read_stage_manifest(dir, "make-dataset");
    return load_rss_dataset(dir);
}

// ---------------------------------------------------------------------------------------------
// train: checkpoint.bin, train_log.csv

struct TrainedNet
{
    NetConfig net;
    std::shared_ptr<LocUNet<float>> model;
};

inline void train_stage(const RunConfig &cfg, const fs::path &dataset_dir, const fs::path &out,
                        const Progress &progress = {})
{
    const auto ds = load_dataset_stage(dataset_dir);
    auto ncfg = cfg.net();
    if (!ds.instances.empty())
        ncfg.n_bs = int(ds.instances.front().bs_ids.size());
    LocUNet<float> net(ncfg, cfg.train.seed);
    const InputEncoder enc(ds.spec, ds.budget, ncfg.grid, ncfg.inputs);
    TrainConfig tc = cfg.train;
    tc.jobs = cfg.jobs;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = train(net, ds, enc, tc, [&](const EpochLog &e) {
        if (progress)
            progress("epoch " + std::to_string(e.epoch) + " loss " + io::format4(e.train_loss) + " val AED " +
                     io::format4(e.val_aed_m) + " m");
    });
    fs::create_directories(out);
    StageWriter w{out};
    w.write("checkpoint.bin", nn::encode_checkpoint(net.named_params()));
    w.write("train_log.csv", log_csv(r.log));
    finish_stage(w, "train", cfg, {{"dataset", input_ref(dataset_dir, out)}},
                 {{"parameters", net.parameter_count()},
                  {"n_bs", ncfg.n_bs},
                  {"best_epoch", r.best_epoch},
                  {"best_val_aed_m", io::round4(r.best_val_aed_m)},
                  {"centroid_baseline_m", io::round4(r.centroid_baseline_m)},
                  {"converged", r.converged},
                  {"diverged", r.diverged}});
    write_timing(out, {{"train_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}});
}

inline TrainedNet load_trained(const fs::path &dir)
{
    const auto j = read_stage_manifest(dir, "train");
    const auto cfg = from_json(j);
    TrainedNet t;
    t.net = cfg.net();
    t.net.n_bs = j.at("n_bs").get<int>();
    t.model = std::make_shared<LocUNet<float>>(t.net, cfg.train.seed);
    nn::decode_checkpoint(io::read_file(dir / "checkpoint.bin"), t.model->named_params());
    return t;
}

// Network as an evaluation method. Instances are located by address inside `ds`.
inline Method locnet_method(const TrainedNet &t, const RssDataset &ds, std::string name = "locnet")
{
    auto enc = std::make_shared<InputEncoder>(ds.spec, ds.budget, t.net.grid, t.net.inputs);
    auto model = t.model;
    const RssDataset *dsp = &ds;
    Method m;
    m.name = std::move(name);
    m.thread_safe = false;
    m.localize = [model, enc, dsp](const LocalizationInstance &inst) -> std::optional<Position> {
        const int i = int(&inst - dsp->instances.data());
        if (i < 0 || i >= int(dsp->instances.size()))
            throw std::invalid_argument("locnet_method: instance is not part of the bound dataset");
        return predict(*model, *dsp, *enc, {i}).front();
    };
    return m;
}

// ---------------------------------------------------------------------------------------------
// evaluate / compare

inline std::vector<std::string> split_list(const std::string &s)
{
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s)
    {
        if (ch == ',')
        {
            if (!cur.empty())
                out.push_back(cur);
            cur.clear();
        }
        else
            cur += ch;
    }
    if (!cur.empty())
        out.push_back(cur);
    return out;
}

// Names: oracle, centroid, knn (one per configured k), adaptive-knn, locnet (needs a trained net).
inline std::vector<Method> make_methods(const std::vector<std::string> &names, const RunConfig &cfg,
                                        const RssDataset &ds, const std::optional<TrainedNet> &net)
{
    std::vector<Method> out;
    for (const auto &n : names)
    {
        if (n == "oracle")
            out.push_back(oracle_method());
        else if (n == "centroid")
            out.push_back(centroid_method(ds.spec));
        else if (n == "knn")
            for (int k : cfg.knn_k)
                out.push_back(knn_method({k}));
        else if (n == "adaptive-knn")
            out.push_back(adaptive_knn_method(cfg.adaptive));
        else if (n == "locnet")
        {
            if (!net)
                throw ConfigError("method locnet needs a trained network (--model)");
            out.push_back(locnet_method(*net, ds));
        }
        else
            throw ConfigError("unknown method '" + n + "'");
    }
    return out;
}

inline const std::vector<int> &split_indices(const RssDataset &ds, const std::string &split)
{
    if (split == "train")
        return ds.splits.train;
    if (split == "val")
        return ds.splits.val;
    if (split == "test")
        return ds.splits.test;
    throw ConfigError("unknown split '" + split + "'");
}

inline void evaluate_stage(const RunConfig &cfg, const fs::path &dataset_dir, const std::optional<fs::path> &model_dir,
                           const std::vector<std::string> &methods, const std::string &split, const fs::path &out)
{
    const auto ds = load_dataset_stage(dataset_dir);
    std::optional<TrainedNet> net;
    if (model_dir)
        net = load_trained(*model_dir);
    const auto ms = make_methods(methods, cfg, ds, net);
    const auto &idx = split_indices(ds, split);
    EvalReport r;
    for (const auto &m : ms)
        r.methods.push_back(evaluate(m, ds, idx, cfg.jobs));
    if (!idx.empty())
        for (double margin : cfg.margins_db)
            r.conditional.push_back(conditional_breakdown(r.methods, ds, margin));
    r.config = to_json(cfg);
    r.dataset_checksum = manifest_checksum(dataset_dir);
    fs::create_directories(out);
    write_report(r, out);
    StageWriter w{out};
    for (const char *f : {"report.csv", "conditional.csv", "cdf.csv", "cdf_exact.csv", "ood_matrix.csv", "report.json"})
        w.record(f);
    nlohmann::json inputs = {{"dataset", input_ref(dataset_dir, out)}};
    if (model_dir)
        inputs["model"] = input_ref(*model_dir, out);
    finish_stage(w, "evaluate", cfg, inputs, {{"split", split}, {"methods", methods}});
}

// Both datasets must hold the same instances; `with_cars_dir` carries measurements from maps with cars.
inline void compare_stage(const RunConfig &cfg, const fs::path &no_cars_dir, const fs::path &with_cars_dir,
                          const std::optional<fs::path> &nominal_model, const std::optional<fs::path> &robust_model,
                          const std::vector<std::string> &methods, const std::string &split, const fs::path &out)
{
    const auto a = load_dataset_stage(no_cars_dir);
    const auto b = load_dataset_stage(with_cars_dir);
    if (a.instances.size() != b.instances.size() || a.map_split.test != b.map_split.test)
        throw ConfigError("compare: the two datasets do not hold the same instances");
    for (std::size_t i = 0; i < a.instances.size(); ++i)
        if (a.instances[i].map_id != b.instances[i].map_id || a.instances[i].bs_ids != b.instances[i].bs_ids ||
            a.instances[i].truth.x != b.instances[i].truth.x || a.instances[i].truth.y != b.instances[i].truth.y)
            throw ConfigError("compare: the two datasets do not hold the same instances");
    const auto &idx = split_indices(a, split);

    // Rows of the out-of-distribution matrix. A network method is bound to one dataset, so it is
    // wrapped to dispatch on which dataset the instance comes from.
    std::optional<TrainedNet> nn_nom, nn_rob;
    if (nominal_model)
        nn_nom = load_trained(*nominal_model);
    if (robust_model)
        nn_rob = load_trained(*robust_model);
    auto dual = [&](const TrainedNet &t, const std::string &name) {
        const auto ma = locnet_method(t, a), mb = locnet_method(t, b);
        const auto *pa = a.instances.data();
        const std::size_t na = a.instances.size();
        Method m;
        m.name = name;
        m.thread_safe = false;
        m.localize = [ma, mb, pa, na](const LocalizationInstance &inst) {
            const bool in_a = &inst >= pa && &inst < pa + na;
            return in_a ? ma.localize(inst) : mb.localize(inst);
        };
        return m;
    };
    std::vector<std::pair<std::string, Method>> rows;
    if (nn_nom)
        rows.emplace_back("Nominal", dual(*nn_nom, "Nominal"));
    if (nn_rob)
        rows.emplace_back("Robustness", dual(*nn_rob, "Robustness"));
    for (const auto &n : methods)
        if (n != "locnet")
            for (const auto &m : make_methods({n}, cfg, a, std::nullopt))
                rows.emplace_back(m.name, m);

    EvalReport r;
    r.ood = ood_matrix(rows, a, b, idx, cfg.jobs);
    for (const auto &[row, m] : rows)
        r.methods.push_back(evaluate(m, b, idx, cfg.jobs));
    for (auto &m : r.methods)
        m.method += " @ DPM w/ cars";
    r.config = to_json(cfg);
    r.dataset_checksum = manifest_checksum(with_cars_dir);
    fs::create_directories(out);
    write_report(r, out);
    StageWriter w{out};
    for (const char *f : {"report.csv", "conditional.csv", "cdf.csv", "cdf_exact.csv", "ood_matrix.csv", "report.json"})
        w.record(f);
    nlohmann::json inputs = {{"dataset_no_cars", input_ref(no_cars_dir, out)}, {"dataset_with_cars", input_ref(with_cars_dir, out)}};
    if (nominal_model)
        inputs["nominal_model"] = input_ref(*nominal_model, out);
    if (robust_model)
        inputs["robust_model"] = input_ref(*robust_model, out);
    finish_stage(w, "compare", cfg, inputs, {{"split", split}, {"methods", methods}});
}

// ---------------------------------------------------------------------------------------------
// ToA benchmark

struct ToaBenchRow
{
    double sigma_m = 0;
    int anchors = 0;
    std::string method;
    double aed_m = 0;
    long n_ok = 0;
    long n_failed = 0;
    double nlos_fraction = 0;
};

inline RangingProblem ranging_problem(const ToaInstance &ti, int anchors, double sigma_m)
{
    RangingProblem p;
    const int n = std::min<int>(anchors, int(ti.anchors.size()));
    p.anchors.assign(ti.anchors.begin(), ti.anchors.begin() + n);
    p.ranges_m.assign(ti.ranges_m.begin(), ti.ranges_m.begin() + n);
    p.sigma_m = sigma_m;
    return p;
}

// Solvers: plain bisection SR-LS, bias-adjusted bisection for each b, correntropy, POCS.
inline std::vector<ToaBenchRow> toa_benchmark(const ToaDataset &ds, const std::vector<int> &idx, int anchors,
                                              double sigma_m, const std::vector<double> &bias_m, int jobs = 1)
{
    struct Solver
    {
        std::string name;
        std::function<SolverResult(RangingProblem)> run;
    };
    std::vector<Solver> solvers = {{"bisection", [](RangingProblem p) { return bisection_robust_localize(p); }}};
    for (double b : bias_m)
        solvers.push_back({"bisection b=" + io::format4(b), [b](RangingProblem p) {
                               p.bias_b_m = b;
                               return bisection_robust_localize(p);
                           }});
    solvers.push_back({"correntropy", [](RangingProblem p) { return correntropy_localize(p); }});
    solvers.push_back({"pocs", [](RangingProblem p) { return pocs_localize(p); }});

    long links = 0, nlos = 0;
    for (int i : idx)
    {
        const auto &ti = ds.instances[std::size_t(i)];
        for (int j = 0; j < std::min<int>(anchors, int(ti.los.size())); ++j)
        {
            ++links;
            nlos += ti.los[std::size_t(j)] == 0;
        }
    }
    std::vector<ToaBenchRow> rows;
    for (const auto &s : solvers)
    {
        std::vector<double> err(idx.size(), std::numeric_limits<double>::quiet_NaN());
        parallel_for(idx.size(), jobs, [&](std::size_t k) {
            const auto &ti = ds.instances[std::size_t(idx[k])];
            try
            {
                const auto r = s.run(ranging_problem(ti, anchors, sigma_m));
                if (std::isfinite(r.estimate.x) && std::isfinite(r.estimate.y))
                    err[k] = distance_px(r.estimate, ti.truth);
            }
            catch (const std::exception &)
            {
            }
        });
        ToaBenchRow row;
        row.sigma_m = sigma_m;
        row.anchors = anchors;
        row.method = s.name;
        row.nlos_fraction = links ? double(nlos) / double(links) : 0.0;
        double sum = 0;
        for (double e : err)
            if (std::isnan(e))
                ++row.n_failed;
            else
            {
                ++row.n_ok;
                sum += e;
            }
        row.aed_m = row.n_ok ? sum / double(row.n_ok) : std::numeric_limits<double>::quiet_NaN();
        rows.push_back(row);
    }
    return rows;
}

inline std::string toa_bench_csv(const std::vector<ToaBenchRow> &rows)
{
    std::ostringstream s;
    s << "sigma_m,anchors,method,aed_m,n_ok,n_failed,nlos_fraction\n";
    for (const auto &r : rows)
        s << io::format4(r.sigma_m) << ',' << r.anchors << ',' << r.method << ',' << num(r.aed_m) << ',' << r.n_ok
          << ',' << r.n_failed << ',' << io::format4(r.nlos_fraction) << '\n';
    return s.str();
}

// Builds one ToA dataset per sigma from car-free simulations and benchmarks the test split.
inline void toa_bench_stage(const RunConfig &cfg, const fs::path &scenes_dir, const fs::path &sim_no_cars,
                            const std::string &split, const fs::path &out, const Progress &progress = {})
{
    const auto prods = load_products(scenes_dir, sim_no_cars, std::nullopt);
    fs::create_directories(out);
    StageWriter w{out};
    std::vector<ToaBenchRow> all;
    std::optional<BiasCdf> cdf;
    for (double sigma : cfg.toa_sigmas)
    {
        ToaConfig tc = cfg.toa;
        tc.noise_sigma_m = sigma;
        const auto ds = build_toa_dataset(prods, cfg.dataset_seed, tc);
        if (!cdf)
            cdf = nlos_bias_cdf(ds);
        const auto &idx = split == "train" ? ds.splits.train : split == "val" ? ds.splits.val : ds.splits.test;
        auto rows = toa_benchmark(ds, idx, cfg.toa_anchors, sigma, cfg.toa_bias, cfg.jobs);
        if (progress)
            for (const auto &r : rows)
                progress("sigma " + io::format4(sigma) + " " + r.method + " AED " + num(r.aed_m) + " m");
        all.insert(all.end(), rows.begin(), rows.end());
    }
    w.write("toa_bench.csv", toa_bench_csv(all));
    std::ostringstream c;
    c << "bias_m,fraction\n";
    if (cdf)
        for (const auto &[b, f] : cdf->table(0.5, 100.0))
            c << io::format4(b) << ',' << io::format4(f) << '\n';
    w.write("bias_cdf.csv", c.str());
    finish_stage(w, "toa-bench", cfg, {{"scenes", input_ref(scenes_dir, out)}, {"sim_no_cars", input_ref(sim_no_cars, out)}},
                 {{"split", split},
                  {"los_fraction", cdf ? io::round4(cdf->los_fraction) : 0.0},
                  {"nlos_below_30m_fraction", cdf ? io::round4(cdf->nlos_below_30m_fraction) : 0.0}});
}

} // namespace radioloc::pipeline
