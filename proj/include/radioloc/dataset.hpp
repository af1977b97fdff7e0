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

// Benchmark datasets: simulation products per map, RSS localization instances for each scenario,
// ToA instances with noise and excess delay, the NLOS-bias CDF, and on-disk serialization.

#include "radioloc/dpm.hpp"
#include "radioloc/errors.hpp"
#include "radioloc/grid.hpp"
#include "radioloc/io.hpp"
#include "radioloc/parallel.hpp"
#include "radioloc/random.hpp"
#include "radioloc/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace radioloc
{

// Where the UE's measurements come from. Estimated maps are always the car-free DPM maps.
enum class Scenario
{
    Nominal,    // measurements from the car-free DPM maps
    Robustness, // measurements from DPM with cars
    OodDpm,     // out-of-distribution source for a Robustness-trained net
    OodDpmCars, // out-of-distribution source for a Nominal-trained net
};

enum class MapSource
{
    DpmNoCars,
    DpmWithCars,
};

inline MapSource ground_truth_source(Scenario s)
{
    return (s == Scenario::Robustness || s == Scenario::OodDpmCars) ? MapSource::DpmWithCars : MapSource::DpmNoCars;
}

inline std::string to_string(Scenario s)
{
    switch (s)
    {
    case Scenario::Nominal:
        return "Nominal";
    case Scenario::Robustness:
        return "Robustness";
    case Scenario::OodDpm:
        return "OOD-DPM";
    case Scenario::OodDpmCars:
        return "OOD-DPM-cars";
    }
    return "?";
}

inline Scenario scenario_from_string(const std::string &s)
{
    for (auto sc : {Scenario::Nominal, Scenario::Robustness, Scenario::OodDpm, Scenario::OodDpmCars})
        if (to_string(sc) == s)
            return sc;
    throw ConfigError("unknown scenario '" + s + "'");
}

using RadioMapPtr = std::shared_ptr<const RadioMap>;

// Everything simulated for one city map.
struct MapProducts
{
    int map_id = 0;
    std::shared_ptr<const CityScene> scene; // buildings + cars, bs pool, UEs
    std::vector<Deployment> deployments;
    std::vector<RadioMapPtr> maps_no_cars;   // one per pool BS
    std::vector<RadioMapPtr> maps_with_cars; // empty when not simulated
};

struct SimulationConfig
{
    SceneGenConfig scenes;
    LinkBudget budget;
    DpmConfig dpm;
    bool with_cars = true;
    int jobs = 1;
};

// Maps are simulated in parallel; each map runs its BSs sequentially so results never depend on jobs.
inline std::vector<MapProducts> simulate_maps(const SimulationConfig &cfg, const std::vector<int> &map_ids)
{
    cfg.scenes.validate();
    cfg.budget.validate();
    cfg.dpm.validate();
    std::vector<MapProducts> out(map_ids.size());
    parallel_for(map_ids.size(), cfg.jobs, [&](std::size_t i) {
        auto gm = generate_map(cfg.scenes, map_ids[i]);
        MapProducts p;
        p.map_id = gm.map_id;
        p.deployments = std::move(gm.deployments);
        auto scene = std::make_shared<CityScene>(std::move(gm.scene));
        for (auto &m : simulate_scene(*scene, false, cfg.budget, cfg.dpm))
            p.maps_no_cars.push_back(std::make_shared<RadioMap>(std::move(m)));
        if (cfg.with_cars)
            for (auto &m : simulate_scene(*scene, true, cfg.budget, cfg.dpm))
                p.maps_with_cars.push_back(std::make_shared<RadioMap>(std::move(m)));
        p.scene = std::move(scene);
        out[i] = std::move(p);
    });
    return out;
}

inline std::vector<MapProducts> simulate_maps(const SimulationConfig &cfg)
{
    std::vector<int> ids(cfg.scenes.n_maps);
    std::iota(ids.begin(), ids.end(), 0);
    return simulate_maps(cfg, ids);
}

struct LocalizationInstance
{
    int map_id = 0;
    int deployment_id = 0;
    int ue_id = 0;
    std::vector<int> bs_ids;            // pool indices, ascending
    std::vector<RadioMapPtr> est_maps;  // car-free DPM, one per BS
    std::vector<double> measured_pl;    // dB, rounded to 4 decimals
    Position truth;
    std::shared_ptr<const BinaryGrid> city; // buildings only
};

struct DatasetSplits
{
    std::vector<int> train, val, test; // instance indices
};

struct RssDataset
{
    GridSpec spec;
    LinkBudget budget;
    Scenario scenario = Scenario::Nominal;
    std::uint64_t seed = 0;
    MapSplit map_split;
    std::vector<LocalizationInstance> instances;
    DatasetSplits splits;
};

namespace detail
{

inline MapSplit split_present_maps(const std::vector<int> &map_ids, std::uint64_t seed)
{
    std::vector<int> sorted = map_ids;
    std::sort(sorted.begin(), sorted.end());
    const auto pos = split_maps(int(sorted.size()), seed);
    MapSplit s;
    for (int i : pos.train)
        s.train.push_back(sorted[i]);
    for (int i : pos.val)
        s.val.push_back(sorted[i]);
    for (int i : pos.test)
        s.test.push_back(sorted[i]);
    return s;
}

template <class Instances>
DatasetSplits assign_splits(const Instances &inst, const MapSplit &ms)
{
    DatasetSplits s;
    for (std::size_t i = 0; i < inst.size(); ++i)
    {
        const int m = inst[i].map_id;
        auto in = [m](const std::vector<int> &v) { return std::binary_search(v.begin(), v.end(), m); };
        if (in(ms.train))
            s.train.push_back(int(i));
        else if (in(ms.val))
            s.val.push_back(int(i));
        else if (in(ms.test))
            s.test.push_back(int(i));
    }
    return s;
}

} // namespace detail

// One instance per (map, deployment, UE). Measurements come from the scenario's ground-truth maps.
inline RssDataset build_rss_dataset(const std::vector<MapProducts> &products, Scenario scenario, const LinkBudget &budget,
                                    std::uint64_t seed)
{
    RssDataset ds;
    ds.budget = budget;
    ds.scenario = scenario;
    ds.seed = seed;
    const bool cars = ground_truth_source(scenario) == MapSource::DpmWithCars;
    std::vector<int> ids;
    for (const auto &p : products)
    {
        if (!p.scene)
            throw MissingProductError("map " + std::to_string(p.map_id) + " has no scene");
        const auto &gt = cars ? p.maps_with_cars : p.maps_no_cars;
        if (p.maps_no_cars.size() != p.scene->bs.size())
            throw MissingProductError("map " + std::to_string(p.map_id) + " lacks car-free radio maps");
        if (gt.size() != p.scene->bs.size())
            throw MissingProductError("map " + std::to_string(p.map_id) + " lacks radio maps with cars");
        ds.spec = p.scene->spec;
        ids.push_back(p.map_id);
        auto city = std::make_shared<BinaryGrid>(p.scene->buildings);
        for (std::size_t d = 0; d < p.deployments.size(); ++d)
            for (std::size_t u = 0; u < p.scene->ue.size(); ++u)
            {
                LocalizationInstance li;
                li.map_id = p.map_id;
                li.deployment_id = int(d);
                li.ue_id = int(u);
                li.bs_ids = p.deployments[d].bs_ids;
                li.truth = p.scene->ue[u];
                li.city = city;
                for (int b : li.bs_ids)
                {
                    li.est_maps.push_back(p.maps_no_cars[b]);
                    li.measured_pl.push_back(io::round4(gt[b]->at(li.truth)));
                }
                ds.instances.push_back(std::move(li));
            }
    }
    ds.map_split = detail::split_present_maps(ids, seed);
    ds.splits = detail::assign_splits(ds.instances, ds.map_split);
    return ds;
}

// Same instances with measurements swapped to another source (the OOD grid).
inline RssDataset with_measurements_from(const RssDataset &base, const std::vector<MapProducts> &products,
                                         Scenario scenario)
{
    RssDataset ds = base;
    ds.scenario = scenario;
    const bool cars = ground_truth_source(scenario) == MapSource::DpmWithCars;
    std::map<int, const MapProducts *> by_id;
    for (const auto &p : products)
        by_id[p.map_id] = &p;
    for (auto &li : ds.instances)
    {
        auto it = by_id.find(li.map_id);
        if (it == by_id.end())
            throw MissingProductError("map " + std::to_string(li.map_id) + " not simulated");
        const auto &gt = cars ? it->second->maps_with_cars : it->second->maps_no_cars;
        if (gt.size() != it->second->scene->bs.size())
            throw MissingProductError("map " + std::to_string(li.map_id) + " lacks the requested radio maps");
        for (std::size_t j = 0; j < li.bs_ids.size(); ++j)
            li.measured_pl[j] = io::round4(gt[li.bs_ids[j]]->at(li.truth));
    }
    return ds;
}

// --- ToA -------------------------------------------------------------------

struct ToaConfig
{
    double noise_sigma_m = 0.0;
    bool apply_excess_delay = false;
    double wall_permittivity = 4.0;
    double wall_thickness_m = 3.0;

    [[nodiscard]] double excess_delay_m() const { return (std::sqrt(wall_permittivity) - 1.0) * wall_thickness_m; }
};

struct ToaInstance
{
    int map_id = 0;
    int deployment_id = 0;
    int ue_id = 0;
    std::vector<int> bs_ids;
    std::vector<Position> anchors;      // meters
    std::vector<double> ranges_m;       // noisy, rounded to 4 decimals
    std::vector<double> clean_ranges_m; // dominant path length (plus excess delay when enabled)
    std::vector<std::uint8_t> los;
    Position truth; // meters
};

struct ToaDataset
{
    GridSpec spec;
    std::uint64_t seed = 0;
    ToaConfig cfg;
    MapSplit map_split;
    std::vector<ToaInstance> instances;
    DatasetSplits splits;
    int skipped_unreachable = 0; // instances dropped because a link had no path
};

inline Position to_meters(Position p, const GridSpec &spec) { return {p.x * spec.pixel_len_m, p.y * spec.pixel_len_m}; }

// Ranges from the car-free dominant paths; noise is seeded by (seed, map, deployment, UE).
inline ToaDataset build_toa_dataset(const std::vector<MapProducts> &products, std::uint64_t seed, const ToaConfig &cfg)
{
    if (cfg.noise_sigma_m < 0.0)
        throw ConfigError("build_toa_dataset: noise sigma must be non-negative");
    ToaDataset ds;
    ds.seed = seed;
    ds.cfg = cfg;
    std::vector<int> ids;
    for (const auto &p : products)
    {
        if (!p.scene || p.maps_no_cars.size() != p.scene->bs.size())
            throw MissingProductError("map " + std::to_string(p.map_id) + " lacks car-free radio maps");
        ds.spec = p.scene->spec;
        ids.push_back(p.map_id);
        for (std::size_t d = 0; d < p.deployments.size(); ++d)
            for (std::size_t u = 0; u < p.scene->ue.size(); ++u)
            {
                ToaInstance ti;
                ti.map_id = p.map_id;
                ti.deployment_id = int(d);
                ti.ue_id = int(u);
                ti.bs_ids = p.deployments[d].bs_ids;
                ti.truth = to_meters(p.scene->ue[u], ds.spec);
                const Pixel px = to_pixel(p.scene->ue[u], ds.spec.size_px);
                auto rng = make_rng({seed, stream::toa_noise, std::uint64_t(p.map_id), d, u});
                std::normal_distribution<double> noise(0.0, 1.0);
                bool ok = true;
                for (int b : ti.bs_ids)
                {
                    const auto &m = *p.maps_no_cars[b];
                    const double len = m.path_len_m[px];
                    if (!std::isfinite(len))
                    {
                        ok = false;
                        break;
                    }
                    const bool los = m.los[px] != 0;
                    // rounded up so the stored range never undercuts the geometric one
                    const double exact = len + ((!los && cfg.apply_excess_delay) ? cfg.excess_delay_m() : 0.0);
                    const double clean = io::round4(std::ceil(exact * 1e4 - 1e-6) / 1e4);
                    const double eps = noise(rng);
                    ti.anchors.push_back(to_meters(m.bs, ds.spec));
                    ti.clean_ranges_m.push_back(clean);
                    ti.ranges_m.push_back(io::round4(std::max(0.0, clean + cfg.noise_sigma_m * eps)));
                    ti.los.push_back(std::uint8_t(los));
                }
                if (!ok)
                {
                    ++ds.skipped_unreachable;
                    continue;
                }
                ds.instances.push_back(std::move(ti));
            }
    }
    ds.map_split = detail::split_present_maps(ids, seed);
    ds.splits = detail::assign_splits(ds.instances, ds.map_split);
    return ds;
}

struct BiasCdf
{
    std::vector<double> bias_m; // sorted, one entry per link
    double los_fraction = 0.0;
    double below_30m_fraction = 0.0;      // all links with bias < 30 m
    double nlos_below_30m_fraction = 0.0; // NLOS links only

    // Fraction of links with bias <= b.
    [[nodiscard]] double operator()(double b) const
    {
        if (bias_m.empty())
            return 0.0;
        return double(std::upper_bound(bias_m.begin(), bias_m.end(), b) - bias_m.begin()) / double(bias_m.size());
    }

    // (bias, fraction) rows on a regular grid.
    [[nodiscard]] std::vector<std::pair<double, double>> table(double step_m, double max_m) const
    {
        std::vector<std::pair<double, double>> out;
        for (int i = 0; i * step_m <= max_m + 1e-12; ++i)
            out.emplace_back(i * step_m, (*this)(i * step_m));
        return out;
    }
};

// Bias of the clean range over the straight-line distance.
inline BiasCdf nlos_bias_cdf(const ToaDataset &ds)
{
    BiasCdf cdf;
    std::size_t los = 0, nlos = 0, nlos_below = 0, below = 0;
    for (const auto &ti : ds.instances)
        for (std::size_t j = 0; j < ti.anchors.size(); ++j)
        {
            const double bias = ti.clean_ranges_m[j] - distance_px(ti.anchors[j], ti.truth);
            cdf.bias_m.push_back(bias);
            los += ti.los[j];
            below += bias < 30.0;
            if (!ti.los[j])
            {
                ++nlos;
                nlos_below += bias < 30.0;
            }
        }
    std::sort(cdf.bias_m.begin(), cdf.bias_m.end());
    if (!cdf.bias_m.empty())
    {
        cdf.los_fraction = double(los) / double(cdf.bias_m.size());
        cdf.below_30m_fraction = double(below) / double(cdf.bias_m.size());
    }
    if (nlos > 0)
        cdf.nlos_below_30m_fraction = double(nlos_below) / double(nlos);
    return cdf;
}

// --- serialization -----------------------------------------------------------

inline constexpr int dataset_format_version = 1;
inline constexpr const char *dataset_format_name = "radioloc-dataset";

inline nlohmann::json to_json(const GridSpec &s) { return {{"size_px", s.size_px}, {"pixel_len_m", s.pixel_len_m}}; }

inline nlohmann::json to_json(const LinkBudget &b)
{
    return {{"tx_power_dbm", b.tx_power_dbm},   {"noise_psd_dbm_hz", b.noise_psd_dbm_hz},
            {"bandwidth_hz", b.bandwidth_hz},   {"noise_floor_db", b.noise_floor_db},
            {"carrier_ghz", b.carrier_ghz}};
}

inline nlohmann::json to_json(const MapSplit &s) { return {{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

namespace detail
{

template <class T>
T json_get(const nlohmann::json &j, const char *key, const std::string &what)
{
    try
    {
        return j.at(key).get<T>();
    }
    catch (const nlohmann::json::exception &e)
    {
        throw MalformedFileError(what + ": field '" + key + "': " + e.what());
    }
}

inline GridSpec grid_spec_from_json(const nlohmann::json &j, const std::string &what)
{
    GridSpec s;
    s.size_px = json_get<int>(j, "size_px", what);
    s.pixel_len_m = json_get<double>(j, "pixel_len_m", what);
    return s;
}

inline LinkBudget budget_from_json(const nlohmann::json &j, const std::string &what)
{
    LinkBudget b;
    b.tx_power_dbm = json_get<double>(j, "tx_power_dbm", what);
    b.noise_psd_dbm_hz = json_get<double>(j, "noise_psd_dbm_hz", what);
    b.bandwidth_hz = json_get<double>(j, "bandwidth_hz", what);
    b.noise_floor_db = json_get<double>(j, "noise_floor_db", what);
    b.carrier_ghz = json_get<double>(j, "carrier_ghz", what);
    return b;
}

inline MapSplit map_split_from_json(const nlohmann::json &j, const std::string &what)
{
    MapSplit s;
    s.train = json_get<std::vector<int>>(j, "train", what);
    s.val = json_get<std::vector<int>>(j, "val", what);
    s.test = json_get<std::vector<int>>(j, "test", what);
    return s;
}

inline std::string join_ids(const std::vector<int> &ids)
{
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i)
        s += (i ? ";" : "") + std::to_string(ids[i]);
    return s;
}

inline std::vector<std::string> split_line(const std::string &line, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, sep))
        out.push_back(cur);
    if (!line.empty() && line.back() == sep)
        out.emplace_back();
    return out;
}

inline double parse_double(const std::string &s, const std::string &what)
{
    std::size_t used = 0;
    double v = 0;
    try
    {
        v = std::stod(s, &used);
    }
    catch (const std::exception &)
    {
        throw MalformedFileError(what + ": not a number '" + s + "'");
    }
    if (used != s.size())
        throw MalformedFileError(what + ": trailing characters in '" + s + "'");
    return v;
}

inline int parse_int(const std::string &s, const std::string &what)
{
    const double v = parse_double(s, what);
    if (v != std::floor(v))
        throw MalformedFileError(what + ": not an integer '" + s + "'");
    return int(v);
}

inline std::string radiomap_bytes(const RadioMap &m)
{
    return io::encode_real_grid(m.pathloss_db) + io::encode_real_grid(m.path_len_m) + io::encode_binary_grid(m.los) +
           io::encode_binary_grid(m.truncated);
}

inline RadioMap radiomap_from_bytes(const std::string &bytes, const GridSpec &spec, Position bs, const std::string &what)
{
    const std::size_t n = std::size_t(spec.size_px) * spec.size_px;
    const std::size_t real_len = 16 + n * sizeof(double), mask_len = 16 + n;
    if (bytes.size() != 2 * real_len + 2 * mask_len)
        throw MalformedFileError(what + ": unexpected size");
    RadioMap m;
    m.spec = spec;
    m.bs = bs;
    m.pathloss_db = io::decode_real_grid(bytes.substr(0, real_len), what);
    m.path_len_m = io::decode_real_grid(bytes.substr(real_len, real_len), what);
    m.los = io::decode_binary_grid(bytes.substr(2 * real_len, mask_len), what);
    m.truncated = io::decode_binary_grid(bytes.substr(2 * real_len + mask_len, mask_len), what);
    if (m.pathloss_db.rows() != spec.size_px)
        throw MalformedFileError(what + ": grid size does not match the manifest");
    return m;
}

inline Grid<std::uint8_t> city_image(const BinaryGrid &buildings)
{
    Grid<std::uint8_t> img(buildings.rows(), buildings.cols(), 0);
    for (std::size_t i = 0; i < img.size(); ++i)
        img.at_index(i) = buildings.at_index(i) ? 255 : 0;
    return img;
}

inline std::string map_dir_name(int map_id)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "map_%04d", map_id);
    return buf;
}

inline std::string bs_file_stem(int bs)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "bs_%03d", bs);
    return buf;
}

// Writes a file and records its checksum under its path relative to the dataset root.
struct ChecksumWriter
{
    std::filesystem::path root;
    nlohmann::json sums = nlohmann::json::object();

    void write(const std::string &rel, const std::string &bytes)
    {
        io::write_atomic(root / rel, bytes);
        sums[rel] = io::hex32(io::crc32_bytes(bytes.data(), bytes.size()));
    }
};

// Reads a file listed in the manifest and checks its CRC.
inline std::string read_checked(const std::filesystem::path &root, const nlohmann::json &sums, const std::string &rel)
{
    if (!sums.contains(rel))
        throw MalformedFileError("manifest has no checksum for " + rel);
    const auto bytes = io::read_file(root / rel);
    const auto crc = io::hex32(io::crc32_bytes(bytes.data(), bytes.size()));
    if (crc != sums.at(rel).get<std::string>())
        throw ChecksumError("checksum mismatch for " + rel);
    return bytes;
}

inline nlohmann::json read_manifest(const std::filesystem::path &dir, const std::string &kind)
{
    const auto path = dir / "dataset.json";
    nlohmann::json j;
    try
    {
        j = nlohmann::json::parse(io::read_file(path));
    }
    catch (const nlohmann::json::exception &e)
    {
        throw MalformedFileError("dataset.json: " + std::string(e.what()));
    }
    if (!j.is_object() || j.value("format", "") != dataset_format_name)
        throw MalformedFileError("dataset.json: not a dataset manifest");
    if (json_get<int>(j, "version", "dataset.json") != dataset_format_version)
        throw VersionMismatchError("dataset.json: unsupported version " + j.at("version").dump());
    if (json_get<std::string>(j, "kind", "dataset.json") != kind)
        throw MalformedFileError("dataset.json: expected a " + kind + " dataset");
    return j;
}

} // namespace detail

// Directory layout: dataset.json, instances.csv and map_NNNN/{city.png, bs_NNN.png, bs_NNN.rmap}.
// The PNGs are 8-bit gray views; the .rmap files carry the exact grids.
inline void save_dataset(const RssDataset &ds, const std::filesystem::path &dir)
{
    detail::ChecksumWriter w{dir};
    std::map<int, std::map<int, RadioMapPtr>> maps;   // map -> bs -> radio map
    std::map<int, std::shared_ptr<const BinaryGrid>> cities;
    const std::size_t J = ds.instances.empty() ? 0 : ds.instances.front().bs_ids.size();

    std::ostringstream csv;
    csv << "map_id,deployment_id,ue_id,bs_ids,truth_x,truth_y";
    for (std::size_t j = 1; j <= J; ++j)
        csv << ",pl_" << j;
    csv << "\n";
    for (const auto &li : ds.instances)
    {
        if (li.bs_ids.size() != J)
            throw std::invalid_argument("save_dataset: instances must share the BS count");
        csv << li.map_id << ',' << li.deployment_id << ',' << li.ue_id << ',' << detail::join_ids(li.bs_ids) << ','
            << io::format4(li.truth.x) << ',' << io::format4(li.truth.y);
        for (double v : li.measured_pl)
            csv << ',' << io::format4(v);
        csv << "\n";
        for (std::size_t j = 0; j < J; ++j)
            maps[li.map_id][li.bs_ids[j]] = li.est_maps[j];
        cities[li.map_id] = li.city;
    }

    nlohmann::json map_list = nlohmann::json::array();
    for (const auto &[map_id, bss] : maps)
    {
        const auto sub = detail::map_dir_name(map_id);
        w.write(sub + "/city.png", io::encode_png_gray8(detail::city_image(*cities[map_id])));
        nlohmann::json bs_list = nlohmann::json::array();
        for (const auto &[b, m] : bss)
        {
            const auto stem = sub + "/" + detail::bs_file_stem(b);
            w.write(stem + ".png", io::encode_png_gray8(io::quantize_gray(to_gray(*m, ds.budget))));
            w.write(stem + ".rmap", detail::radiomap_bytes(*m));
            bs_list.push_back({{"bs_id", b}, {"x", m->bs.x}, {"y", m->bs.y}});
        }
        map_list.push_back({{"map_id", map_id}, {"dir", sub}, {"bs", bs_list}});
    }
    w.write("instances.csv", csv.str());

    nlohmann::json j = {{"format", dataset_format_name},
                        {"version", dataset_format_version},
                        {"kind", "rss"},
                        {"spec", to_json(ds.spec)},
                        {"budget", to_json(ds.budget)},
                        {"scenario", to_string(ds.scenario)},
                        {"seed", ds.seed},
                        {"bs_per_instance", J},
                        {"split", to_json(ds.map_split)},
                        {"maps", map_list},
                        {"checksums", w.sums}};
    io::write_atomic(dir / "dataset.json", j.dump(2) + "\n");
}

inline RssDataset load_rss_dataset(const std::filesystem::path &dir)
{
    const auto j = detail::read_manifest(dir, "rss");
    const std::string what = "dataset.json";
    const auto sums = j.at("checksums");
    RssDataset ds;
    ds.spec = detail::grid_spec_from_json(j.at("spec"), what);
    ds.budget = detail::budget_from_json(j.at("budget"), what);
    ds.scenario = scenario_from_string(detail::json_get<std::string>(j, "scenario", what));
    ds.seed = detail::json_get<std::uint64_t>(j, "seed", what);
    ds.map_split = detail::map_split_from_json(j.at("split"), what);
    const auto J = detail::json_get<std::size_t>(j, "bs_per_instance", what);

    std::map<int, std::map<int, RadioMapPtr>> maps;
    std::map<int, std::shared_ptr<const BinaryGrid>> cities;
    for (const auto &mj : j.at("maps"))
    {
        const int map_id = detail::json_get<int>(mj, "map_id", what);
        const auto sub = detail::json_get<std::string>(mj, "dir", what);
        const auto img = io::decode_png_gray8(detail::read_checked(dir, sums, sub + "/city.png"), sub + "/city.png");
        auto city = std::make_shared<BinaryGrid>(img.rows(), img.cols(), 0);
        for (std::size_t i = 0; i < img.size(); ++i)
            city->at_index(i) = img.at_index(i) > 127;
        cities[map_id] = city;
        for (const auto &bj : mj.at("bs"))
        {
            const int b = detail::json_get<int>(bj, "bs_id", what);
            const Position pos{detail::json_get<double>(bj, "x", what), detail::json_get<double>(bj, "y", what)};
            const auto rel = sub + "/" + detail::bs_file_stem(b) + ".rmap";
            maps[map_id][b] =
                std::make_shared<RadioMap>(detail::radiomap_from_bytes(detail::read_checked(dir, sums, rel), ds.spec, pos, rel));
        }
    }

    std::istringstream csv(detail::read_checked(dir, sums, "instances.csv"));
    std::string line;
    std::getline(csv, line);
    int lineno = 1;
    while (std::getline(csv, line))
    {
        ++lineno;
        if (line.empty())
            continue;
        const std::string where = "instances.csv:" + std::to_string(lineno);
        const auto f = detail::split_line(line, ',');
        if (f.size() != 6 + J)
            throw MalformedFileError(where + ": expected " + std::to_string(6 + J) + " fields");
        LocalizationInstance li;
        li.map_id = detail::parse_int(f[0], where);
        li.deployment_id = detail::parse_int(f[1], where);
        li.ue_id = detail::parse_int(f[2], where);
        for (const auto &s : detail::split_line(f[3], ';'))
            li.bs_ids.push_back(detail::parse_int(s, where));
        li.truth = {detail::parse_double(f[4], where), detail::parse_double(f[5], where)};
        for (std::size_t k = 0; k < J; ++k)
            li.measured_pl.push_back(detail::parse_double(f[6 + k], where));
        if (li.bs_ids.size() != J)
            throw MalformedFileError(where + ": wrong number of BS ids");
        auto mit = maps.find(li.map_id);
        if (mit == maps.end())
            throw MalformedFileError(where + ": unknown map " + std::to_string(li.map_id));
        for (int b : li.bs_ids)
        {
            auto bit = mit->second.find(b);
            if (bit == mit->second.end())
                throw MalformedFileError(where + ": unknown BS " + std::to_string(b));
            li.est_maps.push_back(bit->second);
        }
        li.city = cities.at(li.map_id);
        ds.instances.push_back(std::move(li));
    }
    ds.splits = detail::assign_splits(ds.instances, ds.map_split);
    return ds;
}

// ToA layout: dataset.json + instances.csv with range_1..range_J, then clean_1..clean_J and los_1..los_J.
// Anchor coordinates (meters) live in the manifest per map.
inline void save_dataset(const ToaDataset &ds, const std::filesystem::path &dir)
{
    detail::ChecksumWriter w{dir};
    const std::size_t J = ds.instances.empty() ? 0 : ds.instances.front().bs_ids.size();
    std::map<int, std::map<int, Position>> anchors;
    std::ostringstream csv;
    csv << "map_id,deployment_id,ue_id,bs_ids,truth_x,truth_y";
    for (const char *col : {"range_", "clean_", "los_"})
        for (std::size_t j = 1; j <= J; ++j)
            csv << ',' << col << j;
    csv << "\n";
    for (const auto &ti : ds.instances)
    {
        if (ti.bs_ids.size() != J)
            throw std::invalid_argument("save_dataset: instances must share the BS count");
        csv << ti.map_id << ',' << ti.deployment_id << ',' << ti.ue_id << ',' << detail::join_ids(ti.bs_ids) << ','
            << io::format4(ti.truth.x) << ',' << io::format4(ti.truth.y);
        for (double v : ti.ranges_m)
            csv << ',' << io::format4(v);
        for (double v : ti.clean_ranges_m)
            csv << ',' << io::format4(v);
        for (auto v : ti.los)
            csv << ',' << int(v);
        csv << "\n";
        for (std::size_t j = 0; j < J; ++j)
            anchors[ti.map_id][ti.bs_ids[j]] = ti.anchors[j];
    }
    w.write("instances.csv", csv.str());
    nlohmann::json map_list = nlohmann::json::array();
    for (const auto &[map_id, bss] : anchors)
    {
        nlohmann::json bs_list = nlohmann::json::array();
        for (const auto &[b, p] : bss)
            bs_list.push_back({{"bs_id", b}, {"x_m", p.x}, {"y_m", p.y}});
        map_list.push_back({{"map_id", map_id}, {"bs", bs_list}});
    }
    nlohmann::json j = {{"format", dataset_format_name},
                        {"version", dataset_format_version},
                        {"kind", "toa"},
                        {"spec", to_json(ds.spec)},
                        {"seed", ds.seed},
                        {"noise_sigma_m", ds.cfg.noise_sigma_m},
                        {"apply_excess_delay", ds.cfg.apply_excess_delay},
                        {"wall_permittivity", ds.cfg.wall_permittivity},
                        {"wall_thickness_m", ds.cfg.wall_thickness_m},
                        {"skipped_unreachable", ds.skipped_unreachable},
                        {"bs_per_instance", J},
                        {"split", to_json(ds.map_split)},
                        {"maps", map_list},
                        {"checksums", w.sums}};
    io::write_atomic(dir / "dataset.json", j.dump(2) + "\n");
}

inline ToaDataset load_toa_dataset(const std::filesystem::path &dir)
{
    const auto j = detail::read_manifest(dir, "toa");
    const std::string what = "dataset.json";
    ToaDataset ds;
    ds.spec = detail::grid_spec_from_json(j.at("spec"), what);
    ds.seed = detail::json_get<std::uint64_t>(j, "seed", what);
    ds.cfg.noise_sigma_m = detail::json_get<double>(j, "noise_sigma_m", what);
    ds.cfg.apply_excess_delay = detail::json_get<bool>(j, "apply_excess_delay", what);
    ds.cfg.wall_permittivity = detail::json_get<double>(j, "wall_permittivity", what);
    ds.cfg.wall_thickness_m = detail::json_get<double>(j, "wall_thickness_m", what);
    ds.skipped_unreachable = detail::json_get<int>(j, "skipped_unreachable", what);
    ds.map_split = detail::map_split_from_json(j.at("split"), what);
    const auto J = detail::json_get<std::size_t>(j, "bs_per_instance", what);
    std::map<int, std::map<int, Position>> anchors;
    for (const auto &mj : j.at("maps"))
        for (const auto &bj : mj.at("bs"))
            anchors[detail::json_get<int>(mj, "map_id", what)][detail::json_get<int>(bj, "bs_id", what)] = {
                detail::json_get<double>(bj, "x_m", what), detail::json_get<double>(bj, "y_m", what)};

    std::istringstream csv(detail::read_checked(dir, j.at("checksums"), "instances.csv"));
    std::string line;
    std::getline(csv, line);
    int lineno = 1;
    while (std::getline(csv, line))
    {
        ++lineno;
        if (line.empty())
            continue;
        const std::string where = "instances.csv:" + std::to_string(lineno);
        const auto f = detail::split_line(line, ',');
        if (f.size() != 6 + 3 * J)
            throw MalformedFileError(where + ": expected " + std::to_string(6 + 3 * J) + " fields");
        ToaInstance ti;
        ti.map_id = detail::parse_int(f[0], where);
        ti.deployment_id = detail::parse_int(f[1], where);
        ti.ue_id = detail::parse_int(f[2], where);
        for (const auto &s : detail::split_line(f[3], ';'))
            ti.bs_ids.push_back(detail::parse_int(s, where));
        if (ti.bs_ids.size() != J)
            throw MalformedFileError(where + ": wrong number of BS ids");
        ti.truth = {detail::parse_double(f[4], where), detail::parse_double(f[5], where)};
        for (std::size_t k = 0; k < J; ++k)
        {
            ti.ranges_m.push_back(detail::parse_double(f[6 + k], where));
            ti.clean_ranges_m.push_back(detail::parse_double(f[6 + J + k], where));
            ti.los.push_back(std::uint8_t(detail::parse_int(f[6 + 2 * J + k], where) != 0));
            auto it = anchors.find(ti.map_id);
            if (it == anchors.end() || !it->second.count(ti.bs_ids[k]))
                throw MalformedFileError(where + ": unknown anchor");
            ti.anchors.push_back(it->second.at(ti.bs_ids[k]));
        }
        ds.instances.push_back(std::move(ti));
    }
    ds.splits = detail::assign_splits(ds.instances, ds.map_split);
    return ds;
}

// --- published layout ----------------------------------------------------------

// Gray level g in [0,1] maps to pathloss floor_db + g * (ceiling_db - floor_db).
struct PublishedGainScale
{
    double floor_db = -134.0;
    double ceiling_db = 0.0;
};

// City image: building interiors are white (255).
inline BinaryGrid read_published_city(const std::filesystem::path &png)
{
    const auto img = io::read_png_gray8(png);
    BinaryGrid out(img.rows(), img.cols(), 0);
    for (std::size_t i = 0; i < img.size(); ++i)
        out.at_index(i) = img.at_index(i) > 127;
    return out;
}

inline RealGrid read_published_gain_gray(const std::filesystem::path &png)
{
    return io::dequantize_gray(io::read_png_gray8(png));
}

inline RealGrid gray_to_pathloss(const RealGrid &gray, const PublishedGainScale &scale)
{
    RealGrid out(gray.rows(), gray.cols(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.at_index(i) = scale.floor_db + gray.at_index(i) * (scale.ceiling_db - scale.floor_db);
    return out;
}

// One position per non-empty line; x and y separated by whitespace or a comma. Lines starting with '#' are skipped.
inline std::vector<Position> read_published_coordinates(const std::filesystem::path &txt)
{
    std::istringstream in(io::read_file(txt));
    std::vector<Position> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line))
    {
        ++lineno;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        std::string first;
        if (!(ls >> first) || first[0] == '#')
            continue;
        std::string second, extra;
        if (!(ls >> second) || (ls >> extra))
            throw MalformedFileError(txt.string() + ":" + std::to_string(lineno) + ": expected two coordinates");
        const auto where = txt.string() + ":" + std::to_string(lineno);
        out.push_back({detail::parse_double(first, where), detail::parse_double(second, where)});
    }
    return out;
}

} // namespace radioloc
