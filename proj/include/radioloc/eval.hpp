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

// Evaluation harness: per-method AED/ASED with failures counted apart, conditional breakdown by the
// number of detectable BSs, error CDFs, the train-scenario x measurement-source matrix, and the
// CSV/JSON report files.

#include "radioloc/dataset.hpp"
#include "radioloc/errors.hpp"
#include "radioloc/fingerprint.hpp"
#include "radioloc/grid.hpp"
#include "radioloc/io.hpp"
#include "radioloc/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace radioloc
{

// A localizer over RSS instances. Returning nullopt or throwing counts as a failure.
struct Method
{
    std::string name;
    std::function<std::optional<Position>(const LocalizationInstance &)> localize;
    bool thread_safe = true;
};

inline Method oracle_method()
{
    return {"oracle", [](const LocalizationInstance &i) { return std::optional<Position>(i.truth); }};
}

inline Method centroid_method(const GridSpec &spec)
{
    const Position c{(spec.size_px + 1) / 2.0, (spec.size_px + 1) / 2.0};
    return {"centroid", [c](const LocalizationInstance &) { return std::optional<Position>(c); }};
}

inline Method knn_method(KnnConfig cfg, std::string name = "")
{
    if (name.empty())
        name = "knn(k=" + std::to_string(cfg.k) + ")";
    return {name, [cfg](const LocalizationInstance &i) { return std::optional<Position>(knn_localize(i, cfg)); }};
}

inline Method adaptive_knn_method(AdaptiveKnnConfig cfg, std::string name = "adaptive-knn")
{
    return {name, [cfg](const LocalizationInstance &i) {
                return std::optional<Position>(adaptive_knn_localize(i, cfg).estimate);
            }};
}

struct MethodReport
{
    std::string method;
    std::vector<int> instances;                 // dataset indices evaluated
    std::vector<double> errors_m;               // NaN where the method failed
    std::vector<std::optional<Position>> estimates;
    double aed_m = 0;
    double ased_m2 = 0;
    double runtime_ms_mean = 0; // wall clock, indicative only
    long n_ok = 0;
    long n_failed = 0;
};

// Runs `m` on every instance of `idx`. Per-instance work is independent; results land in input order.
inline MethodReport evaluate(const Method &m, const RssDataset &ds, const std::vector<int> &idx, int jobs = 1)
{
    MethodReport r;
    r.method = m.name;
    r.instances = idx;
    r.errors_m.assign(idx.size(), std::numeric_limits<double>::quiet_NaN());
    r.estimates.assign(idx.size(), std::nullopt);
    std::vector<double> ms(idx.size(), 0.0);
    parallel_for(idx.size(), m.thread_safe ? jobs : 1, [&](std::size_t k) {
        const auto &inst = ds.instances[std::size_t(idx[k])];
        const auto t0 = std::chrono::steady_clock::now();
        std::optional<Position> p;
        try
        {
            p = m.localize(inst);
        }
        catch (const std::exception &)
        {
            p.reset();
        }
        ms[k] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (p && std::isfinite(p->x) && std::isfinite(p->y))
        {
            r.estimates[k] = p;
            r.errors_m[k] = distance_m(*p, inst.truth, ds.spec);
        }
    });
    double s = 0, s2 = 0, t = 0;
    for (std::size_t k = 0; k < idx.size(); ++k)
    {
        t += ms[k];
        if (std::isnan(r.errors_m[k]))
        {
            ++r.n_failed;
            continue;
        }
        ++r.n_ok;
        s += r.errors_m[k];
        s2 += r.errors_m[k] * r.errors_m[k];
    }
    r.aed_m = r.n_ok ? s / double(r.n_ok) : std::numeric_limits<double>::quiet_NaN();
    r.ased_m2 = r.n_ok ? s2 / double(r.n_ok) : std::numeric_limits<double>::quiet_NaN();
    r.runtime_ms_mean = idx.empty() ? 0.0 : t / double(idx.size());
    return r;
}

// ---------------------------------------------------------------------------------------------
// Conditional breakdown

struct ConditionalBucket
{
    int detectable = 0;
    long count = 0;
    std::map<std::string, double> aed_m; // per method, NaN when the bucket is empty
};

struct ConditionalTable
{
    double margin_db = 0;
    int n_bs = 0;
    std::vector<ConditionalBucket> buckets; // detectable = 0..n_bs
    long total = 0;
    std::map<std::string, double> overall_aed_m;
};

// Buckets the instances of the reports (which must cover the same instances) by the number of BSs
// whose measured pathloss lies above floor + margin.
inline ConditionalTable conditional_breakdown(const std::vector<MethodReport> &reports, const RssDataset &ds,
                                              double margin_db)
{
    if (reports.empty())
        throw std::invalid_argument("conditional_breakdown: no reports");
    const auto &idx = reports.front().instances;
    for (const auto &r : reports)
        if (r.instances != idx)
            throw std::invalid_argument("conditional_breakdown: reports cover different instances");
    ConditionalTable t;
    t.margin_db = margin_db;
    for (int i : idx)
        t.n_bs = std::max(t.n_bs, int(ds.instances[std::size_t(i)].measured_pl.size()));
    t.buckets.resize(std::size_t(t.n_bs) + 1);
    std::vector<int> bucket_of(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k)
    {
        const auto &pl = ds.instances[std::size_t(idx[k])].measured_pl;
        bucket_of[k] = count_detectable(pl, ds.budget, margin_db);
        ++t.buckets[std::size_t(bucket_of[k])].count;
    }
    t.total = long(idx.size());
    for (std::size_t b = 0; b < t.buckets.size(); ++b)
        t.buckets[b].detectable = int(b);
    for (const auto &r : reports)
    {
        std::vector<double> s(t.buckets.size(), 0.0);
        std::vector<long> n(t.buckets.size(), 0);
        for (std::size_t k = 0; k < idx.size(); ++k)
            if (!std::isnan(r.errors_m[k]))
            {
                s[std::size_t(bucket_of[k])] += r.errors_m[k];
                ++n[std::size_t(bucket_of[k])];
            }
        for (std::size_t b = 0; b < t.buckets.size(); ++b)
            t.buckets[b].aed_m[r.method] = n[b] ? s[b] / double(n[b]) : std::numeric_limits<double>::quiet_NaN();
        t.overall_aed_m[r.method] = r.aed_m;
    }
    return t;
}

// ---------------------------------------------------------------------------------------------
// CDFs

struct ErrorCdf
{
    std::vector<double> sorted_errors_m;

    [[nodiscard]] double operator()(double e) const
    {
        if (sorted_errors_m.empty())
            return 0.0;
        const auto it = std::upper_bound(sorted_errors_m.begin(), sorted_errors_m.end(), e);
        return double(it - sorted_errors_m.begin()) / double(sorted_errors_m.size());
    }
};

inline ErrorCdf error_cdf(const MethodReport &r)
{
    ErrorCdf c;
    for (double e : r.errors_m)
        if (!std::isnan(e))
            c.sorted_errors_m.push_back(e);
    std::sort(c.sorted_errors_m.begin(), c.sorted_errors_m.end());
    return c;
}

inline constexpr double cdf_bin_m = 0.5;
inline constexpr double cdf_max_m = 100.0;

// ---------------------------------------------------------------------------------------------
// Out-of-distribution matrix

struct OodCell
{
    std::string row;    // trained-on scenario or method
    std::string column; // measurement source
    std::optional<double> aed_m;
    std::optional<double> published;
    bool in_distribution = false;
};

// Published values for the four measurement sources. The IRT columns cannot be computed here.
inline std::optional<double> published_ood_value(const std::string &row, const std::string &column)
{
    static const std::map<std::pair<std::string, std::string>, double> v = {
        {{"Nominal", "DPM"}, 4.73},         {{"Nominal", "DPM w/ cars"}, 8.80},
        {{"Nominal", "IRT"}, 20.50},        {{"Nominal", "IRT w/ cars"}, 23.85},
        {{"Robustness", "DPM"}, 13.63},     {{"Robustness", "DPM w/ cars"}, 13.12},
        {{"Robustness", "IRT"}, 11.84},     {{"Robustness", "IRT w/ cars"}, 12.85},
    };
    auto it = v.find({row, column});
    if (it == v.end())
        return std::nullopt;
    return it->second;
}

inline const std::vector<std::string> &ood_columns()
{
    static const std::vector<std::string> c = {"DPM", "DPM w/ cars", "IRT", "IRT w/ cars"};
    return c;
}

// Published values that have no computed counterpart here, kept apart from computed numbers.
struct PublishedValue
{
    std::string table;
    std::string method;
    std::string setting;
    double value = 0;
};

inline std::vector<PublishedValue> published_rows()
{
    return {
        {"rss", "kNN (k=16)", "Nominal 5Tx", 7.01},
        {"rss", "kNN (k=40)", "Nominal 3Tx", 17.27},
        {"rss", "Adaptive kNN", "Nominal 5Tx", 7.49},
        {"rss", "Adaptive kNN", "Nominal 3Tx", 16.18},
        {"rss", "LocUNet", "Nominal 5Tx", 4.73},
        {"rss", "LocUNet", "Nominal 3Tx", 10.19},
        {"rss", "kNN (k=300)", "Robustness 5Tx", 27.19},
        {"rss", "kNN (k=1500)", "Robustness 3Tx", 38.54},
        {"rss", "Adaptive kNN", "Robustness 5Tx", 29.51},
        {"rss", "Adaptive kNN", "Robustness 3Tx", 45.31},
        {"rss", "LocUNet", "Robustness 5Tx", 12.85},
        {"rss", "LocUNet", "Robustness 3Tx", 19.28},
        {"toa", "POCS", "sigma=0.0001 5Tx", 37.89},
        {"toa", "POCS", "sigma=0.0001 3Tx", 46.28},
        {"toa", "Bisection b=20", "sigma=0.0001 5Tx", 10.11},
        {"toa", "Bisection b=20", "sigma=0.0001 3Tx", 15.94},
        {"toa", "Bisection b=0.7", "sigma=0.0001 5Tx", 9.49},
        {"toa", "Bisection b=0.7", "sigma=0.0001 3Tx", 15.01},
        {"toa", "Correntropy", "sigma=0.0001 5Tx", 12.45},
        {"toa", "Correntropy", "sigma=0.0001 3Tx", 18.47},
        {"toa", "POCS", "sigma=10 3Tx", 47.37},
        {"toa", "POCS", "sigma=20 3Tx", 48.82},
        {"toa", "Bisection b=20", "sigma=10 3Tx", 25.37},
        {"toa", "Bisection b=20", "sigma=20 3Tx", 38.18},
        {"toa", "Bisection b=0.7", "sigma=10 3Tx", 27.29},
        {"toa", "Bisection b=0.7", "sigma=20 3Tx", 40.92},
        {"toa", "Correntropy", "sigma=10 3Tx", 31.25},
        {"toa", "Correntropy", "sigma=20 3Tx", 45.72},
        {"toa", "SDP", "sigma=0.0001 5Tx", 7.16},
        {"toa", "Robust SDP 1 b=20", "sigma=0.0001 5Tx", 10.14},
        {"toa", "Robust SDP 1 b=0.7", "sigma=0.0001 5Tx", 7.55},
        {"toa", "Robust SDP 2 b=20", "sigma=0.0001 5Tx", 12.29},
        {"toa", "Robust SDP 2 b=0.7", "sigma=0.0001 5Tx", 7.63},
        {"toa", "SDP", "sigma=0.0001 3Tx", 12.92},
        {"toa", "Robust SDP 1 b=20", "sigma=0.0001 3Tx", 13.23},
        {"toa", "Robust SDP 1 b=0.7", "sigma=0.0001 3Tx", 10.85},
        {"toa", "Robust SDP 2 b=20", "sigma=0.0001 3Tx", 18.68},
        {"toa", "Robust SDP 2 b=0.7", "sigma=0.0001 3Tx", 14.66},
        {"toa", "SDP", "sigma=10 3Tx", 24.76},
        {"toa", "Robust SDP 1 b=20", "sigma=10 3Tx", 23.95},
        {"toa", "Robust SDP 1 b=0.7", "sigma=10 3Tx", 26.04},
        {"toa", "Robust SDP 2 b=20", "sigma=10 3Tx", 26.96},
        {"toa", "Robust SDP 2 b=0.7", "sigma=10 3Tx", 26.44},
        {"toa", "SDP", "sigma=20 3Tx", 39.43},
        {"toa", "Robust SDP 1 b=20", "sigma=20 3Tx", 36.56},
        {"toa", "Robust SDP 1 b=0.7", "sigma=20 3Tx", 39.17},
        {"toa", "Robust SDP 2 b=20", "sigma=20 3Tx", 37.81},
        {"toa", "Robust SDP 2 b=0.7", "sigma=20 3Tx", 39.16},
    };
}

// One matrix row per trained model; columns DPM and DPM w/ cars are computed from the two
// datasets, the IRT columns carry only the published value.
inline std::vector<OodCell> ood_matrix(const std::vector<std::pair<std::string, Method>> &models,
                                       const RssDataset &dpm, const RssDataset &dpm_cars, const std::vector<int> &idx,
                                       int jobs = 1)
{
    std::vector<OodCell> out;
    for (const auto &[row, m] : models)
        for (const auto &col : ood_columns())
        {
            OodCell c;
            c.row = row;
            c.column = col;
            c.published = published_ood_value(row, col);
            c.in_distribution = (row == "Nominal" && col == "DPM") || (row == "Robustness" && col == "DPM w/ cars");
            if (col == "DPM")
                c.aed_m = evaluate(m, dpm, idx, jobs).aed_m;
            else if (col == "DPM w/ cars")
                c.aed_m = evaluate(m, dpm_cars, idx, jobs).aed_m;
            out.push_back(c);
        }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Reports

struct EvalReport
{
    std::vector<MethodReport> methods;
    std::vector<ConditionalTable> conditional;
    std::vector<OodCell> ood;
    nlohmann::json config;
    std::string dataset_checksum;
};

inline std::string num(double v) { return std::isnan(v) ? "nan" : io::format4(v); }

inline std::string opt_num(const std::optional<double> &v) { return v ? num(*v) : ""; }

// method,metric,value rows; computed values and published values never share a row.
inline std::string report_csv(const EvalReport &r)
{
    std::ostringstream s;
    s << "method,metric,value,published\n";
    for (const auto &m : r.methods)
    {
        s << m.method << ",aed_m," << num(m.aed_m) << ",\n";
        s << m.method << ",ased_m2," << num(m.ased_m2) << ",\n";
        s << m.method << ",n_ok," << m.n_ok << ",\n";
        s << m.method << ",n_failed," << m.n_failed << ",\n";
    }
    for (const auto &p : published_rows())
        s << p.method << " [" << p.setting << "],aed_m,," << num(p.value) << '\n';
    return s.str();
}

inline std::string runtime_csv(const EvalReport &r)
{
    std::ostringstream s;
    s << "method,runtime_ms_mean\n";
    for (const auto &m : r.methods)
        s << m.method << ',' << num(m.runtime_ms_mean) << '\n';
    return s.str();
}

inline std::string conditional_csv(const EvalReport &r)
{
    std::ostringstream s;
    s << "margin_db,row";
    const int J = r.conditional.empty() ? 0 : r.conditional.front().n_bs;
    for (int b = 0; b <= J; ++b)
        s << ',' << b;
    s << ",overall\n";
    for (const auto &t : r.conditional)
    {
        for (const auto &m : r.methods)
        {
            s << num(t.margin_db) << ',' << m.method;
            for (const auto &b : t.buckets)
                s << ',' << num(b.aed_m.at(m.method));
            s << ',' << num(t.overall_aed_m.at(m.method)) << '\n';
        }
        s << num(t.margin_db) << ",instances";
        for (const auto &b : t.buckets)
            s << ',' << b.count;
        s << ',' << t.total << '\n';
    }
    return s.str();
}

inline std::string cdf_csv(const EvalReport &r)
{
    std::ostringstream s;
    s << "method,error_m,fraction\n";
    for (const auto &m : r.methods)
    {
        const auto c = error_cdf(m);
        const int bins = int(std::lround(cdf_max_m / cdf_bin_m));
        for (int b = 0; b <= bins; ++b)
            s << m.method << ',' << num(b * cdf_bin_m) << ',' << num(c(b * cdf_bin_m)) << '\n';
    }
    return s.str();
}

inline std::string exact_cdf_csv(const EvalReport &r)
{
    std::ostringstream s;
    s << "method,error_m,fraction\n";
    for (const auto &m : r.methods)
    {
        const auto c = error_cdf(m);
        const double n = double(c.sorted_errors_m.size());
        for (std::size_t i = 0; i < c.sorted_errors_m.size(); ++i)
            s << m.method << ',' << num(c.sorted_errors_m[i]) << ',' << num(double(i + 1) / n) << '\n';
    }
    return s.str();
}

inline std::string ood_csv(const std::vector<OodCell> &cells)
{
    std::ostringstream s;
    s << "trained_on,measurement,aed_m,in_distribution,published\n";
    for (const auto &c : cells)
        s << c.row << ',' << c.column << ',' << opt_num(c.aed_m) << ',' << (c.in_distribution ? 1 : 0) << ','
          << opt_num(c.published) << '\n';
    return s.str();
}

inline std::vector<OodCell> parse_ood_csv(const std::string &text)
{
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (line != "trained_on,measurement,aed_m,in_distribution,published")
        throw MalformedFileError("ood_matrix.csv: unexpected header");
    std::vector<OodCell> out;
    auto opt = [](const std::string &f) -> std::optional<double> {
        if (f.empty())
            return std::nullopt;
        return detail::parse_double(f, "ood_matrix.csv");
    };
    while (std::getline(in, line))
    {
        if (line.empty())
            continue;
        auto f = detail::split_line(line, ',');
        if (f.size() != 5)
            throw MalformedFileError("ood_matrix.csv: bad row '" + line + "'");
        out.push_back({f[0], f[1], opt(f[2]), opt(f[4]), f[3] == "1"});
    }
    return out;
}

inline nlohmann::json to_json(const EvalReport &r)
{
    nlohmann::json j;
    j["config"] = r.config;
    j["dataset_checksum"] = r.dataset_checksum;
    auto jnum = [](double v) -> nlohmann::json {
        if (std::isnan(v))
            return nullptr;
        return io::round4(v);
    };
    for (const auto &m : r.methods)
        j["methods"].push_back({{"method", m.method},
                                {"aed_m", jnum(m.aed_m)},
                                {"ased_m2", jnum(m.ased_m2)},
                                {"n_ok", m.n_ok},
                                {"n_failed", m.n_failed}});
    for (const auto &t : r.conditional)
    {
        nlohmann::json jt{{"margin_db", t.margin_db}, {"total", t.total}};
        for (const auto &b : t.buckets)
        {
            nlohmann::json jb{{"detectable", b.detectable}, {"count", b.count}};
            for (const auto &[name, v] : b.aed_m)
                jb["aed_m"][name] = jnum(v);
            jt["buckets"].push_back(jb);
        }
        j["conditional"].push_back(jt);
    }
    for (const auto &c : r.ood)
        j["ood_matrix"].push_back({{"trained_on", c.row},
                                   {"measurement", c.column},
                                   {"aed_m", c.aed_m ? jnum(*c.aed_m) : nullptr},
                                   {"in_distribution", c.in_distribution},
                                   {"published", c.published ? nlohmann::json(*c.published) : nullptr}});
    for (const auto &p : published_rows())
        j["published"].push_back({{"table", p.table}, {"method", p.method}, {"setting", p.setting}, {"aed_m", p.value}});
    return j;
}

// Writes report.csv, runtime.csv, conditional.csv, cdf.csv, cdf_exact.csv, ood_matrix.csv and
// report.json. Timings live only in runtime.csv so the other files are reproducible bit for bit.
inline void write_report(const EvalReport &r, const std::filesystem::path &dir)
{
    std::filesystem::create_directories(dir);
    io::write_atomic(dir / "report.csv", report_csv(r));
    io::write_atomic(dir / "runtime.csv", runtime_csv(r));
    io::write_atomic(dir / "conditional.csv", conditional_csv(r));
    io::write_atomic(dir / "cdf.csv", cdf_csv(r));
    io::write_atomic(dir / "cdf_exact.csv", exact_cdf_csv(r));
    io::write_atomic(dir / "ood_matrix.csv", ood_csv(r.ood));
    io::write_atomic(dir / "report.json", to_json(r).dump(2) + "\n");
}

} // namespace radioloc
