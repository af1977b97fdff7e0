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

// radioloc: command-line front end for the localization pipeline.
//
//   radioloc gen-scenes   --seed 1 --maps 5 --out runs/scenes
//   radioloc simulate     --scenes runs/scenes --cars off --out runs/sim
//   radioloc make-dataset --scenes runs/scenes --sim runs/sim --out runs/data
//   radioloc train        --data runs/data --epochs 2 --out runs/model
//   radioloc evaluate     --data runs/data --model runs/model --out runs/eval
//   radioloc compare      --data runs/data --data-cars runs/data_cars --out runs/cmp
//   radioloc toa-bench    --scenes runs/scenes --sim runs/sim --sigma 20 --anchors 3 --out runs/toa
//
// Exit codes: 0 success, 1 computational failure, 2 usage error.

#include "radioloc/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace rp = radioloc::pipeline;
namespace fs = std::filesystem;

namespace
{

struct UsageError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

struct Common
{
    std::string config_file;
    std::string preset = "desk";
    int jobs = 0;
    std::string out;
};

void add_common(CLI::App *sub, Common &c)
{
    sub->add_option("--config", c.config_file, "JSON config file or any stage manifest.json")->check(CLI::ExistingFile);
    sub->add_option("--preset", c.preset, "base configuration")->check(CLI::IsMember({"desk", "full"}));
    sub->add_option("--jobs", c.jobs, "worker threads (default: logical cores; 1 = serial)")->check(CLI::PositiveNumber);
    sub->add_option("--out", c.out, "output directory (default: a fixed directory under $RADIOLOC_OUT)");
}

// Preset, then the configuration recorded by the upstream stage, then --config, then flags.
rp::RunConfig base_config(const Common &c, const std::string &upstream = "")
{
    rp::RunConfig cfg = c.preset == "full" ? rp::RunConfig::full() : rp::RunConfig::desk();
    if (!upstream.empty())
    {
        const auto m = fs::path(upstream) / "manifest.json";
        if (!fs::exists(m))
            throw UsageError(upstream + " has no manifest.json");
        cfg = rp::from_json(nlohmann::json::parse(radioloc::io::read_file(m)), cfg);
    }
    if (!c.config_file.empty())
    {
        nlohmann::json j;
        try
        {
            j = nlohmann::json::parse(radioloc::io::read_file(c.config_file));
        }
        catch (const nlohmann::json::exception &e)
        {
            throw UsageError(c.config_file + ": " + e.what());
        }
        cfg = rp::from_json(j, cfg);
    }
    cfg.jobs = c.jobs > 0 ? c.jobs : radioloc::default_jobs();
    return cfg;
}

fs::path out_dir(const Common &c, const std::string &sub)
{
    if (!c.out.empty())
        return c.out;
    if (const char *root = std::getenv("RADIOLOC_OUT"); root && *root)
        return fs::path(root) / sub;
    throw UsageError("--out is required (or set RADIOLOC_OUT)");
}

void say(const std::string &s) { std::cerr << s << std::endl; }

template <class T>
void set_if(const CLI::Option *o, T &dst, const T &v)
{
    if (o->count() > 0)
        dst = v;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Radio-map localization pipeline: scenes, simulation, datasets, training, evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", rp::tool_version);

    Common common;

    // gen-scenes
    auto *gen = app.add_subcommand("gen-scenes", "generate city scenes, cars and deployments");
    add_common(gen, common);
    std::uint64_t seed = 1;
    int maps = 0;
    auto *o_seed = gen->add_option("--seed", seed, "scene seed");
    auto *o_maps = gen->add_option("--maps", maps, "number of maps")->check(CLI::NonNegativeNumber);

    // simulate
    auto *sim = app.add_subcommand("simulate", "run the dominant path model over all scenes and BSs");
    add_common(sim, common);
    std::string scenes_dir, cars = "off";
    sim->add_option("--scenes", scenes_dir, "gen-scenes output")->required()->check(CLI::ExistingDirectory);
    sim->add_option("--cars", cars, "simulate cars as obstacles")->check(CLI::IsMember({"on", "off"}));

    // make-dataset
    auto *mk = app.add_subcommand("make-dataset", "assemble an RSS localization dataset");
    add_common(mk, common);
    std::string sim_dir, sim_cars_dir, scenario;
    std::uint64_t ds_seed = 0;
    mk->add_option("--scenes", scenes_dir, "gen-scenes output")->required()->check(CLI::ExistingDirectory);
    mk->add_option("--sim", sim_dir, "simulate output without cars")->required()->check(CLI::ExistingDirectory);
    mk->add_option("--sim-cars", sim_cars_dir, "simulate output with cars")->check(CLI::ExistingDirectory);
    auto *o_scen = mk->add_option("--scenario", scenario, "Nominal or Robustness")
                       ->check(CLI::IsMember({"Nominal", "Robustness"}));
    auto *o_dseed = mk->add_option("--seed", ds_seed, "split seed");

    // train
    auto *tr = app.add_subcommand("train", "train a localization network");
    add_common(tr, common);
    std::string data_dir, loss, activation;
    int epochs = 0, batch = 0;
    double lr = 0;
    tr->add_option("--data", data_dir, "make-dataset output")->required()->check(CLI::ExistingDirectory);
    auto *o_ep = tr->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
    auto *o_lr = tr->add_option("--lr", lr)->check(CLI::PositiveNumber);
    auto *o_bt = tr->add_option("--batch", batch)->check(CLI::PositiveNumber);
    auto *o_loss = tr->add_option("--loss", loss)->check(CLI::IsMember({"AED", "ASED"}));
    auto *o_act = tr->add_option("--activation", activation)->check(CLI::IsMember({"leaky-relu", "relu", "softmax", "sigmoid"}));

    // evaluate
    auto *ev = app.add_subcommand("evaluate", "evaluate localizers on a dataset split");
    add_common(ev, common);
    std::string model_dir, methods, split = "test";
    ev->add_option("--data", data_dir, "make-dataset output")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--model", model_dir, "train output")->check(CLI::ExistingDirectory);
    ev->add_option("--methods", methods, "comma list of oracle,centroid,knn,adaptive-knn,locnet");
    ev->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));

    // compare
    auto *cmp = app.add_subcommand("compare", "out-of-distribution matrix over DPM and DPM w/ cars measurements");
    add_common(cmp, common);
    std::string data_cars_dir, nominal_model, robust_model;
    cmp->add_option("--data", data_dir, "dataset measured without cars")->required()->check(CLI::ExistingDirectory);
    cmp->add_option("--data-cars", data_cars_dir, "same instances measured with cars")
        ->required()
        ->check(CLI::ExistingDirectory);
    cmp->add_option("--nominal-model", nominal_model, "network trained on the Nominal scenario")
        ->check(CLI::ExistingDirectory);
    cmp->add_option("--robust-model", robust_model, "network trained on the Robustness scenario")
        ->check(CLI::ExistingDirectory);
    cmp->add_option("--methods", methods, "comma list; locnet uses the models above");
    cmp->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));

    // toa-bench
    auto *toa = app.add_subcommand("toa-bench", "ToA ranging solvers under noise and NLOS bias");
    add_common(toa, common);
    std::vector<double> sigmas, biases;
    int anchors = 0;
    toa->add_option("--scenes", scenes_dir, "gen-scenes output")->required()->check(CLI::ExistingDirectory);
    toa->add_option("--sim", sim_dir, "simulate output without cars")->required()->check(CLI::ExistingDirectory);
    auto *o_sig = toa->add_option("--sigma", sigmas, "range noise SDs in meters (default 0.0001 10 20)");
    auto *o_bias = toa->add_option("--bias", biases, "bias offsets b in meters (default 0.7 20)");
    auto *o_anc = toa->add_option("--anchors", anchors, "anchors per instance")->check(CLI::Range(3, 1000));
    toa->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
    toa->add_option("--seed", ds_seed, "noise and split seed");
    auto *o_tseed = toa->get_option("--seed");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try
    {
        std::string upstream;
        if (sim->parsed())
            upstream = scenes_dir;
        else if (mk->parsed() || toa->parsed())
            upstream = sim_dir;
        else if (tr->parsed() || cmp->parsed())
            upstream = data_dir;
        else if (ev->parsed())
            upstream = model_dir.empty() ? data_dir : model_dir;
        auto cfg = base_config(common, upstream);
        if (gen->parsed())
        {
            set_if(o_seed, cfg.scenes.seed, seed);
            set_if(o_maps, cfg.scenes.n_maps, maps);
            cfg.validate();
            const auto out = out_dir(common, "scenes");
            rp::gen_scenes(cfg, out, say);
            say("wrote " + std::to_string(cfg.scenes.n_maps) + " scenes to " + out.string());
        }
        else if (sim->parsed())
        {
            cfg.validate();
            rp::simulate(cfg, scenes_dir, cars == "on", out_dir(common, cars == "on" ? "sim_cars" : "sim"), say);
        }
        else if (mk->parsed())
        {
            set_if(o_scen, cfg.scenario, o_scen->count() ? radioloc::scenario_from_string(scenario) : cfg.scenario);
            set_if(o_dseed, cfg.dataset_seed, ds_seed);
            cfg.validate();
            if (cfg.scenario == radioloc::Scenario::Robustness && sim_cars_dir.empty())
                throw UsageError("the Robustness scenario needs --sim-cars");
            std::optional<fs::path> sc;
            if (!sim_cars_dir.empty())
                sc = sim_cars_dir;
            const auto out = out_dir(common, "dataset");
            rp::make_dataset(cfg, scenes_dir, sim_dir, sc, out);
            say("wrote dataset to " + out.string());
        }
        else if (tr->parsed())
        {
            set_if(o_ep, cfg.train.epochs, epochs);
            set_if(o_lr, cfg.train.lr, lr);
            set_if(o_bt, cfg.train.batch, batch);
            if (o_loss->count())
                cfg.train.loss = radioloc::loss_from_string(loss);
            if (o_act->count())
                cfg.activation = radioloc::activation_from_string(activation);
            cfg.validate();
            const auto out = out_dir(common, "model");
            rp::train_stage(cfg, data_dir, out, say);
            say("wrote model to " + out.string());
        }
        else if (ev->parsed())
        {
            cfg.validate();
            std::optional<fs::path> md;
            if (!model_dir.empty())
                md = model_dir;
            auto names = rp::split_list(methods.empty() ? std::string(md ? "centroid,knn,adaptive-knn,locnet"
                                                                         : "centroid,knn,adaptive-knn")
                                                        : methods);
            const auto out = out_dir(common, "eval");
            rp::evaluate_stage(cfg, data_dir, md, names, split, out);
            std::cout << radioloc::io::read_file(out / "report.csv");
        }
        else if (cmp->parsed())
        {
            cfg.validate();
            std::optional<fs::path> nm, rm;
            if (!nominal_model.empty())
                nm = nominal_model;
            if (!robust_model.empty())
                rm = robust_model;
            auto names = rp::split_list(methods.empty() ? std::string("knn,adaptive-knn,locnet") : methods);
            const auto out = out_dir(common, "compare");
            rp::compare_stage(cfg, data_dir, data_cars_dir, nm, rm, names, split, out);
            std::cout << radioloc::io::read_file(out / "ood_matrix.csv");
        }
        else if (toa->parsed())
        {
            set_if(o_sig, cfg.toa_sigmas, sigmas);
            set_if(o_bias, cfg.toa_bias, biases);
            set_if(o_anc, cfg.toa_anchors, anchors);
            set_if(o_tseed, cfg.dataset_seed, ds_seed);
            cfg.validate();
            const auto out = out_dir(common, "toa");
            rp::toa_bench_stage(cfg, scenes_dir, sim_dir, split, out, say);
            std::cout << radioloc::io::read_file(out / "toa_bench.csv");
        }
        return 0;
    }
    catch (const UsageError &e)
    {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }
    catch (const radioloc::ConfigError &e)
    {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
