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

// LocUNet: input-image encoding, the encoder-decoder with skip connections and CoM readout, training
// with early stopping, the heatmap-regression baseline, and the activation/loss/input ablation.

#include "radioloc/dataset.hpp"
#include "radioloc/errors.hpp"
#include "radioloc/grid.hpp"
#include "radioloc/nn/ops.hpp"
#include "radioloc/nn/optim.hpp"
#include "radioloc/parallel.hpp"
#include "radioloc/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace radioloc
{

using nn::Activation;

inline std::string to_string(Activation a)
{
    switch (a)
    {
    case Activation::LeakyRelu:
        return "leaky-relu";
    case Activation::Relu:
        return "relu";
    case Activation::Softmax:
        return "softmax";
    case Activation::Sigmoid:
        return "sigmoid";
    }
    return "?";
}

inline Activation activation_from_string(const std::string &s)
{
    for (auto a : {Activation::LeakyRelu, Activation::Relu, Activation::Softmax, Activation::Sigmoid})
        if (to_string(a) == s)
            return a;
    throw ConfigError("unknown activation '" + s + "'");
}

enum class LossKind
{
    Aed,
    Ased,
};

inline std::string to_string(LossKind l) { return l == LossKind::Aed ? "AED" : "ASED"; }

inline LossKind loss_from_string(const std::string &s)
{
    if (s == "AED" || s == "aed")
        return LossKind::Aed;
    if (s == "ASED" || s == "ased")
        return LossKind::Ased;
    throw ConfigError("unknown loss '" + s + "'");
}

// Channel order: P_1..P_J, R_1..R_J, city (optional), Tx one-hots (optional).
struct InputEncoding
{
    bool use_city = true;
    bool use_tx = true;

    [[nodiscard]] int channels(int n_bs) const { return 2 * n_bs + (use_city ? 1 : 0) + (use_tx ? n_bs : 0); }

    [[nodiscard]] std::string label() const
    {
        return std::string(use_city ? "wC" : "w/oC") + " " + (use_tx ? "wT" : "w/oT");
    }

    bool operator==(const InputEncoding &) const = default;
};

// Builds network inputs on a grid coarser than the dataset by an integer factor. Coarse radio maps
// and city images are block averages, cached per source grid; the cache is shared by copies and
// safe to use from several threads.
class InputEncoder
{
  public:
    InputEncoder(GridSpec dataset_spec, LinkBudget budget, int grid, InputEncoding enc)
        : spec_(dataset_spec), budget_(budget), grid_(grid), enc_(enc)
    {
        if (grid < 2 || dataset_spec.size_px % grid != 0)
            throw ConfigError("InputEncoder: dataset size " + std::to_string(dataset_spec.size_px) +
                              " is not a multiple of the network grid " + std::to_string(grid));
        factor_ = dataset_spec.size_px / grid;
    }

    [[nodiscard]] int grid() const { return grid_; }
    [[nodiscard]] int factor() const { return factor_; }
    [[nodiscard]] const InputEncoding &encoding() const { return enc_; }
    [[nodiscard]] int channels(int n_bs) const { return enc_.channels(n_bs); }

    // Truth on the network grid, and back.
    [[nodiscard]] Position to_net(Position p) const { return fine_to_coarse(p, factor_); }
    [[nodiscard]] Position to_dataset(Position p) const { return coarse_to_fine(p, factor_); }

    // Writes channels(J) planes of grid x grid values into dst. Returns true when a Tx pixel had to
    // be moved off a building after downsampling.
    template <class T>
    bool encode(const LocalizationInstance &inst, T *dst) const
    {
        const std::size_t J = inst.est_maps.size();
        if (J == 0 || inst.measured_pl.size() != J)
            throw std::invalid_argument("encode_inputs: instance has inconsistent maps and measurements");
        const std::size_t plane = std::size_t(grid_) * grid_;
        std::size_t ch = 0;
        for (std::size_t j = 0; j < J; ++j, ++ch)
            std::fill_n(dst + ch * plane, plane, T(to_gray(inst.measured_pl[j], budget_)));
        for (std::size_t j = 0; j < J; ++j, ++ch)
        {
            if (inst.est_maps[j]->spec.size_px != spec_.size_px)
                throw std::invalid_argument("encode_inputs: radio map size does not match the dataset");
            const auto &g = coarse_gray(*inst.est_maps[j]);
            std::copy(g.begin(), g.end(), dst + ch * plane);
        }
        const std::vector<std::uint8_t> *city = nullptr;
        if (inst.city)
            city = &coarse_city(*inst.city);
        if (enc_.use_city)
        {
            if (!city)
                throw std::invalid_argument("encode_inputs: city channel requested but the instance has no city");
            std::transform(city->begin(), city->end(), dst + ch * plane, [](std::uint8_t v) { return T(v); });
            ++ch;
        }
        bool moved = false;
        if (enc_.use_tx)
            for (std::size_t j = 0; j < J; ++j, ++ch)
            {
                std::fill_n(dst + ch * plane, plane, T(0));
                const auto [px, m] = tx_pixel(inst.est_maps[j]->bs, city);
                moved = moved || m;
                dst[ch * plane + std::size_t(px.row) * grid_ + px.col] = T(1);
            }
        return moved;
    }

    // Tx position on the network grid; moved to the nearest free pixel when it lands on a building.
    [[nodiscard]] std::pair<Pixel, bool> tx_pixel(Position bs, const std::vector<std::uint8_t> *city) const
    {
        const Pixel p = to_pixel(to_net(bs), grid_);
        if (!city || !(*city)[std::size_t(p.row) * grid_ + p.col])
            return {p, false};
        for (int rad = 1; rad < grid_; ++rad)
        {
            std::optional<Pixel> best;
            double best_d = std::numeric_limits<double>::infinity();
            for (int r = p.row - rad; r <= p.row + rad; ++r)
                for (int c = p.col - rad; c <= p.col + rad; ++c)
                {
                    if (r < 0 || c < 0 || r >= grid_ || c >= grid_ || (*city)[std::size_t(r) * grid_ + c])
                        continue;
                    const double d = std::hypot(r - p.row, c - p.col);
                    if (d < best_d)
                        best_d = d, best = Pixel{r, c};
                }
            if (best)
                return {*best, true};
        }
        return {p, true};
    }

    const std::vector<float> &coarse_gray(const RadioMap &m) const
    {
        std::lock_guard lock(*mu_);
        auto it = gray_->find(&m);
        if (it != gray_->end())
            return it->second;
        const RealGrid small = downsample_mean(to_gray(m, budget_), factor_);
        return (*gray_)[&m] = std::vector<float>(small.data().begin(), small.data().end());
    }

    const std::vector<std::uint8_t> &coarse_city(const BinaryGrid &city) const
    {
        std::lock_guard lock(*mu_);
        auto it = city_->find(&city);
        if (it != city_->end())
            return it->second;
        RealGrid g(city.rows(), city.cols());
        for (std::size_t i = 0; i < g.size(); ++i)
            g.at_index(i) = city.at_index(i) ? 1.0 : 0.0;
        const RealGrid small = downsample_mean(g, factor_);
        std::vector<std::uint8_t> out(small.size());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = small.at_index(i) >= 0.5 ? 1 : 0;
        return (*city_)[&city] = std::move(out);
    }

  private:
    GridSpec spec_;
    LinkBudget budget_;
    int grid_;
    int factor_ = 1;
    InputEncoding enc_;
    std::shared_ptr<std::mutex> mu_ = std::make_shared<std::mutex>();
    std::shared_ptr<std::map<const RadioMap *, std::vector<float>>> gray_ =
        std::make_shared<std::map<const RadioMap *, std::vector<float>>>();
    std::shared_ptr<std::map<const BinaryGrid *, std::vector<std::uint8_t>>> city_ =
        std::make_shared<std::map<const BinaryGrid *, std::vector<std::uint8_t>>>();
};

struct EncodedInput
{
    nn::Tensor<double> tensor; // 1 x C x grid x grid
    bool tx_moved = false;
};

inline EncodedInput encode_inputs(const LocalizationInstance &inst, const InputEncoding &enc, const LinkBudget &budget,
                                  int grid)
{
    if (inst.est_maps.empty())
        throw std::invalid_argument("encode_inputs: instance has no maps");
    InputEncoder e(inst.est_maps.front()->spec, budget, grid, enc);
    const int J = int(inst.est_maps.size());
    auto t = nn::Tensor<double>::zeros({1, enc.channels(J), grid, grid});
    const bool moved = e.encode(inst, t.value().data());
    return {t, moved};
}

// ---------------------------------------------------------------------------------------------
// Network

struct EncoderLayer
{
    int width = 1;
    int kernel = 3;
    bool pool_before = false; // halve the resolution before this convolution

    bool operator==(const EncoderLayer &) const = default;
};

struct NetConfig
{
    int grid = 64;
    int n_bs = 3;
    InputEncoding inputs;
    std::vector<EncoderLayer> encoder;
    std::vector<int> decoder_kernels; // one per encoder layer after the first, deepest first
    int final_kernel_1 = 3;
    int final_kernel_2 = 3;
    bool skips = true;
    Activation final_activation = Activation::LeakyRelu;
    double negative_slope = 0.2;

    [[nodiscard]] int in_channels() const { return inputs.channels(n_bs); }

    void validate() const
    {
        if (n_bs < 1)
            throw ConfigError("NetConfig: n_bs must be >= 1");
        if (encoder.empty())
            throw ConfigError("NetConfig: empty encoder");
        if (encoder.front().pool_before)
            throw ConfigError("NetConfig: the first layer must run at full resolution");
        if (decoder_kernels.size() + 1 != encoder.size())
            throw ConfigError("NetConfig: need one decoder kernel per encoder layer after the first");
        int res = grid;
        for (const auto &l : encoder)
        {
            if (l.width < 1 || l.kernel < 1)
                throw ConfigError("NetConfig: widths and kernels must be positive");
            if (l.pool_before)
            {
                if (res % 2 != 0)
                    throw ConfigError("NetConfig: grid " + std::to_string(grid) + " cannot be halved that often");
                res /= 2;
            }
        }
        for (int k : decoder_kernels)
            if (k < 1)
                throw ConfigError("NetConfig: kernels must be positive");
        if (final_kernel_1 < 1 || final_kernel_2 < 1)
            throw ConfigError("NetConfig: kernels must be positive");
    }

    // Scaled-down layout used at desk scale: five resolution levels on a 64 grid. Deeper widths are
    // the full ones divided by five; the first layer is wider because 4 channels do not train.
    static NetConfig desk(int n_bs = 3, InputEncoding in = {})
    {
        NetConfig c;
        c.grid = 64;
        c.n_bs = n_bs;
        c.inputs = in;
        c.encoder = {{12, 3, false}, {10, 3, true}, {12, 5, true}, {14, 5, false},
                     {18, 5, true}, {20, 5, false}, {24, 5, true}};
        c.decoder_kernels = {5, 5, 5, 5, 3, 3};
        c.final_kernel_1 = 3;
        c.final_kernel_2 = 3;
        return c;
    }

    // Full-size 256 layout. The kernel listed under a layer is the one that produces the next layer.
    static NetConfig full(int n_bs = 5, InputEncoding in = {})
    {
        NetConfig c;
        c.grid = 256;
        c.n_bs = n_bs;
        c.inputs = in;
        c.encoder = {{20, 3, false},  {50, 5, true},  {60, 5, true},  {70, 5, false}, {90, 5, true},
                     {100, 5, false}, {120, 5, true}, {120, 3, false}, {135, 5, false}, {150, 5, true},
                     {225, 5, false}, {300, 5, true}, {400, 5, false}, {500, 5, true}};
        c.decoder_kernels = {4, 5, 4, 5, 4, 5, 3, 6, 5, 6, 5, 6, 6};
        c.final_kernel_1 = 5;
        c.final_kernel_2 = 5;
        return c;
    }
};

struct ParamShape
{
    std::string name;
    nn::Shape weight; // Cout, Cin, k, k
};

// Convolution shapes in construction order.
inline std::vector<ParamShape> layer_shapes(const NetConfig &cfg)
{
    cfg.validate();
    std::vector<ParamShape> out;
    const int in = cfg.in_channels();
    int c = in;
    for (std::size_t i = 0; i < cfg.encoder.size(); ++i)
    {
        const auto &l = cfg.encoder[i];
        out.push_back({"enc" + std::to_string(i), {l.width, c, l.kernel, l.kernel}});
        c = l.width;
    }
    for (std::size_t j = 0; j + 1 < cfg.encoder.size(); ++j)
    {
        const int target = cfg.encoder[cfg.encoder.size() - 2 - j].width;
        const int k = cfg.decoder_kernels[j];
        out.push_back({"dec" + std::to_string(j), {target, c, k, k}});
        c = cfg.skips ? 2 * target : target;
    }
    const int w0 = cfg.encoder.front().width;
    out.push_back({"final1", {w0, c + in, cfg.final_kernel_1, cfg.final_kernel_1}});
    out.push_back({"final2", {1, w0 + in, cfg.final_kernel_2, cfg.final_kernel_2}});
    return out;
}

inline std::size_t parameter_count(const NetConfig &cfg)
{
    std::size_t n = 0;
    for (const auto &s : layer_shapes(cfg))
        n += nn::numel(s.weight) + std::size_t(s.weight[0]);
    return n;
}

template <class T>
struct NetOutput
{
    nn::Tensor<T> heatmap;   // N x 1 x g x g, final convolution
    nn::Tensor<T> activated; // after the final activation
    nn::Tensor<T> estimate;  // N x 2 x 1 x 1, network-grid coordinates
    std::vector<std::uint8_t> valid;
};

template <class T>
class LocUNet
{
  public:
    LocUNet(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg))
    {
        auto rng = make_rng({seed, stream::init});
        for (const auto &s : layer_shapes(cfg_))
        {
            // He-uniform for the leaky-ReLU slope, zero bias.
            const int fan_in = s.weight[1] * s.weight[2] * s.weight[3];
            const double bound = std::sqrt(6.0 / ((1.0 + cfg_.negative_slope * cfg_.negative_slope) * fan_in));
            std::uniform_real_distribution<double> u(-bound, bound);
            std::vector<T> w(nn::numel(s.weight));
            for (auto &v : w)
                v = T(u(rng));
            params_.push_back({s.name + ".w", nn::Tensor<T>::from(s.weight, std::move(w), true)});
            params_.push_back({s.name + ".b", nn::Tensor<T>::zeros({1, s.weight[0], 1, 1}, true)});
        }
    }

    [[nodiscard]] const NetConfig &config() const { return cfg_; }
    std::vector<nn::NamedParam<T>> &named_params() { return params_; }

    [[nodiscard]] std::vector<nn::Tensor<T>> params() const
    {
        std::vector<nn::Tensor<T>> out;
        for (const auto &p : params_)
            out.push_back(p.tensor);
        return out;
    }

    [[nodiscard]] std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto &p : params_)
            n += p.tensor.size();
        return n;
    }

    [[nodiscard]] std::vector<std::vector<T>> snapshot() const
    {
        std::vector<std::vector<T>> out;
        for (const auto &p : params_)
            out.push_back(p.tensor.value());
        return out;
    }

    void restore(const std::vector<std::vector<T>> &s)
    {
        for (std::size_t i = 0; i < params_.size(); ++i)
            params_[i].tensor.value() = s[i];
    }

    void zero_grad()
    {
        for (auto &p : params_)
            p.tensor.zero_grad();
    }

    // With `lenient`, heatmaps of vanishing mass are flagged in `valid` instead of raising.
    NetOutput<T> forward(const nn::Tensor<T> &x, bool lenient = true) const
    {
        if (x.dim(1) != cfg_.in_channels() || x.dim(2) != cfg_.grid || x.dim(3) != cfg_.grid)
            throw std::invalid_argument("LocUNet: input " + nn::shape_str(x.shape()) + " does not match " +
                                        std::to_string(cfg_.in_channels()) + " channels on a " +
                                        std::to_string(cfg_.grid) + " grid");
        const double slope = cfg_.negative_slope;
        std::size_t p = 0;
        auto conv = [&](const nn::Tensor<T> &h) {
            const auto &w = params_[p].tensor;
            const auto &b = params_[p + 1].tensor;
            p += 2;
            return nn::conv2d(h, w, b);
        };
        std::vector<nn::Tensor<T>> skip;
        nn::Tensor<T> h = x;
        for (const auto &l : cfg_.encoder)
        {
            if (l.pool_before)
                h = nn::avgpool2(h);
            h = nn::leaky_relu(conv(h), slope);
            skip.push_back(h);
        }
        const std::size_t L = cfg_.encoder.size();
        for (std::size_t j = 0; j + 1 < L; ++j)
        {
            const std::size_t i = L - 2 - j;
            if (cfg_.encoder[i + 1].pool_before)
                h = nn::upsample2(h);
            h = nn::leaky_relu(conv(h), slope);
            if (cfg_.skips)
                h = nn::concat<T>({h, skip[i]});
        }
        h = nn::leaky_relu(conv(nn::concat<T>({h, x})), slope);
        NetOutput<T> out;
        out.heatmap = conv(nn::concat<T>({h, x}));
        out.activated = cfg_.final_activation == Activation::LeakyRelu ? nn::leaky_relu(out.heatmap, slope)
                                                                        : nn::activate(out.heatmap, cfg_.final_activation);
        out.estimate = nn::com_readout(out.activated, lenient ? &out.valid : nullptr);
        if (!lenient)
            out.valid.assign(std::size_t(x.dim(0)), 1);
        return out;
    }

  private:
    NetConfig cfg_;
    std::vector<nn::NamedParam<T>> params_;
};

// Positive and negative parts of one quasi-heatmap, each normalized to unit sum (all zero when empty).
struct HeatmapParts
{
    RealGrid positive;
    RealGrid negative;
};

template <class T>
HeatmapParts split_heatmap(const nn::Tensor<T> &activated, int n = 0)
{
    const int g = activated.dim(2);
    HeatmapParts out{RealGrid(g, g), RealGrid(g, g)};
    double sp = 0, sn = 0;
    for (int r = 0; r < g; ++r)
        for (int c = 0; c < g; ++c)
        {
            const double v = activated.at(n, 0, r, c);
            if (v > 0)
                sp += (out.positive(r, c) = v);
            else if (v < 0)
                sn += (out.negative(r, c) = -v);
        }
    for (std::size_t i = 0; i < out.positive.size(); ++i)
    {
        if (sp > 0)
            out.positive.at_index(i) /= sp;
        if (sn > 0)
            out.negative.at_index(i) /= sn;
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Training

struct TrainConfig
{
    LossKind loss = LossKind::Aed;
    double lr = 1e-5;
    double lr_drop_factor = 10.0;
    int lr_drop_epoch = 30;
    int epochs = 50;
    int batch = 15;
    std::uint64_t seed = 1;
    int warmup_epochs = 3; // divergence is only judged after this many epochs
    int jobs = 1;

    void validate() const
    {
        if (!(lr > 0) || !(lr_drop_factor >= 1) || epochs < 1 || batch < 1 || lr_drop_epoch < 0 || warmup_epochs < 0)
            throw ConfigError("TrainConfig: invalid values");
    }
};

struct EpochLog
{
    int epoch = 0;
    double train_loss = 0; // mean batch loss on the network grid (pixels or pixels^2)
    double val_aed_m = 0;
};

struct TrainResult
{
    std::vector<EpochLog> log;
    int best_epoch = 0;
    double best_val_aed_m = std::numeric_limits<double>::infinity();
    double centroid_baseline_m = 0;
    bool diverged = false;
    bool converged = false; // best validation AED finite and below the centroid baseline
    long batches = 0;
    long degenerate_batches = 0;
    long degenerate_elements = 0;
    long tx_moved = 0;
};

inline std::string log_csv(const std::vector<EpochLog> &log)
{
    std::ostringstream s;
    s << "epoch,train_loss,val_aed\n";
    for (const auto &e : log)
        s << e.epoch << ',' << io::format4(e.train_loss) << ',' << io::format4(e.val_aed_m) << '\n';
    return s.str();
}

// Center of the UE box in dataset pixel coordinates: the mean of a uniform UE draw.
inline Position map_centroid(const GridSpec &spec)
{
    const Box b = ue_box(spec.size_px);
    const double m = (b.lo + b.hi) / 2.0 + 1.0;
    return {m, m};
}

inline double centroid_baseline_aed_m(const RssDataset &ds, const std::vector<int> &idx)
{
    if (idx.empty())
        return 0.0;
    const Position c = map_centroid(ds.spec);
    double s = 0;
    for (int i : idx)
        s += distance_m(c, ds.instances[std::size_t(i)].truth, ds.spec);
    return s / double(idx.size());
}

namespace detail
{

template <class T>
nn::Tensor<T> batch_inputs(const RssDataset &ds, const InputEncoder &enc, const std::vector<int> &idx, std::size_t lo,
                           std::size_t hi, int channels, long *moved = nullptr)
{
    const int g = enc.grid();
    auto x = nn::Tensor<T>::zeros({int(hi - lo), channels, g, g});
    const std::size_t stride = std::size_t(channels) * g * g;
    for (std::size_t k = lo; k < hi; ++k)
    {
        const bool m = enc.encode(ds.instances[std::size_t(idx[k])], x.value().data() + (k - lo) * stride);
        if (moved && m)
            ++*moved;
    }
    return x;
}

} // namespace detail

// Estimates in dataset pixel coordinates; nullopt where the heatmap was degenerate.
template <class T>
std::vector<std::optional<Position>> predict(const LocUNet<T> &net, const RssDataset &ds, const InputEncoder &enc,
                                             const std::vector<int> &idx, int batch = 16)
{
    std::vector<std::optional<Position>> out(idx.size());
    const int C = net.config().in_channels();
    for (std::size_t lo = 0; lo < idx.size(); lo += std::size_t(batch))
    {
        const std::size_t hi = std::min(idx.size(), lo + std::size_t(batch));
        const auto x = detail::batch_inputs<T>(ds, enc, idx, lo, hi, C);
        const auto y = net.forward(x.detach());
        for (std::size_t k = lo; k < hi; ++k)
            if (y.valid[k - lo])
            {
                const Position p{double(y.estimate.value()[2 * (k - lo)]), double(y.estimate.value()[2 * (k - lo) + 1])};
                if (std::isfinite(p.x) && std::isfinite(p.y))
                    out[k] = enc.to_dataset(p);
            }
    }
    return out;
}

// AED in meters over the valid estimates; infinity when none is valid.
inline double aed_m(const RssDataset &ds, const std::vector<int> &idx, const std::vector<std::optional<Position>> &est)
{
    double s = 0;
    long n = 0;
    for (std::size_t k = 0; k < idx.size(); ++k)
        if (est[k])
        {
            s += distance_m(*est[k], ds.instances[std::size_t(idx[k])].truth, ds.spec);
            ++n;
        }
    return n ? s / double(n) : std::numeric_limits<double>::infinity();
}

template <class T>
double validation_aed_m(const LocUNet<T> &net, const RssDataset &ds, const InputEncoder &enc, const std::vector<int> &idx)
{
    return aed_m(ds, idx, predict(net, ds, enc, idx));
}

// Minibatch training on `train_idx`, early-stopped on the AED of `val_idx`. The network ends up
// holding the parameters of the best validation epoch.
template <class T>
TrainResult train(LocUNet<T> &net, const RssDataset &ds, const InputEncoder &enc, const TrainConfig &tc,
                  const std::vector<int> &train_idx, const std::vector<int> &val_idx,
                  const std::function<void(const EpochLog &)> &progress = {})
{
    tc.validate();
    if (train_idx.empty() || val_idx.empty())
        throw std::invalid_argument("train: need non-empty train and validation splits");
    TrainResult res;
    res.centroid_baseline_m = centroid_baseline_aed_m(ds, val_idx);
    const int C = net.config().in_channels();
    auto params = net.params();
    nn::Adam<T> opt(tc.lr);
    std::vector<int> order = train_idx;
    auto best = net.snapshot();
    for (int epoch = 1; epoch <= tc.epochs; ++epoch)
    {
        if (epoch > tc.lr_drop_epoch && tc.lr_drop_epoch > 0)
            opt.lr = tc.lr / tc.lr_drop_factor;
        auto rng = make_rng({tc.seed, stream::shuffle, std::uint64_t(epoch)});
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0;
        long loss_n = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += std::size_t(tc.batch))
        {
            const std::size_t hi = std::min(order.size(), lo + std::size_t(tc.batch));
            const auto x = detail::batch_inputs<T>(ds, enc, order, lo, hi, C, &res.tx_moved);
            std::vector<Position> truth;
            for (std::size_t k = lo; k < hi; ++k)
                truth.push_back(enc.to_net(ds.instances[std::size_t(order[k])].truth));
            ++res.batches;
            const auto y = net.forward(x);
            const auto bad = std::count(y.valid.begin(), y.valid.end(), std::uint8_t(0));
            res.degenerate_elements += long(bad);
            if (bad > 0)
                ++res.degenerate_batches;
            if (std::size_t(bad) == truth.size())
                continue;
            const auto loss = tc.loss == LossKind::Aed ? nn::aed_loss(y.estimate, truth, &y.valid)
                                                       : nn::ased_loss(y.estimate, truth, &y.valid);
            const double lv = double(loss.value()[0]);
            if (!std::isfinite(lv))
                continue;
            net.zero_grad();
            nn::backward(loss);
            opt.step(params);
            loss_sum += lv;
            ++loss_n;
        }
        EpochLog e{epoch, loss_n ? loss_sum / double(loss_n) : std::numeric_limits<double>::quiet_NaN(),
                   validation_aed_m(net, ds, enc, val_idx)};
        res.log.push_back(e);
        if (std::isfinite(e.val_aed_m) && e.val_aed_m < res.best_val_aed_m)
        {
            res.best_val_aed_m = e.val_aed_m;
            res.best_epoch = epoch;
            best = net.snapshot();
        }
        if (epoch > tc.warmup_epochs && !(e.val_aed_m <= 2.0 * res.centroid_baseline_m))
            res.diverged = true;
        if (progress)
            progress(e);
    }
    net.restore(best);
    res.converged = std::isfinite(res.best_val_aed_m) && res.best_val_aed_m < res.centroid_baseline_m;
    return res;
}

template <class T>
TrainResult train(LocUNet<T> &net, const RssDataset &ds, const InputEncoder &enc, const TrainConfig &tc,
                  const std::function<void(const EpochLog &)> &progress = {})
{
    return train(net, ds, enc, tc, ds.splits.train, ds.splits.val, progress);
}

// ---------------------------------------------------------------------------------------------
// Heatmap-regression baseline

enum class HeatmapInference
{
    Argmax,
    Com,
};

inline std::string to_string(HeatmapInference m) { return m == HeatmapInference::Argmax ? "argmax" : "com"; }

// Gaussian bump centered at `truth` (network-grid coordinates), normalized to unit sum. Very small
// sigmas collapse onto the nearest pixel.
inline std::vector<double> gaussian_target(Position truth, int grid, double sigma_px)
{
    if (!(sigma_px > 0))
        throw std::invalid_argument("gaussian_target: sigma must be positive");
    std::vector<double> d2(std::size_t(grid) * grid);
    double dmin = std::numeric_limits<double>::infinity();
    for (int r = 0; r < grid; ++r)
        for (int c = 0; c < grid; ++c)
        {
            const double dx = c + 1 - truth.x, dy = r + 1 - truth.y;
            d2[std::size_t(r) * grid + c] = dx * dx + dy * dy;
            dmin = std::min(dmin, dx * dx + dy * dy);
        }
    double s = 0;
    for (auto &v : d2)
        s += (v = std::exp(-(v - dmin) / (2 * sigma_px * sigma_px)));
    for (auto &v : d2)
        v /= s;
    return d2;
}

template <class T>
std::optional<Position> heatmap_estimate(const nn::Tensor<T> &heat, int n, HeatmapInference mode)
{
    const int g = heat.dim(2);
    const T *p = heat.value().data() + std::size_t(n) * g * g;
    if (mode == HeatmapInference::Argmax)
    {
        const auto i = std::size_t(std::max_element(p, p + std::size_t(g) * g) - p);
        return Position{double(i % std::size_t(g) + 1), double(i / std::size_t(g) + 1)};
    }
    double s = 0, sx = 0, sy = 0;
    for (int r = 0; r < g; ++r)
        for (int c = 0; c < g; ++c)
        {
            const double v = p[r * g + c];
            s += v, sx += v * (c + 1), sy += v * (r + 1);
        }
    if (!(std::abs(s) >= nn::degenerate_mass))
        return std::nullopt;
    return Position{sx / s, sy / s};
}

struct HeatmapBaselineResult
{
    double sigma_px = 0;
    TrainResult train; // val_aed_m tracks argmax inference
    double aed_argmax_m = 0;
    double aed_com_m = 0;
    long failures_com = 0;
};

// Trains the same network against Gaussian target heatmaps with an MSE loss on the raw final
// convolution, then evaluates mode and center-of-mass inference on `eval_idx`.
template <class T>
HeatmapBaselineResult heatmap_regression_baseline(LocUNet<T> &net, const RssDataset &ds, const InputEncoder &enc,
                                                  const TrainConfig &tc, double sigma_px,
                                                  const std::vector<int> &train_idx, const std::vector<int> &val_idx,
                                                  const std::vector<int> &eval_idx)
{
    tc.validate();
    if (!(sigma_px > 0))
        throw std::invalid_argument("heatmap_regression_baseline: sigma must be positive");
    HeatmapBaselineResult out;
    out.sigma_px = sigma_px;
    const int C = net.config().in_channels(), g = net.config().grid;
    auto run = [&](const std::vector<int> &idx, HeatmapInference mode, long *fail) {
        std::vector<std::optional<Position>> est(idx.size());
        for (std::size_t lo = 0; lo < idx.size(); lo += 16)
        {
            const std::size_t hi = std::min(idx.size(), lo + 16);
            const auto y = net.forward(detail::batch_inputs<T>(ds, enc, idx, lo, hi, C));
            for (std::size_t k = lo; k < hi; ++k)
            {
                const auto p = heatmap_estimate(y.heatmap, int(k - lo), mode);
                if (p)
                    est[k] = enc.to_dataset(*p);
                else if (fail)
                    ++*fail;
            }
        }
        return aed_m(ds, idx, est);
    };
    auto params = net.params();
    nn::Adam<T> opt(tc.lr);
    std::vector<int> order = train_idx;
    auto best = net.snapshot();
    out.train.centroid_baseline_m = centroid_baseline_aed_m(ds, val_idx);
    for (int epoch = 1; epoch <= tc.epochs; ++epoch)
    {
        if (epoch > tc.lr_drop_epoch && tc.lr_drop_epoch > 0)
            opt.lr = tc.lr / tc.lr_drop_factor;
        auto rng = make_rng({tc.seed, stream::shuffle, std::uint64_t(epoch)});
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0;
        long loss_n = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += std::size_t(tc.batch))
        {
            const std::size_t hi = std::min(order.size(), lo + std::size_t(tc.batch));
            const auto x = detail::batch_inputs<T>(ds, enc, order, lo, hi, C);
            std::vector<T> target;
            for (std::size_t k = lo; k < hi; ++k)
                for (double v : gaussian_target(enc.to_net(ds.instances[std::size_t(order[k])].truth), g, sigma_px))
                    target.push_back(T(v));
            const auto y = net.forward(x);
            const auto loss = nn::mse_loss(y.heatmap, target);
            net.zero_grad();
            nn::backward(loss);
            opt.step(params);
            loss_sum += double(loss.value()[0]);
            ++loss_n;
            ++out.train.batches;
        }
        const EpochLog e{epoch, loss_sum / double(std::max(loss_n, 1L)), run(val_idx, HeatmapInference::Argmax, nullptr)};
        out.train.log.push_back(e);
        if (e.val_aed_m < out.train.best_val_aed_m)
        {
            out.train.best_val_aed_m = e.val_aed_m;
            out.train.best_epoch = epoch;
            best = net.snapshot();
        }
    }
    net.restore(best);
    out.train.converged = out.train.best_val_aed_m < out.train.centroid_baseline_m;
    out.aed_argmax_m = run(eval_idx, HeatmapInference::Argmax, nullptr);
    out.aed_com_m = run(eval_idx, HeatmapInference::Com, &out.failures_com);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Ablation

struct AblationCell
{
    InputEncoding inputs;
    Activation activation = Activation::LeakyRelu;
    LossKind loss = LossKind::Aed;
    std::size_t parameters = 0;
    bool converged = false;
    double val_aed_m = 0;
    double degenerate_batch_fraction = 0;
};

inline std::string cell_value(const AblationCell &c) { return c.converged ? io::format4(c.val_aed_m) : "n.c."; }

inline std::vector<InputEncoding> ablation_inputs()
{
    return {{true, true}, {false, true}, {true, false}, {false, false}};
}

inline std::vector<Activation> ablation_activations()
{
    return {Activation::LeakyRelu, Activation::Relu, Activation::Softmax, Activation::Sigmoid};
}

// 4 input sets x 2 losses x 4 activations, each trained from the same seed. Runs are independent
// and may execute in parallel.
template <class T>
std::vector<AblationCell> ablation_matrix(const RssDataset &ds, const NetConfig &base, const TrainConfig &tc,
                                          const std::vector<int> &train_idx, const std::vector<int> &val_idx, int jobs = 1)
{
    std::vector<AblationCell> cells;
    for (const auto &in : ablation_inputs())
        for (auto loss : {LossKind::Aed, LossKind::Ased})
            for (auto act : ablation_activations())
            {
                AblationCell c;
                c.inputs = in;
                c.loss = loss;
                c.activation = act;
                cells.push_back(c);
            }
    parallel_for(cells.size(), jobs, [&](std::size_t i) {
        auto &c = cells[i];
        NetConfig cfg = base;
        cfg.inputs = c.inputs;
        cfg.final_activation = c.activation;
        LocUNet<T> net(cfg, tc.seed);
        c.parameters = net.parameter_count();
        TrainConfig t = tc;
        t.loss = c.loss;
        const InputEncoder enc(ds.spec, ds.budget, cfg.grid, c.inputs);
        const auto r = train(net, ds, enc, t, train_idx, val_idx);
        c.converged = r.converged;
        c.val_aed_m = r.best_val_aed_m;
        c.degenerate_batch_fraction = r.batches ? double(r.degenerate_batches) / double(r.batches) : 0.0;
    });
    return cells;
}

} // namespace radioloc
