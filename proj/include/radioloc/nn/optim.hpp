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

// Adam with bias correction, and the versioned parameter checkpoint format.

#include "radioloc/errors.hpp"
#include "radioloc/io.hpp"
#include "radioloc/nn/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace radioloc::nn
{

template <class T>
struct NamedParam
{
    std::string name;
    Tensor<T> tensor;
};

template <class T>
class Adam
{
  public:
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    Adam() = default;
    Adam(double lr_, double b1 = 0.9, double b2 = 0.999, double eps_ = 1e-8) : lr(lr_), beta1(b1), beta2(b2), eps(eps_) {}

    [[nodiscard]] long steps() const { return t_; }

    // One update of every parameter from its accumulated gradient.
    void step(std::vector<Tensor<T>> &params)
    {
        if (m_.empty())
            for (const auto &p : params)
            {
                m_.emplace_back(p.size(), 0.0);
                v_.emplace_back(p.size(), 0.0);
            }
        if (m_.size() != params.size())
            throw std::invalid_argument("Adam: parameter list changed between steps");
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, double(t_));
        const double c2 = 1.0 - std::pow(beta2, double(t_));
        for (std::size_t k = 0; k < params.size(); ++k)
        {
            auto &p = params[k];
            if (m_[k].size() != p.size())
                throw std::invalid_argument("Adam: parameter shape changed between steps");
            auto &val = p.value();
            const auto &g = p.grad();
            for (std::size_t i = 0; i < val.size(); ++i)
            {
                const double gi = g[i];
                m_[k][i] = beta1 * m_[k][i] + (1.0 - beta1) * gi;
                v_[k][i] = beta2 * v_[k][i] + (1.0 - beta2) * gi * gi;
                const double mh = m_[k][i] / c1, vh = v_[k][i] / c2;
                val[i] = T(double(val[i]) - lr * mh / (std::sqrt(vh) + eps));
            }
        }
    }

  private:
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Layout: "RLCKPT01", u32 version, u32 count, then per parameter: u32 name length, name, 4 x i32 shape,
// float64 values; finally u32 CRC-32 of everything before it. Little-endian throughout.
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail
{

template <class V>
void put(std::string &out, V v)
{
    char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    out.append(buf, sizeof(V));
}

struct Reader
{
    const std::string &bytes;
    std::size_t pos = 0;

    template <class V>
    V get()
    {
        if (pos + sizeof(V) > bytes.size())
            throw MalformedFileError("checkpoint: truncated");
        V v;
        std::memcpy(&v, bytes.data() + pos, sizeof(V));
        pos += sizeof(V);
        return v;
    }
};

} // namespace detail

template <class T>
std::string encode_checkpoint(const std::vector<NamedParam<T>> &params)
{
    static_assert(std::endian::native == std::endian::little);
    std::string out = "RLCKPT01";
    detail::put(out, checkpoint_version);
    detail::put(out, std::uint32_t(params.size()));
    for (const auto &p : params)
    {
        detail::put(out, std::uint32_t(p.name.size()));
        out += p.name;
        for (int d : p.tensor.shape())
            detail::put(out, std::int32_t(d));
        for (T v : p.tensor.value())
            detail::put(out, double(v));
    }
    detail::put(out, io::crc32_bytes(out.data(), out.size()));
    return out;
}

// Restores values into `params`, which must list the same names and shapes in the same order.
// Nothing is written into `params` unless the whole file parses and its checksum matches.
template <class T>
void decode_checkpoint(const std::string &bytes, std::vector<NamedParam<T>> &params)
{
    if (bytes.size() < 8 || bytes.compare(0, 8, "RLCKPT01") != 0)
        throw MalformedFileError("checkpoint: bad magic");
    detail::Reader rd{bytes, 8};
    const auto version = rd.get<std::uint32_t>();
    if (version != checkpoint_version)
        throw VersionMismatchError("checkpoint: unsupported version " + std::to_string(version));
    const auto count = rd.get<std::uint32_t>();
    if (count != params.size())
        throw MalformedFileError("checkpoint: expected " + std::to_string(params.size()) + " parameters, found " +
                                 std::to_string(count));
    std::vector<std::vector<double>> values;
    for (const auto &p : params)
    {
        const auto len = rd.get<std::uint32_t>();
        if (rd.pos + len > bytes.size())
            throw MalformedFileError("checkpoint: truncated");
        const std::string name = bytes.substr(rd.pos, len);
        rd.pos += len;
        Shape s;
        for (auto &d : s)
            d = rd.get<std::int32_t>();
        if (name != p.name || s != p.tensor.shape())
            throw MalformedFileError("checkpoint: parameter '" + name + "' " + shape_str(s) + " does not match '" +
                                     p.name + "' " + shape_str(p.tensor.shape()));
        auto &v = values.emplace_back(p.tensor.size());
        for (auto &x : v)
            x = rd.get<double>();
    }
    const std::size_t body = rd.pos;
    const auto stored_crc = rd.get<std::uint32_t>();
    if (rd.pos != bytes.size())
        throw MalformedFileError("checkpoint: trailing data");
    if (io::crc32_bytes(bytes.data(), body) != stored_crc)
        throw ChecksumError("checkpoint: checksum mismatch");
    for (std::size_t k = 0; k < params.size(); ++k)
    {
        auto &dst = params[k].tensor.value();
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] = T(values[k][i]);
    }
}

template <class T>
void save_checkpoint(const std::filesystem::path &path, const std::vector<NamedParam<T>> &params)
{
    io::write_atomic(path, encode_checkpoint(params));
}

template <class T>
void load_checkpoint(const std::filesystem::path &path, std::vector<NamedParam<T>> &params)
{
    decode_checkpoint(io::read_file(path), params);
}

} // namespace radioloc::nn
