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

// Dense NCHW tensors with a reverse-mode tape. Every op output keeps shared pointers to its inputs and
// a closure that pushes its gradient back into them; backward() walks the graph in reverse
// topological order. Outputs of ops whose inputs need no gradient record nothing.

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace radioloc::nn
{

using Shape = std::array<int, 4>; // N, C, H, W

inline std::size_t numel(const Shape &s) { return std::size_t(s[0]) * s[1] * s[2] * s[3]; }

inline std::string shape_str(const Shape &s)
{
    return "[" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "," +
           std::to_string(s[3]) + "]";
}

template <class T>
struct Node
{
    Shape shape{};
    std::vector<T> value;
    std::vector<T> grad; // empty until needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;

    void ensure_grad()
    {
        if (grad.size() != value.size())
            grad.assign(value.size(), T(0));
    }
};

template <class T>
class Tensor
{
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false)
    {
        for (int d : shape)
            if (d < 0)
                throw std::invalid_argument("Tensor: negative dimension");
        auto n = std::make_shared<Node<T>>();
        n->shape = shape;
        n->value.assign(numel(shape), T(0));
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false)
    {
        if (values.size() != numel(shape))
            throw std::invalid_argument("Tensor: data length " + std::to_string(values.size()) + " does not match " +
                                        shape_str(shape));
        auto t = zeros({0, 0, 0, 0}, requires_grad);
        t.node_->shape = shape;
        t.node_->value = std::move(values);
        return t;
    }

    [[nodiscard]] bool defined() const { return node_ != nullptr; }
    [[nodiscard]] const Shape &shape() const { return node_->shape; }
    [[nodiscard]] int dim(int i) const { return node_->shape[std::size_t(i)]; }
    [[nodiscard]] std::size_t size() const { return node_->value.size(); }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }

    std::vector<T> &value() { return node_->value; }
    const std::vector<T> &value() const { return node_->value; }
    std::vector<T> &grad()
    {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<T> &grad() const { return node_->grad; }

    T &at(int n, int c, int h, int w) { return node_->value[offset(n, c, h, w)]; }
    const T &at(int n, int c, int h, int w) const { return node_->value[offset(n, c, h, w)]; }

    void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

    [[nodiscard]] std::size_t offset(int n, int c, int h, int w) const
    {
        const auto &s = node_->shape;
        return ((std::size_t(n) * s[1] + c) * s[2] + h) * s[3] + w;
    }

    [[nodiscard]] const std::shared_ptr<Node<T>> &node() const { return node_; }

    // Copy of the values without any tape history.
    [[nodiscard]] Tensor detach() const { return from(shape(), value(), false); }

  private:
    std::shared_ptr<Node<T>> node_;
};

// Output node of an op: records parents and the backward closure only when some input needs a gradient.
template <class T>
std::shared_ptr<Node<T>> make_output(Shape shape, std::initializer_list<std::shared_ptr<Node<T>>> inputs)
{
    auto out = std::make_shared<Node<T>>();
    out->shape = shape;
    out->value.assign(numel(shape), T(0));
    for (const auto &in : inputs)
        if (in->requires_grad)
            out->requires_grad = true;
    if (out->requires_grad)
        out->parents.assign(inputs.begin(), inputs.end());
    return out;
}

template <class T>
std::shared_ptr<Node<T>> make_output(Shape shape, const std::vector<std::shared_ptr<Node<T>>> &inputs)
{
    auto out = std::make_shared<Node<T>>();
    out->shape = shape;
    out->value.assign(numel(shape), T(0));
    for (const auto &in : inputs)
        if (in->requires_grad)
            out->requires_grad = true;
    if (out->requires_grad)
        out->parents = inputs;
    return out;
}

// Seeds d(root)/d(root) = 1 for a single-element root and accumulates gradients into every leaf.
template <class T>
void backward(const Tensor<T> &root)
{
    if (root.size() != 1)
        throw std::invalid_argument("backward: root must hold a single value");
    if (!root.requires_grad())
        return;
    std::vector<Node<T> *> order;
    std::unordered_set<Node<T> *> seen;
    std::vector<std::pair<Node<T> *, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty())
    {
        auto &[node, next] = stack.back();
        if (next < node->parents.size())
        {
            Node<T> *p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second)
                stack.emplace_back(p, 0);
        }
        else
        {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (auto *n : order)
        n->ensure_grad();
    root.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn)
            (*it)->backward_fn();
}

} // namespace radioloc::nn
