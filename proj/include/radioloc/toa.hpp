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

// Range-based localizers: POCS, squared-range least squares solved by bisection on the Lagrange
// multiplier (with NLOS bias subtraction), and maximum-correntropy iterative reweighting.

#include "radioloc/errors.hpp"
#include "radioloc/grid.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace radioloc
{

struct RangingProblem
{
    std::vector<Position> anchors; // meters
    std::vector<double> ranges_m;
    double bias_b_m = 0.0;
    double sigma_m = 1e-4;
    std::vector<double> weights; // optional per-link weights for SR-LS, empty = all ones
};

struct SolverResult
{
    Position estimate;
    int iterations = 0;
    bool converged = false;
    double residual = std::numeric_limits<double>::quiet_NaN(); // RMS of |x - a_j| - r_j
    std::vector<double> weights;                                   // final link weights (correntropy)
};

inline double range_rms_residual(const RangingProblem &p, Position x)
{
    if (p.anchors.empty())
        return 0.0;
    double s = 0.0;
    for (std::size_t j = 0; j < p.anchors.size(); ++j)
    {
        const double e = distance_px(x, p.anchors[j]) - p.ranges_m[j];
        s += e * e;
    }
    return std::sqrt(s / double(p.anchors.size()));
}

namespace detail
{

inline void check_problem(const RangingProblem &p)
{
    if (p.anchors.size() != p.ranges_m.size())
        throw std::invalid_argument("ranging: anchors and ranges differ in length");
    if (!p.weights.empty() && p.weights.size() != p.anchors.size())
        throw std::invalid_argument("ranging: weights and anchors differ in length");
}

// Anchors are collinear when the centered anchor cloud has (numerically) rank < 2.
inline void check_geometry(const std::vector<Position> &anchors)
{
    if (anchors.size() < 3)
        throw InsufficientAnchorsError("ranging: at least 3 anchors required");
    double mx = 0.0, my = 0.0;
    for (const auto &a : anchors)
    {
        mx += a.x;
        my += a.y;
    }
    mx /= double(anchors.size());
    my /= double(anchors.size());
    Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
    for (const auto &a : anchors)
    {
        const Eigen::Vector2d d(a.x - mx, a.y - my);
        c += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(c);
    const double hi = es.eigenvalues()(1), lo = es.eigenvalues()(0);
    if (!(hi > 0.0) || lo <= 1e-12 * hi)
        throw DegenerateGeometryError("ranging: anchors are collinear");
}

} // namespace detail

// Cyclic projections onto the disks |x - a_j| <= r_j, starting at the anchor centroid.
inline SolverResult pocs_localize(const RangingProblem &p, int max_iter = 1000, double tol = 1e-6)
{
    detail::check_problem(p);
    SolverResult res;
    if (p.anchors.empty())
        return res;
    double x = 0.0, y = 0.0;
    for (const auto &a : p.anchors)
    {
        x += a.x;
        y += a.y;
    }
    x /= double(p.anchors.size());
    y /= double(p.anchors.size());
    for (int it = 1; it <= max_iter; ++it)
    {
        double max_step = 0.0;
        for (std::size_t j = 0; j < p.anchors.size(); ++j)
        {
            const double dx = x - p.anchors[j].x, dy = y - p.anchors[j].y;
            const double d = std::hypot(dx, dy);
            const double r = std::max(p.ranges_m[j], 0.0);
            if (d <= r)
                continue;
            const double nx = p.anchors[j].x + dx * (r / d), ny = p.anchors[j].y + dy * (r / d);
            max_step = std::max(max_step, std::hypot(nx - x, ny - y));
            x = nx;
            y = ny;
        }
        res.iterations = it;
        if (max_step < tol)
        {
            res.converged = true;
            break;
        }
    }
    res.estimate = {x, y};
    res.residual = range_rms_residual(p, res.estimate);
    return res;
}

// Inner machinery of the lifted problem  min |A y - b|_W^2  s.t.  y'Dy + 2f'y = 0,  y = [x; |x|^2].
class SrlsSystem
{
  public:
    SrlsSystem(const std::vector<Position> &anchors, const std::vector<double> &ranges, const std::vector<double> &w)
    {
        const std::size_t m = anchors.size();
        Eigen::MatrixXd A(m, 3);
        Eigen::VectorXd b(m), W(m);
        for (std::size_t j = 0; j < m; ++j)
        {
            A(Eigen::Index(j), 0) = -2.0 * anchors[j].x;
            A(Eigen::Index(j), 1) = -2.0 * anchors[j].y;
            A(Eigen::Index(j), 2) = 1.0;
            b(Eigen::Index(j)) = ranges[j] * ranges[j] - (anchors[j].x * anchors[j].x + anchors[j].y * anchors[j].y);
            W(Eigen::Index(j)) = w.empty() ? 1.0 : w[j];
        }
        M_ = A.transpose() * W.asDiagonal() * A;
        g_ = A.transpose() * W.asDiagonal() * b;
        D_ = Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal();
        f_ = Eigen::Vector3d(0.0, 0.0, -0.5);
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::Matrix3d> es(D_, M_);
        if (es.info() != Eigen::Success)
            throw DegenerateGeometryError("bisection: lifted system is singular");
        lambda1_ = es.eigenvalues().maxCoeff();
        if (!(lambda1_ > 0.0) || !std::isfinite(lambda1_))
            throw DegenerateGeometryError("bisection: lifted system is singular");
    }

    // Left end of the interval on which M + lambda D is positive definite.
    [[nodiscard]] double lower() const { return -1.0 / lambda1_; }

    [[nodiscard]] Eigen::Vector3d y(double lambda) const
    {
        return (M_ + lambda * D_).ldlt().solve(g_ - lambda * f_);
    }

    // Constraint value; decreasing in lambda on the admissible interval.
    [[nodiscard]] double phi(double lambda) const
    {
        const Eigen::Vector3d v = y(lambda);
        return v.dot(D_ * v) + 2.0 * f_.dot(v);
    }

  private:
    Eigen::Matrix3d M_, D_;
    Eigen::Vector3d g_, f_;
    double lambda1_ = 0.0;
};

struct Bracket
{
    double lo, hi;
    bool valid;
};

// Finds lo < hi inside the admissible interval with phi(lo) > 0 > phi(hi).
inline Bracket srls_bracket(const SrlsSystem &sys)
{
    const double l0 = sys.lower();
    const double scale = std::max(1.0, std::abs(l0));
    double hi = std::max(0.0, l0 + scale);
    int guard = 0;
    while (sys.phi(hi) >= 0.0 && guard++ < 200)
        hi = l0 + 2.0 * (hi - l0);
    double gap = hi - l0;
    double lo = hi;
    for (guard = 0; guard < 200; ++guard)
    {
        gap *= 0.5;
        lo = l0 + gap;
        if (lo <= l0)
            break;
        if (sys.phi(lo) > 0.0)
            return {lo, hi, sys.phi(hi) < 0.0};
    }
    return {lo, hi, false};
}

// Squared-range least squares on bias-adjusted ranges max(r - b, 0). Bisection stops when the
// multiplier interval is shorter than tol (relative to its magnitude) or stops shrinking.
inline SolverResult bisection_robust_localize(const RangingProblem &p, double tol = 1e-12)
{
    detail::check_problem(p);
    detail::check_geometry(p.anchors);
    std::vector<double> r(p.ranges_m.size());
    for (std::size_t j = 0; j < r.size(); ++j)
        r[j] = std::max(p.ranges_m[j] - p.bias_b_m, 0.0);

    // Work relative to the anchor centroid so the lifted system stays well conditioned.
    double cx = 0.0, cy = 0.0;
    for (const auto &a : p.anchors)
    {
        cx += a.x;
        cy += a.y;
    }
    cx /= double(p.anchors.size());
    cy /= double(p.anchors.size());
    std::vector<Position> local(p.anchors.size());
    for (std::size_t j = 0; j < local.size(); ++j)
        local[j] = {p.anchors[j].x - cx, p.anchors[j].y - cy};

    const SrlsSystem sys(local, r, p.weights);
    SolverResult res;
    auto br = srls_bracket(sys);
    double lo = br.lo, hi = br.hi;
    if (br.valid)
    {
        while (true)
        {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi || hi - lo <= tol * std::max(1.0, std::abs(mid)))
                break;
            (sys.phi(mid) > 0.0 ? lo : hi) = mid;
            ++res.iterations;
        }
        res.converged = true;
    }
    const Eigen::Vector3d y = sys.y(br.valid ? 0.5 * (lo + hi) : lo);
    res.estimate = {y(0) + cx, y(1) + cy};
    if (!std::isfinite(res.estimate.x) || !std::isfinite(res.estimate.y))
        throw DegenerateGeometryError("bisection: non-finite solution");
    res.residual = range_rms_residual(p, res.estimate);
    return res;
}

// Iteratively reweighted SR-LS with Gaussian-kernel weights on the range residuals.
// The bandwidth starts at the largest residual of the unweighted fit and halves every step until
// it reaches kernel_sigma, so a poor start does not zero out every weight at once.
inline SolverResult correntropy_localize(const RangingProblem &p, double kernel_sigma_m, int max_iter = 100,
                                         double tol = 1e-9)
{
    detail::check_problem(p);
    detail::check_geometry(p.anchors);
    if (!(kernel_sigma_m > 0.0))
        throw std::invalid_argument("correntropy_localize: kernel sigma must be positive");
    RangingProblem q = p;
    q.bias_b_m = 0.0;
    q.weights.clear();
    SolverResult cur = bisection_robust_localize(q);
    const std::size_t m = p.anchors.size();
    std::vector<double> w(m, 1.0), e(m);
    auto residuals = [&](Position x) {
        double emax = 0.0;
        for (std::size_t j = 0; j < m; ++j)
        {
            e[j] = distance_px(x, p.anchors[j]) - p.ranges_m[j];
            emax = std::max(emax, std::abs(e[j]));
        }
        return emax;
    };
    double s = std::max(kernel_sigma_m, residuals(cur.estimate));
    SolverResult res = cur;
    res.converged = false;
    res.iterations = 0;
    for (int it = 1; it <= max_iter; ++it)
    {
        residuals(cur.estimate);
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j)
        {
            w[j] = -e[j] * e[j] / (2.0 * s * s);
            top = std::max(top, w[j]);
        }
        // shift so the largest weight is 1; tiny weights are floored to keep the system solvable
        for (auto &v : w)
            v = std::max(std::exp(v - top), 1e-12);
        // |x-a|^2 - r^2 ~ 2r(|x-a| - r): dividing by r^2 turns the squared-range fit into a range fit
        q.weights.resize(m);
        for (std::size_t j = 0; j < m; ++j)
            q.weights[j] = w[j] / std::max(p.ranges_m[j] * p.ranges_m[j], 1e-6);
        SolverResult next;
        try
        {
            next = bisection_robust_localize(q);
        }
        catch (const DegenerateGeometryError &)
        {
            break;
        }
        const double move = distance_px(next.estimate, cur.estimate);
        cur = next;
        res.iterations = it;
        const bool at_floor = s <= kernel_sigma_m;
        s = std::max(kernel_sigma_m, 0.5 * s);
        if (at_floor && move < tol)
        {
            res.converged = true;
            break;
        }
    }
    res.estimate = cur.estimate;
    res.residual = range_rms_residual(p, res.estimate);
    residuals(cur.estimate);
    res.weights = w;
    return res;
}

// Default kernel bandwidth: max(sigma, 1 m).
inline double default_kernel_sigma(const RangingProblem &p) { return std::max(p.sigma_m, 1.0); }

inline SolverResult correntropy_localize(const RangingProblem &p)
{
    return correntropy_localize(p, default_kernel_sigma(p));
}

} // namespace radioloc
