#pragma once

#include "mmdp/rng.hpp"
#include "mmdp/types.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmdp {

/// Map from a point to a fixed-length real feature vector.
class FeatureMap {
public:
    virtual ~FeatureMap() = default;
    virtual int dim() const = 0;
    virtual int input_dim() const = 0;
    virtual void eval(const Point& x, double* out) const = 0;
    virtual std::string describe() const = 0;

    Vector operator()(const Point& x) const {
        Vector v(dim());
        eval(x, v.data());
        return v;
    }
};

using FeatureMapPtr = std::shared_ptr<const FeatureMap>;

/// Indicator of the binary cell of x: saturated features on a finite space.
class OneHotFeatures final : public FeatureMap {
public:
    explicit OneHotFeatures(int input_dim) : input_dim_(input_dim) {
        if (input_dim < 1 || input_dim > kMaxPointDim) throw std::invalid_argument("OneHotFeatures: bad dimension");
    }
    int dim() const override { return 1 << input_dim_; }
    int input_dim() const override { return input_dim_; }
    void eval(const Point& x, double* out) const override {
        std::fill(out, out + dim(), 0.0);
        out[binary_index(x)] = 1.0;
    }
    std::string describe() const override { return "one-hot(" + std::to_string(dim()) + ")"; }

private:
    int input_dim_;
};

/// Intercept plus random Fourier features sqrt(2/D) cos(w.x / h + b) for a
/// Gaussian kernel of bandwidth h.
class RandomFourierFeatures final : public FeatureMap {
public:
    RandomFourierFeatures(int input_dim, int total_dim, double bandwidth, std::uint64_t seed)
        : input_dim_(input_dim), bandwidth_(bandwidth) {
        if (total_dim < 2) throw std::invalid_argument("RandomFourierFeatures: need at least 2 features");
        if (!(bandwidth > 0.0)) throw std::invalid_argument("RandomFourierFeatures: bandwidth must be > 0");
        const int d = total_dim - 1;
        W_.resize(d, input_dim);
        b_.resize(d);
        Rng rng(seed);
        for (int j = 0; j < d; ++j) {
            for (int k = 0; k < input_dim; ++k) W_(j, k) = draw_normal(rng);
            b_(j) = 2.0 * std::numbers::pi * rng.uniform();
        }
        scale_ = std::sqrt(2.0 / d);
    }

    /// Bandwidth from the median pairwise distance of (at most 500) sample points.
    static double median_bandwidth(const std::vector<Point>& sample) {
        const std::size_t n = std::min<std::size_t>(sample.size(), 500);
        std::vector<double> d;
        d.reserve(n * (n - 1) / 2);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) d.push_back((sample[i] - sample[j]).norm());
        if (d.empty()) return 1.0;
        auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
        std::nth_element(d.begin(), mid, d.end());
        return *mid > 0.0 ? *mid : 1.0;
    }

    int dim() const override { return static_cast<int>(b_.size()) + 1; }
    int input_dim() const override { return input_dim_; }
    double bandwidth() const { return bandwidth_; }
    void eval(const Point& x, double* out) const override {
        out[0] = 1.0;
        const Vector z = (W_ * x.head(input_dim_)) / bandwidth_ + b_;
        for (Eigen::Index j = 0; j < z.size(); ++j) out[j + 1] = scale_ * std::cos(z(j));
    }
    std::string describe() const override { return "rff(" + std::to_string(dim()) + ")"; }

private:
    int input_dim_;
    double bandwidth_;
    double scale_ = 1.0;
    Matrix W_;
    Vector b_;
};

/// Additive cubic B-spline sieve: intercept plus, per coordinate, a clamped
/// cubic B-spline basis with interior knots at empirical quantiles (one basis
/// function dropped per coordinate since they sum to one). Inputs outside the
/// fitted range are clamped to it.
class SplineFeatures final : public FeatureMap {
public:
    SplineFeatures(const std::vector<Point>& sample, int per_coordinate) {
        if (sample.empty()) throw std::invalid_argument("SplineFeatures: empty sample");
        if (per_coordinate < 3) throw std::invalid_argument("SplineFeatures: need >= 3 functions per coordinate");
        input_dim_ = static_cast<int>(sample.front().size());
        const int interior = per_coordinate - 3;
        std::vector<double> col(sample.size());
        for (int j = 0; j < input_dim_; ++j) {
            for (std::size_t i = 0; i < sample.size(); ++i) col[i] = sample[i](j);
            std::sort(col.begin(), col.end());
            const double lo = col.front();
            double hi = col.back();
            if (hi <= lo) hi = lo + 1.0;
            std::vector<double> knots(4, lo);
            for (int q = 1; q <= interior; ++q) {
                const double pos = static_cast<double>(q) / (interior + 1) * static_cast<double>(col.size() - 1);
                double k = col[static_cast<std::size_t>(pos)];
                k = std::clamp(k, lo, hi);
                if (k <= knots.back()) k = std::nextafter(knots.back(), hi);  // keep knots strictly increasing
                knots.push_back(k);
            }
            for (int r = 0; r < 4; ++r) knots.push_back(hi);
            knots_.push_back(std::move(knots));
            lo_.push_back(lo);
            hi_.push_back(hi);
        }
        per_ = per_coordinate;
    }

    int dim() const override { return 1 + input_dim_ * per_; }
    int input_dim() const override { return input_dim_; }
    void eval(const Point& x, double* out) const override {
        out[0] = 1.0;
        double basis[64];
        for (int j = 0; j < input_dim_; ++j) {
            const double v = std::clamp(x(j), lo_[static_cast<std::size_t>(j)], hi_[static_cast<std::size_t>(j)]);
            const int nb = bspline_basis(knots_[static_cast<std::size_t>(j)], v, basis);
            // drop the first basis function of each coordinate
            for (int b = 1; b < nb; ++b) out[1 + j * per_ + (b - 1)] = basis[b];
        }
    }
    std::string describe() const override { return "spline(" + std::to_string(dim()) + ")"; }

    /// Number of basis functions per coordinate implied by a total sieve size.
    static int per_coordinate_for(int total, int input_dim) {
        return std::max(3, (total - 1) / std::max(1, input_dim));
    }

private:
    // Cubic B-spline values at v for a clamped knot vector; returns the count.
    static int bspline_basis(const std::vector<double>& t, double v, double* out) {
        const int n = static_cast<int>(t.size()) - 4;  // number of basis functions
        if (n + 4 > 68) throw std::invalid_argument("SplineFeatures: too many knots");
        // locate span
        int span = 3;
        while (span < n - 1 && v >= t[static_cast<std::size_t>(span + 1)]) ++span;
        double N[4] = {1.0, 0.0, 0.0, 0.0};
        double left[4], right[4];
        for (int j = 1; j <= 3; ++j) {
            left[j] = v - t[static_cast<std::size_t>(span + 1 - j)];
            right[j] = t[static_cast<std::size_t>(span + j)] - v;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                const double denom = right[r + 1] + left[j - r];
                const double temp = denom != 0.0 ? N[r] / denom : 0.0;
                N[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            N[j] = saved;
        }
        std::fill(out, out + n, 0.0);
        for (int r = 0; r <= 3; ++r) out[span - 3 + r] = N[r];
        return n;
    }

    int input_dim_ = 0;
    int per_ = 0;
    std::vector<std::vector<double>> knots_;
    std::vector<double> lo_, hi_;
};

/// Concatenate state and mediator into one point (the domain of Q and r).
inline Point join_points(const Point& s, const Point& m) {
    Point x(s.size() + m.size());
    x.head(s.size()) = s;
    x.tail(m.size()) = m;
    return x;
}

}  // namespace mmdp
