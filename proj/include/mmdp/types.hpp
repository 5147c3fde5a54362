#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mmdp {

inline constexpr int kMaxPointDim = 4;
inline constexpr int kMaxActions = 8;

/// State or mediator value. Binary coordinates are stored as 0/1 reals so that
/// finite and continuous spaces share one feature code path.
using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxPointDim, 1>;

/// Probability vector over the finite action set.
using ActionProbs = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxActions, 1>;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline Point make_point(std::initializer_list<double> values) {
    Point p(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) p(i++) = v;
    return p;
}

inline Point scalar_point(double v) {
    Point p(1);
    p(0) = v;
    return p;
}

enum class SpaceKind { FiniteBinary, Continuous };

inline std::string to_string(SpaceKind k) {
    return k == SpaceKind::FiniteBinary ? "finite_binary" : "continuous";
}

inline SpaceKind space_kind_from_string(const std::string& s) {
    if (s == "finite_binary") return SpaceKind::FiniteBinary;
    if (s == "continuous") return SpaceKind::Continuous;
    throw std::invalid_argument("unknown space kind: " + s);
}

/// One observed (S, A, M, R, S') record.
struct TransitionTuple {
    Point s;
    int a = 0;
    Point m;
    double r = 0.0;
    Point s_next;
};

struct Trajectory {
    std::int64_t id = 0;
    std::uint64_t seed = 0;
    std::vector<TransitionTuple> steps;

    std::size_t size() const { return steps.size(); }
};

/// Concatenate trajectories in order.
inline std::vector<TransitionTuple> pool_tuples(const std::vector<Trajectory>& trajectories) {
    if (trajectories.empty()) throw std::invalid_argument("pool_tuples: no trajectories");
    std::size_t total = 0;
    for (const auto& t : trajectories) total += t.size();
    std::vector<TransitionTuple> out;
    out.reserve(total);
    for (const auto& t : trajectories) out.insert(out.end(), t.steps.begin(), t.steps.end());
    return out;
}

/// Enumerate all binary vectors of the given dimension, in lexicographic
/// order with the first coordinate most significant.
inline std::vector<Point> enumerate_binary(int dim) {
    std::vector<Point> out;
    const int n = 1 << dim;
    out.reserve(static_cast<std::size_t>(n));
    for (int code = 0; code < n; ++code) {
        Point p(dim);
        for (int j = 0; j < dim; ++j) p(j) = static_cast<double>((code >> (dim - 1 - j)) & 1);
        out.push_back(p);
    }
    return out;
}

/// Index of a binary vector in enumerate_binary order.
inline int binary_index(const Point& p) {
    int code = 0;
    for (Eigen::Index j = 0; j < p.size(); ++j) code = (code << 1) | (p(j) > 0.5 ? 1 : 0);
    return code;
}

}  // namespace mmdp
