#pragma once

#include "mmdp/types.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <optional>
#include <string>
#include <vector>

namespace mmdp {

inline double expit(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Pr(A=1|s) = expit(intercept + weights . s) for binary actions.
struct LogisticForm {
    double intercept = 0.0;
    std::vector<double> weights;
};

/// Stationary map from a state to a probability vector over {0, ..., K-1}.
class Policy {
public:
    using Fn = std::function<ActionProbs(const Point&)>;

    Policy() = default;
    Policy(std::string name, int action_count, Fn fn, std::optional<LogisticForm> form = std::nullopt)
        : name_(std::move(name)), action_count_(action_count), fn_(std::move(fn)), form_(std::move(form)) {
        if (action_count_ < 1 || action_count_ > kMaxActions)
            throw std::invalid_argument("Policy: action count out of range");
    }

    ActionProbs probs(const Point& s) const { return fn_(s); }
    double prob(const Point& s, int a) const { return fn_(s)(a); }

    int action_count() const { return action_count_; }
    const std::string& name() const { return name_; }
    const std::optional<LogisticForm>& logistic_form() const { return form_; }
    explicit operator bool() const { return static_cast<bool>(fn_); }

    static Policy deterministic(std::string name, int action_count, int action) {
        ActionProbs p = ActionProbs::Zero(action_count);
        p(action) = 1.0;
        return constant(std::move(name), p);
    }

    static Policy constant(std::string name, const ActionProbs& probs) {
        const int k = static_cast<int>(probs.size());
        return Policy(std::move(name), k, [probs](const Point&) { return probs; });
    }

    static Policy logistic(std::string name, LogisticForm form) {
        auto fn = [form](const Point& s) {
            double z = form.intercept;
            for (std::size_t j = 0; j < form.weights.size(); ++j)
                z += form.weights[j] * s(static_cast<Eigen::Index>(j));
            const double p1 = expit(z);
            ActionProbs p(2);
            p << 1.0 - p1, p1;
            return p;
        };
        return Policy(std::move(name), 2, fn, form);
    }

private:
    std::string name_;
    int action_count_ = 0;
    Fn fn_;
    std::optional<LogisticForm> form_;
};

}  // namespace mmdp
