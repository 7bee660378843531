#pragma once

// Central finite-difference gradient checking shared by the op tests and the
// end-to-end model checks. The differencing path never touches the tape, so it
// stays independent of the adjoint code it validates.

#include <cmath>
#include <functional>
#include <vector>

#include "cupid/tensor.hpp"

namespace fdcheck {

// f evaluates the scalar objective from current tensor contents (no tape).
using ScalarFn = std::function<double()>;

struct Result {
    double max_rel_err = 0.0;
    int64_t worst_index = -1;
    double analytic = 0.0, numeric = 0.0;
};

inline double rel_err(double a, double b) {
    const double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
    return std::fabs(a - b) / scale;
}

// Compares t.grad() against central differences of f w.r.t. every element of t.
inline Result check_tensor_grad(const ScalarFn& f, cupid::Tensor& t, double h = 1e-5) {
    Result res;
    auto& vals = t.values();
    const auto& grad = t.grad();
    for (size_t i = 0; i < vals.size(); ++i) {
        const cupid::real keep = vals[i];
        vals[i] = keep + static_cast<cupid::real>(h);
        const double fp = f();
        vals[i] = keep - static_cast<cupid::real>(h);
        const double fm = f();
        vals[i] = keep;
        const double numeric = (fp - fm) / (2.0 * h);
        const double analytic = static_cast<double>(grad[i]);
        const double e = rel_err(analytic, numeric);
        if (e > res.max_rel_err) {
            res.max_rel_err = e;
            res.worst_index = static_cast<int64_t>(i);
            res.analytic = analytic;
            res.numeric = numeric;
        }
    }
    return res;
}

}  // namespace fdcheck
