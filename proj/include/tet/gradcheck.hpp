#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tet/model.hpp"

// Central-difference gradient checking over every model parameter. Runs in
// the high-precision instantiation; the loss closure must be a pure function
// of the current parameter values.

namespace tet {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

template <class T>
GradCheckReport gradient_check(Model<T>& model, ModelGrads<T>& analytic,
                               const std::function<T()>& loss_fn, double step = 1e-5) {
    std::vector<std::size_t> sizes;
    const auto pairs = param_grad_pairs(model, analytic, sizes);

    // names in the same order as param_grad_pairs
    std::vector<std::string> names;
    for (const auto& e : collect_param_entries(model)) names.push_back(e.name);

    GradCheckReport rep;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        T* w = pairs[p].first;
        const T* g = pairs[p].second;
        for (std::size_t k = 0; k < sizes[p]; ++k) {
            const T saved = w[k];
            w[k] = saved + static_cast<T>(step);
            const double up = static_cast<double>(loss_fn());
            w[k] = saved - static_cast<T>(step);
            const double down = static_cast<double>(loss_fn());
            w[k] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double rel =
                std::abs(static_cast<double>(g[k]) - fd) / std::max(std::abs(fd), 1e-8);
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = p < names.size() ? names[p] : "param" + std::to_string(p);
                rep.worst_index = k;
            }
            ++rep.checked;
        }
    }
    return rep;
}

} // namespace tet
