#pragma once

// Finite-difference gradient oracle. Independent of the tape's backward pass:
// it only re-runs the forward closure with perturbed parameters.

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "camef/params.hpp"

namespace gradcheck {

using LossFn = std::function<double(const camef::ParameterSet&)>;

struct Report {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
};

// Central differences with the given step. Relative error uses the usual
// |a-n| / max(1, |a|, |n|) denominator so near-zero gradients do not blow up.
inline Report compare(const LossFn& f, camef::ParameterSet& ps,
                      const std::map<std::string, camef::Tensor>& analytic,
                      double step = 1e-4) {
    Report rep;
    for (const auto& [name, grad] : analytic) {
        camef::Tensor& p = ps.get(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            double keep = p[i];
            p[i] = keep + step;
            double up = f(ps);
            p[i] = keep - step;
            double down = f(ps);
            p[i] = keep;
            double numeric = (up - down) / (2.0 * step);
            double a = grad[i];
            double rel = std::fabs(a - numeric) /
                         std::max({1.0, std::fabs(a), std::fabs(numeric)});
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = name;
                rep.worst_index = i;
            }
        }
    }
    return rep;
}

}  // namespace gradcheck
