#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "patchgt/errors.hpp"
#include "patchgt/matrix.hpp"

namespace patchgt {

struct GradCheckReport {
    double max_rel_err = 0.0;
    size_t entries = 0;
    std::string worst;  // coordinates of the largest mismatch

    bool ok(double tol = 1e-4) const { return max_rel_err < tol; }
};

// Central-difference check of analytic gradients. f must evaluate the scalar
// function from parameter values alone, building whatever tape it needs
// internally; analytic holds df/dparams at the unperturbed point. The error
// is |fd - an| / max(1, |fd|, |an|): relative for large entries, absolute
// near zero, so dead units are not divided by finite-difference noise.
inline GradCheckReport gradcheck(const std::function<double(const std::vector<Mat>&)>& f,
                                 std::vector<Mat> params,
                                 const std::vector<Mat>& analytic,
                                 double step = 1e-6) {
    if (params.size() != analytic.size())
        throw ContractError("gradcheck: parameter and gradient counts disagree");
    GradCheckReport report;
    for (size_t p = 0; p < params.size(); ++p) {
        if (params[p].rows != analytic[p].rows || params[p].cols != analytic[p].cols)
            throw ContractError("gradcheck: gradient shape disagrees with parameter");
        for (size_t i = 0; i < params[p].a.size(); ++i) {
            const double saved = params[p].a[i];
            params[p].a[i] = saved + step;
            const double up = f(params);
            params[p].a[i] = saved - step;
            const double down = f(params);
            params[p].a[i] = saved;

            const double fd = (up - down) / (2.0 * step);
            const double an = analytic[p].a[i];
            const double rel =
                std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            ++report.entries;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                char buf[96];
                std::snprintf(buf, sizeof buf, "param %zu entry %zu: fd %.10g vs %.10g",
                              p, i, fd, an);
                report.worst = buf;
            }
        }
    }
    return report;
}

}  // namespace patchgt
