#pragma once

/// Finite-difference verification of the four training objectives against
/// the analytic gradients, over every parameter of a small built-in
/// fixture (2 images, 8 proposals each, 3 classes). The step plan is
/// frozen once, so each loss is a smooth function of the parameters.

#include <iosfwd>
#include <string>
#include <vector>

namespace wsod {

struct GradCheckLoss {
    std::string name;
    double max_err = 0.0;  // worst relative error (absolute for tiny pairs)
    long entries_checked = 0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckLoss> per_loss;
    double tolerance = 0.0;
    double step = 0.0;
    bool all_pass = false;
};

/// Central differences with the given step at float64. `progress`, when
/// set, receives one line per parameter tensor.
GradCheckReport run_gradcheck(double tolerance = 1e-4, double step = 1e-5,
                              std::ostream* progress = nullptr);

}  // namespace wsod
