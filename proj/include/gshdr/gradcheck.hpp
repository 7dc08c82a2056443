#pragma once

#include <cstdint>
#include <iosfwd>

#include "gshdr/common.hpp"

namespace gshdr {

// Finite-difference verification of the end-to-end gradient (forward model
// plus composite loss) on the tiny configuration in double precision.
// Default mode probes a few sampled elements of every parameter tensor and
// one global random direction; exhaustive mode probes every element.
struct GradCheckOptions {
    std::uint64_t seed = 0;
    i64 samples_per_tensor = 2;
    bool exhaustive = false;
    double step = 1e-5;       // central-difference half step
    double tolerance = 1e-3;  // relative error bound
    double floor_abs = 1e-6;  // absolute deviations below this always pass
    bool quiet = false;
};

struct GradCheckReport {
    double max_rel = 0;        // worst per-element relative error above the floor
    double max_abs = 0;        // worst absolute deviation seen at all
    std::string worst_name;    // tensor owning the worst element
    double directional_rel = 0;
    i64 probes = 0;
    bool pass = false;
};

GradCheckReport gradcheck_model(const GradCheckOptions& opts, std::ostream& out);

}  // namespace gshdr
