#pragma once

#include <span>
#include <vector>

#include "flowsim/rng.hpp"
#include "flowsim/text_io.hpp"

namespace flowsim {

// One-dimensional Gaussian mixture.
struct Gmm {
    std::vector<double> weights;    // sum to 1
    std::vector<double> means;
    std::vector<double> variances;  // > 0

    int components() const { return static_cast<int>(weights.size()); }
    double sample(Rng& rng) const;
    double log_pdf(double x) const;
    double mean() const;
};

struct GmmFitConfig {
    int components = 3;
    int restarts = 8;
    int max_iterations = 500;
    double tolerance = 1e-8;  // mean per-sample log-likelihood gain
};

// EM fit with seeded restarts; keeps the best-likelihood solution. Throws
// Data InsufficientData when the sample is too small and Numeric
// EmDegenerate when every restart collapses (e.g. near-constant data).
Gmm fit_gmm(std::span<const double> data, const GmmFitConfig& cfg, Rng& rng);

// parameter-file plumbing shared by the generators
void gmm_to_entries(const Gmm& g, KvSection& section);
Gmm gmm_from_section(const KvSection& section);

}  // namespace flowsim
