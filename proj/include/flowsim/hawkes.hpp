#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowsim/events.hpp"
#include "flowsim/gmm.hpp"
#include "flowsim/rng.hpp"

namespace flowsim {

// Excitation kernel phi(u) = sum_e alphas[e] * exp(-betas[e] * u), u >= 0.
struct ExpKernel {
    std::vector<double> alphas;  // >= 0
    std::vector<double> betas;   // > 0

    int terms() const { return static_cast<int>(alphas.size()); }
    double branching() const;  // integral of phi = sum alpha/beta
};

// Per-dimension order marks: exponential share volume, mixture depth.
struct HawkesMarks {
    double volume_rate = 0.01;
    Gmm depth;
};

// Multivariate Hawkes process with exponential kernels. Canonical event
// dimensions for order flow: 0 buy-add, 1 buy-cancel, 2 sell-add,
// 3 sell-cancel (see hawkes_dim).
struct HawkesParams {
    std::vector<double> mu;           // baseline intensities, >= 0
    std::vector<ExpKernel> kernels;   // dims*dims, row-major [target][source]
    std::vector<HawkesMarks> marks;   // empty (pure temporal) or dims entries

    int dims() const { return static_cast<int>(mu.size()); }
    const ExpKernel& kernel(int target, int source) const;
    ExpKernel& kernel(int target, int source);
    // Perron root of the branching matrix Gamma_ij = integral of kernel(i,j).
    double spectral_radius() const;
    // Shape/positivity checks; throws Numeric NonStationaryParams when the
    // spectral radius is >= 1.
    void validate() const;
};

int hawkes_dim(Action action, Side side);
Action hawkes_action(int dim);
Side hawkes_side(int dim);

struct TimedPoint {
    double time = 0.0;
    int dim = 0;
};

// Exact recursive intensity bookkeeping: O(dims^2 * terms) per transition,
// independent of history length.
class HawkesState {
public:
    explicit HawkesState(const HawkesParams& params);

    void advance(double t);     // decay to t >= time()
    void add_event(int dim);    // at current time
    double intensity(int target) const;
    double total_intensity() const;
    void per_dim_intensity(std::vector<double>& out) const;
    double time() const { return time_; }
    void reset();

private:
    const HawkesParams* params_;
    double time_ = 0.0;
    std::vector<double> s_;          // S_{ije}: decayed event counts per kernel term
    std::vector<std::size_t> off_;   // kernel offset into s_
    friend double hawkes_loglik(const HawkesParams&, std::span<const TimedPoint>, double);
};

// Ogata modified thinning. Stops at the horizon or after max_events.
std::vector<TimedPoint> simulate_hawkes_times(const HawkesParams& params, double horizon,
                                              std::size_t max_events, Rng& rng);

// Temporal simulation plus marks, materialized as an event stream anchored
// at meta.opening_price. Throws Data EmptyStream if nothing arrives and Data
// MissingMarks when params carry no mark distributions.
EventStream simulate_hawkes(const HawkesParams& params, const AssetMeta& meta, Scope scope, double horizon,
                            std::size_t max_events, std::uint64_t seed);

// Exact log-likelihood on [0, horizon].
double hawkes_loglik(const HawkesParams& params, std::span<const TimedPoint> points, double horizon);

// Expected stationary intensity per dim: solves Lambda = mu + Gamma*Lambda.
std::vector<double> stationary_intensity(const HawkesParams& params);

struct HawkesSequence {
    std::vector<TimedPoint> points;
    double horizon = 0.0;
};

struct HawkesFitConfig {
    int dims = 4;
    int terms = 1;
    bool diagonal_only = false;       // zero cross-excitation
    int max_iterations = 400;
    double tolerance = 1e-9;          // relative log-likelihood gain
    int restarts = 3;
    std::uint64_t seed = 11;
    double stationary_cap = 0.98;     // projection bound on the spectral radius
};

struct HawkesFitResult {
    HawkesParams params;
    double loglik = 0.0;
    bool converged = false;
    int iterations = 0;
};

// Maximum likelihood in log-parameter space with backtracking gradient
// ascent, seeded restarts and a stationarity projection. Reports the best
// iterate even when not converged.
HawkesFitResult fit_hawkes(const std::vector<HawkesSequence>& data, const HawkesFitConfig& cfg);

struct HawkesMarkFitConfig {
    double midprice_halflife = 2.0;
    int min_per_dim = 100;
    GmmFitConfig gmm;
};

// Full order-flow fit: temporal parameters over (action, side) dimensions
// plus per-dimension mark distributions.
HawkesFitResult fit_hawkes_streams(const std::vector<EventStream>& corpus, const HawkesFitConfig& cfg,
                                   const HawkesMarkFitConfig& marks);

inline constexpr const char* kHawkesParamsHeader = "hawkes-params v1";
void save_hawkes(const HawkesParams& params, const std::string& path);
HawkesParams load_hawkes(const std::string& path);

}  // namespace flowsim
