#pragma once

namespace flowsim {

// Exponentially-weighted VWAP midprice proxy.
//
// Time-adjusted accumulator form: an observation at time t with executed
// price p and volume v updates
//   N <- p*v + 2^(-(t - t_prev)/halflife) * N
//   D <-   v + 2^(-(t - t_prev)/halflife) * D
// and the estimate is N/D. Each past observation j therefore carries weight
// v_j * 2^(-(t_now - t_j)/halflife): as halflife -> inf the estimate tends to
// the plain VWAP of the window, and a huge-volume print dominates the
// estimate regardless of recency.
class EwVwap {
public:
    explicit EwVwap(double halflife_seconds);  // throws Usage NonPositiveHalflife

    // throws Data TimeRegression if time < last update time, Data
    // MalformedRow on non-positive/non-finite price or volume.
    void update(double exec_price, double volume, double time);

    bool has_estimate() const { return has_obs_; }
    double estimate() const;  // throws Data NoObservations before first update

    double halflife() const { return halflife_; }
    double last_update_time() const { return last_time_; }
    double numerator() const { return num_; }
    double denominator() const { return den_; }

private:
    double halflife_;
    double num_ = 0.0;
    double den_ = 0.0;
    double last_time_ = 0.0;
    bool has_obs_ = false;
};

}  // namespace flowsim
