#include "flowsim/midprice.hpp"

#include <cmath>

#include "flowsim/error.hpp"
#include "flowsim/text_io.hpp"

namespace flowsim {

EwVwap::EwVwap(double halflife_seconds) : halflife_(halflife_seconds) {
    if (!(halflife_seconds > 0.0) || !std::isfinite(halflife_seconds))
        raise_usage("NonPositiveHalflife", "halflife must be finite and positive, got " + format_g17(halflife_seconds));
}

void EwVwap::update(double exec_price, double volume, double time) {
    if (!(exec_price > 0.0) || !std::isfinite(exec_price))
        raise_data("MalformedRow", "executed price must be finite and positive");
    if (!(volume > 0.0) || !std::isfinite(volume))
        raise_data("MalformedRow", "executed volume must be finite and positive");
    if (!std::isfinite(time)) raise_data("MalformedRow", "observation time must be finite");
    if (has_obs_) {
        if (time < last_time_)
            raise_data("TimeRegression",
                       "observation at " + format_g17(time) + " precedes last update at " + format_g17(last_time_));
        const double decay = std::exp2(-(time - last_time_) / halflife_);
        num_ = exec_price * volume + decay * num_;
        den_ = volume + decay * den_;
    } else {
        num_ = exec_price * volume;
        den_ = volume;
        has_obs_ = true;
    }
    last_time_ = time;
}

double EwVwap::estimate() const {
    if (!has_obs_) raise_data("NoObservations", "midprice estimate requested before any observation");
    return num_ / den_;
}

}  // namespace flowsim
