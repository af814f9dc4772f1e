#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsim/events.hpp"
#include "flowsim/gmm.hpp"
#include "flowsim/rng.hpp"

namespace flowsim {

// Zero-intelligence order flow: independent categorical action/side,
// exponential interarrivals and volumes, Gaussian-mixture depth. No state,
// no feedback.
struct ZiParams {
    double p_buy = 0.5;        // P(side = buy)
    double p_add = 0.5;        // P(action = add)
    double event_rate = 1.0;   // events per second
    double volume_rate = 0.01; // 1 / mean shares
    Gmm depth;
};

struct ZiFitConfig {
    double midprice_halflife = 2.0;
    int min_per_category = 100;  // adds, cancels, buys, sells each
    GmmFitConfig gmm;
    std::uint64_t seed = 7;
};

// Maximum-likelihood marginals over a corpus. Throws Data InsufficientData
// when any action/side category has fewer than min_per_category events.
ZiParams fit_zi(const std::vector<EventStream>& corpus, const ZiFitConfig& cfg = {});

// Draw order is fixed (dt, action, side, depth, volume) so seeded streams
// are stable. Generated depth is clamped above -99.99% so resolved prices
// stay positive.
OrderIntent zi_next(const ZiParams& params, Rng& rng);

EventStream sample_zi(const ZiParams& params, const AssetMeta& meta, Scope scope, std::size_t n_events,
                      std::uint64_t seed);

inline constexpr const char* kZiParamsHeader = "zi-params v1";
void save_zi(const ZiParams& params, const std::string& path);
ZiParams load_zi(const std::string& path);

}  // namespace flowsim
