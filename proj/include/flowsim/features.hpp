#pragma once

#include <cstdint>
#include <vector>

#include "flowsim/events.hpp"
#include "flowsim/midprice.hpp"

namespace flowsim {

// Scale-invariant per-event features. Depth and price level are ratios to
// the prevailing midprice estimate / opening price; volume and interarrival
// are log1p-compressed downstream by the tokenizer.
struct FeatureVector {
    double interarrival = 0.0;     // dt seconds, 0 for the first event
    double log_volume = 0.0;       // log(1 + shares)
    double price_depth = 0.0;      // (order_price - mid)/mid; 0 for market orders
    double rel_price_level = 0.0;  // (mid - p0)/p0
    Action action = Action::Add;
    Side side = Side::Buy;
    std::int64_t raw_volume = 0;
};

// State the featurizer reads: opening price, previous event time (NaN before
// the first event) and the midprice estimate *before* the current event.
struct SessionState {
    double opening_price = 0.0;
    double prev_timestamp = 0.0;  // NaN => current event is the first
    double midprice = 0.0;        // pre-event EW-VWAP estimate
};

// Pure function of (event, session state). Throws Data NegativeInterarrival
// if the event precedes prev_timestamp.
FeatureVector featurize(const TradeEvent& event, const SessionState& session);

// Streaming driver: seeds the estimator with (p0, volume 1, time 0),
// featurizes each event against the pre-event estimate, then folds priced
// add events into the estimator.
class FeaturePipeline {
public:
    FeaturePipeline(const AssetMeta& meta, double halflife_seconds);

    FeatureVector push(const TradeEvent& event);
    const EwVwap& midprice() const { return midprice_; }
    double prev_timestamp() const { return prev_timestamp_; }

private:
    double opening_price_;
    double prev_timestamp_;  // NaN before first event
    EwVwap midprice_;
};

std::vector<FeatureVector> featurize_stream(const EventStream& stream, double halflife_seconds);

}  // namespace flowsim
