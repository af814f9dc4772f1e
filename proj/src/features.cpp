#include "flowsim/features.hpp"

#include <cmath>
#include <limits>

#include "flowsim/error.hpp"
#include "flowsim/text_io.hpp"

namespace flowsim {

FeatureVector featurize(const TradeEvent& event, const SessionState& session) {
    FeatureVector fv;
    if (std::isnan(session.prev_timestamp)) {
        fv.interarrival = 0.0;
    } else {
        fv.interarrival = event.timestamp - session.prev_timestamp;
        if (fv.interarrival < 0.0)
            raise_data("NegativeInterarrival", "event at " + format_g17(event.timestamp) +
                                                   " precedes previous event at " +
                                                   format_g17(session.prev_timestamp));
    }
    fv.log_volume = std::log1p(static_cast<double>(event.volume));
    fv.raw_volume = event.volume;
    fv.price_depth =
        event.has_price() ? (event.order_price - session.midprice) / session.midprice : 0.0;
    fv.rel_price_level = (session.midprice - session.opening_price) / session.opening_price;
    fv.action = event.action;
    fv.side = event.side;
    return fv;
}

FeaturePipeline::FeaturePipeline(const AssetMeta& meta, double halflife_seconds)
    : opening_price_(meta.opening_price),
      prev_timestamp_(std::numeric_limits<double>::quiet_NaN()),
      midprice_(halflife_seconds) {
    if (!(meta.opening_price > 0.0) || !std::isfinite(meta.opening_price))
        raise_data("MalformedRow", "opening price must be finite and positive");
    midprice_.update(meta.opening_price, 1.0, 0.0);
}

FeatureVector FeaturePipeline::push(const TradeEvent& event) {
    SessionState state{opening_price_, prev_timestamp_, midprice_.estimate()};
    FeatureVector fv = featurize(event, state);
    prev_timestamp_ = event.timestamp;
    if (event.action == Action::Add && event.has_price())
        midprice_.update(event.order_price, static_cast<double>(event.volume), event.timestamp);
    return fv;
}

std::vector<FeatureVector> featurize_stream(const EventStream& stream, double halflife_seconds) {
    validate_stream(stream);
    FeaturePipeline pipeline(stream.meta, halflife_seconds);
    std::vector<FeatureVector> out;
    out.reserve(stream.events.size());
    for (const TradeEvent& ev : stream.events) out.push_back(pipeline.push(ev));
    return out;
}

}  // namespace flowsim
