#include "flowsim/zi.hpp"

#include <cmath>

#include "flowsim/error.hpp"
#include "flowsim/features.hpp"
#include "flowsim/text_io.hpp"

namespace flowsim {

ZiParams fit_zi(const std::vector<EventStream>& corpus, const ZiFitConfig& cfg) {
    std::size_t buys = 0, sells = 0, adds = 0, cancels = 0;
    std::vector<double> interarrivals, depths;
    double volume_sum = 0.0;
    std::size_t volume_n = 0;
    for (const EventStream& stream : corpus) {
        const std::vector<FeatureVector> fvs = featurize_stream(stream, cfg.midprice_halflife);
        for (std::size_t i = 0; i < fvs.size(); ++i) {
            const FeatureVector& fv = fvs[i];
            (fv.side == Side::Buy ? buys : sells) += 1;
            (fv.action == Action::Add ? adds : cancels) += 1;
            if (i > 0) interarrivals.push_back(fv.interarrival);
            if (stream.events[i].has_price()) depths.push_back(fv.price_depth);
            volume_sum += static_cast<double>(fv.raw_volume);
            ++volume_n;
        }
    }
    const auto need = static_cast<std::size_t>(cfg.min_per_category);
    if (buys < need || sells < need || adds < need || cancels < need)
        raise_data("InsufficientData",
                   "each action/side category needs at least " + std::to_string(need) + " events (got " +
                       std::to_string(adds) + " adds, " + std::to_string(cancels) + " cancels, " +
                       std::to_string(buys) + " buys, " + std::to_string(sells) + " sells)");

    ZiParams params;
    params.p_buy = static_cast<double>(buys) / static_cast<double>(buys + sells);
    params.p_add = static_cast<double>(adds) / static_cast<double>(adds + cancels);

    double dt_sum = 0.0;
    for (double dt : interarrivals) dt_sum += dt;
    if (!(dt_sum > 0.0)) raise_data("DegenerateFeature", "all interarrival times are zero");
    params.event_rate = static_cast<double>(interarrivals.size()) / dt_sum;

    if (!(volume_sum > 0.0)) raise_data("DegenerateFeature", "corpus volume is zero");
    params.volume_rate = static_cast<double>(volume_n) / volume_sum;

    if (depths.size() < 2) raise_data("InsufficientData", "too few priced events to fit the depth mixture");
    Rng rng(cfg.seed);
    params.depth = fit_gmm(depths, cfg.gmm, rng);
    return params;
}

OrderIntent zi_next(const ZiParams& params, Rng& rng) {
    OrderIntent intent;
    intent.dt_seconds = rng.exponential(params.event_rate);
    intent.action = rng.bernoulli(params.p_add) ? Action::Add : Action::Cancel;
    intent.side = rng.bernoulli(params.p_buy) ? Side::Buy : Side::Sell;
    intent.depth_ratio = std::max(params.depth.sample(rng), -0.9999);
    intent.volume = std::max<std::int64_t>(1, std::llround(rng.exponential(params.volume_rate)));
    intent.is_market_order = false;
    return intent;
}

EventStream sample_zi(const ZiParams& params, const AssetMeta& meta, Scope scope, std::size_t n_events,
                      std::uint64_t seed) {
    if (n_events == 0) raise_usage("HorizonZero", "cannot sample an empty stream");
    Rng rng(seed);
    EventStream stream;
    stream.meta = meta;
    stream.scope = scope;
    stream.events.reserve(n_events);
    double t = 0.0;
    for (std::size_t i = 0; i < n_events; ++i) {
        const OrderIntent intent = zi_next(params, rng);
        t += intent.dt_seconds;
        stream.events.push_back(to_trade_event(intent, t, meta.opening_price));
    }
    validate_stream(stream);
    return stream;
}

void save_zi(const ZiParams& params, const std::string& path) {
    KvFile file;
    file.header = kZiParamsHeader;
    KvSection cat{"categorical", {}};
    cat.entries.emplace_back("p_buy", format_g17(params.p_buy));
    cat.entries.emplace_back("p_add", format_g17(params.p_add));
    file.sections.push_back(std::move(cat));
    KvSection rates{"rates", {}};
    rates.entries.emplace_back("event_rate", format_g17(params.event_rate));
    rates.entries.emplace_back("volume_rate", format_g17(params.volume_rate));
    file.sections.push_back(std::move(rates));
    KvSection depth{"depth_gmm", {}};
    gmm_to_entries(params.depth, depth);
    file.sections.push_back(std::move(depth));
    file.save(path);
}

ZiParams load_zi(const std::string& path) {
    KvFile file = KvFile::load(path);
    if (file.header != kZiParamsHeader)
        raise_data("ParamsVersionMismatch",
                   path + ": expected header '" + std::string(kZiParamsHeader) + "', got '" + file.header + "'");
    ZiParams params;
    const KvSection& cat = file.require("categorical");
    params.p_buy = cat.require_double("p_buy");
    params.p_add = cat.require_double("p_add");
    const KvSection& rates = file.require("rates");
    params.event_rate = rates.require_double("event_rate");
    params.volume_rate = rates.require_double("volume_rate");
    params.depth = gmm_from_section(file.require("depth_gmm"));
    if (!(params.p_buy >= 0.0 && params.p_buy <= 1.0) || !(params.p_add >= 0.0 && params.p_add <= 1.0))
        raise_data("CorruptParams", path + ": probabilities outside [0, 1]");
    if (!(params.event_rate > 0.0) || !(params.volume_rate > 0.0))
        raise_data("CorruptParams", path + ": rates must be positive");
    return params;
}

}  // namespace flowsim
