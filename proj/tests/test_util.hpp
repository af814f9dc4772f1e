#pragma once

// Shared fixtures and independent reference implementations for the test
// binaries. The reference code is deliberately naive -- direct formula
// transcriptions, linear scans, flat vectors -- so that agreement with the
// optimized library code is evidence rather than tautology.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "flowsim/events.hpp"
#include "flowsim/hawkes.hpp"
#include "flowsim/lob.hpp"
#include "flowsim/rng.hpp"

namespace testutil {

// ---- scratch directories -------------------------------------------------

class TempDir {
public:
    TempDir() {
        char tmpl[] = "/tmp/flowsim-test-XXXXXX";
        if (::mkdtemp(tmpl) == nullptr) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return path_ + "/" + name; }
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

inline bool approx_rel(double a, double b, double rel) {
    return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), 1e-12});
}

// ---- event builders --------------------------------------------------------

inline flowsim::TradeEvent make_limit(double t, flowsim::Side side, double price, std::int64_t volume,
                                      flowsim::Action action = flowsim::Action::Add) {
    flowsim::TradeEvent ev;
    ev.timestamp = t;
    ev.action = action;
    ev.side = side;
    ev.order_price = price;
    ev.volume = volume;
    ev.is_market_order = false;
    return ev;
}

inline flowsim::TradeEvent make_market(double t, flowsim::Side side, std::int64_t volume,
                                       flowsim::Action action = flowsim::Action::Add) {
    flowsim::TradeEvent ev;
    ev.timestamp = t;
    ev.action = action;
    ev.side = side;
    ev.order_price = 0.0;
    ev.volume = volume;
    ev.is_market_order = true;
    return ev;
}

// Random but valid stream exercising ties in both time and price, limit and
// market orders, adds and cancels (priced and unpriced).
inline flowsim::EventStream random_stream(flowsim::Rng& rng, std::size_t n_events, double p0 = 100.0,
                                          double adv = 5e5) {
    flowsim::EventStream stream;
    stream.meta.asset_id = "TEST";
    stream.meta.opening_price = p0;
    stream.meta.average_daily_volume = adv;
    stream.scope = flowsim::Scope::Market;

    double t = 0.0;
    double last_price[2] = {p0 * 0.999, p0 * 1.001};
    for (std::size_t i = 0; i < n_events; ++i) {
        if (!rng.bernoulli(0.2)) t += rng.exponential(1.0);  // else exact time tie
        const auto side = rng.bernoulli(0.5) ? flowsim::Side::Buy : flowsim::Side::Sell;
        const int s = static_cast<int>(side);
        const auto action = rng.bernoulli(0.7) ? flowsim::Action::Add : flowsim::Action::Cancel;
        const std::int64_t volume = 1 + static_cast<std::int64_t>(rng.index(40));

        flowsim::TradeEvent ev;
        if (action == flowsim::Action::Add && rng.bernoulli(0.25)) {
            ev = make_market(t, side, volume);
        } else {
            double price = last_price[s];
            if (!rng.bernoulli(0.35)) {  // else exact price tie builds a queue
                price = p0 * (1.0 + rng.normal(0.0, 30e-4));
                if (price < 0.01) price = 0.01;
                last_price[s] = price;
            }
            if (action == flowsim::Action::Cancel && rng.bernoulli(0.4))
                ev = make_market(t, side, volume, action);  // unpriced cancel
            else
                ev = make_limit(t, side, price, volume, action);
        }
        stream.events.push_back(ev);
    }
    return stream;
}

// ---- naive statistics -------------------------------------------------------

inline double naive_mean(std::span<const double> x) {
    double m = 0.0;
    for (double v : x) m += v;
    return m / static_cast<double>(x.size());
}

inline double naive_stddev(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = naive_mean(x);
    double acc = 0.0;
    for (double v : x) acc += (v - m) * (v - m);
    return std::sqrt(acc / static_cast<double>(x.size() - 1));
}

inline double ecdf_at(std::span<const double> x, double v) {
    std::size_t c = 0;
    for (double u : x)
        if (u <= v) ++c;
    return static_cast<double>(c) / static_cast<double>(x.size());
}

// sup_x |F_a(x) - F_b(x)| evaluated at every sample point of both samples;
// the supremum of a difference of right-continuous step functions is
// attained at one of the jump points.
inline double naive_ks(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (double v : a) d = std::max(d, std::abs(ecdf_at(a, v) - ecdf_at(b, v)));
    for (double v : b) d = std::max(d, std::abs(ecdf_at(a, v) - ecdf_at(b, v)));
    return d;
}

// W1 as the area between the two empirical CDFs (x-domain form; the library
// integrates the quantile functions over the q-domain instead).
inline double naive_w1(std::span<const double> a, std::span<const double> b) {
    std::vector<double> grid(a.begin(), a.end());
    grid.insert(grid.end(), b.begin(), b.end());
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    double w = 0.0;
    for (std::size_t k = 0; k + 1 < grid.size(); ++k)
        w += std::abs(ecdf_at(a, grid[k]) - ecdf_at(b, grid[k])) * (grid[k + 1] - grid[k]);
    return w;
}

// Bias-corrected excess kurtosis, straight from the corrected-moment formula
// written with explicit standardized fourth powers.
inline double naive_excess_kurtosis(std::span<const double> x) {
    const double n = static_cast<double>(x.size());
    const double m = naive_mean(x);
    double s2 = 0.0;
    for (double v : x) s2 += (v - m) * (v - m);
    s2 /= (n - 1.0);
    double sum4 = 0.0;
    for (double v : x) {
        const double z = (v - m) / std::sqrt(s2);
        sum4 += z * z * z * z;
    }
    return n * (n + 1.0) / ((n - 1.0) * (n - 2.0) * (n - 3.0)) * sum4 -
           3.0 * (n - 1.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0));
}

struct VwapObs {
    double price = 0.0;
    double volume = 0.0;
    double time = 0.0;
};

// Weighted average with explicit per-observation weights v_j * 2^(-(t_n - t_j)/H).
inline double naive_ewvwap(std::span<const VwapObs> obs, double halflife) {
    const double t_last = obs.back().time;
    double num = 0.0, den = 0.0;
    for (const VwapObs& o : obs) {
        const double w = std::exp2(-(t_last - o.time) / halflife);
        num += o.price * o.volume * w;
        den += o.volume * w;
    }
    return num / den;
}

// Last-observation-carried-forward by re-scanning the series per grid point.
inline std::vector<double> naive_locf(std::span<const flowsim::SeriesPoint> series, double dt) {
    const double t0 = series.front().time;
    const double t_end = series.back().time;
    const auto n_grid = static_cast<std::size_t>(std::floor((t_end - t0) / dt)) + 1;
    std::vector<double> grid(n_grid);
    for (std::size_t g = 0; g < n_grid; ++g) {
        const double t = t0 + static_cast<double>(g) * dt;
        double value = series.front().midprice;
        for (const flowsim::SeriesPoint& p : series) {
            if (p.time <= t) value = p.midprice;
            else break;
        }
        grid[g] = value;
    }
    return grid;
}

// ---- naive Hawkes ----------------------------------------------------------

// lambda_target(t) given the full history, as a direct O(n) sum over events
// strictly before t.
inline double naive_hawkes_intensity(const flowsim::HawkesParams& params,
                                     std::span<const flowsim::TimedPoint> points, int target, double t) {
    double lam = params.mu[static_cast<std::size_t>(target)];
    for (const flowsim::TimedPoint& pt : points) {
        if (!(pt.time < t)) break;
        const flowsim::ExpKernel& k = params.kernel(target, pt.dim);
        for (int e = 0; e < k.terms(); ++e)
            lam += k.alphas[static_cast<std::size_t>(e)] *
                   std::exp(-k.betas[static_cast<std::size_t>(e)] * (t - pt.time));
    }
    return lam;
}

// Exact log-likelihood: sum of log-intensities at the events minus the
// closed-form compensator, both as direct double loops.
inline double naive_hawkes_loglik(const flowsim::HawkesParams& params,
                                  std::span<const flowsim::TimedPoint> points, double horizon) {
    double ll = 0.0;
    for (std::size_t k = 0; k < points.size(); ++k) {
        const auto before = points.subspan(0, k);
        ll += std::log(naive_hawkes_intensity(params, before, points[k].dim, points[k].time));
    }
    for (int i = 0; i < params.dims(); ++i) {
        double integral = params.mu[static_cast<std::size_t>(i)] * horizon;
        for (const flowsim::TimedPoint& pt : points) {
            const flowsim::ExpKernel& k = params.kernel(i, pt.dim);
            for (int e = 0; e < k.terms(); ++e) {
                const double a = k.alphas[static_cast<std::size_t>(e)];
                const double b = k.betas[static_cast<std::size_t>(e)];
                integral += a / b * (1.0 - std::exp(-b * (horizon - pt.time)));
            }
        }
        ll -= integral;
    }
    return ll;
}

// ---- naive limit order book -------------------------------------------------
//
// Same externally specified semantics as flowsim::OrderBook, re-implemented
// over a flat order vector with linear scans. Arithmetic expressions mirror
// the specified formulas exactly so results must match bit for bit.

struct NaiveBook {
    struct NOrder {
        std::uint64_t order_id = 0;
        flowsim::Side side = flowsim::Side::Buy;
        bool is_market = false;
        flowsim::PriceMicro price = 0;
        std::int64_t volume = 0;
        double entry_time = 0.0;
        std::uint64_t entry_seq = 0;
    };

    explicit NaiveBook(double p0, flowsim::MarketPriceRule rule = flowsim::MarketPriceRule::MidpriceForMarketPairs)
        : rule_(rule) {
        anchor_price_ = flowsim::to_micro(p0);
        midprice_ = flowsim::from_micro(anchor_price_);
    }

    std::vector<NOrder> orders_live;
    std::vector<flowsim::Fill> fills;
    std::vector<flowsim::DeleteRecord> deletes;
    std::vector<flowsim::SeriesPoint> series;
    std::vector<flowsim::OrderRecord> orders;

    flowsim::MarketPriceRule rule_;
    bool anchor_active_[2] = {true, true};
    flowsim::PriceMicro anchor_price_ = 0;
    double midprice_ = 0.0;
    double clock_ = 0.0;
    double prev_time_ = 0.0;
    std::uint64_t next_order_id_ = 1;
    std::uint64_t next_seq_ = 0;

    std::int64_t side_volume(int s) const {
        std::int64_t v = 0;
        for (const NOrder& o : orders_live)
            if (static_cast<int>(o.side) == s) v += o.volume;
        return v;
    }

    // Best price over resting limit orders only; anchors take precedence.
    std::optional<flowsim::PriceMicro> best_limit(int s) const {
        std::optional<flowsim::PriceMicro> best;
        for (const NOrder& o : orders_live) {
            if (static_cast<int>(o.side) != s || o.is_market) continue;
            if (!best || (s == 0 ? o.price > *best : o.price < *best)) best = o.price;
        }
        return best;
    }

    std::optional<double> best_bid() const {
        if (anchor_active_[0]) return flowsim::from_micro(anchor_price_);
        if (auto p = best_limit(0)) return flowsim::from_micro(*p);
        return std::nullopt;
    }
    std::optional<double> best_ask() const {
        if (anchor_active_[1]) return flowsim::from_micro(anchor_price_);
        if (auto p = best_limit(1)) return flowsim::from_micro(*p);
        return std::nullopt;
    }

    void record_point(bool has_bid, flowsim::PriceMicro bid, bool has_ask, flowsim::PriceMicro ask,
                      double bid_volume, double ask_volume) {
        flowsim::SeriesPoint pt;
        pt.time = clock_;
        if (has_bid && has_ask) {
            pt.midprice = 0.5 * (flowsim::from_micro(bid) + flowsim::from_micro(ask));
            pt.spread = flowsim::from_micro(ask) - flowsim::from_micro(bid);
        } else if (has_bid) {
            pt.midprice = flowsim::from_micro(bid);
        } else if (has_ask) {
            pt.midprice = flowsim::from_micro(ask);
        } else {
            pt.midprice = midprice_;
        }
        pt.bid_volume = bid_volume;
        pt.ask_volume = ask_volume;
        const double total = bid_volume + ask_volume;
        pt.imbalance = total > 0.0 ? (bid_volume - ask_volume) / total : 0.0;
        midprice_ = pt.midprice;
        series.push_back(pt);
    }

    void current_view(bool& has_bid, flowsim::PriceMicro& bid, bool& has_ask, flowsim::PriceMicro& ask) const {
        has_bid = false;
        has_ask = false;
        if (anchor_active_[0]) {
            has_bid = true;
            bid = anchor_price_;
        } else if (auto p = best_limit(0)) {
            has_bid = true;
            bid = *p;
        }
        if (anchor_active_[1]) {
            has_ask = true;
            ask = anchor_price_;
        } else if (auto p = best_limit(1)) {
            has_ask = true;
            ask = *p;
        }
    }

    // Earliest resting market order on side s, if any (FIFO by entry_seq).
    NOrder* market_front(int s) {
        NOrder* best = nullptr;
        for (NOrder& o : orders_live) {
            if (static_cast<int>(o.side) != s || !o.is_market) continue;
            if (!best || o.entry_seq < best->entry_seq) best = &o;
        }
        return best;
    }

    // Oldest order at the best limit level on side s.
    NOrder* limit_front(int s) {
        auto lvl = best_limit(s);
        if (!lvl) return nullptr;
        NOrder* best = nullptr;
        for (NOrder& o : orders_live) {
            if (static_cast<int>(o.side) != s || o.is_market || o.price != *lvl) continue;
            if (!best || o.entry_seq < best->entry_seq) best = &o;
        }
        return best;
    }

    void erase_order(std::uint64_t id) {
        for (std::size_t i = 0; i < orders_live.size(); ++i) {
            if (orders_live[i].order_id == id) {
                orders_live.erase(orders_live.begin() + static_cast<std::ptrdiff_t>(i));
                return;
            }
        }
    }

    void step(const flowsim::TradeEvent& event) {
        clock_ = event.timestamp;
        flowsim::OrderRecord rec;
        rec.dt = event.timestamp - prev_time_;
        rec.depth = event.has_price() ? (event.order_price - midprice_) / midprice_ : 0.0;
        rec.volume = event.volume;
        rec.action = event.action;
        rec.side = event.side;
        orders.push_back(rec);

        if (event.action == flowsim::Action::Add)
            apply_add(event);
        else
            apply_cancel(event);
        prev_time_ = event.timestamp;
    }

    void apply_add(const flowsim::TradeEvent& event) {
        NOrder incoming;
        incoming.order_id = next_order_id_++;
        incoming.side = event.side;
        incoming.is_market = event.is_market_order;
        incoming.volume = event.volume;
        incoming.entry_time = clock_;
        incoming.entry_seq = next_seq_++;
        const int s = static_cast<int>(event.side);
        if (!incoming.is_market) {
            incoming.price = flowsim::to_micro(event.order_price);
            anchor_active_[s] = false;
        }

        bool has_bid = false, has_ask = false;
        flowsim::PriceMicro bid = 0, ask = 0;
        current_view(has_bid, bid, has_ask, ask);
        if (!incoming.is_market) {
            if (event.side == flowsim::Side::Buy) {
                bid = has_bid ? std::max(bid, incoming.price) : incoming.price;
                has_bid = true;
            } else {
                ask = has_ask ? std::min(ask, incoming.price) : incoming.price;
                has_ask = true;
            }
        }
        double bid_volume = static_cast<double>(side_volume(0));
        double ask_volume = static_cast<double>(side_volume(1));
        if (event.side == flowsim::Side::Buy)
            bid_volume += static_cast<double>(incoming.volume);
        else
            ask_volume += static_cast<double>(incoming.volume);
        record_point(has_bid, bid, has_ask, ask, bid_volume, ask_volume);

        match(incoming);
    }

    double fill_price(const NOrder& incoming, const NOrder& resting) const {
        if (incoming.is_market && resting.is_market) {
            if (rule_ == flowsim::MarketPriceRule::MidpriceForMarketPairs) return midprice_;
            const auto touch = incoming.side == flowsim::Side::Buy ? best_ask() : best_bid();
            return touch ? *touch : midprice_;
        }
        if (incoming.is_market) return flowsim::from_micro(resting.price);
        if (resting.is_market) return flowsim::from_micro(incoming.price);
        return flowsim::from_micro(resting.price);
    }

    void match(NOrder incoming) {
        const int opp = 1 - static_cast<int>(incoming.side);
        while (incoming.volume > 0) {
            NOrder* best = market_front(opp);
            if (best == nullptr) best = limit_front(opp);
            if (best == nullptr) break;
            if (!incoming.is_market && !best->is_market) {
                if (incoming.side == flowsim::Side::Buy && best->price > incoming.price) break;
                if (incoming.side == flowsim::Side::Sell && best->price < incoming.price) break;
            }
            const std::int64_t taken = std::min(incoming.volume, best->volume);
            flowsim::Fill fill;
            fill.incoming_id = incoming.order_id;
            fill.resting_id = best->order_id;
            fill.price = fill_price(incoming, *best);
            fill.volume = taken;
            fill.time = clock_;
            fill.time_since_resting = clock_ - best->entry_time;
            fill.incoming_side = incoming.side;
            fills.push_back(fill);
            incoming.volume -= taken;
            best->volume -= taken;
            if (best->volume == 0) erase_order(best->order_id);
        }
        if (incoming.volume > 0) orders_live.push_back(incoming);
    }

    void apply_cancel(const flowsim::TradeEvent& event) {
        const flowsim::PriceMicro target =
            event.has_price() ? flowsim::to_micro(event.order_price) : flowsim::to_micro(midprice_);
        const int s = static_cast<int>(event.side);

        flowsim::DeleteRecord rec;
        rec.side = event.side;
        rec.target_price = flowsim::from_micro(target);
        rec.time = clock_;
        rec.matched = false;

        // Distinct limit price levels on this side.
        std::vector<flowsim::PriceMicro> levels;
        for (const NOrder& o : orders_live)
            if (static_cast<int>(o.side) == s && !o.is_market) levels.push_back(o.price);
        std::sort(levels.begin(), levels.end());
        levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

        if (!levels.empty()) {
            // Nearest level; distance ties go to the level whose oldest order
            // arrived first.
            auto front_of = [&](flowsim::PriceMicro lvl) {
                const NOrder* f = nullptr;
                for (const NOrder& o : orders_live) {
                    if (static_cast<int>(o.side) != s || o.is_market || o.price != lvl) continue;
                    if (f == nullptr || o.entry_seq < f->entry_seq) f = &o;
                }
                return f;
            };
            flowsim::PriceMicro chosen = levels.front();
            for (flowsim::PriceMicro lvl : levels) {
                const auto d = std::llabs(lvl - target);
                const auto dc = std::llabs(chosen - target);
                if (d < dc || (d == dc && front_of(lvl)->entry_seq < front_of(chosen)->entry_seq))
                    chosen = lvl;
            }
            const NOrder* front = front_of(chosen);
            const std::int64_t removed = std::min(event.volume, front->volume);
            rec.resting_id = front->order_id;
            rec.volume_removed = removed;
            rec.matched = true;
            if (event.volume >= front->volume) {
                erase_order(front->order_id);
            } else {
                for (NOrder& o : orders_live)
                    if (o.order_id == rec.resting_id) o.volume -= removed;
            }
        }
        deletes.push_back(rec);

        bool has_bid = false, has_ask = false;
        flowsim::PriceMicro bid = 0, ask = 0;
        current_view(has_bid, bid, has_ask, ask);
        record_point(has_bid, bid, has_ask, ask, static_cast<double>(side_volume(0)),
                     static_cast<double>(side_volume(1)));
    }
};

inline NaiveBook run_naive(const flowsim::EventStream& stream,
                           flowsim::MarketPriceRule rule = flowsim::MarketPriceRule::MidpriceForMarketPairs) {
    NaiveBook book(stream.meta.opening_price, rule);
    for (const flowsim::TradeEvent& ev : stream.events) book.step(ev);
    return book;
}

// First difference between two sets of simulation records (library vs naive
// reference, or two library runs), empty string when identical. All
// comparisons are exact: both sides compute the same specified expressions.
template <typename Records>
inline std::string diff_sim(const flowsim::SimResult& lib, const Records& ref) {
    std::ostringstream out;
    auto fail = [&out](const std::string& what, std::size_t i) {
        out << what << " mismatch at index " << i;
        return out.str();
    };
    if (lib.fills.size() != ref.fills.size()) return "fill count mismatch";
    for (std::size_t i = 0; i < lib.fills.size(); ++i) {
        const auto& a = lib.fills[i];
        const auto& b = ref.fills[i];
        if (a.incoming_id != b.incoming_id || a.resting_id != b.resting_id) return fail("fill ids", i);
        if (a.price != b.price) return fail("fill price", i);
        if (a.volume != b.volume) return fail("fill volume", i);
        if (a.time != b.time || a.time_since_resting != b.time_since_resting) return fail("fill time", i);
        if (a.incoming_side != b.incoming_side) return fail("fill side", i);
    }
    if (lib.deletes.size() != ref.deletes.size()) return "delete count mismatch";
    for (std::size_t i = 0; i < lib.deletes.size(); ++i) {
        const auto& a = lib.deletes[i];
        const auto& b = ref.deletes[i];
        if (a.matched != b.matched) return fail("delete matched", i);
        if (a.resting_id != b.resting_id) return fail("delete id", i);
        if (a.volume_removed != b.volume_removed) return fail("delete volume", i);
        if (a.target_price != b.target_price || a.time != b.time) return fail("delete price/time", i);
        if (a.side != b.side) return fail("delete side", i);
    }
    if (lib.series.size() != ref.series.size()) return "series count mismatch";
    for (std::size_t i = 0; i < lib.series.size(); ++i) {
        const auto& a = lib.series[i];
        const auto& b = ref.series[i];
        if (a.time != b.time || a.midprice != b.midprice || a.spread != b.spread) return fail("series point", i);
        if (a.bid_volume != b.bid_volume || a.ask_volume != b.ask_volume) return fail("series volume", i);
        if (a.imbalance != b.imbalance) return fail("series imbalance", i);
    }
    if (lib.orders.size() != ref.orders.size()) return "order record count mismatch";
    for (std::size_t i = 0; i < lib.orders.size(); ++i) {
        const auto& a = lib.orders[i];
        const auto& b = ref.orders[i];
        if (a.dt != b.dt || a.depth != b.depth || a.volume != b.volume) return fail("order record", i);
        if (a.action != b.action || a.side != b.side) return fail("order record kind", i);
    }
    return {};
}

}  // namespace testutil
