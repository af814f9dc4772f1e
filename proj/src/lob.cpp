#include "flowsim/lob.hpp"

#include <cassert>
#include <sstream>

#include "flowsim/error.hpp"
#include "flowsim/text_io.hpp"

namespace flowsim {

OrderBook::OrderBook(double p0, MarketPriceRule rule) : rule_(rule) {
    if (!(p0 > 0.0) || !std::isfinite(p0)) raise_data("MalformedRow", "book opening price must be positive");
    anchor_price_ = to_micro(p0);
    if (anchor_price_ <= 0) raise_data("MalformedRow", "book opening price rounds to zero");
    midprice_ = from_micro(anchor_price_);
}

std::optional<double> OrderBook::best_bid() const {
    if (anchor_active_[0]) return from_micro(anchor_price_);
    if (!bids_.empty()) return from_micro(bids_.begin()->first);
    return std::nullopt;
}

std::optional<double> OrderBook::best_ask() const {
    if (anchor_active_[1]) return from_micro(anchor_price_);
    if (!asks_.empty()) return from_micro(asks_.begin()->first);
    return std::nullopt;
}

std::size_t OrderBook::resting_order_count() const {
    std::size_t n = market_queue_[0].size() + market_queue_[1].size();
    for (const auto& [p, q] : bids_) n += q.size();
    for (const auto& [p, q] : asks_) n += q.size();
    return n;
}

bool OrderBook::book_crossed() const {
    if (bids_.empty() || asks_.empty()) return false;
    return bids_.begin()->first >= asks_.begin()->first;
}

double OrderBook::order_price_from_depth(double depth_bps) const {
    return midprice_ + (depth_bps / 1e4) * midprice_;
}

double OrderBook::market_touch_price(Side incoming_side) const {
    const std::optional<double> touch = incoming_side == Side::Buy ? best_ask() : best_bid();
    if (!touch)
        raise_data("EmptyOppositeSide", std::string("no resting quote opposite a market ") +
                                            to_string(incoming_side) + " order");
    return *touch;
}

OrderBook::TempView OrderBook::current_view() const {
    TempView v;
    if (anchor_active_[0]) {
        v.has_bid = true;
        v.bid = anchor_price_;
    } else if (!bids_.empty()) {
        v.has_bid = true;
        v.bid = bids_.begin()->first;
    }
    if (anchor_active_[1]) {
        v.has_ask = true;
        v.ask = anchor_price_;
    } else if (!asks_.empty()) {
        v.has_ask = true;
        v.ask = asks_.begin()->first;
    }
    v.bid_volume = static_cast<double>(side_volume_[0]);
    v.ask_volume = static_cast<double>(side_volume_[1]);
    return v;
}

void OrderBook::record_point(const TempView& view) {
    SeriesPoint pt;
    pt.time = clock_;
    if (view.has_bid && view.has_ask) {
        pt.midprice = 0.5 * (from_micro(view.bid) + from_micro(view.ask));
        pt.spread = from_micro(view.ask) - from_micro(view.bid);
    } else if (view.has_bid) {
        pt.midprice = from_micro(view.bid);
    } else if (view.has_ask) {
        pt.midprice = from_micro(view.ask);
    } else {
        pt.midprice = midprice_;  // hold the last known midprice
    }
    pt.bid_volume = view.bid_volume;
    pt.ask_volume = view.ask_volume;
    const double total = view.bid_volume + view.ask_volume;
    pt.imbalance = total > 0.0 ? (view.bid_volume - view.ask_volume) / total : 0.0;
    midprice_ = pt.midprice;
    series_.push_back(pt);
}

void OrderBook::step(const TradeEvent& event) {
    if (!std::isfinite(event.timestamp) || event.timestamp < clock_)
        raise_data("ClockRegression", "event time " + format_g17(event.timestamp) +
                                          " precedes simulator clock " + format_g17(clock_));
    if (event.volume <= 0) raise_data("MalformedRow", "event volume must be positive");
    clock_ = event.timestamp;

    OrderRecord rec;
    rec.dt = event.timestamp - prev_event_time_;
    rec.depth = event.has_price() ? (event.order_price - midprice_) / midprice_ : 0.0;
    rec.volume = event.volume;
    rec.action = event.action;
    rec.side = event.side;
    orders_.push_back(rec);

    if (event.action == Action::Add)
        apply_add(event);
    else
        apply_cancel(event);
    prev_event_time_ = event.timestamp;
}

void OrderBook::apply_add(const TradeEvent& event) {
    RestingOrder incoming;
    incoming.order_id = next_order_id_++;
    incoming.side = event.side;
    incoming.is_market = event.is_market_order;
    incoming.volume = event.volume;
    incoming.entry_time = clock_;
    incoming.entry_seq = next_seq_++;
    const int s = static_cast<int>(event.side);
    if (!incoming.is_market) {
        incoming.price = to_micro(event.order_price);
        assert(incoming.price > 0 && "limit price must be resolved to a positive value upstream");
        anchor_active_[s] = false;  // a real quote now defines this side
    }

    TempView view = current_view();
    if (!incoming.is_market) {
        if (event.side == Side::Buy) {
            view.bid = view.has_bid ? std::max(view.bid, incoming.price) : incoming.price;
            view.has_bid = true;
        } else {
            view.ask = view.has_ask ? std::min(view.ask, incoming.price) : incoming.price;
            view.has_ask = true;
        }
    }
    if (event.side == Side::Buy)
        view.bid_volume += static_cast<double>(incoming.volume);
    else
        view.ask_volume += static_cast<double>(incoming.volume);
    record_point(view);

    match(incoming);
}

const RestingOrder* OrderBook::best_opposite(const RestingOrder& incoming, bool& is_market_queue) const {
    const int opp = 1 - static_cast<int>(incoming.side);
    if (!market_queue_[opp].empty()) {
        is_market_queue = true;
        return &market_queue_[opp].front();
    }
    is_market_queue = false;
    if (incoming.side == Side::Buy) {
        if (asks_.empty()) return nullptr;
        return &asks_.begin()->second.front();
    }
    if (bids_.empty()) return nullptr;
    return &bids_.begin()->second.front();
}

double OrderBook::fill_price(const RestingOrder& incoming, const RestingOrder& resting) const {
    if (incoming.is_market && resting.is_market) {
        if (rule_ == MarketPriceRule::MidpriceForMarketPairs) return midprice_;
        // crossing: take the touch opposite the incoming order, midprice fallback
        const auto touch = incoming.side == Side::Buy ? best_ask() : best_bid();
        return touch ? *touch : midprice_;
    }
    if (incoming.is_market) return from_micro(resting.price);
    if (resting.is_market) return from_micro(incoming.price);
    return from_micro(resting.price);
}

void OrderBook::pop_best_opposite(Side opposite, bool market_queue, std::int64_t taken) {
    const int o = static_cast<int>(opposite);
    if (market_queue) {
        RestingOrder& front = market_queue_[o].front();
        front.volume -= taken;
        side_volume_[o] -= taken;
        if (front.volume == 0) market_queue_[o].pop_front();
        return;
    }
    if (opposite == Side::Buy) {
        auto it = bids_.begin();
        RestingOrder& front = it->second.front();
        front.volume -= taken;
        side_volume_[o] -= taken;
        if (front.volume == 0) {
            it->second.pop_front();
            if (it->second.empty()) bids_.erase(it);
        }
    } else {
        auto it = asks_.begin();
        RestingOrder& front = it->second.front();
        front.volume -= taken;
        side_volume_[o] -= taken;
        if (front.volume == 0) {
            it->second.pop_front();
            if (it->second.empty()) asks_.erase(it);
        }
    }
}

void OrderBook::match(RestingOrder incoming) {
    while (incoming.volume > 0) {
        bool from_market_queue = false;
        const RestingOrder* best = best_opposite(incoming, from_market_queue);
        if (!best) break;
        if (!incoming.is_market && !best->is_market) {
            if (incoming.side == Side::Buy && best->price > incoming.price) break;
            if (incoming.side == Side::Sell && best->price < incoming.price) break;
        }
        // price-time priority: the selected order is the head of the best
        // opposite queue by construction; resting market orders outrank all
        // limit orders.
        assert(from_market_queue || market_queue_[1 - static_cast<int>(incoming.side)].empty());

        const std::int64_t taken = std::min(incoming.volume, best->volume);
        Fill fill;
        fill.incoming_id = incoming.order_id;
        fill.resting_id = best->order_id;
        fill.price = fill_price(incoming, *best);
        fill.volume = taken;
        fill.time = clock_;
        fill.time_since_resting = clock_ - best->entry_time;
        fill.incoming_side = incoming.side;
        fills_.push_back(fill);

        incoming.volume -= taken;
        pop_best_opposite(incoming.side == Side::Buy ? Side::Sell : Side::Buy, from_market_queue, taken);
    }
    if (incoming.volume > 0) rest(incoming);
    assert(!book_crossed() && "resting book must never be crossed");
}

void OrderBook::rest(RestingOrder order) {
    const int s = static_cast<int>(order.side);
    side_volume_[s] += order.volume;
    if (order.is_market) {
        market_queue_[s].push_back(order);
        return;
    }
    if (order.side == Side::Buy)
        bids_[order.price].push_back(order);
    else
        asks_[order.price].push_back(order);
}

namespace {

// Nearest level to target; on an exact distance tie, the level whose front
// (earliest) order arrived first wins.
template <typename MapT>
typename MapT::iterator nearest_level(MapT& levels, PriceMicro target) {
    auto it = levels.lower_bound(target);
    auto lo = it;  // first key not-before target in map order
    auto hi = it == levels.begin() ? levels.end() : std::prev(it);
    if (lo == levels.end()) return hi;
    if (hi == levels.end()) return lo;
    const PriceMicro d_lo = std::llabs(lo->first - target);
    const PriceMicro d_hi = std::llabs(hi->first - target);
    if (d_lo < d_hi) return lo;
    if (d_hi < d_lo) return hi;
    return lo->second.front().entry_seq < hi->second.front().entry_seq ? lo : hi;
}

// Cancels hit the earliest order at the nearest price level. A cancel for
// less than the resting volume shrinks the order; for at least the resting
// volume it removes the order entirely.
template <typename MapT>
bool cancel_from(MapT& levels, PriceMicro target, std::int64_t cancel_volume, DeleteRecord& rec,
                 std::int64_t& side_volume) {
    if (levels.empty()) return false;
    auto it = nearest_level(levels, target);
    RestingOrder& front = it->second.front();
    const std::int64_t removed = std::min(cancel_volume, front.volume);
    rec.resting_id = front.order_id;
    rec.volume_removed = removed;
    side_volume -= removed;
    if (cancel_volume >= front.volume) {
        it->second.pop_front();
        if (it->second.empty()) levels.erase(it);
    } else {
        front.volume -= removed;
    }
    return true;
}

}  // namespace

void OrderBook::apply_cancel(const TradeEvent& event) {
    const PriceMicro target =
        event.has_price() ? to_micro(event.order_price) : to_micro(midprice_);
    const int s = static_cast<int>(event.side);

    DeleteRecord rec;
    rec.side = event.side;
    rec.target_price = from_micro(target);
    rec.time = clock_;
    rec.matched = event.side == Side::Buy
                      ? cancel_from(bids_, target, event.volume, rec, side_volume_[s])
                      : cancel_from(asks_, target, event.volume, rec, side_volume_[s]);
    deletes_.push_back(rec);

    record_point(current_view());
}

SimResult run_simulation(const EventStream& stream, MarketPriceRule rule) {
    validate_stream(stream);
    OrderBook book(stream.meta.opening_price, rule);
    for (const TradeEvent& ev : stream.events) book.step(ev);
    return {book.fills(), book.deletes(), book.series(), book.orders()};
}

std::vector<RestingOrder> OrderBook::snapshot(Side side) const {
    std::vector<RestingOrder> out;
    const int s = static_cast<int>(side);
    for (const RestingOrder& o : market_queue_[s]) out.push_back(o);
    if (side == Side::Buy) {
        for (const auto& [p, q] : bids_)
            for (const RestingOrder& o : q) out.push_back(o);
    } else {
        for (const auto& [p, q] : asks_)
            for (const RestingOrder& o : q) out.push_back(o);
    }
    return out;
}

void write_fills_csv(const std::vector<Fill>& fills, const std::string& path) {
    std::string out = kFillsCsvHeader;
    out += '\n';
    for (const Fill& f : fills) {
        out += std::to_string(f.incoming_id);
        out += ',';
        out += std::to_string(f.resting_id);
        out += ',';
        out += format_g17(f.price);
        out += ',';
        out += std::to_string(f.volume);
        out += ',';
        out += format_g17(f.time);
        out += ',';
        out += format_g17(f.time_since_resting);
        out += '\n';
    }
    write_text_file(path, out);
}

void write_series_csv(const std::vector<SeriesPoint>& series, const std::string& path) {
    std::string out = kSeriesCsvHeader;
    out += '\n';
    for (const SeriesPoint& p : series) {
        out += format_g17(p.time);
        out += ',';
        out += format_g17(p.midprice);
        out += ',';
        out += format_g17(p.spread);
        out += ',';
        out += format_g17(p.bid_volume);
        out += ',';
        out += format_g17(p.ask_volume);
        out += ',';
        out += format_g17(p.imbalance);
        out += '\n';
    }
    write_text_file(path, out);
}

void write_orders_csv(const std::vector<OrderRecord>& orders, const std::string& path) {
    std::string out = kOrdersCsvHeader;
    out += '\n';
    for (const OrderRecord& o : orders) {
        out += format_g17(o.dt);
        out += ',';
        out += format_g17(o.depth);
        out += ',';
        out += std::to_string(o.volume);
        out += ',';
        out += to_string(o.action);
        out += ',';
        out += to_string(o.side);
        out += '\n';
    }
    write_text_file(path, out);
}

namespace {

std::vector<std::vector<std::string>> read_csv_rows(const std::string& path, const char* header,
                                                    std::size_t n_fields) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || trim(line) != header)
        raise_data("MalformedRow", path + ": bad header, expected '" + std::string(header) + "'");
    std::vector<std::vector<std::string>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto f = split(trim(line), ',');
        if (f.size() != n_fields)
            raise_data("MalformedRow", path + ":" + std::to_string(lineno) + ": expected " +
                                           std::to_string(n_fields) + " fields");
        rows.push_back(std::move(f));
    }
    return rows;
}

double req_double(const std::string& s, const std::string& path) {
    double v = 0.0;
    if (!parse_double(s, v)) raise_data("MalformedRow", path + ": bad number '" + s + "'");
    return v;
}

long long req_int(const std::string& s, const std::string& path) {
    long long v = 0;
    if (!parse_int(s, v)) raise_data("MalformedRow", path + ": bad integer '" + s + "'");
    return v;
}

}  // namespace

std::vector<SeriesPoint> read_series_csv(const std::string& path) {
    std::vector<SeriesPoint> out;
    for (const auto& f : read_csv_rows(path, kSeriesCsvHeader, 6)) {
        SeriesPoint p;
        p.time = req_double(f[0], path);
        p.midprice = req_double(f[1], path);
        p.spread = req_double(f[2], path);
        p.bid_volume = req_double(f[3], path);
        p.ask_volume = req_double(f[4], path);
        p.imbalance = req_double(f[5], path);
        out.push_back(p);
    }
    return out;
}

std::vector<OrderRecord> read_orders_csv(const std::string& path) {
    std::vector<OrderRecord> out;
    for (const auto& f : read_csv_rows(path, kOrdersCsvHeader, 5)) {
        OrderRecord o;
        o.dt = req_double(f[0], path);
        o.depth = req_double(f[1], path);
        o.volume = req_int(f[2], path);
        o.action = parse_action(f[3]);
        o.side = parse_side(f[4]);
        out.push_back(o);
    }
    return out;
}

std::vector<Fill> read_fills_csv(const std::string& path) {
    std::vector<Fill> out;
    for (const auto& f : read_csv_rows(path, kFillsCsvHeader, 6)) {
        Fill fill;
        fill.incoming_id = static_cast<std::uint64_t>(req_int(f[0], path));
        fill.resting_id = static_cast<std::uint64_t>(req_int(f[1], path));
        fill.price = req_double(f[2], path);
        fill.volume = req_int(f[3], path);
        fill.time = req_double(f[4], path);
        fill.time_since_resting = req_double(f[5], path);
        out.push_back(fill);
    }
    return out;
}

}  // namespace flowsim
