#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowsim/events.hpp"

namespace flowsim {

// Prices are integer micro-currency units internally so price comparisons
// and level keys are exact.
using PriceMicro = std::int64_t;
inline PriceMicro to_micro(double price) { return static_cast<PriceMicro>(std::llround(price * 1e6)); }
inline double from_micro(PriceMicro p) { return static_cast<double>(p) * 1e-6; }

// Fill price when both sides are market orders: the simulator midprice.
// Crossing is the conventional alternative (price of the resting order's
// side touch) kept behind a flag for experiments.
enum class MarketPriceRule : std::uint8_t { MidpriceForMarketPairs = 0, Crossing = 1 };

struct RestingOrder {
    std::uint64_t order_id = 0;
    Side side = Side::Buy;
    bool is_market = false;
    PriceMicro price = 0;  // meaningless when is_market
    std::int64_t volume = 0;
    double entry_time = 0.0;
    std::uint64_t entry_seq = 0;  // global arrival counter, tie-breaker
};

struct Fill {
    std::uint64_t incoming_id = 0;
    std::uint64_t resting_id = 0;
    double price = 0.0;
    std::int64_t volume = 0;
    double time = 0.0;
    double time_since_resting = 0.0;
    Side incoming_side = Side::Buy;
};

struct DeleteRecord {
    std::uint64_t resting_id = 0;  // 0 when unmatched
    Side side = Side::Buy;
    double target_price = 0.0;
    std::int64_t volume_removed = 0;
    double time = 0.0;
    bool matched = false;
};

// One row per event, captured while the event is applied (for adds the book
// view includes the incoming order, before matching).
struct SeriesPoint {
    double time = 0.0;
    double midprice = 0.0;
    double spread = 0.0;  // best ask - best bid; can be negative pre-match
    double bid_volume = 0.0;
    double ask_volume = 0.0;
    double imbalance = 0.0;  // (bid - ask) / (bid + ask), 0 when book empty
};

// Per-event order record for the evaluation suite: interarrival, depth of
// the order relative to the pre-event simulator midprice, shares.
struct OrderRecord {
    double dt = 0.0;
    double depth = 0.0;  // 0 for market orders
    std::int64_t volume = 0;
    Action action = Action::Add;
    Side side = Side::Buy;
};

// Deterministic price-time-priority matching engine.
//
// Bootstrap: a synthetic one-share anchor quote sits at p0 on each side.
// Anchors are price markers only (never matched, never counted in volumes)
// and disappear per side when the first real limit order arrives there.
//
// Midprice bookkeeping follows the replay discipline: for adds the midprice
// is recorded from a temporary view of the book that includes the incoming
// order (before matching); for cancels from the book after removal. The
// recorded midprice is the reference both for depth resolution of the next
// order and for market-pair fill prices.
class OrderBook {
public:
    explicit OrderBook(double p0, MarketPriceRule rule = MarketPriceRule::MidpriceForMarketPairs);

    // Applies one event. Throws Data ClockRegression when time runs
    // backwards. Limit adds must carry a positive price (callers resolve
    // depth -> price and reject non-positive results upstream).
    void step(const TradeEvent& event);

    // Depth in basis points relative to the current midprice:
    // price = mid + (depth_bps / 1e4) * mid.
    double order_price_from_depth(double depth_bps) const;
    // Best price on the opposite side that a market order would take.
    // Throws Data EmptyOppositeSide when no quote exists there.
    double market_touch_price(Side incoming_side) const;

    double sim_midprice() const { return midprice_; }
    double clock() const { return clock_; }
    std::optional<double> best_bid() const;
    std::optional<double> best_ask() const;
    std::int64_t bid_volume() const { return side_volume_[0]; }
    std::int64_t ask_volume() const { return side_volume_[1]; }
    std::size_t resting_order_count() const;
    bool book_crossed() const;  // true if best resting bid >= best resting ask

    const std::vector<Fill>& fills() const { return fills_; }
    const std::vector<DeleteRecord>& deletes() const { return deletes_; }
    const std::vector<SeriesPoint>& series() const { return series_; }
    const std::vector<OrderRecord>& orders() const { return orders_; }

    // Resting limit orders on a side, best price first, FIFO within a level;
    // resting market orders come before all limit orders.
    std::vector<RestingOrder> snapshot(Side side) const;

private:
    struct TempView {
        bool has_bid = false, has_ask = false;
        PriceMicro bid = 0, ask = 0;
        double bid_volume = 0.0, ask_volume = 0.0;
    };

    void apply_add(const TradeEvent& event);
    void apply_cancel(const TradeEvent& event);
    void match(RestingOrder incoming);
    void rest(RestingOrder order);
    void record_point(const TempView& view);
    TempView current_view() const;
    const RestingOrder* best_opposite(const RestingOrder& incoming, bool& is_market_queue) const;
    void pop_best_opposite(Side opposite, bool market_queue, std::int64_t taken);
    double fill_price(const RestingOrder& incoming, const RestingOrder& resting) const;

    std::map<PriceMicro, std::deque<RestingOrder>, std::greater<PriceMicro>> bids_;
    std::map<PriceMicro, std::deque<RestingOrder>> asks_;
    std::deque<RestingOrder> market_queue_[2];  // resting market orders by side
    bool anchor_active_[2] = {true, true};
    PriceMicro anchor_price_ = 0;
    std::int64_t side_volume_[2] = {0, 0};

    MarketPriceRule rule_;
    double midprice_ = 0.0;
    double clock_ = 0.0;
    double prev_event_time_ = 0.0;
    std::uint64_t next_order_id_ = 1;
    std::uint64_t next_seq_ = 0;

    std::vector<Fill> fills_;
    std::vector<DeleteRecord> deletes_;
    std::vector<SeriesPoint> series_;
    std::vector<OrderRecord> orders_;
};

struct SimResult {
    std::vector<Fill> fills;
    std::vector<DeleteRecord> deletes;
    std::vector<SeriesPoint> series;
    std::vector<OrderRecord> orders;
};

// Replays a validated stream through a fresh book anchored at the stream's
// opening price.
SimResult run_simulation(const EventStream& stream,
                         MarketPriceRule rule = MarketPriceRule::MidpriceForMarketPairs);

inline constexpr const char* kFillsCsvHeader = "incoming_id,resting_id,price,volume,time,time_since_resting";
inline constexpr const char* kSeriesCsvHeader = "time,midprice,spread,bid_volume,ask_volume,imbalance";
inline constexpr const char* kOrdersCsvHeader = "dt,depth,volume,action,side";

void write_fills_csv(const std::vector<Fill>& fills, const std::string& path);
void write_series_csv(const std::vector<SeriesPoint>& series, const std::string& path);
void write_orders_csv(const std::vector<OrderRecord>& orders, const std::string& path);
std::vector<SeriesPoint> read_series_csv(const std::string& path);
std::vector<OrderRecord> read_orders_csv(const std::string& path);
std::vector<Fill> read_fills_csv(const std::string& path);

}  // namespace flowsim
