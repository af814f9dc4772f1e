#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace flowsim {

enum class Action : std::uint8_t { Add = 0, Cancel = 1 };
enum class Side : std::uint8_t { Buy = 0, Sell = 1 };

// Market-wide tape vs single-participant tape.
enum class Scope : std::uint8_t { Market = 0, Participant = 1 };

struct TradeEvent {
    double timestamp = 0.0;        // seconds since session open
    Action action = Action::Add;
    Side side = Side::Buy;
    double order_price = 0.0;      // currency per share; ignored when is_market_order
    std::int64_t volume = 0;       // shares
    bool is_market_order = false;

    bool has_price() const { return !is_market_order; }
};

struct AssetMeta {
    std::string asset_id;
    double average_daily_volume = 0.0;  // shares per day
    double opening_price = 0.0;         // session open p0, currency
};

// All events in a stream belong to meta.asset_id and are time-ordered.
struct EventStream {
    AssetMeta meta;
    Scope scope = Scope::Market;
    std::vector<TradeEvent> events;
};

// Depth-referenced order before price resolution: produced by token decoding
// and by the stochastic generators, consumed by the simulator loop.
struct OrderIntent {
    double dt_seconds = 0.0;     // interarrival to previous event
    double depth_ratio = 0.0;    // (order_price - mid) / mid
    std::int64_t volume = 1;     // shares
    Action action = Action::Add;
    Side side = Side::Buy;
    bool is_market_order = false;
};

enum class StreamFormat { Csv, Jsonl };

const char* to_string(Action a);
const char* to_string(Side s);
const char* to_string(Scope s);
Action parse_action(std::string_view s);  // throws Data MalformedRow
Side parse_side(std::string_view s);
Scope parse_scope(std::string_view s);

inline constexpr const char* kEventCsvHeader = "timestamp,asset,adv,action,side,order_price,volume";

// Throws Data errors when a type invariant is violated (non-finite or
// decreasing timestamps, non-positive volume/price/adv, empty stream).
void validate_stream(const EventStream& stream);

// CSV columns: timestamp,asset,adv,action,side,order_price,volume. A market
// order has an empty order_price field. CSV carries neither the opening
// price nor the scope flag: p0 defaults to the first priced event's price
// (override with opening_price) and scope defaults to Market. JSONL puts a
// metadata object on line 1 and round-trips everything.
EventStream read_stream(const std::string& path, StreamFormat format,
                        std::optional<double> opening_price = std::nullopt);
void write_stream(const EventStream& stream, const std::string& path, StreamFormat format);

// Places an intent on the tape at an absolute time, resolving depth against
// a reference price. Used by the open-loop generators.
TradeEvent to_trade_event(const OrderIntent& intent, double timestamp, double reference_price);

}  // namespace flowsim
