#include "flowsim/events.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "flowsim/error.hpp"
#include "flowsim/text_io.hpp"

namespace flowsim {

using nlohmann::json;

const char* to_string(Action a) { return a == Action::Add ? "ADD" : "CANCEL"; }
const char* to_string(Side s) { return s == Side::Buy ? "BUY" : "SELL"; }
const char* to_string(Scope s) { return s == Scope::Market ? "market" : "participant"; }

Action parse_action(std::string_view s) {
    if (s == "ADD") return Action::Add;
    if (s == "CANCEL") return Action::Cancel;
    raise_data("MalformedRow", "unknown action '" + std::string(s) + "'");
}

Side parse_side(std::string_view s) {
    if (s == "BUY") return Side::Buy;
    if (s == "SELL") return Side::Sell;
    raise_data("MalformedRow", "unknown side '" + std::string(s) + "'");
}

Scope parse_scope(std::string_view s) {
    if (s == "market") return Scope::Market;
    if (s == "participant") return Scope::Participant;
    raise_data("MalformedRow", "unknown scope '" + std::string(s) + "'");
}

void validate_stream(const EventStream& stream) {
    if (stream.events.empty()) raise_data("EmptyStream", "stream has no events");
    if (stream.meta.asset_id.empty()) raise_data("MalformedRow", "stream has empty asset id");
    if (!(stream.meta.average_daily_volume > 0.0) || !std::isfinite(stream.meta.average_daily_volume))
        raise_data("MalformedRow", "average daily volume must be finite and positive");
    if (!(stream.meta.opening_price > 0.0) || !std::isfinite(stream.meta.opening_price))
        raise_data("MalformedRow", "opening price must be finite and positive");
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < stream.events.size(); ++i) {
        const TradeEvent& ev = stream.events[i];
        if (!std::isfinite(ev.timestamp) || ev.timestamp < 0.0)
            raise_data("MalformedRow", "event " + std::to_string(i) + ": bad timestamp");
        if (ev.timestamp < prev)
            raise_data("NonMonotonicTimestamp",
                       "event " + std::to_string(i) + ": timestamp decreases (" + format_g17(ev.timestamp) +
                           " after " + format_g17(prev) + ")");
        prev = ev.timestamp;
        if (ev.volume <= 0) raise_data("MalformedRow", "event " + std::to_string(i) + ": non-positive volume");
        if (ev.has_price() && (!(ev.order_price > 0.0) || !std::isfinite(ev.order_price)))
            raise_data("MalformedRow", "event " + std::to_string(i) + ": non-positive order price");
    }
}

namespace {

EventStream read_csv(const std::string& path, std::optional<double> opening_price) {
    std::string text = read_text_file(path);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) raise_data("EmptyStream", path + ": empty file");
    if (trim(line) != kEventCsvHeader)
        raise_data("MalformedRow", path + ": bad header, expected '" + std::string(kEventCsvHeader) + "'");

    EventStream stream;
    bool have_meta = false;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::vector<std::string> f = split(trim(line), ',');
        if (f.size() != 7)
            raise_data("MalformedRow", path + ":" + std::to_string(lineno) + ": expected 7 fields, got " +
                                           std::to_string(f.size()));
        TradeEvent ev;
        double adv = 0.0;
        long long vol = 0;
        if (!parse_double(f[0], ev.timestamp))
            raise_data("MalformedRow", path + ":" + std::to_string(lineno) + ": bad timestamp '" + f[0] + "'");
        if (!parse_double(f[2], adv))
            raise_data("MalformedRow", path + ":" + std::to_string(lineno) + ": bad adv '" + f[2] + "'");
        ev.action = parse_action(f[3]);
        ev.side = parse_side(f[4]);
        if (f[5].empty()) {
            ev.is_market_order = true;
            ev.order_price = 0.0;
        } else if (!parse_double(f[5], ev.order_price)) {
            raise_data("MalformedRow", path + ":" + std::to_string(lineno) + ": bad order_price '" + f[5] + "'");
        }
        if (!parse_int(f[6], vol))
            raise_data("MalformedRow", path + ":" + std::to_string(lineno) + ": bad volume '" + f[6] + "'");
        ev.volume = vol;
        if (!have_meta) {
            stream.meta.asset_id = f[1];
            stream.meta.average_daily_volume = adv;
            have_meta = true;
        } else {
            if (f[1] != stream.meta.asset_id)
                raise_data("MalformedRow", path + ":" + std::to_string(lineno) + ": asset changes mid-stream");
            if (adv != stream.meta.average_daily_volume)
                raise_data("MalformedRow", path + ":" + std::to_string(lineno) + ": adv changes mid-stream");
        }
        stream.events.push_back(ev);
    }
    if (stream.events.empty()) raise_data("EmptyStream", path + ": no event rows");

    if (opening_price) {
        stream.meta.opening_price = *opening_price;
    } else {
        for (const TradeEvent& ev : stream.events) {
            if (ev.has_price()) {
                stream.meta.opening_price = ev.order_price;
                break;
            }
        }
        if (stream.meta.opening_price <= 0.0)
            raise_data("MalformedRow", path + ": no priced event to derive the opening price from");
    }
    validate_stream(stream);
    return stream;
}

EventStream read_jsonl(const std::string& path, std::optional<double> opening_price) {
    std::string text = read_text_file(path);
    std::istringstream in(text);
    std::string line;
    EventStream stream;
    bool have_meta = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty()) continue;
        json j = json::parse(t, nullptr, false);
        if (j.is_discarded())
            raise_data("MalformedRow", path + ":" + std::to_string(lineno) + ": invalid JSON");
        try {
            if (!have_meta) {
                stream.meta.asset_id = j.at("asset").get<std::string>();
                stream.meta.average_daily_volume = j.at("adv").get<double>();
                stream.meta.opening_price = j.at("opening_price").get<double>();
                stream.scope = parse_scope(j.at("scope").get<std::string>());
                have_meta = true;
                continue;
            }
            TradeEvent ev;
            ev.timestamp = j.at("timestamp").get<double>();
            ev.action = parse_action(j.at("action").get<std::string>());
            ev.side = parse_side(j.at("side").get<std::string>());
            if (j.contains("order_price") && !j.at("order_price").is_null()) {
                ev.order_price = j.at("order_price").get<double>();
            } else {
                ev.is_market_order = true;
            }
            ev.volume = j.at("volume").get<std::int64_t>();
            stream.events.push_back(ev);
        } catch (const json::exception& e) {
            raise_data("MalformedRow", path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!have_meta) raise_data("EmptyStream", path + ": missing metadata line");
    if (opening_price) stream.meta.opening_price = *opening_price;
    validate_stream(stream);
    return stream;
}

}  // namespace

EventStream read_stream(const std::string& path, StreamFormat format, std::optional<double> opening_price) {
    return format == StreamFormat::Csv ? read_csv(path, opening_price) : read_jsonl(path, opening_price);
}

void write_stream(const EventStream& stream, const std::string& path, StreamFormat format) {
    validate_stream(stream);
    std::string out;
    if (format == StreamFormat::Csv) {
        out += kEventCsvHeader;
        out += '\n';
        for (const TradeEvent& ev : stream.events) {
            out += format_g17(ev.timestamp);
            out += ',';
            out += stream.meta.asset_id;
            out += ',';
            out += format_g17(stream.meta.average_daily_volume);
            out += ',';
            out += to_string(ev.action);
            out += ',';
            out += to_string(ev.side);
            out += ',';
            if (ev.has_price()) out += format_g17(ev.order_price);
            out += ',';
            out += std::to_string(ev.volume);
            out += '\n';
        }
    } else {
        json meta{{"asset", stream.meta.asset_id},
                  {"adv", stream.meta.average_daily_volume},
                  {"opening_price", stream.meta.opening_price},
                  {"scope", to_string(stream.scope)}};
        out += meta.dump();
        out += '\n';
        for (const TradeEvent& ev : stream.events) {
            json j{{"timestamp", ev.timestamp},
                   {"action", to_string(ev.action)},
                   {"side", to_string(ev.side)},
                   {"volume", ev.volume}};
            if (ev.has_price()) j["order_price"] = ev.order_price;
            out += j.dump();
            out += '\n';
        }
    }
    write_text_file(path, out);
}

TradeEvent to_trade_event(const OrderIntent& intent, double timestamp, double reference_price) {
    TradeEvent ev;
    ev.timestamp = timestamp;
    ev.action = intent.action;
    ev.side = intent.side;
    ev.volume = intent.volume;
    ev.is_market_order = intent.is_market_order;
    ev.order_price = intent.is_market_order ? 0.0 : reference_price * (1.0 + intent.depth_ratio);
    return ev;
}

}  // namespace flowsim
