#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "flowsim/error.hpp"
#include "flowsim/lob.hpp"
#include "flowsim/rng.hpp"

#include "test_util.hpp"

using namespace flowsim;
using namespace testutil;

// ---- anchors and quote discovery ---------------------------------------------

TEST_CASE("phantom anchors quote the opening price until real liquidity arrives") {
    OrderBook book(100.0);
    REQUIRE(book.best_bid().has_value());
    REQUIRE(book.best_ask().has_value());
    CHECK(*book.best_bid() == 100.0);
    CHECK(*book.best_ask() == 100.0);
    CHECK(book.sim_midprice() == 100.0);
    CHECK(book.resting_order_count() == 0);

    // A real sell quote replaces only the ask anchor.
    book.step(make_limit(1.0, Side::Sell, 100.5, 5));
    CHECK(*book.best_ask() == 100.5);
    CHECK(*book.best_bid() == 100.0);  // bid anchor still active

    book.step(make_limit(2.0, Side::Buy, 99.5, 5));
    CHECK(*book.best_bid() == 99.5);
}

TEST_CASE("anchors provide no liquidity") {
    OrderBook book(100.0);
    // Market buy against an empty (anchor-only) book rests unfilled.
    book.step(make_market(1.0, Side::Buy, 4));
    CHECK(book.fills().empty());
    CHECK(book.resting_order_count() == 1);
    CHECK(book.bid_volume() == 4);
}

// ---- hand-traced matching scenarios ---------------------------------------------

TEST_CASE("a crossing limit fills at the resting price and rests its remainder") {
    OrderBook book(100.0);
    book.step(make_limit(1.0, Side::Sell, 100.2, 5));
    book.step(make_limit(2.0, Side::Buy, 100.5, 8));
    REQUIRE(book.fills().size() == 1);
    const Fill& f = book.fills()[0];
    // Resting limit price sets the trade; prices live on the micro grid.
    CHECK(f.price == from_micro(to_micro(100.2)));
    CHECK(f.volume == 5);
    CHECK(f.incoming_id == 2);
    CHECK(f.resting_id == 1);
    CHECK(f.incoming_side == Side::Buy);
    CHECK(f.time_since_resting == 1.0);
    CHECK(*book.best_bid() == 100.5);  // remainder of 3 now defines the bid
    CHECK(book.bid_volume() == 3);
    CHECK_FALSE(book.book_crossed());
}

TEST_CASE("price-time priority: better price first, then arrival order") {
    OrderBook book(100.0);
    book.step(make_limit(1.0, Side::Sell, 100.3, 5));  // id 1
    book.step(make_limit(2.0, Side::Sell, 100.2, 5));  // id 2, better price
    book.step(make_limit(3.0, Side::Sell, 100.3, 5));  // id 3, ties id 1's level
    book.step(make_market(4.0, Side::Buy, 12));        // id 4
    REQUIRE(book.fills().size() == 3);
    CHECK(book.fills()[0].resting_id == 2);  // best price
    CHECK(book.fills()[0].price == from_micro(to_micro(100.2)));
    CHECK(book.fills()[1].resting_id == 1);  // then FIFO at 100.3
    CHECK(book.fills()[2].resting_id == 3);
    CHECK(book.fills()[2].volume == 2);
    CHECK(book.ask_volume() == 3);  // id 3 keeps 3 shares
}

TEST_CASE("resting market orders outrank limit orders at any price") {
    OrderBook book(100.0);
    book.step(make_market(1.0, Side::Sell, 5));          // id 1 rests (anchor gives no fill)
    book.step(make_limit(2.0, Side::Sell, 99.0, 5));     // id 2: great price for a buyer
    book.step(make_limit(3.0, Side::Buy, 99.5, 4));      // id 3 crosses
    REQUIRE_FALSE(book.fills().empty());
    CHECK(book.fills()[0].resting_id == 1);  // market order first despite 99.0 limit
    CHECK(book.fills()[0].price == 99.5);    // resting market: incoming limit prices it
}

TEST_CASE("market-against-market pairs price at the simulator midprice") {
    OrderBook book(100.0);
    book.step(make_market(1.0, Side::Sell, 5));
    book.step(make_market(2.0, Side::Buy, 5));
    REQUIRE(book.fills().size() == 1);
    // Both events recorded the anchor-only view: midprice held at 100.
    CHECK(book.fills()[0].price == 100.0);
    CHECK(book.resting_order_count() == 0);
}

TEST_CASE("the crossing rule prices market pairs at the opposite touch") {
    OrderBook book(100.0, MarketPriceRule::Crossing);
    book.step(make_market(1.0, Side::Sell, 5));
    book.step(make_market(2.0, Side::Buy, 5));
    REQUIRE(book.fills().size() == 1);
    CHECK(book.fills()[0].price == 100.0);  // ask anchor still active => touch = anchor
}

TEST_CASE("series points capture the pre-match view including the incoming order") {
    OrderBook book(100.0);
    book.step(make_limit(1.0, Side::Sell, 100.2, 5));
    // Crossing buy at 101: the recorded view is crossed (spread negative).
    book.step(make_limit(2.0, Side::Buy, 101.0, 5));
    REQUIRE(book.series().size() == 2);
    const SeriesPoint& pt = book.series()[1];
    CHECK(pt.midprice == 0.5 * (101.0 + 100.2));
    CHECK(pt.spread == doctest::Approx(100.2 - 101.0).epsilon(1e-12));
    CHECK(pt.bid_volume == 5.0);
    CHECK(pt.ask_volume == 5.0);
    CHECK(pt.imbalance == 0.0);
    // The recorded (temporary) midprice becomes the next event's reference.
    CHECK(book.sim_midprice() == pt.midprice);
}

TEST_CASE("cancels hit the nearest level and tie-break on arrival order") {
    OrderBook book(100.0);
    book.step(make_limit(1.0, Side::Buy, 99.0, 5));   // id 1
    book.step(make_limit(2.0, Side::Buy, 101.0, 5));  // id 2 (temporarily crossing the anchor is fine: no asks)
    // Target 100.0 is exactly equidistant; id 1 arrived first.
    book.step(make_limit(3.0, Side::Buy, 100.0, 3, Action::Cancel));
    REQUIRE(book.deletes().size() == 1);
    CHECK(book.deletes()[0].matched);
    CHECK(book.deletes()[0].resting_id == 1);
    CHECK(book.deletes()[0].volume_removed == 3);
    CHECK(book.bid_volume() == 7);  // partial cancel shrank id 1 to 2 shares

    // Cancel for at least the resting volume removes the order entirely.
    book.step(make_limit(4.0, Side::Buy, 99.0, 99, Action::Cancel));
    CHECK(book.deletes()[1].volume_removed == 2);
    CHECK(book.bid_volume() == 5);
    CHECK(book.resting_order_count() == 1);
}

TEST_CASE("unpriced cancels target the current midprice") {
    OrderBook book(100.0);
    book.step(make_limit(1.0, Side::Sell, 100.5, 5));   // recorded mid = (100 + 100.5)/2 = 100.25
    book.step(make_limit(2.0, Side::Sell, 108.0, 5));
    // Unpriced cancel: target is the prevailing midprice, nearest ask level is 100.5.
    book.step(make_market(3.0, Side::Sell, 5, Action::Cancel));
    REQUIRE(book.deletes().size() == 1);
    CHECK(book.deletes()[0].matched);
    CHECK(book.deletes()[0].resting_id == 1);
}

TEST_CASE("cancels on an empty side record an unmatched delete") {
    OrderBook book(100.0);
    book.step(make_limit(1.0, Side::Buy, 99.0, 5, Action::Cancel));
    REQUIRE(book.deletes().size() == 1);
    CHECK_FALSE(book.deletes()[0].matched);
    CHECK(book.deletes()[0].resting_id == 0);
    CHECK(book.deletes()[0].volume_removed == 0);
    CHECK(book.series().size() == 1);  // cancels still record a series point
}

TEST_CASE("market orders cannot be cancelled away") {
    OrderBook book(100.0);
    book.step(make_market(1.0, Side::Buy, 5));
    book.step(make_market(2.0, Side::Buy, 5, Action::Cancel));
    CHECK_FALSE(book.deletes()[0].matched);
    CHECK(book.bid_volume() == 5);
}

// ---- helpers and guards -------------------------------------------------------

TEST_CASE("depth helper and touch helper resolve against the live book") {
    OrderBook book(200.0);
    CHECK(book.order_price_from_depth(50.0) == 200.0 + 0.005 * 200.0);
    CHECK(book.order_price_from_depth(-25.0) == 200.0 - 0.0025 * 200.0);
    CHECK(book.market_touch_price(Side::Buy) == 200.0);  // anchor ask

    book.step(make_limit(1.0, Side::Sell, 200.5, 2));
    CHECK(book.market_touch_price(Side::Buy) == 200.5);
    book.step(make_market(2.0, Side::Buy, 2));  // consume the only ask
    try {
        book.market_touch_price(Side::Buy);
        FAIL("expected EmptyOppositeSide");
    } catch (const Error& e) {
        CHECK(e.code() == "EmptyOppositeSide");
    }
}

TEST_CASE("the simulator rejects clock regressions and bad volumes") {
    OrderBook book(100.0);
    book.step(make_limit(5.0, Side::Buy, 99.0, 1));
    try {
        book.step(make_limit(4.0, Side::Buy, 99.0, 1));
        FAIL("expected ClockRegression");
    } catch (const Error& e) {
        CHECK(e.code() == "ClockRegression");
    }
    TradeEvent ev = make_limit(6.0, Side::Buy, 99.0, 1);
    ev.volume = 0;
    CHECK_THROWS_AS(book.step(ev), Error);
    CHECK_THROWS_AS(OrderBook(0.0), Error);
    CHECK_THROWS_AS(OrderBook(-10.0), Error);
}

TEST_CASE("interarrival records use the previous event time") {
    OrderBook book(100.0);
    book.step(make_limit(1.5, Side::Buy, 99.0, 1));
    book.step(make_limit(4.0, Side::Sell, 101.0, 1));
    book.step(make_limit(4.0, Side::Sell, 101.0, 1));
    REQUIRE(book.orders().size() == 3);
    CHECK(book.orders()[0].dt == 1.5);  // from session open
    CHECK(book.orders()[1].dt == 2.5);
    CHECK(book.orders()[2].dt == 0.0);  // exact tie
    CHECK(book.orders()[0].depth == doctest::Approx((99.0 - 100.0) / 100.0).epsilon(1e-12));
}

// ---- randomized property suite against the naive reference ----------------------

TEST_CASE("library and naive reference agree exactly on random streams") {
    Rng rng(2024);
    for (int rep = 0; rep < 500; ++rep) {
        const EventStream stream = random_stream(rng, 60);
        const SimResult lib = run_simulation(stream);
        const NaiveBook ref = run_naive(stream);
        const std::string diff = diff_sim(lib, ref);
        if (!diff.empty()) {
            CAPTURE(rep);
            FAIL(diff);
        }
    }
}

TEST_CASE("the crossing price rule also matches the naive reference") {
    Rng rng(77);
    for (int rep = 0; rep < 100; ++rep) {
        const EventStream stream = random_stream(rng, 60);
        const SimResult lib = run_simulation(stream, MarketPriceRule::Crossing);
        const NaiveBook ref = run_naive(stream, MarketPriceRule::Crossing);
        const std::string diff = diff_sim(lib, ref);
        if (!diff.empty()) {
            CAPTURE(rep);
            FAIL(diff);
        }
    }
}

TEST_CASE("volume is conserved through matching, cancels and resting state") {
    Rng rng(31);
    for (int rep = 0; rep < 200; ++rep) {
        const EventStream stream = random_stream(rng, 80);
        OrderBook book(stream.meta.opening_price);
        std::int64_t added = 0;
        for (const TradeEvent& ev : stream.events) {
            book.step(ev);
            if (ev.action == Action::Add) added += ev.volume;
        }
        std::int64_t filled = 0;
        for (const Fill& f : book.fills()) filled += f.volume;
        std::int64_t cancelled = 0;
        for (const DeleteRecord& d : book.deletes()) cancelled += d.volume_removed;
        std::int64_t resting = 0;
        std::size_t count = 0;
        for (Side side : {Side::Buy, Side::Sell}) {
            for (const RestingOrder& o : book.snapshot(side)) {
                resting += o.volume;
                ++count;
                CHECK(o.volume > 0);
            }
        }
        // Every fill consumes the traded volume from both participants.
        CHECK(added == 2 * filled + cancelled + resting);
        CHECK(count == book.resting_order_count());
        CHECK(book.bid_volume() + book.ask_volume() == resting);
        CHECK_FALSE(book.book_crossed());
    }
}

TEST_CASE("replaying a stream is deterministic") {
    Rng rng(99);
    const EventStream stream = random_stream(rng, 300);
    const SimResult a = run_simulation(stream);
    const SimResult b = run_simulation(stream);
    CHECK(diff_sim(a, b).empty());
}

TEST_CASE("run_simulation validates its input stream") {
    EventStream empty;
    empty.meta = {"A", 1e6, 100.0};
    CHECK_THROWS_AS(run_simulation(empty), Error);
}

TEST_CASE("snapshots list the market queue first, then levels best-first in FIFO") {
    OrderBook book(100.0);
    book.step(make_limit(1.0, Side::Buy, 99.0, 1));   // id 1
    book.step(make_limit(2.0, Side::Buy, 99.5, 2));   // id 2 (better)
    book.step(make_limit(3.0, Side::Buy, 99.5, 3));   // id 3 (same level, later)
    book.step(make_market(4.0, Side::Buy, 4));        // id 4 rests in the market queue
    const auto snap = book.snapshot(Side::Buy);
    REQUIRE(snap.size() == 4);
    CHECK(snap[0].order_id == 4);
    CHECK(snap[1].order_id == 2);
    CHECK(snap[2].order_id == 3);
    CHECK(snap[3].order_id == 1);
}

// ---- record csv round-trips ------------------------------------------------------

TEST_CASE("fill, series and order records round-trip through csv") {
    Rng rng(55);
    const EventStream stream = random_stream(rng, 120);
    const SimResult sim = run_simulation(stream);
    REQUIRE_FALSE(sim.fills.empty());

    TempDir dir;
    write_fills_csv(sim.fills, dir.file("fills.csv"));
    write_series_csv(sim.series, dir.file("series.csv"));
    write_orders_csv(sim.orders, dir.file("orders.csv"));

    const auto fills = read_fills_csv(dir.file("fills.csv"));
    REQUIRE(fills.size() == sim.fills.size());
    for (std::size_t i = 0; i < fills.size(); ++i) {
        CHECK(fills[i].incoming_id == sim.fills[i].incoming_id);
        CHECK(fills[i].resting_id == sim.fills[i].resting_id);
        CHECK(fills[i].price == sim.fills[i].price);
        CHECK(fills[i].volume == sim.fills[i].volume);
        CHECK(fills[i].time == sim.fills[i].time);
        CHECK(fills[i].time_since_resting == sim.fills[i].time_since_resting);
    }
    const auto series = read_series_csv(dir.file("series.csv"));
    REQUIRE(series.size() == sim.series.size());
    for (std::size_t i = 0; i < series.size(); ++i) {
        CHECK(series[i].time == sim.series[i].time);
        CHECK(series[i].midprice == sim.series[i].midprice);
        CHECK(series[i].spread == sim.series[i].spread);
        CHECK(series[i].imbalance == sim.series[i].imbalance);
    }
    const auto orders = read_orders_csv(dir.file("orders.csv"));
    REQUIRE(orders.size() == sim.orders.size());
    for (std::size_t i = 0; i < orders.size(); ++i) {
        CHECK(orders[i].dt == sim.orders[i].dt);
        CHECK(orders[i].depth == sim.orders[i].depth);
        CHECK(orders[i].volume == sim.orders[i].volume);
        CHECK(orders[i].action == sim.orders[i].action);
        CHECK(orders[i].side == sim.orders[i].side);
    }

    write_text_file(dir.file("bad.csv"), "wrong header\n");
    CHECK_THROWS_AS(read_fills_csv(dir.file("bad.csv")), Error);
}
