#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "flowsim/error.hpp"
#include "flowsim/features.hpp"
#include "flowsim/rng.hpp"
#include "flowsim/tokenizer.hpp"

#include "test_util.hpp"

using namespace flowsim;
using namespace testutil;

namespace {

// Shared calibration corpus: several assets with well-separated liquidity.
std::vector<EventStream> make_corpus() {
    std::vector<EventStream> corpus;
    Rng rng(101);
    const double advs[3] = {1e5, 1e6, 1e7};
    for (int k = 0; k < 3; ++k) {
        EventStream s = random_stream(rng, 1200, 100.0 * (k + 1), advs[k]);
        s.meta.asset_id = std::string("ASSET") + std::to_string(k);
        corpus.push_back(std::move(s));
    }
    return corpus;
}

}  // namespace

// ---- composite token arithmetic ---------------------------------------------

TEST_CASE("the documented anchor token composes and splits") {
    TradeDigits d;
    d.action = 0;
    d.side = 1;
    d.depth = 7;
    d.volume = 7;
    d.time = 11;
    CHECK(compose_trade_token(d) == 6011);
    const TradeDigits back = split_trade_token(6011);
    CHECK(back.action == 0);
    CHECK(back.side == 1);
    CHECK(back.depth == 7);
    CHECK(back.volume == 7);
    CHECK(back.time == 11);
}

TEST_CASE("token mapping is a bijection over the full vocabulary") {
    const TokenBases bases;
    REQUIRE(bases.vocab_size() == 16384);
    std::vector<bool> seen(16384, false);
    for (int a = 0; a < 2; ++a)
        for (int s = 0; s < 2; ++s)
            for (int d = 0; d < 16; ++d)
                for (int v = 0; v < 16; ++v)
                    for (int t = 0; t < 16; ++t) {
                        TradeDigits dig{a, s, d, v, t};
                        const int token = compose_trade_token(dig, bases);
                        REQUIRE(token >= 0);
                        REQUIRE(token < 16384);
                        REQUIRE_FALSE(seen[static_cast<std::size_t>(token)]);
                        seen[static_cast<std::size_t>(token)] = true;
                        const TradeDigits back = split_trade_token(token, bases);
                        REQUIRE(back.action == a);
                        REQUIRE(back.side == s);
                        REQUIRE(back.depth == d);
                        REQUIRE(back.volume == v);
                        REQUIRE(back.time == t);
                    }
    for (bool b : seen) REQUIRE(b);
}

TEST_CASE("token composition is plain mixed-base place value") {
    // Independent little-endian reconstruction on non-default bases.
    const TokenBases bases{4, 3, 5};
    CHECK(bases.vocab_size() == 2 * 2 * 4 * 3 * 5);
    Rng rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        TradeDigits d;
        d.action = static_cast<int>(rng.index(2));
        d.side = static_cast<int>(rng.index(2));
        d.depth = static_cast<int>(rng.index(4));
        d.volume = static_cast<int>(rng.index(3));
        d.time = static_cast<int>(rng.index(5));
        const int expected =
            d.time + bases.time * (d.volume + bases.volume * (d.depth + bases.depth * (d.side + 2 * d.action)));
        CHECK(compose_trade_token(d, bases) == expected);
    }
}

TEST_CASE("token range violations raise data errors") {
    CHECK_THROWS_AS(split_trade_token(-1), Error);
    CHECK_THROWS_AS(split_trade_token(16384), Error);
    TradeDigits d;
    d.depth = 16;
    CHECK_THROWS_AS(compose_trade_token(d), Error);
    d.depth = 0;
    d.action = 2;
    CHECK_THROWS_AS(compose_trade_token(d), Error);
    d.action = 0;
    d.time = -1;
    CHECK_THROWS_AS(compose_trade_token(d), Error);
}

// ---- bin contract on hand-built specs ----------------------------------------

namespace {

BinSpec hand_double_sided() {
    BinSpec spec;
    spec.feature = "demo";
    spec.strategy = BinStrategy::EqualFrequency;
    spec.outlier_mode = OutlierMode::DoubleSided;
    spec.n_bins = 4;  // 1 lower outlier, 2 regular, 1 upper outlier
    spec.lower_threshold = -0.5;
    spec.upper_threshold = 2.5;
    spec.edges = {0.0, 1.0, 2.0};
    spec.representatives = {-0.7, 0.4, 1.6, 3.0};
    spec.check_consistent();
    return spec;
}

}  // namespace

TEST_CASE("double-sided bins: outliers, half-open edges, in-range clamping") {
    const BinSpec spec = hand_double_sided();
    CHECK(spec.n_regular() == 2);
    CHECK(spec.first_regular() == 1);

    CHECK(spec.bin_index(-0.6) == 0);   // below the lower threshold
    CHECK(spec.bin_index(-0.5) == 1);   // at the threshold: in range, clamps up
    CHECK(spec.bin_index(-0.2) == 1);   // in range but below the edge span
    CHECK(spec.bin_index(0.0) == 1);    // left-closed
    CHECK(spec.bin_index(0.999) == 1);
    CHECK(spec.bin_index(1.0) == 2);
    CHECK(spec.bin_index(2.0) == 2);    // last regular bin is right-closed
    CHECK(spec.bin_index(2.4) == 2);    // in range above the edge span
    CHECK(spec.bin_index(2.5) == 2);    // threshold itself is in range
    CHECK(spec.bin_index(2.6) == 3);    // upper outlier

    CHECK(spec.representative(0) == -0.7);
    CHECK(spec.representative(3) == 3.0);
    CHECK_THROWS_AS(spec.representative(-1), Error);
    CHECK_THROWS_AS(spec.representative(4), Error);
    CHECK_THROWS_AS(spec.bin_index(std::numeric_limits<double>::quiet_NaN()), Error);
}

TEST_CASE("upper-only bins have no lower outlier") {
    BinSpec spec;
    spec.feature = "u";
    spec.strategy = BinStrategy::EqualWidthLog;
    spec.outlier_mode = OutlierMode::UpperOnly;
    spec.n_bins = 3;  // 2 regular + upper outlier
    spec.lower_threshold = -std::numeric_limits<double>::infinity();
    spec.upper_threshold = 4.0;
    spec.edges = {0.0, 2.0, 4.0};
    spec.representatives = {1.0, 3.0, 6.0};
    spec.check_consistent();

    CHECK(spec.first_regular() == 0);
    CHECK(spec.bin_index(-100.0) == 0);  // clamps into the first regular bin
    CHECK(spec.bin_index(1.99) == 0);
    CHECK(spec.bin_index(2.0) == 1);
    CHECK(spec.bin_index(4.0) == 1);
    CHECK(spec.bin_index(4.01) == 2);
}

TEST_CASE("check_consistent rejects malformed specs") {
    BinSpec spec = hand_double_sided();
    spec.edges = {0.0, 1.0};  // wrong count
    CHECK_THROWS_AS(spec.check_consistent(), Error);
    spec = hand_double_sided();
    spec.edges = {0.0, 2.0, 1.0};  // not ascending
    CHECK_THROWS_AS(spec.check_consistent(), Error);
    spec = hand_double_sided();
    spec.representatives = {0.0};
    CHECK_THROWS_AS(spec.check_consistent(), Error);
    spec = hand_double_sided();
    spec.lower_threshold = 5.0;  // above the upper threshold
    CHECK_THROWS_AS(spec.check_consistent(), Error);
}

// ---- calibration ---------------------------------------------------------------

TEST_CASE("calibration produces the canonical schema layout") {
    const TokenSchema schema = calibrate_tokenizer(make_corpus());
    schema.check_consistent();
    CHECK(schema.vocab_size() == 16384);
    CHECK(schema.n_price_levels() == 32);
    CHECK(schema.depth.n_bins == 16);
    CHECK(schema.volume.n_bins == 16);
    CHECK(schema.time.n_bins == 16);
    CHECK(schema.depth.outlier_mode == OutlierMode::DoubleSided);
    CHECK(schema.price_level.outlier_mode == OutlierMode::DoubleSided);
    CHECK(schema.volume.outlier_mode == OutlierMode::UpperOnly);
    CHECK(schema.time.outlier_mode == OutlierMode::UpperOnly);
}

TEST_CASE("equal-frequency depth bins balance the calibration mass") {
    // Equal-frequency balance only holds when the feature distribution is
    // continuous, so this corpus uses a fresh price and timestamp per event
    // (the shared corpus builds deliberate ties that collapse bins).
    std::vector<EventStream> corpus;
    Rng rng(404);
    for (int k = 0; k < 3; ++k) {
        EventStream s;
        s.meta.asset_id = std::string("SMOOTH") + std::to_string(k);
        const double p0 = 100.0 * (k + 1);
        s.meta.opening_price = p0;
        s.meta.average_daily_volume = 1e5 * std::pow(10.0, k);
        s.scope = Scope::Market;
        double t = 0.0;
        for (int i = 0; i < 1200; ++i) {
            t += rng.exponential(1.0);
            const auto side = rng.bernoulli(0.5) ? Side::Buy : Side::Sell;
            const double price = p0 * (1.0 + rng.normal(0.0, 30e-4));
            const std::int64_t volume = 1 + static_cast<std::int64_t>(rng.index(40));
            s.events.push_back(make_limit(t, side, price, volume, Action::Add));
        }
        corpus.push_back(std::move(s));
    }
    const TokenSchema schema = calibrate_tokenizer(corpus);

    std::vector<double> depth_vals;
    for (const EventStream& s : corpus)
        for (const FeatureVector& fv : featurize_stream(s, TokenizerConfig{}.midprice_halflife))
            depth_vals.push_back(fv.price_depth);

    std::vector<std::size_t> counts(16, 0);
    for (double v : depth_vals) counts[static_cast<std::size_t>(schema.depth.bin_index(v))]++;

    // ~1% of the mass in each outlier bin at the default percentiles.
    const double n = static_cast<double>(depth_vals.size());
    CHECK(counts[0] / n < 0.02);
    CHECK(counts[15] / n < 0.02);
    CHECK(counts[0] >= 1);
    CHECK(counts[15] >= 1);

    double in_range = 0.0;
    for (int b = 1; b <= 14; ++b) in_range += static_cast<double>(counts[static_cast<std::size_t>(b)]);
    const double mean = in_range / 14.0;
    for (int b = 1; b <= 14; ++b) {
        CHECK(static_cast<double>(counts[static_cast<std::size_t>(b)]) > 0.6 * mean);
        CHECK(static_cast<double>(counts[static_cast<std::size_t>(b)]) < 1.4 * mean);
    }
}

TEST_CASE("equal-width-log bins have uniform edge spacing") {
    const TokenSchema schema = calibrate_tokenizer(make_corpus());
    for (const BinSpec* spec : {&schema.volume, &schema.time}) {
        const auto& e = spec->edges;
        REQUIRE(e.size() == 16);  // 15 regular bins + 1
        const double width = (e.back() - e.front()) / 15.0;
        for (std::size_t i = 1; i < e.size(); ++i)
            CHECK(std::abs((e[i] - e[i - 1]) - width) < 1e-9 * std::max(1.0, std::abs(width)));
    }
}

TEST_CASE("representatives are in-bin medians of the calibration sample") {
    const auto corpus = make_corpus();
    const TokenSchema schema = calibrate_tokenizer(corpus);

    std::vector<double> vals;
    for (const EventStream& s : corpus)
        for (const FeatureVector& fv : featurize_stream(s, TokenizerConfig{}.midprice_halflife))
            vals.push_back(fv.price_depth);

    std::map<int, std::vector<double>> buckets;
    for (double v : vals) buckets[schema.depth.bin_index(v)].push_back(v);
    for (auto& [bin, bucket] : buckets) {
        std::sort(bucket.begin(), bucket.end());
        const std::size_t n = bucket.size();
        const double median = n % 2 ? bucket[n / 2] : 0.5 * (bucket[n / 2 - 1] + bucket[n / 2]);
        CHECK(schema.depth.representative(bin) == median);
        // The representative re-bins into its own bin.
        CHECK(schema.depth.bin_index(schema.depth.representative(bin)) == bin);
    }
}

TEST_CASE("liquidity terciles are half-open on the adv axis") {
    const TokenSchema schema = calibrate_tokenizer(make_corpus());
    REQUIRE(schema.liquidity_edges[0] > 1e5);
    REQUIRE(schema.liquidity_edges[1] > schema.liquidity_edges[0]);
    CHECK(schema.liquidity_bin(1e5) == 0);
    CHECK(schema.liquidity_bin(1e6) == 1);
    CHECK(schema.liquidity_bin(1e7) == 2);
    CHECK(schema.liquidity_bin(schema.liquidity_edges[0]) == 1);  // left edge belongs up
    CHECK(schema.liquidity_bin(schema.liquidity_edges[1]) == 2);
    CHECK_THROWS_AS(schema.liquidity_bin(0.0), Error);
    CHECK_THROWS_AS(schema.liquidity_bin(-5.0), Error);
}

TEST_CASE("calibration rejects small or degenerate corpora") {
    Rng rng(11);
    std::vector<EventStream> tiny = {random_stream(rng, 10)};
    try {
        calibrate_tokenizer(tiny);
        FAIL("expected InsufficientData");
    } catch (const Error& e) {
        CHECK(e.code() == "InsufficientData");
    }

    // Constant volume makes the volume feature degenerate.
    std::vector<EventStream> flat = {random_stream(rng, 500)};
    for (TradeEvent& ev : flat[0].events) ev.volume = 5;
    try {
        calibrate_tokenizer(flat);
        FAIL("expected DegenerateFeature");
    } catch (const Error& e) {
        CHECK(e.code() == "DegenerateFeature");
    }
}

// ---- encode / detokenize -------------------------------------------------------

TEST_CASE("encode_stream equals per-event encoding and stays in range") {
    const auto corpus = make_corpus();
    const TokenSchema schema = calibrate_tokenizer(corpus);
    const EventStream& s = corpus[2];

    const std::vector<ContextTuple> tuples = encode_stream(s, schema, TokenizerConfig{}.midprice_halflife);
    REQUIRE(tuples.size() == s.events.size());

    std::size_t i = 0;
    for (const FeatureVector& fv : featurize_stream(s, TokenizerConfig{}.midprice_halflife)) {
        const ContextTuple t = encode_event(fv, s.meta.average_daily_volume, s.scope, schema);
        CHECK(t.trade == tuples[i].trade);
        CHECK(t.price_level == tuples[i].price_level);
        CHECK(t.liquidity == tuples[i].liquidity);
        CHECK(t.scope == tuples[i].scope);
        REQUIRE(tuples[i].trade >= 0);
        REQUIRE(tuples[i].trade < schema.vocab_size());
        REQUIRE(tuples[i].price_level >= 0);
        REQUIRE(tuples[i].price_level < 32);
        CHECK(tuples[i].liquidity == 2);  // highest-adv asset
        CHECK(tuples[i].scope == 0);
        ++i;

        // Digit consistency: the composed token carries the event identity.
        const TradeDigits d = split_trade_token(t.trade, schema.bases());
        CHECK(d.action == static_cast<int>(fv.action));
        CHECK(d.side == static_cast<int>(fv.side));
    }
}

TEST_CASE("scope flag propagates into the tuple") {
    auto corpus = make_corpus();
    const TokenSchema schema = calibrate_tokenizer(corpus);
    corpus[0].scope = Scope::Participant;
    const auto tuples = encode_stream(corpus[0], schema, 2.0);
    for (const ContextTuple& t : tuples) CHECK(t.scope == 1);
}

TEST_CASE("detokenize maps digits onto representatives deterministically") {
    const TokenSchema schema = calibrate_tokenizer(make_corpus());
    Rng rng(23);
    for (int rep = 0; rep < 300; ++rep) {
        TradeDigits d;
        d.action = static_cast<int>(rng.index(2));
        d.side = static_cast<int>(rng.index(2));
        d.depth = static_cast<int>(rng.index(16));
        d.volume = static_cast<int>(rng.index(16));
        d.time = static_cast<int>(rng.index(16));
        const OrderIntent intent = detokenize(d, schema);
        const OrderIntent again = detokenize(d, schema);

        CHECK(intent.depth_ratio == schema.depth.representative(d.depth));
        CHECK(intent.volume ==
              std::max<std::int64_t>(1, std::llround(std::expm1(schema.volume.representative(d.volume)))));
        CHECK(intent.dt_seconds == std::max(0.0, std::expm1(schema.time.representative(d.time))));
        CHECK(intent.action == (d.action == 0 ? Action::Add : Action::Cancel));
        CHECK(intent.side == (d.side == 0 ? Side::Buy : Side::Sell));
        CHECK_FALSE(intent.is_market_order);
        CHECK(intent.volume >= 1);
        CHECK(intent.dt_seconds >= 0.0);

        CHECK(again.depth_ratio == intent.depth_ratio);
        CHECK(again.volume == intent.volume);
        CHECK(again.dt_seconds == intent.dt_seconds);
    }
}

// ---- persistence ----------------------------------------------------------------

TEST_CASE("schemas round-trip through their parameter file exactly") {
    const TokenSchema schema = calibrate_tokenizer(make_corpus());
    TempDir dir;
    const std::string path = dir.file("schema.params");
    save_schema(schema, path);
    const TokenSchema back = load_schema(path);

    for (auto [a, b] : {std::pair{&schema.depth, &back.depth}, std::pair{&schema.volume, &back.volume},
                        std::pair{&schema.time, &back.time}, std::pair{&schema.price_level, &back.price_level}}) {
        CHECK(a->strategy == b->strategy);
        CHECK(a->outlier_mode == b->outlier_mode);
        CHECK(a->n_bins == b->n_bins);
        CHECK(a->lower_threshold == b->lower_threshold);
        CHECK(a->upper_threshold == b->upper_threshold);
        CHECK(a->edges == b->edges);
        CHECK(a->representatives == b->representatives);
    }
    CHECK(schema.liquidity_edges[0] == back.liquidity_edges[0]);
    CHECK(schema.liquidity_edges[1] == back.liquidity_edges[1]);
}

TEST_CASE("schema loading rejects version and structure corruption") {
    const TokenSchema schema = calibrate_tokenizer(make_corpus());
    TempDir dir;
    const std::string path = dir.file("schema.params");
    save_schema(schema, path);

    std::string text = read_text_file(path);
    write_text_file(path, "tokenizer-schema v999\n" + text.substr(text.find('\n') + 1));
    try {
        load_schema(path);
        FAIL("expected SchemaVersionMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == "SchemaVersionMismatch");
    }

    // Drop a required section.
    std::string no_time = text;
    const auto pos = no_time.find("[time]");
    REQUIRE(pos != std::string::npos);
    no_time.replace(pos, 6, "[late]");
    write_text_file(path, no_time);
    CHECK_THROWS_AS(load_schema(path), Error);
}
