#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsim/events.hpp"
#include "flowsim/features.hpp"

namespace flowsim {

enum class BinStrategy : std::uint8_t { EqualFrequency, EqualWidthLog };
enum class OutlierMode : std::uint8_t { UpperOnly, DoubleSided };

// One feature's discretization. n_bins counts the reserved outlier bins:
// DoubleSided lays out [lower outlier | n_bins-2 regular | upper outlier],
// UpperOnly [n_bins-1 regular | upper outlier]. Regular bins are half-open
// [edge_i, edge_{i+1}) with the last one closed; in-range values outside the
// edge span clamp into the nearest regular bin. Values are in the transform
// domain noted by `transform` (raw ratio, or log1p of the raw quantity).
struct BinSpec {
    std::string feature;
    BinStrategy strategy = BinStrategy::EqualFrequency;
    OutlierMode outlier_mode = OutlierMode::UpperOnly;
    int n_bins = 0;
    double lower_threshold = 0.0;  // -inf when UpperOnly
    double upper_threshold = 0.0;
    std::vector<double> edges;            // n_regular()+1, strictly ascending
    std::vector<double> representatives;  // n_bins entries, transform domain

    int n_regular() const { return n_bins - (outlier_mode == OutlierMode::DoubleSided ? 2 : 1); }
    int first_regular() const { return outlier_mode == OutlierMode::DoubleSided ? 1 : 0; }
    int bin_index(double value) const;
    double representative(int bin) const;  // throws Data TokenOutOfRange
    void check_consistent() const;         // throws Data CorruptSchema
};

struct TokenizerConfig {
    int depth_bins = 16;
    int volume_bins = 16;
    int time_bins = 16;
    int price_level_bins = 32;
    double lower_percentile = 1.0;   // double-sided features
    double upper_percentile = 99.0;
    double midprice_halflife = 2.0;  // seconds
    int min_calibration_events = 64;
};

// Digit order inside the composite trade token, most significant first:
// action, side, depth, volume, time.
struct TradeDigits {
    int action = 0;  // 0 add, 1 cancel
    int side = 0;    // 0 buy, 1 sell
    int depth = 0;
    int volume = 0;
    int time = 0;
};

// Per-feature digit bases of the composite token. Defaults give the
// canonical vocabulary 2*2*16*16*16 = 16384.
struct TokenBases {
    int depth = 16;
    int volume = 16;
    int time = 16;

    int vocab_size() const { return 2 * 2 * depth * volume * time; }
};

// Mixed-base composition: token = ((((a*2 + s)*depth + d)*volume + v)*time + t.
int compose_trade_token(const TradeDigits& digits, const TokenBases& bases = {});
TradeDigits split_trade_token(int token, const TokenBases& bases = {});  // throws Data TokenOutOfRange

// Model input tuple: [liquidity tercile, scope flag, price-level bin, trade token].
struct ContextTuple {
    int liquidity = 0;    // 0..2
    int scope = 0;        // 0 market, 1 participant
    int price_level = 0;  // 0..price_level_bins-1
    int trade = 0;        // composite trade token
};

inline constexpr const char* kSchemaHeader = "tokenizer-schema v1";

struct TokenSchema {
    BinSpec depth;        // equal-frequency, double-sided, ratio domain
    BinSpec volume;       // equal-width over log1p shares, upper outlier
    BinSpec time;         // equal-width over log1p seconds, upper outlier
    BinSpec price_level;  // equal-frequency, double-sided, ratio domain
    double liquidity_edges[2] = {0.0, 0.0};  // ADV terciles

    TokenBases bases() const { return {depth.n_bins, volume.n_bins, time.n_bins}; }
    int vocab_size() const { return bases().vocab_size(); }
    int n_price_levels() const { return price_level.n_bins; }
    int liquidity_bin(double adv) const;  // 0..2
    void check_consistent() const;
};

// Fits bin edges, outlier thresholds and representatives on a calibration
// corpus. Streams are featurized with cfg.midprice_halflife.
// Throws Data InsufficientData / DegenerateFeature.
TokenSchema calibrate_tokenizer(const std::vector<EventStream>& corpus, const TokenizerConfig& cfg = {});

// Feature vector -> model input tuple (adv picks the liquidity tercile).
ContextTuple encode_event(const FeatureVector& fv, double adv, Scope scope, const TokenSchema& schema);
std::vector<ContextTuple> encode_stream(const EventStream& stream, const TokenSchema& schema,
                                        double midprice_halflife);

// Digits -> executable intent via per-bin representatives. Deterministic.
OrderIntent detokenize(const TradeDigits& digits, const TokenSchema& schema);

void save_schema(const TokenSchema& schema, const std::string& path);
TokenSchema load_schema(const std::string& path);  // throws Data SchemaVersionMismatch / CorruptSchema

}  // namespace flowsim
