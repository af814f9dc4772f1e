#include "flowsim/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "flowsim/error.hpp"
#include "flowsim/text_io.hpp"

namespace flowsim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const char* strategy_name(BinStrategy s) {
    return s == BinStrategy::EqualFrequency ? "equal_frequency" : "equal_width_log";
}
const char* outlier_name(OutlierMode m) {
    return m == OutlierMode::DoubleSided ? "double_sided" : "upper_only";
}
BinStrategy parse_strategy(const std::string& s) {
    if (s == "equal_frequency") return BinStrategy::EqualFrequency;
    if (s == "equal_width_log") return BinStrategy::EqualWidthLog;
    raise_data("CorruptSchema", "unknown bin strategy '" + s + "'");
}
OutlierMode parse_outlier(const std::string& s) {
    if (s == "double_sided") return OutlierMode::DoubleSided;
    if (s == "upper_only") return OutlierMode::UpperOnly;
    raise_data("CorruptSchema", "unknown outlier mode '" + s + "'");
}

// Linear-interpolation quantile of a sorted sample, q in [0, 1].
double quantile_sorted(const std::vector<double>& x, double q) {
    const double pos = q * static_cast<double>(x.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= x.size()) return x.back();
    const double frac = pos - static_cast<double>(i);
    return x[i] + frac * (x[i + 1] - x[i]);
}

double median_sorted(const std::vector<double>& x) {
    const std::size_t n = x.size();
    return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

std::size_t count_distinct_sorted(const std::vector<double>& x) {
    std::size_t d = x.empty() ? 0 : 1;
    for (std::size_t i = 1; i < x.size(); ++i)
        if (x[i] != x[i - 1]) ++d;
    return d;
}

BinSpec fit_bin_spec(std::vector<double> values, const std::string& feature, BinStrategy strategy,
                     OutlierMode outlier_mode, int n_bins, double lower_pct, double upper_pct) {
    BinSpec spec;
    spec.feature = feature;
    spec.strategy = strategy;
    spec.outlier_mode = outlier_mode;
    spec.n_bins = n_bins;
    if (spec.n_regular() < 2)
        raise_data("InsufficientData", feature + ": bin count " + std::to_string(n_bins) + " too small");

    for (double v : values)
        if (!std::isfinite(v)) raise_numeric("NonFiniteFeature", feature + ": non-finite calibration value");
    std::sort(values.begin(), values.end());
    const std::size_t distinct = count_distinct_sorted(values);
    if (distinct <= 1) raise_data("DegenerateFeature", feature + ": all calibration values identical");
    if (distinct < static_cast<std::size_t>(spec.n_regular()))
        raise_data("InsufficientData", feature + ": only " + std::to_string(distinct) +
                                           " distinct values for " + std::to_string(spec.n_regular()) +
                                           " regular bins");

    spec.upper_threshold = quantile_sorted(values, upper_pct / 100.0);
    spec.lower_threshold =
        outlier_mode == OutlierMode::DoubleSided ? quantile_sorted(values, lower_pct / 100.0) : -kInf;

    std::vector<double> in_range;
    in_range.reserve(values.size());
    for (double v : values)
        if (v >= spec.lower_threshold && v <= spec.upper_threshold) in_range.push_back(v);
    if (in_range.size() < 2 || in_range.front() == in_range.back())
        raise_data("DegenerateFeature", feature + ": in-range calibration values are degenerate");

    const int n_reg = spec.n_regular();
    spec.edges.resize(static_cast<std::size_t>(n_reg) + 1);
    if (strategy == BinStrategy::EqualFrequency) {
        for (int i = 0; i <= n_reg; ++i)
            spec.edges[i] = quantile_sorted(in_range, static_cast<double>(i) / n_reg);
    } else {
        const double lo = in_range.front(), hi = in_range.back();
        for (int i = 0; i <= n_reg; ++i)
            spec.edges[i] = lo + (hi - lo) * static_cast<double>(i) / n_reg;
        spec.edges.back() = hi;
    }
    // Quantiles can collide on heavy-mass values; nudge to keep the bin count
    // (empty bins fall back to midpoint representatives).
    for (int i = 1; i <= n_reg; ++i)
        if (spec.edges[i] <= spec.edges[i - 1])
            spec.edges[i] = std::nextafter(spec.edges[i - 1], kInf);

    std::vector<std::vector<double>> buckets(static_cast<std::size_t>(n_bins));
    for (double v : values) buckets[static_cast<std::size_t>(spec.bin_index(v))].push_back(v);
    spec.representatives.resize(static_cast<std::size_t>(n_bins));
    for (int b = 0; b < n_bins; ++b) {
        auto& bucket = buckets[static_cast<std::size_t>(b)];
        if (!bucket.empty()) {
            std::sort(bucket.begin(), bucket.end());
            spec.representatives[b] = median_sorted(bucket);
            continue;
        }
        if (outlier_mode == OutlierMode::DoubleSided && b == 0)
            spec.representatives[b] = spec.lower_threshold;
        else if (b == n_bins - 1)
            spec.representatives[b] = spec.upper_threshold;
        else {
            const int r = b - spec.first_regular();
            spec.representatives[b] = 0.5 * (spec.edges[r] + spec.edges[r + 1]);
        }
    }
    spec.check_consistent();
    return spec;
}

void check_digit(int value, int base, const char* name) {
    if (value < 0 || value >= base)
        raise_data("TokenOutOfRange",
                   std::string(name) + " digit " + std::to_string(value) + " outside [0, " + std::to_string(base) + ")");
}

}  // namespace

int BinSpec::bin_index(double value) const {
    if (!std::isfinite(value)) raise_numeric("NonFiniteFeature", feature + ": cannot bin non-finite value");
    if (outlier_mode == OutlierMode::DoubleSided && value < lower_threshold) return 0;
    if (value > upper_threshold) return n_bins - 1;
    auto it = std::upper_bound(edges.begin(), edges.end(), value);
    int idx = static_cast<int>(it - edges.begin()) - 1;
    idx = std::clamp(idx, 0, n_regular() - 1);
    return first_regular() + idx;
}

double BinSpec::representative(int bin) const {
    if (bin < 0 || bin >= n_bins)
        raise_data("TokenOutOfRange", feature + ": bin " + std::to_string(bin) + " outside [0, " +
                                          std::to_string(n_bins) + ")");
    return representatives[static_cast<std::size_t>(bin)];
}

void BinSpec::check_consistent() const {
    if (n_regular() < 1) raise_data("CorruptSchema", feature + ": no regular bins");
    if (edges.size() != static_cast<std::size_t>(n_regular()) + 1)
        raise_data("CorruptSchema", feature + ": edge count does not match bin count");
    for (std::size_t i = 1; i < edges.size(); ++i)
        if (!(edges[i] > edges[i - 1])) raise_data("CorruptSchema", feature + ": edges not strictly ascending");
    if (representatives.size() != static_cast<std::size_t>(n_bins))
        raise_data("CorruptSchema", feature + ": representative count does not match bin count");
    if (!(lower_threshold <= upper_threshold))
        raise_data("CorruptSchema", feature + ": outlier thresholds out of order");
    for (double e : edges)
        if (!std::isfinite(e)) raise_data("CorruptSchema", feature + ": non-finite edge");
}

int compose_trade_token(const TradeDigits& d, const TokenBases& bases) {
    check_digit(d.action, 2, "action");
    check_digit(d.side, 2, "side");
    check_digit(d.depth, bases.depth, "depth");
    check_digit(d.volume, bases.volume, "volume");
    check_digit(d.time, bases.time, "time");
    return (((d.action * 2 + d.side) * bases.depth + d.depth) * bases.volume + d.volume) * bases.time + d.time;
}

TradeDigits split_trade_token(int token, const TokenBases& bases) {
    if (token < 0 || token >= bases.vocab_size())
        raise_data("TokenOutOfRange", "trade token " + std::to_string(token) + " outside [0, " +
                                          std::to_string(bases.vocab_size()) + ")");
    TradeDigits d;
    d.time = token % bases.time;
    token /= bases.time;
    d.volume = token % bases.volume;
    token /= bases.volume;
    d.depth = token % bases.depth;
    token /= bases.depth;
    d.side = token % 2;
    d.action = token / 2;
    return d;
}

int TokenSchema::liquidity_bin(double adv) const {
    if (!(adv > 0.0) || !std::isfinite(adv))
        raise_data("MalformedRow", "average daily volume must be finite and positive");
    if (adv < liquidity_edges[0]) return 0;
    if (adv < liquidity_edges[1]) return 1;
    return 2;
}

void TokenSchema::check_consistent() const {
    depth.check_consistent();
    volume.check_consistent();
    time.check_consistent();
    price_level.check_consistent();
    if (!(liquidity_edges[0] <= liquidity_edges[1]))
        raise_data("CorruptSchema", "liquidity tercile edges out of order");
    if (depth.outlier_mode != OutlierMode::DoubleSided || price_level.outlier_mode != OutlierMode::DoubleSided ||
        volume.outlier_mode != OutlierMode::UpperOnly || time.outlier_mode != OutlierMode::UpperOnly)
        raise_data("CorruptSchema", "outlier modes do not match the feature layout");
}

TokenSchema calibrate_tokenizer(const std::vector<EventStream>& corpus, const TokenizerConfig& cfg) {
    std::size_t total = 0;
    for (const EventStream& s : corpus) total += s.events.size();
    if (corpus.empty() || total < static_cast<std::size_t>(cfg.min_calibration_events))
        raise_data("InsufficientData", "calibration corpus has " + std::to_string(total) + " events, need at least " +
                                           std::to_string(cfg.min_calibration_events));

    std::vector<double> depth_vals, volume_vals, time_vals, level_vals;
    depth_vals.reserve(total);
    volume_vals.reserve(total);
    time_vals.reserve(total);
    level_vals.reserve(total);
    std::map<std::string, double> adv_by_asset;
    for (const EventStream& s : corpus) {
        adv_by_asset.emplace(s.meta.asset_id, s.meta.average_daily_volume);
        for (const FeatureVector& fv : featurize_stream(s, cfg.midprice_halflife)) {
            depth_vals.push_back(fv.price_depth);
            volume_vals.push_back(fv.log_volume);
            time_vals.push_back(std::log1p(fv.interarrival));
            level_vals.push_back(fv.rel_price_level);
        }
    }

    TokenSchema schema;
    schema.depth = fit_bin_spec(std::move(depth_vals), "depth", BinStrategy::EqualFrequency,
                                OutlierMode::DoubleSided, cfg.depth_bins, cfg.lower_percentile,
                                cfg.upper_percentile);
    schema.volume = fit_bin_spec(std::move(volume_vals), "volume", BinStrategy::EqualWidthLog,
                                 OutlierMode::UpperOnly, cfg.volume_bins, cfg.lower_percentile,
                                 cfg.upper_percentile);
    schema.time = fit_bin_spec(std::move(time_vals), "time", BinStrategy::EqualWidthLog, OutlierMode::UpperOnly,
                               cfg.time_bins, cfg.lower_percentile, cfg.upper_percentile);
    schema.price_level = fit_bin_spec(std::move(level_vals), "price_level", BinStrategy::EqualFrequency,
                                      OutlierMode::DoubleSided, cfg.price_level_bins, cfg.lower_percentile,
                                      cfg.upper_percentile);

    std::vector<double> advs;
    advs.reserve(adv_by_asset.size());
    for (const auto& [asset, adv] : adv_by_asset) advs.push_back(adv);
    std::sort(advs.begin(), advs.end());
    schema.liquidity_edges[0] = quantile_sorted(advs, 1.0 / 3.0);
    schema.liquidity_edges[1] = quantile_sorted(advs, 2.0 / 3.0);

    schema.check_consistent();
    return schema;
}

ContextTuple encode_event(const FeatureVector& fv, double adv, Scope scope, const TokenSchema& schema) {
    TradeDigits digits;
    digits.action = static_cast<int>(fv.action);
    digits.side = static_cast<int>(fv.side);
    digits.depth = schema.depth.bin_index(fv.price_depth);
    digits.volume = schema.volume.bin_index(fv.log_volume);
    digits.time = schema.time.bin_index(std::log1p(fv.interarrival));
    ContextTuple tuple;
    tuple.liquidity = schema.liquidity_bin(adv);
    tuple.scope = static_cast<int>(scope);
    tuple.price_level = schema.price_level.bin_index(fv.rel_price_level);
    tuple.trade = compose_trade_token(digits, schema.bases());
    return tuple;
}

std::vector<ContextTuple> encode_stream(const EventStream& stream, const TokenSchema& schema,
                                        double midprice_halflife) {
    std::vector<ContextTuple> out;
    out.reserve(stream.events.size());
    for (const FeatureVector& fv : featurize_stream(stream, midprice_halflife))
        out.push_back(encode_event(fv, stream.meta.average_daily_volume, stream.scope, schema));
    return out;
}

OrderIntent detokenize(const TradeDigits& digits, const TokenSchema& schema) {
    check_digit(digits.action, 2, "action");
    check_digit(digits.side, 2, "side");
    OrderIntent intent;
    intent.action = digits.action == 0 ? Action::Add : Action::Cancel;
    intent.side = digits.side == 0 ? Side::Buy : Side::Sell;
    intent.depth_ratio = schema.depth.representative(digits.depth);
    const double log_volume = schema.volume.representative(digits.volume);
    intent.volume = std::max<std::int64_t>(1, std::llround(std::expm1(log_volume)));
    const double log_dt = schema.time.representative(digits.time);
    intent.dt_seconds = std::max(0.0, std::expm1(log_dt));
    intent.is_market_order = false;
    return intent;
}

namespace {

void append_bin_section(KvFile& file, const BinSpec& spec) {
    KvSection sec;
    sec.name = spec.feature;
    sec.entries.emplace_back("strategy", strategy_name(spec.strategy));
    sec.entries.emplace_back("outlier_mode", outlier_name(spec.outlier_mode));
    sec.entries.emplace_back("n_bins", std::to_string(spec.n_bins));
    sec.entries.emplace_back("lower_threshold", format_g17(spec.lower_threshold));
    sec.entries.emplace_back("upper_threshold", format_g17(spec.upper_threshold));
    sec.entries.emplace_back("edges", join_g17(spec.edges));
    sec.entries.emplace_back("representatives", join_g17(spec.representatives));
    file.sections.push_back(std::move(sec));
}

BinSpec read_bin_section(const KvFile& file, const std::string& name) {
    const KvSection& sec = file.require(name);
    BinSpec spec;
    spec.feature = name;
    spec.strategy = parse_strategy(sec.require("strategy"));
    spec.outlier_mode = parse_outlier(sec.require("outlier_mode"));
    spec.n_bins = static_cast<int>(sec.require_int("n_bins"));
    spec.lower_threshold = sec.require_double("lower_threshold");
    spec.upper_threshold = sec.require_double("upper_threshold");
    spec.edges = sec.require_doubles("edges");
    spec.representatives = sec.require_doubles("representatives");
    try {
        spec.check_consistent();
    } catch (const Error& e) {
        raise_data("CorruptSchema", "section [" + name + "]: " + e.what());
    }
    return spec;
}

}  // namespace

void save_schema(const TokenSchema& schema, const std::string& path) {
    KvFile file;
    file.header = kSchemaHeader;
    append_bin_section(file, schema.depth);
    append_bin_section(file, schema.volume);
    append_bin_section(file, schema.time);
    append_bin_section(file, schema.price_level);
    KvSection liq;
    liq.name = "liquidity";
    const double edges[2] = {schema.liquidity_edges[0], schema.liquidity_edges[1]};
    liq.entries.emplace_back("edges", join_g17(edges));
    file.sections.push_back(std::move(liq));
    file.save(path);
}

TokenSchema load_schema(const std::string& path) {
    KvFile file = KvFile::load(path);
    if (file.header != kSchemaHeader)
        raise_data("SchemaVersionMismatch",
                   path + ": expected header '" + std::string(kSchemaHeader) + "', got '" + file.header + "'");
    TokenSchema schema;
    schema.depth = read_bin_section(file, "depth");
    schema.volume = read_bin_section(file, "volume");
    schema.time = read_bin_section(file, "time");
    schema.price_level = read_bin_section(file, "price_level");
    std::vector<double> liq = file.require("liquidity").require_doubles("edges");
    if (liq.size() != 2) raise_data("CorruptSchema", path + ": liquidity edges must have two entries");
    schema.liquidity_edges[0] = liq[0];
    schema.liquidity_edges[1] = liq[1];
    schema.check_consistent();
    return schema;
}

}  // namespace flowsim
