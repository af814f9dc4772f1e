#include "flowsim/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "flowsim/error.hpp"
#include "flowsim/features.hpp"
#include "flowsim/text_io.hpp"

namespace flowsim {

std::vector<double> autocorrelation(std::span<const double> x, int max_lag) {
    const std::size_t n = x.size();
    if (max_lag < 0) raise_usage("BadLag", "max_lag must be >= 0");
    if (n < 2 || static_cast<std::size_t>(max_lag) >= n)
        raise_data("SeriesTooShort", "autocorrelation needs more than max_lag samples");
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double denom = 0.0;
    for (double v : x) denom += (v - mean) * (v - mean);
    if (!(denom > 0.0)) raise_numeric("DegenerateVariance", "autocorrelation of a constant series");
    std::vector<double> r(static_cast<std::size_t>(max_lag) + 1);
    for (int lag = 0; lag <= max_lag; ++lag) {
        double acc = 0.0;
        for (std::size_t t = 0; t + static_cast<std::size_t>(lag) < n; ++t)
            acc += (x[t] - mean) * (x[t + static_cast<std::size_t>(lag)] - mean);
        r[static_cast<std::size_t>(lag)] = acc / denom;
    }
    return r;
}

double excess_kurtosis(std::span<const double> x) {
    const auto n = static_cast<double>(x.size());
    if (x.size() < 4) raise_data("InsufficientData", "kurtosis needs at least 4 samples");
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double v : x) {
        const double d = v - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m4 /= n;
    if (!(m2 > 0.0)) raise_numeric("DegenerateVariance", "kurtosis of a constant sample");
    const double g2 = m4 / (m2 * m2) - 3.0;
    return ((n + 1.0) * g2 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0));
}

double ks_distance(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) raise_data("EmptySample", "K-S distance needs non-empty samples");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    const double n = static_cast<double>(sa.size()), m = static_cast<double>(sb.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < sa.size() || j < sb.size()) {
        const double v = (i < sa.size() && (j >= sb.size() || sa[i] <= sb[j])) ? sa[i] : sb[j];
        while (i < sa.size() && sa[i] == v) ++i;
        while (j < sb.size() && sb[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
    }
    return d;
}

double kolmogorov_tail(double x) {
    if (x <= 0.0) return 1.0;
    double q = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = 2.0 * std::exp(-2.0 * k * k * x * x);
        q += (k % 2 == 1) ? term : -term;
        if (term < 1e-16) break;
    }
    return std::clamp(q, 0.0, 1.0);
}

KsTest ks_test_exponential(std::span<const double> x, double rate) {
    if (x.empty()) raise_data("EmptySample", "K-S test needs a non-empty sample");
    if (!(rate > 0.0)) raise_usage("BadRate", "exponential rate must be positive");
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    double d = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double f = 1.0 - std::exp(-rate * s[i]);
        d = std::max(d, std::max((static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n));
    }
    KsTest test;
    test.statistic = d;
    const double sn = std::sqrt(n);
    test.p_value = kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d);
    return test;
}

double wasserstein1(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) raise_data("EmptySample", "Wasserstein distance needs non-empty samples");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    const std::size_t n = sa.size(), m = sb.size();
    // integrate |F_a^{-1}(q) - F_b^{-1}(q)| over q with breakpoints on the
    // common 1/(n*m) grid; integer positions keep the sweep exact
    const auto total = static_cast<unsigned long long>(n) * m;
    unsigned long long pos = 0;
    std::size_t i = 0, j = 0;
    double w = 0.0;
    while (pos < total) {
        const unsigned long long next_a = static_cast<unsigned long long>(i + 1) * m;
        const unsigned long long next_b = static_cast<unsigned long long>(j + 1) * n;
        const unsigned long long next = std::min(next_a, next_b);
        w += std::abs(sa[i] - sb[j]) * static_cast<double>(next - pos);
        if (next == next_a) ++i;
        if (next == next_b) ++j;
        pos = next;
    }
    return w / static_cast<double>(total);
}

namespace {

std::vector<double> zscore(std::span<const double> x) {
    if (x.size() < 2) raise_data("EmptySample", "z-scoring needs at least 2 samples");
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size() - 1);
    if (!(var > 0.0)) raise_numeric("ZeroVariance", "constant sample cannot be z-scored");
    const double sd = std::sqrt(var);
    std::vector<double> z(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) z[k] = (x[k] - mean) / sd;
    return z;
}

}  // namespace

double wasserstein1_normalized(std::span<const double> reference, std::span<const double> candidate) {
    return wasserstein1(zscore(reference), zscore(candidate));
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2)
        raise_data("EmptySample", "correlation needs two equal-length samples of size >= 2");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) raise_numeric("ZeroVariance", "correlation of a constant sample");
    return sab / std::sqrt(saa * sbb);
}

double sample_median(std::vector<double> v) {
    if (v.empty()) raise_data("EmptySample", "median of an empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> locf_midprice(std::span<const SeriesPoint> series, double dt_seconds) {
    if (!(dt_seconds > 0.0)) raise_usage("BadInterval", "resampling interval must be positive");
    if (series.size() < 2) raise_data("SeriesTooShort", "midprice series needs at least two points");
    for (std::size_t i = 1; i < series.size(); ++i)
        if (series[i].time < series[i - 1].time)
            raise_data("NonMonotonicTimestamp", "midprice series times must be sorted");
    const double t0 = series.front().time;
    const double t_end = series.back().time;
    const auto n_grid = static_cast<std::size_t>(std::floor((t_end - t0) / dt_seconds)) + 1;
    if (n_grid < 2)
        raise_data("SeriesTooShort", "series spans fewer than two resampling intervals");
    std::vector<double> grid(n_grid);
    std::size_t k = 0;
    for (std::size_t g = 0; g < n_grid; ++g) {
        const double t = t0 + static_cast<double>(g) * dt_seconds;
        while (k + 1 < series.size() && series[k + 1].time <= t) ++k;
        grid[g] = series[k].midprice;
    }
    return grid;
}

std::vector<double> resampled_log_returns(std::span<const SeriesPoint> series, double dt_seconds) {
    const std::vector<double> grid = locf_midprice(series, dt_seconds);
    std::vector<double> returns(grid.size() - 1);
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        if (!(grid[i] > 0.0) || !(grid[i + 1] > 0.0))
            raise_numeric("NonFiniteFeature", "midprice must stay positive for log returns");
        returns[i] = std::log(grid[i + 1] / grid[i]);
    }
    return returns;
}

MarketSample collect_sample(std::span<const SeriesPoint> series, std::span<const OrderRecord> orders) {
    MarketSample s;
    s.series.assign(series.begin(), series.end());
    s.spreads.reserve(series.size());
    s.imbalances.reserve(series.size());
    s.bid_volumes.reserve(series.size());
    s.ask_volumes.reserve(series.size());
    for (const SeriesPoint& p : series) {
        s.spreads.push_back(p.spread);
        s.imbalances.push_back(p.imbalance);
        s.bid_volumes.push_back(p.bid_volume);
        s.ask_volumes.push_back(p.ask_volume);
    }
    s.interarrivals.reserve(orders.size());
    for (const OrderRecord& o : orders) {
        s.interarrivals.push_back(o.dt);
        if (o.action == Action::Add) s.depths.push_back(o.depth);
    }
    return s;
}

MarketSample collect_sample(const SimResult& result) { return collect_sample(result.series, result.orders); }

std::vector<FidelityRow> fidelity_report(const MarketSample& reference, const MarketSample& candidate,
                                         std::span<const double> return_intervals) {
    std::vector<FidelityRow> rows;
    const auto add_row = [&rows](const std::string& name, std::span<const double> ref,
                                 std::span<const double> cand) {
        FidelityRow row;
        row.quantity = name;
        row.ks = ks_distance(ref, cand);
        row.wasserstein = wasserstein1_normalized(ref, cand);
        rows.push_back(std::move(row));
    };
    add_row("spread", reference.spreads, candidate.spreads);
    add_row("interarrival_time", reference.interarrivals, candidate.interarrivals);
    add_row("price_depth", reference.depths, candidate.depths);
    add_row("order_book_imbalance", reference.imbalances, candidate.imbalances);
    add_row("bid_volume", reference.bid_volumes, candidate.bid_volumes);
    add_row("ask_volume", reference.ask_volumes, candidate.ask_volumes);
    for (double dt : return_intervals) {
        const std::vector<double> ra = resampled_log_returns(reference.series, dt);
        const std::vector<double> rb = resampled_log_returns(candidate.series, dt);
        add_row("log_returns_" + format_g17(dt) + "s", ra, rb);
    }
    return rows;
}

void write_fidelity_csv(const std::vector<FidelityRow>& rows, const std::string& path) {
    std::string out = kFidelityCsvHeader;
    out += '\n';
    for (const FidelityRow& r : rows) {
        out += r.quantity;
        out += ',';
        out += format_g17(r.ks);
        out += ',';
        out += format_g17(r.wasserstein);
        out += '\n';
    }
    write_text_file(path, out);
}

namespace {

struct FeaturePools {
    std::vector<double> depth, volume, time, level, midprice;
};

FeaturePools pool_features(const std::vector<EventStream>& streams, double halflife) {
    FeaturePools pools;
    for (const EventStream& stream : streams) {
        FeaturePipeline pipeline(stream.meta, halflife);
        for (const TradeEvent& ev : stream.events) {
            const FeatureVector fv = pipeline.push(ev);
            if (ev.has_price()) pools.depth.push_back(fv.price_depth);
            pools.volume.push_back(fv.log_volume);
            pools.time.push_back(std::log1p(fv.interarrival));
            pools.level.push_back(fv.rel_price_level);
            pools.midprice.push_back(pipeline.midprice().estimate());
        }
    }
    return pools;
}

}  // namespace

std::vector<DriftRow> drift_report(const std::vector<EventStream>& period_a,
                                   const std::vector<EventStream>& period_b, double midprice_halflife) {
    if (period_a.empty() || period_b.empty()) raise_data("EmptyStream", "both drift periods need streams");
    const FeaturePools a = pool_features(period_a, midprice_halflife);
    const FeaturePools b = pool_features(period_b, midprice_halflife);
    std::vector<DriftRow> rows;
    const auto add_row = [&rows](const std::string& name, std::span<const double> xa,
                                 std::span<const double> xb) {
        rows.push_back({name, ks_distance(xa, xb), wasserstein1(xa, xb)});
    };
    add_row("price_depth", a.depth, b.depth);
    add_row("volume", a.volume, b.volume);
    add_row("interarrival_time", a.time, b.time);
    add_row("price_level", a.level, b.level);
    add_row("midprice", a.midprice, b.midprice);  // non-stationary control
    return rows;
}

void write_drift_csv(const std::vector<DriftRow>& rows, const std::string& label_a,
                     const std::string& label_b, const std::string& path) {
    std::string out = kDriftCsvHeader;
    out += '\n';
    for (const DriftRow& r : rows) {
        out += r.feature;
        out += ',';
        out += format_g17(r.ks);
        out += ',';
        out += format_g17(r.wasserstein);
        out += ',';
        out += label_a;
        out += ',';
        out += label_b;
        out += '\n';
    }
    write_text_file(path, out);
}

namespace {

// Pearson correlation of two empirical CDFs over the merged value grid.
double cdf_correlation(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<double> grid = a;
    grid.insert(grid.end(), b.begin(), b.end());
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    if (grid.size() < 2) return 1.0;  // both samples share a single value
    std::vector<double> fa(grid.size()), fb(grid.size());
    std::size_t i = 0, j = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        while (i < a.size() && a[i] <= grid[g]) ++i;
        while (j < b.size() && b[j] <= grid[g]) ++j;
        fa[g] = static_cast<double>(i) / static_cast<double>(a.size());
        fb[g] = static_cast<double>(j) / static_cast<double>(b.size());
    }
    return pearson_correlation(fa, fb);
}

}  // namespace

FillComparison compare_fill_distributions(const std::vector<Fill>& reference,
                                          const std::vector<Fill>& candidate) {
    if (reference.empty() || candidate.empty())
        raise_data("NoFills", "fill comparison needs fills on both sides");
    std::vector<double> vol_a, vol_b;
    vol_a.reserve(reference.size());
    vol_b.reserve(candidate.size());
    std::map<std::uint64_t, double> lots_a, lots_b;
    for (const Fill& f : reference) {
        vol_a.push_back(static_cast<double>(f.volume));
        lots_a[f.incoming_id] += 1.0;
    }
    for (const Fill& f : candidate) {
        vol_b.push_back(static_cast<double>(f.volume));
        lots_b[f.incoming_id] += 1.0;
    }
    std::vector<double> counts_a, counts_b;
    counts_a.reserve(lots_a.size());
    counts_b.reserve(lots_b.size());
    for (const auto& [id, c] : lots_a) counts_a.push_back(c);
    for (const auto& [id, c] : lots_b) counts_b.push_back(c);

    FillComparison cmp;
    cmp.volume_correlation = cdf_correlation(std::move(vol_a), std::move(vol_b));
    cmp.lot_count_correlation = cdf_correlation(std::move(counts_a), std::move(counts_b));
    return cmp;
}

}  // namespace flowsim
