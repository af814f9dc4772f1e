#pragma once

#include <span>
#include <string>
#include <vector>

#include "flowsim/events.hpp"
#include "flowsim/lob.hpp"

namespace flowsim {

// ---- metric primitives ------------------------------------------------

// Sample autocorrelation at lags 0..max_lag (r_0 = 1). Throws Numeric
// DegenerateVariance on constant input, Data SeriesTooShort when
// max_lag >= n.
std::vector<double> autocorrelation(std::span<const double> x, int max_lag);

// Bias-corrected (Fisher) excess kurtosis; needs n >= 4 and non-zero
// variance.
double excess_kurtosis(std::span<const double> x);

// Two-sample Kolmogorov-Smirnov distance sup|F_a - F_b| via a merged sweep.
double ks_distance(std::span<const double> a, std::span<const double> b);

struct KsTest {
    double statistic = 0.0;
    double p_value = 0.0;
};
// One-sample K-S against Exp(rate) with the asymptotic Kolmogorov p-value.
KsTest ks_test_exponential(std::span<const double> x, double rate);
double kolmogorov_tail(double x);  // Q(x) = 2 sum (-1)^{k-1} exp(-2 k^2 x^2)

// Exact 1-Wasserstein distance between empirical distributions (quantile
// coupling with rational breakpoints; reduces to mean |sorted diffs| for
// equal sizes).
double wasserstein1(std::span<const double> a, std::span<const double> b);
// W1 after z-scoring each sample by its own mean and standard deviation, so
// any affine change of units on either side cancels and only shape
// differences remain. Throws Numeric ZeroVariance on a constant sample.
double wasserstein1_normalized(std::span<const double> reference, std::span<const double> candidate);

double pearson_correlation(std::span<const double> a, std::span<const double> b);
double sample_median(std::vector<double> v);  // throws Data EmptySample

// ---- midprice resampling ----------------------------------------------

// Last-observation-carried-forward midprice on a regular dt grid spanning
// [first, last] event time. Throws Data SeriesTooShort when fewer than two
// grid points fit.
std::vector<double> locf_midprice(std::span<const SeriesPoint> series, double dt_seconds);
// Log returns of the LOCF grid.
std::vector<double> resampled_log_returns(std::span<const SeriesPoint> series, double dt_seconds);

// ---- reports ------------------------------------------------------------

// Quantity samples extracted from one simulation run.
struct MarketSample {
    std::vector<double> spreads, interarrivals, depths, imbalances, bid_volumes, ask_volumes;
    std::vector<SeriesPoint> series;
};
MarketSample collect_sample(const SimResult& result);
MarketSample collect_sample(std::span<const SeriesPoint> series, std::span<const OrderRecord> orders);

struct FidelityRow {
    std::string quantity;
    double ks = 0.0;
    double wasserstein = 0.0;
};
// One row per book/flow quantity plus one per return interval.
std::vector<FidelityRow> fidelity_report(const MarketSample& reference, const MarketSample& candidate,
                                         std::span<const double> return_intervals);
inline constexpr const char* kFidelityCsvHeader = "quantity,ks,wasserstein";
void write_fidelity_csv(const std::vector<FidelityRow>& rows, const std::string& path);

struct DriftRow {
    std::string feature;
    double ks = 0.0;
    double wasserstein = 0.0;
};
// Feature-distribution drift between two periods; includes the raw midprice
// estimate as the deliberately non-stationary control row.
std::vector<DriftRow> drift_report(const std::vector<EventStream>& period_a,
                                   const std::vector<EventStream>& period_b, double midprice_halflife);
inline constexpr const char* kDriftCsvHeader = "feature,ks,wasserstein,period_a,period_b";
void write_drift_csv(const std::vector<DriftRow>& rows, const std::string& label_a,
                     const std::string& label_b, const std::string& path);

// Fill-distribution agreement: Pearson correlation of the empirical CDFs of
// (a) fill volumes and (b) fills-per-order counts, each evaluated on the
// merged value grid. Throws Data NoFills when either side has no fills.
struct FillComparison {
    double volume_correlation = 0.0;
    double lot_count_correlation = 0.0;
};
FillComparison compare_fill_distributions(const std::vector<Fill>& reference,
                                          const std::vector<Fill>& candidate);

}  // namespace flowsim
