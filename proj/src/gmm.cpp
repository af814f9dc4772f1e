#include "flowsim/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flowsim/error.hpp"

namespace flowsim {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

double log_normal_pdf(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * (kLogTwoPi + std::log(var) + d * d / var);
}

double log_sum_exp(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace

double Gmm::log_pdf(double x) const {
    std::vector<double> terms(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k)
        terms[k] = std::log(weights[k]) + log_normal_pdf(x, means[k], variances[k]);
    return log_sum_exp(terms);
}

double Gmm::sample(Rng& rng) const {
    const int k = rng.categorical(weights);
    return rng.normal(means[static_cast<std::size_t>(k)],
                      std::sqrt(variances[static_cast<std::size_t>(k)]));
}

double Gmm::mean() const {
    double m = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) m += weights[k] * means[k];
    return m;
}

Gmm fit_gmm(std::span<const double> data, const GmmFitConfig& cfg, Rng& rng) {
    const std::size_t n = data.size();
    const auto k = static_cast<std::size_t>(cfg.components);
    if (cfg.components < 1) raise_usage("BadComponentCount", "mixture needs at least one component");
    if (n < 2 * k)
        raise_data("InsufficientData",
                   "mixture fit needs at least " + std::to_string(2 * k) + " samples, got " + std::to_string(n));

    double mean = 0.0;
    for (double x : data) mean += x;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : data) var += (x - mean) * (x - mean);
    var /= static_cast<double>(n);
    // Identical samples can still show var > 0 from summation rounding, so
    // detect constant data exactly via the range.
    const auto [mn, mx] = std::minmax_element(data.begin(), data.end());
    if (!(var > 0.0) || *mn == *mx) raise_numeric("EmDegenerate", "mixture data has zero variance");
    const double var_floor = 1e-10 * var;

    Gmm best;
    double best_ll = -std::numeric_limits<double>::infinity();

    std::vector<double> resp(n * k);
    std::vector<double> terms(k);
    for (int restart = 0; restart < cfg.restarts; ++restart) {
        Gmm g;
        g.weights.assign(k, 1.0 / static_cast<double>(k));
        g.means.resize(k);
        for (std::size_t j = 0; j < k; ++j) g.means[j] = data[rng.index(n)];
        g.variances.assign(k, var);

        double prev_ll = -std::numeric_limits<double>::infinity();
        bool failed = false;
        for (int iter = 0; iter < cfg.max_iterations; ++iter) {
            // E step
            double ll = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < k; ++j)
                    terms[j] = std::log(g.weights[j]) + log_normal_pdf(data[i], g.means[j], g.variances[j]);
                const double lse = log_sum_exp(terms);
                ll += lse;
                for (std::size_t j = 0; j < k; ++j) resp[i * k + j] = std::exp(terms[j] - lse);
            }
            ll /= static_cast<double>(n);
            if (!std::isfinite(ll)) {
                failed = true;
                break;
            }
            // M step
            for (std::size_t j = 0; j < k; ++j) {
                double nk = 0.0, mu = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    nk += resp[i * k + j];
                    mu += resp[i * k + j] * data[i];
                }
                if (nk < 1e-8 * static_cast<double>(n)) {
                    failed = true;
                    break;
                }
                mu /= nk;
                double v = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = data[i] - mu;
                    v += resp[i * k + j] * d * d;
                }
                v /= nk;
                g.weights[j] = nk / static_cast<double>(n);
                g.means[j] = mu;
                g.variances[j] = std::max(v, var_floor);
            }
            if (failed) break;
            if (ll - prev_ll < cfg.tolerance && iter > 0) {
                prev_ll = ll;
                break;
            }
            prev_ll = ll;
        }
        if (!failed && prev_ll > best_ll) {
            best_ll = prev_ll;
            best = g;
        }
    }
    if (best.weights.empty())
        raise_numeric("EmDegenerate", "all mixture restarts collapsed; data may be near-constant");
    return best;
}

void gmm_to_entries(const Gmm& g, KvSection& section) {
    section.entries.emplace_back("weights", join_g17(g.weights));
    section.entries.emplace_back("means", join_g17(g.means));
    section.entries.emplace_back("variances", join_g17(g.variances));
}

Gmm gmm_from_section(const KvSection& section) {
    Gmm g;
    g.weights = section.require_doubles("weights");
    g.means = section.require_doubles("means");
    g.variances = section.require_doubles("variances");
    if (g.weights.empty() || g.weights.size() != g.means.size() || g.means.size() != g.variances.size())
        raise_data("CorruptParams", "section [" + section.name + "]: mixture arrays have mismatched sizes");
    double total = 0.0;
    for (double w : g.weights) total += w;
    for (double v : g.variances)
        if (!(v > 0.0)) raise_data("CorruptParams", "section [" + section.name + "]: non-positive variance");
    if (std::abs(total - 1.0) > 1e-9)
        raise_data("CorruptParams", "section [" + section.name + "]: mixture weights do not sum to 1");
    return g;
}

}  // namespace flowsim
