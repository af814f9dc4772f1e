#include "flowsim/hawkes.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "flowsim/error.hpp"
#include "flowsim/features.hpp"
#include "flowsim/text_io.hpp"

namespace flowsim {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double ExpKernel::branching() const {
    double b = 0.0;
    for (std::size_t e = 0; e < alphas.size(); ++e) b += alphas[e] / betas[e];
    return b;
}

const ExpKernel& HawkesParams::kernel(int target, int source) const {
    return kernels[static_cast<std::size_t>(target) * static_cast<std::size_t>(dims()) +
                   static_cast<std::size_t>(source)];
}

ExpKernel& HawkesParams::kernel(int target, int source) {
    return kernels[static_cast<std::size_t>(target) * static_cast<std::size_t>(dims()) +
                   static_cast<std::size_t>(source)];
}

double HawkesParams::spectral_radius() const {
    const int d = dims();
    std::vector<double> gamma(static_cast<std::size_t>(d) * d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) gamma[static_cast<std::size_t>(i) * d + j] = kernel(i, j).branching();
    // power iteration on I + Gamma (positive diagonal keeps it convergent
    // for reducible matrices); Perron roots shift by exactly 1
    std::vector<double> v(static_cast<std::size_t>(d), 1.0), w(static_cast<std::size_t>(d));
    double rho = 1.0;
    for (int iter = 0; iter < 300; ++iter) {
        double norm = 0.0;
        for (int i = 0; i < d; ++i) {
            double acc = v[static_cast<std::size_t>(i)];
            for (int j = 0; j < d; ++j)
                acc += gamma[static_cast<std::size_t>(i) * d + j] * v[static_cast<std::size_t>(j)];
            w[static_cast<std::size_t>(i)] = acc;
            norm = std::max(norm, acc);
        }
        if (!(norm > 0.0)) return 0.0;
        rho = norm;
        for (int i = 0; i < d; ++i) v[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] / norm;
    }
    return rho - 1.0;
}

void HawkesParams::validate() const {
    const int d = dims();
    if (d < 1) raise_data("CorruptParams", "process needs at least one dimension");
    if (kernels.size() != static_cast<std::size_t>(d) * static_cast<std::size_t>(d))
        raise_data("CorruptParams", "kernel matrix shape does not match dimension count");
    for (double m : mu)
        if (!(m >= 0.0) || !std::isfinite(m)) raise_data("CorruptParams", "baseline intensities must be >= 0");
    for (const ExpKernel& k : kernels) {
        if (k.alphas.size() != k.betas.size())
            raise_data("CorruptParams", "kernel term arrays have mismatched sizes");
        for (double a : k.alphas)
            if (!(a >= 0.0) || !std::isfinite(a)) raise_data("CorruptParams", "kernel alphas must be >= 0");
        for (double b : k.betas)
            if (!(b > 0.0) || !std::isfinite(b)) raise_data("CorruptParams", "kernel betas must be > 0");
    }
    if (!marks.empty() && marks.size() != static_cast<std::size_t>(d))
        raise_data("CorruptParams", "mark distributions must cover every dimension");
    const double rho = spectral_radius();
    if (!(rho < 1.0))
        raise_numeric("NonStationaryParams",
                      "branching matrix spectral radius " + format_g17(rho) + " is not < 1");
}

int hawkes_dim(Action action, Side side) {
    return static_cast<int>(side) * 2 + static_cast<int>(action);
}
Action hawkes_action(int dim) { return dim % 2 == 0 ? Action::Add : Action::Cancel; }
Side hawkes_side(int dim) { return dim / 2 == 0 ? Side::Buy : Side::Sell; }

HawkesState::HawkesState(const HawkesParams& params) : params_(&params) {
    const int d = params.dims();
    off_.resize(static_cast<std::size_t>(d) * d + 1);
    std::size_t total = 0;
    for (std::size_t k = 0; k < static_cast<std::size_t>(d) * d; ++k) {
        off_[k] = total;
        total += params.kernels[k].alphas.size();
    }
    off_.back() = total;
    s_.assign(total, 0.0);
}

void HawkesState::reset() {
    std::fill(s_.begin(), s_.end(), 0.0);
    time_ = 0.0;
}

void HawkesState::advance(double t) {
    assert(t >= time_);
    const double dt = t - time_;
    if (dt == 0.0) return;
    const int d = params_->dims();
    for (std::size_t k = 0; k < static_cast<std::size_t>(d) * d; ++k) {
        const ExpKernel& kern = params_->kernels[k];
        for (std::size_t e = 0; e < kern.betas.size(); ++e)
            s_[off_[k] + e] *= std::exp(-kern.betas[e] * dt);
    }
    time_ = t;
}

void HawkesState::add_event(int dim) {
    const int d = params_->dims();
    for (int i = 0; i < d; ++i) {
        const std::size_t k = static_cast<std::size_t>(i) * d + static_cast<std::size_t>(dim);
        const std::size_t n = params_->kernels[k].alphas.size();
        for (std::size_t e = 0; e < n; ++e) s_[off_[k] + e] += 1.0;
    }
}

double HawkesState::intensity(int target) const {
    const int d = params_->dims();
    double lambda = params_->mu[static_cast<std::size_t>(target)];
    for (int j = 0; j < d; ++j) {
        const std::size_t k = static_cast<std::size_t>(target) * d + static_cast<std::size_t>(j);
        const ExpKernel& kern = params_->kernels[k];
        for (std::size_t e = 0; e < kern.alphas.size(); ++e) lambda += kern.alphas[e] * s_[off_[k] + e];
    }
    return lambda;
}

double HawkesState::total_intensity() const {
    double total = 0.0;
    for (int i = 0; i < params_->dims(); ++i) total += intensity(i);
    return total;
}

void HawkesState::per_dim_intensity(std::vector<double>& out) const {
    out.resize(static_cast<std::size_t>(params_->dims()));
    for (int i = 0; i < params_->dims(); ++i) out[static_cast<std::size_t>(i)] = intensity(i);
}

std::vector<TimedPoint> simulate_hawkes_times(const HawkesParams& params, double horizon,
                                              std::size_t max_events, Rng& rng) {
    params.validate();
    if (!(horizon > 0.0) && max_events == 0)
        raise_usage("HorizonZero", "simulation needs a positive horizon or an event cap");
    const double t_end = horizon > 0.0 ? horizon : kInf;

    HawkesState state(params);
    std::vector<TimedPoint> points;
    std::vector<double> lambdas;
    double t = 0.0;
    double lambda_bar = state.total_intensity();
    while (max_events == 0 || points.size() < max_events) {
        if (!(lambda_bar > 0.0)) break;
        const double wait = rng.exponential(lambda_bar);
        const double t_cand = t + wait;
        if (t_cand > t_end) break;
        state.advance(t_cand);
        const double lambda_now = state.total_intensity();
        // intensities only decay between events, so lambda_bar dominates
        assert(lambda_now <= lambda_bar * (1.0 + 1e-9));
        t = t_cand;
        const double u = rng.uniform() * lambda_bar;
        if (u <= lambda_now) {
            state.per_dim_intensity(lambdas);
            const int dim = rng.categorical(lambdas);
            state.add_event(dim);
            points.push_back({t, dim});
            lambda_bar = state.total_intensity();
        } else {
            lambda_bar = lambda_now;
        }
    }
    return points;
}

EventStream simulate_hawkes(const HawkesParams& params, const AssetMeta& meta, Scope scope, double horizon,
                            std::size_t max_events, std::uint64_t seed) {
    if (params.marks.empty())
        raise_data("MissingMarks", "order-flow simulation needs per-dimension mark distributions");
    Rng rng(seed);
    const std::vector<TimedPoint> points = simulate_hawkes_times(params, horizon, max_events, rng);
    if (points.empty()) raise_data("EmptyStream", "no events arrived before the horizon");

    EventStream stream;
    stream.meta = meta;
    stream.scope = scope;
    stream.events.reserve(points.size());
    for (const TimedPoint& pt : points) {
        const HawkesMarks& mk = params.marks[static_cast<std::size_t>(pt.dim)];
        OrderIntent intent;
        intent.action = hawkes_action(pt.dim);
        intent.side = hawkes_side(pt.dim);
        intent.depth_ratio = std::max(mk.depth.sample(rng), -0.9999);
        intent.volume = std::max<std::int64_t>(1, std::llround(rng.exponential(mk.volume_rate)));
        stream.events.push_back(to_trade_event(intent, pt.time, meta.opening_price));
    }
    validate_stream(stream);
    return stream;
}

double hawkes_loglik(const HawkesParams& params, std::span<const TimedPoint> points, double horizon) {
    params.validate();
    if (!(horizon > 0.0)) raise_usage("HorizonZero", "likelihood horizon must be positive");
    const int d = params.dims();
    HawkesState state(params);

    double ll = 0.0;
    double last = 0.0;
    for (const TimedPoint& pt : points) {
        if (pt.time < last) raise_data("NonMonotonicTimestamp", "likelihood input times must be sorted");
        if (pt.time > horizon) raise_data("MalformedRow", "event beyond the likelihood horizon");
        if (pt.dim < 0 || pt.dim >= d) raise_data("MalformedRow", "event dimension outside the process");
        state.advance(pt.time);
        const double lambda = state.intensity(pt.dim);
        if (!(lambda > 0.0)) return -kInf;
        ll += std::log(lambda);
        state.add_event(pt.dim);
        last = pt.time;
    }
    for (int i = 0; i < d; ++i) ll -= params.mu[static_cast<std::size_t>(i)] * horizon;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            const ExpKernel& kern = params.kernel(i, j);
            for (int e = 0; e < kern.terms(); ++e) {
                const double a = kern.alphas[static_cast<std::size_t>(e)];
                const double b = kern.betas[static_cast<std::size_t>(e)];
                if (a == 0.0) continue;
                double acc = 0.0;
                for (const TimedPoint& pt : points)
                    if (pt.dim == j) acc += 1.0 - std::exp(-b * (horizon - pt.time));
                ll -= a / b * acc;
            }
        }
    return ll;
}

std::vector<double> stationary_intensity(const HawkesParams& params) {
    params.validate();
    const int d = params.dims();
    // solve (I - Gamma) x = mu by Gaussian elimination with partial pivoting
    std::vector<double> m(static_cast<std::size_t>(d) * (d + 1));
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j)
            m[static_cast<std::size_t>(i) * (d + 1) + j] =
                (i == j ? 1.0 : 0.0) - params.kernel(i, j).branching();
        m[static_cast<std::size_t>(i) * (d + 1) + d] = params.mu[static_cast<std::size_t>(i)];
    }
    for (int col = 0; col < d; ++col) {
        int pivot = col;
        for (int r = col + 1; r < d; ++r)
            if (std::abs(m[static_cast<std::size_t>(r) * (d + 1) + col]) >
                std::abs(m[static_cast<std::size_t>(pivot) * (d + 1) + col]))
                pivot = r;
        for (int c = 0; c <= d; ++c)
            std::swap(m[static_cast<std::size_t>(col) * (d + 1) + c],
                      m[static_cast<std::size_t>(pivot) * (d + 1) + c]);
        const double diag = m[static_cast<std::size_t>(col) * (d + 1) + col];
        if (std::abs(diag) < 1e-14)
            raise_numeric("NonStationaryParams", "branching matrix is singular at the stationarity solve");
        for (int r = 0; r < d; ++r) {
            if (r == col) continue;
            const double f = m[static_cast<std::size_t>(r) * (d + 1) + col] / diag;
            for (int c = col; c <= d; ++c)
                m[static_cast<std::size_t>(r) * (d + 1) + c] -=
                    f * m[static_cast<std::size_t>(col) * (d + 1) + c];
        }
    }
    std::vector<double> x(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i)
        x[static_cast<std::size_t>(i)] = m[static_cast<std::size_t>(i) * (d + 1) + d] /
                                         m[static_cast<std::size_t>(i) * (d + 1) + i];
    return x;
}

// ---------------------------------------------------------------------------
// maximum likelihood fit

namespace {

struct FitProblem {
    const std::vector<HawkesSequence>* data;
    int dims;
    int terms;
    bool diagonal_only;

    std::size_t n_kernels() const { return static_cast<std::size_t>(dims) * dims; }
    std::size_t kidx(int i, int j, int e) const {
        return (static_cast<std::size_t>(i) * dims + static_cast<std::size_t>(j)) * terms +
               static_cast<std::size_t>(e);
    }
    bool kernel_active(int i, int j) const { return !diagonal_only || i == j; }
};

struct FitPoint {
    std::vector<double> mu;     // dims
    std::vector<double> alpha;  // dims*dims*terms
    std::vector<double> beta;
};

HawkesParams to_params(const FitProblem& prob, const FitPoint& p) {
    HawkesParams params;
    params.mu = p.mu;
    params.kernels.resize(prob.n_kernels());
    for (int i = 0; i < prob.dims; ++i)
        for (int j = 0; j < prob.dims; ++j) {
            ExpKernel& k = params.kernel(i, j);
            k.alphas.resize(static_cast<std::size_t>(prob.terms));
            k.betas.resize(static_cast<std::size_t>(prob.terms));
            for (int e = 0; e < prob.terms; ++e) {
                k.alphas[static_cast<std::size_t>(e)] = p.alpha[prob.kidx(i, j, e)];
                k.betas[static_cast<std::size_t>(e)] = p.beta[prob.kidx(i, j, e)];
            }
        }
    return params;
}

// log-likelihood and gradients w.r.t. raw (not log) parameters
double loglik_and_grad(const FitProblem& prob, const FitPoint& p, FitPoint& grad) {
    const int d = prob.dims, E = prob.terms;
    const std::size_t nk = static_cast<std::size_t>(d) * d * E;
    grad.mu.assign(static_cast<std::size_t>(d), 0.0);
    grad.alpha.assign(nk, 0.0);
    grad.beta.assign(nk, 0.0);

    double ll = 0.0;
    std::vector<double> s(nk), r(nk);
    for (const HawkesSequence& seq : *prob.data) {
        std::fill(s.begin(), s.end(), 0.0);
        std::fill(r.begin(), r.end(), 0.0);
        double last = 0.0;
        for (const TimedPoint& pt : seq.points) {
            const double dt = pt.time - last;
            if (dt > 0.0) {
                for (std::size_t k = 0; k < nk; ++k) {
                    const double decay = std::exp(-p.beta[k] * dt);
                    r[k] = decay * (r[k] + dt * s[k]);
                    s[k] *= decay;
                }
            }
            const int i = pt.dim;
            double lambda = p.mu[static_cast<std::size_t>(i)];
            for (int j = 0; j < d; ++j)
                for (int e = 0; e < E; ++e) {
                    const std::size_t k = prob.kidx(i, j, e);
                    lambda += p.alpha[k] * s[k];
                }
            if (!(lambda > 0.0) || !std::isfinite(lambda)) return -kInf;
            const double inv = 1.0 / lambda;
            ll += std::log(lambda);
            grad.mu[static_cast<std::size_t>(i)] += inv;
            for (int j = 0; j < d; ++j)
                for (int e = 0; e < E; ++e) {
                    const std::size_t k = prob.kidx(i, j, e);
                    grad.alpha[k] += s[k] * inv;
                    grad.beta[k] -= p.alpha[k] * r[k] * inv;
                }
            for (int t2 = 0; t2 < d; ++t2)
                for (int e = 0; e < E; ++e) s[prob.kidx(t2, i, e)] += 1.0;
            last = pt.time;
        }
        const double T = seq.horizon;
        for (int i = 0; i < d; ++i) {
            ll -= p.mu[static_cast<std::size_t>(i)] * T;
            grad.mu[static_cast<std::size_t>(i)] -= T;
        }
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                for (int e = 0; e < E; ++e) {
                    const std::size_t k = prob.kidx(i, j, e);
                    const double a = p.alpha[k], b = p.beta[k];
                    double acc_a = 0.0, acc_b = 0.0;
                    for (const TimedPoint& pt : seq.points) {
                        if (pt.dim != j) continue;
                        const double u = T - pt.time;
                        const double ex = std::exp(-b * u);
                        acc_a += 1.0 - ex;
                        acc_b += u * ex;
                    }
                    ll -= a / b * acc_a;
                    grad.alpha[k] -= acc_a / b;
                    grad.beta[k] -= a * (acc_b * b - acc_a) / (b * b);
                }
    }
    return ll;
}

}  // namespace

HawkesFitResult fit_hawkes(const std::vector<HawkesSequence>& data, const HawkesFitConfig& cfg) {
    if (cfg.dims < 1 || cfg.terms < 1) raise_usage("BadComponentCount", "dims and terms must be positive");
    std::size_t total_events = 0;
    double total_horizon = 0.0;
    std::vector<double> per_dim(static_cast<std::size_t>(cfg.dims), 0.0);
    for (const HawkesSequence& seq : data) {
        if (!(seq.horizon > 0.0)) raise_usage("HorizonZero", "sequence horizon must be positive");
        double last = 0.0;
        for (const TimedPoint& pt : seq.points) {
            if (pt.dim < 0 || pt.dim >= cfg.dims)
                raise_data("MalformedRow", "event dimension outside the configured process");
            if (pt.time < last) raise_data("NonMonotonicTimestamp", "sequence times must be sorted");
            if (pt.time > seq.horizon) raise_data("MalformedRow", "event beyond its sequence horizon");
            last = pt.time;
            ++total_events;
            per_dim[static_cast<std::size_t>(pt.dim)] += 1.0;
        }
        total_horizon += seq.horizon;
    }
    if (total_events < 10) raise_data("InsufficientData", "too few events to fit a point process");

    const FitProblem prob{&data, cfg.dims, cfg.terms, cfg.diagonal_only};
    const std::size_t nk = static_cast<std::size_t>(cfg.dims) * cfg.dims * cfg.terms;
    Rng rng(cfg.seed);

    HawkesFitResult best;
    best.loglik = -kInf;

    FitPoint grad;
    for (int restart = 0; restart < cfg.restarts; ++restart) {
        FitPoint p;
        p.mu.resize(static_cast<std::size_t>(cfg.dims));
        p.alpha.assign(nk, 0.0);
        p.beta.assign(nk, 0.0);
        for (int i = 0; i < cfg.dims; ++i) {
            const double rate = per_dim[static_cast<std::size_t>(i)] / total_horizon;
            p.mu[static_cast<std::size_t>(i)] = std::max(rate * rng.uniform(0.3, 0.8), 1e-8);
        }
        for (int i = 0; i < cfg.dims; ++i)
            for (int j = 0; j < cfg.dims; ++j)
                for (int e = 0; e < cfg.terms; ++e) {
                    const std::size_t k = prob.kidx(i, j, e);
                    p.beta[k] = std::pow(4.0, e) * rng.uniform(0.5, 2.0);
                    if (!prob.kernel_active(i, j)) {
                        p.alpha[k] = 1e-12;
                        continue;
                    }
                    const double target = (i == j ? rng.uniform(0.2, 0.5) : rng.uniform(0.01, 0.1));
                    p.alpha[k] = target * p.beta[k] / static_cast<double>(cfg.terms);
                }

        double f = loglik_and_grad(prob, p, grad);
        if (!std::isfinite(f)) continue;
        double step = 0.05;
        bool converged = false;
        int iter = 0;
        for (; iter < cfg.max_iterations; ++iter) {
            // ascent direction in log-parameter space, normalized to a unit
            // max step so the backtracking scale is meaningful
            std::vector<double> dmu(p.mu.size()), dalpha(nk, 0.0), dbeta(nk, 0.0);
            double gmax = 0.0;
            for (std::size_t i = 0; i < p.mu.size(); ++i) {
                dmu[i] = grad.mu[i] * p.mu[i];
                gmax = std::max(gmax, std::abs(dmu[i]));
            }
            for (int i = 0; i < cfg.dims; ++i)
                for (int j = 0; j < cfg.dims; ++j)
                    for (int e = 0; e < cfg.terms; ++e) {
                        const std::size_t k = prob.kidx(i, j, e);
                        if (!prob.kernel_active(i, j)) continue;
                        dalpha[k] = grad.alpha[k] * p.alpha[k];
                        dbeta[k] = grad.beta[k] * p.beta[k];
                        gmax = std::max(gmax, std::max(std::abs(dalpha[k]), std::abs(dbeta[k])));
                    }
            if (gmax < 1e-12) {
                converged = true;
                break;
            }
            const double inv_gmax = 1.0 / gmax;

            double s = step;
            bool improved = false;
            FitPoint trial = p;
            double f_trial = f;
            while (s > 1e-15) {
                for (std::size_t i = 0; i < p.mu.size(); ++i)
                    trial.mu[i] = p.mu[i] * std::exp(s * dmu[i] * inv_gmax);
                for (std::size_t k = 0; k < nk; ++k) {
                    trial.alpha[k] = p.alpha[k] * std::exp(s * dalpha[k] * inv_gmax);
                    trial.beta[k] = p.beta[k] * std::exp(s * dbeta[k] * inv_gmax);
                }
                // stationarity projection
                HawkesParams trial_params = to_params(prob, trial);
                const double rho = trial_params.spectral_radius();
                if (rho >= cfg.stationary_cap) {
                    const double scale = cfg.stationary_cap * 0.98 / rho;
                    for (std::size_t k = 0; k < nk; ++k) trial.alpha[k] *= scale;
                }
                FitPoint trial_grad;
                f_trial = loglik_and_grad(prob, trial, trial_grad);
                if (std::isfinite(f_trial) && f_trial > f) {
                    improved = true;
                    grad = std::move(trial_grad);
                    break;
                }
                s *= 0.5;
            }
            if (!improved) {
                converged = true;  // no ascent direction improves: local optimum
                break;
            }
            const double gain = f_trial - f;
            p = trial;
            f = f_trial;
            step = std::min(s * 2.0, 0.5);
            if (gain < cfg.tolerance * (1.0 + std::abs(f))) {
                converged = true;
                break;
            }
        }
        if (f > best.loglik) {
            best.loglik = f;
            best.params = to_params(prob, p);
            best.converged = converged;
            best.iterations = iter;
        }
    }
    if (!std::isfinite(best.loglik))
        raise_numeric("NonConvergence", "every restart produced a non-finite likelihood");
    best.params.validate();
    return best;
}

HawkesFitResult fit_hawkes_streams(const std::vector<EventStream>& corpus, const HawkesFitConfig& cfg,
                                   const HawkesMarkFitConfig& marks_cfg) {
    if (cfg.dims != 4)
        raise_usage("BadComponentCount", "order-flow fits use the 4 canonical (action, side) dimensions");
    std::vector<HawkesSequence> sequences;
    std::vector<std::vector<double>> depths(4);
    std::vector<double> volume_sum(4, 0.0), volume_n(4, 0.0);
    for (const EventStream& stream : corpus) {
        validate_stream(stream);
        HawkesSequence seq;
        seq.points.reserve(stream.events.size());
        const std::vector<FeatureVector> fvs = featurize_stream(stream, marks_cfg.midprice_halflife);
        for (std::size_t i = 0; i < stream.events.size(); ++i) {
            const TradeEvent& ev = stream.events[i];
            const int dim = hawkes_dim(ev.action, ev.side);
            seq.points.push_back({ev.timestamp, dim});
            if (ev.has_price()) depths[static_cast<std::size_t>(dim)].push_back(fvs[i].price_depth);
            volume_sum[static_cast<std::size_t>(dim)] += static_cast<double>(ev.volume);
            volume_n[static_cast<std::size_t>(dim)] += 1.0;
        }
        seq.horizon = stream.events.back().timestamp;
        if (!(seq.horizon > 0.0)) raise_data("DegenerateFeature", "stream spans zero time");
        sequences.push_back(std::move(seq));
    }

    for (int dim = 0; dim < 4; ++dim)
        if (volume_n[static_cast<std::size_t>(dim)] < marks_cfg.min_per_dim)
            raise_data("InsufficientData",
                       std::string("dimension ") + to_string(hawkes_side(dim)) + "/" +
                           to_string(hawkes_action(dim)) + " has fewer than " +
                           std::to_string(marks_cfg.min_per_dim) + " events");

    HawkesFitResult result = fit_hawkes(sequences, cfg);
    result.params.marks.resize(4);
    Rng rng(cfg.seed + 1);
    for (int dim = 0; dim < 4; ++dim) {
        HawkesMarks& mk = result.params.marks[static_cast<std::size_t>(dim)];
        mk.volume_rate = volume_n[static_cast<std::size_t>(dim)] / volume_sum[static_cast<std::size_t>(dim)];
        mk.depth = fit_gmm(depths[static_cast<std::size_t>(dim)], marks_cfg.gmm, rng);
    }
    return result;
}

void save_hawkes(const HawkesParams& params, const std::string& path) {
    KvFile file;
    file.header = kHawkesParamsHeader;
    KvSection model{"model", {}};
    model.entries.emplace_back("dims", std::to_string(params.dims()));
    file.sections.push_back(std::move(model));
    KvSection base{"baseline", {}};
    base.entries.emplace_back("mu", join_g17(params.mu));
    file.sections.push_back(std::move(base));
    for (int i = 0; i < params.dims(); ++i)
        for (int j = 0; j < params.dims(); ++j) {
            KvSection sec{"kernel " + std::to_string(i) + " " + std::to_string(j), {}};
            sec.entries.emplace_back("alphas", join_g17(params.kernel(i, j).alphas));
            sec.entries.emplace_back("betas", join_g17(params.kernel(i, j).betas));
            file.sections.push_back(std::move(sec));
        }
    for (std::size_t dim = 0; dim < params.marks.size(); ++dim) {
        KvSection sec{"marks " + std::to_string(dim), {}};
        sec.entries.emplace_back("volume_rate", format_g17(params.marks[dim].volume_rate));
        gmm_to_entries(params.marks[dim].depth, sec);
        file.sections.push_back(std::move(sec));
    }
    file.save(path);
}

HawkesParams load_hawkes(const std::string& path) {
    KvFile file = KvFile::load(path);
    if (file.header != kHawkesParamsHeader)
        raise_data("ParamsVersionMismatch",
                   path + ": expected header '" + std::string(kHawkesParamsHeader) + "', got '" + file.header + "'");
    const int dims = static_cast<int>(file.require("model").require_int("dims"));
    if (dims < 1) raise_data("CorruptParams", path + ": dims must be positive");
    HawkesParams params;
    params.mu = file.require("baseline").require_doubles("mu");
    if (params.mu.size() != static_cast<std::size_t>(dims))
        raise_data("CorruptParams", path + ": baseline size does not match dims");
    params.kernels.resize(static_cast<std::size_t>(dims) * dims);
    for (int i = 0; i < dims; ++i)
        for (int j = 0; j < dims; ++j) {
            const KvSection& sec = file.require("kernel " + std::to_string(i) + " " + std::to_string(j));
            params.kernel(i, j).alphas = sec.require_doubles("alphas");
            params.kernel(i, j).betas = sec.require_doubles("betas");
        }
    if (file.find("marks 0")) {
        params.marks.resize(static_cast<std::size_t>(dims));
        for (int dim = 0; dim < dims; ++dim) {
            const KvSection& sec = file.require("marks " + std::to_string(dim));
            params.marks[static_cast<std::size_t>(dim)].volume_rate = sec.require_double("volume_rate");
            params.marks[static_cast<std::size_t>(dim)].depth = gmm_from_section(sec);
            if (!(params.marks[static_cast<std::size_t>(dim)].volume_rate > 0.0))
                raise_data("CorruptParams", path + ": mark volume rate must be positive");
        }
    }
    params.validate();
    return params;
}

}  // namespace flowsim
