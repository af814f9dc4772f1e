#include "flowsim/rollout.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <limits>
#include <thread>

#include "flowsim/error.hpp"
#include "flowsim/eval.hpp"
#include "flowsim/text_io.hpp"

namespace flowsim {

ModelGenerator::ModelGenerator(const Model* model, SamplerConfig sampler)
    : model_(model), sampler_(sampler) {}

int ModelGenerator::next_token(std::span<const ContextTuple> window, Rng& rng) {
    const std::vector<double> logits = forward_last(*model_, window);
    std::vector<int> recent;
    recent.reserve(window.size());
    for (const ContextTuple& t : window) recent.push_back(t.trade);
    return sample_next(logits, recent, sampler_, rng);
}

std::optional<int> ModelGenerator::context_cap() const { return model_->config.context; }

namespace {

int quantize_intent(const OrderIntent& intent, const TokenSchema& schema) {
    TradeDigits d;
    d.action = intent.action == Action::Add ? 0 : 1;
    d.side = intent.side == Side::Buy ? 0 : 1;
    d.depth = schema.depth.bin_index(intent.depth_ratio);
    d.volume = schema.volume.bin_index(std::log1p(static_cast<double>(intent.volume)));
    d.time = schema.time.bin_index(std::log1p(intent.dt_seconds));
    return compose_trade_token(d, schema.bases());
}

}  // namespace

ZiGenerator::ZiGenerator(ZiParams params, const TokenSchema* schema)
    : params_(std::move(params)), schema_(schema) {}

int ZiGenerator::next_token(std::span<const ContextTuple>, Rng& rng) {
    return quantize_intent(zi_next(params_, rng), *schema_);
}

HawkesGenerator::HawkesGenerator(const HawkesParams* params, const TokenSchema* schema)
    : params_(params), schema_(schema), state_(*params) {
    params_->validate();
    if (params_->marks.empty())
        raise_data("MissingMarks", "closed-loop generation needs per-dimension mark distributions");
}

int HawkesGenerator::next_token(std::span<const ContextTuple>, Rng& rng) {
    if (bar_ < 0.0) bar_ = state_.total_intensity();
    if (!(bar_ > 0.0)) raise_data("DegenerateParams", "total intensity is zero; process cannot advance");
    for (long guard = 0; guard < 100000000L; ++guard) {
        const double wait = rng.exponential(bar_);
        const double t_cand = state_.time() + wait;
        state_.advance(t_cand);
        const double lambda_now = state_.total_intensity();
        assert(lambda_now <= bar_ * (1.0 + 1e-9));
        const double u = rng.uniform() * bar_;
        if (u <= lambda_now) {
            state_.per_dim_intensity(per_dim_);
            const int dim = rng.categorical(per_dim_);
            state_.add_event(dim);
            bar_ = state_.total_intensity();
            const HawkesMarks& mk = params_->marks[static_cast<std::size_t>(dim)];
            OrderIntent intent;
            intent.dt_seconds = t_cand - last_emit_time_;
            intent.action = hawkes_action(dim);
            intent.side = hawkes_side(dim);
            intent.depth_ratio = std::max(mk.depth.sample(rng), -0.9999);
            intent.volume = std::max<std::int64_t>(1, std::llround(rng.exponential(mk.volume_rate)));
            intent.is_market_order = false;
            last_emit_time_ = t_cand;
            return quantize_intent(intent, *schema_);
        }
        bar_ = lambda_now;
        if (!(bar_ > 0.0)) raise_data("DegenerateParams", "intensity decayed to zero during thinning");
    }
    raise_numeric("NonConvergence", "thinning did not accept an event");
}

CannedGenerator::CannedGenerator(std::vector<int> tokens) : tokens_(std::move(tokens)) {}

int CannedGenerator::next_token(std::span<const ContextTuple>, Rng&) {
    if (at_ >= tokens_.size()) raise_data("ExhaustedTokens", "canned token sequence exhausted");
    return tokens_[at_++];
}

namespace {

struct InjectionState {
    bool active = false;
    Side side = Side::Sell;
    double interval = 0.0;
    double next_time = 0.0;
    std::int64_t volume = 0;
};

InjectionState plan_injections(const RolloutConfig& cfg, const InjectionSpec* inj, double start_time) {
    InjectionState st;
    if (inj == nullptr || !(inj->frequency_multiplier > 0.0)) return st;
    const auto& events = cfg.context.events;
    std::size_t side_adds = 0;
    std::vector<double> volumes;
    volumes.reserve(events.size());
    for (const TradeEvent& e : events) {
        if (e.action == Action::Add && e.side == inj->side) ++side_adds;
        volumes.push_back(static_cast<double>(e.volume));
    }
    const double duration = events.size() >= 2 ? events.back().timestamp - events.front().timestamp : 0.0;
    if (side_adds == 0 || !(duration > 0.0)) {
        raise_data("InsufficientData",
                   "context has no " + std::string(inj->side == Side::Buy ? "buy" : "sell") +
                       " adds over a positive time span to estimate an injection frequency");
    }
    const double rate = static_cast<double>(side_adds) / duration;
    st.active = true;
    st.side = inj->side;
    st.interval = 1.0 / (rate * inj->frequency_multiplier);
    st.next_time = start_time + st.interval;
    st.volume = std::max<std::int64_t>(1, std::llround(sample_median(volumes)));
    return st;
}

RolloutResult roll(const RolloutConfig& cfg, const TokenSchema& schema, TokenGenerator& gen,
                   const InjectionSpec* inj) {
    schema.check_consistent();
    if (cfg.horizon < 0) raise_usage("BadHorizon", "horizon must be non-negative");
    if (cfg.context_length < 1) raise_usage("BadContextLength", "context window must hold at least one tuple");

    const bool has_context = !cfg.context.events.empty();
    if (has_context) validate_stream(cfg.context);
    const double p0 = has_context ? cfg.context.meta.opening_price : cfg.p0;
    if (!(p0 > 0.0)) {
        raise_usage("MissingOpeningPrice", "an empty context needs an explicit positive anchor price");
    }
    int liquidity = cfg.liquidity;
    if (liquidity < 0) {
        if (!has_context)
            raise_usage("MissingLiquidity", "an empty context needs an explicit liquidity tercile");
        liquidity = schema.liquidity_bin(cfg.context.meta.average_daily_volume);
    }
    if (liquidity > 2) raise_usage("BadLiquidity", "liquidity tercile must be 0, 1, or 2");
    const int scope_index = cfg.scope == Scope::Market ? 0 : 1;

    int cap = cfg.context_length;
    if (const std::optional<int> gen_cap = gen.context_cap(); gen_cap.has_value())
        cap = std::min(cap, *gen_cap);

    OrderBook book(p0, cfg.rule);
    for (const TradeEvent& e : cfg.context.events) book.step(e);
    const std::size_t base_fills = book.fills().size();
    const std::size_t base_deletes = book.deletes().size();
    const std::size_t base_series = book.series().size();
    const std::size_t base_orders = book.orders().size();

    std::vector<ContextTuple> window;
    if (has_context) {
        std::vector<ContextTuple> tuples = encode_stream(cfg.context, schema, cfg.midprice_halflife);
        const std::size_t keep = std::min<std::size_t>(tuples.size(), static_cast<std::size_t>(cap));
        window.assign(tuples.end() - static_cast<std::ptrdiff_t>(keep), tuples.end());
    } else {
        window.push_back(ContextTuple{liquidity, scope_index, schema.price_level.bin_index(0.0), 0});
    }

    double clock = has_context ? cfg.context.events.back().timestamp : 0.0;
    InjectionState inject = plan_injections(cfg, inj, clock);

    RolloutResult result;
    result.tokens.reserve(static_cast<std::size_t>(cfg.horizon));
    Rng rng(cfg.seed);
    for (int step = 0; step < cfg.horizon; ++step) {
        const int token = gen.next_token(window, rng);
        const TradeDigits digits = split_trade_token(token, schema.bases());
        const OrderIntent intent = detokenize(digits, schema);
        const double t = clock + intent.dt_seconds;

        while (inject.active && inject.next_time <= t) {
            const double mid = book.sim_midprice();
            TradeEvent order{inject.next_time, Action::Add, inject.side, mid, inject.volume, false};
            if (order.order_price > 0.0) {
                book.step(order);
                result.injected.push_back(order);
            } else {
                ++result.rejected_orders;
            }
            inject.next_time += inject.interval;
        }

        const TradeEvent event = to_trade_event(intent, t, book.sim_midprice());
        if (!event.has_price() || event.order_price > 0.0) {
            book.step(event);
        } else {
            ++result.rejected_orders;
        }

        const double delta_p = (book.sim_midprice() - p0) / p0;
        const int i_dp = schema.price_level.bin_index(delta_p);
        const ContextTuple tuple{liquidity, scope_index, i_dp, token};
        window.push_back(tuple);
        if (window.size() > static_cast<std::size_t>(cap)) window.erase(window.begin());
        assert(window.size() <= static_cast<std::size_t>(cap));
        assert(window.back().price_level == schema.price_level.bin_index((book.sim_midprice() - p0) / p0));

        result.tokens.push_back(token);
        result.tuples.push_back(tuple);
        result.events.push_back(event);
        result.delta_p_trace.push_back(i_dp);
        result.midprice_trace.push_back(book.sim_midprice());
        result.time_trace.push_back(t);
        clock = t;
    }

    result.sim.fills.assign(book.fills().begin() + static_cast<std::ptrdiff_t>(base_fills), book.fills().end());
    result.sim.deletes.assign(book.deletes().begin() + static_cast<std::ptrdiff_t>(base_deletes),
                              book.deletes().end());
    result.sim.series.assign(book.series().begin() + static_cast<std::ptrdiff_t>(base_series),
                             book.series().end());
    result.sim.orders.assign(book.orders().begin() + static_cast<std::ptrdiff_t>(base_orders),
                             book.orders().end());
    result.final_midprice = book.sim_midprice();
    result.final_best_bid = book.best_bid();
    result.final_best_ask = book.best_ask();
    return result;
}

}  // namespace

RolloutResult run_rollout(const RolloutConfig& cfg, const TokenSchema& schema, TokenGenerator& gen) {
    return roll(cfg, schema, gen, nullptr);
}

RolloutResult inject_counterfactual(const RolloutConfig& cfg, const TokenSchema& schema,
                                    TokenGenerator& gen, const InjectionSpec& inj) {
    return roll(cfg, schema, gen, &inj);
}

std::vector<RolloutResult> run_rollout_batch(const RolloutConfig& cfg, const TokenSchema& schema,
                                             const GeneratorFactory& make_generator, int n_rollouts,
                                             int jobs, const InjectionSpec* inj) {
    if (n_rollouts < 0) raise_usage("BadCount", "rollout count must be non-negative");
    std::vector<RolloutResult> results(static_cast<std::size_t>(n_rollouts));
    if (n_rollouts == 0) return results;
    jobs = std::clamp(jobs, 1, n_rollouts);

    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    auto worker = [&]() {
        for (;;) {
            const int idx = next.fetch_add(1);
            if (idx >= n_rollouts || failed.load()) return;
            try {
                RolloutConfig local = cfg;
                local.seed = cfg.seed + static_cast<std::uint64_t>(idx);
                std::unique_ptr<TokenGenerator> gen = make_generator();
                results[static_cast<std::size_t>(idx)] = roll(local, schema, *gen, inj);
            } catch (...) {
                bool expected = false;
                if (failed.compare_exchange_strong(expected, true)) failure = std::current_exception();
                return;
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(jobs));
        for (int j = 0; j < jobs; ++j) threads.emplace_back(worker);
        for (std::thread& th : threads) th.join();
    }
    if (failed.load()) std::rethrow_exception(failure);
    return results;
}

double sample_stddev(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

std::vector<SweepRow> controllability_sweep(const Model& model, const TokenSchema& schema,
                                            const SamplerConfig& sampler, int n_trajectories,
                                            int horizon, double p0, std::uint64_t seed, int jobs) {
    if (n_trajectories < 0) raise_usage("BadCount", "trajectory count must be non-negative");
    if (horizon < 1) raise_usage("BadHorizon", "trajectories need at least one step");
    if (!(p0 > 0.0)) raise_usage("MissingOpeningPrice", "sweep needs a positive anchor price");
    std::vector<SweepRow> rows;
    if (n_trajectories == 0) return rows;

    int combo = 0;
    for (int liq = 0; liq < 3; ++liq) {
        for (const Scope scope : {Scope::Market, Scope::Participant}) {
            RolloutConfig cfg;
            cfg.horizon = horizon;
            cfg.context_length = model.config.context;
            cfg.liquidity = liq;
            cfg.scope = scope;
            cfg.p0 = p0;
            cfg.seed = seed + static_cast<std::uint64_t>(combo) * static_cast<std::uint64_t>(n_trajectories);
            GeneratorFactory factory = [&model, &sampler]() {
                return std::make_unique<ModelGenerator>(&model, sampler);
            };
            const std::vector<RolloutResult> runs =
                run_rollout_batch(cfg, schema, factory, n_trajectories, jobs);
            std::vector<double> volumes;
            std::vector<double> interarrivals;
            for (const RolloutResult& r : runs) {
                double prev = 0.0;
                for (std::size_t i = 0; i < r.events.size(); ++i) {
                    volumes.push_back(static_cast<double>(r.events[i].volume));
                    interarrivals.push_back(r.events[i].timestamp - prev);
                    prev = r.events[i].timestamp;
                }
            }
            SweepRow row;
            row.liquidity = liq;
            row.scope = scope;
            row.volume_std = sample_stddev(volumes);
            row.interarrival_std = sample_stddev(interarrivals);
            row.n_events = volumes.size();
            rows.push_back(row);
            ++combo;
        }
    }
    return rows;
}

void write_controllability_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::string text = std::string(kControllabilityCsvHeader) + "\n";
    for (const SweepRow& r : rows) {
        text += std::to_string(r.liquidity) + "," + to_string(r.scope) + "," + format_g17(r.volume_std) +
                "," + format_g17(r.interarrival_std) + "," + std::to_string(r.n_events) + "\n";
    }
    write_text_file(path, text);
}

namespace {

double sorted_quantile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

void write_trajectories_csv(const std::vector<RolloutResult>& rollouts, const std::string& path) {
    std::size_t max_steps = 0;
    for (const RolloutResult& r : rollouts) max_steps = std::max(max_steps, r.midprice_trace.size());
    std::string text = std::string(kTrajectoriesCsvHeader) + "\n";
    std::vector<double> mids;
    for (std::size_t k = 0; k < max_steps; ++k) {
        mids.clear();
        double time_sum = 0.0;
        for (const RolloutResult& r : rollouts) {
            if (k < r.midprice_trace.size()) {
                mids.push_back(r.midprice_trace[k]);
                time_sum += r.time_trace[k];
            }
        }
        std::sort(mids.begin(), mids.end());
        double mean = 0.0;
        for (double m : mids) mean += m;
        mean /= static_cast<double>(mids.size());
        text += std::to_string(k) + "," + format_g17(time_sum / static_cast<double>(mids.size())) + "," +
                format_g17(mean) + "," + format_g17(sorted_quantile(mids, 0.10)) + "," +
                format_g17(sorted_quantile(mids, 0.25)) + "," + format_g17(sorted_quantile(mids, 0.50)) +
                "," + format_g17(sorted_quantile(mids, 0.75)) + "," +
                format_g17(sorted_quantile(mids, 0.90)) + "\n";
    }
    write_text_file(path, text);
}

}  // namespace flowsim
