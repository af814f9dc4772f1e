#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowsim/events.hpp"
#include "flowsim/hawkes.hpp"
#include "flowsim/lob.hpp"
#include "flowsim/model.hpp"
#include "flowsim/tokenizer.hpp"
#include "flowsim/zi.hpp"

namespace flowsim {

// Generator slot of the closed loop. Every implementation emits one
// composite trade token per call; decoding, price resolution, execution and
// state feedback are one shared code path in run_rollout, so trained-model
// and baseline trajectories are comparable by construction.
class TokenGenerator {
public:
    virtual ~TokenGenerator() = default;
    virtual int next_token(std::span<const ContextTuple> window, Rng& rng) = 0;
    // Hard cap on the sliding context window, if the backend has one.
    virtual std::optional<int> context_cap() const { return std::nullopt; }
};

// Trained (or untrained) transformer: forward pass on the window, then
// penalized multinomial sampling; the window's trade components are the
// repetition-penalty history.
class ModelGenerator final : public TokenGenerator {
public:
    ModelGenerator(const Model* model, SamplerConfig sampler);
    int next_token(std::span<const ContextTuple> window, Rng& rng) override;
    std::optional<int> context_cap() const override;

private:
    const Model* model_;
    SamplerConfig sampler_;
};

// Open-loop zero-intelligence flow quantized onto the schema's bins.
class ZiGenerator final : public TokenGenerator {
public:
    ZiGenerator(ZiParams params, const TokenSchema* schema);
    int next_token(std::span<const ContextTuple> window, Rng& rng) override;

private:
    ZiParams params_;
    const TokenSchema* schema_;
};

// Open-loop compound Hawkes flow: incremental Ogata thinning plus marks,
// quantized onto the schema's bins. Stateful; construct one per rollout.
class HawkesGenerator final : public TokenGenerator {
public:
    HawkesGenerator(const HawkesParams* params, const TokenSchema* schema);  // Data MissingMarks
    int next_token(std::span<const ContextTuple> window, Rng& rng) override;

private:
    const HawkesParams* params_;
    const TokenSchema* schema_;
    HawkesState state_;
    std::vector<double> per_dim_;
    double bar_ = -1.0;  // current thinning bound, lazily initialized
    double last_emit_time_ = 0.0;
};

// Fixed token sequence (dependency-injection path for tests and replays).
class CannedGenerator final : public TokenGenerator {
public:
    explicit CannedGenerator(std::vector<int> tokens);
    int next_token(std::span<const ContextTuple> window, Rng& rng) override;

private:
    std::vector<int> tokens_;
    std::size_t at_ = 0;
};

struct RolloutConfig {
    // Historical events replayed into a fresh book before generation and
    // encoded as the initial model context. May be empty; then p0 and
    // liquidity must be set explicitly and the window is seeded with one
    // synthetic tuple (configured liquidity/scope, the zero-offset price
    // level, trade token 0) so the model has an input at step one.
    EventStream context;
    int horizon = 1024;
    int context_length = 128;        // sliding-window cap (also capped by the generator)
    double midprice_halflife = 2.0;  // context featurization halflife, seconds
    int liquidity = -1;              // -1: derive from context ADV via schema terciles
    Scope scope = Scope::Market;     // scope flag stamped on generated tuples
    double p0 = 0.0;                 // anchor price when the context is empty
    MarketPriceRule rule = MarketPriceRule::MidpriceForMarketPairs;
    std::uint64_t seed = 1;
};

struct InjectionSpec {
    Side side = Side::Sell;
    double frequency_multiplier = 10.0;  // 0 disables injection entirely
};

struct RolloutResult {
    std::vector<int> tokens;             // generated composite trade tokens
    std::vector<ContextTuple> tuples;    // feedback tuples appended to the window
    std::vector<TradeEvent> events;      // resolved generated events
    std::vector<TradeEvent> injected;    // executed counterfactual orders
    std::vector<int> delta_p_trace;      // re-binned midprice offset per step
    std::vector<double> midprice_trace;  // simulator midprice after each step
    std::vector<double> time_trace;      // event clock per step
    SimResult sim;                       // generation-phase simulator records
    double final_midprice = 0.0;
    std::optional<double> final_best_bid;
    std::optional<double> final_best_ask;
    int rejected_orders = 0;  // resolved to a non-positive price, not executed
};

// Closed loop: replay context, then horizon times (sample token, detokenize,
// resolve price against the simulator midprice, execute, re-bin the midprice
// offset, slide the window).
RolloutResult run_rollout(const RolloutConfig& cfg, const TokenSchema& schema, TokenGenerator& gen);

// Same loop with synthetic Add orders of one side interleaved at
// frequency_multiplier times the context's empirical per-side Add rate
// (at-touch price, median context volume). Injected orders perturb the
// simulator only; they are never appended to the model context. Generator
// draws are identical to run_rollout under the same seed (common random
// numbers), so paired comparisons isolate the injection's market impact.
RolloutResult inject_counterfactual(const RolloutConfig& cfg, const TokenSchema& schema,
                                    TokenGenerator& gen, const InjectionSpec& inj);

using GeneratorFactory = std::function<std::unique_ptr<TokenGenerator>()>;

// Independent rollouts with per-index seeds (cfg.seed + index), optionally
// injected, spread over `jobs` threads.
std::vector<RolloutResult> run_rollout_batch(const RolloutConfig& cfg, const TokenSchema& schema,
                                             const GeneratorFactory& make_generator, int n_rollouts,
                                             int jobs, const InjectionSpec* inj = nullptr);

// Sample standard deviation (n-1 denominator); fewer than two points -> 0.
double sample_stddev(std::span<const double> xs);

struct SweepRow {
    int liquidity = 0;
    Scope scope = Scope::Market;
    double volume_std = 0.0;
    double interarrival_std = 0.0;
    std::size_t n_events = 0;
};

// Context-free trajectories for each (liquidity, scope) combination;
// dispersion of the detokenized volumes and interarrival times per combo.
std::vector<SweepRow> controllability_sweep(const Model& model, const TokenSchema& schema,
                                            const SamplerConfig& sampler, int n_trajectories,
                                            int horizon, double p0, std::uint64_t seed, int jobs);

inline constexpr const char* kControllabilityCsvHeader =
    "liquidity,scope,volume_std,interarrival_std,n_events";
void write_controllability_csv(const std::vector<SweepRow>& rows, const std::string& path);

inline constexpr const char* kTrajectoriesCsvHeader = "step,time,mean_midprice,p10,p25,p50,p75,p90";
// Cross-rollout midprice aggregate per generation step.
void write_trajectories_csv(const std::vector<RolloutResult>& rollouts, const std::string& path);

}  // namespace flowsim
