#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flowsim/error.hpp"
#include "flowsim/eval.hpp"
#include "flowsim/events.hpp"
#include "flowsim/hawkes.hpp"
#include "flowsim/lob.hpp"
#include "flowsim/model.hpp"
#include "flowsim/rollout.hpp"
#include "flowsim/text_io.hpp"
#include "flowsim/tokenizer.hpp"
#include "flowsim/zi.hpp"

namespace fs = std::filesystem;
using namespace flowsim;

namespace {

StreamFormat parse_format(const std::string& name) {
    if (name == "csv") return StreamFormat::Csv;
    if (name == "jsonl") return StreamFormat::Jsonl;
    raise_usage("BadFormat", "unknown stream format '" + name + "' (expected csv or jsonl)");
}

MarketPriceRule parse_rule(const std::string& name) {
    if (name == "midprice") return MarketPriceRule::MidpriceForMarketPairs;
    if (name == "crossing") return MarketPriceRule::Crossing;
    raise_usage("BadRule", "unknown market fill rule '" + name + "' (expected midprice or crossing)");
}

std::optional<double> price_override(double value) {
    if (value > 0.0) return value;
    return std::nullopt;
}

std::vector<EventStream> load_streams(const std::vector<std::string>& paths, const std::string& format,
                                      double opening_price) {
    std::vector<EventStream> streams;
    streams.reserve(paths.size());
    for (const std::string& p : paths)
        streams.push_back(read_stream(p, parse_format(format), price_override(opening_price)));
    return streams;
}

void emit(const std::string& out, const std::string& text) {
    if (out == "-") {
        std::cout << text;
    } else {
        write_text_file(out, text);
    }
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

// Options shared by every generation-capable subcommand.
struct GenSource {
    std::string checkpoint;
    std::string generator;  // "zi" | "hawkes"
    std::string params;
};

struct SamplerOpts {
    double temperature = 1.0;
    double penalty = 1.2;
    int penalty_window = 64;

    SamplerConfig to_config() const {
        SamplerConfig cfg;
        cfg.temperature = temperature;
        cfg.repetition_penalty = penalty;
        cfg.penalty_window = penalty_window;
        return cfg;
    }
};

void add_sampler_opts(CLI::App* cmd, SamplerOpts& s) {
    cmd->add_option("--temperature", s.temperature, "Sampling temperature (0 = greedy argmax)");
    cmd->add_option("--penalty", s.penalty, "Repetition penalty on recent tokens");
    cmd->add_option("--penalty-window", s.penalty_window, "How many recent tokens the penalty covers");
}

struct LoadedGenerator {
    std::shared_ptr<Model> model;
    std::shared_ptr<ZiParams> zi;
    std::shared_ptr<HawkesParams> hawkes;

    GeneratorFactory factory(const TokenSchema& schema, const SamplerConfig& sampler) const {
        if (model) {
            auto m = model;
            return [m, sampler]() { return std::make_unique<ModelGenerator>(m.get(), sampler); };
        }
        if (zi) {
            auto z = zi;
            const TokenSchema* s = &schema;
            return [z, s]() { return std::make_unique<ZiGenerator>(*z, s); };
        }
        auto h = hawkes;
        const TokenSchema* s = &schema;
        return [h, s]() { return std::make_unique<HawkesGenerator>(h.get(), s); };
    }
};

LoadedGenerator load_generator(const GenSource& src) {
    LoadedGenerator g;
    if (!src.checkpoint.empty()) {
        g.model = std::make_shared<Model>(load_checkpoint(src.checkpoint));
        return g;
    }
    if (src.generator.empty())
        raise_usage("MissingGenerator", "provide --checkpoint or --generator zi|hawkes");
    if (src.params.empty())
        raise_usage("MissingParams", "--generator needs --params with a fitted parameter file");
    if (src.generator == "zi") {
        g.zi = std::make_shared<ZiParams>(load_zi(src.params));
    } else if (src.generator == "hawkes") {
        g.hawkes = std::make_shared<HawkesParams>(load_hawkes(src.params));
    } else {
        raise_usage("BadGenerator", "unknown generator '" + src.generator + "' (expected zi or hawkes)");
    }
    return g;
}

void write_rollout_outputs(const std::vector<RolloutResult>& runs, const std::string& out_dir) {
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const std::string tag = std::to_string(i);
        write_series_csv(runs[i].sim.series, join_path(out_dir, "series_" + tag + ".csv"));
        write_orders_csv(runs[i].sim.orders, join_path(out_dir, "orders_" + tag + ".csv"));
        write_fills_csv(runs[i].sim.fills, join_path(out_dir, "fills_" + tag + ".csv"));
    }
    write_trajectories_csv(runs, join_path(out_dir, "trajectories.csv"));
}

double mean_terminal_midprice(const std::vector<RolloutResult>& runs) {
    double sum = 0.0;
    for (const RolloutResult& r : runs) sum += r.final_midprice;
    return runs.empty() ? 0.0 : sum / static_cast<double>(runs.size());
}

}  // namespace

int run_app(int argc, char** argv) {
    CLI::App app{
        "flowsim: trade-event tokenization, deterministic order-book simulation, calibrated "
        "stochastic baselines, a toy autoregressive flow model, closed-loop rollouts, and "
        "distributional evaluation"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from an INI-style file (dotted keys)");
    app.failure_message(CLI::FailureMessage::help);

    // ---- calibrate-tokenizer -------------------------------------------
    struct {
        std::vector<std::string> data;
        std::string format = "csv";
        double opening_price = 0.0;
        TokenizerConfig cfg;
        std::string out;
    } cal;
    {
        CLI::App* cmd = app.add_subcommand("calibrate-tokenizer",
                                           "Fit bin edges, outlier thresholds, representatives and "
                                           "liquidity terciles on a calibration corpus");
        cmd->add_option("--data", cal.data, "Event stream file(s)")->required()->expected(-1);
        cmd->add_option("--format", cal.format, "Stream format: csv or jsonl");
        cmd->add_option("--opening-price", cal.opening_price, "Opening price override for CSV streams");
        cmd->add_option("--depth-bins", cal.cfg.depth_bins, "Price-depth bins (default 16)");
        cmd->add_option("--volume-bins", cal.cfg.volume_bins, "Volume bins (default 16)");
        cmd->add_option("--time-bins", cal.cfg.time_bins, "Interarrival bins (default 16)");
        cmd->add_option("--level-bins", cal.cfg.price_level_bins, "Price-level bins (default 32)");
        cmd->add_option("--lower-pct", cal.cfg.lower_percentile, "Lower outlier percentile");
        cmd->add_option("--upper-pct", cal.cfg.upper_percentile, "Upper outlier percentile");
        cmd->add_option("--halflife", cal.cfg.midprice_halflife, "Midprice estimator halflife, seconds");
        cmd->add_option("--min-events", cal.cfg.min_calibration_events, "Minimum calibration events");
        cmd->add_option("--out", cal.out, "Schema output path")->required();
        cmd->callback([&cal]() {
            const TokenSchema schema =
                calibrate_tokenizer(load_streams(cal.data, cal.format, cal.opening_price), cal.cfg);
            save_schema(schema, cal.out);
            std::cout << "schema=" << cal.out << " vocab=" << schema.vocab_size() << "\n";
        });
    }

    // ---- encode ----------------------------------------------------------
    struct {
        std::string data;
        std::string format = "csv";
        double opening_price = 0.0;
        std::string schema;
        double halflife = 2.0;
        std::string out = "-";
    } enc;
    {
        CLI::App* cmd = app.add_subcommand("encode", "Tokenize an event stream into context tuples");
        cmd->add_option("--data", enc.data, "Event stream file")->required();
        cmd->add_option("--format", enc.format, "Stream format: csv or jsonl");
        cmd->add_option("--opening-price", enc.opening_price, "Opening price override for CSV streams");
        cmd->add_option("--schema", enc.schema, "Tokenizer schema path")->required();
        cmd->add_option("--halflife", enc.halflife, "Midprice estimator halflife, seconds");
        cmd->add_option("--out", enc.out, "Output path or - for stdout");
        cmd->callback([&enc]() {
            const TokenSchema schema = load_schema(enc.schema);
            const EventStream stream =
                read_stream(enc.data, parse_format(enc.format), price_override(enc.opening_price));
            std::string text = "liquidity,scope,price_level,trade\n";
            for (const ContextTuple& t : encode_stream(stream, schema, enc.halflife)) {
                text += std::to_string(t.liquidity) + "," + std::to_string(t.scope) + "," +
                        std::to_string(t.price_level) + "," + std::to_string(t.trade) + "\n";
            }
            emit(enc.out, text);
        });
    }

    // ---- decode ----------------------------------------------------------
    struct {
        std::vector<int> tokens;
        std::string schema;
        bool intent = false;
    } dec;
    {
        CLI::App* cmd = app.add_subcommand("decode", "Split composite trade tokens into their digits");
        cmd->add_option("tokens", dec.tokens, "Composite trade token(s)")->required()->expected(-1);
        cmd->add_option("--schema", dec.schema, "Tokenizer schema (enables --intent, custom bases)");
        cmd->add_flag("--intent", dec.intent, "Also print the detokenized order intent");
        cmd->callback([&dec]() {
            TokenBases bases;
            TokenSchema schema;
            if (!dec.schema.empty()) {
                schema = load_schema(dec.schema);
                bases = schema.bases();
            } else if (dec.intent) {
                raise_usage("MissingSchema", "--intent needs --schema for bin representatives");
            }
            for (int token : dec.tokens) {
                const TradeDigits d = split_trade_token(token, bases);
                std::cout << d.action << "," << d.side << "," << d.depth << "," << d.volume << ","
                          << d.time;
                if (dec.intent) {
                    const OrderIntent it = detokenize(d, schema);
                    std::cout << " action=" << to_string(it.action) << " side=" << to_string(it.side)
                              << " dt=" << format_g17(it.dt_seconds)
                              << " depth=" << format_g17(it.depth_ratio) << " volume=" << it.volume;
                }
                std::cout << "\n";
            }
        });
    }

    // ---- fit-zi -----------------------------------------------------------
    struct {
        std::vector<std::string> data;
        std::string format = "csv";
        double opening_price = 0.0;
        ZiFitConfig cfg;
        std::string out;
    } fzi;
    {
        CLI::App* cmd = app.add_subcommand("fit-zi", "Fit zero-intelligence marginals on a corpus");
        cmd->add_option("--data", fzi.data, "Event stream file(s)")->required()->expected(-1);
        cmd->add_option("--format", fzi.format, "Stream format: csv or jsonl");
        cmd->add_option("--opening-price", fzi.opening_price, "Opening price override for CSV streams");
        cmd->add_option("--halflife", fzi.cfg.midprice_halflife, "Midprice estimator halflife, seconds");
        cmd->add_option("--min-per-category", fzi.cfg.min_per_category,
                        "Minimum events per action/side category");
        cmd->add_option("--gmm-components", fzi.cfg.gmm.components, "Depth mixture components");
        cmd->add_option("--gmm-restarts", fzi.cfg.gmm.restarts, "EM restarts");
        cmd->add_option("--gmm-max-iter", fzi.cfg.gmm.max_iterations, "EM iteration cap");
        cmd->add_option("--seed", fzi.cfg.seed, "EM initialization seed");
        cmd->add_option("--out", fzi.out, "Parameter output path")->required();
        cmd->callback([&fzi]() {
            const ZiParams params = fit_zi(load_streams(fzi.data, fzi.format, fzi.opening_price), fzi.cfg);
            save_zi(params, fzi.out);
            std::cout << "p_buy=" << format_g17(params.p_buy) << " p_add=" << format_g17(params.p_add)
                      << " event_rate=" << format_g17(params.event_rate)
                      << " mean_volume=" << format_g17(1.0 / params.volume_rate) << "\n";
        });
    }

    // ---- fit-hawkes ---------------------------------------------------------
    struct {
        std::vector<std::string> data;
        std::string format = "csv";
        double opening_price = 0.0;
        HawkesFitConfig cfg;
        HawkesMarkFitConfig marks;
        std::string out;
    } fhk;
    {
        CLI::App* cmd =
            app.add_subcommand("fit-hawkes", "Fit a 4-dimensional compound Hawkes model on a corpus");
        cmd->add_option("--data", fhk.data, "Event stream file(s)")->required()->expected(-1);
        cmd->add_option("--format", fhk.format, "Stream format: csv or jsonl");
        cmd->add_option("--opening-price", fhk.opening_price, "Opening price override for CSV streams");
        cmd->add_option("--terms", fhk.cfg.terms, "Exponential kernel terms");
        cmd->add_flag("--diagonal-only", fhk.cfg.diagonal_only, "Zero all cross-excitation kernels");
        cmd->add_option("--max-iter", fhk.cfg.max_iterations, "Gradient-ascent iteration cap");
        cmd->add_option("--tol", fhk.cfg.tolerance, "Relative log-likelihood gain tolerance");
        cmd->add_option("--restarts", fhk.cfg.restarts, "Random restarts");
        cmd->add_option("--seed", fhk.cfg.seed, "Restart initialization seed");
        cmd->add_option("--stationary-cap", fhk.cfg.stationary_cap, "Spectral-radius projection bound");
        cmd->add_option("--halflife", fhk.marks.midprice_halflife, "Midprice estimator halflife, seconds");
        cmd->add_option("--min-per-dim", fhk.marks.min_per_dim, "Minimum events per flow dimension");
        cmd->add_option("--gmm-components", fhk.marks.gmm.components, "Depth mixture components");
        cmd->add_option("--gmm-restarts", fhk.marks.gmm.restarts, "EM restarts");
        cmd->add_option("--gmm-max-iter", fhk.marks.gmm.max_iterations, "EM iteration cap");
        cmd->add_option("--out", fhk.out, "Parameter output path")->required();
        cmd->callback([&fhk]() {
            const HawkesFitResult fit =
                fit_hawkes_streams(load_streams(fhk.data, fhk.format, fhk.opening_price), fhk.cfg, fhk.marks);
            save_hawkes(fit.params, fhk.out);
            std::cout << "loglik=" << format_g17(fit.loglik) << " converged=" << (fit.converged ? 1 : 0)
                      << " iterations=" << fit.iterations
                      << " spectral_radius=" << format_g17(fit.params.spectral_radius()) << "\n";
        });
    }

    // ---- gen-zi / gen-hawkes ------------------------------------------------
    struct {
        std::string params;
        std::size_t n = 10000;
        std::uint64_t seed = 1;
        std::string asset = "SIM";
        double adv = 1e6;
        double p0 = 100.0;
        std::string scope = "market";
        std::string out;
        std::string format = "csv";
    } gzi;
    {
        CLI::App* cmd = app.add_subcommand("gen-zi", "Sample a zero-intelligence event stream");
        cmd->add_option("--params", gzi.params, "Fitted parameter file")->required();
        cmd->add_option("--n", gzi.n, "Number of events");
        cmd->add_option("--seed", gzi.seed, "Sampling seed");
        cmd->add_option("--asset", gzi.asset, "Asset identifier");
        cmd->add_option("--adv", gzi.adv, "Average daily volume");
        cmd->add_option("--p0", gzi.p0, "Opening price");
        cmd->add_option("--scope", gzi.scope, "Stream scope: market or participant");
        cmd->add_option("--out", gzi.out, "Output stream path")->required();
        cmd->add_option("--format", gzi.format, "Stream format: csv or jsonl");
        cmd->callback([&gzi]() {
            const EventStream stream = sample_zi(load_zi(gzi.params), AssetMeta{gzi.asset, gzi.adv, gzi.p0},
                                                 parse_scope(gzi.scope), gzi.n, gzi.seed);
            write_stream(stream, gzi.out, parse_format(gzi.format));
            std::cout << "events=" << stream.events.size() << " out=" << gzi.out << "\n";
        });
    }

    struct {
        std::string params;
        double horizon = 0.0;
        std::size_t max_events = 0;
        std::uint64_t seed = 1;
        std::string asset = "SIM";
        double adv = 1e6;
        double p0 = 100.0;
        std::string scope = "market";
        std::string out;
        std::string format = "csv";
    } ghk;
    {
        CLI::App* cmd = app.add_subcommand("gen-hawkes", "Sample a compound-Hawkes event stream");
        cmd->add_option("--params", ghk.params, "Fitted parameter file")->required();
        cmd->add_option("--horizon", ghk.horizon, "Time horizon in seconds (0 = use --max-events only)");
        cmd->add_option("--max-events", ghk.max_events, "Event cap (0 = horizon only)");
        cmd->add_option("--seed", ghk.seed, "Sampling seed");
        cmd->add_option("--asset", ghk.asset, "Asset identifier");
        cmd->add_option("--adv", ghk.adv, "Average daily volume");
        cmd->add_option("--p0", ghk.p0, "Opening price");
        cmd->add_option("--scope", ghk.scope, "Stream scope: market or participant");
        cmd->add_option("--out", ghk.out, "Output stream path")->required();
        cmd->add_option("--format", ghk.format, "Stream format: csv or jsonl");
        cmd->callback([&ghk]() {
            const EventStream stream =
                simulate_hawkes(load_hawkes(ghk.params), AssetMeta{ghk.asset, ghk.adv, ghk.p0},
                                parse_scope(ghk.scope), ghk.horizon, ghk.max_events, ghk.seed);
            write_stream(stream, ghk.out, parse_format(ghk.format));
            std::cout << "events=" << stream.events.size() << " out=" << ghk.out << "\n";
        });
    }

    // ---- replay ---------------------------------------------------------------
    struct {
        std::string data;
        std::string format = "csv";
        double opening_price = 0.0;
        std::string rule = "midprice";
        std::string out_dir;
    } rep;
    {
        CLI::App* cmd = app.add_subcommand("replay", "Replay an event stream through the matching engine");
        cmd->add_option("--data", rep.data, "Event stream file")->required();
        cmd->add_option("--format", rep.format, "Stream format: csv or jsonl");
        cmd->add_option("--opening-price", rep.opening_price, "Opening price override for CSV streams");
        cmd->add_option("--rule", rep.rule, "Market-pair fill price rule: midprice or crossing");
        cmd->add_option("--out-dir", rep.out_dir, "Directory for fills/series/orders CSVs")->required();
        cmd->callback([&rep]() {
            const EventStream stream =
                read_stream(rep.data, parse_format(rep.format), price_override(rep.opening_price));
            const SimResult result = run_simulation(stream, parse_rule(rep.rule));
            fs::create_directories(rep.out_dir);
            write_fills_csv(result.fills, join_path(rep.out_dir, "fills.csv"));
            write_series_csv(result.series, join_path(rep.out_dir, "series.csv"));
            write_orders_csv(result.orders, join_path(rep.out_dir, "orders.csv"));
            std::cout << "events=" << stream.events.size() << " fills=" << result.fills.size()
                      << " final_mid=" << format_g17(result.series.back().midprice) << "\n";
        });
    }

    // ---- train ------------------------------------------------------------------
    struct {
        std::vector<std::string> corpus;
        std::string format = "csv";
        double opening_price = 0.0;
        std::string schema;
        double halflife = 2.0;
        ModelConfig model;
        std::uint64_t init_seed = 5;
        bool no_rope = false;
        TrainConfig train;
        std::string out;
        std::string loss_curve;
    } trn;
    {
        CLI::App* cmd = app.add_subcommand("train", "Train the toy flow model on tokenized streams");
        cmd->add_option("--corpus", trn.corpus, "Training stream file(s)")->required()->expected(-1);
        cmd->add_option("--format", trn.format, "Stream format: csv or jsonl");
        cmd->add_option("--opening-price", trn.opening_price, "Opening price override for CSV streams");
        cmd->add_option("--schema", trn.schema, "Tokenizer schema path")->required();
        cmd->add_option("--halflife", trn.halflife, "Midprice estimator halflife, seconds");
        cmd->add_option("--layers", trn.model.layers, "Transformer blocks");
        cmd->add_option("--hidden", trn.model.hidden, "Residual width");
        cmd->add_option("--heads", trn.model.heads, "Query heads");
        cmd->add_option("--kv-heads", trn.model.kv_heads, "Key/value heads");
        cmd->add_option("--context", trn.model.context, "Context window length");
        cmd->add_option("--emb-trade", trn.model.emb_trade, "Trade-token embedding width");
        cmd->add_option("--emb-level", trn.model.emb_price_level, "Price-level embedding width");
        cmd->add_option("--emb-liquidity", trn.model.emb_liquidity, "Liquidity embedding width");
        cmd->add_option("--emb-scope", trn.model.emb_scope, "Scope embedding width");
        cmd->add_option("--rope-base", trn.model.rope_base, "Rotary base frequency");
        cmd->add_flag("--no-rope", trn.no_rope, "Disable rotary position encoding");
        cmd->add_option("--init-seed", trn.init_seed, "Weight initialization seed");
        cmd->add_option("--lr", trn.train.lr, "Peak learning rate");
        cmd->add_option("--weight-decay", trn.train.weight_decay, "Decoupled weight decay");
        cmd->add_option("--grad-clip", trn.train.grad_clip, "Global gradient-norm clip (0 = off)");
        cmd->add_option("--warmup", trn.train.warmup_steps, "Linear warmup steps");
        cmd->add_option("--steps", trn.train.total_steps, "Total optimizer steps");
        cmd->add_option("--batch", trn.train.batch_size, "Sequences per step");
        cmd->add_option("--val-fraction", trn.train.val_fraction, "Held-out window fraction");
        cmd->add_option("--eval-every", trn.train.eval_every, "Steps between validation passes");
        cmd->add_option("--seed", trn.train.seed, "Shuffling/batching seed");
        cmd->add_option("--target-val-loss", trn.train.target_val_loss,
                        "Early-stop threshold on validation loss (0 = off)");
        cmd->add_option("--out", trn.out, "Checkpoint output path")->required();
        cmd->add_option("--loss-curve", trn.loss_curve, "Loss curve CSV output path");
        cmd->callback([&trn]() {
            const TokenSchema schema = load_schema(trn.schema);
            trn.model.vocab_trade = schema.vocab_size();
            trn.model.n_price_levels = schema.n_price_levels();
            trn.model.rope_enabled = !trn.no_rope;
            std::vector<std::vector<ContextTuple>> sequences;
            for (const EventStream& s : load_streams(trn.corpus, trn.format, trn.opening_price))
                sequences.push_back(encode_stream(s, schema, trn.halflife));
            Model model = init_model(trn.model, trn.init_seed);
            const TrainResult result = train_model(model, sequences, trn.train);
            save_checkpoint(model, trn.out);
            if (!trn.loss_curve.empty()) write_loss_curve_csv(result.curve, trn.loss_curve);
            std::cout << "steps=" << result.steps_run
                      << " final_val_loss=" << format_g17(result.final_val_loss) << " out=" << trn.out
                      << "\n";
        });
    }

    // ---- rollout -------------------------------------------------------------------
    struct RolloutOpts {
        std::string schema;
        GenSource src;
        std::string context;
        std::string format = "csv";
        double opening_price = 0.0;
        int n = 1;
        RolloutConfig cfg;
        SamplerOpts sampler;
        std::string rule = "midprice";
        std::string scope = "market";
        int jobs = 1;
        std::string out_dir;
    };
    auto add_rollout_opts = [](CLI::App* cmd, RolloutOpts& r, bool context_required) {
        cmd->add_option("--schema", r.schema, "Tokenizer schema path")->required();
        cmd->add_option("--checkpoint", r.src.checkpoint, "Model checkpoint (generator slot)");
        cmd->add_option("--generator", r.src.generator, "Baseline generator: zi or hawkes");
        cmd->add_option("--params", r.src.params, "Baseline parameter file");
        auto* ctx = cmd->add_option("--context", r.context, "Historical context stream");
        if (context_required) ctx->required();
        cmd->add_option("--format", r.format, "Context stream format: csv or jsonl");
        cmd->add_option("--opening-price", r.opening_price, "Opening price override for CSV context");
        cmd->add_option("--n", r.n, "Number of independent rollouts");
        cmd->add_option("--horizon", r.cfg.horizon, "Tokens generated per rollout");
        cmd->add_option("--context-length", r.cfg.context_length, "Sliding-window cap");
        cmd->add_option("--halflife", r.cfg.midprice_halflife, "Context featurization halflife");
        cmd->add_option("--liquidity", r.cfg.liquidity, "Liquidity tercile (-1 = derive from context)");
        cmd->add_option("--scope", r.scope, "Generated-tuple scope: market or participant");
        cmd->add_option("--p0", r.cfg.p0, "Anchor price when the context is empty");
        cmd->add_option("--rule", r.rule, "Market-pair fill price rule: midprice or crossing");
        cmd->add_option("--seed", r.cfg.seed, "Base seed (rollout i uses seed+i)");
        cmd->add_option("--jobs", r.jobs, "Worker threads across rollouts");
        cmd->add_option("--out-dir", r.out_dir, "Output directory")->required();
        add_sampler_opts(cmd, r.sampler);
    };
    auto prepare_rollout = [](RolloutOpts& r) {
        r.cfg.scope = parse_scope(r.scope);
        r.cfg.rule = parse_rule(r.rule);
        if (!r.context.empty())
            r.cfg.context = read_stream(r.context, parse_format(r.format), price_override(r.opening_price));
    };

    auto rol = std::make_shared<RolloutOpts>();
    {
        CLI::App* cmd = app.add_subcommand("rollout", "Closed-loop generation through the simulator");
        add_rollout_opts(cmd, *rol, false);
        cmd->callback([rol, &prepare_rollout]() {
            prepare_rollout(*rol);
            const TokenSchema schema = load_schema(rol->schema);
            const LoadedGenerator gen = load_generator(rol->src);
            const std::vector<RolloutResult> runs = run_rollout_batch(
                rol->cfg, schema, gen.factory(schema, rol->sampler.to_config()), rol->n, rol->jobs);
            write_rollout_outputs(runs, rol->out_dir);
            int rejected = 0;
            for (const RolloutResult& r : runs) rejected += r.rejected_orders;
            std::cout << "rollouts=" << runs.size()
                      << " mean_terminal_mid=" << format_g17(mean_terminal_midprice(runs))
                      << " rejected_orders=" << rejected << "\n";
        });
    }

    auto inj = std::make_shared<RolloutOpts>();
    auto inj_side = std::make_shared<std::string>("sell");
    auto inj_mult = std::make_shared<double>(10.0);
    {
        CLI::App* cmd = app.add_subcommand(
            "inject", "Counterfactual rollouts with one-sided order injection (paired with a baseline)");
        add_rollout_opts(cmd, *inj, true);
        cmd->add_option("--side", *inj_side, "Injected side: buy or sell")->required();
        cmd->add_option("--mult", *inj_mult, "Frequency multiplier over the context per-side Add rate");
        cmd->callback([inj, inj_side, inj_mult, &prepare_rollout]() {
            prepare_rollout(*inj);
            const TokenSchema schema = load_schema(inj->schema);
            const LoadedGenerator gen = load_generator(inj->src);
            const GeneratorFactory factory = gen.factory(schema, inj->sampler.to_config());
            InjectionSpec spec;
            if (*inj_side == "buy") {
                spec.side = Side::Buy;
            } else if (*inj_side == "sell") {
                spec.side = Side::Sell;
            } else {
                raise_usage("BadSide", "unknown side '" + *inj_side + "' (expected buy or sell)");
            }
            spec.frequency_multiplier = *inj_mult;
            const std::vector<RolloutResult> base =
                run_rollout_batch(inj->cfg, schema, factory, inj->n, inj->jobs);
            const std::vector<RolloutResult> treated =
                run_rollout_batch(inj->cfg, schema, factory, inj->n, inj->jobs, &spec);
            write_rollout_outputs(treated, inj->out_dir);
            const double m0 = mean_terminal_midprice(base);
            const double m1 = mean_terminal_midprice(treated);
            std::size_t injected = 0;
            for (const RolloutResult& r : treated) injected += r.injected.size();
            std::cout << "baseline_mean_terminal_mid=" << format_g17(m0)
                      << " injected_mean_terminal_mid=" << format_g17(m1)
                      << " delta=" << format_g17(m1 - m0) << " injected_orders=" << injected << "\n";
        });
    }

    // ---- controllability ---------------------------------------------------------
    struct {
        std::string checkpoint;
        std::string schema;
        int n = 256;
        int horizon = 512;
        double p0 = 100.0;
        std::uint64_t seed = 1;
        int jobs = 1;
        SamplerOpts sampler;
        std::string out;
    } ctl;
    {
        CLI::App* cmd = app.add_subcommand(
            "controllability", "Dispersion of generated volumes/interarrivals per conditioning combo");
        cmd->add_option("--checkpoint", ctl.checkpoint, "Model checkpoint")->required();
        cmd->add_option("--schema", ctl.schema, "Tokenizer schema path")->required();
        cmd->add_option("--n", ctl.n, "Trajectories per (liquidity, scope) combination");
        cmd->add_option("--horizon", ctl.horizon, "Tokens per trajectory");
        cmd->add_option("--p0", ctl.p0, "Anchor price");
        cmd->add_option("--seed", ctl.seed, "Base seed");
        cmd->add_option("--jobs", ctl.jobs, "Worker threads");
        add_sampler_opts(cmd, ctl.sampler);
        cmd->add_option("--out", ctl.out, "Output CSV path")->required();
        cmd->callback([&ctl]() {
            const TokenSchema schema = load_schema(ctl.schema);
            const Model model = load_checkpoint(ctl.checkpoint);
            const std::vector<SweepRow> rows =
                controllability_sweep(model, schema, ctl.sampler.to_config(), ctl.n, ctl.horizon, ctl.p0,
                                      ctl.seed, ctl.jobs);
            write_controllability_csv(rows, ctl.out);
            std::cout << "combos=" << rows.size() << " out=" << ctl.out << "\n";
        });
    }

    // ---- eval-fidelity -------------------------------------------------------------
    struct {
        std::string ref_series, ref_orders, cand_series, cand_orders;
        std::vector<double> intervals{1.0, 5.0, 30.0};
        std::string out;
    } efd;
    {
        CLI::App* cmd = app.add_subcommand(
            "eval-fidelity", "Per-quantity K-S and normalized W1 between two simulation runs");
        cmd->add_option("--ref-series", efd.ref_series, "Reference series CSV")->required();
        cmd->add_option("--ref-orders", efd.ref_orders, "Reference orders CSV")->required();
        cmd->add_option("--cand-series", efd.cand_series, "Candidate series CSV")->required();
        cmd->add_option("--cand-orders", efd.cand_orders, "Candidate orders CSV")->required();
        cmd->add_option("--intervals", efd.intervals, "Return sampling intervals, seconds")->expected(-1);
        cmd->add_option("--out", efd.out, "Output CSV path")->required();
        cmd->callback([&efd]() {
            const MarketSample ref =
                collect_sample(read_series_csv(efd.ref_series), read_orders_csv(efd.ref_orders));
            const MarketSample cand =
                collect_sample(read_series_csv(efd.cand_series), read_orders_csv(efd.cand_orders));
            const std::vector<FidelityRow> rows = fidelity_report(ref, cand, efd.intervals);
            write_fidelity_csv(rows, efd.out);
            std::cout << "rows=" << rows.size() << " out=" << efd.out << "\n";
        });
    }

    // ---- eval-stylized -----------------------------------------------------------------
    struct {
        std::string series;
        double interval = 1.0;
        int max_lag = 10;
        std::vector<double> kurtosis_intervals{1.0, 5.0, 30.0, 60.0};
        std::string out;
    } est;
    {
        CLI::App* cmd = app.add_subcommand(
            "eval-stylized", "Return ACF (raw and absolute) with noise band, and kurtosis per interval");
        cmd->add_option("--series", est.series, "Series CSV from replay/rollout")->required();
        cmd->add_option("--interval", est.interval, "Return sampling interval for the ACF, seconds");
        cmd->add_option("--max-lag", est.max_lag, "Maximum ACF lag");
        cmd->add_option("--kurtosis-intervals", est.kurtosis_intervals,
                        "Return intervals for the kurtosis rows, seconds")
            ->expected(-1);
        cmd->add_option("--out", est.out, "Output CSV path")->required();
        cmd->callback([&est]() {
            const std::vector<SeriesPoint> series = read_series_csv(est.series);
            const std::vector<double> returns = resampled_log_returns(series, est.interval);
            std::vector<double> abs_returns(returns.size());
            for (std::size_t i = 0; i < returns.size(); ++i) abs_returns[i] = std::fabs(returns[i]);
            const std::vector<double> acf_raw = autocorrelation(returns, est.max_lag);
            const std::vector<double> acf_abs = autocorrelation(abs_returns, est.max_lag);
            const double band = 1.96 / std::sqrt(static_cast<double>(returns.size()));
            std::string text = "metric,interval,lag,value,band\n";
            for (int k = 0; k <= est.max_lag; ++k) {
                text += "acf_raw," + format_g17(est.interval) + "," + std::to_string(k) + "," +
                        format_g17(acf_raw[static_cast<std::size_t>(k)]) + "," + format_g17(band) + "\n";
                text += "acf_abs," + format_g17(est.interval) + "," + std::to_string(k) + "," +
                        format_g17(acf_abs[static_cast<std::size_t>(k)]) + "," + format_g17(band) + "\n";
            }
            for (double dt : est.kurtosis_intervals) {
                const std::vector<double> r = resampled_log_returns(series, dt);
                text += "kurtosis," + format_g17(dt) + ",0," + format_g17(excess_kurtosis(r)) + ",0\n";
            }
            write_text_file(est.out, text);
            std::cout << "returns=" << returns.size() << " out=" << est.out << "\n";
        });
    }

    // ---- eval-drift ------------------------------------------------------------------------
    struct {
        std::vector<std::string> period_a, period_b;
        std::string format = "csv";
        double opening_price = 0.0;
        double halflife = 2.0;
        std::string label_a = "period_a", label_b = "period_b";
        std::string out;
    } edr;
    {
        CLI::App* cmd = app.add_subcommand(
            "eval-drift", "Feature-distribution drift between two corpora of event streams");
        cmd->add_option("--period-a", edr.period_a, "First-period stream file(s)")->required()->expected(-1);
        cmd->add_option("--period-b", edr.period_b, "Second-period stream file(s)")->required()->expected(-1);
        cmd->add_option("--format", edr.format, "Stream format: csv or jsonl");
        cmd->add_option("--opening-price", edr.opening_price, "Opening price override for CSV streams");
        cmd->add_option("--halflife", edr.halflife, "Midprice estimator halflife, seconds");
        cmd->add_option("--label-a", edr.label_a, "First-period label in the report");
        cmd->add_option("--label-b", edr.label_b, "Second-period label in the report");
        cmd->add_option("--out", edr.out, "Output CSV path")->required();
        cmd->callback([&edr]() {
            const std::vector<DriftRow> rows =
                drift_report(load_streams(edr.period_a, edr.format, edr.opening_price),
                             load_streams(edr.period_b, edr.format, edr.opening_price), edr.halflife);
            write_drift_csv(rows, edr.label_a, edr.label_b, edr.out);
            std::cout << "rows=" << rows.size() << " out=" << edr.out << "\n";
        });
    }

    // ---- validate-sim -------------------------------------------------------------------------
    struct {
        std::string data;
        std::string format = "csv";
        double opening_price = 0.0;
        std::string rule = "midprice";
        std::string reference_fills;
        std::string out;
    } vsim;
    {
        CLI::App* cmd = app.add_subcommand(
            "validate-sim", "Replay a stream and correlate fill-volume and lot-count CDFs against a "
                            "reference (the replay itself by default)");
        cmd->add_option("--data", vsim.data, "Event stream file")->required();
        cmd->add_option("--format", vsim.format, "Stream format: csv or jsonl");
        cmd->add_option("--opening-price", vsim.opening_price, "Opening price override for CSV streams");
        cmd->add_option("--rule", vsim.rule, "Market-pair fill price rule: midprice or crossing");
        cmd->add_option("--reference-fills", vsim.reference_fills, "External reference fills CSV");
        cmd->add_option("--out", vsim.out, "Optional output CSV path");
        cmd->callback([&vsim]() {
            const EventStream stream =
                read_stream(vsim.data, parse_format(vsim.format), price_override(vsim.opening_price));
            const SimResult sim = run_simulation(stream, parse_rule(vsim.rule));
            const std::vector<Fill> reference =
                vsim.reference_fills.empty() ? sim.fills : read_fills_csv(vsim.reference_fills);
            const FillComparison cmp = compare_fill_distributions(reference, sim.fills);
            if (!vsim.out.empty()) {
                write_text_file(vsim.out, "metric,correlation\nfill_volume," +
                                              format_g17(cmp.volume_correlation) + "\nlot_count," +
                                              format_g17(cmp.lot_count_correlation) + "\n");
            }
            std::cout << "volume_correlation=" << format_g17(cmp.volume_correlation)
                      << " lot_count_correlation=" << format_g17(cmp.lot_count_correlation) << "\n";
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        std::cerr << "error: " << e.get_name() << ": " << e.what() << "\n";
        return 2;
    }
    return 0;
}

int main(int argc, char** argv) {
    try {
        return run_app(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: Internal: " << e.what() << "\n";
        return 4;
    }
}
