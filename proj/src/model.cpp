#include "flowsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "flowsim/error.hpp"
#include "flowsim/text_io.hpp"

namespace flowsim {

namespace {

constexpr double kNormEps = 1e-6;

// y[T][out] = x[T][in] . w[in][out]   (w row-major by input index)
void mat_forward(const double* x, const double* w, double* y, int T, int in, int out) {
    for (int t = 0; t < T; ++t) {
        double* yt = y + static_cast<std::size_t>(t) * out;
        std::fill(yt, yt + out, 0.0);
        const double* xt = x + static_cast<std::size_t>(t) * in;
        for (int i = 0; i < in; ++i) {
            const double a = xt[i];
            if (a == 0.0) continue;
            const double* wr = w + static_cast<std::size_t>(i) * out;
            for (int o = 0; o < out; ++o) yt[o] += a * wr[o];
        }
    }
}

// dx += dy . w^T ; dw += x^T . dy
void mat_backward(const double* x, const double* w, const double* dy, double* dx, double* dw, int T,
                  int in, int out) {
    for (int t = 0; t < T; ++t) {
        const double* xt = x + static_cast<std::size_t>(t) * in;
        const double* dyt = dy + static_cast<std::size_t>(t) * out;
        double* dxt = dx + static_cast<std::size_t>(t) * in;
        for (int i = 0; i < in; ++i) {
            const double* wr = w + static_cast<std::size_t>(i) * out;
            double* dwr = dw + static_cast<std::size_t>(i) * out;
            const double a = xt[i];
            double acc = 0.0;
            for (int o = 0; o < out; ++o) {
                acc += dyt[o] * wr[o];
                dwr[o] += a * dyt[o];
            }
            dxt[i] += acc;
        }
    }
}

// y[t] = x[t] * inv[t] * gain elementwise over rows of width H.
void rmsnorm_forward(const double* x, const double* gain, double* y, double* inv, int T, int H) {
    for (int t = 0; t < T; ++t) {
        const double* xt = x + static_cast<std::size_t>(t) * H;
        double* yt = y + static_cast<std::size_t>(t) * H;
        double sum_sq = 0.0;
        for (int h = 0; h < H; ++h) sum_sq += xt[h] * xt[h];
        const double r = 1.0 / std::sqrt(sum_sq / H + kNormEps);
        inv[t] = r;
        for (int h = 0; h < H; ++h) yt[h] = xt[h] * r * gain[h];
    }
}

// dx += backward of rmsnorm; dgain accumulated.
void rmsnorm_backward(const double* x, const double* gain, const double* inv, const double* dy,
                      double* dx, double* dgain, int T, int H) {
    for (int t = 0; t < T; ++t) {
        const double* xt = x + static_cast<std::size_t>(t) * H;
        const double* dyt = dy + static_cast<std::size_t>(t) * H;
        double* dxt = dx + static_cast<std::size_t>(t) * H;
        const double r = inv[t];
        double dot = 0.0;  // sum_j dy_j * gain_j * x_j
        for (int h = 0; h < H; ++h) dot += dyt[h] * gain[h] * xt[h];
        const double coef = r * r * r * dot / H;
        for (int h = 0; h < H; ++h) {
            dxt[h] += dyt[h] * gain[h] * r - xt[h] * coef;
            dgain[h] += dyt[h] * xt[h] * r;
        }
    }
}

// Rotates consecutive pairs of each width-HD head slice by the per-pair
// angles at the row's position. sign = +1 forward, -1 for gradients.
void rope_rows(double* v, int T, int n_heads, int HD, const std::vector<double>& cos_tab,
               const std::vector<double>& sin_tab, double sign) {
    const int half = HD / 2;
    for (int t = 0; t < T; ++t) {
        const double* ct = cos_tab.data() + static_cast<std::size_t>(t) * half;
        const double* st = sin_tab.data() + static_cast<std::size_t>(t) * half;
        for (int h = 0; h < n_heads; ++h) {
            double* vh = v + (static_cast<std::size_t>(t) * n_heads + h) * HD;
            for (int i = 0; i < half; ++i) {
                const double c = ct[i];
                const double s = sign * st[i];
                const double a = vh[2 * i];
                const double b = vh[2 * i + 1];
                vh[2 * i] = a * c - b * s;
                vh[2 * i + 1] = a * s + b * c;
            }
        }
    }
}

struct LayerCache {
    std::vector<double> n1, inv1, q, k, v, probs, ctx, x1, n2, inv2, up, act, xout;
};

struct Cache {
    int T = 0;
    std::vector<double> concat, x0;
    std::vector<LayerCache> layers;
    std::vector<double> nf, invf;
    std::vector<double> cos_tab, sin_tab;  // T x head_dim/2
};

int check_index(int value, int limit, const char* what) {
    if (value < 0 || value >= limit) {
        raise_data("TokenOutOfRange", std::string(what) + " index " + std::to_string(value) +
                                          " outside [0, " + std::to_string(limit) + ")");
    }
    return value;
}

// Runs the full stack up to the final norm; logits are produced separately
// so loss evaluation can stream over the vocabulary row by row.
void forward_cache(const Model& model, std::span<const ContextTuple> window, Cache& cc) {
    const ModelConfig& cfg = model.config;
    const ParamLayout& L = model.layout;
    const double* P = model.params.data();
    const int T = static_cast<int>(window.size());
    if (T == 0) raise_usage("EmptyContext", "forward pass needs at least one tuple");
    if (T > cfg.context) {
        raise_usage("ContextOverflow", "window of " + std::to_string(T) + " tuples exceeds context " +
                                           std::to_string(cfg.context));
    }
    const int C = cfg.concat_dim();
    const int H = cfg.hidden;
    const int HD = cfg.head_dim();
    const int KV = cfg.kv_dim();
    const int M = cfg.mlp_dim();
    const int group = cfg.heads / cfg.kv_heads;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(HD));

    cc.T = T;
    cc.concat.assign(static_cast<std::size_t>(T) * C, 0.0);
    for (int t = 0; t < T; ++t) {
        const ContextTuple& u = window[static_cast<std::size_t>(t)];
        double* row = cc.concat.data() + static_cast<std::size_t>(t) * C;
        const double* e = P + L.emb_trade +
                          static_cast<std::size_t>(check_index(u.trade, cfg.vocab_trade, "trade")) * cfg.emb_trade;
        row = std::copy(e, e + cfg.emb_trade, row);
        e = P + L.emb_price_level +
            static_cast<std::size_t>(check_index(u.price_level, cfg.n_price_levels, "price level")) *
                cfg.emb_price_level;
        row = std::copy(e, e + cfg.emb_price_level, row);
        e = P + L.emb_liquidity +
            static_cast<std::size_t>(check_index(u.liquidity, cfg.n_liquidity, "liquidity")) * cfg.emb_liquidity;
        row = std::copy(e, e + cfg.emb_liquidity, row);
        e = P + L.emb_scope +
            static_cast<std::size_t>(check_index(u.scope, cfg.n_scope, "scope")) * cfg.emb_scope;
        std::copy(e, e + cfg.emb_scope, row);
    }

    cc.x0.assign(static_cast<std::size_t>(T) * H, 0.0);
    mat_forward(cc.concat.data(), P + L.input_proj, cc.x0.data(), T, C, H);

    const int half = HD / 2;
    cc.cos_tab.assign(static_cast<std::size_t>(T) * half, 1.0);
    cc.sin_tab.assign(static_cast<std::size_t>(T) * half, 0.0);
    if (cfg.rope_enabled) {
        for (int t = 0; t < T; ++t) {
            for (int i = 0; i < half; ++i) {
                const double freq = std::pow(cfg.rope_base, -2.0 * i / HD);
                const double angle = t * freq;
                cc.cos_tab[static_cast<std::size_t>(t) * half + i] = std::cos(angle);
                cc.sin_tab[static_cast<std::size_t>(t) * half + i] = std::sin(angle);
            }
        }
    }

    cc.layers.resize(static_cast<std::size_t>(cfg.layers));
    const double* xin = cc.x0.data();
    for (int l = 0; l < cfg.layers; ++l) {
        LayerCache& lc = cc.layers[static_cast<std::size_t>(l)];
        const ParamLayout::Layer& pl = L.layers[static_cast<std::size_t>(l)];
        lc.n1.assign(static_cast<std::size_t>(T) * H, 0.0);
        lc.inv1.assign(static_cast<std::size_t>(T), 0.0);
        rmsnorm_forward(xin, P + pl.attn_norm, lc.n1.data(), lc.inv1.data(), T, H);

        lc.q.assign(static_cast<std::size_t>(T) * H, 0.0);
        lc.k.assign(static_cast<std::size_t>(T) * KV, 0.0);
        lc.v.assign(static_cast<std::size_t>(T) * KV, 0.0);
        mat_forward(lc.n1.data(), P + pl.wq, lc.q.data(), T, H, H);
        mat_forward(lc.n1.data(), P + pl.wk, lc.k.data(), T, H, KV);
        mat_forward(lc.n1.data(), P + pl.wv, lc.v.data(), T, H, KV);
        rope_rows(lc.q.data(), T, cfg.heads, HD, cc.cos_tab, cc.sin_tab, 1.0);
        rope_rows(lc.k.data(), T, cfg.kv_heads, HD, cc.cos_tab, cc.sin_tab, 1.0);

        lc.probs.assign(static_cast<std::size_t>(cfg.heads) * T * T, 0.0);
        lc.ctx.assign(static_cast<std::size_t>(T) * H, 0.0);
        std::vector<double> scores(static_cast<std::size_t>(T));
        for (int h = 0; h < cfg.heads; ++h) {
            const int g = h / group;
            for (int t = 0; t < T; ++t) {
                const double* qt = lc.q.data() + (static_cast<std::size_t>(t) * cfg.heads + h) * HD;
                double max_score = -std::numeric_limits<double>::infinity();
                for (int s = 0; s <= t; ++s) {
                    const double* ks = lc.k.data() + (static_cast<std::size_t>(s) * cfg.kv_heads + g) * HD;
                    double dot = 0.0;
                    for (int d = 0; d < HD; ++d) dot += qt[d] * ks[d];
                    scores[static_cast<std::size_t>(s)] = dot * inv_sqrt_hd;
                    max_score = std::max(max_score, scores[static_cast<std::size_t>(s)]);
                }
                double denom = 0.0;
                double* prow = lc.probs.data() +
                               (static_cast<std::size_t>(h) * T + static_cast<std::size_t>(t)) * T;
                for (int s = 0; s <= t; ++s) {
                    const double e = std::exp(scores[static_cast<std::size_t>(s)] - max_score);
                    prow[s] = e;
                    denom += e;
                }
                double* ct = lc.ctx.data() + (static_cast<std::size_t>(t) * cfg.heads + h) * HD;
                for (int s = 0; s <= t; ++s) {
                    prow[s] /= denom;
                    const double* vs = lc.v.data() + (static_cast<std::size_t>(s) * cfg.kv_heads + g) * HD;
                    const double p = prow[s];
                    for (int d = 0; d < HD; ++d) ct[d] += p * vs[d];
                }
            }
        }

        lc.x1.assign(static_cast<std::size_t>(T) * H, 0.0);
        mat_forward(lc.ctx.data(), P + pl.wo, lc.x1.data(), T, H, H);
        for (std::size_t i = 0; i < lc.x1.size(); ++i) lc.x1[i] += xin[i];

        lc.n2.assign(static_cast<std::size_t>(T) * H, 0.0);
        lc.inv2.assign(static_cast<std::size_t>(T), 0.0);
        rmsnorm_forward(lc.x1.data(), P + pl.mlp_norm, lc.n2.data(), lc.inv2.data(), T, H);

        lc.up.assign(static_cast<std::size_t>(T) * M, 0.0);
        mat_forward(lc.n2.data(), P + pl.w_up, lc.up.data(), T, H, M);
        lc.act.assign(static_cast<std::size_t>(T) * M, 0.0);
        for (std::size_t i = 0; i < lc.up.size(); ++i) {
            const double u = lc.up[i];
            lc.act[i] = u / (1.0 + std::exp(-u));
        }

        lc.xout.assign(static_cast<std::size_t>(T) * H, 0.0);
        mat_forward(lc.act.data(), P + pl.w_down, lc.xout.data(), T, M, H);
        for (std::size_t i = 0; i < lc.xout.size(); ++i) lc.xout[i] += lc.x1[i];
        xin = lc.xout.data();
    }

    cc.nf.assign(static_cast<std::size_t>(T) * H, 0.0);
    cc.invf.assign(static_cast<std::size_t>(T), 0.0);
    rmsnorm_forward(xin, P + L.final_norm, cc.nf.data(), cc.invf.data(), T, H);
}

void head_logits_row(const Model& model, const Cache& cc, int t, double* out) {
    const int H = model.config.hidden;
    const int V = model.config.vocab_trade;
    const double* W = model.params.data() + model.layout.head;
    const double* nf = cc.nf.data() + static_cast<std::size_t>(t) * H;
    std::fill(out, out + V, 0.0);
    for (int h = 0; h < H; ++h) {
        const double a = nf[h];
        if (a == 0.0) continue;
        const double* wr = W + static_cast<std::size_t>(h) * V;
        for (int v = 0; v < V; ++v) out[v] += a * wr[v];
    }
}

// Backward pass from dnf (gradient on the final-norm output) down to the
// embeddings, accumulating into grad.
void backward_from_nf(const Model& model, std::span<const ContextTuple> window, const Cache& cc,
                      const std::vector<double>& dnf, std::vector<double>& grad) {
    const ModelConfig& cfg = model.config;
    const ParamLayout& L = model.layout;
    const double* P = model.params.data();
    double* G = grad.data();
    const int T = cc.T;
    const int C = cfg.concat_dim();
    const int H = cfg.hidden;
    const int HD = cfg.head_dim();
    const int KV = cfg.kv_dim();
    const int M = cfg.mlp_dim();
    const int group = cfg.heads / cfg.kv_heads;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(HD));

    const double* x_last =
        cfg.layers > 0 ? cc.layers[static_cast<std::size_t>(cfg.layers - 1)].xout.data() : cc.x0.data();
    std::vector<double> dx(static_cast<std::size_t>(T) * H, 0.0);
    rmsnorm_backward(x_last, P + L.final_norm, cc.invf.data(), dnf.data(), dx.data(),
                     G + L.final_norm, T, H);

    std::vector<double> dx1(static_cast<std::size_t>(T) * H);
    std::vector<double> dn2(static_cast<std::size_t>(T) * H);
    std::vector<double> dup(static_cast<std::size_t>(T) * M);
    std::vector<double> dctx(static_cast<std::size_t>(T) * H);
    std::vector<double> dq(static_cast<std::size_t>(T) * H);
    std::vector<double> dk(static_cast<std::size_t>(T) * KV);
    std::vector<double> dv(static_cast<std::size_t>(T) * KV);
    std::vector<double> dn1(static_cast<std::size_t>(T) * H);
    std::vector<double> dscores(static_cast<std::size_t>(T));

    for (int l = cfg.layers - 1; l >= 0; --l) {
        const LayerCache& lc = cc.layers[static_cast<std::size_t>(l)];
        const ParamLayout::Layer& pl = L.layers[static_cast<std::size_t>(l)];
        const double* xin = l > 0 ? cc.layers[static_cast<std::size_t>(l - 1)].xout.data() : cc.x0.data();

        // xout = x1 + act . w_down
        std::fill(dx1.begin(), dx1.end(), 0.0);
        std::copy(dx.begin(), dx.end(), dx1.begin());
        std::vector<double> dact(static_cast<std::size_t>(T) * M, 0.0);
        mat_backward(lc.act.data(), P + pl.w_down, dx.data(), dact.data(), G + pl.w_down, T, M, H);
        for (std::size_t i = 0; i < dup.size(); ++i) {
            const double u = lc.up[i];
            const double sig = 1.0 / (1.0 + std::exp(-u));
            dup[i] = dact[i] * (sig + u * sig * (1.0 - sig));
        }
        std::fill(dn2.begin(), dn2.end(), 0.0);
        mat_backward(lc.n2.data(), P + pl.w_up, dup.data(), dn2.data(), G + pl.w_up, T, H, M);
        rmsnorm_backward(lc.x1.data(), P + pl.mlp_norm, lc.inv2.data(), dn2.data(), dx1.data(),
                         G + pl.mlp_norm, T, H);

        // x1 = xin + ctx . wo
        std::fill(dx.begin(), dx.end(), 0.0);
        std::copy(dx1.begin(), dx1.end(), dx.begin());  // residual into xin
        std::fill(dctx.begin(), dctx.end(), 0.0);
        mat_backward(lc.ctx.data(), P + pl.wo, dx1.data(), dctx.data(), G + pl.wo, T, H, H);

        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        for (int h = 0; h < cfg.heads; ++h) {
            const int g = h / group;
            for (int t = 0; t < T; ++t) {
                const double* dct = dctx.data() + (static_cast<std::size_t>(t) * cfg.heads + h) * HD;
                const double* prow = lc.probs.data() +
                                     (static_cast<std::size_t>(h) * T + static_cast<std::size_t>(t)) * T;
                double pdot = 0.0;
                for (int s = 0; s <= t; ++s) {
                    const double* vs = lc.v.data() + (static_cast<std::size_t>(s) * cfg.kv_heads + g) * HD;
                    double dp = 0.0;
                    for (int d = 0; d < HD; ++d) dp += dct[d] * vs[d];
                    dscores[static_cast<std::size_t>(s)] = dp;
                    pdot += prow[s] * dp;
                }
                const double* qt = lc.q.data() + (static_cast<std::size_t>(t) * cfg.heads + h) * HD;
                double* dqt = dq.data() + (static_cast<std::size_t>(t) * cfg.heads + h) * HD;
                for (int s = 0; s <= t; ++s) {
                    const double p = prow[s];
                    double* dvs = dv.data() + (static_cast<std::size_t>(s) * cfg.kv_heads + g) * HD;
                    for (int d = 0; d < HD; ++d) dvs[d] += p * dct[d];
                    const double ds = p * (dscores[static_cast<std::size_t>(s)] - pdot) * inv_sqrt_hd;
                    const double* ks = lc.k.data() + (static_cast<std::size_t>(s) * cfg.kv_heads + g) * HD;
                    double* dks = dk.data() + (static_cast<std::size_t>(s) * cfg.kv_heads + g) * HD;
                    for (int d = 0; d < HD; ++d) {
                        dqt[d] += ds * ks[d];
                        dks[d] += ds * qt[d];
                    }
                }
            }
        }
        rope_rows(dq.data(), T, cfg.heads, HD, cc.cos_tab, cc.sin_tab, -1.0);
        rope_rows(dk.data(), T, cfg.kv_heads, HD, cc.cos_tab, cc.sin_tab, -1.0);

        std::fill(dn1.begin(), dn1.end(), 0.0);
        mat_backward(lc.n1.data(), P + pl.wq, dq.data(), dn1.data(), G + pl.wq, T, H, H);
        mat_backward(lc.n1.data(), P + pl.wk, dk.data(), dn1.data(), G + pl.wk, T, H, KV);
        mat_backward(lc.n1.data(), P + pl.wv, dv.data(), dn1.data(), G + pl.wv, T, H, KV);
        rmsnorm_backward(xin, P + pl.attn_norm, lc.inv1.data(), dn1.data(), dx.data(),
                         G + pl.attn_norm, T, H);
    }

    std::vector<double> dconcat(static_cast<std::size_t>(T) * C, 0.0);
    mat_backward(cc.concat.data(), P + L.input_proj, dx.data(), dconcat.data(), G + L.input_proj, T,
                 C, H);
    for (int t = 0; t < T; ++t) {
        const ContextTuple& u = window[static_cast<std::size_t>(t)];
        const double* row = dconcat.data() + static_cast<std::size_t>(t) * C;
        double* e = G + L.emb_trade + static_cast<std::size_t>(u.trade) * cfg.emb_trade;
        for (int i = 0; i < cfg.emb_trade; ++i) e[i] += row[i];
        row += cfg.emb_trade;
        e = G + L.emb_price_level + static_cast<std::size_t>(u.price_level) * cfg.emb_price_level;
        for (int i = 0; i < cfg.emb_price_level; ++i) e[i] += row[i];
        row += cfg.emb_price_level;
        e = G + L.emb_liquidity + static_cast<std::size_t>(u.liquidity) * cfg.emb_liquidity;
        for (int i = 0; i < cfg.emb_liquidity; ++i) e[i] += row[i];
        row += cfg.emb_liquidity;
        e = G + L.emb_scope + static_cast<std::size_t>(u.scope) * cfg.emb_scope;
        for (int i = 0; i < cfg.emb_scope; ++i) e[i] += row[i];
    }
}

}  // namespace

void ModelConfig::validate() const {
    auto bad = [](const std::string& msg) { raise_usage("BadModelConfig", msg); };
    if (vocab_trade < 2) bad("trade vocabulary must have at least two tokens");
    if (n_price_levels < 1 || n_liquidity < 1 || n_scope < 1) bad("categorical feature sizes must be positive");
    if (emb_trade < 1 || emb_price_level < 1 || emb_liquidity < 1 || emb_scope < 1)
        bad("embedding widths must be positive");
    if (hidden < 1 || layers < 0 || context < 1) bad("hidden, layers, and context must be positive");
    if (heads < 1 || kv_heads < 1) bad("head counts must be positive");
    if (hidden % heads != 0) bad("hidden size must be divisible by the head count");
    if (heads % kv_heads != 0) bad("query heads must be divisible by key/value heads");
    if (head_dim() % 2 != 0) bad("head dimension must be even for rotary encoding");
    if (!(rope_base > 0.0)) bad("rotary base must be positive");
}

ParamLayout ParamLayout::build(const ModelConfig& cfg) {
    cfg.validate();
    ParamLayout L;
    std::size_t at = 0;
    auto take = [&at](std::size_t n) {
        const std::size_t offset = at;
        at += n;
        return offset;
    };
    L.emb_trade = take(static_cast<std::size_t>(cfg.vocab_trade) * cfg.emb_trade);
    L.emb_price_level = take(static_cast<std::size_t>(cfg.n_price_levels) * cfg.emb_price_level);
    L.emb_liquidity = take(static_cast<std::size_t>(cfg.n_liquidity) * cfg.emb_liquidity);
    L.emb_scope = take(static_cast<std::size_t>(cfg.n_scope) * cfg.emb_scope);
    L.input_proj = take(static_cast<std::size_t>(cfg.concat_dim()) * cfg.hidden);
    L.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& lay : L.layers) {
        lay.attn_norm = take(static_cast<std::size_t>(cfg.hidden));
        lay.wq = take(static_cast<std::size_t>(cfg.hidden) * cfg.hidden);
        lay.wk = take(static_cast<std::size_t>(cfg.hidden) * cfg.kv_dim());
        lay.wv = take(static_cast<std::size_t>(cfg.hidden) * cfg.kv_dim());
        lay.wo = take(static_cast<std::size_t>(cfg.hidden) * cfg.hidden);
        lay.mlp_norm = take(static_cast<std::size_t>(cfg.hidden));
        lay.w_up = take(static_cast<std::size_t>(cfg.hidden) * cfg.mlp_dim());
        lay.w_down = take(static_cast<std::size_t>(cfg.mlp_dim()) * cfg.hidden);
    }
    L.final_norm = take(static_cast<std::size_t>(cfg.hidden));
    L.head = take(static_cast<std::size_t>(cfg.hidden) * cfg.vocab_trade);
    L.total = at;
    return L;
}

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
    Model m;
    m.config = cfg;
    m.layout = ParamLayout::build(cfg);
    m.params.assign(m.layout.total, 0.0);
    Rng rng(seed);
    auto fill_normal = [&](std::size_t offset, std::size_t n, double scale) {
        for (std::size_t i = 0; i < n; ++i) m.params[offset + i] = scale * rng.normal();
    };
    auto fill_matrix = [&](std::size_t offset, int fan_in, int fan_out) {
        fill_normal(offset, static_cast<std::size_t>(fan_in) * fan_out, 1.0 / std::sqrt(fan_in));
    };
    const ParamLayout& L = m.layout;
    fill_normal(L.emb_trade, static_cast<std::size_t>(cfg.vocab_trade) * cfg.emb_trade, 0.02);
    fill_normal(L.emb_price_level, static_cast<std::size_t>(cfg.n_price_levels) * cfg.emb_price_level, 0.02);
    fill_normal(L.emb_liquidity, static_cast<std::size_t>(cfg.n_liquidity) * cfg.emb_liquidity, 0.02);
    fill_normal(L.emb_scope, static_cast<std::size_t>(cfg.n_scope) * cfg.emb_scope, 0.02);
    fill_matrix(L.input_proj, cfg.concat_dim(), cfg.hidden);
    for (const auto& lay : L.layers) {
        std::fill_n(m.params.begin() + static_cast<std::ptrdiff_t>(lay.attn_norm), cfg.hidden, 1.0);
        fill_matrix(lay.wq, cfg.hidden, cfg.hidden);
        fill_matrix(lay.wk, cfg.hidden, cfg.kv_dim());
        fill_matrix(lay.wv, cfg.hidden, cfg.kv_dim());
        fill_matrix(lay.wo, cfg.hidden, cfg.hidden);
        std::fill_n(m.params.begin() + static_cast<std::ptrdiff_t>(lay.mlp_norm), cfg.hidden, 1.0);
        fill_matrix(lay.w_up, cfg.hidden, cfg.mlp_dim());
        fill_matrix(lay.w_down, cfg.mlp_dim(), cfg.hidden);
    }
    std::fill_n(m.params.begin() + static_cast<std::ptrdiff_t>(L.final_norm), cfg.hidden, 1.0);
    // Output head stays zero so an untrained model is exactly uniform.
    return m;
}

std::vector<double> forward_logits(const Model& model, std::span<const ContextTuple> window) {
    Cache cc;
    forward_cache(model, window, cc);
    const int V = model.config.vocab_trade;
    std::vector<double> logits(static_cast<std::size_t>(cc.T) * V, 0.0);
    for (int t = 0; t < cc.T; ++t) head_logits_row(model, cc, t, logits.data() + static_cast<std::size_t>(t) * V);
    return logits;
}

std::vector<double> forward_last(const Model& model, std::span<const ContextTuple> window) {
    Cache cc;
    forward_cache(model, window, cc);
    std::vector<double> logits(static_cast<std::size_t>(model.config.vocab_trade), 0.0);
    head_logits_row(model, cc, cc.T - 1, logits.data());
    return logits;
}

double sequence_loss(const Model& model, std::span<const ContextTuple> window) {
    if (window.size() < 2) raise_usage("WindowTooShort", "loss needs at least two tuples");
    Cache cc;
    forward_cache(model, window, cc);
    const int V = model.config.vocab_trade;
    std::vector<double> row(static_cast<std::size_t>(V));
    double total = 0.0;
    for (int t = 0; t + 1 < cc.T; ++t) {
        head_logits_row(model, cc, t, row.data());
        const int target = check_index(window[static_cast<std::size_t>(t) + 1].trade, V, "target trade");
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (int v = 0; v < V; ++v) sum += std::exp(row[static_cast<std::size_t>(v)] - mx);
        total += mx + std::log(sum) - row[static_cast<std::size_t>(target)];
    }
    return total / static_cast<double>(cc.T - 1);
}

double sequence_loss_and_grad(const Model& model, std::span<const ContextTuple> window, double scale,
                              std::vector<double>& grad, std::size_t& positions) {
    if (window.size() < 2) raise_usage("WindowTooShort", "loss needs at least two tuples");
    if (grad.size() != model.layout.total) raise_usage("BadGradBuffer", "gradient buffer size mismatch");
    Cache cc;
    forward_cache(model, window, cc);
    const ModelConfig& cfg = model.config;
    const int V = cfg.vocab_trade;
    const int H = cfg.hidden;
    const double* W = model.params.data() + model.layout.head;
    double* dW = grad.data() + model.layout.head;

    std::vector<double> row(static_cast<std::size_t>(V));
    std::vector<double> dnf(static_cast<std::size_t>(cc.T) * H, 0.0);
    double total = 0.0;
    for (int t = 0; t + 1 < cc.T; ++t) {
        head_logits_row(model, cc, t, row.data());
        const int target = check_index(window[static_cast<std::size_t>(t) + 1].trade, V, "target trade");
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (int v = 0; v < V; ++v) sum += std::exp(row[static_cast<std::size_t>(v)] - mx);
        const double lse = mx + std::log(sum);
        total += lse - row[static_cast<std::size_t>(target)];
        // Reuse row as dlogits: scale * (softmax - onehot).
        for (int v = 0; v < V; ++v)
            row[static_cast<std::size_t>(v)] = scale * std::exp(row[static_cast<std::size_t>(v)] - lse);
        row[static_cast<std::size_t>(target)] -= scale;
        const double* nf = cc.nf.data() + static_cast<std::size_t>(t) * H;
        double* dn = dnf.data() + static_cast<std::size_t>(t) * H;
        for (int h = 0; h < H; ++h) {
            const double* wr = W + static_cast<std::size_t>(h) * V;
            double* dwr = dW + static_cast<std::size_t>(h) * V;
            const double a = nf[h];
            double acc = 0.0;
            for (int v = 0; v < V; ++v) {
                acc += row[static_cast<std::size_t>(v)] * wr[v];
                dwr[v] += a * row[static_cast<std::size_t>(v)];
            }
            dn[h] += acc;
        }
    }
    backward_from_nf(model, window, cc, dnf, grad);
    positions = static_cast<std::size_t>(cc.T - 1);
    return total;
}

int sample_next(std::span<const double> logits, std::span<const int> recent_tokens,
                const SamplerConfig& cfg, Rng& rng) {
    if (logits.empty()) raise_usage("EmptyLogits", "cannot sample from empty logits");
    std::vector<double> l(logits.begin(), logits.end());
    if (cfg.repetition_penalty != 1.0) {
        if (!(cfg.repetition_penalty > 0.0)) raise_usage("BadPenalty", "repetition penalty must be positive");
        std::size_t start = 0;
        if (cfg.penalty_window >= 0 && recent_tokens.size() > static_cast<std::size_t>(cfg.penalty_window))
            start = recent_tokens.size() - static_cast<std::size_t>(cfg.penalty_window);
        std::unordered_set<int> seen;
        for (std::size_t i = start; i < recent_tokens.size(); ++i) {
            const int tok = recent_tokens[i];
            if (tok < 0 || tok >= static_cast<int>(l.size())) continue;
            if (!seen.insert(tok).second) continue;
            l[static_cast<std::size_t>(tok)] = l[static_cast<std::size_t>(tok)] > 0.0
                                                   ? l[static_cast<std::size_t>(tok)] / cfg.repetition_penalty
                                                   : l[static_cast<std::size_t>(tok)] * cfg.repetition_penalty;
        }
    }
    if (cfg.temperature < 1e-12) {
        return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
    }
    const double mx = *std::max_element(l.begin(), l.end());
    double total = 0.0;
    for (double& x : l) {
        x = std::exp((x - mx) / cfg.temperature);
        total += x;
    }
    const double u = rng.uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) {
        acc += l[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(l.size() - 1);
}

namespace {

struct Window {
    const std::vector<ContextTuple>* seq;
    std::size_t begin, end;
    std::span<const ContextTuple> view() const { return std::span<const ContextTuple>(*seq).subspan(begin, end - begin); }
};

double eval_windows(const Model& model, const std::vector<Window>& windows) {
    double total = 0.0;
    std::size_t positions = 0;
    for (const Window& w : windows) {
        const std::size_t n = w.end - w.begin - 1;
        total += sequence_loss(model, w.view()) * static_cast<double>(n);
        positions += n;
    }
    return total / static_cast<double>(positions);
}

}  // namespace

TrainResult train_model(Model& model, const std::vector<std::vector<ContextTuple>>& sequences,
                        const TrainConfig& cfg) {
    if (cfg.lr <= 0.0 || cfg.batch_size < 1 || cfg.total_steps < 0 || cfg.warmup_steps < 0 ||
        cfg.eval_every < 1 || !(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) {
        raise_usage("BadTrainConfig", "invalid optimizer settings");
    }
    TrainResult result;
    if (cfg.total_steps == 0) return result;

    // Windows hold at most `context` tuples; consecutive windows overlap by
    // one tuple so every next-token transition is trained exactly once.
    const std::size_t wsize = static_cast<std::size_t>(model.config.context);
    std::vector<Window> windows;
    if (wsize >= 2) {
        const std::size_t stride = wsize - 1;
        for (const auto& seq : sequences) {
            for (std::size_t start = 0; start + 1 < seq.size(); start += stride) {
                const std::size_t end = std::min(seq.size(), start + wsize);
                if (end - start >= 2) windows.push_back(Window{&seq, start, end});
            }
        }
    }
    if (windows.empty()) raise_data("InsufficientData", "no training windows of length >= 2");

    Rng rng(cfg.seed);
    rng.shuffle(windows);
    std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(windows.size())));
    if (windows.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, windows.size() - 1);
    std::vector<Window> val(windows.begin(), windows.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<Window> train(windows.begin() + static_cast<std::ptrdiff_t>(n_val), windows.end());
    if (val.empty()) val = train;

    std::vector<double> grad(model.layout.total, 0.0);
    std::vector<double> m1(model.layout.total, 0.0);
    std::vector<double> m2(model.layout.total, 0.0);

    const double initial_val = eval_windows(model, val);
    if (!std::isfinite(initial_val)) raise_numeric("NonFiniteLoss", "validation loss is not finite");
    result.curve.push_back(LossPoint{0, initial_val, initial_val});
    result.final_val_loss = initial_val;
    if (cfg.target_val_loss > 0.0 && initial_val <= cfg.target_val_loss) return result;

    const int warmup = std::min(cfg.warmup_steps, cfg.total_steps);
    std::size_t cursor = 0;
    double interval_loss = 0.0;
    int interval_count = 0;
    for (int step = 1; step <= cfg.total_steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        std::vector<const Window*> batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == 0) rng.shuffle(train);
            batch.push_back(&train[cursor]);
            cursor = (cursor + 1) % train.size();
        }
        std::size_t batch_positions = 0;
        for (const Window* w : batch) batch_positions += w->end - w->begin - 1;
        const double scale = 1.0 / static_cast<double>(batch_positions);
        double batch_loss = 0.0;
        for (const Window* w : batch) {
            std::size_t pos = 0;
            batch_loss += sequence_loss_and_grad(model, w->view(), scale, grad, pos);
        }
        batch_loss *= scale;
        if (!std::isfinite(batch_loss)) raise_numeric("NonFiniteLoss", "training loss is not finite");
        interval_loss += batch_loss;
        ++interval_count;

        if (cfg.grad_clip > 0.0) {
            double norm_sq = 0.0;
            for (double g : grad) norm_sq += g * g;
            const double norm = std::sqrt(norm_sq);
            if (norm > cfg.grad_clip) {
                const double s = cfg.grad_clip / norm;
                for (double& g : grad) g *= s;
            }
        }

        double lr_t;
        if (step <= warmup) {
            lr_t = cfg.lr * static_cast<double>(step) / static_cast<double>(std::max(warmup, 1));
        } else {
            lr_t = cfg.lr * static_cast<double>(cfg.total_steps - step + 1) /
                   static_cast<double>(cfg.total_steps - warmup + 1);
        }
        const double bc1 = 1.0 - std::pow(cfg.beta1, step);
        const double bc2 = 1.0 - std::pow(cfg.beta2, step);
        for (std::size_t i = 0; i < grad.size(); ++i) {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            const double update = (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + cfg.eps);
            model.params[i] -= lr_t * (update + cfg.weight_decay * model.params[i]);
        }

        const bool last = step == cfg.total_steps;
        if (step % cfg.eval_every == 0 || last) {
            const double val_loss = eval_windows(model, val);
            const double train_loss = interval_loss / static_cast<double>(interval_count);
            if (!std::isfinite(val_loss)) raise_numeric("NonFiniteLoss", "validation loss is not finite");
            if (val_loss > initial_val + 2.0) {
                raise_numeric("DivergedLoss", "validation loss " + format_g17(val_loss) +
                                                  " diverged from initial " + format_g17(initial_val));
            }
            result.curve.push_back(LossPoint{step, train_loss, val_loss});
            result.final_val_loss = val_loss;
            result.steps_run = step;
            interval_loss = 0.0;
            interval_count = 0;
            if (cfg.target_val_loss > 0.0 && val_loss <= cfg.target_val_loss) break;
        }
        result.steps_run = step;
    }
    return result;
}

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) raise_data("CorruptCheckpoint", "unexpected end of checkpoint file");
    return value;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise_data("FileUnwritable", "cannot open for writing: " + path);
    out << kCheckpointHeader << '\n';
    write_pod<std::int64_t>(out, model.config.vocab_trade);
    write_pod<std::int64_t>(out, model.config.n_price_levels);
    write_pod<std::int64_t>(out, model.config.n_liquidity);
    write_pod<std::int64_t>(out, model.config.n_scope);
    write_pod<std::int64_t>(out, model.config.emb_trade);
    write_pod<std::int64_t>(out, model.config.emb_price_level);
    write_pod<std::int64_t>(out, model.config.emb_liquidity);
    write_pod<std::int64_t>(out, model.config.emb_scope);
    write_pod<std::int64_t>(out, model.config.hidden);
    write_pod<std::int64_t>(out, model.config.layers);
    write_pod<std::int64_t>(out, model.config.heads);
    write_pod<std::int64_t>(out, model.config.kv_heads);
    write_pod<std::int64_t>(out, model.config.context);
    write_pod<double>(out, model.config.rope_base);
    write_pod<std::uint8_t>(out, model.config.rope_enabled ? 1 : 0);
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(model.params.size()));
    out.write(reinterpret_cast<const char*>(model.params.data()),
              static_cast<std::streamsize>(model.params.size() * sizeof(double)));
    if (!out) raise_data("FileUnwritable", "failed writing checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise_data("FileUnreadable", "cannot open for reading: " + path);
    std::string header;
    if (!std::getline(in, header)) raise_data("CorruptCheckpoint", "missing checkpoint header");
    if (header != kCheckpointHeader) {
        raise_data("CheckpointVersionMismatch", "expected '" + std::string(kCheckpointHeader) +
                                                    "', found '" + header + "'");
    }
    ModelConfig cfg;
    cfg.vocab_trade = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.n_price_levels = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.n_liquidity = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.n_scope = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.emb_trade = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.emb_price_level = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.emb_liquidity = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.emb_scope = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.hidden = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.layers = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.heads = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.kv_heads = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.context = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.rope_base = read_pod<double>(in);
    cfg.rope_enabled = read_pod<std::uint8_t>(in) != 0;
    Model model;
    model.config = cfg;
    try {
        model.layout = ParamLayout::build(cfg);
    } catch (const Error& e) {
        raise_data("CorruptCheckpoint", std::string("invalid stored config: ") + e.what());
    }
    const std::uint64_t count = read_pod<std::uint64_t>(in);
    if (count != model.layout.total) {
        raise_data("CorruptCheckpoint", "parameter count " + std::to_string(count) +
                                            " does not match layout " + std::to_string(model.layout.total));
    }
    model.params.resize(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(model.params.data()),
            static_cast<std::streamsize>(model.params.size() * sizeof(double)));
    if (!in) raise_data("CorruptCheckpoint", "truncated parameter block");
    for (double p : model.params) {
        if (!std::isfinite(p)) raise_data("CorruptCheckpoint", "non-finite parameter value");
    }
    return model;
}

void write_loss_curve_csv(const std::vector<LossPoint>& curve, const std::string& path) {
    std::string text = std::string(kLossCurveCsvHeader) + "\n";
    for (const LossPoint& p : curve) {
        text += std::to_string(p.step) + "," + format_g17(p.train_loss) + "," + format_g17(p.val_loss) + "\n";
    }
    write_text_file(path, text);
}

}  // namespace flowsim
