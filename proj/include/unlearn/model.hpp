#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "unlearn/rng.hpp"
#include "unlearn/vocab.hpp"

namespace unlearn {

template <typename S>
using MatS = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecS = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using LogitMatrix = MatS<float>;

// Parameter and gradient buffers are mapped by Eigen; pinning their alignment
// keeps vectorized reduction order, and therefore every trained bit,
// identical across allocations.
template <typename T>
struct Aligned64Allocator {
    using value_type = T;
    Aligned64Allocator() = default;
    template <typename U>
    Aligned64Allocator(const Aligned64Allocator<U>&) {}
    T* allocate(size_t n) {
        void* p = ::operator new(n * sizeof(T), std::align_val_t(64));
        return static_cast<T*>(p);
    }
    void deallocate(T* p, size_t) noexcept { ::operator delete(p, std::align_val_t(64)); }
    template <typename U>
    bool operator==(const Aligned64Allocator<U>&) const { return true; }
};

template <typename S>
using AlignedVec = std::vector<S, Aligned64Allocator<S>>;

using ParamVec = AlignedVec<float>;

struct ModelConfig {
    int layers = 4;
    int heads = 4;
    int embed_dim = 128;
    int context_len = 256;
    int vocab_size = 4096;
    uint64_t seed = 0;

    void validate() const {
        if (layers < 1 || heads < 1 || embed_dim < 1 || vocab_size < 1)
            throw std::runtime_error("invalid model config: non-positive dimension");
        if (embed_dim % heads != 0)
            throw std::runtime_error("invalid model config: embed_dim not divisible by heads");
        if (context_len < 2) throw std::runtime_error("invalid model config: context_len < 2");
    }

    bool operator==(const ModelConfig&) const = default;
};

enum class Role : uint32_t { baseline = 0, reinforced = 1, unlearned = 2 };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::baseline: return "baseline";
        case Role::reinforced: return "reinforced";
        case Role::unlearned: return "unlearned";
    }
    return "?";
}

// Flat parameter layout. Slice order is the serialization order of the
// checkpoint file: token embedding, positional embedding, then per layer
// ln1(g,b), wq,bq, wk,bk, wv,bv, wo,bo, ln2(g,b), w1,b1, w2,b2, and the
// final layernorm (g,b). The output head is tied to the token embedding.
struct ParamLayout {
    struct Layer {
        size_t ln1_g, ln1_b;
        size_t wq, bq, wk, bk, wv, bv, wo, bo;
        size_t ln2_g, ln2_b;
        size_t w1, b1, w2, b2;
    };
    size_t tok = 0, pos = 0;
    std::vector<Layer> layers;
    size_t lnf_g = 0, lnf_b = 0;
    size_t total = 0;

    explicit ParamLayout(const ModelConfig& cfg) {
        const size_t V = static_cast<size_t>(cfg.vocab_size);
        const size_t C = static_cast<size_t>(cfg.context_len);
        const size_t d = static_cast<size_t>(cfg.embed_dim);
        const size_t f = 4 * d;
        size_t at = 0;
        auto take = [&](size_t count) {
            size_t here = at;
            at += count;
            return here;
        };
        tok = take(V * d);
        pos = take(C * d);
        layers.resize(static_cast<size_t>(cfg.layers));
        for (Layer& l : layers) {
            l.ln1_g = take(d);
            l.ln1_b = take(d);
            l.wq = take(d * d);
            l.bq = take(d);
            l.wk = take(d * d);
            l.bk = take(d);
            l.wv = take(d * d);
            l.bv = take(d);
            l.wo = take(d * d);
            l.bo = take(d);
            l.ln2_g = take(d);
            l.ln2_b = take(d);
            l.w1 = take(d * f);
            l.b1 = take(f);
            l.w2 = take(f * d);
            l.b2 = take(d);
        }
        lnf_g = take(d);
        lnf_b = take(d);
        total = at;
    }
};

inline size_t param_count(const ModelConfig& cfg) { return ParamLayout(cfg).total; }

struct Checkpoint {
    ModelConfig config;
    ParamVec params;
    int64_t step_count = 0;
    Role role = Role::baseline;
};

template <typename S>
AlignedVec<S> init_params(const ModelConfig& cfg) {
    cfg.validate();
    const ParamLayout lay(cfg);
    AlignedVec<S> p(lay.total, S(0));
    Rng rng(cfg.seed);
    auto fill_normal = [&](size_t off, size_t count) {
        for (size_t i = 0; i < count; i++) p[off + i] = static_cast<S>(rng.normal(0.0, 0.02));
    };
    auto fill_ones = [&](size_t off, size_t count) {
        for (size_t i = 0; i < count; i++) p[off + i] = S(1);
    };
    const size_t d = static_cast<size_t>(cfg.embed_dim);
    const size_t f = 4 * d;
    fill_normal(lay.tok, static_cast<size_t>(cfg.vocab_size) * d);
    fill_normal(lay.pos, static_cast<size_t>(cfg.context_len) * d);
    for (const auto& l : lay.layers) {
        fill_ones(l.ln1_g, d);
        fill_normal(l.wq, d * d);
        fill_normal(l.wk, d * d);
        fill_normal(l.wv, d * d);
        fill_normal(l.wo, d * d);
        fill_ones(l.ln2_g, d);
        fill_normal(l.w1, d * f);
        fill_normal(l.w2, f * d);
    }
    fill_ones(lay.lnf_g, d);
    return p;
}

inline Checkpoint init_model(const ModelConfig& cfg) {
    Checkpoint ck;
    ck.config = cfg;
    ck.params = init_params<float>(cfg);
    return ck;
}

namespace detail {

template <typename S>
struct LayerActs {
    MatS<S> x_in, ln1_out, q, k, v, probs, att, x_mid, ln2_out, h_pre, h_act;
    VecS<S> mean1, rstd1, mean2, rstd2;
};

template <typename S>
struct Acts {
    std::vector<LayerActs<S>> layers;
    MatS<S> x_final, lnf_out;
    VecS<S> meanf, rstdf;
    MatS<S> logits;
};

template <typename S>
void layernorm_forward(const MatS<S>& x, const S* g, const S* b, MatS<S>& out, VecS<S>& mean,
                       VecS<S>& rstd) {
    const int n = static_cast<int>(x.rows());
    const int d = static_cast<int>(x.cols());
    out.resize(n, d);
    mean.resize(n);
    rstd.resize(n);
    const S eps = static_cast<S>(1e-5);
    for (int i = 0; i < n; i++) {
        S mu = x.row(i).mean();
        S var = (x.row(i).array() - mu).square().sum() / static_cast<S>(d);
        S r = S(1) / std::sqrt(var + eps);
        mean[i] = mu;
        rstd[i] = r;
        for (int j = 0; j < d; j++) out(i, j) = (x(i, j) - mu) * r * g[j] + b[j];
    }
}

// dgrad accumulates into dg/db; returns dx contribution added onto dx_accum.
template <typename S>
void layernorm_backward(const MatS<S>& x, const VecS<S>& mean, const VecS<S>& rstd, const S* g,
                        const MatS<S>& dy, MatS<S>& dx_accum, S* dg, S* db) {
    const int n = static_cast<int>(x.rows());
    const int d = static_cast<int>(x.cols());
    for (int i = 0; i < n; i++) {
        const S r = rstd[i];
        const S mu = mean[i];
        S sum_dyg = 0, sum_dyg_xhat = 0;
        for (int j = 0; j < d; j++) {
            const S xhat = (x(i, j) - mu) * r;
            const S dyg = dy(i, j) * g[j];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
            dg[j] += dy(i, j) * xhat;
            db[j] += dy(i, j);
        }
        const S inv_d = S(1) / static_cast<S>(d);
        for (int j = 0; j < d; j++) {
            const S xhat = (x(i, j) - mu) * r;
            const S dyg = dy(i, j) * g[j];
            dx_accum(i, j) += r * (dyg - sum_dyg * inv_d - xhat * sum_dyg_xhat * inv_d);
        }
    }
}

template <typename S>
void gelu_forward(const MatS<S>& x, MatS<S>& y) {
    const S a = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
    const S c = static_cast<S>(0.044715);
    auto xa = x.array();
    y = (S(0.5) * xa * (S(1) + (a * (xa + c * xa.cube())).tanh())).matrix();
}

template <typename S>
void gelu_backward(const MatS<S>& x, const MatS<S>& dy, MatS<S>& dx) {
    const S a = static_cast<S>(0.7978845608028654);
    const S c = static_cast<S>(0.044715);
    auto xa = x.array();
    auto t = (a * (xa + c * xa.cube())).tanh();
    dx = (dy.array() *
          (S(0.5) * (S(1) + t) + S(0.5) * xa * (S(1) - t.square()) * a * (S(1) + S(3) * c * xa.square())))
             .matrix();
}

template <typename S>
void forward_cached(const ModelConfig& cfg, const ParamLayout& lay, const S* p,
                    const TokenSeq& tokens, Acts<S>& acts) {
    const int n = static_cast<int>(tokens.size());
    const int d = cfg.embed_dim;
    const int H = cfg.heads;
    const int hd = d / H;
    const int f = 4 * d;
    if (n < 1) throw std::runtime_error("empty input block");
    if (n > cfg.context_len) throw std::runtime_error("input exceeds context length");
    for (int t : tokens)
        if (t < 0 || t >= cfg.vocab_size) throw std::runtime_error("token id out of range");

    Eigen::Map<const MatS<S>> tok(p + lay.tok, cfg.vocab_size, d);
    Eigen::Map<const MatS<S>> pos(p + lay.pos, cfg.context_len, d);

    MatS<S> x(n, d);
    for (int i = 0; i < n; i++) x.row(i) = tok.row(tokens[static_cast<size_t>(i)]) + pos.row(i);

    acts.layers.resize(static_cast<size_t>(cfg.layers));
    const S inv_sqrt_hd = S(1) / std::sqrt(static_cast<S>(hd));

    for (int li = 0; li < cfg.layers; li++) {
        LayerActs<S>& a = acts.layers[static_cast<size_t>(li)];
        const auto& l = lay.layers[static_cast<size_t>(li)];
        a.x_in = x;
        layernorm_forward(a.x_in, p + l.ln1_g, p + l.ln1_b, a.ln1_out, a.mean1, a.rstd1);

        Eigen::Map<const MatS<S>> wq(p + l.wq, d, d), wk(p + l.wk, d, d), wv(p + l.wv, d, d),
            wo(p + l.wo, d, d);
        Eigen::Map<const VecS<S>> bq(p + l.bq, d), bk(p + l.bk, d), bv(p + l.bv, d), bo(p + l.bo, d);

        a.q.noalias() = a.ln1_out * wq;
        a.q.rowwise() += bq.transpose();
        a.k.noalias() = a.ln1_out * wk;
        a.k.rowwise() += bk.transpose();
        a.v.noalias() = a.ln1_out * wv;
        a.v.rowwise() += bv.transpose();

        a.probs.resize(static_cast<Eigen::Index>(H) * n, n);
        a.att.resize(n, d);
        for (int h = 0; h < H; h++) {
            auto qh = a.q.block(0, h * hd, n, hd);
            auto kh = a.k.block(0, h * hd, n, hd);
            auto vh = a.v.block(0, h * hd, n, hd);
            MatS<S> scores = qh * kh.transpose() * inv_sqrt_hd;
            auto ph = a.probs.block(h * n, 0, n, n);
            for (int i = 0; i < n; i++) {
                auto visible = scores.row(i).head(i + 1).array();
                const S mx = visible.maxCoeff();
                ph.row(i).head(i + 1) = (visible - mx).exp();
                ph.row(i).head(i + 1) /= ph.row(i).head(i + 1).sum();
                ph.row(i).tail(n - i - 1).setZero();
            }
            a.att.block(0, h * hd, n, hd).noalias() = ph * vh;
        }

        a.x_mid.noalias() = a.att * wo;
        a.x_mid.rowwise() += bo.transpose();
        a.x_mid += a.x_in;

        layernorm_forward(a.x_mid, p + l.ln2_g, p + l.ln2_b, a.ln2_out, a.mean2, a.rstd2);
        Eigen::Map<const MatS<S>> w1(p + l.w1, d, f), w2(p + l.w2, f, d);
        Eigen::Map<const VecS<S>> b1(p + l.b1, f), b2(p + l.b2, d);
        a.h_pre.noalias() = a.ln2_out * w1;
        a.h_pre.rowwise() += b1.transpose();
        gelu_forward(a.h_pre, a.h_act);
        x.noalias() = a.h_act * w2;
        x.rowwise() += b2.transpose();
        x += a.x_mid;
    }

    acts.x_final = x;
    layernorm_forward(acts.x_final, p + lay.lnf_g, p + lay.lnf_b, acts.lnf_out, acts.meanf,
                      acts.rstdf);
    acts.logits.noalias() = acts.lnf_out * tok.transpose();
}

// One training target per position: row i-1 of the logits is scored against
// target[i]. weight 0 drops the position.
struct TargetSpec {
    const std::vector<int>* targets = nullptr;  // index i used for i >= 1
    const std::vector<int>* weights = nullptr;  // optional 0/1 per position
};

// Appends the analytic gradient of the (sign * summed) cross-entropy of one
// block into grad; returns the signed loss sum and counted positions.
template <typename S>
std::pair<double, size_t> block_loss_and_grad(const ModelConfig& cfg, const ParamLayout& lay,
                                              const S* p, const TokenSeq& tokens,
                                              const TargetSpec& spec, S sign, S* grad) {
    const int n = static_cast<int>(tokens.size());
    const int d = cfg.embed_dim;
    const int H = cfg.heads;
    const int hd = d / H;
    const int f = 4 * d;

    Acts<S> acts;
    forward_cached(cfg, lay, p, tokens, acts);

    const std::vector<int>& targets = spec.targets ? *spec.targets : tokens;
    if (static_cast<int>(targets.size()) != n) throw std::runtime_error("labels length mismatch");
    if (spec.weights && static_cast<int>(spec.weights->size()) != n)
        throw std::runtime_error("mask length mismatch");

    double loss_sum = 0;
    size_t counted = 0;
    MatS<S> dlogits = MatS<S>::Zero(n, cfg.vocab_size);
    for (int i = 1; i < n; i++) {
        if (spec.weights && (*spec.weights)[static_cast<size_t>(i)] == 0) continue;
        const int target = targets[static_cast<size_t>(i)];
        if (target < 0 || target >= cfg.vocab_size) throw std::runtime_error("label id out of range");
        const int r = i - 1;
        const S mx = acts.logits.row(r).maxCoeff();
        dlogits.row(r) = (acts.logits.row(r).array() - mx).exp();
        const S sum = dlogits.row(r).sum();
        loss_sum += static_cast<double>(sign) *
                    (static_cast<double>(mx) + std::log(static_cast<double>(sum)) -
                     static_cast<double>(acts.logits(r, target)));
        counted++;
        dlogits.row(r) *= sign / sum;
        dlogits(r, target) -= sign;
    }

    Eigen::Map<const MatS<S>> tok(p + lay.tok, cfg.vocab_size, d);
    Eigen::Map<MatS<S>> dtok(grad + lay.tok, cfg.vocab_size, d);
    Eigen::Map<MatS<S>> dpos(grad + lay.pos, cfg.context_len, d);

    // Output head (tied): logits = lnf_out * tok^T
    MatS<S> dlnf = dlogits * tok;
    dtok.noalias() += dlogits.transpose() * acts.lnf_out;

    MatS<S> dx = MatS<S>::Zero(n, d);
    layernorm_backward(acts.x_final, acts.meanf, acts.rstdf, p + lay.lnf_g, dlnf, dx,
                       grad + lay.lnf_g, grad + lay.lnf_b);

    const S inv_sqrt_hd = S(1) / std::sqrt(static_cast<S>(hd));
    for (int li = cfg.layers - 1; li >= 0; li--) {
        const LayerActs<S>& a = acts.layers[static_cast<size_t>(li)];
        const auto& l = lay.layers[static_cast<size_t>(li)];
        Eigen::Map<const MatS<S>> wq(p + l.wq, d, d), wk(p + l.wk, d, d), wv(p + l.wv, d, d),
            wo(p + l.wo, d, d), w1(p + l.w1, d, f), w2(p + l.w2, f, d);

        // mlp branch: x = x_mid + gelu(ln2_out*w1+b1)*w2 + b2
        MatS<S> dh_act = dx * w2.transpose();
        Eigen::Map<MatS<S>>(grad + l.w2, f, d).noalias() += a.h_act.transpose() * dx;
        Eigen::Map<VecS<S>>(grad + l.b2, d).noalias() += dx.colwise().sum().transpose();
        MatS<S> dh_pre;
        gelu_backward(a.h_pre, dh_act, dh_pre);
        MatS<S> dln2 = dh_pre * w1.transpose();
        Eigen::Map<MatS<S>>(grad + l.w1, d, f).noalias() += a.ln2_out.transpose() * dh_pre;
        Eigen::Map<VecS<S>>(grad + l.b1, f).noalias() += dh_pre.colwise().sum().transpose();

        MatS<S> dx_mid = dx;  // residual
        layernorm_backward(a.x_mid, a.mean2, a.rstd2, p + l.ln2_g, dln2, dx_mid, grad + l.ln2_g,
                           grad + l.ln2_b);

        // attention branch: x_mid = x_in + att*wo + bo
        MatS<S> datt = dx_mid * wo.transpose();
        Eigen::Map<MatS<S>>(grad + l.wo, d, d).noalias() += a.att.transpose() * dx_mid;
        Eigen::Map<VecS<S>>(grad + l.bo, d).noalias() += dx_mid.colwise().sum().transpose();

        MatS<S> dq(n, d), dk(n, d), dv(n, d);
        for (int h = 0; h < H; h++) {
            auto qh = a.q.block(0, h * hd, n, hd);
            auto kh = a.k.block(0, h * hd, n, hd);
            auto vh = a.v.block(0, h * hd, n, hd);
            auto ph = a.probs.block(h * n, 0, n, n);
            auto dctx = datt.block(0, h * hd, n, hd);

            dv.block(0, h * hd, n, hd).noalias() = ph.transpose() * dctx;
            MatS<S> dprobs = dctx * vh.transpose();
            MatS<S> dscores(n, n);
            for (int i = 0; i < n; i++) {
                S dot = 0;
                for (int j = 0; j <= i; j++) dot += dprobs(i, j) * ph(i, j);
                for (int j = 0; j <= i; j++)
                    dscores(i, j) = ph(i, j) * (dprobs(i, j) - dot) * inv_sqrt_hd;
                for (int j = i + 1; j < n; j++) dscores(i, j) = 0;
            }
            dq.block(0, h * hd, n, hd).noalias() = dscores * kh;
            dk.block(0, h * hd, n, hd).noalias() = dscores.transpose() * qh;
        }

        MatS<S> dln1 = dq * wq.transpose();
        dln1.noalias() += dk * wk.transpose();
        dln1.noalias() += dv * wv.transpose();
        Eigen::Map<MatS<S>>(grad + l.wq, d, d).noalias() += a.ln1_out.transpose() * dq;
        Eigen::Map<MatS<S>>(grad + l.wk, d, d).noalias() += a.ln1_out.transpose() * dk;
        Eigen::Map<MatS<S>>(grad + l.wv, d, d).noalias() += a.ln1_out.transpose() * dv;
        Eigen::Map<VecS<S>>(grad + l.bq, d).noalias() += dq.colwise().sum().transpose();
        Eigen::Map<VecS<S>>(grad + l.bk, d).noalias() += dk.colwise().sum().transpose();
        Eigen::Map<VecS<S>>(grad + l.bv, d).noalias() += dv.colwise().sum().transpose();

        MatS<S> dx_in = dx_mid;  // residual
        layernorm_backward(a.x_in, a.mean1, a.rstd1, p + l.ln1_g, dln1, dx_in, grad + l.ln1_g,
                           grad + l.ln1_b);
        dx = std::move(dx_in);
    }

    for (int i = 0; i < n; i++) {
        dtok.row(tokens[static_cast<size_t>(i)]) += dx.row(i);
        dpos.row(i) += dx.row(i);
    }
    return {loss_sum, counted};
}

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Static round-robin partition; fn(index, worker) runs index-ordered within
// each worker, so per-worker accumulations are reproducible.
template <typename F>
void parallel_indexed(int count, int threads, F&& fn) {
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (int i = 0; i < count; i++) fn(i, 0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; t++) {
        pool.emplace_back([&, t] {
            for (int i = t; i < count; i += threads) fn(i, t);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail

inline LogitMatrix forward(const Checkpoint& model, const TokenSeq& tokens) {
    model.config.validate();
    const ParamLayout lay(model.config);
    if (model.params.size() != lay.total) throw std::runtime_error("parameter count mismatch");
    detail::Acts<float> acts;
    detail::forward_cached<float>(model.config, lay, model.params.data(), tokens, acts);
    return std::move(acts.logits);
}

// One block of a training batch. When labels is null the targets are the
// block's own next tokens.
struct BatchItem {
    const TokenSeq* tokens = nullptr;
    const std::vector<int>* labels = nullptr;
    const std::vector<int>* mask = nullptr;
};

struct GradResult {
    double loss = 0;       // summed over blocks and positions (signed)
    size_t positions = 0;  // counted positions
    ParamVec grad;
};

template <typename S>
std::pair<double, AlignedVec<S>> loss_and_grad_t(const ModelConfig& cfg, const AlignedVec<S>& params,
                                                  const std::vector<BatchItem>& batch,
                                                  bool negate_loss = false) {
    cfg.validate();
    const ParamLayout lay(cfg);
    if (params.size() != lay.total) throw std::runtime_error("parameter count mismatch");
    AlignedVec<S> grad(lay.total, S(0));
    double loss = 0;
    const S sign = negate_loss ? S(-1) : S(1);
    for (const BatchItem& item : batch) {
        detail::TargetSpec spec{item.labels, item.mask};
        auto [l, c] = detail::block_loss_and_grad<S>(cfg, lay, params.data(), *item.tokens, spec,
                                                     sign, grad.data());
        loss += l;
    }
    return {loss, std::move(grad)};
}

inline GradResult loss_and_grad(const Checkpoint& model, const std::vector<BatchItem>& batch,
                                bool negate_loss = false) {
    const ParamLayout lay(model.config);
    if (model.params.size() != lay.total) throw std::runtime_error("parameter count mismatch");
    GradResult out;
    out.grad.assign(lay.total, 0.0f);
    const float sign = negate_loss ? -1.0f : 1.0f;
    for (const BatchItem& item : batch) {
        detail::TargetSpec spec{item.labels, item.mask};
        auto [l, c] = detail::block_loss_and_grad<float>(model.config, lay, model.params.data(),
                                                         *item.tokens, spec, sign, out.grad.data());
        out.loss += l;
        out.positions += c;
    }
    return out;
}

struct TrainPlan {
    double learning_rate = 3e-4;
    int epochs = 1;
    int batch_size = 8;
    int grad_accum = 2;
    int context_len = 256;

    void validate() const {
        if (learning_rate < 0 || epochs < 1 || batch_size < 1 || grad_accum < 1 || context_len < 2)
            throw std::runtime_error("invalid train plan");
    }
};

struct LabeledBlocks {
    std::vector<std::vector<int>> labels;  // aligned with the block list
    std::vector<std::vector<int>> masks;
};

struct TrainOptions {
    const LabeledBlocks* labels = nullptr;
    bool negate_loss = false;
    int64_t max_steps = 0;  // 0 = bounded by epochs only
    uint64_t seed = 0;
    int threads = 0;  // 0 = hardware concurrency
    std::function<void(int64_t step, const Checkpoint&)> on_step;
};

// Cross-entropy next-token training with Adam (0.9, 0.999), no schedule.
// Gradients of a step are the mean over the counted positions of its
// batch_size * grad_accum blocks; block order is a seeded shuffle per epoch.
// Worker partitioning and reduction order are fixed, so the result is
// bit-reproducible for a given seed and thread count.
inline Checkpoint train(const Checkpoint& start, const std::vector<TokenSeq>& blocks,
                        const TrainPlan& plan, const TrainOptions& opts = {}) {
    start.config.validate();
    plan.validate();
    if (plan.context_len > start.config.context_len)
        throw std::runtime_error("plan context exceeds model context");
    if (blocks.empty()) throw std::runtime_error("empty training corpus");
    for (const TokenSeq& b : blocks)
        if (static_cast<int>(b.size()) > plan.context_len)
            throw std::runtime_error("block exceeds context length");
    if (opts.labels && (opts.labels->labels.size() != blocks.size() ||
                        opts.labels->masks.size() != blocks.size()))
        throw std::runtime_error("labels/blocks count mismatch");

    const ParamLayout lay(start.config);
    if (start.params.size() != lay.total) throw std::runtime_error("parameter count mismatch");

    Checkpoint model = start;
    const int threads = detail::resolve_threads(opts.threads);
    const size_t group = static_cast<size_t>(plan.batch_size) * static_cast<size_t>(plan.grad_accum);

    std::vector<float> m(lay.total, 0.0f), v(lay.total, 0.0f);
    std::vector<ParamVec> worker_grad(static_cast<size_t>(threads));
    for (auto& g : worker_grad) g.assign(lay.total, 0.0f);
    std::vector<double> worker_loss(static_cast<size_t>(threads));
    std::vector<size_t> worker_count(static_cast<size_t>(threads));

    Rng order_rng(opts.seed);
    std::vector<size_t> order(blocks.size());
    for (size_t i = 0; i < order.size(); i++) order[i] = i;

    const float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
    const float sign = opts.negate_loss ? -1.0f : 1.0f;
    int64_t step = 0;
    bool done = false;

    for (int epoch = 0; epoch < plan.epochs && !done; epoch++) {
        order_rng.shuffle(order);
        for (size_t at = 0; at < order.size() && !done; at += group) {
            const size_t batch_n = std::min(group, order.size() - at);
            for (auto& g : worker_grad) std::fill(g.begin(), g.end(), 0.0f);
            std::fill(worker_loss.begin(), worker_loss.end(), 0.0);
            std::fill(worker_count.begin(), worker_count.end(), size_t{0});

            detail::parallel_indexed(static_cast<int>(batch_n), threads, [&](int bi, int worker) {
                const size_t block_idx = order[at + static_cast<size_t>(bi)];
                detail::TargetSpec spec;
                if (opts.labels) {
                    spec.targets = &opts.labels->labels[block_idx];
                    spec.weights = &opts.labels->masks[block_idx];
                }
                auto [l, c] = detail::block_loss_and_grad<float>(
                    model.config, lay, model.params.data(), blocks[block_idx], spec, sign,
                    worker_grad[static_cast<size_t>(worker)].data());
                worker_loss[static_cast<size_t>(worker)] += l;
                worker_count[static_cast<size_t>(worker)] += c;
            });

            double loss = 0;
            size_t count = 0;
            for (int t = 0; t < threads; t++) {
                loss += worker_loss[static_cast<size_t>(t)];
                count += worker_count[static_cast<size_t>(t)];
            }
            step++;
            if (!std::isfinite(loss))
                throw std::runtime_error("non-finite loss at step " + std::to_string(step));
            if (count == 0) continue;  // fully masked group

            float* total = worker_grad[0].data();
            for (int t = 1; t < threads; t++) {
                const float* src = worker_grad[static_cast<size_t>(t)].data();
                for (size_t i = 0; i < lay.total; i++) total[i] += src[i];
            }
            const float scale = 1.0f / static_cast<float>(count);
            const float bc1 = 1.0f - std::pow(beta1, static_cast<float>(step));
            const float bc2 = 1.0f - std::pow(beta2, static_cast<float>(step));
            const float lr = static_cast<float>(plan.learning_rate);
            float* theta = model.params.data();
            for (size_t i = 0; i < lay.total; i++) {
                const float g = total[i] * scale;
                m[i] = beta1 * m[i] + (1.0f - beta1) * g;
                v[i] = beta2 * v[i] + (1.0f - beta2) * g * g;
                theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
            }

            if (opts.on_step) {
                Checkpoint snap;
                snap.config = model.config;
                snap.params = model.params;
                snap.step_count = start.step_count + step;
                snap.role = model.role;
                opts.on_step(step, snap);
            }
            if (opts.max_steps > 0 && step >= opts.max_steps) done = true;
        }
    }

    model.step_count = start.step_count + step;
    return model;
}

}  // namespace unlearn
