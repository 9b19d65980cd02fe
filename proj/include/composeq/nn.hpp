#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "composeq/tensor.hpp"

namespace composeq {

// Numerically stable softmax along `axis` of a 1-d or 2-d tensor.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto& sh = x.shape();
    if (sh.size() > 2 || axis >= sh.size())
        throw ShapeError("softmax: axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(sh));
    // Treat as a stack of lanes along the softmax axis.
    const std::size_t lanes = sh.size() == 1 ? 1 : sh[1 - axis];
    const std::size_t n = sh[axis];
    const std::size_t lane_stride = (sh.size() == 2 && axis == 0) ? 1 : n;
    const std::size_t elem_stride = (sh.size() == 2 && axis == 0) ? sh[1] : 1;

    std::vector<double> out(x.size());
    for (std::size_t l = 0; l < lanes; ++l) {
        const double* in = x.data().data() + l * lane_stride;
        double* o = out.data() + l * lane_stride;
        double mx = in[0];
        for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i * elem_stride]);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = std::exp(in[i * elem_stride] - mx);
            o[i * elem_stride] = e;
            z += e;
        }
        for (std::size_t i = 0; i < n; ++i) o[i * elem_stride] /= z;
    }
    auto xn = x.node();
    auto saved = out;
    return make_op(sh, std::move(out), {x},
                   [xn, saved, lanes, n, lane_stride, elem_stride](TensorNode& r) {
        auto& g = xn->grad_buf();
        for (std::size_t l = 0; l < lanes; ++l) {
            const double* p = saved.data() + l * lane_stride;
            const double* go = r.grad.data() + l * lane_stride;
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                dot += go[i * elem_stride] * p[i * elem_stride];
            double* gi = g.data() + l * lane_stride;
            for (std::size_t i = 0; i < n; ++i)
                gi[i * elem_stride] +=
                    p[i * elem_stride] * (go[i * elem_stride] - dot);
        }
    });
}

// Row-wise layer normalization with affine gain/bias over the last axis.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.shape().size() != 2)
        throw ShapeError("layer_norm: expected 2-d input, got " + shape_str(x.shape()));
    const std::size_t r = x.rows(), c = x.cols();
    if (c < 2) throw ShapeError("layer_norm: normalized extent must be >= 2");
    if (gain.shape() != Shape{c} || bias.shape() != Shape{c})
        throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(c) + "]");

    std::vector<double> out(x.size()), xhat(x.size()), inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* xi = x.data().data() + i * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += xi[j];
        mean /= double(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= double(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const double xh = (xi[j] - mean) * is;
            xhat[i * c + j] = xh;
            out[i * c + j] = gain.data()[j] * xh + bias.data()[j];
        }
    }
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    return make_op(x.shape(), std::move(out), {x, gain, bias},
                   [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std),
                    r, c](TensorNode& res) {
        for (std::size_t i = 0; i < r; ++i) {
            const double* go = res.grad.data() + i * c;
            const double* xh = xhat.data() + i * c;
            if (gn->requires_grad) {
                auto& gg = gn->grad_buf();
                for (std::size_t j = 0; j < c; ++j) gg[j] += go[j] * xh[j];
            }
            if (bn->requires_grad) {
                auto& gb = bn->grad_buf();
                for (std::size_t j = 0; j < c; ++j) gb[j] += go[j];
            }
            if (xn->requires_grad) {
                auto& gx = xn->grad_buf();
                double m1 = 0.0, m2 = 0.0;  // means of dxhat and dxhat*xhat
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = go[j] * gn->data[j];
                    m1 += dxh;
                    m2 += dxh * xh[j];
                }
                m1 /= double(c);
                m2 /= double(c);
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = go[j] * gn->data[j];
                    gx[i * c + j] += inv_std[i] * (dxh - m1 - xh[j] * m2);
                }
            }
        }
    });
}

// Mean over non-ignored positions of -log softmax(logits)[target].
// With smoothing > 0, the target distribution mixes (1-smoothing) on the
// gold label with smoothing spread uniformly over the vocabulary.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            int ignore_id, double smoothing = 0.0) {
    if (logits.shape().size() != 2)
        throw ShapeError("cross_entropy: expected [T x V] logits, got " +
                         shape_str(logits.shape()));
    const std::size_t t_len = logits.rows(), v = logits.cols();
    if (targets.size() != t_len)
        throw DataError("cross_entropy: " + std::to_string(targets.size()) +
                        " targets for " + std::to_string(t_len) + " positions");

    std::vector<double> probs(logits.size());
    double loss = 0.0;
    std::size_t n_valid = 0;
    for (std::size_t i = 0; i < t_len; ++i) {
        const int y = targets[i];
        if (y == ignore_id) continue;
        if (y < 0 || std::size_t(y) >= v)
            throw DataError("cross_entropy: target id " + std::to_string(y) +
                            " out of range [0," + std::to_string(v) + ")");
        const double* li = logits.data().data() + i * v;
        double* pi = probs.data() + i * v;
        double mx = li[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, li[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(li[j] - mx);
        const double logz = std::log(z) + mx;
        for (std::size_t j = 0; j < v; ++j) pi[j] = std::exp(li[j] - logz);
        if (smoothing == 0.0) {
            loss += logz - li[y];
        } else {
            const double uni = smoothing / double(v);
            for (std::size_t j = 0; j < v; ++j) {
                const double q = uni + (std::size_t(y) == j ? 1.0 - smoothing : 0.0);
                loss += q * (logz - li[j]);
            }
        }
        ++n_valid;
    }
    if (n_valid == 0) throw DataError("cross_entropy: all positions ignored");
    loss /= double(n_valid);

    auto ln = logits.node();
    return make_op({1}, {loss}, {logits},
                   [ln, probs = std::move(probs), targets, ignore_id, smoothing,
                    t_len, v](TensorNode& r) {
        const double gscale = r.grad[0];
        std::size_t n_valid = 0;
        for (std::size_t i = 0; i < t_len; ++i)
            if (targets[i] != ignore_id) ++n_valid;
        auto& g = ln->grad_buf();
        const double inv_n = 1.0 / double(n_valid);
        for (std::size_t i = 0; i < t_len; ++i) {
            const int y = targets[i];
            if (y == ignore_id) continue;
            const double* pi = probs.data() + i * v;
            double* gi = g.data() + i * v;
            const double uni = smoothing / double(v);
            for (std::size_t j = 0; j < v; ++j) {
                double q = smoothing == 0.0
                               ? (std::size_t(y) == j ? 1.0 : 0.0)
                               : uni + (std::size_t(y) == j ? 1.0 - smoothing : 0.0);
                gi[j] += gscale * inv_n * (pi[j] - q);
            }
        }
    });
}

// Row gather from an embedding table; backward scatter-adds.
inline Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.shape().size() != 2)
        throw ShapeError("embedding: table must be 2-d, got " + shape_str(table.shape()));
    const std::size_t v = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || std::size_t(ids[i]) >= v)
            throw DataError("embedding: token id " + std::to_string(ids[i]) +
                            " out of range [0," + std::to_string(v) + ")");
        std::copy_n(table.data().data() + std::size_t(ids[i]) * d, d,
                    out.data() + i * d);
    }
    auto tn = table.node();
    return make_op({ids.size(), d}, std::move(out), {table},
                   [tn, ids, d](TensorNode& r) {
        auto& g = tn->grad_buf();
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                g[std::size_t(ids[i]) * d + j] += r.grad[i * d + j];
    });
}

// Inverted dropout; identity when not training or rate == 0.
inline Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng,
                      bool training) {
    if (!training || rate <= 0.0) return x;
    if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
    const double keep = 1.0 - rate;
    std::bernoulli_distribution coin(keep);
    std::vector<double> mask(x.size());
    for (auto& m : mask) m = coin(rng) ? 1.0 / keep : 0.0;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {x},
                   [xn, mask = std::move(mask)](TensorNode& r) {
        auto& g = xn->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += r.grad[i] * mask[i];
    });
}

// ---------------------------------------------------------------------------
// Fused multi-head attention over a ragged batch. q/k/v are concatenations of
// per-sample row blocks described by the offset arrays. Disallowed positions
// (causal future, masked-out kv rows) receive exactly zero probability.
// ---------------------------------------------------------------------------

struct AttnSpec {
    std::vector<std::size_t> q_offsets;   // B+1 row offsets into q
    std::vector<std::size_t> kv_offsets;  // B+1 row offsets into k and v
    std::size_t n_heads = 1;
    bool causal = false;                  // requires equal q/kv lengths per sample
    std::vector<std::uint8_t> kv_valid;   // optional; per kv row, 1 = attendable
};

inline Tensor multi_head_attention(const Tensor& q, const Tensor& k,
                                   const Tensor& v, const AttnSpec& spec) {
    if (q.shape().size() != 2 || k.shape() != v.shape() || q.cols() != k.cols())
        throw ShapeError("attention: bad shapes q=" + shape_str(q.shape()) +
                         " k=" + shape_str(k.shape()) + " v=" + shape_str(v.shape()));
    const std::size_t d = q.cols(), heads = spec.n_heads;
    if (heads == 0 || d % heads != 0)
        throw ConfigError("attention: width " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) + " heads");
    const std::size_t dh = d / heads;
    const double att_scale = 1.0 / std::sqrt(double(dh));
    const std::size_t batch = spec.q_offsets.size() - 1;
    if (spec.kv_offsets.size() != batch + 1)
        throw ConfigError("attention: offset arrays disagree on batch size");
    if (!spec.kv_valid.empty() && spec.kv_valid.size() != k.rows())
        throw ConfigError("attention: kv_valid length mismatch");

    // Packed probability matrices, one [sq x sk] block per (sample, head).
    std::vector<std::size_t> p_off(batch * heads + 1, 0);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t sq = spec.q_offsets[b + 1] - spec.q_offsets[b];
        const std::size_t sk = spec.kv_offsets[b + 1] - spec.kv_offsets[b];
        if (spec.causal && sq != sk)
            throw ConfigError("attention: causal masking needs equal q/kv lengths");
        for (std::size_t h = 0; h < heads; ++h)
            p_off[b * heads + h + 1] = p_off[b * heads + h] + sq * sk;
    }
    std::vector<double> probs(p_off.back(), 0.0);
    std::vector<double> out(q.size(), 0.0);

    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t q0 = spec.q_offsets[b], sq = spec.q_offsets[b + 1] - q0;
        const std::size_t k0 = spec.kv_offsets[b], sk = spec.kv_offsets[b + 1] - k0;
        for (std::size_t h = 0; h < heads; ++h) {
            double* p = probs.data() + p_off[b * heads + h];
            for (std::size_t i = 0; i < sq; ++i) {
                const double* qi = q.data().data() + (q0 + i) * d + h * dh;
                double* pi = p + i * sk;
                double mx = -1e300;
                for (std::size_t j = 0; j < sk; ++j) {
                    if (spec.causal && j > i) break;
                    if (!spec.kv_valid.empty() && !spec.kv_valid[k0 + j]) continue;
                    const double* kj = k.data().data() + (k0 + j) * d + h * dh;
                    double s = 0.0;
                    for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
                    pi[j] = s * att_scale;
                    mx = std::max(mx, pi[j]);
                }
                if (mx == -1e300) continue;  // fully masked row: zero output
                double z = 0.0;
                for (std::size_t j = 0; j < sk; ++j) {
                    const bool ok = (!spec.causal || j <= i) &&
                                    (spec.kv_valid.empty() || spec.kv_valid[k0 + j]);
                    pi[j] = ok ? std::exp(pi[j] - mx) : 0.0;
                    z += pi[j];
                }
                double* oi = out.data() + (q0 + i) * d + h * dh;
                for (std::size_t j = 0; j < sk; ++j) {
                    const double pj = pi[j] / z;
                    pi[j] = pj;
                    if (pj != 0.0) {
                        const double* vj = v.data().data() + (k0 + j) * d + h * dh;
                        for (std::size_t t = 0; t < dh; ++t) oi[t] += pj * vj[t];
                    }
                }
            }
        }
    }

    auto qn = q.node(), kn = k.node(), vn = v.node();
    auto q_off = spec.q_offsets;
    auto kv_off = spec.kv_offsets;
    return make_op(q.shape(), std::move(out), {q, k, v},
                   [qn, kn, vn, q_off = std::move(q_off), kv_off = std::move(kv_off),
                    probs = std::move(probs), p_off = std::move(p_off), heads, d, dh,
                    att_scale](TensorNode& r) {
        const std::size_t batch = q_off.size() - 1;
        auto& gq = qn->grad_buf();
        auto& gk = kn->grad_buf();
        auto& gv = vn->grad_buf();
        std::vector<double> dp, ds;
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t q0 = q_off[b], sq = q_off[b + 1] - q0;
            const std::size_t k0 = kv_off[b], sk = kv_off[b + 1] - k0;
            for (std::size_t h = 0; h < heads; ++h) {
                const double* p = probs.data() + p_off[b * heads + h];
                dp.assign(sq * sk, 0.0);
                ds.assign(sq * sk, 0.0);
                for (std::size_t i = 0; i < sq; ++i) {
                    const double* go = r.grad.data() + (q0 + i) * d + h * dh;
                    const double* pi = p + i * sk;
                    double* dpi = dp.data() + i * sk;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < sk; ++j) {
                        if (pi[j] == 0.0) continue;
                        const double* vj = vn->data.data() + (k0 + j) * d + h * dh;
                        double acc = 0.0;
                        for (std::size_t t = 0; t < dh; ++t) acc += go[t] * vj[t];
                        dpi[j] = acc;
                        dot += acc * pi[j];
                        // dV
                        double* gvj = gv.data() + (k0 + j) * d + h * dh;
                        for (std::size_t t = 0; t < dh; ++t) gvj[t] += pi[j] * go[t];
                    }
                    double* dsi = ds.data() + i * sk;
                    for (std::size_t j = 0; j < sk; ++j)
                        dsi[j] = pi[j] * (dpi[j] - dot);
                }
                for (std::size_t i = 0; i < sq; ++i) {
                    const double* dsi = ds.data() + i * sk;
                    double* gqi = gq.data() + (q0 + i) * d + h * dh;
                    const double* qi = qn->data.data() + (q0 + i) * d + h * dh;
                    for (std::size_t j = 0; j < sk; ++j) {
                        if (dsi[j] == 0.0) continue;
                        const double* kj = kn->data.data() + (k0 + j) * d + h * dh;
                        double* gkj = gk.data() + (k0 + j) * d + h * dh;
                        const double w = dsi[j] * att_scale;
                        for (std::size_t t = 0; t < dh; ++t) {
                            gqi[t] += w * kj[t];
                            gkj[t] += w * qi[t];
                        }
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

// Central differences with fixed step against the analytic gradients of
// f(). Returns max over all parameter scalars of
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double h = 1e-5) {
    Tensor loss = f();
    if (!std::isfinite(loss.item()))
        throw NumericsError("grad_check: non-finite loss at base point");
    for (auto p : params) p.zero_grad();
    loss = f();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (const auto& p : params)
        analytic.push_back(p.has_grad() ? p.grad()
                                        : std::vector<double>(p.size(), 0.0));

    // Tape construction is pointless while probing; switch it off.
    std::vector<bool> saved_rg;
    for (const auto& p : params) {
        saved_rg.push_back(p.requires_grad());
        p.node()->requires_grad = false;
    }
    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = params[pi].node()->data;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + h;
            const double lp = f().item();
            data[i] = orig - h;
            const double lm = f().item();
            data[i] = orig;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw NumericsError("grad_check: non-finite loss during probing");
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[pi][i];
            // The denominator floor keeps central-difference rounding noise
            // (~eps/h) from dominating parameters whose true gradient is
            // exactly zero, e.g. key-projection biases under softmax
            // shift-invariance.
            const double err =
                std::abs(a - numeric) / std::max(1e-5, std::abs(a) + std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        params[pi].node()->requires_grad = saved_rg[pi];
    for (auto p : params) p.zero_grad();
    return max_err;
}

}  // namespace composeq
