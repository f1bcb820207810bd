#include "nest/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace nest {

namespace flops {
namespace {
thread_local Counts g_counts;
}
void reset() { g_counts = Counts{}; }
Counts read() { return g_counts; }
}  // namespace flops

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_mat(const Tensor& t) {
    return ConstMapMat(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
ConstMapMat as_mat(const double* p, std::size_t r, std::size_t c) {
    return ConstMapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MapMat as_mut(Tensor& t) {
    return MapMat(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MapMat as_mut(double* p, std::size_t r, std::size_t c) {
    return MapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                                shape_string(b.shape()));
}

void count_projection(std::size_t r, std::size_t k, std::size_t c) {
    flops::g_counts.projection += static_cast<std::uint64_t>(r) * k * c;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) shape_error("matmul", a, b);
    Tensor out({a.rows(), b.cols()});
    as_mut(out).noalias() = as_mat(a) * as_mat(b);
    return out;
}

Var matmul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
    count_projection(av.rows(), av.cols(), bv.cols());
    const std::uint32_t ia = a.id(), ib = b.id();
    return a.tape().push(matmul(av, bv), {a, b}, [ia, ib](const Tensor& g, Tape& t) {
        if (t.needs_grad(ia)) as_mut(t.grad_buffer(ia)).noalias() += as_mat(g) * as_mat(t.value(ib)).transpose();
        if (t.needs_grad(ib)) as_mut(t.grad_buffer(ib)).noalias() += as_mat(t.value(ia)).transpose() * as_mat(g);
    });
}

Var linear(Var x, Var w) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (wv.rank() != 2 || xv.cols() != wv.rows()) shape_error("linear", xv, wv);
    return matmul(x, w);
}

Var linear(Var x, Var w, Var b) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (wv.rank() != 2 || xv.cols() != wv.rows()) shape_error("linear", xv, wv);
    if (bv.size() != wv.cols()) shape_error("linear", wv, bv);
    count_projection(xv.rows(), xv.cols(), wv.cols());
    Tensor out({xv.rows(), wv.cols()});
    auto y = as_mut(out);
    y.noalias() = as_mat(xv) * as_mat(wv);
    y.rowwise() += as_mat(bv.data(), 1, bv.size()).row(0);
    const std::uint32_t ix = x.id(), iw = w.id(), ib = b.id();
    return x.tape().push(std::move(out), {x, w, b}, [ix, iw, ib](const Tensor& g, Tape& t) {
        auto gm = as_mat(g);
        if (t.needs_grad(ix)) as_mut(t.grad_buffer(ix)).noalias() += gm * as_mat(t.value(iw)).transpose();
        if (t.needs_grad(iw)) as_mut(t.grad_buffer(iw)).noalias() += as_mat(t.value(ix)).transpose() * gm;
        if (t.needs_grad(ib)) {
            Tensor& gb = t.grad_buffer(ib);
            as_mut(gb.data(), 1, gb.size()).row(0) += gm.colwise().sum();
        }
    });
}

Var add(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.size() != bv.size()) shape_error("add", av, bv);
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const std::uint32_t ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), {a, b}, [ia, ib](const Tensor& g, Tape& t) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var scale(Var a, double s) {
    Tensor out = a.value();
    for (double& v : out.storage()) v *= s;
    const std::uint32_t ia = a.id();
    return a.tape().push(std::move(out), {a}, [ia, s](const Tensor& g, Tape& t) {
        if (!t.needs_grad(ia)) return;
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

Var add_tiled(Var x, Var tile) {
    const Tensor& xv = x.value();
    const Tensor& tv = tile.value();
    const std::size_t n = tv.rows();
    if (n == 0 || xv.cols() != tv.cols() || xv.rows() % n != 0) shape_error("add_tiled", xv, tv);
    Tensor out = xv;
    const std::size_t block = n * tv.cols();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += tv[i % block];
    const std::uint32_t ix = x.id(), it = tile.id();
    return x.tape().push(std::move(out), {x, tile}, [ix, it, block](const Tensor& g, Tape& t) {
        t.accumulate(ix, g);
        if (!t.needs_grad(it)) return;
        Tensor& gt = t.grad_buffer(it);
        for (std::size_t i = 0; i < g.size(); ++i) gt[i % block] += g[i];
    });
}

Var add_grouped(Var x, Var rows) {
    const Tensor& xv = x.value();
    const Tensor& rv = rows.value();
    const std::size_t groups = rv.rows();
    if (groups == 0 || xv.cols() != rv.cols() || xv.rows() % groups != 0) shape_error("add_grouped", xv, rv);
    const std::size_t per = xv.rows() / groups;
    const std::size_t c = xv.cols();
    Tensor out = xv;
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        const double* src = rv.data() + (r / per) * c;
        double* dst = out.data() + r * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
    const std::uint32_t ix = x.id(), ir = rows.id();
    return x.tape().push(std::move(out), {x, rows}, [ix, ir, per, c](const Tensor& g, Tape& t) {
        t.accumulate(ix, g);
        if (!t.needs_grad(ir)) return;
        Tensor& gr = t.grad_buffer(ir);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            double* dst = gr.data() + (r / per) * c;
            const double* src = g.data() + r * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
    });
}

Var gelu(Var x) {
    constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
    constexpr double a = 0.044715;
    Tensor out = x.value();
    for (double& v : out.storage()) {
        const double u = k * (v + a * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    const std::uint32_t ix = x.id();
    return x.tape().push(std::move(out), {x}, [ix](const Tensor& g, Tape& t) {
        if (!t.needs_grad(ix)) return;
        const Tensor& xv = t.value(ix);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xv[i];
            const double u = k * (v + a * v * v * v);
            const double th = std::tanh(u);
            const double du = k * (1.0 + 3.0 * a * v * v);
            gx[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
        }
    });
}

Tensor softmax_rows(const Tensor& logits) {
    Tensor out = logits;
    const std::size_t c = out.cols();
    for (std::size_t r = 0; r < out.rows(); ++r) {
        double* row = out.data() + r * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) row[j] /= z;
    }
    return out;
}

Tensor attention_weights(const Tensor& q, const Tensor& k) {
    if (q.cols() != k.cols() || q.cols() == 0 || k.rows() == 0) shape_error("attention", q, k);
    Tensor logits({q.rows(), k.rows()});
    as_mut(logits).noalias() = as_mat(q) * as_mat(k).transpose() / std::sqrt(static_cast<double>(q.cols()));
    return softmax_rows(logits);
}

Var scaled_dot_attention(Var q, Var k, Var v, std::size_t groups) {
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    const std::size_t d = qv.cols();
    if (groups == 0 || d == 0 || kv.cols() != d || kv.rows() == 0 || kv.rows() != vv.rows() ||
        qv.rows() % groups != 0 || kv.rows() % groups != 0) {
        throw std::invalid_argument("attention: incompatible shapes Q" + shape_string(qv.shape()) + " K" +
                                    shape_string(kv.shape()) + " V" + shape_string(vv.shape()) + " in " +
                                    std::to_string(groups) + " groups");
    }
    const std::size_t a = qv.rows() / groups;
    const std::size_t b = kv.rows() / groups;
    const std::size_t dv = vv.cols();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    flops::g_counts.attention += static_cast<std::uint64_t>(groups) * a * b * (d + dv);

    // Attention weights per group, kept for the backward pass.
    Tensor weights({groups * a, b});
    Tensor out({groups * a, dv});
    for (std::size_t g = 0; g < groups; ++g) {
        auto qg = as_mat(qv.data() + g * a * d, a, d);
        auto kg = as_mat(kv.data() + g * b * d, b, d);
        auto vg = as_mat(vv.data() + g * b * dv, b, dv);
        auto w = as_mut(weights.data() + g * a * b, a, b);
        w.noalias() = qg * kg.transpose() * inv_sqrt_d;
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            const double mx = w.row(r).maxCoeff();
            double z = 0.0;
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                w(r, j) = std::exp(w(r, j) - mx);
                z += w(r, j);
            }
            w.row(r) /= z;
        }
        as_mut(out.data() + g * a * dv, a, dv).noalias() = w * vg;
    }

    const std::uint32_t iq = q.id(), ik = k.id(), iv = v.id();
    return q.tape().push(
        std::move(out), {q, k, v},
        [iq, ik, iv, groups, a, b, d, dv, inv_sqrt_d, weights = std::move(weights)](const Tensor& gout, Tape& t) {
            const Tensor& qv = t.value(iq);
            const Tensor& kv = t.value(ik);
            const Tensor& vv = t.value(iv);
            const bool need_q = t.needs_grad(iq), need_k = t.needs_grad(ik), need_v = t.needs_grad(iv);
            RowMat dlogits(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            for (std::size_t g = 0; g < groups; ++g) {
                auto w = as_mat(weights.data() + g * a * b, a, b);
                auto go = as_mat(gout.data() + g * a * dv, a, dv);
                if (need_v) as_mut(t.grad_buffer(iv).data() + g * b * dv, b, dv).noalias() += w.transpose() * go;
                if (!need_q && !need_k) continue;
                auto vg = as_mat(vv.data() + g * b * dv, b, dv);
                dlogits.noalias() = go * vg.transpose();
                for (Eigen::Index r = 0; r < dlogits.rows(); ++r) {
                    const double dot = dlogits.row(r).dot(w.row(r));
                    dlogits.row(r) = (w.row(r).array() * (dlogits.row(r).array() - dot)).matrix();
                }
                dlogits *= inv_sqrt_d;
                if (need_q) {
                    auto kg = as_mat(kv.data() + g * b * d, b, d);
                    as_mut(t.grad_buffer(iq).data() + g * a * d, a, d).noalias() += dlogits * kg;
                }
                if (need_k) {
                    auto qg = as_mat(qv.data() + g * a * d, a, d);
                    as_mut(t.grad_buffer(ik).data() + g * b * d, b, d).noalias() += dlogits.transpose() * qg;
                }
            }
        });
}

Var embedding_mean(Var table, const std::vector<std::vector<std::size_t>>& indices) {
    const Tensor& tv = table.value();
    const std::size_t c = tv.cols();
    Tensor out({indices.size(), c});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto& idx = indices[r];
        if (idx.empty()) throw std::invalid_argument("embedding_mean: empty index list");
        const double w = 1.0 / static_cast<double>(idx.size());
        double* dst = out.data() + r * c;
        for (std::size_t i : idx) {
            if (i >= tv.rows()) {
                throw std::out_of_range("embedding_mean: index " + std::to_string(i) + " outside table " +
                                        shape_string(tv.shape()));
            }
            const double* src = tv.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += w * src[j];
        }
    }
    const std::uint32_t it = table.id();
    return table.tape().push(std::move(out), {table}, [it, indices, c](const Tensor& g, Tape& t) {
        if (!t.needs_grad(it)) return;
        Tensor& gt = t.grad_buffer(it);
        for (std::size_t r = 0; r < indices.size(); ++r) {
            const double w = 1.0 / static_cast<double>(indices[r].size());
            const double* src = g.data() + r * c;
            for (std::size_t i : indices[r]) {
                double* dst = gt.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) dst[j] += w * src[j];
            }
        }
    });
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    const std::uint32_t ix = x.id();
    return x.tape().push(Tensor::scalar(s), {x}, [ix](const Tensor& g, Tape& t) {
        if (!t.needs_grad(ix)) return;
        Tensor& gx = t.grad_buffer(ix);
        for (double& v : gx.storage()) v += g[0];
    });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
    if (terms.empty() || terms.size() != weights.size()) {
        throw std::invalid_argument("weighted_sum: need one weight per term");
    }
    double s = 0.0;
    std::vector<std::uint32_t> ids;
    std::vector<double> ws(weights.begin(), weights.end());
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i].value().size() != 1) throw std::invalid_argument("weighted_sum: terms must be scalars");
        s += weights[i] * terms[i].value()[0];
        ids.push_back(terms[i].id());
    }
    return terms[0].tape().push(Tensor::scalar(s), terms, [ids, ws](const Tensor& g, Tape& t) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (t.needs_grad(ids[i])) t.grad_buffer(ids[i])[0] += ws[i] * g[0];
        }
    });
}

Var huber_loss(Var pred, const Tensor& target, double delta) {
    const Tensor& pv = pred.value();
    if (pv.size() != target.size()) shape_error("huber_loss", pv, target);
    if (!(delta > 0.0)) throw std::invalid_argument("huber_loss: delta must be positive");
    const double n = static_cast<double>(pv.size());
    double total = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double e = pv[i] - target[i];
        const double ae = std::abs(e);
        total += ae <= delta ? 0.5 * e * e : delta * (ae - 0.5 * delta);
    }
    const std::uint32_t ip = pred.id();
    return pred.tape().push(Tensor::scalar(total / n), {pred}, [ip, target, delta, n](const Tensor& g, Tape& t) {
        if (!t.needs_grad(ip)) return;
        const Tensor& pv = t.value(ip);
        Tensor& gp = t.grad_buffer(ip);
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const double e = pv[i] - target[i];
            const double de = std::abs(e) <= delta ? e : (e > 0 ? delta : -delta);
            gp[i] += g[0] * de / n;
        }
    });
}

Var pinball_loss(std::span<const Var> preds, const Tensor& target, std::span<const double> taus) {
    if (preds.empty() || preds.size() != taus.size()) {
        throw std::invalid_argument("pinball_loss: need one prediction tensor per quantile level");
    }
    for (double tau : taus) {
        if (!(tau > 0.0 && tau < 1.0)) {
            throw std::invalid_argument("pinball_loss: quantile level " + std::to_string(tau) + " outside (0, 1)");
        }
    }
    for (const Var& p : preds) {
        if (p.value().size() != target.size()) shape_error("pinball_loss", p.value(), target);
    }
    const double n = static_cast<double>(target.size() * preds.size());
    std::vector<Var> terms;
    std::vector<double> weights;
    for (std::size_t q = 0; q < preds.size(); ++q) {
        const double tau = taus[q];
        const Tensor& pv = preds[q].value();
        double total = 0.0;
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const double e = target[i] - pv[i];
            total += std::max(tau * e, (tau - 1.0) * e);
        }
        const std::uint32_t ip = preds[q].id();
        terms.push_back(preds[q].tape().push(Tensor::scalar(total), {preds[q]}, [ip, target, tau](const Tensor& g, Tape& t) {
            if (!t.needs_grad(ip)) return;
            const Tensor& pv = t.value(ip);
            Tensor& gp = t.grad_buffer(ip);
            for (std::size_t i = 0; i < pv.size(); ++i) {
                const double e = target[i] - pv[i];
                gp[i] -= g[0] * (e > 0.0 ? tau : (e < 0.0 ? tau - 1.0 : 0.0));
            }
        }));
        weights.push_back(1.0 / n);
    }
    return weighted_sum(terms, weights);
}

}  // namespace nest
