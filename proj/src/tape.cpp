#include "vidfuse/tape.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vidfuse {

namespace {

constexpr int64_t kParallelCutoff = 4096;

enum class BcKind { Same, LastOne, Scalar };

BcKind bc_kind(const Tensor& a, const Tensor& b, const char* where) {
    if (a.same_shape(b)) return BcKind::Same;
    if (b.numel() == 1) return BcKind::Scalar;
    if (b.ndim() == a.ndim() && b.shape.back() == 1) {
        bool ok = true;
        for (size_t i = 0; i + 1 < a.ndim(); ++i) ok = ok && a.shape[i] == b.shape[i];
        if (ok) return BcKind::LastOne;
    }
    throw contract_violation(std::string(where) + ": incompatible shapes " + shape_str(a.shape) +
                             " vs " + shape_str(b.shape));
}

// reduce a full-shape gradient onto the broadcast operand
Tensor reduce_to(const Tensor& g, BcKind k, const std::vector<int64_t>& bshape, int64_t last) {
    if (k == BcKind::Same) return g;
    Tensor r(bshape);
    if (k == BcKind::Scalar) {
        r[0] = g.sum();
        return r;
    }
    int64_t rows = g.numel() / last;
    for (int64_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < last; ++j) s += g[i * last + j];
        r[i] = s;
    }
    return r;
}

struct MatShape {
    int64_t batch, m, k, n;
    bool b_broadcast;
};

MatShape matmul_shape(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2) throw contract_violation("matmul: operands must be >= 2-d");
    MatShape s{};
    s.m = a.shape[a.ndim() - 2];
    s.k = a.shape[a.ndim() - 1];
    s.batch = a.numel() / (s.m * s.k);
    if (b.ndim() == 2) {
        s.b_broadcast = true;
    } else {
        if (b.ndim() != a.ndim())
            throw contract_violation("matmul: batch rank mismatch");
        for (size_t i = 0; i + 2 < a.ndim(); ++i)
            if (a.shape[i] != b.shape[i]) throw contract_violation("matmul: batch dims differ");
        s.b_broadcast = false;
    }
    if (b.shape[b.ndim() - 2] != s.k)
        throw contract_violation("matmul: inner dims differ: " + shape_str(a.shape) + " x " +
                                 shape_str(b.shape));
    s.n = b.shape[b.ndim() - 1];
    return s;
}

// C[bi] += or = A[bi] * B[bi or 0]; plain accumulate-into-row kernel
void mm_kernel(const double* A, const double* B, double* C, const MatShape& s) {
    int64_t rows = s.batch * s.m;
#pragma omp parallel for schedule(static) if (rows * s.k * s.n > kParallelCutoff)
    for (int64_t r = 0; r < rows; ++r) {
        int64_t bi = r / s.m;
        const double* arow = A + r * s.k;
        const double* bmat = B + (s.b_broadcast ? 0 : bi * s.k * s.n);
        double* crow = C + r * s.n;
        for (int64_t j = 0; j < s.n; ++j) crow[j] = 0.0;
        for (int64_t kk = 0; kk < s.k; ++kk) {
            double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = bmat + kk * s.n;
            for (int64_t j = 0; j < s.n; ++j) crow[j] += av * brow[j];
        }
    }
}

// dA[bi] = dC[bi] * B[bi or 0]^T
void mm_grad_a(const double* dC, const double* B, double* dA, const MatShape& s) {
    int64_t rows = s.batch * s.m;
#pragma omp parallel for schedule(static) if (rows * s.k * s.n > kParallelCutoff)
    for (int64_t r = 0; r < rows; ++r) {
        int64_t bi = r / s.m;
        const double* gcrow = dC + r * s.n;
        const double* bmat = B + (s.b_broadcast ? 0 : bi * s.k * s.n);
        double* garow = dA + r * s.k;
        for (int64_t kk = 0; kk < s.k; ++kk) {
            const double* brow = bmat + kk * s.n;
            double acc = 0.0;
            for (int64_t j = 0; j < s.n; ++j) acc += gcrow[j] * brow[j];
            garow[kk] += acc;
        }
    }
}

// dB[bi] = A[bi]^T * dC[bi]; broadcast case sums over batch (parallel over k rows)
void mm_grad_b(const double* A, const double* dC, double* dB, const MatShape& s) {
    if (s.b_broadcast) {
#pragma omp parallel for schedule(static) if (s.k * s.n * s.batch * s.m > kParallelCutoff)
        for (int64_t kk = 0; kk < s.k; ++kk) {
            double* gbrow = dB + kk * s.n;
            for (int64_t bi = 0; bi < s.batch; ++bi) {
                const double* a = A + bi * s.m * s.k;
                const double* gc = dC + bi * s.m * s.n;
                for (int64_t i = 0; i < s.m; ++i) {
                    double av = a[i * s.k + kk];
                    if (av == 0.0) continue;
                    const double* gcrow = gc + i * s.n;
                    for (int64_t j = 0; j < s.n; ++j) gbrow[j] += av * gcrow[j];
                }
            }
        }
    } else {
        int64_t rows = s.batch * s.k;
#pragma omp parallel for schedule(static) if (rows * s.m * s.n > kParallelCutoff)
        for (int64_t r = 0; r < rows; ++r) {
            int64_t bi = r / s.k;
            int64_t kk = r % s.k;
            const double* a = A + bi * s.m * s.k;
            const double* gc = dC + bi * s.m * s.n;
            double* gbrow = dB + r * s.n;
            for (int64_t i = 0; i < s.m; ++i) {
                double av = a[i * s.k + kk];
                if (av == 0.0) continue;
                const double* gcrow = gc + i * s.n;
                for (int64_t j = 0; j < s.n; ++j) gbrow[j] += av * gcrow[j];
            }
        }
    }
}

}  // namespace

std::shared_ptr<GatherPlan> GatherPlan::make(std::vector<int64_t> out_shape, int64_t in_numel,
                                             std::vector<int64_t> idx) {
    auto p = std::make_shared<GatherPlan>();
    p->out_shape = std::move(out_shape);
    p->in_numel = in_numel;
    p->idx = std::move(idx);
    if (Tensor::numel_of(p->out_shape) != static_cast<int64_t>(p->idx.size()))
        throw contract_violation("gather plan: index count does not match output shape");
    p->inv_off.assign(static_cast<size_t>(in_numel + 1), 0);
    for (int64_t s : p->idx)
        if (s >= 0) p->inv_off[static_cast<size_t>(s + 1)]++;
    for (int64_t i = 0; i < in_numel; ++i) p->inv_off[i + 1] += p->inv_off[i];
    p->inv_src.assign(static_cast<size_t>(p->inv_off[in_numel]), 0);
    std::vector<int64_t> cur(p->inv_off.begin(), p->inv_off.end() - 1);
    for (int64_t o = 0; o < static_cast<int64_t>(p->idx.size()); ++o) {
        int64_t s = p->idx[o];
        if (s >= 0) p->inv_src[static_cast<size_t>(cur[static_cast<size_t>(s)]++)] = o;
    }
    return p;
}

int Tape::push(Tensor value, bool ng, std::function<void(Tape&, int)> back) {
    Node n;
    n.val = std::move(value);
    n.ng = ng;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor value, bool needs_grad) {
    return push(std::move(value), needs_grad, nullptr);
}

void Tape::accum(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.ng) return;
    if (n.grad.v.empty()) n.grad = Tensor(n.val.shape);
    int64_t cnt = g.numel();
#pragma omp parallel for schedule(static) if (cnt > kParallelCutoff)
    for (int64_t i = 0; i < cnt; ++i) n.grad[i] += g[i];
}

void Tape::backward(int root) {
    Node& r = nodes_[static_cast<size_t>(root)];
    if (r.val.numel() != 1) throw contract_violation("backward: root must be scalar");
    if (!r.ng) return;
    if (r.grad.v.empty()) r.grad = Tensor(r.val.shape);
    r.grad[0] += 1.0;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.ng && n.back && !n.grad.v.empty()) n.back(*this, id);
    }
}

void Tape::zero_grad() {
    for (Node& n : nodes_) n.grad = Tensor();
}

int Tape::add(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    BcKind k = bc_kind(av, bv, "add");
    Tensor out = av;
    int64_t last = av.ndim() ? av.shape.back() : 1;
    if (k == BcKind::Same)
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    else if (k == BcKind::Scalar)
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[0];
    else
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i / last];
    bool ng = needs_grad(a) || needs_grad(b);
    auto bshape = bv.shape;
    return push(std::move(out), ng, [a, b, k, bshape, last](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        t.accum(a, g);
        if (t.needs_grad(b)) t.accum(b, reduce_to(g, k, bshape, last));
    });
}

int Tape::sub(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    BcKind k = bc_kind(av, bv, "sub");
    Tensor out = av;
    int64_t last = av.ndim() ? av.shape.back() : 1;
    if (k == BcKind::Same)
        for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    else if (k == BcKind::Scalar)
        for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[0];
    else
        for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i / last];
    bool ng = needs_grad(a) || needs_grad(b);
    auto bshape = bv.shape;
    return push(std::move(out), ng, [a, b, k, bshape, last](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        t.accum(a, g);
        if (t.needs_grad(b)) {
            Tensor r = reduce_to(g, k, bshape, last);
            for (int64_t i = 0; i < r.numel(); ++i) r[i] = -r[i];
            t.accum(b, r);
        }
    });
}

int Tape::mul(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    BcKind k = bc_kind(av, bv, "mul");
    Tensor out = av;
    int64_t last = av.ndim() ? av.shape.back() : 1;
    if (k == BcKind::Same)
        for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    else if (k == BcKind::Scalar)
        for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[0];
    else
        for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i / last];
    bool ng = needs_grad(a) || needs_grad(b);
    auto bshape = bv.shape;
    return push(std::move(out), ng, [a, b, k, bshape, last](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& av2 = t.val(a);
        const Tensor& bv2 = t.val(b);
        if (t.needs_grad(a)) {
            Tensor ga(av2.shape);
            if (k == BcKind::Same)
                for (int64_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] * bv2[i];
            else if (k == BcKind::Scalar)
                for (int64_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] * bv2[0];
            else
                for (int64_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] * bv2[i / last];
            t.accum(a, ga);
        }
        if (t.needs_grad(b)) {
            Tensor full(av2.shape);
            for (int64_t i = 0; i < full.numel(); ++i) full[i] = g[i] * av2[i];
            t.accum(b, reduce_to(full, k, bshape, last));
        }
    });
}

int Tape::div(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    BcKind k = bc_kind(av, bv, "div");
    Tensor out = av;
    int64_t last = av.ndim() ? av.shape.back() : 1;
    auto bval = [&](int64_t i) {
        if (k == BcKind::Same) return bv[i];
        if (k == BcKind::Scalar) return bv[0];
        return bv[i / last];
    };
    for (int64_t i = 0; i < out.numel(); ++i) out[i] /= bval(i);
    bool ng = needs_grad(a) || needs_grad(b);
    auto bshape = bv.shape;
    return push(std::move(out), ng, [a, b, k, bshape, last](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& av2 = t.val(a);
        const Tensor& bv2 = t.val(b);
        auto bval = [&](int64_t i) {
            if (k == BcKind::Same) return bv2[i];
            if (k == BcKind::Scalar) return bv2[0];
            return bv2[i / last];
        };
        if (t.needs_grad(a)) {
            Tensor ga(av2.shape);
            for (int64_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] / bval(i);
            t.accum(a, ga);
        }
        if (t.needs_grad(b)) {
            Tensor full(av2.shape);
            for (int64_t i = 0; i < full.numel(); ++i) {
                double bb = bval(i);
                full[i] = -g[i] * av2[i] / (bb * bb);
            }
            t.accum(b, reduce_to(full, k, bshape, last));
        }
    });
}

int Tape::scale(int a, double s) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return push(std::move(out), needs_grad(a), [a, s](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor ga(g.shape);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] * s;
        t.accum(a, ga);
    });
}

int Tape::add_scalar(int a, double s) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
    return push(std::move(out), needs_grad(a),
                [a](Tape& t, int self) { t.accum(a, t.grad(self)); });
}

int Tape::silu(int a) {
    const Tensor& av = val(a);
    Tensor out(av.shape);
    int64_t cnt = av.numel();
#pragma omp parallel for schedule(static) if (cnt > kParallelCutoff)
    for (int64_t i = 0; i < cnt; ++i) {
        double sg = 1.0 / (1.0 + std::exp(-av[i]));
        out[i] = av[i] * sg;
    }
    return push(std::move(out), needs_grad(a), [a](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.val(a);
        Tensor ga(x.shape);
        int64_t cnt2 = x.numel();
#pragma omp parallel for schedule(static) if (cnt2 > kParallelCutoff)
        for (int64_t i = 0; i < cnt2; ++i) {
            double sg = 1.0 / (1.0 + std::exp(-x[i]));
            ga[i] = g[i] * sg * (1.0 + x[i] * (1.0 - sg));
        }
        t.accum(a, ga);
    });
}

int Tape::rsqrt_eps(int a, double eps) {
    const Tensor& av = val(a);
    Tensor out(av.shape);
    for (int64_t i = 0; i < av.numel(); ++i) out[i] = 1.0 / std::sqrt(av[i] + eps);
    return push(std::move(out), needs_grad(a), [a](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.val(self);
        Tensor ga(y.shape);
        for (int64_t i = 0; i < y.numel(); ++i) ga[i] = -0.5 * g[i] * y[i] * y[i] * y[i];
        t.accum(a, ga);
    });
}

int Tape::matmul(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    MatShape s = matmul_shape(av, bv);
    std::vector<int64_t> oshape(av.shape.begin(), av.shape.end() - 1);
    oshape.push_back(s.n);
    Tensor out(std::move(oshape));
    mm_kernel(av.v.data(), bv.v.data(), out.v.data(), s);
    bool ng = needs_grad(a) || needs_grad(b);
    return push(std::move(out), ng, [a, b, s](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(a)) {
            Tensor ga(t.val(a).shape);
            mm_grad_a(g.v.data(), t.val(b).v.data(), ga.v.data(), s);
            t.accum(a, ga);
        }
        if (t.needs_grad(b)) {
            Tensor gb(t.val(b).shape);
            mm_grad_b(t.val(a).v.data(), g.v.data(), gb.v.data(), s);
            t.accum(b, gb);
        }
    });
}

int Tape::reshape(int a, std::vector<int64_t> shape) {
    Tensor out = val(a).reshaped(std::move(shape));
    auto orig = val(a).shape;
    return push(std::move(out), needs_grad(a), [a, orig](Tape& t, int self) {
        t.accum(a, t.grad(self).reshaped(orig));
    });
}

int Tape::gather(int a, std::shared_ptr<GatherPlan> plan) {
    const Tensor& av = val(a);
    if (av.numel() != plan->in_numel)
        throw contract_violation("gather: plan built for a different input size");
    Tensor out(plan->out_shape);
    int64_t cnt = out.numel();
    const auto& idx = plan->idx;
#pragma omp parallel for schedule(static) if (cnt > kParallelCutoff)
    for (int64_t i = 0; i < cnt; ++i) out[i] = idx[i] >= 0 ? av[idx[i]] : 0.0;
    return push(std::move(out), needs_grad(a), [a, plan](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor ga(t.val(a).shape);
        int64_t in_n = plan->in_numel;
#pragma omp parallel for schedule(static) if (in_n > kParallelCutoff)
        for (int64_t s = 0; s < in_n; ++s) {
            double acc = 0.0;
            for (int64_t p = plan->inv_off[s]; p < plan->inv_off[s + 1]; ++p)
                acc += g[plan->inv_src[static_cast<size_t>(p)]];
            ga[s] = acc;
        }
        t.accum(a, ga);
    });
}

int Tape::permute(int a, const std::vector<int>& axes) {
    return gather(a, plan_permute(val(a).shape, axes));
}

int Tape::transpose_last(int a) {
    std::vector<int> axes(val(a).ndim());
    for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(a, axes);
}

int Tape::expand0(int a, int64_t n) {
    const Tensor& av = val(a);
    std::vector<int64_t> oshape;
    oshape.push_back(n);
    for (int64_t d : av.shape) oshape.push_back(d);
    Tensor out(oshape);
    int64_t sz = av.numel();
    for (int64_t r = 0; r < n; ++r)
        std::copy(av.v.begin(), av.v.end(), out.v.begin() + r * sz);
    return push(std::move(out), needs_grad(a), [a, n, sz](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor ga(t.val(a).shape);
        for (int64_t r = 0; r < n; ++r)
            for (int64_t i = 0; i < sz; ++i) ga[i] += g[r * sz + i];
        t.accum(a, ga);
    });
}

int Tape::concat0(const std::vector<int>& parts) {
    if (parts.empty()) throw contract_violation("concat0: no parts");
    const Tensor& first = val(parts[0]);
    std::vector<int64_t> trail(first.shape.begin() + 1, first.shape.end());
    int64_t rows = 0;
    for (int p : parts) {
        const Tensor& pv = val(p);
        std::vector<int64_t> tr(pv.shape.begin() + 1, pv.shape.end());
        if (tr != trail) throw contract_violation("concat0: trailing dims differ");
        rows += pv.shape[0];
    }
    std::vector<int64_t> oshape;
    oshape.push_back(rows);
    for (int64_t d : trail) oshape.push_back(d);
    Tensor out(oshape);
    int64_t off = 0;
    bool ng = false;
    for (int p : parts) {
        const Tensor& pv = val(p);
        std::copy(pv.v.begin(), pv.v.end(), out.v.begin() + off);
        off += pv.numel();
        ng = ng || needs_grad(p);
    }
    auto parts_copy = parts;
    return push(std::move(out), ng, [parts_copy](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        int64_t off2 = 0;
        for (int p : parts_copy) {
            const Tensor& pv = t.val(p);
            if (t.needs_grad(p)) {
                Tensor gp(pv.shape);
                std::copy(g.v.begin() + off2, g.v.begin() + off2 + pv.numel(), gp.v.begin());
                t.accum(p, gp);
            }
            off2 += pv.numel();
        }
    });
}

int Tape::rows(int table, const std::vector<int64_t>& indices) {
    const Tensor& tv = val(table);
    if (tv.ndim() != 2) throw contract_violation("rows: table must be 2-d");
    int64_t V = tv.shape[0], D = tv.shape[1];
    std::vector<int64_t> idx;
    idx.reserve(indices.size() * static_cast<size_t>(D));
    for (int64_t r : indices) {
        if (r < 0 || r >= V) throw range_error("rows: index out of vocabulary");
        for (int64_t j = 0; j < D; ++j) idx.push_back(r * D + j);
    }
    auto plan = GatherPlan::make({static_cast<int64_t>(indices.size()), D}, tv.numel(),
                                 std::move(idx));
    return gather(table, plan);
}

int Tape::softmax_last(int a) {
    const Tensor& av = val(a);
    int64_t last = av.shape.back();
    int64_t rowcount = av.numel() / last;
    Tensor out(av.shape);
#pragma omp parallel for schedule(static) if (av.numel() > kParallelCutoff)
    for (int64_t r = 0; r < rowcount; ++r) {
        const double* x = av.v.data() + r * last;
        double* y = out.v.data() + r * last;
        double mx = x[0];
        for (int64_t j = 1; j < last; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < last; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        double inv = 1.0 / sum;
        for (int64_t j = 0; j < last; ++j) y[j] *= inv;
    }
    return push(std::move(out), needs_grad(a), [a, last, rowcount](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.val(self);
        Tensor ga(y.shape);
#pragma omp parallel for schedule(static) if (y.numel() > kParallelCutoff)
        for (int64_t r = 0; r < rowcount; ++r) {
            const double* gr = g.v.data() + r * last;
            const double* yr = y.v.data() + r * last;
            double dotv = 0.0;
            for (int64_t j = 0; j < last; ++j) dotv += gr[j] * yr[j];
            double* gar = ga.v.data() + r * last;
            for (int64_t j = 0; j < last; ++j) gar[j] = yr[j] * (gr[j] - dotv);
        }
        t.accum(a, ga);
    });
}

int Tape::mean_heads(int a, int64_t h) {
    const Tensor& av = val(a);
    if (av.ndim() != 3 || av.shape[0] % h != 0)
        throw contract_violation("mean_heads: expects [B*h, T, S]");
    int64_t B = av.shape[0] / h, T = av.shape[1], S = av.shape[2];
    Tensor out({B, T, S});
    int64_t plane = T * S;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < h; ++j)
            for (int64_t i = 0; i < plane; ++i) out[b * plane + i] += av[(b * h + j) * plane + i];
    for (int64_t i = 0; i < out.numel(); ++i) out[i] /= static_cast<double>(h);
    return push(std::move(out), needs_grad(a), [a, h, B, plane](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor ga(t.val(a).shape);
        double inv = 1.0 / static_cast<double>(h);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t j = 0; j < h; ++j)
                for (int64_t i = 0; i < plane; ++i)
                    ga[(b * h + j) * plane + i] = g[b * plane + i] * inv;
        t.accum(a, ga);
    });
}

int Tape::mean_last(int a) {
    const Tensor& av = val(a);
    int64_t last = av.shape.back();
    int64_t rowcount = av.numel() / last;
    std::vector<int64_t> oshape = av.shape;
    oshape.back() = 1;
    Tensor out(oshape);
    for (int64_t r = 0; r < rowcount; ++r) {
        double s = 0.0;
        for (int64_t j = 0; j < last; ++j) s += av[r * last + j];
        out[r] = s / static_cast<double>(last);
    }
    return push(std::move(out), needs_grad(a), [a, last, rowcount](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor ga(t.val(a).shape);
        double inv = 1.0 / static_cast<double>(last);
        for (int64_t r = 0; r < rowcount; ++r)
            for (int64_t j = 0; j < last; ++j) ga[r * last + j] = g[r] * inv;
        t.accum(a, ga);
    });
}

int Tape::min_last(int a) {
    const Tensor& av = val(a);
    int64_t last = av.shape.back();
    int64_t rowcount = av.numel() / last;
    std::vector<int64_t> oshape = av.shape;
    oshape.back() = 1;
    Tensor out(oshape);
    auto arg = std::make_shared<std::vector<int64_t>>(rowcount);
    for (int64_t r = 0; r < rowcount; ++r) {
        int64_t best = 0;
        for (int64_t j = 1; j < last; ++j)
            if (av[r * last + j] < av[r * last + best]) best = j;
        (*arg)[r] = best;
        out[r] = av[r * last + best];
    }
    return push(std::move(out), needs_grad(a), [a, last, rowcount, arg](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor ga(t.val(a).shape);
        for (int64_t r = 0; r < rowcount; ++r) ga[r * last + (*arg)[r]] = g[r];
        t.accum(a, ga);
    });
}

int Tape::max_last(int a) {
    const Tensor& av = val(a);
    int64_t last = av.shape.back();
    int64_t rowcount = av.numel() / last;
    std::vector<int64_t> oshape = av.shape;
    oshape.back() = 1;
    Tensor out(oshape);
    auto arg = std::make_shared<std::vector<int64_t>>(rowcount);
    for (int64_t r = 0; r < rowcount; ++r) {
        int64_t best = 0;
        for (int64_t j = 1; j < last; ++j)
            if (av[r * last + j] > av[r * last + best]) best = j;
        (*arg)[r] = best;
        out[r] = av[r * last + best];
    }
    return push(std::move(out), needs_grad(a), [a, last, rowcount, arg](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor ga(t.val(a).shape);
        for (int64_t r = 0; r < rowcount; ++r) ga[r * last + (*arg)[r]] = g[r];
        t.accum(a, ga);
    });
}

int Tape::mul_lastvec(int a, int gvec) {
    const Tensor& av = val(a);
    const Tensor& gv = val(gvec);
    int64_t last = av.shape.back();
    if (gv.numel() != last) throw contract_violation("mul_lastvec: vector size != last dim");
    Tensor out = av;
    int64_t rowcount = av.numel() / last;
    for (int64_t r = 0; r < rowcount; ++r)
        for (int64_t j = 0; j < last; ++j) out[r * last + j] *= gv[j];
    bool ng = needs_grad(a) || needs_grad(gvec);
    return push(std::move(out), ng, [a, gvec, last, rowcount](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& av2 = t.val(a);
        const Tensor& gv2 = t.val(gvec);
        if (t.needs_grad(a)) {
            Tensor ga(av2.shape);
            for (int64_t r = 0; r < rowcount; ++r)
                for (int64_t j = 0; j < last; ++j) ga[r * last + j] = g[r * last + j] * gv2[j];
            t.accum(a, ga);
        }
        if (t.needs_grad(gvec)) {
            Tensor gg(gv2.shape);
            for (int64_t r = 0; r < rowcount; ++r)
                for (int64_t j = 0; j < last; ++j) gg[j] += g[r * last + j] * av2[r * last + j];
            t.accum(gvec, gg);
        }
    });
}

int Tape::add_lastvec(int a, int bvec) {
    const Tensor& av = val(a);
    const Tensor& bv = val(bvec);
    int64_t last = av.shape.back();
    if (bv.numel() != last) throw contract_violation("add_lastvec: vector size != last dim");
    Tensor out = av;
    int64_t rowcount = av.numel() / last;
    for (int64_t r = 0; r < rowcount; ++r)
        for (int64_t j = 0; j < last; ++j) out[r * last + j] += bv[j];
    bool ng = needs_grad(a) || needs_grad(bvec);
    return push(std::move(out), ng, [a, bvec, last, rowcount](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        t.accum(a, g);
        if (t.needs_grad(bvec)) {
            Tensor gb(t.val(bvec).shape);
            for (int64_t r = 0; r < rowcount; ++r)
                for (int64_t j = 0; j < last; ++j) gb[j] += g[r * last + j];
            t.accum(bvec, gb);
        }
    });
}

int Tape::sum_all(int a) {
    Tensor out({1}, val(a).sum());
    return push(std::move(out), needs_grad(a), [a](Tape& t, int self) {
        double g = t.grad(self)[0];
        Tensor ga(t.val(a).shape, g);
        t.accum(a, ga);
    });
}

int Tape::mean_all(int a) {
    int64_t n = val(a).numel();
    Tensor out({1}, val(a).sum() / static_cast<double>(n));
    return push(std::move(out), needs_grad(a), [a, n](Tape& t, int self) {
        double g = t.grad(self)[0] / static_cast<double>(n);
        Tensor ga(t.val(a).shape, g);
        t.accum(a, ga);
    });
}

int Tape::mse(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require_same_shape(av, bv, "mse");
    int64_t n = av.numel();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = av[i] - bv[i];
        s += d * d;
    }
    Tensor out({1}, s / static_cast<double>(n));
    bool ng = needs_grad(a) || needs_grad(b);
    return push(std::move(out), ng, [a, b, n](Tape& t, int self) {
        double g = t.grad(self)[0] * 2.0 / static_cast<double>(n);
        const Tensor& av2 = t.val(a);
        const Tensor& bv2 = t.val(b);
        if (t.needs_grad(a)) {
            Tensor ga(av2.shape);
            for (int64_t i = 0; i < n; ++i) ga[i] = g * (av2[i] - bv2[i]);
            t.accum(a, ga);
        }
        if (t.needs_grad(b)) {
            Tensor gb(bv2.shape);
            for (int64_t i = 0; i < n; ++i) gb[i] = -g * (av2[i] - bv2[i]);
            t.accum(b, gb);
        }
    });
}

std::shared_ptr<GatherPlan> plan_permute(const std::vector<int64_t>& in_shape,
                                         const std::vector<int>& axes) {
    size_t nd = in_shape.size();
    if (axes.size() != nd) throw contract_violation("permute: axes rank mismatch");
    std::vector<int64_t> out_shape(nd);
    for (size_t i = 0; i < nd; ++i) out_shape[i] = in_shape[static_cast<size_t>(axes[i])];
    std::vector<int64_t> in_strides(nd, 1);
    for (size_t i = nd - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];
    int64_t total = Tensor::numel_of(out_shape);
    std::vector<int64_t> idx(static_cast<size_t>(total));
    std::vector<int64_t> coord(nd, 0);
    for (int64_t o = 0; o < total; ++o) {
        int64_t src = 0;
        for (size_t i = 0; i < nd; ++i) src += coord[i] * in_strides[static_cast<size_t>(axes[i])];
        idx[static_cast<size_t>(o)] = src;
        for (size_t i = nd; i-- > 0;) {
            if (++coord[i] < out_shape[i]) break;
            coord[i] = 0;
        }
    }
    return GatherPlan::make(out_shape, Tensor::numel_of(in_shape), std::move(idx));
}

// [F, C, H, W] -> [F, P, C*k*k] with P = H'*W'
std::shared_ptr<GatherPlan> plan_im2col(int64_t F, int64_t C, int64_t H, int64_t W, int64_t k,
                                        int64_t stride, int64_t pad) {
    int64_t Ho = (H + 2 * pad - k) / stride + 1;
    int64_t Wo = (W + 2 * pad - k) / stride + 1;
    int64_t P = Ho * Wo;
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(F * P * C * k * k));
    for (int64_t f = 0; f < F; ++f)
        for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t ky = 0; ky < k; ++ky)
                        for (int64_t kx = 0; kx < k; ++kx) {
                            int64_t iy = oy * stride + ky - pad;
                            int64_t ix = ox * stride + kx - pad;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W)
                                idx.push_back(-1);
                            else
                                idx.push_back(((f * C + c) * H + iy) * W + ix);
                        }
    return GatherPlan::make({F, P, C * k * k}, F * C * H * W, std::move(idx));
}

std::shared_ptr<GatherPlan> plan_upsample2x(int64_t F, int64_t C, int64_t H, int64_t W) {
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(F * C * 4 * H * W));
    for (int64_t f = 0; f < F; ++f)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < 2 * H; ++y)
                for (int64_t x = 0; x < 2 * W; ++x)
                    idx.push_back(((f * C + c) * H + y / 2) * W + x / 2);
    return GatherPlan::make({F, C, 2 * H, 2 * W}, F * C * H * W, std::move(idx));
}

std::shared_ptr<GatherPlan> plan_pixel_unshuffle_inv(int64_t F, int64_t C4, int64_t H, int64_t W) {
    if (C4 % 4 != 0) throw contract_violation("pixel shuffle: channels must be divisible by 4");
    int64_t C = C4 / 4;
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(F * C * 4 * H * W));
    // source channel layout: c*4 + (dy*2+dx)
    for (int64_t f = 0; f < F; ++f)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < 2 * H; ++y)
                for (int64_t x = 0; x < 2 * W; ++x) {
                    int64_t sc = c * 4 + (y % 2) * 2 + (x % 2);
                    idx.push_back(((f * C4 + sc) * H + y / 2) * W + x / 2);
                }
    return GatherPlan::make({F, C, 2 * H, 2 * W}, F * C4 * H * W, std::move(idx));
}

}  // namespace vidfuse
