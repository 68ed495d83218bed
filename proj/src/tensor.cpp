#include "prefixmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "prefixmt/kernels.hpp"

namespace prefixmt {

namespace {

thread_local Tape* t_current_tape = nullptr;

size_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw TensorError("tensor shape must not be empty");
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw TensorError("tensor dimensions must be positive");
        n *= static_cast<size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

bool want_record(std::initializer_list<const Tensor*> ins) {
    if (!t_current_tape) return false;
    for (const Tensor* t : ins)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

float* ensure_grad(TensorData* d) {
    if (d->grad.empty()) d->grad.assign(d->values.size(), 0.0f);
    return d->grad.data();
}

void check_2d(const Tensor& t, const char* what) {
    if (t.ndim() != 2) throw TensorError(std::string(what) + " expects a 2-D tensor");
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto d = std::make_shared<TensorData>();
    const size_t n = checked_numel(shape);
    d->shape = std::move(shape);
    d->values.assign(n, 0.0f);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.d_->values.begin(), t.d_->values.end(), value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> values, bool requires_grad) {
    const size_t n = checked_numel(shape);
    if (n != values.size())
        throw TensorError("value count " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(shape));
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

Tensor Tensor::uniform(std::vector<int> shape, float lo, float hi, Rng& rng, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (float& v : t.d_->values) v = rng.uniform(lo, hi);
    return t;
}

float Tensor::item() const {
    if (size() != 1) throw TensorError("item() requires a single-element tensor");
    return d_->values[0];
}

std::span<float> Tensor::grad_mut() {
    ensure_grad(d_.get());
    return d_->grad;
}

// ---- tape ----

void Tape::record(const Tensor& out, std::function<void()> backward_fn) {
    entries_.push_back(Entry{out.d_, std::move(backward_fn)});
    outputs_.insert(out.d_.get());
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw TensorError("backward already called on this tape; reset() first");
    if (!loss.defined()) throw TensorError("backward on an undefined tensor");
    if (loss.size() != 1) throw TensorError("backward requires a scalar loss");
    if (!owns(loss)) throw TensorError("loss is detached from this tape");
    loss.d_->grad.assign(1, 1.0f);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (!it->out->grad.empty()) it->backward();
    }
    consumed_ = true;
}

void Tape::reset() {
    entries_.clear();
    outputs_.clear();
    consumed_ = false;
}

Tape* current_tape() { return t_current_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(t_current_tape) { t_current_tape = &tape; }
TapeScope::~TapeScope() { t_current_tape = prev_; }

void backward(const Tensor& loss) {
    if (!t_current_tape) throw TensorError("backward called with no active tape");
    t_current_tape->backward(loss);
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    const int m = a.dim(0), p = a.dim(1), p2 = b.dim(0), n = b.dim(1);
    if (p != p2)
        throw TensorError("matmul inner dimensions disagree: " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros({m, n});
    kernels::matmul_nn(a.values().data(), b.values().data(), out.values_mut().data(), m, p, n);
    if (want_record({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        current_tape()->record(out, [ac, bc, oc, m, p, n]() {
            const float* g = oc.grad().data();
            if (ac.requires_grad()) {
                kernels::matmul_nt(g, bc.values().data(), ensure_grad(ac.data_ptr()), m, n, p, true);
            }
            if (bc.requires_grad()) {
                kernels::matmul_tn(ac.values().data(), g, ensure_grad(bc.data_ptr()), m, p, n, true);
            }
        });
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul_nt");
    check_2d(b, "matmul_nt");
    const int m = a.dim(0), p = a.dim(1), n = b.dim(0);
    if (b.dim(1) != p)
        throw TensorError("matmul_nt inner dimensions disagree: " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros({m, n});
    kernels::matmul_nt(a.values().data(), b.values().data(), out.values_mut().data(), m, p, n);
    if (want_record({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        current_tape()->record(out, [ac, bc, oc, m, p, n]() {
            const float* g = oc.grad().data();
            if (ac.requires_grad()) {
                // dA = G * B
                kernels::matmul_nn(g, bc.values().data(), ensure_grad(ac.data_ptr()), m, n, p, true);
            }
            if (bc.requires_grad()) {
                // dB = G^T * A
                kernels::matmul_tn(g, ac.values().data(), ensure_grad(bc.data_ptr()), m, n, p, true);
            }
        });
    }
    return out;
}

Tensor transpose2d(const Tensor& a) {
    check_2d(a, "transpose2d");
    const int r = a.dim(0), c = a.dim(1);
    Tensor out = Tensor::zeros({c, r});
    kernels::transpose(a.values().data(), out.values_mut().data(), r, c);
    if (want_record({&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        current_tape()->record(out, [ac, oc, r, c]() {
            if (!ac.requires_grad()) return;
            float* da = ensure_grad(ac.data_ptr());
            const float* g = oc.grad().data();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    da[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(j) * r + i];
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw TensorError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    kernels::vec_add(a.values().data(), b.values().data(), out.values_mut().data(), a.size());
    if (want_record({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        current_tape()->record(out, [ac, bc, oc]() {
            const float* g = oc.grad().data();
            if (ac.requires_grad()) kernels::vec_acc(ensure_grad(ac.data_ptr()), g, ac.size());
            if (bc.requires_grad()) kernels::vec_acc(ensure_grad(bc.data_ptr()), g, bc.size());
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw TensorError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    kernels::vec_mul(a.values().data(), b.values().data(), out.values_mut().data(), a.size());
    if (want_record({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        current_tape()->record(out, [ac, bc, oc]() {
            const float* g = oc.grad().data();
            const size_t n = ac.size();
            if (ac.requires_grad()) {
                float* da = ensure_grad(ac.data_ptr());
                const float* bv = bc.values().data();
                for (size_t i = 0; i < n; ++i) da[i] += g[i] * bv[i];
            }
            if (bc.requires_grad()) {
                float* db = ensure_grad(bc.data_ptr());
                const float* av = ac.values().data();
                for (size_t i = 0; i < n; ++i) db[i] += g[i] * av[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, float c) {
    Tensor out = Tensor::zeros(a.shape());
    kernels::vec_scale(a.values().data(), c, out.values_mut().data(), a.size());
    if (want_record({&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        current_tape()->record(out, [ac, oc, c]() {
            if (!ac.requires_grad()) return;
            kernels::vec_axpy(ensure_grad(ac.data_ptr()), c, oc.grad().data(), ac.size());
        });
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    check_2d(x, "add_bias");
    if (b.ndim() != 1 || b.dim(0) != x.dim(1))
        throw TensorError("add_bias bias must match the last dimension");
    const int m = x.dim(0), n = x.dim(1);
    Tensor out = Tensor::zeros({m, n});
    float* ov = out.values_mut().data();
    const float* xv = x.values().data();
    const float* bv = b.values().data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            ov[static_cast<size_t>(i) * n + j] = xv[static_cast<size_t>(i) * n + j] + bv[j];
    if (want_record({&x, &b})) {
        out.set_requires_grad(true);
        Tensor xc = x, bc = b, oc = out;
        current_tape()->record(out, [xc, bc, oc, m, n]() {
            const float* g = oc.grad().data();
            if (xc.requires_grad()) kernels::vec_acc(ensure_grad(xc.data_ptr()), g, xc.size());
            if (bc.requires_grad()) {
                float* db = ensure_grad(bc.data_ptr());
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) db[j] += g[static_cast<size_t>(i) * n + j];
            }
        });
    }
    return out;
}

namespace {

void softmax_backward_row(const float* y, const float* g, float* dx, int n) {
    float dot = 0.0f;
    for (int j = 0; j < n; ++j) dot += y[j] * g[j];
    for (int j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    for (float v : x.values())
        if (!std::isfinite(v)) throw TensorError("softmax input contains non-finite values");
    if (x.ndim() == 1) {
        if (axis != 0) throw TensorError("softmax axis out of range for 1-D tensor");
        Tensor out = Tensor::zeros(x.shape());
        kernels::softmax_rows(x.values().data(), out.values_mut().data(), 1, x.dim(0));
        if (want_record({&x})) {
            out.set_requires_grad(true);
            Tensor xc = x, oc = out;
            const int n = x.dim(0);
            current_tape()->record(out, [xc, oc, n]() {
                if (!xc.requires_grad()) return;
                softmax_backward_row(oc.values().data(), oc.grad().data(),
                                     ensure_grad(xc.data_ptr()), n);
            });
        }
        return out;
    }
    check_2d(x, "softmax");
    if (axis != 0 && axis != 1) throw TensorError("softmax axis out of range");
    const int m = x.dim(0), n = x.dim(1);
    if (axis == 1) {
        Tensor out = Tensor::zeros({m, n});
        kernels::softmax_rows(x.values().data(), out.values_mut().data(), m, n);
        if (want_record({&x})) {
            out.set_requires_grad(true);
            Tensor xc = x, oc = out;
            current_tape()->record(out, [xc, oc, m, n]() {
                if (!xc.requires_grad()) return;
                float* dx = ensure_grad(xc.data_ptr());
                for (int i = 0; i < m; ++i)
                    softmax_backward_row(oc.values().data() + static_cast<size_t>(i) * n,
                                         oc.grad().data() + static_cast<size_t>(i) * n,
                                         dx + static_cast<size_t>(i) * n, n);
            });
        }
        return out;
    }
    // axis == 0: softmax over columns via transposed row softmax
    std::vector<float> xt(x.size()), yt(x.size());
    kernels::transpose(x.values().data(), xt.data(), m, n);
    kernels::softmax_rows(xt.data(), yt.data(), n, m);
    Tensor out = Tensor::zeros({m, n});
    kernels::transpose(yt.data(), out.values_mut().data(), n, m);
    if (want_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        current_tape()->record(out, [xc, oc, m, n]() {
            if (!xc.requires_grad()) return;
            std::vector<float> ytl(oc.size()), gt(oc.size()), dxt(oc.size(), 0.0f);
            kernels::transpose(oc.values().data(), ytl.data(), m, n);
            kernels::transpose(oc.grad().data(), gt.data(), m, n);
            for (int i = 0; i < n; ++i)
                softmax_backward_row(ytl.data() + static_cast<size_t>(i) * m,
                                     gt.data() + static_cast<size_t>(i) * m,
                                     dxt.data() + static_cast<size_t>(i) * m, m);
            float* dx = ensure_grad(xc.data_ptr());
            std::vector<float> dxn(oc.size());
            kernels::transpose(dxt.data(), dxn.data(), n, m);
            kernels::vec_acc(dx, dxn.data(), oc.size());
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    check_2d(x, "layer_norm");
    const int m = x.dim(0), n = x.dim(1);
    if (gain.ndim() != 1 || gain.dim(0) != n || bias.ndim() != 1 || bias.dim(0) != n)
        throw TensorError("layer_norm gain/bias must match the last dimension");
    Tensor out = Tensor::zeros({m, n});
    kernels::layer_norm_rows(x.values().data(), gain.values().data(), bias.values().data(),
                             eps, out.values_mut().data(), m, n);
    if (want_record({&x, &gain, &bias})) {
        out.set_requires_grad(true);
        Tensor xc = x, gc = gain, bc = bias, oc = out;
        current_tape()->record(out, [xc, gc, bc, oc, m, n, eps]() {
            const float* xv = xc.values().data();
            const float* gv = gc.values().data();
            const float* g = oc.grad().data();
            std::vector<float> xhat(static_cast<size_t>(n));
            for (int i = 0; i < m; ++i) {
                const float* xr = xv + static_cast<size_t>(i) * n;
                const float* gr = g + static_cast<size_t>(i) * n;
                float mean = 0.0f;
                for (int j = 0; j < n; ++j) mean += xr[j];
                mean /= static_cast<float>(n);
                float var = 0.0f;
                for (int j = 0; j < n; ++j) {
                    const float d = xr[j] - mean;
                    var += d * d;
                }
                var /= static_cast<float>(n);
                const float inv_std = 1.0f / std::sqrt(var + eps);
                for (int j = 0; j < n; ++j) xhat[static_cast<size_t>(j)] = (xr[j] - mean) * inv_std;
                if (gc.requires_grad()) {
                    float* dg = ensure_grad(gc.data_ptr());
                    for (int j = 0; j < n; ++j) dg[j] += gr[j] * xhat[static_cast<size_t>(j)];
                }
                if (bc.requires_grad()) {
                    float* db = ensure_grad(bc.data_ptr());
                    for (int j = 0; j < n; ++j) db[j] += gr[j];
                }
                if (xc.requires_grad()) {
                    float* dx = ensure_grad(xc.data_ptr()) + static_cast<size_t>(i) * n;
                    float sum_dxhat = 0.0f, sum_dxhat_xhat = 0.0f;
                    for (int j = 0; j < n; ++j) {
                        const float dxh = gr[j] * gv[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat[static_cast<size_t>(j)];
                    }
                    const float inv_n = 1.0f / static_cast<float>(n);
                    for (int j = 0; j < n; ++j) {
                        const float dxh = gr[j] * gv[j];
                        dx[j] += inv_std * (dxh - inv_n * sum_dxhat -
                                            xhat[static_cast<size_t>(j)] * inv_n * sum_dxhat_xhat);
                    }
                }
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const float* xv = x.values().data();
    float* ov = out.values_mut().data();
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) ov[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
    if (want_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        current_tape()->record(out, [xc, oc]() {
            if (!xc.requires_grad()) return;
            float* dx = ensure_grad(xc.data_ptr());
            const float* g = oc.grad().data();
            const float* xv2 = xc.values().data();
            const size_t sz = xc.size();
            for (size_t i = 0; i < sz; ++i)
                if (xv2[i] > 0.0f) dx[i] += g[i];
        });
    }
    return out;
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
    if (slope.size() != 1) throw TensorError("prelu slope must be a single-element tensor");
    const float a = slope.value(0);
    Tensor out = Tensor::zeros(x.shape());
    const float* xv = x.values().data();
    float* ov = out.values_mut().data();
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) ov[i] = xv[i] > 0.0f ? xv[i] : a * xv[i];
    if (want_record({&x, &slope})) {
        out.set_requires_grad(true);
        Tensor xc = x, sc = slope, oc = out;
        current_tape()->record(out, [xc, sc, oc, a]() {
            const float* g = oc.grad().data();
            const float* xv2 = xc.values().data();
            const size_t sz = xc.size();
            if (xc.requires_grad()) {
                float* dx = ensure_grad(xc.data_ptr());
                for (size_t i = 0; i < sz; ++i) dx[i] += g[i] * (xv2[i] > 0.0f ? 1.0f : a);
            }
            if (sc.requires_grad()) {
                float* ds = ensure_grad(sc.data_ptr());
                float acc = 0.0f;
                for (size_t i = 0; i < sz; ++i)
                    if (xv2[i] <= 0.0f) acc += g[i] * xv2[i];
                ds[0] += acc;
            }
        });
    }
    return out;
}

Tensor embedding(std::span<const int> ids, const Tensor& table) {
    check_2d(table, "embedding");
    const int v = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw TensorError("embedding requires at least one id");
    for (int id : ids)
        if (id < 0 || id >= v) throw TensorError("embedding id " + std::to_string(id) + " out of range");
    const int L = static_cast<int>(ids.size());
    Tensor out = Tensor::zeros({L, d});
    float* ov = out.values_mut().data();
    const float* tv = table.values().data();
    for (int i = 0; i < L; ++i)
        std::memcpy(ov + static_cast<size_t>(i) * d, tv + static_cast<size_t>(ids[i]) * d,
                    sizeof(float) * static_cast<size_t>(d));
    if (want_record({&table})) {
        out.set_requires_grad(true);
        Tensor tc = table, oc = out;
        std::vector<int> ids_copy(ids.begin(), ids.end());
        current_tape()->record(out, [tc, oc, ids_copy, d]() {
            if (!tc.requires_grad()) return;
            float* dt = ensure_grad(tc.data_ptr());
            const float* g = oc.grad().data();
            for (size_t i = 0; i < ids_copy.size(); ++i)
                kernels::vec_acc(dt + static_cast<size_t>(ids_copy[i]) * d,
                                 g + i * static_cast<size_t>(d), static_cast<size_t>(d));
        });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw TensorError("concat_rows needs at least one part");
    int n = -1, total = 0;
    for (const Tensor& p : parts) {
        const int pc = p.ndim() == 2 ? p.dim(1) : p.dim(0);
        const int pr = p.ndim() == 2 ? p.dim(0) : 1;
        if (n < 0) n = pc;
        if (pc != n) throw TensorError("concat_rows column mismatch");
        total += pr;
    }
    Tensor out = Tensor::zeros({total, n});
    float* ov = out.values_mut().data();
    size_t off = 0;
    for (const Tensor& p : parts) {
        std::memcpy(ov + off, p.values().data(), sizeof(float) * p.size());
        off += p.size();
    }
    bool rec = false;
    for (const Tensor& p : parts)
        if (t_current_tape && p.requires_grad()) rec = true;
    if (rec) {
        out.set_requires_grad(true);
        std::vector<Tensor> pc(parts);
        Tensor oc = out;
        current_tape()->record(out, [pc, oc]() {
            const float* g = oc.grad().data();
            size_t o = 0;
            for (const Tensor& p : pc) {
                if (p.requires_grad())
                    kernels::vec_acc(ensure_grad(p.data_ptr()), g + o, p.size());
                o += p.size();
            }
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
    check_2d(x, "slice_rows");
    const int m = x.dim(0), n = x.dim(1);
    if (r0 < 0 || r1 > m || r0 >= r1) throw TensorError("slice_rows range invalid");
    Tensor out = Tensor::zeros({r1 - r0, n});
    std::memcpy(out.values_mut().data(), x.values().data() + static_cast<size_t>(r0) * n,
                sizeof(float) * out.size());
    if (want_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        current_tape()->record(out, [xc, oc, r0, n]() {
            if (!xc.requires_grad()) return;
            kernels::vec_acc(ensure_grad(xc.data_ptr()) + static_cast<size_t>(r0) * n,
                             oc.grad().data(), oc.size());
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    const size_t n = checked_numel(shape);
    if (n != x.size()) throw TensorError("reshape element count mismatch");
    Tensor out = Tensor::from(std::move(shape), {x.values().begin(), x.values().end()});
    if (want_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        current_tape()->record(out, [xc, oc]() {
            if (!xc.requires_grad()) return;
            kernels::vec_acc(ensure_grad(xc.data_ptr()), oc.grad().data(), xc.size());
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    float s = 0.0f;
    for (float v : x.values()) s += v;
    Tensor out = Tensor::scalar(s);
    if (want_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        current_tape()->record(out, [xc, oc]() {
            if (!xc.requires_grad()) return;
            const float g = oc.grad()[0];
            float* dx = ensure_grad(xc.data_ptr());
            for (size_t i = 0; i < xc.size(); ++i) dx[i] += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    float s = 0.0f;
    for (float v : x.values()) s += v;
    const float inv = 1.0f / static_cast<float>(x.size());
    Tensor out = Tensor::scalar(s * inv);
    if (want_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        current_tape()->record(out, [xc, oc, inv]() {
            if (!xc.requires_grad()) return;
            const float g = oc.grad()[0] * inv;
            float* dx = ensure_grad(xc.data_ptr());
            for (size_t i = 0; i < xc.size(); ++i) dx[i] += g;
        });
    }
    return out;
}

Tensor l2_normalize(const Tensor& x) {
    if (x.ndim() != 1) throw TensorError("l2_normalize expects a 1-D tensor");
    const int n = x.dim(0);
    float norm_sq = 0.0f;
    for (float v : x.values()) norm_sq += v * v;
    const float norm = std::sqrt(norm_sq);
    Tensor out = Tensor::zeros({n});
    if (norm < 1e-12f) {
        // degenerate input: fixed deterministic unit vector, no gradient
        out.values_mut()[0] = 1.0f;
        return out;
    }
    kernels::vec_scale(x.values().data(), 1.0f / norm, out.values_mut().data(), x.size());
    if (want_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        current_tape()->record(out, [xc, oc, norm, n]() {
            if (!xc.requires_grad()) return;
            const float* y = oc.values().data();
            const float* g = oc.grad().data();
            float dot = 0.0f;
            for (int i = 0; i < n; ++i) dot += y[i] * g[i];
            float* dx = ensure_grad(xc.data_ptr());
            const float inv = 1.0f / norm;
            for (int i = 0; i < n; ++i) dx[i] += inv * (g[i] - y[i] * dot);
        });
    }
    return out;
}

Tensor dropout_mask(const Tensor& x, const std::vector<float>& mask) {
    if (mask.size() != x.size()) throw TensorError("dropout mask size mismatch");
    Tensor out = Tensor::zeros(x.shape());
    kernels::vec_mul(x.values().data(), mask.data(), out.values_mut().data(), x.size());
    if (want_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        auto mk = std::make_shared<std::vector<float>>(mask);
        current_tape()->record(out, [xc, oc, mk]() {
            if (!xc.requires_grad()) return;
            float* dx = ensure_grad(xc.data_ptr());
            const float* g = oc.grad().data();
            const float* m = mk->data();
            for (size_t i = 0; i < xc.size(); ++i) dx[i] += g[i] * m[i];
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     std::span<const uint8_t> ignore_mask) {
    check_2d(logits, "cross_entropy");
    const int n = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != n)
        throw TensorError("cross_entropy targets must match the row count");
    if (!ignore_mask.empty() && static_cast<int>(ignore_mask.size()) != n)
        throw TensorError("cross_entropy ignore_mask must match the row count");
    int active = 0;
    for (int i = 0; i < n; ++i) {
        const bool ignored = !ignore_mask.empty() && ignore_mask[static_cast<size_t>(i)];
        if (ignored) continue;
        if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= v)
            throw TensorError("cross_entropy target id out of range");
        ++active;
    }
    if (active == 0) throw TensorError("cross_entropy: every position is ignored");
    const float* lv = logits.values().data();
    float loss = 0.0f;
    for (int i = 0; i < n; ++i) {
        const bool ignored = !ignore_mask.empty() && ignore_mask[static_cast<size_t>(i)];
        if (ignored) continue;
        const float* row = lv + static_cast<size_t>(i) * v;
        float mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        float se = 0.0f;
        for (int j = 0; j < v; ++j) se += std::exp(row[j] - mx);
        const float lse = mx + std::log(se);
        loss += lse - row[targets[static_cast<size_t>(i)]];
    }
    const float inv_active = 1.0f / static_cast<float>(active);
    Tensor out = Tensor::scalar(loss * inv_active);
    if (want_record({&logits})) {
        out.set_requires_grad(true);
        Tensor lc = logits, oc = out;
        std::vector<int> tgt(targets.begin(), targets.end());
        std::vector<uint8_t> ign(ignore_mask.begin(), ignore_mask.end());
        current_tape()->record(out, [lc, oc, tgt, ign, n, v, inv_active]() {
            if (!lc.requires_grad()) return;
            const float gout = oc.grad()[0] * inv_active;
            const float* lv2 = lc.values().data();
            float* dl = ensure_grad(lc.data_ptr());
            for (int i = 0; i < n; ++i) {
                const bool ignored = !ign.empty() && ign[static_cast<size_t>(i)];
                if (ignored) continue;
                const float* row = lv2 + static_cast<size_t>(i) * v;
                float* drow = dl + static_cast<size_t>(i) * v;
                float mx = row[0];
                for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                float se = 0.0f;
                for (int j = 0; j < v; ++j) se += std::exp(row[j] - mx);
                const float inv_se = 1.0f / se;
                for (int j = 0; j < v; ++j) {
                    float p = std::exp(row[j] - mx) * inv_se;
                    if (j == tgt[static_cast<size_t>(i)]) p -= 1.0f;
                    drow[j] += gout * p;
                }
            }
        });
    }
    return out;
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const Tensor& add_mask, int n_heads) {
    check_2d(q, "masked_attention");
    check_2d(k, "masked_attention");
    check_2d(v, "masked_attention");
    check_2d(add_mask, "masked_attention");
    const int lq = q.dim(0), d = q.dim(1), lk = k.dim(0);
    if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != lk)
        throw TensorError("masked_attention q/k/v dimension mismatch");
    if (add_mask.dim(0) != lq || add_mask.dim(1) != lk)
        throw TensorError("masked_attention mask shape mismatch");
    if (n_heads <= 0 || d % n_heads != 0)
        throw TensorError("masked_attention head count must divide the embedding dim");
    const int dh = d / n_heads;
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));

    Tensor out = Tensor::zeros({lq, d});
    // per-head attention weights saved for the backward pass
    auto probs = std::make_shared<std::vector<float>>(
        static_cast<size_t>(n_heads) * lq * lk);

    const float* qv = q.values().data();
    const float* kv = k.values().data();
    const float* vv = v.values().data();
    const float* mv = add_mask.values().data();
    float* ov = out.values_mut().data();

    std::vector<float> qh(static_cast<size_t>(lq) * dh), kh(static_cast<size_t>(lk) * dh),
        vh(static_cast<size_t>(lk) * dh), sc(static_cast<size_t>(lq) * lk),
        oh(static_cast<size_t>(lq) * dh);
    for (int h = 0; h < n_heads; ++h) {
        const int c0 = h * dh;
        for (int i = 0; i < lq; ++i)
            std::memcpy(qh.data() + static_cast<size_t>(i) * dh,
                        qv + static_cast<size_t>(i) * d + c0, sizeof(float) * dh);
        for (int i = 0; i < lk; ++i) {
            std::memcpy(kh.data() + static_cast<size_t>(i) * dh,
                        kv + static_cast<size_t>(i) * d + c0, sizeof(float) * dh);
            std::memcpy(vh.data() + static_cast<size_t>(i) * dh,
                        vv + static_cast<size_t>(i) * d + c0, sizeof(float) * dh);
        }
        kernels::matmul_nt(qh.data(), kh.data(), sc.data(), lq, dh, lk);
        for (int i = 0; i < lq; ++i)
            for (int j = 0; j < lk; ++j) {
                float& s = sc[static_cast<size_t>(i) * lk + j];
                s = s * inv_sqrt + mv[static_cast<size_t>(i) * lk + j];
            }
        float* ph = probs->data() + static_cast<size_t>(h) * lq * lk;
        kernels::softmax_rows(sc.data(), ph, lq, lk);
        kernels::matmul_nn(ph, vh.data(), oh.data(), lq, lk, dh);
        for (int i = 0; i < lq; ++i)
            std::memcpy(ov + static_cast<size_t>(i) * d + c0,
                        oh.data() + static_cast<size_t>(i) * dh, sizeof(float) * dh);
    }

    if (want_record({&q, &k, &v})) {
        out.set_requires_grad(true);
        Tensor qc = q, kc = k, vc = v, oc = out;
        current_tape()->record(out, [qc, kc, vc, oc, probs, lq, lk, d, dh, n_heads, inv_sqrt]() {
            const float* g = oc.grad().data();
            const float* qv2 = qc.values().data();
            const float* kv2 = kc.values().data();
            const float* vv2 = vc.values().data();
            float* dq = qc.requires_grad() ? ensure_grad(qc.data_ptr()) : nullptr;
            float* dk = kc.requires_grad() ? ensure_grad(kc.data_ptr()) : nullptr;
            float* dv = vc.requires_grad() ? ensure_grad(vc.data_ptr()) : nullptr;
            std::vector<float> qh(static_cast<size_t>(lq) * dh), kh(static_cast<size_t>(lk) * dh),
                vh(static_cast<size_t>(lk) * dh), goh(static_cast<size_t>(lq) * dh),
                da(static_cast<size_t>(lq) * lk), ds(static_cast<size_t>(lq) * lk),
                tmp_q(static_cast<size_t>(lq) * dh), tmp_k(static_cast<size_t>(lk) * dh),
                tmp_v(static_cast<size_t>(lk) * dh);
            for (int h = 0; h < n_heads; ++h) {
                const int c0 = h * dh;
                for (int i = 0; i < lq; ++i) {
                    std::memcpy(qh.data() + static_cast<size_t>(i) * dh,
                                qv2 + static_cast<size_t>(i) * d + c0, sizeof(float) * dh);
                    std::memcpy(goh.data() + static_cast<size_t>(i) * dh,
                                g + static_cast<size_t>(i) * d + c0, sizeof(float) * dh);
                }
                for (int i = 0; i < lk; ++i) {
                    std::memcpy(kh.data() + static_cast<size_t>(i) * dh,
                                kv2 + static_cast<size_t>(i) * d + c0, sizeof(float) * dh);
                    std::memcpy(vh.data() + static_cast<size_t>(i) * dh,
                                vv2 + static_cast<size_t>(i) * d + c0, sizeof(float) * dh);
                }
                const float* ph = probs->data() + static_cast<size_t>(h) * lq * lk;
                if (dv) {
                    kernels::matmul_tn(ph, goh.data(), tmp_v.data(), lq, lk, dh);
                    for (int i = 0; i < lk; ++i)
                        kernels::vec_acc(dv + static_cast<size_t>(i) * d + c0,
                                         tmp_v.data() + static_cast<size_t>(i) * dh, dh);
                }
                if (dq || dk) {
                    kernels::matmul_nt(goh.data(), vh.data(), da.data(), lq, dh, lk);
                    for (int i = 0; i < lq; ++i) {
                        const float* arow = ph + static_cast<size_t>(i) * lk;
                        const float* darow = da.data() + static_cast<size_t>(i) * lk;
                        float dot = 0.0f;
                        for (int j = 0; j < lk; ++j) dot += arow[j] * darow[j];
                        float* dsrow = ds.data() + static_cast<size_t>(i) * lk;
                        for (int j = 0; j < lk; ++j)
                            dsrow[j] = arow[j] * (darow[j] - dot) * inv_sqrt;
                    }
                    if (dq) {
                        kernels::matmul_nn(ds.data(), kh.data(), tmp_q.data(), lq, lk, dh);
                        for (int i = 0; i < lq; ++i)
                            kernels::vec_acc(dq + static_cast<size_t>(i) * d + c0,
                                             tmp_q.data() + static_cast<size_t>(i) * dh, dh);
                    }
                    if (dk) {
                        kernels::matmul_tn(ds.data(), qh.data(), tmp_k.data(), lq, lk, dh);
                        for (int i = 0; i < lk; ++i)
                            kernels::vec_acc(dk + static_cast<size_t>(i) * d + c0,
                                             tmp_k.data() + static_cast<size_t>(i) * dh, dh);
                    }
                }
            }
        });
    }
    return out;
}

uint64_t tensor_hash(const Tensor& t, uint64_t h) {
    if (!t.defined()) return h;
    h = fnv1a64(t.shape().data(), t.shape().size() * sizeof(int), h);
    h = fnv1a64(t.values().data(), t.size() * sizeof(float), h);
    return h;
}

}  // namespace prefixmt
