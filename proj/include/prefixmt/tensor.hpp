#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "prefixmt/rng.hpp"

namespace prefixmt {

class TensorError : public std::runtime_error {
public:
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TensorData {
    std::vector<int> shape;
    std::vector<float> values;
    std::vector<float> grad;  // empty = no gradient populated
    bool requires_grad = false;
};

// Value-semantic handle over shared storage. 1-D and 2-D shapes cover the
// whole project; reshape handles the rest.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value);
    static Tensor uniform(std::vector<int> shape, float lo, float hi, Rng& rng, bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    int ndim() const { return static_cast<int>(d_->shape.size()); }
    int dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
    size_t size() const { return d_->values.size(); }
    // 2-D accessors; a 1-D tensor reads as a single row
    int rows() const { return ndim() == 2 ? dim(0) : 1; }
    int cols() const { return ndim() == 2 ? dim(1) : dim(0); }

    std::span<const float> values() const { return d_->values; }
    std::span<float> values_mut() { return d_->values; }
    float value(size_t i) const { return d_->values[i]; }
    float at(int r, int c) const { return d_->values[static_cast<size_t>(r) * cols() + c]; }
    float item() const;

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool v) { d_->requires_grad = v; }
    bool has_grad() const { return !d_->grad.empty(); }
    std::span<const float> grad() const { return d_->grad; }
    std::span<float> grad_mut();  // allocates zeros on first use
    void clear_grad() { d_->grad.clear(); }

    TensorData* data_ptr() const { return d_.get(); }

private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;
    friend class Tape;
};

// Recording tape. Ops append entries in execution order; backward walks the
// entries in exact reverse recording order, which is a valid topological
// order by construction and keeps gradient accumulation deterministic.
class Tape {
public:
    struct Entry {
        std::shared_ptr<TensorData> out;
        std::function<void()> backward;
    };

    void record(const Tensor& out, std::function<void()> backward_fn);
    bool owns(const Tensor& t) const { return outputs_.count(t.data_ptr()) > 0; }

    // Seeds d(loss)/d(loss)=1 and propagates. Errors: non-scalar loss, loss
    // not recorded on this tape, or a second call without reset().
    void backward(const Tensor& loss);

    void reset();
    size_t size() const { return entries_.size(); }
    bool consumed() const { return consumed_; }

private:
    std::vector<Entry> entries_;
    std::unordered_set<const TensorData*> outputs_;
    bool consumed_ = false;
};

// Thread-local active tape. Ops record when a tape is active and at least
// one input requires grad; with no active tape evaluation is pure and safe
// to run concurrently on shared parameters.
Tape* current_tape();

class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

void backward(const Tensor& loss);  // current_tape()->backward(loss)

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor transpose2d(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor add_bias(const Tensor& x, const Tensor& b);  // b broadcast over rows
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps);
Tensor relu(const Tensor& x);
Tensor prelu(const Tensor& x, const Tensor& slope);  // slope: single-element tensor
Tensor embedding(std::span<const int> ids, const Tensor& table);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor l2_normalize(const Tensor& x);  // 1-D; guarded against zero norm
Tensor dropout_mask(const Tensor& x, const std::vector<float>& mask);  // elementwise constant mask

// Mean NLL over non-ignored positions. Ignored rows contribute exactly zero
// to value and gradient. Errors: empty effective loss, bad target ids.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     std::span<const uint8_t> ignore_mask);

// Multi-head scaled dot-product attention over one sequence.
// q [Lq x d], k/v [Lk x d], add_mask [Lq x Lk] additive (0 or very negative).
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const Tensor& add_mask, int n_heads);

uint64_t tensor_hash(const Tensor& t, uint64_t h = 0xcbf29ce484222325ull);

}  // namespace prefixmt
