#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "prefixmt/tensor.hpp"
#include "testutil.hpp"

using namespace prefixmt;

namespace {

Tensor rand_tensor(std::vector<int> shape, uint64_t seed, bool rg = true) {
    Rng rng(seed);
    return Tensor::uniform(std::move(shape), -1.0f, 1.0f, rng, rg);
}

}  // namespace

TEST_CASE("matmul: identity and hand-computed product") {
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor b = rand_tensor({3, 4}, 42, false);
    Tensor out = matmul(eye, b);
    CHECK(testutil::bits_equal(out.values(), b.values()));

    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor ones = Tensor::from({2, 1}, {1, 1});
    Tensor prod = matmul(a, ones);
    CHECK(prod.at(0, 0) == doctest::Approx(3.0f));
    CHECK(prod.at(1, 0) == doctest::Approx(7.0f));
}

TEST_CASE("matmul: shape mismatch raises") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(matmul(a, b), TensorError);
}

TEST_CASE("matmul: grad of sum(A*B) wrt A equals ones * B^T") {
    Tensor a = rand_tensor({3, 4}, 7);
    Tensor b = rand_tensor({4, 5}, 8, false);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = sum(matmul(a, b));
        tape.backward(loss);
    }
    // closed form: dA[i][k] = sum_j B[k][j]
    for (int i = 0; i < 3; ++i)
        for (int kk = 0; kk < 4; ++kk) {
            float expect = 0.0f;
            for (int j = 0; j < 5; ++j) expect += b.at(kk, j);
            CHECK(a.grad()[i * 4 + kk] == doctest::Approx(expect).epsilon(1e-5));
        }
    // and against the finite-difference oracle
    a.clear_grad();
    float worst = testutil::check_grads([&]() { return sum(matmul(a, b)); }, {a});
    CHECK(worst < 1e-3f);
}

TEST_CASE("softmax: uniform logits, dominance, gradient") {
    Tensor x = Tensor::from({4}, {2.5f, 2.5f, 2.5f, 2.5f});
    Tensor y = softmax(x, 0);
    for (int i = 0; i < 4; ++i) CHECK(y.value(i) == doctest::Approx(0.25f));

    Tensor big = Tensor::from({3}, {100.0f, 0.0f, -5.0f});
    Tensor oh = softmax(big, 0);
    CHECK(oh.value(0) == doctest::Approx(1.0f).epsilon(1e-6));
    CHECK(oh.value(1) < 1e-6f);
    CHECK(oh.value(2) < 1e-6f);

    Tensor inf = Tensor::from({2}, {1.0f, std::numeric_limits<float>::infinity()});
    CHECK_THROWS_AS(softmax(inf, 0), TensorError);

    Tensor xs = rand_tensor({5, 6}, 11);
    Tensor w = rand_tensor({5, 6}, 12, false);
    float worst = testutil::check_grads([&]() { return sum(mul(softmax(xs, 1), w)); }, {xs});
    CHECK(worst < 1e-3f);

    Tensor xc = rand_tensor({5, 6}, 13);
    worst = testutil::check_grads([&]() { return sum(mul(softmax(xc, 0), w)); }, {xc});
    CHECK(worst < 1e-3f);
}

TEST_CASE("layer_norm: constant row, hand value, gradient") {
    Tensor gain = Tensor::full({3}, 1.0f);
    Tensor bias = Tensor::zeros({3});
    Tensor c = Tensor::from({1, 3}, {5.0f, 5.0f, 5.0f});
    Tensor yc = layer_norm(c, gain, bias, 1e-5f);
    for (int j = 0; j < 3; ++j) CHECK(yc.value(j) == doctest::Approx(0.0f).epsilon(1e-4));

    Tensor r = Tensor::from({1, 3}, {1.0f, 2.0f, 3.0f});
    Tensor yr = layer_norm(r, gain, bias, 0.0f);
    CHECK(yr.value(0) == doctest::Approx(-1.2247f).epsilon(1e-4));
    CHECK(yr.value(1) == doctest::Approx(0.0f).epsilon(1e-4));
    CHECK(yr.value(2) == doctest::Approx(1.2247f).epsilon(1e-4));

    Tensor x = rand_tensor({4, 6}, 21);
    Tensor g2 = rand_tensor({6}, 22);
    Tensor b2 = rand_tensor({6}, 23);
    Tensor w = rand_tensor({4, 6}, 24, false);
    float worst = testutil::check_grads(
        [&]() { return sum(mul(layer_norm(x, g2, b2, 1e-5f), w)); }, {x, g2, b2});
    CHECK(worst < 1e-3f);
}

TEST_CASE("cross_entropy: uniform logits give ln V") {
    Tensor logits = Tensor::zeros({3, 8});
    std::vector<int> targets{1, 5, 7};
    Tensor loss = cross_entropy(logits, targets, {});
    CHECK(loss.item() == doctest::Approx(std::log(8.0f)).epsilon(1e-5));
}

TEST_CASE("cross_entropy: ignored positions contribute nothing, bit for bit") {
    std::vector<float> base{0.3f, -1.2f, 0.7f, 2.0f, 0.0f, -0.5f};
    Tensor a = Tensor::from({3, 2}, {base[0], base[1], base[2], base[3], base[4], base[5]});
    Tensor b = Tensor::from({3, 2}, {base[0], base[1], 9.0f, -9.0f, base[4], base[5]});
    std::vector<int> targets{0, 1, 1};
    std::vector<uint8_t> ign{0, 1, 0};
    const float la = cross_entropy(a, targets, ign).item();
    const float lb = cross_entropy(b, targets, ign).item();
    CHECK(std::memcmp(&la, &lb, sizeof(float)) == 0);

    // gradient at ignored rows is exactly zero
    Tensor c = Tensor::from({3, 2}, {base[0], base[1], base[2], base[3], base[4], base[5]}, true);
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(cross_entropy(c, targets, ign));
    }
    CHECK(c.grad()[2] == 0.0f);
    CHECK(c.grad()[3] == 0.0f);
    CHECK(c.grad()[0] != 0.0f);
}

TEST_CASE("cross_entropy: two-position hand example equals softplus(-2)") {
    Tensor logits = Tensor::from({2, 2}, {2.0f, 0.0f, 0.0f, 2.0f});
    std::vector<int> targets{0, 1};
    Tensor loss = cross_entropy(logits, targets, {});
    const float softplus = std::log(1.0f + std::exp(-2.0f));
    CHECK(loss.item() == doctest::Approx(softplus).epsilon(1e-5));
}

TEST_CASE("cross_entropy: all ignored raises") {
    Tensor logits = Tensor::zeros({2, 4});
    std::vector<int> targets{0, 1};
    std::vector<uint8_t> ign{1, 1};
    CHECK_THROWS_AS(cross_entropy(logits, targets, ign), TensorError);
}

TEST_CASE("backward: sum gives ones, frozen tensors receive no grad") {
    Tensor x = rand_tensor({2, 3}, 31);
    Tensor frozen = rand_tensor({3, 2}, 32, false);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = sum(matmul(x, frozen));
        tape.backward(loss);
    }
    CHECK(x.has_grad());
    CHECK_FALSE(frozen.has_grad());

    Tensor y = rand_tensor({5}, 33);
    Tape tape2;
    {
        TapeScope scope(tape2);
        tape2.backward(sum(y));
    }
    for (float g : y.grad()) CHECK(g == 1.0f);
}

TEST_CASE("backward: error paths") {
    Tape tape;
    Tensor x = rand_tensor({2, 2}, 41);
    {
        TapeScope scope(tape);
        Tensor loss = sum(x);
        tape.backward(loss);
        CHECK_THROWS_AS(tape.backward(loss), TensorError);  // no reset
    }
    tape.reset();
    {
        TapeScope scope(tape);
        Tensor not_scalar = add(x, x);
        CHECK_THROWS_AS(tape.backward(not_scalar), TensorError);
        Tensor detached = Tensor::scalar(1.0f);
        CHECK_THROWS_AS(tape.backward(detached), TensorError);
    }
}

TEST_CASE("composed matmul+softmax+cross_entropy graph matches finite differences") {
    Tensor w1 = rand_tensor({6, 8}, 51);
    Tensor x = rand_tensor({4, 6}, 52, false);
    std::vector<int> targets{1, 0, 7, 3};
    float worst = testutil::check_grads(
        [&]() {
            Tensor h = matmul(x, w1);
            Tensor p = softmax(h, 1);
            Tensor sh = scale(p, 4.0f);
            return cross_entropy(sh, targets, {});
        },
        {w1});
    CHECK(worst < 1e-3f);
}

TEST_CASE("elementwise, bias, activation, reshape, slice, concat, normalize grads") {
    Tensor a = rand_tensor({3, 4}, 61);
    Tensor b = rand_tensor({3, 4}, 62);
    Tensor bias = rand_tensor({4}, 63);
    Tensor slope = Tensor::from({1}, {0.25f}, true);
    Tensor w = rand_tensor({6, 4}, 64, false);
    float worst = testutil::check_grads(
        [&]() {
            Tensor s = add(mul(a, b), add_bias(a, bias));
            Tensor r = concat_rows({relu(s), prelu(s, slope)});
            Tensor t = mul(r, w);
            Tensor sl = slice_rows(t, 1, 5);
            return mean(reshape(sl, {16}));
        },
        {a, b, bias, slope});
    CHECK(worst < 1e-3f);

    Tensor v = rand_tensor({5}, 65);
    Tensor wv = rand_tensor({5}, 66, false);
    worst = testutil::check_grads([&]() { return sum(mul(l2_normalize(v), wv)); }, {v});
    CHECK(worst < 1e-3f);
}

TEST_CASE("embedding: lookup and scatter gradient") {
    Tensor table = rand_tensor({7, 3}, 71);
    std::vector<int> ids{2, 5, 2};
    Tensor w = rand_tensor({3, 3}, 72, false);
    float worst = testutil::check_grads(
        [&]() { return sum(mul(embedding(ids, table), w)); }, {table});
    CHECK(worst < 1e-3f);

    std::vector<int> bad{9};
    CHECK_THROWS_AS(embedding(bad, table), TensorError);
}

TEST_CASE("masked_attention matches finite differences") {
    const int lq = 4, lk = 5, d = 8;
    Tensor q = rand_tensor({lq, d}, 81);
    Tensor k = rand_tensor({lk, d}, 82);
    Tensor v = rand_tensor({lk, d}, 83);
    Tensor w = rand_tensor({lq, d}, 84, false);
    std::vector<float> maskv(lq * lk, 0.0f);
    maskv[0 * lk + 3] = std::numeric_limits<float>::lowest();
    maskv[2 * lk + 4] = std::numeric_limits<float>::lowest();
    Tensor mask = Tensor::from({lq, lk}, maskv);
    float worst = testutil::check_grads(
        [&]() { return sum(mul(masked_attention(q, k, v, mask, 2), w)); }, {q, k, v});
    CHECK(worst < 1e-3f);
}

TEST_CASE("masked entries receive exactly zero attention") {
    const int lq = 2, lk = 3, d = 4;
    Tensor q = rand_tensor({lq, d}, 91, false);
    Tensor k = rand_tensor({lk, d}, 92, false);
    // v row 2 is huge; masking it out of row 0 must remove it exactly
    Tensor v = Tensor::from({lk, d}, {1, 2, 3, 4, 5, 6, 7, 8, 1e6f, 1e6f, 1e6f, 1e6f});
    std::vector<float> maskv(lq * lk, 0.0f);
    maskv[0 * lk + 2] = std::numeric_limits<float>::lowest();
    Tensor mask = Tensor::from({lq, lk}, maskv);
    Tensor out = masked_attention(q, k, v, mask, 1);
    for (int j = 0; j < d; ++j) CHECK(std::fabs(out.at(0, j)) < 10.0f);
}

TEST_CASE("tape replay is deterministic: same seeds give identical bits") {
    auto run = [](uint64_t seed) {
        Tensor a = rand_tensor({5, 6}, seed);
        Tensor b = rand_tensor({6, 4}, seed + 1);
        Tape tape;
        std::vector<float> vals, grads;
        {
            TapeScope scope(tape);
            Tensor h = softmax(matmul(a, b), 1);
            Tensor loss = mean(h);
            tape.backward(loss);
            vals.assign(h.values().begin(), h.values().end());
            grads.assign(a.grad().begin(), a.grad().end());
        }
        return std::pair{vals, grads};
    };
    auto r1 = run(123);
    auto r2 = run(123);
    CHECK(testutil::bits_equal(r1.first, r2.first));
    CHECK(testutil::bits_equal(r1.second, r2.second));
}

TEST_CASE("no recording happens without an active tape") {
    Tensor a = rand_tensor({2, 2}, 101);
    Tensor b = rand_tensor({2, 2}, 102);
    Tensor out = matmul(a, b);
    CHECK_FALSE(out.requires_grad());
}

TEST_CASE("dropout_mask scales by the mask and backs it out") {
    Tensor x = rand_tensor({2, 3}, 111);
    std::vector<float> mask{0.0f, 2.0f, 0.0f, 2.0f, 2.0f, 0.0f};
    float worst = testutil::check_grads([&]() { return sum(dropout_mask(x, mask)); }, {x});
    CHECK(worst < 1e-3f);
    Tensor y = dropout_mask(x, mask);
    CHECK(y.value(0) == 0.0f);
    CHECK(y.value(1) == doctest::Approx(2.0f * x.value(1)));
}
