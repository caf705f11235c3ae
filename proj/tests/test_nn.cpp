#include <catch2/catch_amalgamated.hpp>

#include "beamkit/nn.hpp"

using namespace beamkit;

namespace {

// Independent scalar recomputation of the four gate equations, written
// directly from the cell definition rather than via LstmCell::step.
void scalar_lstm_oracle(const LstmCell& cell, const Tensor& x, const Tensor& h, const Tensor& c,
                        Tensor& h_out, Tensor& c_out) {
    std::size_t H = cell.hidden_size, I = cell.input_size;
    auto gate_pre = [&](std::size_t gate, std::size_t j) {
        double z = cell.b[gate * H + j];
        for (std::size_t k = 0; k < I; ++k) z += cell.wx.at2(gate * H + j, k) * x[k];
        for (std::size_t k = 0; k < H; ++k) z += cell.wh.at2(gate * H + j, k) * h[k];
        return z;
    };
    h_out = Tensor({H});
    c_out = Tensor({H});
    for (std::size_t j = 0; j < H; ++j) {
        double in_gate = 1.0 / (1.0 + std::exp(-gate_pre(0, j)));
        double forget_gate = 1.0 / (1.0 + std::exp(-gate_pre(1, j)));
        double out_gate = 1.0 / (1.0 + std::exp(-gate_pre(2, j)));
        double candidate = std::tanh(gate_pre(3, j));
        c_out[j] = forget_gate * c[j] + in_gate * candidate;
        h_out[j] = out_gate * std::tanh(c_out[j]);
    }
}

double squared_error(const Tensor& y, const Tensor& target) {
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) loss += (y[i] - target[i]) * (y[i] - target[i]);
    return loss;
}

Tensor squared_error_grad(const Tensor& y, const Tensor& target) {
    Tensor dy(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) dy[i] = 2.0 * (y[i] - target[i]);
    return dy;
}

}  // namespace

TEST_CASE("dense_forward fixed points") {
    std::mt19937_64 rng(1);
    DenseLayer zero(3, 2, Activation::tanh, rng);
    zero.w.fill(0.0);
    Tensor x({3});
    x[0] = 0.3;
    x[1] = -1.0;
    x[2] = 2.0;
    Tensor y = zero.forward(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);

    DenseLayer identity(2, 2, Activation::linear, rng);
    identity.w.fill(0.0);
    identity.w.at2(0, 0) = 1.0;
    identity.w.at2(1, 1) = 1.0;
    Tensor x2({2});
    x2[0] = -1.0;
    x2[1] = 2.0;
    Tensor y2 = identity.forward(x2);
    CHECK(y2[0] == -1.0);
    CHECK(y2[1] == 2.0);

    DenseLayer relu_id(2, 2, Activation::relu, rng);
    relu_id.w = identity.w;
    Tensor y3 = relu_id.forward(x2);
    CHECK(y3[0] == 0.0);
    CHECK(y3[1] == 2.0);

    Tensor wrong({3});
    CHECK_THROWS_AS(identity.forward(wrong), InputError);
}

TEST_CASE("lstm_step fixed points") {
    std::mt19937_64 rng(2);
    LstmCell cell(2, 3, rng);

    SECTION("all parameters zero gives zero outputs") {
        cell.wx.fill(0.0);
        cell.wh.fill(0.0);
        cell.b.fill(0.0);
        Tensor x({2}), h({3}), c({3}), h2, c2;
        cell.step(x, h, c, h2, c2);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(h2[j] == 0.0);
            CHECK(c2[j] == 0.0);
        }
    }

    SECTION("saturated forget gate carries the cell state") {
        cell.wx.fill(0.0);
        cell.wh.fill(0.0);
        cell.b.fill(0.0);
        for (std::size_t j = 0; j < 3; ++j) cell.b[3 + j] = 30.0;  // forget rows
        Tensor x({2}), h({3}), c({3}, 50.0), h2, c2;
        cell.step(x, h, c, h2, c2);
        for (std::size_t j = 0; j < 3; ++j) CHECK(c2[j] == Catch::Approx(50.0).epsilon(1e-9));
    }

    SECTION("shape mismatch is rejected") {
        Tensor x({5}), h({3}), c({3}), h2, c2;
        CHECK_THROWS_AS(cell.step(x, h, c, h2, c2), InputError);
    }
}

TEST_CASE("lstm_step matches the scalar gate oracle") {
    for (std::uint64_t seed : {3u, 4u, 5u}) {
        std::mt19937_64 rng(seed);
        LstmCell cell(3, 4, rng);
        Tensor x = Tensor::uniform({3}, -1.0, 1.0, rng);
        Tensor h = Tensor::uniform({4}, -1.0, 1.0, rng);
        Tensor c = Tensor::uniform({4}, -1.0, 1.0, rng);
        Tensor h2, c2, oh, oc;
        cell.step(x, h, c, h2, c2);
        scalar_lstm_oracle(cell, x, h, c, oh, oc);
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(std::abs(h2[j] - oh[j]) < 1e-10);
            CHECK(std::abs(c2[j] - oc[j]) < 1e-10);
        }
    }
}

TEST_CASE("encode_sequence basics") {
    std::mt19937_64 rng(6);
    LstmCell cell(2, 3, rng);

    SECTION("zero weights encode a zero vector") {
        LstmCell zero = cell;
        zero.wx.fill(0.0);
        zero.wh.fill(0.0);
        zero.b.fill(0.0);
        Tensor h = encode_sequence(zero, {Tensor({2})});
        for (std::size_t j = 0; j < 3; ++j) CHECK(h[j] == 0.0);
    }

    SECTION("deterministic") {
        std::vector<Tensor> seq = {Tensor::uniform({2}, -1, 1, rng), Tensor::uniform({2}, -1, 1, rng)};
        Tensor a = encode_sequence(cell, seq);
        Tensor b = encode_sequence(cell, seq);
        for (std::size_t j = 0; j < 3; ++j) CHECK(a[j] == b[j]);
    }

    SECTION("empty sequence is rejected") {
        CHECK_THROWS_AS(encode_sequence(cell, {}), InputError);
    }
}

TEST_CASE("prepended zero padding disturbs the encoding less than appending") {
    std::mt19937_64 rng(7);
    LstmCell cell(3, 8, rng);
    // Sharpen the weights so the cell behaves like a trained one rather than
    // a near-identity map.
    for (auto& v : cell.wx.values()) v *= 8.0;
    for (auto& v : cell.wh.values()) v *= 8.0;
    std::vector<Tensor> seq;
    for (int t = 0; t < 5; ++t) seq.push_back(Tensor::uniform({3}, -1.0, 1.0, rng));

    Tensor plain = encode_sequence(cell, seq);
    Tensor prepended = encode_sequence(cell, seq, nullptr, seq.size() + 4);
    std::vector<Tensor> appended_seq = seq;
    for (int t = 0; t < 4; ++t) appended_seq.push_back(Tensor({3}));
    Tensor appended = encode_sequence(cell, appended_seq);

    auto l2 = [&](const Tensor& a, const Tensor& b) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
        return std::sqrt(s);
    };
    CHECK(l2(prepended, plain) < l2(appended, plain));
}

TEST_CASE("one_hot") {
    Tensor a = one_hot(0, 3);
    CHECK(a[0] == 1.0);
    CHECK(a[1] == 0.0);
    CHECK(a[2] == 0.0);
    Tensor b = one_hot(2, 3);
    CHECK(b[2] == 1.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) sum += b[i];
    CHECK(sum == 1.0);
    CHECK_THROWS_AS(one_hot(3, 3), InputError);
    CHECK_THROWS_AS(one_hot(-1, 3), InputError);
}

TEST_CASE("grad_check: dense layer with squared loss") {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        std::mt19937_64 rng(seed);
        DenseLayer layer(4, 3, seed % 2 ? Activation::tanh : Activation::sigmoid, rng);
        Tensor x = Tensor::uniform({4}, -1.0, 1.0, rng);
        Tensor target = Tensor::uniform({3}, -1.0, 1.0, rng);

        DenseLayer::Cache cache;
        Tensor y = layer.forward(x, &cache);
        layer.backward(cache, squared_error_grad(y, target));
        double err = grad_check(layer.params("dense"),
                                [&]() { return squared_error(layer.forward(x), target); });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("grad_check: single LSTM step with squared loss") {
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        std::mt19937_64 rng(seed);
        LstmCell cell(3, 4, rng);
        Tensor x = Tensor::uniform({3}, -1.0, 1.0, rng);
        Tensor h = Tensor::uniform({4}, -0.5, 0.5, rng);
        Tensor c = Tensor::uniform({4}, -0.5, 0.5, rng);
        Tensor target = Tensor::uniform({4}, -1.0, 1.0, rng);

        LstmCell::StepCache cache;
        Tensor h2, c2;
        cell.step(x, h, c, h2, c2, &cache);
        Tensor dx, dh_prev, dc_prev;
        cell.backward_step(cache, squared_error_grad(h2, target), Tensor({4}), dx, dh_prev, dc_prev);
        double err = grad_check(cell.params("lstm"), [&]() {
            Tensor hh, cc;
            cell.step(x, h, c, hh, cc);
            return squared_error(hh, target);
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("grad_check: sequence encoder including embeddings") {
    for (std::uint64_t seed : {31u, 32u, 33u}) {
        std::mt19937_64 rng(seed);
        std::size_t dim = 3, hidden = 4;
        Embedding embed(6, dim, rng);
        LstmCell cell(dim, hidden, rng);
        std::vector<int> ids = {1, 4, 2, 4};

        auto forward = [&](SequenceCache* cache) {
            std::vector<Tensor> seq;
            for (int id : ids) seq.push_back(embed.row(id));
            return encode_sequence(cell, seq, cache);
        };
        // Target near the output keeps the loss value small, so the
        // finite-difference noise stays well below the 1e-8 guard.
        Tensor base = forward(nullptr);
        Tensor target(base.shape());
        for (std::size_t i = 0; i < base.size(); ++i) target[i] = base[i] - 0.05 * uniform_in(rng, -1, 1);

        SequenceCache cache;
        Tensor h = forward(&cache);
        std::vector<Tensor> dxs;
        encode_sequence_backward(cell, cache, squared_error_grad(h, target), Tensor({hidden}), &dxs);
        for (std::size_t t = 0; t < ids.size(); ++t) embed.accumulate(ids[t], dxs[t]);

        std::vector<NamedParam> params = cell.params("lstm");
        for (auto& p : embed.params("embed")) params.push_back(p);
        double err = grad_check(params, [&]() { return squared_error(forward(nullptr), target); });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("grad_check returns zero for a constant loss") {
    std::mt19937_64 rng(40);
    DenseLayer layer(2, 2, Activation::linear, rng);
    zero_grads(layer.params("dense"));
    double err = grad_check(layer.params("dense"), []() { return 3.5; });
    CHECK(err == 0.0);
}

TEST_CASE("optimizer with vanishing learning rate leaves parameters unchanged") {
    std::mt19937_64 rng(41);
    DenseLayer layer(3, 3, Activation::tanh, rng);
    Tensor before = layer.w;
    for (auto& g : layer.gw.values()) g = 1.0;

    SECTION("sgd") {
        Optimizer opt = Optimizer::sgd(0.0);
        opt.step(layer.params("dense"));
        for (std::size_t i = 0; i < before.size(); ++i)
            CHECK(std::abs(layer.w[i] - before[i]) <= 1e-12);
    }
    SECTION("adam") {
        Optimizer opt = Optimizer::adam(0.0);
        opt.step(layer.params("dense"));
        for (std::size_t i = 0; i < before.size(); ++i)
            CHECK(std::abs(layer.w[i] - before[i]) <= 1e-12);
    }
}

TEST_CASE("optimizer steps move against the gradient and clear it") {
    std::mt19937_64 rng(42);
    DenseLayer layer(2, 2, Activation::linear, rng);
    layer.w.fill(1.0);
    layer.gw.fill(2.0);

    SECTION("sgd applies lr * grad exactly") {
        Optimizer opt = Optimizer::sgd(0.1);
        opt.step(layer.params("dense"));
        for (std::size_t i = 0; i < layer.w.size(); ++i) CHECK(layer.w[i] == Catch::Approx(0.8));
        for (std::size_t i = 0; i < layer.gw.size(); ++i) CHECK(layer.gw[i] == 0.0);
    }
    SECTION("adam first step is a signed lr-sized move") {
        Optimizer opt = Optimizer::adam(0.01);
        opt.step(layer.params("dense"));
        // First-step bias correction makes the update lr * g/|g| up to epsilon.
        for (std::size_t i = 0; i < layer.w.size(); ++i)
            CHECK(layer.w[i] == Catch::Approx(1.0 - 0.01).epsilon(1e-5));
    }
}
