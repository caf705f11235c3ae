#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "beamkit/tensor.hpp"

namespace beamkit {

enum class Activation { linear, tanh, relu, sigmoid };

inline double apply_activation(Activation act, double z) {
    switch (act) {
        case Activation::linear: return z;
        case Activation::tanh: return std::tanh(z);
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
    }
    return z;
}

/// Derivative dy/dz expressed via pre-activation z and output y.
inline double activation_grad(Activation act, double z, double y) {
    switch (act) {
        case Activation::linear: return 1.0;
        case Activation::tanh: return 1.0 - y * y;
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::sigmoid: return y * (1.0 - y);
    }
    return 1.0;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// A trainable tensor paired with its gradient accumulator.
struct NamedParam {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
};

// Parameter init range used across all models.
inline constexpr double kInitRange = 0.08;

struct DenseLayer {
    Tensor w;  // [in x out]
    Tensor b;  // [out]
    Activation activation = Activation::linear;
    bool use_bias = true;  // bias-free layers keep odd heads antisymmetric
    Tensor gw, gb;

    DenseLayer() = default;

    DenseLayer(std::size_t in, std::size_t out, Activation act, std::mt19937_64& rng, bool with_bias = true)
        : w(Tensor::uniform({in, out}, -kInitRange, kInitRange, rng)),
          b(Tensor::zeros({out})),
          activation(act),
          use_bias(with_bias),
          gw(Tensor::zeros({in, out})),
          gb(Tensor::zeros({out})) {}

    std::size_t in_size() const { return w.rows(); }
    std::size_t out_size() const { return w.cols(); }

    struct Cache {
        Tensor x;    // input
        Tensor pre;  // pre-activation
        Tensor y;    // output
    };

    Tensor forward(const Tensor& x, Cache* cache = nullptr) const {
        if (x.size() != in_size())
            throw InputError("dense_forward: input size " + std::to_string(x.size()) +
                             " does not match layer input " + std::to_string(in_size()));
        std::size_t out = out_size();
        Tensor pre({out});
        for (std::size_t j = 0; j < out; ++j) {
            double acc = use_bias ? b[j] : 0.0;
            for (std::size_t i = 0; i < in_size(); ++i) acc += x[i] * w.at2(i, j);
            pre[j] = acc;
        }
        Tensor y({out});
        for (std::size_t j = 0; j < out; ++j) y[j] = apply_activation(activation, pre[j]);
        if (cache) {
            cache->x = x;
            cache->pre = pre;
            cache->y = y;
        }
        return y;
    }

    /// Accumulates gw/gb and returns dL/dx.
    Tensor backward(const Cache& cache, const Tensor& dy) {
        std::size_t in = in_size(), out = out_size();
        Tensor dz({out});
        for (std::size_t j = 0; j < out; ++j)
            dz[j] = dy[j] * activation_grad(activation, cache.pre[j], cache.y[j]);
        Tensor dx({in});
        for (std::size_t i = 0; i < in; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < out; ++j) {
                gw.at2(i, j) += cache.x[i] * dz[j];
                acc += w.at2(i, j) * dz[j];
            }
            dx[i] = acc;
        }
        if (use_bias)
            for (std::size_t j = 0; j < out; ++j) gb[j] += dz[j];
        return dx;
    }

    std::vector<NamedParam> params(const std::string& prefix) {
        if (!use_bias) return {{prefix + ".w", &w, &gw}};
        return {{prefix + ".w", &w, &gw}, {prefix + ".b", &b, &gb}};
    }
};

inline Tensor dense_forward(const DenseLayer& layer, const Tensor& x, DenseLayer::Cache* cache = nullptr) {
    return layer.forward(x, cache);
}

/// Single-layer LSTM. Packed gate rows in the order: input, forget, output,
/// candidate. Forget-gate bias starts at 1.0.
struct LstmCell {
    std::size_t input_size = 0;
    std::size_t hidden_size = 0;
    Tensor wx;  // [4H x In]
    Tensor wh;  // [4H x H]
    Tensor b;   // [4H]
    Tensor gwx, gwh, gb;

    LstmCell() = default;

    LstmCell(std::size_t in, std::size_t hidden, std::mt19937_64& rng)
        : input_size(in),
          hidden_size(hidden),
          wx(Tensor::uniform({4 * hidden, in}, -kInitRange, kInitRange, rng)),
          wh(Tensor::uniform({4 * hidden, hidden}, -kInitRange, kInitRange, rng)),
          b(Tensor::zeros({4 * hidden})),
          gwx(Tensor::zeros({4 * hidden, in})),
          gwh(Tensor::zeros({4 * hidden, hidden})),
          gb(Tensor::zeros({4 * hidden})) {
        for (std::size_t j = 0; j < hidden; ++j) b[hidden + j] = 1.0;  // forget gate
    }

    struct StepCache {
        Tensor x, h_prev, c_prev;
        Tensor i, f, o, g;     // post-activation gates
        Tensor c, tanh_c;
    };

    void step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
              Tensor& h_out, Tensor& c_out, StepCache* cache = nullptr) const {
        std::size_t H = hidden_size;
        if (x.size() != input_size || h_prev.size() != H || c_prev.size() != H)
            throw InputError("lstm_step: shape mismatch");
        Tensor gi({H}), gf({H}), go({H}), gg({H});
        for (std::size_t j = 0; j < H; ++j) {
            double zi = b[j], zf = b[H + j], zo = b[2 * H + j], zg = b[3 * H + j];
            for (std::size_t k = 0; k < input_size; ++k) {
                double xv = x[k];
                zi += wx.at2(j, k) * xv;
                zf += wx.at2(H + j, k) * xv;
                zo += wx.at2(2 * H + j, k) * xv;
                zg += wx.at2(3 * H + j, k) * xv;
            }
            for (std::size_t k = 0; k < H; ++k) {
                double hv = h_prev[k];
                zi += wh.at2(j, k) * hv;
                zf += wh.at2(H + j, k) * hv;
                zo += wh.at2(2 * H + j, k) * hv;
                zg += wh.at2(3 * H + j, k) * hv;
            }
            gi[j] = sigmoid(zi);
            gf[j] = sigmoid(zf);
            go[j] = sigmoid(zo);
            gg[j] = std::tanh(zg);
        }
        h_out = Tensor({H});
        c_out = Tensor({H});
        Tensor tanh_c({H});
        for (std::size_t j = 0; j < H; ++j) {
            c_out[j] = gf[j] * c_prev[j] + gi[j] * gg[j];
            tanh_c[j] = std::tanh(c_out[j]);
            h_out[j] = go[j] * tanh_c[j];
        }
        if (cache) {
            cache->x = x;
            cache->h_prev = h_prev;
            cache->c_prev = c_prev;
            cache->i = gi;
            cache->f = gf;
            cache->o = go;
            cache->g = gg;
            cache->c = c_out;
            cache->tanh_c = tanh_c;
        }
    }

    /// Backward through one step. dh/dc are gradients w.r.t. h_out/c_out;
    /// outputs are written to dx, dh_prev, dc_prev (all may alias fresh tensors).
    void backward_step(const StepCache& s, const Tensor& dh, const Tensor& dc,
                       Tensor& dx, Tensor& dh_prev, Tensor& dc_prev) {
        std::size_t H = hidden_size;
        Tensor dzi({H}), dzf({H}), dzo({H}), dzg({H});
        dc_prev = Tensor({H});
        for (std::size_t j = 0; j < H; ++j) {
            double d_o = dh[j] * s.tanh_c[j];
            double dct = dc[j] + dh[j] * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
            double d_f = dct * s.c_prev[j];
            double d_i = dct * s.g[j];
            double d_g = dct * s.i[j];
            dc_prev[j] = dct * s.f[j];
            dzi[j] = d_i * s.i[j] * (1.0 - s.i[j]);
            dzf[j] = d_f * s.f[j] * (1.0 - s.f[j]);
            dzo[j] = d_o * s.o[j] * (1.0 - s.o[j]);
            dzg[j] = d_g * (1.0 - s.g[j] * s.g[j]);
        }
        dx = Tensor({input_size});
        dh_prev = Tensor({H});
        for (std::size_t j = 0; j < H; ++j) {
            const double dz[4] = {dzi[j], dzf[j], dzo[j], dzg[j]};
            for (int gate = 0; gate < 4; ++gate) {
                std::size_t row = static_cast<std::size_t>(gate) * H + j;
                double d = dz[gate];
                if (d == 0.0) continue;
                for (std::size_t k = 0; k < input_size; ++k) {
                    gwx.at2(row, k) += d * s.x[k];
                    dx[k] += wx.at2(row, k) * d;
                }
                for (std::size_t k = 0; k < H; ++k) {
                    gwh.at2(row, k) += d * s.h_prev[k];
                    dh_prev[k] += wh.at2(row, k) * d;
                }
                gb[row] += d;
            }
        }
    }

    std::vector<NamedParam> params(const std::string& prefix) {
        return {{prefix + ".wx", &wx, &gwx}, {prefix + ".wh", &wh, &gwh}, {prefix + ".b", &b, &gb}};
    }
};

inline void lstm_step(const LstmCell& cell, const Tensor& x, const Tensor& h, const Tensor& c,
                      Tensor& h_out, Tensor& c_out) {
    cell.step(x, h, c, h_out, c_out);
}

struct SequenceCache {
    std::vector<LstmCell::StepCache> steps;
    std::size_t padded = 0;  // number of prepended zero vectors
};

/// Runs the cell over the sequence from a zero state and returns the final
/// hidden state. When pad_to exceeds the sequence length, zero vectors are
/// prepended (padding before, not after, the content).
inline Tensor encode_sequence(const LstmCell& cell, const std::vector<Tensor>& seq,
                              SequenceCache* cache = nullptr, std::size_t pad_to = 0) {
    std::size_t total = std::max(seq.size(), pad_to);
    if (total == 0) throw InputError("encode_sequence: empty sequence");
    std::size_t pad = total - seq.size();
    Tensor h({cell.hidden_size}), c({cell.hidden_size});
    Tensor zero({cell.input_size});
    if (cache) {
        cache->steps.resize(total);
        cache->padded = pad;
    }
    for (std::size_t t = 0; t < total; ++t) {
        const Tensor& x = t < pad ? zero : seq[t - pad];
        Tensor h2, c2;
        cell.step(x, h, c, h2, c2, cache ? &cache->steps[t] : nullptr);
        h = std::move(h2);
        c = std::move(c2);
    }
    return h;
}

/// Backward for encode_sequence. dh_final/dc_final are gradients w.r.t. the
/// final state; per-step input gradients (content steps only) are appended to
/// dx_out when provided, in sequence order.
inline void encode_sequence_backward(LstmCell& cell, const SequenceCache& cache,
                                     const Tensor& dh_final, const Tensor& dc_final,
                                     std::vector<Tensor>* dx_out = nullptr) {
    Tensor dh = dh_final;
    Tensor dc = dc_final.size() == cell.hidden_size ? dc_final : Tensor({cell.hidden_size});
    if (dx_out) dx_out->assign(cache.steps.size() - cache.padded, Tensor());
    for (std::size_t t = cache.steps.size(); t-- > 0;) {
        Tensor dx, dh_prev, dc_prev;
        cell.backward_step(cache.steps[t], dh, dc, dx, dh_prev, dc_prev);
        if (dx_out && t >= cache.padded) (*dx_out)[t - cache.padded] = std::move(dx);
        dh = std::move(dh_prev);
        dc = std::move(dc_prev);
    }
}

struct Embedding {
    Tensor table;  // [V x N]
    Tensor grad;

    Embedding() = default;
    Embedding(std::size_t vocab, std::size_t dim, std::mt19937_64& rng)
        : table(Tensor::uniform({vocab, dim}, -kInitRange, kInitRange, rng)),
          grad(Tensor::zeros({vocab, dim})) {}

    std::size_t dim() const { return table.cols(); }

    Tensor row(int id) const {
        Tensor out({dim()});
        for (std::size_t j = 0; j < dim(); ++j) out[j] = table.at2(static_cast<std::size_t>(id), j);
        return out;
    }

    void accumulate(int id, const Tensor& d) {
        for (std::size_t j = 0; j < dim(); ++j) grad.at2(static_cast<std::size_t>(id), j) += d[j];
    }

    std::vector<NamedParam> params(const std::string& prefix) {
        return {{prefix + ".table", &table, &grad}};
    }
};

inline Tensor one_hot(int index, int size) {
    if (index < 0 || index >= size)
        throw InputError("one_hot: index " + std::to_string(index) + " out of range [0, " +
                         std::to_string(size) + ")");
    Tensor t({static_cast<std::size_t>(size)});
    t[static_cast<std::size_t>(index)] = 1.0;
    return t;
}

struct Optimizer {
    enum class Kind { sgd, adam };
    Kind kind = Kind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static Optimizer sgd(double lr) {
        Optimizer o;
        o.kind = Kind::sgd;
        o.learning_rate = lr;
        return o;
    }
    static Optimizer adam(double lr = 1e-3) {
        Optimizer o;
        o.kind = Kind::adam;
        o.learning_rate = lr;
        return o;
    }

    /// Applies accumulated gradients and zeroes them.
    void step(const std::vector<NamedParam>& params) {
        if (learning_rate < 0.0) throw ConfigError("optimizer learning_rate must be >= 0");
        if (kind == Kind::adam) {
            if (m_.empty()) {
                for (const auto& p : params) {
                    m_.push_back(Tensor::zeros(p.value->shape()));
                    v_.push_back(Tensor::zeros(p.value->shape()));
                }
            }
            if (m_.size() != params.size()) throw ConfigError("optimizer bound to a different parameter set");
            ++t_;
            double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
            double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
            for (std::size_t p = 0; p < params.size(); ++p) {
                Tensor& value = *params[p].value;
                Tensor& grad = *params[p].grad;
                for (std::size_t i = 0; i < value.size(); ++i) {
                    double g = grad[i];
                    m_[p][i] = beta1 * m_[p][i] + (1.0 - beta1) * g;
                    v_[p][i] = beta2 * v_[p][i] + (1.0 - beta2) * g * g;
                    double mhat = m_[p][i] / bc1;
                    double vhat = v_[p][i] / bc2;
                    value[i] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
                }
                grad.fill(0.0);
            }
        } else {
            for (const auto& p : params) {
                for (std::size_t i = 0; i < p.value->size(); ++i)
                    (*p.value)[i] -= learning_rate * (*p.grad)[i];
                p.grad->fill(0.0);
            }
        }
    }

private:
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

inline void zero_grads(const std::vector<NamedParam>& params) {
    for (const auto& p : params) p.grad->fill(0.0);
}

/// Compares the analytic gradients already stored in params against central
/// finite differences of loss_fn. Returns the max relative error
/// |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
inline double grad_check(const std::vector<NamedParam>& params,
                         const std::function<double()>& loss_fn, double step = 1e-5) {
    double worst = 0.0;
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p.value->size(); ++i) {
            double saved = (*p.value)[i];
            (*p.value)[i] = saved + step;
            double up = loss_fn();
            (*p.value)[i] = saved - step;
            double down = loss_fn();
            (*p.value)[i] = saved;
            double numeric = (up - down) / (2.0 * step);
            double analytic = (*p.grad)[i];
            double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace beamkit
