#pragma once

#include <concepts>
#include <utility>

#include "beamkit/core.hpp"
#include "beamkit/nn.hpp"

namespace beamkit {

// Finite stand-in for log(0); keeps tensors finite while exp() underflows to 0.
inline constexpr double kLogZero = -1e9;

struct NextTokenDistribution {
    Tensor log_probs;  // [vocab size], logsumexp == 0

    /// Argmax over ids eligible for generation (pad and start excluded),
    /// ties resolved to the lowest id.
    TokenId argmax_generable() const {
        TokenId best = reserved::kEnd;
        double best_lp = log_probs[reserved::kEnd];
        for (std::size_t t = reserved::kEnd; t < log_probs.size(); ++t) {
            if (log_probs[t] > best_lp) {
                best_lp = log_probs[t];
                best = static_cast<TokenId>(t);
            }
        }
        return best;
    }
};

/// Distribution that puts all mass on the end token (absorbing end state).
inline NextTokenDistribution end_certain_distribution(int vocab_size) {
    NextTokenDistribution d{Tensor({static_cast<std::size_t>(vocab_size)}, kLogZero)};
    d.log_probs[reserved::kEnd] = 0.0;
    return d;
}

inline Tensor log_softmax(const Tensor& logits) {
    double m = logits[0];
    for (std::size_t i = 1; i < logits.size(); ++i) m = std::max(m, logits[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) s += std::exp(logits[i] - m);
    double lse = m + std::log(s);
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

/// Contract every decodable model satisfies: condition an input, then step
/// value-like states one token at a time, receiving the next-token
/// distribution after each step.
template <typename M>
concept SequenceModel = requires(const M& m, const MeaningRepresentation& mr,
                                 const typename M::State& s, TokenId t) {
    typename M::State;
    { m.vocab() } -> std::convertible_to<const Vocabulary&>;
    { m.condition(mr) } -> std::same_as<typename M::State>;
    { m.step(s, t) } -> std::same_as<std::pair<typename M::State, NextTokenDistribution>>;
};

struct TrainingReport {
    std::vector<double> epoch_mean_loss;
};

/// Plain encoder-decoder: an LSTM encodes the serialised MR, its final state
/// seeds an LSTM decoder whose hidden states project to vocab logits. One
/// embedding table is shared by both sides.
class Seq2SeqModel {
public:
    struct State {
        Tensor h, c;
        bool terminal = false;
    };

    Seq2SeqModel() = default;

    Seq2SeqModel(Vocabulary vocab, std::size_t hidden, std::uint64_t seed)
        : vocab_(std::move(vocab)), hidden_(hidden) {
        std::mt19937_64 rng(seed);
        std::size_t v = static_cast<std::size_t>(vocab_.size());
        embed_ = Embedding(v, hidden, rng);
        encoder_ = LstmCell(hidden, hidden, rng);
        decoder_ = LstmCell(hidden, hidden, rng);
        out_ = DenseLayer(hidden, v, Activation::linear, rng);
    }

    const Vocabulary& vocab() const { return vocab_; }
    std::size_t hidden_size() const { return hidden_; }

    State condition(const MeaningRepresentation& mr) const {
        std::vector<TokenId> ids = serialize_mr(mr, vocab_);
        State s{Tensor({hidden_}), Tensor({hidden_}), false};
        for (TokenId id : ids) {
            Tensor h2, c2;
            encoder_.step(embed_.row(id), s.h, s.c, h2, c2);
            s.h = std::move(h2);
            s.c = std::move(c2);
        }
        return s;
    }

    std::pair<State, NextTokenDistribution> step(const State& s, TokenId tok) const {
        if (tok < 0 || tok >= vocab_.size())
            throw InputError("step: token id " + std::to_string(tok) + " outside vocabulary");
        if (s.terminal || tok == reserved::kEnd)
            return {State{s.h, s.c, true}, end_certain_distribution(vocab_.size())};
        Tensor h2, c2;
        decoder_.step(embed_.row(tok), s.h, s.c, h2, c2);
        NextTokenDistribution dist{log_softmax(out_.forward(h2))};
        State next{std::move(h2), std::move(c2), false};
        return {std::move(next), std::move(dist)};
    }

    std::vector<NamedParam> parameters() {
        std::vector<NamedParam> ps = embed_.params("embed");
        for (auto& p : encoder_.params("encoder")) ps.push_back(p);
        for (auto& p : decoder_.params("decoder")) ps.push_back(p);
        for (auto& p : out_.params("out")) ps.push_back(p);
        return ps;
    }

    /// Teacher-forced cross-entropy on one (mr, reference) pair. Accumulates
    /// gradients for every parameter and returns the mean per-token loss.
    double accumulate_pair_gradients(const MeaningRepresentation& mr, const std::vector<TokenId>& ref) {
        if (ref.size() < 2 || ref.front() != reserved::kStart || ref.back() != reserved::kEnd)
            throw InputError("training reference must be start/end wrapped");
        std::vector<TokenId> mr_ids = serialize_mr(mr, vocab_);

        // Encoder forward.
        std::vector<LstmCell::StepCache> enc_caches(mr_ids.size());
        Tensor h({hidden_}), c({hidden_});
        for (std::size_t t = 0; t < mr_ids.size(); ++t) {
            Tensor h2, c2;
            encoder_.step(embed_.row(mr_ids[t]), h, c, h2, c2, &enc_caches[t]);
            h = std::move(h2);
            c = std::move(c2);
        }

        // Decoder forward, teacher forcing.
        std::size_t steps = ref.size() - 1;
        std::vector<LstmCell::StepCache> dec_caches(steps);
        std::vector<DenseLayer::Cache> out_caches(steps);
        std::vector<Tensor> log_prob_rows(steps);
        double loss = 0.0;
        for (std::size_t t = 0; t < steps; ++t) {
            Tensor h2, c2;
            decoder_.step(embed_.row(ref[t]), h, c, h2, c2, &dec_caches[t]);
            Tensor logits = out_.forward(h2, &out_caches[t]);
            log_prob_rows[t] = log_softmax(logits);
            loss -= log_prob_rows[t][static_cast<std::size_t>(ref[t + 1])];
            h = std::move(h2);
            c = std::move(c2);
        }
        double scale = 1.0 / static_cast<double>(steps);
        loss *= scale;

        // Decoder backward.
        Tensor dh({hidden_}), dc({hidden_});
        for (std::size_t t = steps; t-- > 0;) {
            std::size_t vsize = static_cast<std::size_t>(vocab_.size());
            Tensor dlogits({vsize});
            for (std::size_t i = 0; i < vsize; ++i) dlogits[i] = std::exp(log_prob_rows[t][i]) * scale;
            dlogits[static_cast<std::size_t>(ref[t + 1])] -= scale;
            Tensor dh_from_out = out_.backward(out_caches[t], dlogits);
            for (std::size_t i = 0; i < hidden_; ++i) dh[i] += dh_from_out[i];
            Tensor dx, dh_prev, dc_prev;
            decoder_.backward_step(dec_caches[t], dh, dc, dx, dh_prev, dc_prev);
            embed_.accumulate(ref[t], dx);
            dh = std::move(dh_prev);
            dc = std::move(dc_prev);
        }

        // Encoder backward from the decoder's initial-state gradient.
        for (std::size_t t = mr_ids.size(); t-- > 0;) {
            Tensor dx, dh_prev, dc_prev;
            encoder_.backward_step(enc_caches[t], dh, dc, dx, dh_prev, dc_prev);
            embed_.accumulate(mr_ids[t], dx);
            dh = std::move(dh_prev);
            dc = std::move(dc_prev);
        }
        return loss;
    }

    TrainingReport train(const Dataset& data, int epochs, Optimizer& opt, std::uint64_t shuffle_seed = 7) {
        if (data.split != Split::train) throw InputError("train_seq2seq: dataset split must be train");
        if (data.instances.empty()) throw InputError("train_seq2seq: empty dataset");
        std::vector<std::pair<std::size_t, std::size_t>> rows;  // (instance, reference)
        for (std::size_t i = 0; i < data.instances.size(); ++i)
            for (std::size_t r = 0; r < data.instances[i].references.size(); ++r) rows.emplace_back(i, r);

        TrainingReport report;
        std::vector<NamedParam> ps = parameters();
        std::mt19937_64 rng(shuffle_seed);
        for (int e = 0; e < epochs; ++e) {
            shuffle_portable(rows, rng);
            double total = 0.0;
            for (const auto& [i, r] : rows) {
                total += accumulate_pair_gradients(data.instances[i].mr, data.instances[i].references[r]);
                opt.step(ps);
            }
            report.epoch_mean_loss.push_back(total / static_cast<double>(rows.size()));
        }
        return report;
    }

    // Checkpoint access.
    Embedding& embedding() { return embed_; }
    LstmCell& encoder() { return encoder_; }
    LstmCell& decoder() { return decoder_; }
    DenseLayer& output_layer() { return out_; }

private:
    Vocabulary vocab_;
    std::size_t hidden_ = 0;
    Embedding embed_;
    LstmCell encoder_, decoder_;
    DenseLayer out_;
};

/// Recomputes a hypothesis's log-probability by replaying its tokens through
/// the model; used to audit accumulated scores.
template <SequenceModel M>
double replay_log_prob(const M& model, const MeaningRepresentation& mr, const std::vector<TokenId>& tokens) {
    if (tokens.empty() || tokens.front() != reserved::kStart)
        throw InputError("replay_log_prob: sequence must begin with the start token");
    auto state = model.condition(mr);
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
        auto [next, d] = model.step(state, tokens[t]);
        state = std::move(next);
        total += d.log_probs[static_cast<std::size_t>(tokens[t + 1])];
    }
    return total;
}

}  // namespace beamkit
