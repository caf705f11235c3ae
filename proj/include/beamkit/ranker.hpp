#pragma once

#include <atomic>

#include "beamkit/decode.hpp"
#include "beamkit/metrics.hpp"
#include "beamkit/nn.hpp"

namespace beamkit {

/// Copyable atomic call counter; concurrent scoring stays countable while
/// rankers remain value types.
struct CallCounter {
    std::atomic<std::uint64_t> value{0};
    CallCounter() = default;
    CallCounter(const CallCounter& other) : value(other.value.load()) {}
    CallCounter& operator=(const CallCounter& other) {
        value.store(other.value.load());
        return *this;
    }
};

struct RankerExample {
    std::vector<TokenId> mr_tokens;    // serialised MR
    std::vector<TokenId> text_tokens;  // rolled-out or completed hypothesis, start/end wrapped
    int model_rank = 0;                // beam position by model probability
    double target = 0.0;               // -1 or +1 during training
};

/// One final beam's worth of training examples, BLEU-ordered best first.
struct RankerTrainingBeam {
    MeaningRepresentation mr;
    std::vector<TokenId> mr_tokens;
    std::vector<RankerExample> examples;
    std::vector<double> bleu_scores;  // audit trail, aligned with examples
};

/// Bottom quarter of a BLEU-ordered beam gets -1, the rest +1.
inline std::vector<double> label_targets(int k) {
    if (k < 2) throw InputError("label_targets: beam must have at least 2 hypotheses");
    int bottom = (k + 3) / 4;
    std::vector<double> targets(static_cast<std::size_t>(k), 1.0);
    for (int i = k - bottom; i < k; ++i) targets[static_cast<std::size_t>(i)] = -1.0;
    return targets;
}

/// Sum over the beam of |normalised prediction - target|.
inline double rmae_loss(const std::vector<double>& predicted, const std::vector<double>& targets) {
    if (predicted.size() != targets.size()) throw InputError("rmae_loss: length mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) loss += std::abs(predicted[i] - targets[i]);
    return loss;
}

/// Scores a single hypothesis: MR and text go through separate LSTMs, the
/// final hidden states are concatenated with a one-hot of the model rank and
/// passed through two fully connected layers.
class PointwiseRanker {
public:
    PointwiseRanker() = default;

    PointwiseRanker(Vocabulary vocab, std::size_t hidden, int b_max, std::uint64_t seed)
        : vocab_(std::move(vocab)), hidden_(hidden), b_max_(b_max) {
        std::mt19937_64 rng(seed);
        std::size_t v = static_cast<std::size_t>(vocab_.size());
        mr_embed_ = Embedding(v, hidden, rng);
        text_embed_ = Embedding(v, hidden, rng);
        mr_lstm_ = LstmCell(hidden, hidden, rng);
        text_lstm_ = LstmCell(hidden, hidden, rng);
        fc1_ = DenseLayer(2 * hidden + static_cast<std::size_t>(b_max), hidden, Activation::tanh, rng);
        fc2_ = DenseLayer(hidden, 1, Activation::linear, rng);
    }

    const Vocabulary& vocab() const { return vocab_; }
    std::size_t hidden_size() const { return hidden_; }
    int b_max() const { return b_max_; }

    struct Caches {
        std::vector<LstmCell::StepCache> mr_steps, text_steps;
        std::vector<TokenId> mr_tokens, text_tokens;
        DenseLayer::Cache fc1, fc2;
    };

    double score(const RankerExample& ex) const {
        ++score_calls_.value;
        return forward(ex, nullptr);
    }

    double score_hypothesis(const std::vector<TokenId>& mr_tokens,
                            const std::vector<TokenId>& text_tokens, int model_rank) const {
        return score(RankerExample{mr_tokens, text_tokens, model_rank, 0.0});
    }

    std::uint64_t score_calls() const { return score_calls_.value.load(); }
    void reset_score_calls() const { score_calls_.value.store(0); }

    /// Forward pass; fills caches when training.
    double forward(const RankerExample& ex, Caches* caches) const {
        if (ex.model_rank < 0 || ex.model_rank >= b_max_)
            throw InputError("ranker: model_rank " + std::to_string(ex.model_rank) +
                             " outside one-hot width " + std::to_string(b_max_));
        Tensor h_mr = encode(mr_lstm_, mr_embed_, ex.mr_tokens, caches ? &caches->mr_steps : nullptr);
        Tensor h_text = encode(text_lstm_, text_embed_, ex.text_tokens, caches ? &caches->text_steps : nullptr);
        Tensor feat({2 * hidden_ + static_cast<std::size_t>(b_max_)});
        for (std::size_t i = 0; i < hidden_; ++i) feat[i] = h_mr[i];
        for (std::size_t i = 0; i < hidden_; ++i) feat[hidden_ + i] = h_text[i];
        feat[2 * hidden_ + static_cast<std::size_t>(ex.model_rank)] = 1.0;
        Tensor z = fc1_.forward(feat, caches ? &caches->fc1 : nullptr);
        Tensor out = fc2_.forward(z, caches ? &caches->fc2 : nullptr);
        if (caches) {
            caches->mr_tokens = ex.mr_tokens;
            caches->text_tokens = ex.text_tokens;
        }
        return out[0];
    }

    /// Accumulates gradients for d(loss)/d(score) = dscore.
    void backward(const Caches& caches, double dscore) {
        Tensor dout({1});
        dout[0] = dscore;
        Tensor dz = fc2_.backward(caches.fc2, dout);
        Tensor dfeat = fc1_.backward(caches.fc1, dz);
        Tensor dh_mr({hidden_}), dh_text({hidden_});
        for (std::size_t i = 0; i < hidden_; ++i) dh_mr[i] = dfeat[i];
        for (std::size_t i = 0; i < hidden_; ++i) dh_text[i] = dfeat[hidden_ + i];
        decode_sequence_grads(mr_lstm_, mr_embed_, caches.mr_steps, caches.mr_tokens, dh_mr);
        decode_sequence_grads(text_lstm_, text_embed_, caches.text_steps, caches.text_tokens, dh_text);
    }

    std::vector<NamedParam> parameters() {
        std::vector<NamedParam> ps = mr_embed_.params("mr_embed");
        for (auto& p : text_embed_.params("text_embed")) ps.push_back(p);
        for (auto& p : mr_lstm_.params("mr_lstm")) ps.push_back(p);
        for (auto& p : text_lstm_.params("text_lstm")) ps.push_back(p);
        for (auto& p : fc1_.params("fc1")) ps.push_back(p);
        for (auto& p : fc2_.params("fc2")) ps.push_back(p);
        return ps;
    }

    Embedding& mr_embedding() { return mr_embed_; }
    Embedding& text_embedding() { return text_embed_; }
    LstmCell& mr_encoder() { return mr_lstm_; }
    LstmCell& text_encoder() { return text_lstm_; }
    DenseLayer& head_hidden() { return fc1_; }
    DenseLayer& head_out() { return fc2_; }

private:
    Tensor encode(const LstmCell& cell, const Embedding& embed, const std::vector<TokenId>& ids,
                  std::vector<LstmCell::StepCache>* caches) const {
        Tensor h({hidden_}), c({hidden_});
        if (caches) caches->resize(ids.size());
        for (std::size_t t = 0; t < ids.size(); ++t) {
            Tensor h2, c2;
            cell.step(embed.row(ids[t]), h, c, h2, c2, caches ? &(*caches)[t] : nullptr);
            h = std::move(h2);
            c = std::move(c2);
        }
        return h;  // empty sequence encodes to the zero state
    }

    void decode_sequence_grads(LstmCell& cell, Embedding& embed,
                               const std::vector<LstmCell::StepCache>& caches,
                               const std::vector<TokenId>& ids, const Tensor& dh_final) {
        Tensor dh = dh_final, dc({hidden_});
        for (std::size_t t = caches.size(); t-- > 0;) {
            Tensor dx, dh_prev, dc_prev;
            cell.backward_step(caches[t], dh, dc, dx, dh_prev, dc_prev);
            embed.accumulate(ids[t], dx);
            dh = std::move(dh_prev);
            dc = std::move(dc_prev);
        }
    }

    Vocabulary vocab_;
    std::size_t hidden_ = 0;
    int b_max_ = 64;
    Embedding mr_embed_, text_embed_;
    LstmCell mr_lstm_, text_lstm_;
    DenseLayer fc1_, fc2_;
    mutable CallCounter score_calls_;
};

/// Preference model over pairs. The head sees the difference of the two
/// hypotheses' features through bias-free odd layers, so
/// compare(a, b) + compare(b, a) == 1 by construction.
class PairwiseRanker {
public:
    PairwiseRanker() = default;

    PairwiseRanker(Vocabulary vocab, std::size_t hidden, int b_max, std::uint64_t seed)
        : vocab_(std::move(vocab)), hidden_(hidden), b_max_(b_max) {
        std::mt19937_64 rng(seed);
        std::size_t v = static_cast<std::size_t>(vocab_.size());
        mr_embed_ = Embedding(v, hidden, rng);
        text_embed_ = Embedding(v, hidden, rng);
        mr_lstm_ = LstmCell(hidden, hidden, rng);
        text_lstm_ = LstmCell(hidden, hidden, rng);
        fc1_ = DenseLayer(2 * hidden + static_cast<std::size_t>(b_max), hidden, Activation::tanh, rng,
                          /*with_bias=*/false);
        fc2_ = DenseLayer(hidden, 1, Activation::linear, rng, /*with_bias=*/false);
    }

    const Vocabulary& vocab() const { return vocab_; }
    int b_max() const { return b_max_; }

    /// P(a ranks above b), in (0, 1).
    double compare(const RankerExample& a, const RankerExample& b) const {
        ++compare_calls_.value;
        return forward_pair(a, b, nullptr);
    }

    std::uint64_t compare_calls() const { return compare_calls_.value.load(); }
    void reset_compare_calls() const { compare_calls_.value.store(0); }

    struct PairCaches {
        std::vector<LstmCell::StepCache> mr_a, text_a, mr_b, text_b;
        std::vector<TokenId> mr_tokens_a, text_tokens_a, mr_tokens_b, text_tokens_b;
        DenseLayer::Cache fc1, fc2;
        double probability = 0.5;
    };

    double forward_pair(const RankerExample& a, const RankerExample& b, PairCaches* caches) const {
        Tensor fa = features(a, caches ? &caches->mr_a : nullptr, caches ? &caches->text_a : nullptr);
        Tensor fb = features(b, caches ? &caches->mr_b : nullptr, caches ? &caches->text_b : nullptr);
        Tensor diff(fa.shape());
        for (std::size_t i = 0; i < fa.size(); ++i) diff[i] = fa[i] - fb[i];
        Tensor z = fc1_.forward(diff, caches ? &caches->fc1 : nullptr);
        Tensor out = fc2_.forward(z, caches ? &caches->fc2 : nullptr);
        double prob = sigmoid(out[0]);
        if (caches) {
            caches->mr_tokens_a = a.mr_tokens;
            caches->text_tokens_a = a.text_tokens;
            caches->mr_tokens_b = b.mr_tokens;
            caches->text_tokens_b = b.text_tokens;
            caches->probability = prob;
        }
        return prob;
    }

    /// Gradient of a loss whose derivative w.r.t. the preference probability
    /// is dprob.
    void backward_pair(const PairCaches& caches, double dprob) {
        double p = caches.probability;
        Tensor dout({1});
        dout[0] = dprob * p * (1.0 - p);
        Tensor dz = fc2_.backward(caches.fc2, dout);
        Tensor ddiff = fc1_.backward(caches.fc1, dz);
        Tensor dh_mr({hidden_}), dh_text({hidden_});
        for (std::size_t i = 0; i < hidden_; ++i) dh_mr[i] = ddiff[i];
        for (std::size_t i = 0; i < hidden_; ++i) dh_text[i] = ddiff[hidden_ + i];
        sequence_grads(caches.mr_a, caches.mr_tokens_a, dh_mr, mr_lstm_, mr_embed_, 1.0);
        sequence_grads(caches.text_a, caches.text_tokens_a, dh_text, text_lstm_, text_embed_, 1.0);
        sequence_grads(caches.mr_b, caches.mr_tokens_b, dh_mr, mr_lstm_, mr_embed_, -1.0);
        sequence_grads(caches.text_b, caches.text_tokens_b, dh_text, text_lstm_, text_embed_, -1.0);
    }

    std::vector<NamedParam> parameters() {
        std::vector<NamedParam> ps = mr_embed_.params("mr_embed");
        for (auto& p : text_embed_.params("text_embed")) ps.push_back(p);
        for (auto& p : mr_lstm_.params("mr_lstm")) ps.push_back(p);
        for (auto& p : text_lstm_.params("text_lstm")) ps.push_back(p);
        for (auto& p : fc1_.params("fc1")) ps.push_back(p);
        for (auto& p : fc2_.params("fc2")) ps.push_back(p);
        return ps;
    }

private:
    Tensor features(const RankerExample& ex, std::vector<LstmCell::StepCache>* mr_caches,
                    std::vector<LstmCell::StepCache>* text_caches) const {
        if (ex.model_rank < 0 || ex.model_rank >= b_max_)
            throw InputError("ranker: model_rank outside one-hot width");
        Tensor h_mr = run(mr_lstm_, mr_embed_, ex.mr_tokens, mr_caches);
        Tensor h_text = run(text_lstm_, text_embed_, ex.text_tokens, text_caches);
        Tensor feat({2 * hidden_ + static_cast<std::size_t>(b_max_)});
        for (std::size_t i = 0; i < hidden_; ++i) feat[i] = h_mr[i];
        for (std::size_t i = 0; i < hidden_; ++i) feat[hidden_ + i] = h_text[i];
        feat[2 * hidden_ + static_cast<std::size_t>(ex.model_rank)] = 1.0;
        return feat;
    }

    Tensor run(const LstmCell& cell, const Embedding& embed, const std::vector<TokenId>& ids,
               std::vector<LstmCell::StepCache>* caches) const {
        Tensor h({hidden_}), c({hidden_});
        if (caches) caches->resize(ids.size());
        for (std::size_t t = 0; t < ids.size(); ++t) {
            Tensor h2, c2;
            cell.step(embed.row(ids[t]), h, c, h2, c2, caches ? &(*caches)[t] : nullptr);
            h = std::move(h2);
            c = std::move(c2);
        }
        return h;
    }

    void sequence_grads(const std::vector<LstmCell::StepCache>& caches, const std::vector<TokenId>& ids,
                        const Tensor& dh_final, LstmCell& cell, Embedding& embed, double sign) {
        Tensor dh(dh_final.shape());
        for (std::size_t i = 0; i < dh.size(); ++i) dh[i] = sign * dh_final[i];
        Tensor dc({hidden_});
        for (std::size_t t = caches.size(); t-- > 0;) {
            Tensor dx, dh_prev, dc_prev;
            cell.backward_step(caches[t], dh, dc, dx, dh_prev, dc_prev);
            embed.accumulate(ids[t], dx);
            dh = std::move(dh_prev);
            dc = std::move(dc_prev);
        }
    }

    Vocabulary vocab_;
    std::size_t hidden_ = 0;
    int b_max_ = 64;
    Embedding mr_embed_, text_embed_;
    LstmCell mr_lstm_, text_lstm_;
    DenseLayer fc1_, fc2_;
    mutable CallCounter compare_calls_;
};

/// Evaluates every unordered pair exactly once; an item's Copeland score is
/// its win count (half a point on an exact tie). Ties in the final order fall
/// back to tie_score descending (model log-prob in practice).
template <typename T, typename Compare>
std::vector<std::size_t> copeland_order_indices(const std::vector<T>& items, Compare&& compare,
                                                const std::vector<double>& tie_scores) {
    std::size_t n = items.size();
    if (tie_scores.size() != n) throw InputError("copeland_order: tie score list must match items");
    std::vector<double> wins(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double p = compare(items[i], items[j]);
            if (p > 0.5) wins[i] += 1.0;
            else if (p < 0.5) wins[j] += 1.0;
            else {
                wins[i] += 0.5;
                wins[j] += 0.5;
            }
        }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (wins[a] != wins[b]) return wins[a] > wins[b];
        return tie_scores[a] > tie_scores[b];
    });
    return order;
}

template <typename T, typename Compare>
std::vector<T> copeland_order(const std::vector<T>& items, Compare&& compare,
                              const std::vector<double>& tie_scores) {
    std::vector<T> out;
    out.reserve(items.size());
    for (std::size_t idx : copeland_order_indices(items, compare, tie_scores)) out.push_back(items[idx]);
    return out;
}

struct GenerationReport {
    int instances = 0;
    int skipped = 0;
};

/// Runs a vanilla beam search per instance, ranks the final beam by sentence
/// BLEU against the references (ties by model log-prob), records each
/// hypothesis's model-probability rank, and labels the bottom quarter -1.
template <SequenceModel M>
std::vector<RankerTrainingBeam> generate_training_data(const M& model, const Dataset& data, int gen_beam,
                                                       int max_steps, GenerationReport* report = nullptr) {
    if (gen_beam < 2) throw InputError("generate_training_data: gen_beam must be >= 2");
    DecodeConfig config;
    config.beam_size = gen_beam;
    config.max_steps = max_steps;

    std::vector<RankerTrainingBeam> beams;
    for (const Instance& inst : data.instances) {
        if (report) ++report->instances;
        DecodeResult<M> decoded = beam_search(model, inst.mr, config);
        const std::vector<Hypothesis>& hyps = decoded.final_beam.hypotheses;
        if (hyps.size() < 2) {
            if (report) ++report->skipped;
            continue;
        }
        std::size_t n = hyps.size();

        std::vector<double> bleu(n);
        std::vector<std::vector<TokenId>> texts(n);
        for (std::size_t i = 0; i < n; ++i) {
            texts[i] = hyps[i].tokens;
            if (!hyps[i].completed) texts[i].push_back(reserved::kEnd);
            bleu[i] = sentence_bleu(texts[i], inst.references).score;
        }

        std::vector<std::size_t> by_logprob(n);
        std::iota(by_logprob.begin(), by_logprob.end(), 0);
        std::stable_sort(by_logprob.begin(), by_logprob.end(),
                         [&](std::size_t a, std::size_t b) { return hyps[a].log_prob > hyps[b].log_prob; });
        std::vector<int> model_rank(n);
        for (std::size_t pos = 0; pos < n; ++pos) model_rank[by_logprob[pos]] = static_cast<int>(pos);

        std::vector<std::size_t> by_bleu(n);
        std::iota(by_bleu.begin(), by_bleu.end(), 0);
        std::stable_sort(by_bleu.begin(), by_bleu.end(), [&](std::size_t a, std::size_t b) {
            if (bleu[a] != bleu[b]) return bleu[a] > bleu[b];
            return hyps[a].log_prob > hyps[b].log_prob;
        });

        RankerTrainingBeam tb;
        tb.mr = inst.mr;
        tb.mr_tokens = serialize_mr(inst.mr, model.vocab());
        std::vector<double> targets = label_targets(static_cast<int>(n));
        for (std::size_t pos = 0; pos < n; ++pos) {
            std::size_t idx = by_bleu[pos];
            tb.examples.push_back(RankerExample{tb.mr_tokens, texts[idx], model_rank[idx], targets[pos]});
            tb.bleu_scores.push_back(bleu[idx]);
        }
        beams.push_back(std::move(tb));
    }
    return beams;
}

/// RMAE objective per beam: score, mean-centre, compare against the +-1
/// targets, and backpropagate through the centring. One beam per step.
inline TrainingReport train_ranker(PointwiseRanker& ranker, const std::vector<RankerTrainingBeam>& beams,
                                   int epochs, Optimizer& opt, std::uint64_t shuffle_seed = 11) {
    if (beams.empty()) throw InputError("train_ranker: no training beams");
    std::vector<NamedParam> ps = ranker.parameters();
    std::vector<std::size_t> order(beams.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(shuffle_seed);

    TrainingReport report;
    for (int e = 0; e < epochs; ++e) {
        shuffle_portable(order, rng);
        double total = 0.0;
        for (std::size_t idx : order) {
            const RankerTrainingBeam& beam = beams[idx];
            std::size_t n = beam.examples.size();
            std::vector<PointwiseRanker::Caches> caches(n);
            std::vector<double> raw(n);
            std::vector<double> targets(n);
            for (std::size_t i = 0; i < n; ++i) {
                raw[i] = ranker.forward(beam.examples[i], &caches[i]);
                targets[i] = beam.examples[i].target;
            }
            std::vector<double> centred = normalize_scores(raw);
            total += rmae_loss(centred, targets);

            std::vector<double> dcentred(n);
            double sign_sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double d = centred[i] - targets[i];
                dcentred[i] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);  // subgradient 0 at kinks
                sign_sum += dcentred[i];
            }
            double mean_sign = sign_sum / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) ranker.backward(caches[i], dcentred[i] - mean_sign);
            opt.step(ps);
        }
        report.epoch_mean_loss.push_back(total / static_cast<double>(beams.size()));
    }
    return report;
}

/// Logistic loss over all ordered-by-BLEU pairs in each beam.
inline TrainingReport train_pairwise_ranker(PairwiseRanker& ranker,
                                            const std::vector<RankerTrainingBeam>& beams, int epochs,
                                            Optimizer& opt, std::uint64_t shuffle_seed = 13) {
    if (beams.empty()) throw InputError("train_pairwise_ranker: no training beams");
    std::vector<NamedParam> ps = ranker.parameters();
    std::vector<std::size_t> order(beams.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(shuffle_seed);

    TrainingReport report;
    for (int e = 0; e < epochs; ++e) {
        shuffle_portable(order, rng);
        double total = 0.0;
        long long pairs = 0;
        for (std::size_t idx : order) {
            const RankerTrainingBeam& beam = beams[idx];
            std::size_t n = beam.examples.size();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    PairwiseRanker::PairCaches caches;
                    double p = ranker.forward_pair(beam.examples[i], beam.examples[j], &caches);
                    total += -std::log(std::max(p, 1e-12));
                    ++pairs;
                    ranker.backward_pair(caches, -1.0 / std::max(p, 1e-12));
                }
            }
            opt.step(ps);
        }
        report.epoch_mean_loss.push_back(total / static_cast<double>(std::max(pairs, 1LL)));
    }
    return report;
}

}  // namespace beamkit
