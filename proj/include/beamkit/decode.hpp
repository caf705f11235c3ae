#pragma once

#include <algorithm>
#include <numeric>
#include <set>

#include "beamkit/core.hpp"
#include "beamkit/model.hpp"

namespace beamkit {

enum class RankKind { model_logprob, length_normalised };

struct RankStrategy {
    RankKind kind = RankKind::model_logprob;
    double alpha = 1.0;  // length-norm exponent
};

struct DecodeConfig {
    int beam_size = 3;
    int max_steps = 60;
    RankStrategy strategy;
    std::set<int> manipulation_steps;  // positive step indices
    bool manipulate_final = false;     // the "final" marker
    bool final_rerank = false;
    std::string ranker_path;           // checkpoint reference, resolved by the caller

    bool needs_ranker() const {
        return !manipulation_steps.empty() || manipulate_final || final_rerank;
    }

    void validate(bool has_ranker) const {
        if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
        if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
        if (strategy.alpha < 0) throw ConfigError("length-norm alpha must be >= 0");
        for (int s : manipulation_steps)
            if (s < 1) throw ConfigError("manipulation steps must be positive");
        if (needs_ranker() && !has_ranker)
            throw ConfigError("manipulation or final rerank configured without a ranker");
    }
};

/// Subtracts the mean; output sums to zero.
inline std::vector<double> normalize_scores(const std::vector<double>& scores) {
    if (scores.empty()) throw InputError("normalize_scores: empty input");
    double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] - mean;
    return out;
}

struct Candidate {
    int parent = 0;            // index into the beam being expanded
    TokenId token = -1;        // appended token; -1 marks a completed passthrough
    double log_prob = 0.0;
    int generated_length = 0;  // tokens excluding start, after the append
    bool completed = false;
};

inline double strategy_score(const RankStrategy& strategy, double log_prob, int generated_length) {
    if (strategy.kind == RankKind::model_logprob) return log_prob;
    double len = std::max(1, generated_length);
    return log_prob / std::pow(len, strategy.alpha);
}

/// Value-like decoding position: the model state after the last token plus
/// the pending next-token distribution it produced.
template <SequenceModel M>
struct DecoderCursor {
    typename M::State state;
    NextTokenDistribution next;
};

template <SequenceModel M>
using CursorCache = std::vector<DecoderCursor<M>>;

/// Every incomplete hypothesis yields one candidate per generable token (pad
/// and start excluded); completed hypotheses pass through as themselves.
template <SequenceModel M>
std::vector<Candidate> expand(const Beam& beam, const M& model, const CursorCache<M>& cache) {
    if (beam.hypotheses.empty()) throw InputError("expand: empty beam");
    int vsize = model.vocab().size();
    std::vector<Candidate> out;
    for (int i = 0; i < beam.size(); ++i) {
        const Hypothesis& hyp = beam.hypotheses[static_cast<std::size_t>(i)];
        if (hyp.completed) {
            out.push_back(Candidate{i, -1, hyp.log_prob, hyp.generated_length(), true});
            continue;
        }
        const NextTokenDistribution& dist = cache[static_cast<std::size_t>(i)].next;
        for (TokenId t = reserved::kEnd; t < vsize; ++t)
            out.push_back(Candidate{i, t, hyp.log_prob + dist.log_probs[static_cast<std::size_t>(t)],
                                    hyp.generated_length() + 1, t == reserved::kEnd});
    }
    return out;
}

/// Stable order by strategy score, best first.
inline std::vector<Candidate> rank(std::vector<Candidate> candidates, const RankStrategy& strategy) {
    std::stable_sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
        return strategy_score(strategy, a.log_prob, a.generated_length) >
               strategy_score(strategy, b.log_prob, b.generated_length);
    });
    return candidates;
}

inline std::vector<Candidate> prune(std::vector<Candidate> ranked, int k,
                                    std::vector<std::size_t>* pruned_indices = nullptr) {
    if (k < 1) throw InputError("prune: k must be >= 1");
    if (pruned_indices) {
        pruned_indices->clear();
        for (std::size_t i = static_cast<std::size_t>(k); i < ranked.size(); ++i)
            pruned_indices->push_back(i);
    }
    if (ranked.size() > static_cast<std::size_t>(k)) ranked.resize(static_cast<std::size_t>(k));
    return ranked;
}

template <SequenceModel M>
struct RolloutResult {
    Hypothesis hypothesis;
    bool forced = false;  // length cap hit; end appended with its model log-prob
};

/// Completes a hypothesis by repeatedly appending the argmax token (ties to
/// the lowest id) until end, or until generated_length reaches max_steps, at
/// which point the end token is appended anyway and the result flagged.
template <SequenceModel M>
RolloutResult<M> greedy_rollout(const Hypothesis& hyp, const M& model, const DecoderCursor<M>& cursor,
                                int max_steps) {
    RolloutResult<M> result{hyp, false};
    if (hyp.completed) return result;
    typename M::State state = cursor.state;
    NextTokenDistribution dist = cursor.next;
    Hypothesis& h = result.hypothesis;
    while (h.generated_length() < max_steps) {
        TokenId t = dist.argmax_generable();
        h.tokens.push_back(t);
        h.log_prob += dist.log_probs[static_cast<std::size_t>(t)];
        if (t == reserved::kEnd) {
            h.completed = true;
            return result;
        }
        auto [next_state, next_dist] = model.step(state, t);
        state = std::move(next_state);
        dist = std::move(next_dist);
    }
    h.tokens.push_back(reserved::kEnd);
    h.log_prob += dist.log_probs[reserved::kEnd];
    h.completed = true;
    result.forced = true;
    return result;
}

/// Anything that can assign a scalar to a rolled-out hypothesis given the MR
/// sequence, the text sequence, and the hypothesis's model-probability rank.
template <typename S>
concept HypothesisScorer = requires(const S& s, const std::vector<TokenId>& mr_tokens,
                                    const std::vector<TokenId>& text_tokens, int model_rank) {
    { s.score_hypothesis(mr_tokens, text_tokens, model_rank) } -> std::convertible_to<double>;
};

struct BeamSnapshot {
    int step = 0;
    std::vector<std::vector<TokenId>> tokens;
    std::vector<double> log_probs;
    std::vector<double> scores;  // strategy scores at snapshot time
    bool manipulated = false;
    std::vector<std::size_t> pruned;  // ranked-candidate indices dropped this step
};

struct DecodeTrace {
    std::vector<BeamSnapshot> steps;
    int forced_rollout_terminations = 0;
    bool final_manipulated = false;
};

/// Reorders the beam (membership unchanged): each hypothesis is greedily
/// rolled out, scored by the ranker with its model-probability rank, scores
/// mean-centred, and the lowest-scoring quarter moved behind the rest. Both
/// groups keep model log-prob order inside.
template <SequenceModel M, HypothesisScorer S>
void manipulate(Beam& beam, CursorCache<M>& cache, const M& model, const S& scorer,
                const std::vector<TokenId>& mr_tokens, int rollout_max_steps,
                DecodeTrace* trace = nullptr) {
    int n = beam.size();
    if (n == 0) throw InputError("manipulate: empty beam");
    if (n == 1) return;

    // Rank by model log-prob, stable in current beam order.
    std::vector<int> by_logprob(static_cast<std::size_t>(n));
    std::iota(by_logprob.begin(), by_logprob.end(), 0);
    std::stable_sort(by_logprob.begin(), by_logprob.end(), [&](int a, int b) {
        return beam.hypotheses[static_cast<std::size_t>(a)].log_prob >
               beam.hypotheses[static_cast<std::size_t>(b)].log_prob;
    });
    std::vector<int> model_rank(static_cast<std::size_t>(n));
    for (int pos = 0; pos < n; ++pos) model_rank[static_cast<std::size_t>(by_logprob[pos])] = pos;

    std::vector<double> raw(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Hypothesis& hyp = beam.hypotheses[static_cast<std::size_t>(i)];
        RolloutResult<M> rollout = greedy_rollout(hyp, model, cache[static_cast<std::size_t>(i)],
                                                  rollout_max_steps);
        if (rollout.forced && trace) ++trace->forced_rollout_terminations;
        raw[static_cast<std::size_t>(i)] =
            scorer.score_hypothesis(mr_tokens, rollout.hypothesis.tokens, model_rank[static_cast<std::size_t>(i)]);
    }
    std::vector<double> scores = normalize_scores(raw);

    // Bottom quarter by ranker score; score ties resolve against the weaker
    // model rank so equal scores degenerate to pure model order.
    int bottom_size = (n + 3) / 4;
    std::vector<int> by_score(static_cast<std::size_t>(n));
    std::iota(by_score.begin(), by_score.end(), 0);
    std::stable_sort(by_score.begin(), by_score.end(), [&](int a, int b) {
        double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
        if (sa != sb) return sa < sb;
        return model_rank[static_cast<std::size_t>(a)] > model_rank[static_cast<std::size_t>(b)];
    });
    std::vector<bool> in_bottom(static_cast<std::size_t>(n), false);
    for (int i = 0; i < bottom_size; ++i)
        in_bottom[static_cast<std::size_t>(by_score[static_cast<std::size_t>(i)])] = true;

    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(n));
    for (int pos = 0; pos < n; ++pos)
        if (!in_bottom[static_cast<std::size_t>(by_logprob[static_cast<std::size_t>(pos)])])
            order.push_back(by_logprob[static_cast<std::size_t>(pos)]);
    for (int pos = 0; pos < n; ++pos)
        if (in_bottom[static_cast<std::size_t>(by_logprob[static_cast<std::size_t>(pos)])])
            order.push_back(by_logprob[static_cast<std::size_t>(pos)]);

    std::vector<Hypothesis> new_hyps;
    CursorCache<M> new_cache;
    new_hyps.reserve(static_cast<std::size_t>(n));
    new_cache.reserve(static_cast<std::size_t>(n));
    for (int idx : order) {
        new_hyps.push_back(std::move(beam.hypotheses[static_cast<std::size_t>(idx)]));
        new_cache.push_back(std::move(cache[static_cast<std::size_t>(idx)]));
    }
    beam.hypotheses = std::move(new_hyps);
    cache = std::move(new_cache);
}

struct NoScorer {};

template <SequenceModel M>
struct DecodeResult {
    Hypothesis best;
    Beam final_beam;
    DecodeTrace trace;
};

namespace detail {

template <SequenceModel M>
void snapshot_beam(DecodeTrace& trace, const Beam& beam, const RankStrategy& strategy, int step,
                   bool manipulated, std::vector<std::size_t> pruned) {
    BeamSnapshot snap;
    snap.step = step;
    snap.manipulated = manipulated;
    snap.pruned = std::move(pruned);
    for (const Hypothesis& h : beam.hypotheses) {
        snap.tokens.push_back(h.tokens);
        snap.log_probs.push_back(h.log_prob);
        snap.scores.push_back(strategy_score(strategy, h.log_prob, h.generated_length()));
    }
    trace.steps.push_back(std::move(snap));
}

}  // namespace detail

/// Expand -> rank -> prune from the start token, manipulating after the prune
/// of each listed step; stops when the beam completes or max_steps is
/// reached. `final` in the schedule (or final_rerank) reorders the last beam
/// with the ranker; index 0 of the final beam is the returned best.
template <SequenceModel M, typename S = NoScorer>
DecodeResult<M> beam_search(const M& model, const MeaningRepresentation& mr, const DecodeConfig& config,
                            const S* scorer = nullptr) {
    constexpr bool kHasScorer = !std::is_same_v<S, NoScorer>;
    config.validate(kHasScorer && scorer != nullptr);

    DecodeResult<M> result;
    Beam& beam = result.final_beam;
    beam.capacity = config.beam_size;
    beam.hypotheses = {Hypothesis{{reserved::kStart}, 0.0, false}};

    auto initial_state = model.condition(mr);
    auto [s1, d1] = model.step(initial_state, reserved::kStart);
    CursorCache<M> cache;
    cache.push_back(DecoderCursor<M>{std::move(s1), std::move(d1)});

    std::vector<TokenId> mr_tokens = serialize_mr(mr, model.vocab());
    detail::snapshot_beam<M>(result.trace, beam, config.strategy, 0, false, {});

    for (int step = 1; step <= config.max_steps; ++step) {
        if (beam.all_completed()) break;
        std::vector<Candidate> candidates = expand(beam, model, cache);
        std::vector<Candidate> ranked = rank(std::move(candidates), config.strategy);
        std::vector<std::size_t> pruned;
        std::vector<Candidate> kept = prune(std::move(ranked), config.beam_size, &pruned);

        std::vector<Hypothesis> hyps;
        CursorCache<M> new_cache;
        hyps.reserve(kept.size());
        new_cache.reserve(kept.size());
        for (const Candidate& cand : kept) {
            const Hypothesis& parent = beam.hypotheses[static_cast<std::size_t>(cand.parent)];
            const DecoderCursor<M>& parent_cursor = cache[static_cast<std::size_t>(cand.parent)];
            if (cand.token < 0) {  // completed passthrough
                hyps.push_back(parent);
                new_cache.push_back(parent_cursor);
                continue;
            }
            Hypothesis h;
            h.tokens = parent.tokens;
            h.tokens.push_back(cand.token);
            h.log_prob = cand.log_prob;
            h.completed = cand.token == reserved::kEnd;
            if (h.completed) {
                new_cache.push_back(DecoderCursor<M>{parent_cursor.state,
                                                     end_certain_distribution(model.vocab().size())});
            } else {
                auto [ns, nd] = model.step(parent_cursor.state, cand.token);
                new_cache.push_back(DecoderCursor<M>{std::move(ns), std::move(nd)});
            }
            hyps.push_back(std::move(h));
        }
        beam.hypotheses = std::move(hyps);
        cache = std::move(new_cache);

        bool manipulated = false;
        if constexpr (kHasScorer) {
            if (scorer && config.manipulation_steps.count(step)) {
                manipulate(beam, cache, model, *scorer, mr_tokens, config.max_steps, &result.trace);
                manipulated = true;
            }
        }
        detail::snapshot_beam<M>(result.trace, beam, config.strategy, step, manipulated, std::move(pruned));
    }

    if constexpr (kHasScorer) {
        if (scorer && (config.manipulate_final || config.final_rerank)) {
            manipulate(beam, cache, model, *scorer, mr_tokens, config.max_steps, &result.trace);
            result.trace.final_manipulated = true;
        }
    }
    result.best = beam.hypotheses.front();
    return result;
}

/// Samples from the smallest probability-sorted prefix of the vocabulary with
/// cumulative mass >= p, renormalised. Deterministic for a fixed seed.
template <SequenceModel M>
Hypothesis nucleus_sample(const M& model, const MeaningRepresentation& mr, double p, int max_steps,
                          std::uint64_t seed) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("nucleus p must be in (0, 1]");
    if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    std::mt19937_64 rng(seed);

    Hypothesis h{{reserved::kStart}, 0.0, false};
    auto state0 = model.condition(mr);
    auto [state, dist] = model.step(state0, reserved::kStart);
    while (h.generated_length() < max_steps) {
        std::vector<std::pair<double, TokenId>> items;  // (prob, id), generable only
        for (TokenId t = reserved::kEnd; t < model.vocab().size(); ++t)
            items.emplace_back(std::exp(dist.log_probs[static_cast<std::size_t>(t)]), t);
        std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        double mass = 0.0;
        std::size_t nucleus = 0;
        while (nucleus < items.size()) {
            mass += items[nucleus].first;
            ++nucleus;
            if (mass >= p) break;
        }
        double u = uniform_unit(rng) * mass;
        TokenId chosen = items[nucleus - 1].second;
        double acc = 0.0;
        for (std::size_t i = 0; i < nucleus; ++i) {
            acc += items[i].first;
            if (u < acc) {
                chosen = items[i].second;
                break;
            }
        }
        h.tokens.push_back(chosen);
        h.log_prob += dist.log_probs[static_cast<std::size_t>(chosen)];
        if (chosen == reserved::kEnd) {
            h.completed = true;
            return h;
        }
        auto [ns, nd] = model.step(state, chosen);
        state = std::move(ns);
        dist = std::move(nd);
    }
    h.tokens.push_back(reserved::kEnd);
    h.log_prob += dist.log_probs[reserved::kEnd];
    h.completed = true;
    return h;
}

}  // namespace beamkit
