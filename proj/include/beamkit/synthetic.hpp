#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "beamkit/core.hpp"
#include "beamkit/dataset_io.hpp"
#include "beamkit/model.hpp"

namespace beamkit {

struct BiasConfig {
    double repetition_boost = 0.0;    // log-space boost on repeating the previous content token
    double hallucination_rate = 0.0;  // probability mass mixed toward uniform over content tokens
    double short_bias = 0.0;          // log-space boost on the end token
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Grammar-backed conditional model. Each known MR maps to its reference
/// realisations; the next-token distribution follows the matching templates
/// (earlier templates weighted higher), with the configured biases folded in
/// deterministically. Stands in for a trained model whose errors we control.
class SyntheticBiasedModel {
public:
    struct State {
        const std::vector<std::vector<TokenId>>* realisations = nullptr;  // borrowed from the model
        std::vector<TokenId> prefix;  // tokens consumed so far, including start
        bool terminal = false;
        std::uint64_t prefix_hash = 0xcbf29ce484222325ULL;
    };

    SyntheticBiasedModel(Vocabulary vocab, BiasConfig bias, std::uint64_t seed)
        : vocab_(std::move(vocab)), bias_(bias), seed_(seed) {}

    void add_grammar(const MeaningRepresentation& mr, std::vector<std::vector<TokenId>> realisations) {
        grammar_[format_mr(mr)] = std::move(realisations);
    }

    void add_dataset(const Dataset& data) {
        for (const Instance& inst : data.instances) add_grammar(inst.mr, inst.references);
    }

    const Vocabulary& vocab() const { return vocab_; }
    const BiasConfig& bias() const { return bias_; }

    State condition(const MeaningRepresentation& mr) const {
        State s;
        auto it = grammar_.find(format_mr(mr));
        s.realisations = it == grammar_.end() ? nullptr : &it->second;
        s.prefix_hash = splitmix64(seed_ ^ fnv1a64(format_mr(mr)));
        return s;
    }

    std::pair<State, NextTokenDistribution> step(const State& s, TokenId tok) const {
        if (tok < 0 || tok >= vocab_.size())
            throw InputError("step: token id " + std::to_string(tok) + " outside vocabulary");
        if (s.terminal || tok == reserved::kEnd)
            return {State{s.realisations, s.prefix, true, s.prefix_hash},
                    end_certain_distribution(vocab_.size())};
        State next = s;
        next.prefix.push_back(tok);
        next.prefix_hash = splitmix64(next.prefix_hash ^ static_cast<std::uint64_t>(tok));
        NextTokenDistribution dist = distribution_after(next);
        return {std::move(next), std::move(dist)};
    }

private:
    static constexpr double kFloor = 0.01;         // smoothing mass spread over the alphabet
    static constexpr double kJitterScale = 0.02;   // deterministic per-seed log-space noise

    NextTokenDistribution distribution_after(const State& s) const {
        int vsize = vocab_.size();
        std::size_t first_gen = reserved::kEnd;          // alphabet: end, unk, content
        std::size_t alphabet = static_cast<std::size_t>(vsize) - first_gen;
        std::size_t first_content = Vocabulary::first_content_id();
        std::size_t content_count = static_cast<std::size_t>(vsize) - first_content;

        // Grammar mass: templates extending the prefix vote for their next
        // token, earlier templates with twice the weight of the next.
        std::vector<double> probs(static_cast<std::size_t>(vsize), 0.0);
        double matched_weight = 0.0;
        if (s.realisations) {
            double w = 1.0;
            std::vector<std::pair<std::size_t, double>> votes;
            for (const auto& ref : *s.realisations) {
                if (ref.size() > s.prefix.size() &&
                    std::equal(s.prefix.begin(), s.prefix.end(), ref.begin()))
                    votes.emplace_back(static_cast<std::size_t>(ref[s.prefix.size()]), w);
                w *= 0.5;
            }
            double total = 0.0;
            for (const auto& [t, weight] : votes) total += weight;
            if (total > 0.0) {
                for (const auto& [t, weight] : votes) probs[t] += weight / total;
                matched_weight = 1.0;
            }
        }
        if (matched_weight == 0.0) {
            // Off-grammar prefix: prefer to terminate, spread the rest.
            if (content_count == 0) {
                probs[reserved::kEnd] += 1.0;
            } else {
                probs[reserved::kEnd] += 0.5;
                for (std::size_t t = first_content; t < probs.size(); ++t)
                    probs[t] += 0.5 / static_cast<double>(content_count);
            }
        }
        for (std::size_t t = first_gen; t < probs.size(); ++t)
            probs[t] = (1.0 - kFloor) * probs[t] + kFloor / static_cast<double>(alphabet);

        // Biases enter in log space, then a softmax renormalises.
        TokenId prev_content = -1;
        if (!s.prefix.empty() && s.prefix.back() >= static_cast<TokenId>(first_content))
            prev_content = s.prefix.back();
        std::vector<double> logits(probs.size(), kLogZero);
        double max_logit = kLogZero;
        for (std::size_t t = first_gen; t < probs.size(); ++t) {
            double z = std::log(probs[t]);
            if (static_cast<TokenId>(t) == prev_content) z += bias_.repetition_boost;
            if (t == reserved::kEnd) z += bias_.short_bias;
            std::uint64_t h = splitmix64(s.prefix_hash ^ (0x9e3779b97f4a7c15ULL * (t + 1)));
            z += kJitterScale * (2.0 * (static_cast<double>(h >> 11) * 0x1.0p-53) - 1.0);
            logits[t] = z;
            max_logit = std::max(max_logit, z);
        }
        double norm = 0.0;
        for (std::size_t t = first_gen; t < probs.size(); ++t) norm += std::exp(logits[t] - max_logit);
        for (std::size_t t = first_gen; t < probs.size(); ++t)
            probs[t] = std::exp(logits[t] - max_logit) / norm;

        if (bias_.hallucination_rate > 0.0 && content_count > 0) {
            double h = bias_.hallucination_rate;
            for (std::size_t t = first_gen; t < probs.size(); ++t) {
                probs[t] *= (1.0 - h);
                if (t >= first_content) probs[t] += h / static_cast<double>(content_count);
            }
        }

        NextTokenDistribution dist{Tensor({static_cast<std::size_t>(vsize)}, kLogZero)};
        for (std::size_t t = first_gen; t < probs.size(); ++t) dist.log_probs[t] = std::log(probs[t]);
        return dist;
    }

    Vocabulary vocab_;
    BiasConfig bias_;
    std::uint64_t seed_;
    std::map<std::string, std::vector<std::vector<TokenId>>> grammar_;
};

static_assert(SequenceModel<SyntheticBiasedModel>);
static_assert(SequenceModel<Seq2SeqModel>);

// ---------------------------------------------------------------------------
// Synthetic task generation

struct SyntheticSpec {
    int slot_types = 5;           // 3..6
    int values_per_slot = 3;      // 2..5
    int templates_per_shape = 2;  // 1..3
    int train_instances = 200;
    int validation_instances = 100;
    int test_instances = 100;
    BiasConfig bias;
    std::uint64_t seed = 1;
};

struct SyntheticTask {
    SyntheticSpec spec;
    Vocabulary vocab;
    std::vector<DatasetRow> train_rows, validation_rows, test_rows;
    Dataset train, validation, test;

    SyntheticBiasedModel make_model() const {
        SyntheticBiasedModel model(vocab, spec.bias, spec.seed);
        model.add_dataset(train);
        model.add_dataset(validation);
        model.add_dataset(test);
        return model;
    }
};

namespace detail {

inline const std::array<std::string, 6>& synthetic_slot_pool() {
    static const std::array<std::string, 6> pool = {"name", "eattype", "food", "price", "area", "rating"};
    return pool;
}

inline const std::array<std::array<std::string, 5>, 6>& synthetic_value_pool() {
    static const std::array<std::array<std::string, 5>, 6> pool = {{
        {"alba", "bellfield", "cascade", "dunmore", "elmwood"},
        {"pub", "bistro", "cafe", "diner", "tavern"},
        {"english", "french", "italian", "indian", "thai"},
        {"cheap", "moderate", "expensive", "premium", "budget"},
        {"riverside", "downtown", "uptown", "harbour", "midtown"},
        {"low", "average", "high", "excellent", "poor"},
    }};
    return pool;
}

inline std::string slot_value(const MeaningRepresentation& mr, const std::string& name) {
    for (const auto& [n, v] : mr.slots)
        if (n == name) return v;
    return {};
}

inline std::string realize_template(const MeaningRepresentation& mr, int pattern) {
    std::string name = slot_value(mr, "name");
    std::string eattype = slot_value(mr, "eattype");
    std::string food = slot_value(mr, "food");
    std::string price = slot_value(mr, "price");
    std::string area = slot_value(mr, "area");
    std::string rating = slot_value(mr, "rating");
    std::string kind = eattype.empty() ? "place" : eattype;
    std::vector<std::string> words;
    auto emit = [&words](std::initializer_list<std::string> ws) {
        for (const auto& w : ws)
            if (!w.empty()) words.push_back(w);
    };
    switch (pattern) {
        case 0:
            emit({name, "is", "a"});
            if (!price.empty()) emit({price});
            if (!food.empty()) emit({food});
            emit({kind});
            if (!area.empty()) emit({"in", "the", area});
            if (!rating.empty()) emit({"with", "a", rating, "rating"});
            break;
        case 1:
            emit({"there", "is", "a"});
            if (!rating.empty()) emit({rating, "rated"});
            if (!food.empty()) emit({food});
            emit({kind, "called", name});
            if (!area.empty()) emit({"in", "the", area});
            if (!price.empty()) emit({"at", price, "prices"});
            break;
        default:
            emit({"the", kind, name, "serves"});
            emit({food.empty() ? std::string("good") : food, "food"});
            if (!price.empty()) emit({"at", price, "prices"});
            if (!area.empty()) emit({"near", "the", area});
            if (!rating.empty()) emit({"rated", rating});
            break;
    }
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out += ' ';
        out += words[i];
    }
    return out;
}

}  // namespace detail

inline void validate_synthetic_spec(const SyntheticSpec& spec) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("synthetic spec field '" + field + "': " + why);
    };
    if (spec.slot_types < 3 || spec.slot_types > 6) fail("slot_types", "must be in [3, 6]");
    if (spec.values_per_slot < 2 || spec.values_per_slot > 5) fail("values_per_slot", "must be in [2, 5]");
    if (spec.templates_per_shape < 1 || spec.templates_per_shape > 3)
        fail("templates_per_shape", "must be in [1, 3]");
    if (spec.train_instances < 1) fail("train_instances", "must be positive");
    if (spec.validation_instances < 0) fail("validation_instances", "must be non-negative");
    if (spec.test_instances < 0) fail("test_instances", "must be non-negative");
    if (spec.bias.repetition_boost < 0) fail("bias.repetition_boost", "must be >= 0");
    if (spec.bias.short_bias < 0) fail("bias.short_bias", "must be >= 0");
    if (spec.bias.hallucination_rate < 0 || spec.bias.hallucination_rate > 1)
        fail("bias.hallucination_rate", "must be in [0, 1]");
}

/// Deterministically generates the synthetic task: every distinct MR in the
/// universe is enumerated, shuffled by the seed, and dealt into splits. Each
/// MR gets templates_per_shape references.
inline SyntheticTask gen_synthetic(const SyntheticSpec& spec) {
    validate_synthetic_spec(spec);
    const auto& slots = detail::synthetic_slot_pool();
    const auto& values = detail::synthetic_value_pool();
    int v = spec.values_per_slot;

    // Universe: name is always present; every subset of the other slots forms
    // a shape; values vary per present slot.
    std::vector<MeaningRepresentation> universe;
    int others = spec.slot_types - 1;
    for (int mask = 0; mask < (1 << others); ++mask) {
        std::vector<int> present{0};
        for (int s = 0; s < others; ++s)
            if (mask & (1 << s)) present.push_back(s + 1);
        std::vector<int> combo(present.size(), 0);
        while (true) {
            MeaningRepresentation mr;
            for (std::size_t i = 0; i < present.size(); ++i)
                mr.slots.emplace_back(slots[static_cast<std::size_t>(present[i])],
                                      values[static_cast<std::size_t>(present[i])][static_cast<std::size_t>(combo[i])]);
            universe.push_back(std::move(mr));
            std::size_t pos = 0;
            while (pos < combo.size() && ++combo[pos] == v) combo[pos++] = 0;
            if (pos == combo.size()) break;
        }
    }
    std::size_t needed = static_cast<std::size_t>(spec.train_instances) +
                         static_cast<std::size_t>(spec.validation_instances) +
                         static_cast<std::size_t>(spec.test_instances);
    if (universe.size() < needed)
        throw ConfigError("synthetic spec field 'train_instances': splits need " + std::to_string(needed) +
                          " distinct MRs but the grammar only has " + std::to_string(universe.size()));

    std::mt19937_64 rng(spec.seed);
    shuffle_portable(universe, rng);

    SyntheticTask task;
    task.spec = spec;
    auto deal = [&](std::size_t offset, int count) {
        std::vector<DatasetRow> rows;
        for (int i = 0; i < count; ++i) {
            const MeaningRepresentation& mr = universe[offset + static_cast<std::size_t>(i)];
            for (int p = 0; p < spec.templates_per_shape; ++p)
                rows.push_back(DatasetRow{format_mr(mr), detail::realize_template(mr, p)});
        }
        return rows;
    };
    task.train_rows = deal(0, spec.train_instances);
    task.validation_rows = deal(static_cast<std::size_t>(spec.train_instances), spec.validation_instances);
    task.test_rows = deal(static_cast<std::size_t>(spec.train_instances + spec.validation_instances),
                          spec.test_instances);

    grow_vocabulary(task.vocab, task.train_rows);
    grow_vocabulary(task.vocab, task.validation_rows);
    grow_vocabulary(task.vocab, task.test_rows);
    task.train = rows_to_dataset(task.train_rows, task.vocab, Split::train);
    task.validation = rows_to_dataset(task.validation_rows, task.vocab, Split::validation);
    task.test = rows_to_dataset(task.test_rows, task.vocab, Split::test);
    return task;
}

}  // namespace beamkit
