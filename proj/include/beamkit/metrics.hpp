#pragma once

#include <map>

#include "beamkit/core.hpp"
#include "beamkit/decode.hpp"

namespace beamkit {

struct BleuReport {
    double score = 0.0;             // [0, 1]
    std::array<double, 4> precisions = {0, 0, 0, 0};
    double brevity_penalty = 1.0;
    long long candidate_len = 0;
    long long effective_ref_len = 0;
};

namespace detail {

inline std::vector<TokenId> strip_markers(const std::vector<TokenId>& tokens) {
    std::vector<TokenId> out;
    out.reserve(tokens.size());
    for (TokenId t : tokens)
        if (t != reserved::kPad && t != reserved::kStart && t != reserved::kEnd) out.push_back(t);
    return out;
}

using NgramCounts = std::map<std::vector<TokenId>, long long>;

inline NgramCounts ngram_counts(const std::vector<TokenId>& tokens, std::size_t n) {
    NgramCounts counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[std::vector<TokenId>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

struct BleuTallies {
    std::array<long long, 4> matched = {0, 0, 0, 0};
    std::array<long long, 4> total = {0, 0, 0, 0};
    long long candidate_len = 0;
    long long effective_ref_len = 0;
};

/// Clipped n-gram matches for one candidate against its references, plus the
/// closest reference length (ties to the shorter reference).
inline BleuTallies tally_pair(const std::vector<TokenId>& candidate,
                              const std::vector<std::vector<TokenId>>& references) {
    if (references.empty()) throw InputError("sentence_bleu: references must be nonempty");
    BleuTallies t;
    std::vector<TokenId> cand = strip_markers(candidate);
    std::vector<std::vector<TokenId>> refs;
    refs.reserve(references.size());
    for (const auto& r : references) refs.push_back(strip_markers(r));

    t.candidate_len = static_cast<long long>(cand.size());
    long long best_len = static_cast<long long>(refs.front().size());
    for (const auto& r : refs) {
        long long len = static_cast<long long>(r.size());
        long long a = std::llabs(len - t.candidate_len), b = std::llabs(best_len - t.candidate_len);
        if (a < b || (a == b && len < best_len)) best_len = len;
    }
    t.effective_ref_len = best_len;

    for (std::size_t n = 1; n <= 4; ++n) {
        NgramCounts cc = ngram_counts(cand, n);
        NgramCounts max_ref;
        for (const auto& r : refs)
            for (const auto& [gram, count] : ngram_counts(r, n))
                max_ref[gram] = std::max(max_ref[gram], count);
        long long matched = 0, total = 0;
        for (const auto& [gram, count] : cc) {
            total += count;
            auto it = max_ref.find(gram);
            if (it != max_ref.end()) matched += std::min(count, it->second);
        }
        t.matched[n - 1] = matched;
        t.total[n - 1] = total;
    }
    return t;
}

inline BleuReport finish_bleu(const BleuTallies& t, bool smooth) {
    BleuReport report;
    report.candidate_len = t.candidate_len;
    report.effective_ref_len = t.effective_ref_len;
    if (t.candidate_len == 0) return report;  // empty candidate scores 0

    double log_sum = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
        double p;
        if (t.total[n] == 0) {
            p = 1.0;  // candidate shorter than n: no n-grams to judge
        } else if (t.matched[n] == 0 && n > 0 && smooth) {
            p = 1.0 / static_cast<double>(t.total[n] + 1);  // add-one on zero higher-order counts
        } else {
            p = static_cast<double>(t.matched[n]) / static_cast<double>(t.total[n]);
        }
        report.precisions[n] = p;
        if (p > 0.0) log_sum += std::log(p);
    }
    report.brevity_penalty =
        t.candidate_len >= t.effective_ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(t.effective_ref_len) / static_cast<double>(t.candidate_len));
    bool any_zero = false;
    for (double p : report.precisions) any_zero = any_zero || p == 0.0;
    report.score = any_zero ? 0.0 : report.brevity_penalty * std::exp(log_sum / 4.0);
    return report;
}

}  // namespace detail

/// Modified 4-gram precision with per-reference clipping, add-one smoothing
/// on zero higher-order counts, and brevity penalty against the closest
/// reference length.
inline BleuReport sentence_bleu(const std::vector<TokenId>& candidate,
                                const std::vector<std::vector<TokenId>>& references) {
    return detail::finish_bleu(detail::tally_pair(candidate, references), /*smooth=*/true);
}

/// Corpus-level BLEU: counts and lengths are pooled over all pairs before the
/// precisions and brevity penalty are computed. No smoothing.
inline BleuReport corpus_bleu(
    const std::vector<std::pair<std::vector<TokenId>, std::vector<std::vector<TokenId>>>>& pairs) {
    if (pairs.empty()) throw InputError("corpus_bleu: empty corpus");
    detail::BleuTallies pooled;
    for (const auto& [candidate, references] : pairs) {
        detail::BleuTallies t = detail::tally_pair(candidate, references);
        for (std::size_t n = 0; n < 4; ++n) {
            pooled.matched[n] += t.matched[n];
            pooled.total[n] += t.total[n];
        }
        pooled.candidate_len += t.candidate_len;
        pooled.effective_ref_len += t.effective_ref_len;
    }
    return detail::finish_bleu(pooled, /*smooth=*/false);
}

struct FalloutRecord {
    int step = 0;
    int reachable_count = 0;  // beams holding a prefix of some reference
    int contained_count = 0;  // beams holding a completed reference
    int total = 0;
};

namespace detail {

inline bool is_prefix(const std::vector<TokenId>& prefix, const std::vector<TokenId>& full) {
    return prefix.size() <= full.size() && std::equal(prefix.begin(), prefix.end(), full.begin());
}

}  // namespace detail

/// Decodes every instance and reports, per step, how many beams still hold a
/// hypothesis that can extend to a reference and how many hold a completed
/// reference. Beams freeze at their last snapshot once decoding stops.
template <SequenceModel M, typename S = NoScorer>
std::vector<FalloutRecord> fallout_analysis(const M& model, const Dataset& data,
                                            const DecodeConfig& config, const S* scorer = nullptr) {
    std::vector<DecodeTrace> traces;
    traces.reserve(data.instances.size());
    std::size_t max_len = 0;
    for (const Instance& inst : data.instances) {
        if (inst.references.empty()) throw InputError("fallout_analysis: instance without references");
        traces.push_back(beam_search(model, inst.mr, config, scorer).trace);
        max_len = std::max(max_len, traces.back().steps.size());
    }
    std::vector<FalloutRecord> records;
    for (std::size_t t = 0; t < max_len; ++t) {
        FalloutRecord rec;
        rec.step = static_cast<int>(t);
        rec.total = static_cast<int>(data.instances.size());
        for (std::size_t i = 0; i < traces.size(); ++i) {
            const auto& steps = traces[i].steps;
            const BeamSnapshot& snap = steps[std::min(t, steps.size() - 1)];
            bool reachable = false, contained = false;
            for (const auto& tokens : snap.tokens) {
                for (const auto& ref : data.instances[i].references) {
                    if (detail::is_prefix(tokens, ref)) {
                        reachable = true;
                        if (tokens.size() == ref.size()) contained = true;
                    }
                }
                if (reachable && contained) break;
            }
            rec.reachable_count += reachable ? 1 : 0;
            rec.contained_count += contained ? 1 : 0;
        }
        records.push_back(rec);
    }
    return records;
}

struct PermutationTestResult {
    double observed_diff = 0.0;
    double p_value = 1.0;
    int permutations = 0;
};

/// Paired two-sided sign-flip test on mean(a - b) with add-one correction.
inline PermutationTestResult permutation_test(const std::vector<double>& scores_a,
                                              const std::vector<double>& scores_b, int permutations,
                                              std::uint64_t seed) {
    if (scores_a.size() != scores_b.size())
        throw InputError("permutation_test: score lists must be paired");
    if (scores_a.empty()) throw InputError("permutation_test: empty score lists");
    if (permutations < 1) throw InputError("permutation_test: permutations must be >= 1");

    std::size_t n = scores_a.size();
    std::vector<double> diffs(n);
    double observed = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        diffs[i] = scores_a[i] - scores_b[i];
        observed += diffs[i];
    }
    observed /= static_cast<double>(n);

    std::mt19937_64 rng(seed);
    long long at_least = 0;
    double threshold = std::abs(observed);
    for (int p = 0; p < permutations; ++p) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += (rng() & 1ULL) ? diffs[i] : -diffs[i];
        if (std::abs(sum / static_cast<double>(n)) >= threshold) ++at_least;
    }
    PermutationTestResult result;
    result.observed_diff = observed;
    result.permutations = permutations;
    result.p_value = static_cast<double>(at_least + 1) / static_cast<double>(permutations + 1);
    return result;
}

}  // namespace beamkit
