#include <catch2/catch_amalgamated.hpp>

#include "beamkit/metrics.hpp"
#include "beamkit/synthetic.hpp"

using namespace beamkit;

namespace {

std::vector<TokenId> seq(std::initializer_list<TokenId> ids) {
    std::vector<TokenId> out{reserved::kStart};
    out.insert(out.end(), ids);
    out.push_back(reserved::kEnd);
    return out;
}

// Independent n-gram precision oracle: joins ids into strings and counts by
// linear scanning, with per-reference clipping done the long way.
void oracle_counts(const std::vector<TokenId>& cand_in, const std::vector<std::vector<TokenId>>& refs_in,
                   std::size_t n, long long& matched, long long& total) {
    auto strip = [](const std::vector<TokenId>& v) {
        std::vector<TokenId> out;
        for (TokenId t : v)
            if (t != reserved::kPad && t != reserved::kStart && t != reserved::kEnd) out.push_back(t);
        return out;
    };
    std::vector<TokenId> cand = strip(cand_in);
    auto gram_at = [&](const std::vector<TokenId>& v, std::size_t i) {
        std::string g;
        for (std::size_t k = 0; k < n; ++k) g += std::to_string(v[i + k]) + "|";
        return g;
    };
    std::vector<std::string> cand_grams;
    for (std::size_t i = 0; i + n <= cand.size(); ++i) cand_grams.push_back(gram_at(cand, i));
    total = static_cast<long long>(cand_grams.size());

    matched = 0;
    std::vector<std::string> distinct = cand_grams;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (const std::string& g : distinct) {
        long long in_cand = static_cast<long long>(std::count(cand_grams.begin(), cand_grams.end(), g));
        long long best_ref = 0;
        for (const auto& ref_raw : refs_in) {
            std::vector<TokenId> ref = strip(ref_raw);
            long long c = 0;
            for (std::size_t i = 0; i + n <= ref.size(); ++i)
                if (gram_at(ref, i) == g) ++c;
            best_ref = std::max(best_ref, c);
        }
        matched += std::min(in_cand, best_ref);
    }
}

}  // namespace

TEST_CASE("sentence bleu of a candidate equal to its reference is exactly 1") {
    auto cand = seq({5, 6, 7, 8, 9});
    BleuReport r = sentence_bleu(cand, {cand});
    CHECK(r.score == 1.0);
    CHECK(r.brevity_penalty == 1.0);
    for (double p : r.precisions) CHECK(p == 1.0);
}

TEST_CASE("sentence bleu matches the hand-counted five-token fixture") {
    // candidate a b c d e vs reference a b c d f
    auto cand = seq({5, 6, 7, 8, 9});
    auto ref = seq({5, 6, 7, 8, 10});
    BleuReport r = sentence_bleu(cand, {ref});
    CHECK(r.precisions[0] == Catch::Approx(4.0 / 5.0).margin(1e-12));
    CHECK(r.precisions[1] == Catch::Approx(3.0 / 4.0).margin(1e-12));
    CHECK(r.precisions[2] == Catch::Approx(2.0 / 3.0).margin(1e-12));
    CHECK(r.precisions[3] == Catch::Approx(1.0 / 2.0).margin(1e-12));
    CHECK(r.brevity_penalty == 1.0);

    double expected = 1.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        long long matched = 0, total = 0;
        oracle_counts(cand, {ref}, n, matched, total);
        expected *= static_cast<double>(matched) / static_cast<double>(total);
    }
    expected = std::pow(expected, 0.25);
    CHECK(r.score == Catch::Approx(expected).margin(1e-9));
}

TEST_CASE("brevity penalty follows exp(1 - r/c) for short candidates") {
    std::vector<TokenId> cand{reserved::kStart};
    for (int i = 0; i < 9; ++i) cand.push_back(5);
    cand.push_back(reserved::kEnd);
    std::vector<TokenId> ref{reserved::kStart};
    for (int i = 0; i < 10; ++i) ref.push_back(5);
    ref.push_back(reserved::kEnd);
    BleuReport r = sentence_bleu(cand, {ref});
    CHECK(r.brevity_penalty == Catch::Approx(std::exp(1.0 - 10.0 / 9.0)).margin(1e-12));
    CHECK(r.candidate_len == 9);
    CHECK(r.effective_ref_len == 10);
}

TEST_CASE("closest reference length breaks ties toward the shorter reference") {
    auto cand = seq({5, 6, 7});
    auto shorter = seq({5, 6});
    auto longer = seq({5, 6, 7, 8});
    BleuReport r = sentence_bleu(cand, {longer, shorter});
    CHECK(r.effective_ref_len == 2);
}

TEST_CASE("sentence bleu edge cases") {
    SECTION("empty candidate scores zero") {
        BleuReport r = sentence_bleu({reserved::kStart, reserved::kEnd}, {seq({5, 6})});
        CHECK(r.score == 0.0);
        CHECK(r.candidate_len == 0);
    }
    SECTION("no unigram overlap scores zero") {
        BleuReport r = sentence_bleu(seq({9, 9, 9}), {seq({5, 6, 7})});
        CHECK(r.score == 0.0);
        CHECK(r.precisions[0] == 0.0);
    }
    SECTION("zero higher-order counts get add-one smoothing") {
        // unigrams overlap but no bigram does
        BleuReport r = sentence_bleu(seq({5, 7, 6}), {seq({5, 6, 7})});
        CHECK(r.precisions[0] == 1.0);
        CHECK(r.precisions[1] == Catch::Approx(1.0 / 3.0).margin(1e-12));  // (0+1)/(2+1)
        CHECK(r.score > 0.0);
    }
    SECTION("references must be nonempty") {
        CHECK_THROWS_AS(sentence_bleu(seq({5}), {}), InputError);
    }
    SECTION("reference order never matters") {
        auto cand = seq({5, 6, 7, 8});
        std::vector<std::vector<TokenId>> refs = {seq({5, 6, 9}), seq({6, 7, 8}), seq({5})};
        BleuReport a = sentence_bleu(cand, refs);
        std::reverse(refs.begin(), refs.end());
        BleuReport b = sentence_bleu(cand, refs);
        CHECK(a.score == b.score);
    }
}

TEST_CASE("corpus bleu") {
    SECTION("all candidates equal to references scores 1") {
        std::vector<std::pair<std::vector<TokenId>, std::vector<std::vector<TokenId>>>> pairs;
        pairs.emplace_back(seq({5, 6, 7, 8}), std::vector<std::vector<TokenId>>{seq({5, 6, 7, 8})});
        pairs.emplace_back(seq({9, 10, 11, 12}), std::vector<std::vector<TokenId>>{seq({9, 10, 11, 12})});
        CHECK(corpus_bleu(pairs).score == 1.0);
    }
    SECTION("a single all-positive pair equals the unsmoothed sentence computation") {
        auto cand = seq({5, 6, 7, 8, 9});
        auto ref = seq({5, 6, 7, 8, 10});
        std::vector<std::pair<std::vector<TokenId>, std::vector<std::vector<TokenId>>>> pairs{
            {cand, {ref}}};
        CHECK(corpus_bleu(pairs).score == Catch::Approx(sentence_bleu(cand, {ref}).score).margin(1e-12));
    }
    SECTION("two-pair corpus matches the hand oracle") {
        auto c1 = seq({5, 6, 7, 8, 9});
        auto r1 = seq({5, 6, 7, 8, 10});
        auto c2 = seq({11, 12, 13, 14});
        auto r2 = seq({11, 12, 14, 13});
        std::vector<std::pair<std::vector<TokenId>, std::vector<std::vector<TokenId>>>> pairs{
            {c1, {r1}}, {c2, {r2}}};
        BleuReport got = corpus_bleu(pairs);

        double log_sum = 0.0;
        for (std::size_t n = 1; n <= 4; ++n) {
            long long m1, t1, m2, t2;
            oracle_counts(c1, {r1}, n, m1, t1);
            oracle_counts(c2, {r2}, n, m2, t2);
            log_sum += std::log(static_cast<double>(m1 + m2) / static_cast<double>(t1 + t2));
        }
        double expected = std::exp(log_sum / 4.0);  // equal lengths: BP = 1
        CHECK(got.score == Catch::Approx(expected).margin(1e-9));
    }
    SECTION("reordering the corpus changes nothing") {
        std::vector<std::pair<std::vector<TokenId>, std::vector<std::vector<TokenId>>>> pairs;
        std::mt19937_64 rng(3);
        for (int i = 0; i < 12; ++i) {
            std::vector<TokenId> cand{reserved::kStart}, ref{reserved::kStart};
            int len = 3 + static_cast<int>(uniform_index(rng, 5));
            for (int t = 0; t < len; ++t) {
                cand.push_back(static_cast<TokenId>(5 + uniform_index(rng, 6)));
                ref.push_back(static_cast<TokenId>(5 + uniform_index(rng, 6)));
            }
            cand.push_back(reserved::kEnd);
            ref.push_back(reserved::kEnd);
            pairs.emplace_back(cand, std::vector<std::vector<TokenId>>{ref, cand});
        }
        double base = corpus_bleu(pairs).score;
        for (int trial = 0; trial < 5; ++trial) {
            shuffle_portable(pairs, rng);
            CHECK(corpus_bleu(pairs).score == Catch::Approx(base).margin(1e-12));
        }
    }
    SECTION("empty corpus is rejected") {
        CHECK_THROWS_AS(corpus_bleu({}), InputError);
    }
}

TEST_CASE("fallout analysis counts reachable and contained references") {
    Vocabulary v;
    for (const char* w : {"name", "alba", "serves", "thai", "food"}) v.add(w);
    MeaningRepresentation mr{{{"name", "alba"}}};
    SyntheticBiasedModel model(v, BiasConfig{}, 3);
    model.add_grammar(mr, {tokenize("alba serves thai food", v), tokenize("thai food", v)});

    Dataset data;
    data.split = Split::validation;
    Instance inst;
    inst.mr = mr;
    inst.references = {tokenize("alba serves thai food", v), tokenize("thai food", v)};
    data.instances = {inst};

    DecodeConfig config;
    config.beam_size = 4;
    config.max_steps = 12;
    auto records = fallout_analysis(model, data, config);
    REQUIRE(!records.empty());

    // Step 0 holds only the start hypothesis, a prefix of every reference.
    CHECK(records[0].reachable_count == 1);
    CHECK(records[0].contained_count == 0);
    CHECK(records[0].total == 1);

    // The unbiased model keeps and finishes the gold reference.
    CHECK(records.back().contained_count == 1);
    CHECK(records.back().reachable_count == 1);

    // A completed reference also counts as reachable (prefix of itself), and
    // contained never drops while the beam still holds the prefix.
    for (std::size_t t = 1; t < records.size(); ++t) {
        CHECK(records[t].contained_count <= records[t].reachable_count);
        CHECK(records[t].contained_count >= records[t - 1].contained_count);
    }
}

TEST_CASE("fallout requires references") {
    Vocabulary v;
    SyntheticBiasedModel model(v, BiasConfig{}, 3);
    Dataset data;
    data.instances = {Instance{}};
    DecodeConfig config;
    CHECK_THROWS_AS(fallout_analysis(model, data, config), InputError);
}

TEST_CASE("permutation test") {
    SECTION("identical scores give p = 1 and zero diff") {
        std::vector<double> a{0.5, 0.7, 0.9};
        PermutationTestResult r = permutation_test(a, a, 1000, 11);
        CHECK(r.observed_diff == 0.0);
        CHECK(r.p_value == 1.0);
    }
    SECTION("a constant +1 shift over 20 instances is significant") {
        std::vector<double> a, b;
        std::mt19937_64 rng(5);
        for (int i = 0; i < 20; ++i) {
            double base = uniform_in(rng, 0.0, 1.0);
            b.push_back(base);
            a.push_back(base + 1.0);
        }
        PermutationTestResult r = permutation_test(a, b, 10000, 13);
        CHECK(r.observed_diff == Catch::Approx(1.0).margin(1e-12));
        CHECK(r.p_value <= 0.01);
        CHECK(r.p_value >= 1.0 / 10001.0);
    }
    SECTION("deterministic given the seed, diff independent of permutations") {
        std::vector<double> a{0.1, 0.5, 0.9, 0.2}, b{0.3, 0.4, 0.8, 0.1};
        PermutationTestResult r1 = permutation_test(a, b, 500, 17);
        PermutationTestResult r2 = permutation_test(a, b, 500, 17);
        PermutationTestResult r3 = permutation_test(a, b, 1000, 17);
        CHECK(r1.p_value == r2.p_value);
        CHECK(r1.observed_diff == r3.observed_diff);
    }
    SECTION("mismatched lengths are rejected") {
        CHECK_THROWS_AS(permutation_test({1.0}, {1.0, 2.0}, 10, 1), InputError);
        CHECK_THROWS_AS(permutation_test({}, {}, 10, 1), InputError);
    }
}
