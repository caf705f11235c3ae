#pragma once

#include <fstream>

#include "json.hpp"

#include "beamkit/decode.hpp"
#include "beamkit/metrics.hpp"
#include "beamkit/model.hpp"
#include "beamkit/ranker.hpp"
#include "beamkit/synthetic.hpp"

namespace beamkit {

using json = nlohmann::json;

inline constexpr const char* kCheckpointFormat = "beamkit-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline json vocab_to_json(const Vocabulary& vocab) {
    json arr = json::array();
    for (const Token& t : vocab.tokens()) arr.push_back(t.surface);
    return arr;
}

inline Vocabulary vocab_from_json(const json& arr) {
    Vocabulary vocab;
    if (!arr.is_array() || arr.size() < 4) throw ConfigError("checkpoint vocab must list the reserved tokens");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        std::string surface = arr[i].get<std::string>();
        if (i < 4) {
            if (vocab.surface(static_cast<TokenId>(i)) != surface)
                throw ConfigError("checkpoint vocab reserved token mismatch at id " + std::to_string(i));
            continue;
        }
        if (vocab.add(surface) != static_cast<TokenId>(i))
            throw ConfigError("checkpoint vocab has duplicate surface: " + surface);
    }
    return vocab;
}

inline json tensors_to_json(std::vector<NamedParam> params) {
    json arr = json::array();
    for (const NamedParam& p : params) {
        json entry;
        entry["name"] = p.name;
        entry["shape"] = p.value->shape();
        entry["data"] = p.value->values();
        arr.push_back(std::move(entry));
    }
    return arr;
}

/// Copies tensors by name into params; every shape must match exactly and
/// every parameter must be present.
inline void tensors_from_json(const json& arr, std::vector<NamedParam> params) {
    std::unordered_map<std::string, NamedParam*> by_name;
    for (NamedParam& p : params) by_name[p.name] = &p;
    std::size_t loaded = 0;
    for (const json& entry : arr) {
        std::string name = entry.at("name").get<std::string>();
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError("checkpoint has unknown tensor: " + name);
        std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape != it->second->value->shape())
            throw ConfigError("checkpoint tensor shape mismatch for " + name);
        std::vector<double> data = entry.at("data").get<std::vector<double>>();
        if (data.size() != it->second->value->size())
            throw ConfigError("checkpoint tensor size mismatch for " + name);
        it->second->value->values() = std::move(data);
        ++loaded;
    }
    if (loaded != params.size())
        throw ConfigError("checkpoint is missing tensors: expected " + std::to_string(params.size()) +
                          ", found " + std::to_string(loaded));
}

inline json read_json_file(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw ConfigError(std::string("cannot open ") + what + ": " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed JSON in ") + path + ": " + e.what());
    }
    return j;
}

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << j.dump(2) << '\n';
}

}  // namespace detail

inline void save_seq2seq(Seq2SeqModel& model, const std::string& path) {
    json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["kind"] = "seq2seq";
    j["hidden_size"] = model.hidden_size();
    j["vocab"] = detail::vocab_to_json(model.vocab());
    j["tensors"] = detail::tensors_to_json(model.parameters());
    detail::write_json_file(path, j);
}

inline Seq2SeqModel load_seq2seq(const std::string& path) {
    json j = detail::read_json_file(path, "model checkpoint");
    if (j.value("format", "") != kCheckpointFormat || j.value("kind", "") != "seq2seq")
        throw ConfigError("not a seq2seq checkpoint: " + path);
    if (j.value("version", 0) != kCheckpointVersion)
        throw ConfigError("unsupported checkpoint version in " + path);
    Vocabulary vocab = detail::vocab_from_json(j.at("vocab"));
    Seq2SeqModel model(std::move(vocab), j.at("hidden_size").get<std::size_t>(), /*seed=*/0);
    detail::tensors_from_json(j.at("tensors"), model.parameters());
    return model;
}

inline void save_pointwise_ranker(PointwiseRanker& ranker, const std::string& path) {
    json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["kind"] = "pointwise_ranker";
    j["hidden_size"] = ranker.hidden_size();
    j["b_max"] = ranker.b_max();
    j["vocab"] = detail::vocab_to_json(ranker.vocab());
    j["tensors"] = detail::tensors_to_json(ranker.parameters());
    detail::write_json_file(path, j);
}

inline PointwiseRanker load_pointwise_ranker(const std::string& path) {
    json j = detail::read_json_file(path, "ranker checkpoint");
    if (j.value("format", "") != kCheckpointFormat || j.value("kind", "") != "pointwise_ranker")
        throw ConfigError("not a pointwise ranker checkpoint: " + path);
    if (j.value("version", 0) != kCheckpointVersion)
        throw ConfigError("unsupported checkpoint version in " + path);
    Vocabulary vocab = detail::vocab_from_json(j.at("vocab"));
    PointwiseRanker ranker(std::move(vocab), j.at("hidden_size").get<std::size_t>(),
                           j.at("b_max").get<int>(), /*seed=*/0);
    detail::tensors_from_json(j.at("tensors"), ranker.parameters());
    return ranker;
}

// ---------------------------------------------------------------------------
// DecodeConfig <-> JSON. manipulation_steps accepts integers and "final".

inline DecodeConfig decode_config_from_json(const json& j) {
    static const std::set<std::string> known = {"beam_size",   "max_steps",          "strategy",
                                                "manipulation_steps", "final_rerank", "ranker"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError("decode config has unknown key: " + key);

    DecodeConfig config;
    config.beam_size = j.value("beam_size", config.beam_size);
    config.max_steps = j.value("max_steps", config.max_steps);
    if (j.contains("strategy")) {
        const json& s = j.at("strategy");
        std::string kind = s.value("kind", "model_logprob");
        if (kind == "model_logprob") config.strategy.kind = RankKind::model_logprob;
        else if (kind == "length_normalised") config.strategy.kind = RankKind::length_normalised;
        else throw ConfigError("unknown ranking strategy: " + kind);
        config.strategy.alpha = s.value("alpha", 1.0);
    }
    if (j.contains("manipulation_steps")) {
        for (const json& item : j.at("manipulation_steps")) {
            if (item.is_string()) {
                if (item.get<std::string>() != "final")
                    throw ConfigError("manipulation_steps entries must be integers or \"final\"");
                config.manipulate_final = true;
            } else if (item.is_number_integer()) {
                config.manipulation_steps.insert(item.get<int>());
            } else {
                throw ConfigError("manipulation_steps entries must be integers or \"final\"");
            }
        }
    }
    config.final_rerank = j.value("final_rerank", false);
    config.ranker_path = j.value("ranker", std::string());
    return config;
}

inline json decode_config_to_json(const DecodeConfig& config) {
    json j;
    j["beam_size"] = config.beam_size;
    j["max_steps"] = config.max_steps;
    j["strategy"] = {{"kind", config.strategy.kind == RankKind::model_logprob ? "model_logprob"
                                                                              : "length_normalised"},
                     {"alpha", config.strategy.alpha}};
    json steps = json::array();
    for (int s : config.manipulation_steps) steps.push_back(s);
    if (config.manipulate_final) steps.push_back("final");
    j["manipulation_steps"] = steps;
    j["final_rerank"] = config.final_rerank;
    if (!config.ranker_path.empty()) j["ranker"] = config.ranker_path;
    return j;
}

inline DecodeConfig load_decode_config(const std::string& path) {
    return decode_config_from_json(detail::read_json_file(path, "decode config"));
}

// ---------------------------------------------------------------------------
// Ranker training data: line-delimited JSON, one beam per line.

inline void write_ranker_data(const std::vector<RankerTrainingBeam>& beams, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write ranker data file: " + path);
    for (const RankerTrainingBeam& beam : beams) {
        json j;
        j["mr"] = format_mr(beam.mr);
        j["mr_tokens"] = beam.mr_tokens;
        json examples = json::array();
        for (std::size_t i = 0; i < beam.examples.size(); ++i) {
            const RankerExample& ex = beam.examples[i];
            examples.push_back({{"text_tokens", ex.text_tokens},
                                {"model_rank", ex.model_rank},
                                {"target", ex.target},
                                {"bleu", beam.bleu_scores[i]}});
        }
        j["examples"] = std::move(examples);
        out << j.dump() << '\n';
    }
}

inline std::vector<RankerTrainingBeam> read_ranker_data(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open ranker data file: " + path);
    std::vector<RankerTrainingBeam> beams;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, /*allow_exceptions=*/true);
        RankerTrainingBeam beam;
        beam.mr = parse_mr(j.at("mr").get<std::string>());
        beam.mr_tokens = j.at("mr_tokens").get<std::vector<TokenId>>();
        for (const json& e : j.at("examples")) {
            RankerExample ex;
            ex.mr_tokens = beam.mr_tokens;
            ex.text_tokens = e.at("text_tokens").get<std::vector<TokenId>>();
            ex.model_rank = e.at("model_rank").get<int>();
            ex.target = e.at("target").get<double>();
            beam.examples.push_back(std::move(ex));
            beam.bleu_scores.push_back(e.at("bleu").get<double>());
        }
        beams.push_back(std::move(beam));
    }
    return beams;
}

// ---------------------------------------------------------------------------
// Synthetic spec <-> JSON (the task sidecar).

inline json synthetic_spec_to_json(const SyntheticSpec& spec) {
    json j;
    j["slot_types"] = spec.slot_types;
    j["values_per_slot"] = spec.values_per_slot;
    j["templates_per_shape"] = spec.templates_per_shape;
    j["train_instances"] = spec.train_instances;
    j["validation_instances"] = spec.validation_instances;
    j["test_instances"] = spec.test_instances;
    j["bias"] = {{"repetition_boost", spec.bias.repetition_boost},
                 {"hallucination_rate", spec.bias.hallucination_rate},
                 {"short_bias", spec.bias.short_bias}};
    j["seed"] = spec.seed;
    return j;
}

inline SyntheticSpec synthetic_spec_from_json(const json& j) {
    static const std::set<std::string> known = {"slot_types",      "values_per_slot", "templates_per_shape",
                                                "train_instances", "validation_instances", "test_instances",
                                                "bias",            "seed"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError("synthetic spec has unknown field: " + key);
    SyntheticSpec spec;
    spec.slot_types = j.value("slot_types", spec.slot_types);
    spec.values_per_slot = j.value("values_per_slot", spec.values_per_slot);
    spec.templates_per_shape = j.value("templates_per_shape", spec.templates_per_shape);
    spec.train_instances = j.value("train_instances", spec.train_instances);
    spec.validation_instances = j.value("validation_instances", spec.validation_instances);
    spec.test_instances = j.value("test_instances", spec.test_instances);
    if (j.contains("bias")) {
        const json& b = j.at("bias");
        spec.bias.repetition_boost = b.value("repetition_boost", 0.0);
        spec.bias.hallucination_rate = b.value("hallucination_rate", 0.0);
        spec.bias.short_bias = b.value("short_bias", 0.0);
    }
    spec.seed = j.value("seed", spec.seed);
    validate_synthetic_spec(spec);
    return spec;
}

/// Writes train/validation/test CSVs plus the regeneration sidecar.
inline void write_synthetic_task(const SyntheticTask& task, const std::string& out_dir) {
    write_dataset_rows(out_dir + "/train.csv", task.train_rows);
    write_dataset_rows(out_dir + "/validation.csv", task.validation_rows);
    write_dataset_rows(out_dir + "/test.csv", task.test_rows);
    json sidecar;
    sidecar["format"] = "beamkit-synthetic-task";
    sidecar["generator"] = synthetic_spec_to_json(task.spec);
    sidecar["splits"] = {{"train", "train.csv"}, {"validation", "validation.csv"}, {"test", "test.csv"}};
    detail::write_json_file(out_dir + "/task.json", sidecar);
}

inline SyntheticTask load_synthetic_task(const std::string& sidecar_path) {
    json j = detail::read_json_file(sidecar_path, "synthetic task sidecar");
    if (j.value("format", "") != "beamkit-synthetic-task")
        throw ConfigError("not a synthetic task sidecar: " + sidecar_path);
    return gen_synthetic(synthetic_spec_from_json(j.at("generator")));
}

// ---------------------------------------------------------------------------
// Result writers.

inline void write_fallout_csv(const std::vector<FalloutRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write fallout file: " + path);
    out << "step,reachable_count,contained_count,total\n";
    for (const FalloutRecord& r : records)
        out << r.step << ',' << r.reachable_count << ',' << r.contained_count << ',' << r.total << '\n';
}

inline json permutation_result_to_json(const PermutationTestResult& r) {
    return json{{"observed_diff", r.observed_diff}, {"p_value", r.p_value}, {"permutations", r.permutations}};
}

}  // namespace beamkit
