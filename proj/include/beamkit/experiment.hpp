#pragma once

#include <atomic>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>
#include <thread>

#include "beamkit/serialization.hpp"

namespace beamkit {

enum class SystemKind { vanilla, rerank, ln, ln_rerank, bm, ln_bm, greedy, nucleus };

inline const char* system_name(SystemKind s) {
    switch (s) {
        case SystemKind::vanilla: return "vanilla";
        case SystemKind::rerank: return "rerank";
        case SystemKind::ln: return "ln";
        case SystemKind::ln_rerank: return "ln_rerank";
        case SystemKind::bm: return "bm";
        case SystemKind::ln_bm: return "ln_bm";
        case SystemKind::greedy: return "greedy";
        case SystemKind::nucleus: return "nucleus";
    }
    return "?";
}

inline SystemKind parse_system_name(const std::string& name) {
    for (SystemKind s : {SystemKind::vanilla, SystemKind::rerank, SystemKind::ln, SystemKind::ln_rerank,
                         SystemKind::bm, SystemKind::ln_bm, SystemKind::greedy, SystemKind::nucleus})
        if (name == system_name(s)) return s;
    throw ConfigError("unknown system name: " + name);
}

inline bool system_needs_ranker(SystemKind s) {
    return s == SystemKind::rerank || s == SystemKind::ln_rerank || s == SystemKind::bm ||
           s == SystemKind::ln_bm;
}

struct MatrixEntry {
    SystemKind system;
    std::vector<int> beam_sizes;
};

struct ExperimentConfig {
    // Dataset: CSV paths, or a synthetic task regenerated from its spec.
    std::string train_csv, validation_csv, test_csv;
    std::string synthetic_sidecar;
    std::optional<SyntheticSpec> synthetic_spec;

    std::string model_checkpoint;
    std::string ranker_checkpoint;

    std::vector<MatrixEntry> matrix;  // defaults to the six beam systems at {1,3,5,10}
    std::set<int> bm_steps = {3, 6};
    bool bm_final = true;
    std::set<int> ln_bm_steps = {3, 6};
    bool ln_bm_final = true;
    double ln_alpha = 1.0;
    double nucleus_p = 0.9;
    int max_steps = 30;
    std::uint64_t seed = 1;
    int permutations = 10000;
    int workers = 0;  // 0 = hardware concurrency
    std::string out_dir = "out";

    std::vector<MatrixEntry> effective_matrix() const {
        if (!matrix.empty()) return matrix;
        std::vector<MatrixEntry> m;
        for (SystemKind s : {SystemKind::vanilla, SystemKind::rerank, SystemKind::ln,
                             SystemKind::ln_rerank, SystemKind::bm, SystemKind::ln_bm})
            m.push_back(MatrixEntry{s, {1, 3, 5, 10}});
        return m;
    }
};

/// Builds the DecodeConfig a named system uses at beam size k.
inline DecodeConfig make_decode_config(const ExperimentConfig& config, SystemKind system, int k) {
    DecodeConfig dc;
    dc.beam_size = system == SystemKind::greedy ? 1 : k;
    dc.max_steps = config.max_steps;
    switch (system) {
        case SystemKind::vanilla:
        case SystemKind::greedy:
        case SystemKind::nucleus:
            break;
        case SystemKind::rerank:
            dc.final_rerank = true;
            break;
        case SystemKind::ln:
            dc.strategy = RankStrategy{RankKind::length_normalised, config.ln_alpha};
            break;
        case SystemKind::ln_rerank:
            dc.strategy = RankStrategy{RankKind::length_normalised, config.ln_alpha};
            dc.final_rerank = true;
            break;
        case SystemKind::bm:
            dc.manipulation_steps = config.bm_steps;
            dc.manipulate_final = config.bm_final;
            break;
        case SystemKind::ln_bm:
            dc.strategy = RankStrategy{RankKind::length_normalised, config.ln_alpha};
            dc.manipulation_steps = config.ln_bm_steps;
            dc.manipulate_final = config.ln_bm_final;
            break;
    }
    return dc;
}

struct SystemOutputs {
    std::vector<std::string> texts;         // detokenized best hypotheses
    std::vector<double> sentence_bleus;     // per instance
    double corpus = 0.0;                    // corpus BLEU in [0, 1]
};

/// Decodes one split under one system config and scores it.
template <SequenceModel M>
SystemOutputs decode_split(const M& model, const Dataset& data, SystemKind system,
                           const DecodeConfig& dc, const PointwiseRanker* ranker, double nucleus_p,
                           std::uint64_t seed) {
    SystemOutputs out;
    std::vector<std::pair<std::vector<TokenId>, std::vector<std::vector<TokenId>>>> pairs;
    for (std::size_t i = 0; i < data.instances.size(); ++i) {
        const Instance& inst = data.instances[i];
        Hypothesis best;
        if (system == SystemKind::nucleus) {
            best = nucleus_sample(model, inst.mr, nucleus_p, dc.max_steps,
                                  splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * (i + 1))));
        } else if (system_needs_ranker(system)) {
            best = beam_search(model, inst.mr, dc, ranker).best;
        } else {
            best = beam_search(model, inst.mr, dc).best;
        }
        out.texts.push_back(detokenize(best.tokens, model.vocab()));
        out.sentence_bleus.push_back(sentence_bleu(best.tokens, inst.references).score);
        pairs.emplace_back(best.tokens, inst.references);
    }
    out.corpus = corpus_bleu(pairs).score;
    return out;
}

struct CellResult {
    SystemKind system;
    int beam_size = 0;
    SystemOutputs validation, test;
};

struct ResultTable {
    std::vector<int> beam_sizes;               // row labels (union over systems)
    std::vector<SystemKind> systems;           // column labels
    std::vector<std::vector<int>> cell_index;  // [row][col] into ExperimentRun::cells, -1 where not run
    std::vector<int> validation_best;          // per column; ties go to the smaller beam
};

struct ExperimentRun {
    std::vector<CellResult> cells;
    ResultTable table;
    std::map<std::string, PermutationTestResult> significance;

    const CellResult* cell(std::size_t row, std::size_t col) const {
        int idx = table.cell_index[row][col];
        return idx < 0 ? nullptr : &cells[static_cast<std::size_t>(idx)];
    }
};

namespace detail {

inline std::string fixed2(double x) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << x;
    return os.str();
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + path);
    for (const auto& line : lines) out << line << '\n';
}

inline void write_scores_csv(const std::string& path, const std::vector<double>& scores) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << "instance,sentence_bleu\n";
    for (std::size_t i = 0; i < scores.size(); ++i) out << i << ',' << scores[i] * 100.0 << '\n';
}

}  // namespace detail

inline std::vector<double> read_scores_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open score file: " + path);
    std::vector<double> scores;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            continue;
        }
        auto comma = line.find(',');
        if (comma == std::string::npos) throw ConfigError("malformed score row: " + line);
        scores.push_back(std::stod(line.substr(comma + 1)));
    }
    return scores;
}

/// Runs every (system, beam size) cell of the matrix over validation and
/// test, marks each system's validation-best beam size, writes the table,
/// per-instance outputs, and the paired significance tests.
template <SequenceModel M>
ExperimentRun run_experiment(const ExperimentConfig& config, const M& model, const Dataset& validation,
                             const Dataset& test, const PointwiseRanker* ranker) {
    std::vector<MatrixEntry> matrix = config.effective_matrix();
    for (const MatrixEntry& entry : matrix)
        if (system_needs_ranker(entry.system) && !ranker)
            throw ConfigError(std::string("system '") + system_name(entry.system) +
                              "' needs a ranker checkpoint; run `train-ranker` first");

    struct CellSpec {
        SystemKind system;
        int beam_size;
    };
    std::vector<CellSpec> specs;
    for (const MatrixEntry& entry : matrix)
        for (int k : entry.beam_sizes) specs.push_back(CellSpec{entry.system, k});

    ExperimentRun run;
    run.cells.resize(specs.size());
    std::atomic<std::size_t> next{0};
    unsigned workers = config.workers > 0 ? static_cast<unsigned>(config.workers)
                                          : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, static_cast<unsigned>(specs.size()));
    auto work = [&]() {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= specs.size()) break;
            const CellSpec& spec = specs[i];
            DecodeConfig dc = make_decode_config(config, spec.system, spec.beam_size);
            CellResult cell;
            cell.system = spec.system;
            cell.beam_size = spec.beam_size;
            cell.validation = decode_split(model, validation, spec.system, dc, ranker, config.nucleus_p,
                                           splitmix64(config.seed ^ 0x76616cULL));
            cell.test = decode_split(model, test, spec.system, dc, ranker, config.nucleus_p,
                                     splitmix64(config.seed ^ 0x746573ULL));
            run.cells[i] = std::move(cell);
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    // Table assembly, single-threaded.
    ResultTable& table = run.table;
    for (const MatrixEntry& entry : matrix) table.systems.push_back(entry.system);
    std::set<int> sizes;
    for (const CellResult& cell : run.cells) sizes.insert(cell.beam_size);
    table.beam_sizes.assign(sizes.begin(), sizes.end());
    table.cell_index.assign(table.beam_sizes.size(), std::vector<int>(table.systems.size(), -1));
    for (std::size_t i = 0; i < run.cells.size(); ++i) {
        const CellResult& cell = run.cells[i];
        std::size_t row = static_cast<std::size_t>(
            std::find(table.beam_sizes.begin(), table.beam_sizes.end(), cell.beam_size) -
            table.beam_sizes.begin());
        std::size_t col = static_cast<std::size_t>(
            std::find(table.systems.begin(), table.systems.end(), cell.system) - table.systems.begin());
        table.cell_index[row][col] = static_cast<int>(i);
    }
    table.validation_best.assign(table.systems.size(), -1);
    for (std::size_t col = 0; col < table.systems.size(); ++col) {
        double best = -1.0;
        for (std::size_t row = 0; row < table.beam_sizes.size(); ++row) {
            const CellResult* cell = run.cell(row, col);
            if (cell && cell->validation.corpus > best) {  // ties keep the smaller beam
                best = cell->validation.corpus;
                table.validation_best[col] = table.beam_sizes[row];
            }
        }
    }

    // Significance: manipulation vs final reranking (and vs the plain
    // baseline), each at its own validation-best beam size, on test
    // per-instance sentence BLEU.
    auto cell_at = [&](SystemKind system, int k) -> const CellResult* {
        for (const CellResult& cell : run.cells)
            if (cell.system == system && cell.beam_size == k) return &cell;
        return nullptr;
    };
    auto best_of = [&](SystemKind system) -> const CellResult* {
        auto it = std::find(table.systems.begin(), table.systems.end(), system);
        if (it == table.systems.end()) return nullptr;
        int k = table.validation_best[static_cast<std::size_t>(it - table.systems.begin())];
        return k < 0 ? nullptr : cell_at(system, k);
    };
    auto add_test = [&](SystemKind a, SystemKind b) {
        const CellResult* ca = best_of(a);
        const CellResult* cb = best_of(b);
        if (!ca || !cb) return;
        run.significance[std::string(system_name(a)) + "_vs_" + system_name(b)] =
            permutation_test(ca->test.sentence_bleus, cb->test.sentence_bleus, config.permutations,
                             splitmix64(config.seed ^ 0x7369676eULL));
    };
    add_test(SystemKind::bm, SystemKind::rerank);
    add_test(SystemKind::ln_bm, SystemKind::ln_rerank);
    add_test(SystemKind::bm, SystemKind::vanilla);
    add_test(SystemKind::ln_bm, SystemKind::ln);
    return run;
}

/// Serialises an experiment run under out_dir using the layout
/// outputs/<system>/<k>/, tables/, and writes significance.json.
inline void write_experiment_artifacts(const ExperimentRun& run, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir + "/tables");
    for (const CellResult& cell : run.cells) {
        std::string dir = out_dir + "/outputs/" + system_name(cell.system) + "/" +
                          std::to_string(cell.beam_size);
        fs::create_directories(dir);
        detail::write_lines(dir + "/validation.txt", cell.validation.texts);
        detail::write_lines(dir + "/test.txt", cell.test.texts);
        detail::write_scores_csv(dir + "/validation_scores.csv", cell.validation.sentence_bleus);
        detail::write_scores_csv(dir + "/test_scores.csv", cell.test.sentence_bleus);
    }

    const ResultTable& table = run.table;
    std::ofstream csv(out_dir + "/tables/results.csv", std::ios::binary);
    if (!csv) throw ConfigError("cannot write results table");
    csv << "beam_size";
    for (SystemKind s : table.systems) csv << ',' << system_name(s);
    csv << '\n';
    for (std::size_t row = 0; row < table.beam_sizes.size(); ++row) {
        csv << table.beam_sizes[row];
        for (std::size_t col = 0; col < table.systems.size(); ++col) {
            const CellResult* cell = run.cell(row, col);
            csv << ',';
            if (cell) {
                csv << detail::fixed2(cell->test.corpus * 100.0);
                if (table.validation_best[col] == table.beam_sizes[row]) csv << '*';
            }
        }
        csv << '\n';
    }
    csv.close();

    std::ostringstream txt;
    txt << "Test corpus BLEU (x100); * marks the validation-best beam size per system\n\n";
    txt << std::left << std::setw(10) << "beam";
    for (SystemKind s : table.systems) txt << std::setw(12) << system_name(s);
    txt << '\n';
    for (std::size_t row = 0; row < table.beam_sizes.size(); ++row) {
        txt << std::left << std::setw(10) << table.beam_sizes[row];
        for (std::size_t col = 0; col < table.systems.size(); ++col) {
            const CellResult* cell = run.cell(row, col);
            std::string text = "-";
            if (cell) {
                text = detail::fixed2(cell->test.corpus * 100.0);
                if (table.validation_best[col] == table.beam_sizes[row]) text += '*';
            }
            txt << std::setw(12) << text;
        }
        txt << '\n';
    }
    std::ofstream human(out_dir + "/tables/results.txt", std::ios::binary);
    human << txt.str();
    human.close();

    json sig = json::object();
    for (const auto& [name, result] : run.significance) sig[name] = permutation_result_to_json(result);
    detail::write_json_file(out_dir + "/tables/significance.json", sig);
}

struct FalloutRun {
    int beam_size = 0;
    std::vector<FalloutRecord> records;
    double final_contained_fraction = 0.0;
};

/// Fallout analysis at several beam sizes; writes one CSV per size plus a
/// summary when out_dir is given.
template <SequenceModel M, typename S = NoScorer>
std::vector<FalloutRun> run_fallout(const M& model, const Dataset& data, const DecodeConfig& base,
                                    const std::vector<int>& beam_sizes, const S* scorer = nullptr,
                                    const std::string& out_dir = {}) {
    namespace fs = std::filesystem;
    if (!out_dir.empty()) fs::create_directories(out_dir);
    std::vector<FalloutRun> runs;
    for (int k : beam_sizes) {
        DecodeConfig dc = base;
        dc.beam_size = k;
        FalloutRun fr;
        fr.beam_size = k;
        fr.records = fallout_analysis(model, data, dc, scorer);
        if (!fr.records.empty() && fr.records.back().total > 0)
            fr.final_contained_fraction = static_cast<double>(fr.records.back().contained_count) /
                                          static_cast<double>(fr.records.back().total);
        if (!out_dir.empty())
            write_fallout_csv(fr.records, out_dir + "/fallout_k" + std::to_string(k) + ".csv");
        runs.push_back(std::move(fr));
    }
    if (!out_dir.empty()) {
        std::ofstream summary(out_dir + "/summary.csv", std::ios::binary);
        summary << "beam_size,final_contained,total,fraction\n";
        for (const FalloutRun& fr : runs) {
            int contained = fr.records.empty() ? 0 : fr.records.back().contained_count;
            int total = fr.records.empty() ? 0 : fr.records.back().total;
            summary << fr.beam_size << ',' << contained << ',' << total << ',' << fr.final_contained_fraction
                    << '\n';
        }
    }
    return runs;
}

// ---------------------------------------------------------------------------
// Experiment config <-> JSON.

inline ExperimentConfig experiment_config_from_json(const json& j) {
    static const std::set<std::string> known = {
        "data",     "model",      "ranker",  "matrix",       "bm_steps", "ln_bm_steps", "ln_alpha",
        "nucleus_p", "max_steps", "seed",    "permutations", "workers",  "out"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError("experiment config has unknown key: " + key);

    ExperimentConfig config;
    if (j.contains("data")) {
        const json& d = j.at("data");
        if (d.contains("synthetic")) {
            if (d.at("synthetic").is_string()) config.synthetic_sidecar = d.at("synthetic").get<std::string>();
            else config.synthetic_spec = synthetic_spec_from_json(d.at("synthetic"));
        } else {
            config.train_csv = d.value("train", "");
            config.validation_csv = d.value("validation", "");
            config.test_csv = d.value("test", "");
        }
    }
    config.model_checkpoint = j.value("model", "");
    config.ranker_checkpoint = j.value("ranker", "");
    if (j.contains("matrix")) {
        for (const json& entry : j.at("matrix")) {
            MatrixEntry m;
            m.system = parse_system_name(entry.at("system").get<std::string>());
            m.beam_sizes = entry.at("beam_sizes").get<std::vector<int>>();
            config.matrix.push_back(std::move(m));
        }
    }
    auto read_steps = [](const json& arr, std::set<int>& steps, bool& final_marker) {
        steps.clear();
        final_marker = false;
        for (const json& item : arr) {
            if (item.is_string()) {
                if (item.get<std::string>() != "final")
                    throw ConfigError("manipulation step entries must be integers or \"final\"");
                final_marker = true;
            } else {
                steps.insert(item.get<int>());
            }
        }
    };
    if (j.contains("bm_steps")) read_steps(j.at("bm_steps"), config.bm_steps, config.bm_final);
    if (j.contains("ln_bm_steps")) read_steps(j.at("ln_bm_steps"), config.ln_bm_steps, config.ln_bm_final);
    config.ln_alpha = j.value("ln_alpha", config.ln_alpha);
    config.nucleus_p = j.value("nucleus_p", config.nucleus_p);
    config.max_steps = j.value("max_steps", config.max_steps);
    config.seed = j.value("seed", config.seed);
    config.permutations = j.value("permutations", config.permutations);
    config.workers = j.value("workers", config.workers);
    config.out_dir = j.value("out", config.out_dir);
    return config;
}

}  // namespace beamkit
