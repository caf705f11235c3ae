#include <filesystem>
#include <iostream>

#include "CLI11.hpp"

#include "beamkit/beamkit.hpp"

namespace fs = std::filesystem;
using namespace beamkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

json load_config_or_empty(const std::string& path) {
    if (path.empty()) return json::object();
    return detail::read_json_file(path, "config");
}

void require_file(const std::string& path, const std::string& what, const std::string& hint) {
    if (path.empty() || !fs::exists(path))
        throw ConfigError(what + " not found at '" + path + "'; " + hint);
}

Vocabulary vocab_from_csvs(const std::vector<std::string>& paths) {
    Vocabulary vocab;
    for (const auto& path : paths) grow_vocabulary(vocab, read_dataset_rows(path));
    return vocab;
}

struct LoadedData {
    Vocabulary vocab;
    Dataset train, validation, test;
};

LoadedData load_experiment_data(const ExperimentConfig& config) {
    LoadedData data;
    if (config.synthetic_spec || !config.synthetic_sidecar.empty()) {
        SyntheticTask task = config.synthetic_spec ? gen_synthetic(*config.synthetic_spec)
                                                   : load_synthetic_task(config.synthetic_sidecar);
        data.vocab = task.vocab;
        data.train = std::move(task.train);
        data.validation = std::move(task.validation);
        data.test = std::move(task.test);
        return data;
    }
    require_file(config.train_csv, "train dataset", "set data.train in the config");
    require_file(config.validation_csv, "validation dataset", "set data.validation in the config");
    require_file(config.test_csv, "test dataset", "set data.test in the config");
    data.vocab = vocab_from_csvs({config.train_csv, config.validation_csv, config.test_csv});
    data.train = load_dataset(config.train_csv, data.vocab, Split::train);
    data.validation = load_dataset(config.validation_csv, data.vocab, Split::validation);
    data.test = load_dataset(config.test_csv, data.vocab, Split::test);
    return data;
}

int cmd_gen_data(const std::string& config_path, std::uint64_t seed, bool seed_set,
                 const std::string& out_dir) {
    json j = load_config_or_empty(config_path);
    SyntheticSpec spec = synthetic_spec_from_json(j);
    if (seed_set) spec.seed = seed;
    SyntheticTask task = gen_synthetic(spec);
    fs::create_directories(out_dir);
    write_synthetic_task(task, out_dir);
    std::cout << "wrote " << task.train_rows.size() << " train rows, " << task.validation_rows.size()
              << " validation rows, " << task.test_rows.size() << " test rows to " << out_dir << "\n";
    return kExitOk;
}

int cmd_train_model(const std::string& train_csv, std::size_t hidden, int epochs, double lr,
                    std::uint64_t seed, const std::string& out_path) {
    require_file(train_csv, "train dataset", "run `beamkit gen-data` first");
    Vocabulary vocab;
    auto rows = read_dataset_rows(train_csv);
    grow_vocabulary(vocab, rows);
    Dataset train = rows_to_dataset(rows, vocab, Split::train);

    Seq2SeqModel model(vocab, hidden, seed);
    Optimizer opt = Optimizer::adam(lr);
    TrainingReport report = model.train(train, epochs, opt, splitmix64(seed ^ 0x7472ULL));
    for (std::size_t e = 0; e < report.epoch_mean_loss.size(); ++e)
        std::cout << "epoch " << e + 1 << " mean loss " << report.epoch_mean_loss[e] << "\n";
    if (auto dir = fs::path(out_path).parent_path(); !dir.empty()) fs::create_directories(dir);
    save_seq2seq(model, out_path);
    std::cout << "saved model checkpoint to " << out_path << "\n";
    return kExitOk;
}

int cmd_gen_ranker_data(const std::string& model_path, const std::string& data_csv, int gen_beam,
                        int max_steps, const std::string& out_path) {
    require_file(model_path, "model checkpoint", "run `beamkit train-model` first");
    require_file(data_csv, "dataset", "run `beamkit gen-data` first");
    Seq2SeqModel model = load_seq2seq(model_path);
    Dataset data = load_dataset(data_csv, model.vocab(), Split::train);
    GenerationReport report;
    auto beams = generate_training_data(model, data, gen_beam, max_steps, &report);
    if (auto dir = fs::path(out_path).parent_path(); !dir.empty()) fs::create_directories(dir);
    write_ranker_data(beams, out_path);
    std::cout << "generated " << beams.size() << " training beams (" << report.skipped << " of "
              << report.instances << " instances skipped) to " << out_path << "\n";
    return kExitOk;
}

int cmd_train_ranker(const std::string& model_path, const std::string& data_path, std::size_t hidden,
                     int b_max, int epochs, double lr, std::uint64_t seed, const std::string& out_path) {
    require_file(model_path, "model checkpoint", "run `beamkit train-model` first");
    require_file(data_path, "ranker training data", "run `beamkit gen-ranker-data` first");
    Seq2SeqModel model = load_seq2seq(model_path);
    auto beams = read_ranker_data(data_path);
    PointwiseRanker ranker(model.vocab(), hidden, b_max, seed);
    Optimizer opt = Optimizer::adam(lr);
    TrainingReport report = train_ranker(ranker, beams, epochs, opt, splitmix64(seed ^ 0x726bULL));
    for (std::size_t e = 0; e < report.epoch_mean_loss.size(); ++e)
        std::cout << "epoch " << e + 1 << " mean RMAE " << report.epoch_mean_loss[e] << "\n";
    if (auto dir = fs::path(out_path).parent_path(); !dir.empty()) fs::create_directories(dir);
    save_pointwise_ranker(ranker, out_path);
    std::cout << "saved ranker checkpoint to " << out_path << "\n";
    return kExitOk;
}

int cmd_decode(const std::string& model_path, const std::string& data_csv,
               const std::string& config_path, const std::string& ranker_path,
               const std::string& out_dir) {
    require_file(model_path, "model checkpoint", "run `beamkit train-model` first");
    require_file(data_csv, "dataset", "run `beamkit gen-data` first");
    Seq2SeqModel model = load_seq2seq(model_path);
    Dataset data = load_dataset(data_csv, model.vocab(), Split::test);
    DecodeConfig config = config_path.empty() ? DecodeConfig{} : load_decode_config(config_path);

    std::string resolved_ranker = !ranker_path.empty() ? ranker_path : config.ranker_path;
    std::optional<PointwiseRanker> ranker;
    if (!resolved_ranker.empty()) {
        require_file(resolved_ranker, "ranker checkpoint", "run `beamkit train-ranker` first");
        ranker = load_pointwise_ranker(resolved_ranker);
    }
    config.validate(ranker.has_value());

    fs::create_directories(out_dir);
    std::ofstream hyp(out_dir + "/hyps.txt", std::ios::binary);
    std::vector<double> scores;
    std::vector<std::pair<std::vector<TokenId>, std::vector<std::vector<TokenId>>>> pairs;
    for (const Instance& inst : data.instances) {
        Hypothesis best = ranker ? beam_search(model, inst.mr, config, &*ranker).best
                                 : beam_search(model, inst.mr, config).best;
        hyp << detokenize(best.tokens, model.vocab()) << '\n';
        scores.push_back(sentence_bleu(best.tokens, inst.references).score);
        pairs.emplace_back(best.tokens, inst.references);
    }
    hyp.close();
    detail::write_scores_csv(out_dir + "/scores.csv", scores);
    std::cout << "corpus BLEU " << detail::fixed2(corpus_bleu(pairs).score * 100.0) << " over "
              << data.instances.size() << " instances; outputs in " << out_dir << "\n";
    return kExitOk;
}

int cmd_evaluate(const std::string& data_csv, const std::string& hyp_path,
                 const std::string& scores_out) {
    require_file(data_csv, "dataset", "pass --data");
    require_file(hyp_path, "hypothesis file", "pass --hyp");
    Vocabulary vocab = vocab_from_csvs({data_csv});
    Dataset data = load_dataset(data_csv, vocab, Split::test);

    std::ifstream in(hyp_path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    if (lines.size() != data.instances.size())
        throw InputError("hypothesis count " + std::to_string(lines.size()) + " does not match instance count " +
                         std::to_string(data.instances.size()));

    std::vector<double> scores;
    std::vector<std::pair<std::vector<TokenId>, std::vector<std::vector<TokenId>>>> pairs;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::vector<TokenId> tokens = tokenize(lines[i], vocab);
        scores.push_back(sentence_bleu(tokens, data.instances[i].references).score);
        pairs.emplace_back(tokens, data.instances[i].references);
    }
    std::cout << "corpus BLEU " << detail::fixed2(corpus_bleu(pairs).score * 100.0) << "\n";
    if (!scores_out.empty()) {
        if (auto dir = fs::path(scores_out).parent_path(); !dir.empty()) fs::create_directories(dir);
        detail::write_scores_csv(scores_out, scores);
    }
    return kExitOk;
}

int cmd_fallout(const std::string& model_path, const std::string& synthetic_sidecar,
                const std::string& data_csv, const std::string& split, std::vector<int> beam_sizes,
                const std::string& config_path, const std::string& ranker_path,
                const std::string& out_dir) {
    DecodeConfig config = config_path.empty() ? DecodeConfig{} : load_decode_config(config_path);
    std::string resolved_ranker = !ranker_path.empty() ? ranker_path : config.ranker_path;
    std::optional<PointwiseRanker> ranker;
    if (!resolved_ranker.empty()) {
        require_file(resolved_ranker, "ranker checkpoint", "run `beamkit train-ranker` first");
        ranker = load_pointwise_ranker(resolved_ranker);
    }
    config.validate(ranker.has_value());
    if (beam_sizes.empty()) beam_sizes = {3, 10};

    auto report = [&](const std::vector<FalloutRun>& runs) {
        for (const FalloutRun& fr : runs)
            std::cout << "k=" << fr.beam_size << ": final contained fraction "
                      << fr.final_contained_fraction << "\n";
        std::cout << "fallout CSVs in " << out_dir << "\n";
    };

    if (!synthetic_sidecar.empty()) {
        SyntheticTask task = load_synthetic_task(synthetic_sidecar);
        SyntheticBiasedModel model = task.make_model();
        const Dataset& data = split == "train" ? task.train : (split == "test" ? task.test : task.validation);
        report(ranker ? run_fallout(model, data, config, beam_sizes, &*ranker, out_dir)
                      : run_fallout(model, data, config, beam_sizes,
                                    static_cast<const NoScorer*>(nullptr), out_dir));
        return kExitOk;
    }
    require_file(model_path, "model checkpoint", "run `beamkit train-model` first");
    require_file(data_csv, "dataset", "pass --data");
    Seq2SeqModel model = load_seq2seq(model_path);
    Dataset data = load_dataset(data_csv, model.vocab(), Split::validation);
    report(ranker ? run_fallout(model, data, config, beam_sizes, &*ranker, out_dir)
                  : run_fallout(model, data, config, beam_sizes, static_cast<const NoScorer*>(nullptr),
                                out_dir));
    return kExitOk;
}

int cmd_experiment(const std::string& config_path, std::uint64_t seed, bool seed_set,
                   const std::string& out_dir, bool out_set) {
    json j = load_config_or_empty(config_path);
    ExperimentConfig config = experiment_config_from_json(j);
    if (seed_set) config.seed = seed;
    if (out_set) config.out_dir = out_dir;

    LoadedData data = load_experiment_data(config);
    require_file(config.model_checkpoint, "model checkpoint", "run `beamkit train-model` first");
    Seq2SeqModel model = load_seq2seq(config.model_checkpoint);

    bool needs_ranker = false;
    for (const MatrixEntry& entry : config.effective_matrix())
        needs_ranker = needs_ranker || system_needs_ranker(entry.system);
    std::optional<PointwiseRanker> ranker;
    if (needs_ranker) {
        require_file(config.ranker_checkpoint, "ranker checkpoint", "run `beamkit train-ranker` first");
        ranker = load_pointwise_ranker(config.ranker_checkpoint);
    }

    ExperimentRun run = run_experiment(config, model, data.validation, data.test,
                                       ranker ? &*ranker : nullptr);
    fs::create_directories(config.out_dir + "/configs");
    detail::write_json_file(config.out_dir + "/configs/experiment.json", j);
    write_experiment_artifacts(run, config.out_dir);

    std::ifstream table(config.out_dir + "/tables/results.txt");
    std::cout << table.rdbuf();
    for (const auto& [name, result] : run.significance)
        std::cout << name << ": diff " << result.observed_diff << ", p " << result.p_value << "\n";
    return kExitOk;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, int permutations,
                std::uint64_t seed, const std::string& out_path) {
    require_file(a_path, "score file", "pass --a");
    require_file(b_path, "score file", "pass --b");
    std::vector<double> a = read_scores_csv(a_path);
    std::vector<double> b = read_scores_csv(b_path);
    PermutationTestResult result = permutation_test(a, b, permutations, seed);
    std::cout << "observed diff " << result.observed_diff << ", p " << result.p_value << " ("
              << result.permutations << " permutations)\n";
    if (!out_path.empty()) {
        if (auto dir = fs::path(out_path).parent_path(); !dir.empty()) fs::create_directories(dir);
        detail::write_json_file(out_path, permutation_result_to_json(result));
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"beamkit: beam-search decoding with incremental beam manipulation"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_path;
    std::uint64_t seed = 1;
    app.add_option("--config", config_path, "JSON config file");
    auto* seed_opt = app.add_option("--seed", seed, "random seed");
    auto* out_opt = app.add_option("--out", out_path, "output path or directory");

    auto* gen_data = app.add_subcommand("gen-data", "generate the synthetic task (CSVs + sidecar)");
    auto* train_model = app.add_subcommand("train-model", "train the sequence model");
    std::string train_csv;
    std::size_t hidden = 32;
    int epochs = 30;
    double lr = 1e-3;
    train_model->add_option("--train", train_csv, "training CSV");
    train_model->add_option("--hidden", hidden, "hidden size");
    train_model->add_option("--epochs", epochs, "training epochs");
    train_model->add_option("--lr", lr, "learning rate");

    auto* gen_ranker = app.add_subcommand("gen-ranker-data", "decode the training set into ranker beams");
    std::string model_path, data_csv;
    int gen_beam = 16, max_steps = 30;
    gen_ranker->add_option("--model", model_path, "model checkpoint");
    gen_ranker->add_option("--data", data_csv, "dataset CSV");
    gen_ranker->add_option("--gen-beam", gen_beam, "beam size for data generation");
    gen_ranker->add_option("--max-steps", max_steps, "decode step cap");

    auto* train_ranker_cmd = app.add_subcommand("train-ranker", "train the pointwise ranker");
    std::string ranker_data_path;
    std::size_t ranker_hidden = 32;
    int b_max = 64, ranker_epochs = 30;
    double ranker_lr = 1e-3;
    train_ranker_cmd->add_option("--model", model_path, "model checkpoint (for the vocabulary)");
    train_ranker_cmd->add_option("--ranker-data", ranker_data_path, "ranker training data (JSONL)");
    train_ranker_cmd->add_option("--hidden", ranker_hidden, "hidden size");
    train_ranker_cmd->add_option("--b-max", b_max, "one-hot width for model ranks");
    train_ranker_cmd->add_option("--epochs", ranker_epochs, "training epochs");
    train_ranker_cmd->add_option("--lr", ranker_lr, "learning rate");

    auto* decode = app.add_subcommand("decode", "beam-search decode a dataset");
    std::string decode_config_path, ranker_path;
    decode->add_option("--model", model_path, "model checkpoint");
    decode->add_option("--data", data_csv, "dataset CSV");
    decode->add_option("--decode-config", decode_config_path, "decode config JSON");
    decode->add_option("--ranker", ranker_path, "ranker checkpoint");

    auto* evaluate = app.add_subcommand("evaluate", "score a hypothesis file against references");
    std::string hyp_path, scores_out;
    evaluate->add_option("--data", data_csv, "dataset CSV");
    evaluate->add_option("--hyp", hyp_path, "hypothesis file, one output per line");
    evaluate->add_option("--scores-out", scores_out, "write per-instance sentence BLEU CSV here");

    auto* fallout = app.add_subcommand("fallout", "reference fallout analysis");
    std::string synthetic_sidecar, split = "validation";
    std::vector<int> beam_sizes;
    fallout->add_option("--model", model_path, "model checkpoint");
    fallout->add_option("--synthetic", synthetic_sidecar, "synthetic task sidecar (instead of --model)");
    fallout->add_option("--data", data_csv, "dataset CSV (with --model)");
    fallout->add_option("--split", split, "split to analyse with --synthetic");
    fallout->add_option("--beam-sizes", beam_sizes, "beam sizes to analyse")->delimiter(',');
    fallout->add_option("--decode-config", decode_config_path, "decode config JSON");
    fallout->add_option("--ranker", ranker_path, "ranker checkpoint");

    auto* experiment = app.add_subcommand("experiment", "run the full strategy matrix");

    auto* compare = app.add_subcommand("compare", "paired permutation test between two score files");
    std::string a_path, b_path;
    int permutations = 10000;
    compare->add_option("--a", a_path, "first per-instance score CSV");
    compare->add_option("--b", b_path, "second per-instance score CSV");
    compare->add_option("--permutations", permutations, "number of permutations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        bool seed_set = seed_opt->count() > 0;
        bool out_set = out_opt->count() > 0;
        if (gen_data->parsed())
            return cmd_gen_data(config_path, seed, seed_set, out_set ? out_path : "data");
        if (train_model->parsed())
            return cmd_train_model(train_csv, hidden, epochs, lr, seed,
                                   out_set ? out_path : "checkpoints/model.json");
        if (gen_ranker->parsed())
            return cmd_gen_ranker_data(model_path, data_csv, gen_beam, max_steps,
                                       out_set ? out_path : "ranker_data.jsonl");
        if (train_ranker_cmd->parsed())
            return cmd_train_ranker(model_path, ranker_data_path, ranker_hidden, b_max, ranker_epochs,
                                    ranker_lr, seed, out_set ? out_path : "checkpoints/ranker.json");
        if (decode->parsed())
            return cmd_decode(model_path, data_csv, decode_config_path, ranker_path,
                              out_set ? out_path : "decoded");
        if (evaluate->parsed()) return cmd_evaluate(data_csv, hyp_path, scores_out);
        if (fallout->parsed())
            return cmd_fallout(model_path, synthetic_sidecar, data_csv, split, beam_sizes,
                               decode_config_path, ranker_path, out_set ? out_path : "fallout");
        if (experiment->parsed()) return cmd_experiment(config_path, seed, seed_set, out_path, out_set);
        if (compare->parsed()) return cmd_compare(a_path, b_path, permutations, seed, out_path);
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
