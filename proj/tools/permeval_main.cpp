// Command-line entry point. Subcommands:
//   gen-nonsense  synthesize the random-word MCQ dataset (test + validation)
//   run           execute a permutation sweep into a run directory
//   score         recompute metrics from a run directory's cached transcripts
//   compare       baseline-vs-reduced protocol statistics (runs or fixtures)
//   corr          cross-benchmark rank-correlation difference matrices
//   report        combine run directories into one report + box-plot data
//
// Exit codes: 0 success, 2 configuration error, 3 backend failure,
// 4 incomplete result grid, 1 anything else.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "permeval/permeval.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw permeval::ConfigError("not readable: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw permeval::ConfigError("not valid JSON: " + path.string());
    return j;
}

ordered_json read_ordered_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw permeval::ConfigError("not readable: " + path.string());
    ordered_json j = ordered_json::parse(in, nullptr, false);
    if (j.is_discarded()) throw permeval::ConfigError("not valid JSON: " + path.string());
    return j;
}

void print_outcome(const permeval::RunOutcome& out) {
    std::cout << permeval::render_summary_table(
        {{out.matrix.model_id, out.matrix.dataset_id, out.protocol, out.summary}});
    std::cout << "\nper-permutation accuracy:\n";
    for (std::size_t p = 0; p < out.matrix.permutation_ids.size(); ++p)
        std::cout << "  " << out.matrix.permutation_ids[p] << ": "
                  << permeval::fmt_fixed(100.0 * permeval::accuracy(out.matrix, p), 2) << "%\n";
}

ordered_json comparison_to_json(const permeval::RunComparison& c) {
    ordered_json j;
    j["variance_ratio"] = c.variance_ratio;
    j["delta_score"] = c.delta_score;
    j["baseline"] = permeval::summary_to_json(c.sl);
    j["reduced"] = permeval::summary_to_json(c.md);
    j["paired_diffs"] = c.paired_diffs;
    if (c.wilcoxon) j["wilcoxon"] = permeval::wilcoxon_to_json(*c.wilcoxon);
    if (c.d_mean) {
        j["cohens_d"] = *c.d_mean;
        j["cohens_d_median"] = *c.d_median;
    }
    return j;
}

struct GenOptions {
    std::string wordlist;
    std::string out_dir;
    std::uint64_t seed = 0;
    int questions = 1000;
    int options = 4;
    int validation = 100;
};

int cmd_gen_nonsense(const GenOptions& o) {
    const auto words = permeval::load_wordlist(o.wordlist);
    permeval::NonsenseConfig nc;
    nc.seed = o.seed;
    nc.n_questions = o.questions;
    nc.n_options = o.options;
    nc.n_validation = o.validation;
    const auto [test, val] = permeval::generate_nonsense(nc, words);

    fs::create_directories(o.out_dir);
    const fs::path test_path = fs::path(o.out_dir) / (test.dataset_id + ".jsonl");
    const fs::path val_path = fs::path(o.out_dir) / (val.dataset_id + ".jsonl");
    permeval::write_dataset(test, test_path);
    permeval::write_dataset(val, val_path);

    ordered_json manifest;
    manifest["rng"] = permeval::kRngVersion;
    manifest["seed"] = nc.seed;
    manifest["wordlist"] = fs::absolute(o.wordlist).string();
    manifest["n_words"] = words.size();
    manifest["n_questions"] = nc.n_questions;
    manifest["n_options"] = nc.n_options;
    manifest["n_validation"] = nc.n_validation;
    manifest["question_words"] = {nc.question_words_min, nc.question_words_max};
    manifest["option_words"] = {nc.option_words_min, nc.option_words_max};
    manifest["files"] = {test_path.filename().string(), val_path.filename().string()};
    permeval::write_json_file(fs::path(o.out_dir) / "manifest.json", manifest);

    std::cout << "wrote " << test_path.string() << " (" << test.instances.size() << " questions)\n"
              << "wrote " << val_path.string() << " (" << val.instances.size() << " questions)\n"
              << "wrote " << (fs::path(o.out_dir) / "manifest.json").string() << "\n";
    return 0;
}

struct RunOptions {
    std::string config;
    std::string output_dir, dataset, fewshot, mode, labels;
    std::uint64_t master_seed = 0;
    int concurrency = 0, shots = -1, max_tokens = 0;
    double temperature = -1;
    bool cot = false, no_cot = false;
    bool permute_fewshot = false, no_permute_fewshot = false;
};

int cmd_run(const RunOptions& o) {
    permeval::RunConfig cfg = permeval::load_run_config(o.config);
    const fs::path base_dir = fs::path(o.config).parent_path();
    // Flag overrides; paths given on the command line are CWD-relative.
    if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
    if (!o.dataset.empty()) {
        cfg.dataset.path = fs::absolute(o.dataset).string();
        cfg.dataset.nonsense.reset();
    }
    if (!o.fewshot.empty()) cfg.dataset.fewshot_path = fs::absolute(o.fewshot).string();
    if (!o.mode.empty())
        cfg.protocol.mode = o.mode == "standard" ? permeval::PredictionMode::standard
                                                 : permeval::PredictionMode::matched;
    if (!o.labels.empty()) {
        if (o.labels == "letters") cfg.protocol.labels = permeval::LabelScheme::letters();
        else if (o.labels == "digits") cfg.protocol.labels = permeval::LabelScheme::digits();
        else if (o.labels == "dash") cfg.protocol.labels = permeval::LabelScheme::dash();
        else throw permeval::ConfigError("--labels must be letters, digits, or dash");
    }
    if (o.shots >= 0) cfg.protocol.shots = o.shots;
    if (o.cot) cfg.protocol.cot = true;
    if (o.no_cot) cfg.protocol.cot = false;
    if (o.permute_fewshot) cfg.protocol.permute_fewshot = true;
    if (o.no_permute_fewshot) cfg.protocol.permute_fewshot = false;
    if (o.master_seed != 0) cfg.master_seed = o.master_seed;
    if (o.concurrency > 0) cfg.concurrency = o.concurrency;
    if (o.temperature >= 0) cfg.generation.temperature = o.temperature;
    if (o.max_tokens > 0) cfg.generation.max_tokens = o.max_tokens;

    const permeval::RunOutcome out = permeval::execute_run(cfg, base_dir);
    print_outcome(out);
    std::cout << "\nbackend calls: " << out.stats.generated << " fresh, " << out.stats.cached
              << " from cache\nrun directory: " << fs::absolute(cfg.output_dir).string() << "\n";
    return 0;
}

int cmd_score(const std::string& run_dir, const std::string& agreement, const std::string& out_file) {
    const permeval::RunOutcome out = permeval::score_run_dir(run_dir, agreement);
    print_outcome(out);
    if (!out_file.empty()) {
        ordered_json j;
        j["dataset_id"] = out.matrix.dataset_id;
        j["model_id"] = out.matrix.model_id;
        j["protocol"] = out.protocol;
        j["agreement"] = agreement;
        j["summary"] = permeval::summary_to_json(out.summary);
        permeval::write_json_file(out_file, j);
        std::cout << "\nwrote " << out_file << "\n";
    }
    return 0;
}

int cmd_compare_runs(const std::string& run_sl, const std::string& run_md, const std::string& out_file) {
    const permeval::RunOutcome a = permeval::score_run_dir(run_sl);
    const permeval::RunOutcome b = permeval::score_run_dir(run_md);
    const permeval::RunComparison c = permeval::compare_runs(a.matrix, b.matrix);
    std::cout << permeval::render_run_comparison(run_sl, run_md, c);
    if (!out_file.empty()) {
        permeval::write_json_file(out_file, comparison_to_json(c));
        std::cout << "\nwrote " << out_file << "\n";
    }
    return 0;
}

int cmd_compare_fixture(const std::string& fixture_path, const std::string& out_file) {
    const permeval::VarianceTable table =
        permeval::variance_table_from_json(read_json_file(fixture_path), fixture_path);
    const permeval::VarianceComparison c = permeval::compare_variance_table(table);
    std::cout << permeval::render_variance_comparison(table, c);
    if (!out_file.empty()) {
        permeval::write_json_file(out_file, permeval::variance_comparison_to_json(table, c));
        std::cout << "\nwrote " << out_file << "\n";
    }
    return 0;
}

int cmd_corr(const std::string& input_path, const std::string& out_file) {
    const auto [md, sl] = permeval::benchmark_tables_from_json(read_json_file(input_path), input_path);
    const permeval::CorrelationDiff c = permeval::correlation_diff(md, sl);
    std::cout << permeval::render_correlation_diff(c);
    if (!out_file.empty()) {
        permeval::write_json_file(out_file, permeval::correlation_diff_to_json(c));
        std::cout << "\nwrote " << out_file << "\n";
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    std::vector<permeval::SummaryRow> rows;
    ordered_json all_summaries = ordered_json::array();
    ordered_json boxes = ordered_json::array();
    for (const auto& dir : run_dirs) {
        const ordered_json s = read_ordered_json_file(fs::path(dir) / "summary.json");
        permeval::SummaryRow row;
        try {
            row.model = s.at("model_id").get<std::string>();
            row.dataset = s.at("dataset_id").get<std::string>();
            row.protocol = s.at("protocol").get<std::string>();
        } catch (const ordered_json::exception& e) {
            throw permeval::ConfigError(dir + "/summary.json: " + e.what());
        }
        row.summary = permeval::summary_from_json(nlohmann::json(s.at("summary")), dir + "/summary.json");
        rows.push_back(row);
        all_summaries.push_back(s);
        const fs::path box_path = fs::path(dir) / "boxplot.json";
        if (fs::exists(box_path))
            for (const auto& entry : read_ordered_json_file(box_path)) boxes.push_back(entry);
    }
    const std::string table = permeval::render_summary_table(rows);
    std::cout << table;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        permeval::write_text_file(fs::path(out_dir) / "report.txt", table);
        ordered_json combined;
        combined["runs"] = all_summaries;
        permeval::write_json_file(fs::path(out_dir) / "report.json", combined);
        permeval::write_json_file(fs::path(out_dir) / "boxplot.json", boxes);
        std::cout << "\nwrote report.txt, report.json, boxplot.json under " << out_dir << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Permutation-attack evaluation harness for multiple-choice benchmarks"};
    app.require_subcommand(1);

    GenOptions gen;
    auto* sub_gen = app.add_subcommand("gen-nonsense", "Generate the random-word MCQ dataset");
    sub_gen->add_option("--wordlist", gen.wordlist, "Word list file, one word per line")
        ->required()->check(CLI::ExistingFile);
    sub_gen->add_option("--out", gen.out_dir, "Output directory")->required();
    sub_gen->add_option("--seed", gen.seed, "Generator seed (default 0)");
    sub_gen->add_option("--questions", gen.questions, "Test questions (default 1000)");
    sub_gen->add_option("--options", gen.options, "Options per question (default 4)");
    sub_gen->add_option("--validation", gen.validation, "Validation questions (default 100)");

    RunOptions run;
    auto* sub_run = app.add_subcommand("run", "Execute a permutation sweep");
    sub_run->add_option("--config", run.config, "Run config JSON")->required()->check(CLI::ExistingFile);
    sub_run->add_option("--output-dir", run.output_dir, "Override output_dir");
    sub_run->add_option("--dataset", run.dataset, "Override dataset.path");
    sub_run->add_option("--fewshot", run.fewshot, "Override dataset.fewshot_path");
    sub_run->add_option("--mode", run.mode, "Override protocol.mode")
        ->check(CLI::IsMember({"standard", "matched"}));
    sub_run->add_option("--labels", run.labels, "Override protocol.labels (letters|digits|dash)");
    sub_run->add_option("--shots", run.shots, "Override protocol.shots");
    sub_run->add_flag("--cot", run.cot, "Force chain-of-thought cue on");
    sub_run->add_flag("--no-cot", run.no_cot, "Force chain-of-thought cue off");
    sub_run->add_flag("--permute-fewshot", run.permute_fewshot, "Attacks also re-present exemplars");
    sub_run->add_flag("--no-permute-fewshot", run.no_permute_fewshot, "Attacks leave exemplars alone");
    sub_run->add_option("--master-seed", run.master_seed, "Override master_seed");
    sub_run->add_option("--concurrency", run.concurrency, "Override concurrency");
    sub_run->add_option("--temperature", run.temperature, "Override generation.temperature");
    sub_run->add_option("--max-tokens", run.max_tokens, "Override generation.max_tokens");

    std::string score_run_dir_opt, score_agreement = "identity", score_out;
    auto* sub_score = app.add_subcommand("score", "Recompute metrics from cached transcripts");
    sub_score->add_option("--run", score_run_dir_opt, "Run directory")->required()
        ->check(CLI::ExistingDirectory);
    sub_score->add_option("--agreement", score_agreement, "SCORE agreement: identity|embedding")
        ->check(CLI::IsMember({"identity", "embedding"}));
    sub_score->add_option("--out", score_out, "Write summary JSON here");

    std::string cmp_a, cmp_b, cmp_fixture, cmp_out;
    auto* sub_cmp = app.add_subcommand("compare", "Baseline-vs-reduced protocol statistics");
    sub_cmp->add_option("--run-a", cmp_a, "Baseline (labeled) run directory")
        ->check(CLI::ExistingDirectory);
    sub_cmp->add_option("--run-b", cmp_b, "Reduced (label-free) run directory")
        ->check(CLI::ExistingDirectory);
    sub_cmp->add_option("--fixture", cmp_fixture, "Variance fixture JSON instead of run dirs")
        ->check(CLI::ExistingFile);
    sub_cmp->add_option("--out", cmp_out, "Write comparison JSON here");

    std::string corr_input, corr_out;
    auto* sub_corr = app.add_subcommand("corr", "Cross-benchmark correlation differences");
    sub_corr->add_option("--input", corr_input, "Benchmark-means JSON")->required()
        ->check(CLI::ExistingFile);
    sub_corr->add_option("--out", corr_out, "Write matrices JSON here");

    std::vector<std::string> report_runs;
    std::string report_out;
    auto* sub_report = app.add_subcommand("report", "Combine run directories into one report");
    sub_report->add_option("--run", report_runs, "Run directory (repeatable)")->required()
        ->check(CLI::ExistingDirectory);
    sub_report->add_option("--out", report_out, "Report output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2; // bad arguments are configuration errors
    }

    try {
        if (app.got_subcommand(sub_gen)) return cmd_gen_nonsense(gen);
        if (app.got_subcommand(sub_run)) return cmd_run(run);
        if (app.got_subcommand(sub_score))
            return cmd_score(score_run_dir_opt, score_agreement, score_out);
        if (app.got_subcommand(sub_cmp)) {
            const bool runs = !cmp_a.empty() || !cmp_b.empty();
            if (runs && !cmp_fixture.empty())
                throw permeval::ConfigError("compare takes either --run-a/--run-b or --fixture");
            if (runs) {
                if (cmp_a.empty() || cmp_b.empty())
                    throw permeval::ConfigError("compare needs both --run-a and --run-b");
                return cmd_compare_runs(cmp_a, cmp_b, cmp_out);
            }
            if (cmp_fixture.empty())
                throw permeval::ConfigError("compare needs --run-a/--run-b or --fixture");
            return cmd_compare_fixture(cmp_fixture, cmp_out);
        }
        if (app.got_subcommand(sub_corr)) return cmd_corr(corr_input, corr_out);
        if (app.got_subcommand(sub_report)) return cmd_report(report_runs, report_out);
    } catch (const permeval::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const permeval::BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return 3;
    } catch (const permeval::IncompleteGridError& e) {
        std::cerr << "incomplete grid: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
