#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unlearn/pipeline.hpp"

namespace {

void print_series(const std::vector<unlearn::FamiliarityReport>& series) {
    std::printf("%8s  %12s  %12s  %12s\n", "step", "completion", "probability", "holdout-ppl");
    for (const auto& r : series)
        std::printf("%8lld  %12.4f  %12.4f  %12.4f\n", static_cast<long long>(r.step),
                    r.completion_score, r.probability_score, r.holdout_perplexity);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unlearn-forge: anchored-term unlearning pipeline for a desk-scale language model"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string work_override;
    std::vector<std::string> overrides;
    bool quiet = false;
    app.add_option("-c,--config", config_path, "configuration file (key = value lines)");
    app.add_option("-w,--work", work_override, "working directory for artifacts");
    app.add_option("-s,--set", overrides, "override a config key, e.g. --set alpha=5")->take_all();
    app.add_flag("-q,--quiet", quiet, "suppress progress output");

    auto* cmd_canon = app.add_subcommand("generate-canon", "synthesize canon, dictionary, probes and generic corpus");
    auto* cmd_tokenize = app.add_subcommand("tokenize", "mix the pretraining corpus and train the vocabulary");
    auto* cmd_pretrain = app.add_subcommand("pretrain", "train the baseline model on the mixed corpus");
    auto* cmd_reinforce = app.add_subcommand("reinforce", "fine-tune the baseline further on the unlearn target");
    auto* cmd_labels = app.add_subcommand("gen-labels", "build the generic-label fine-tuning dataset");
    auto* cmd_unlearn = app.add_subcommand("unlearn", "fine-tune on generic labels, evaluating on a step grid");
    auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    auto* cmd_run_all = app.add_subcommand("run-all", "run every stage in order (resumes finished stages)");
    auto* cmd_dump = app.add_subcommand("dump-translation", "print source tokens and their generic labels");

    std::string eval_checkpoint;
    cmd_eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file (default: the unlearned model)");
    int dump_block = 0;
    cmd_dump->add_option("--block", dump_block, "block index into the unlearn target");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        unlearn::PipelineConfig cfg = unlearn::load_config_file(config_path, overrides);
        if (!work_override.empty()) cfg.work_dir = work_override;
        unlearn::Pipeline pipeline(cfg, !quiet);

        if (cmd_canon->parsed()) pipeline.run_generate_canon();
        else if (cmd_tokenize->parsed()) {
            pipeline.run_generate_canon();
            pipeline.run_tokenize();
        } else if (cmd_pretrain->parsed()) pipeline.run_pretrain();
        else if (cmd_reinforce->parsed()) pipeline.run_reinforce();
        else if (cmd_labels->parsed()) pipeline.run_gen_labels();
        else if (cmd_unlearn->parsed()) {
            pipeline.run_unlearn();
            print_series(unlearn::reports_from_jsonl(unlearn::read_file(pipeline.report_path())));
        } else if (cmd_eval->parsed()) {
            std::filesystem::path ckpt =
                eval_checkpoint.empty() ? pipeline.unlearned_path() : std::filesystem::path(eval_checkpoint);
            unlearn::FamiliarityReport r = pipeline.evaluate_file(ckpt);
            std::cout << unlearn::reports_to_jsonl({r});
        } else if (cmd_run_all->parsed()) {
            print_series(pipeline.run_all());
        } else if (cmd_dump->parsed()) {
            std::cout << pipeline.dump_translation(dump_block);
        }
        return 0;
    } catch (const unlearn::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const unlearn::judge_unavailable_error& e) {
        std::cerr << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
