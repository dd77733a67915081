#include <gtest/gtest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "unlearn/pipeline.hpp"

using namespace unlearn;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> tiny_overrides(const std::string& work) {
    return {
        "paths.work=" + work,
        "threads=1",
        "model.layers=1",  "model.heads=2",   "model.embed=16", "model.context=64",
        "model.vocab=512", "canon.characters=4", "canon.places=2", "canon.artifacts=2",
        "canon.stories=6", "canon.tokens=1500",  "generic.tokens=6000", "block.tokens=48",
        "pretrain.lr=1e-3", "pretrain.epochs=1", "pretrain.batch=4", "pretrain.accum=1",
        "reinforce.lr=1e-3", "reinforce.epochs=1", "reinforce.batch=4", "reinforce.accum=1",
        "unlearn.lr=5e-4", "unlearn.steps=4", "unlearn.batch=4", "unlearn.accum=1",
        "eval.every=2", "eval.max_tokens=4", "eval.probes=4", "eval.prompts=6",
        "eval.holdout_blocks=4",
    };
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) { return read_file(p); }

}  // namespace

TEST(Config, DefaultsAndOverrides) {
    PipelineConfig cfg = load_config("", {});
    EXPECT_EQ(cfg.seed, 1234u);
    EXPECT_DOUBLE_EQ(cfg.alpha, 5.0);
    EXPECT_DOUBLE_EQ(cfg.penalty, 1e4);
    EXPECT_EQ(cfg.model.layers, 4);
    EXPECT_EQ(cfg.model.embed_dim, 128);
    EXPECT_EQ(cfg.model.context_len, 256);
    EXPECT_EQ(cfg.model.vocab_size, 4096);
    EXPECT_EQ(cfg.canon_tokens, 100000);
    EXPECT_EQ(cfg.generic_tokens, 900000);
    EXPECT_DOUBLE_EQ(cfg.unlearn.learning_rate, 1e-4);
    EXPECT_DOUBLE_EQ(cfg.reinforce.learning_rate, 3e-4);
    EXPECT_EQ(cfg.unlearn_steps, 120);
    EXPECT_EQ(cfg.eval_every, 20);

    PipelineConfig set = load_config("alpha = 2.5\n# comment\nseed = 7\n", {"model.layers=2"});
    EXPECT_DOUBLE_EQ(set.alpha, 2.5);
    EXPECT_EQ(set.seed, 7u);
    EXPECT_EQ(set.model.layers, 2);
}

TEST(Config, PaperProfileValues) {
    PipelineConfig cfg = load_config("profile = paper\n", {});
    EXPECT_DOUBLE_EQ(cfg.reinforce.learning_rate, 3e-6);
    EXPECT_EQ(cfg.reinforce.batch_size, 8);
    EXPECT_EQ(cfg.reinforce.grad_accum, 16);
    EXPECT_EQ(cfg.reinforce.epochs, 3);
    EXPECT_DOUBLE_EQ(cfg.unlearn.learning_rate, 1e-6);
    EXPECT_EQ(cfg.unlearn.epochs, 2);
    EXPECT_EQ(cfg.model.context_len, 512);
    EXPECT_DOUBLE_EQ(cfg.alpha, 5.0);

    // explicit keys beat the profile regardless of order
    PipelineConfig mixed = load_config("reinforce.lr = 1e-5\nprofile = paper\n", {});
    EXPECT_DOUBLE_EQ(mixed.reinforce.learning_rate, 1e-5);
    EXPECT_EQ(mixed.reinforce.grad_accum, 16);
}

TEST(Config, Errors) {
    EXPECT_THROW(load_config("nonsense.key = 1\n", {}), config_error);
    EXPECT_THROW(load_config("alpha = banana\n", {}), config_error);
    EXPECT_THROW(load_config("ablation = sideways\n", {}), config_error);
    EXPECT_THROW(load_config("no equals sign here\n", {}), config_error);
    EXPECT_THROW(load_config("", {"mix.ratio=1.5"}), config_error);
    EXPECT_THROW(load_config("", {"block.tokens=100000"}), config_error);
}

TEST(Config, AblationForcingRules) {
    PipelineConfig cfg = load_config("ablation = anchoring_only\nalpha = 5\n", {});
    EXPECT_DOUBLE_EQ(cfg.alpha, 0.0) << "anchoring_only forces alpha to 0";
    PipelineConfig rev = load_config("ablation = reversed_loss\n", {});
    EXPECT_EQ(rev.ablation, Ablation::reversed_loss);
}

TEST(Config, CanonicalStringIsStable) {
    PipelineConfig a = load_config("", {});
    PipelineConfig b = load_config("", {});
    EXPECT_EQ(a.canonical_string(), b.canonical_string());
    PipelineConfig c = load_config("alpha = 1\n", {});
    EXPECT_NE(a.canonical_string(), c.canonical_string());
}

TEST(PipelineEndToEnd, TinyRunAllProducesReports) {
    fs::path dir = fresh_dir("unlearn_pipe_a");
    PipelineConfig cfg = load_config("", tiny_overrides(dir.string()));
    Pipeline pipe(cfg);
    std::vector<FamiliarityReport> series = pipe.run_all();

    ASSERT_EQ(series.size(), 3u);  // steps 0, 2, 4
    EXPECT_EQ(series[0].step, 0);
    EXPECT_EQ(series[1].step, 2);
    EXPECT_EQ(series[2].step, 4);
    for (const auto& r : series) {
        EXPECT_GE(r.probability_score, 0.0);
        EXPECT_LE(r.probability_score, 1.0);
        EXPECT_GE(r.completion_score, 0.0);
        EXPECT_LE(r.completion_score, 1.0);
        EXPECT_GE(r.holdout_perplexity, 1.0);
    }
    for (const fs::path& p :
         {pipe.vocab_path(), pipe.baseline_path(), pipe.reinforced_path(), pipe.dataset_path(),
          pipe.unlearned_path(), pipe.report_path(), pipe.canon_dir() / "dictionary.json"})
        EXPECT_TRUE(fs::exists(p)) << p;

    // loaded checkpoints carry their role tags
    EXPECT_EQ(load_checkpoint(pipe.baseline_path()).role, Role::baseline);
    EXPECT_EQ(load_checkpoint(pipe.reinforced_path()).role, Role::reinforced);
    EXPECT_EQ(load_checkpoint(pipe.unlearned_path()).role, Role::unlearned);

    // rerun: every stage skips, artifacts untouched
    auto stamp = fs::last_write_time(pipe.baseline_path());
    std::string report_bytes = slurp(pipe.report_path());
    Pipeline again(cfg);
    again.run_all();
    EXPECT_EQ(fs::last_write_time(pipe.baseline_path()), stamp) << "pretrain must be skipped";
    EXPECT_EQ(slurp(pipe.report_path()), report_bytes);
}

TEST(PipelineEndToEnd, InterruptedRunResumesToIdenticalBytes) {
    fs::path full_dir = fresh_dir("unlearn_pipe_full");
    PipelineConfig full_cfg = load_config("", tiny_overrides(full_dir.string()));
    Pipeline full(full_cfg);
    full.run_all();

    fs::path part_dir = fresh_dir("unlearn_pipe_part");
    PipelineConfig part_cfg = load_config("", tiny_overrides(part_dir.string()));
    {
        Pipeline first_half(part_cfg);
        first_half.run_generate_canon();
        first_half.run_tokenize();
    }  // "interrupt", then a fresh process-alike resume:
    Pipeline resumed(part_cfg);
    resumed.run_all();

    for (const char* rel : {"vocab.txt", "dataset.jsonl", "report.jsonl"})
        EXPECT_EQ(slurp(part_dir / rel), slurp(full_dir / rel)) << rel;
    EXPECT_EQ(slurp(resumed.unlearned_path()), slurp(full.unlearned_path()));
    EXPECT_EQ(slurp(resumed.baseline_path()), slurp(full.baseline_path()));
}

TEST(PipelineEndToEnd, AblationModesRunAndShareStages) {
    fs::path dir = fresh_dir("unlearn_pipe_abl");
    PipelineConfig cfg = load_config("", tiny_overrides(dir.string()));
    Pipeline full(cfg);
    full.run_all();
    const std::string baseline_bytes = slurp(full.baseline_path());
    auto baseline_stamp = fs::last_write_time(full.baseline_path());

    for (const char* ablation : {"anchoring_only", "reinforcement_only", "reversed_loss"}) {
        auto ov = tiny_overrides(dir.string());
        ov.push_back(std::string("ablation=") + ablation);
        PipelineConfig acfg = load_config("", ov);
        Pipeline pipe(acfg);
        std::vector<FamiliarityReport> series = pipe.run_all();
        EXPECT_FALSE(series.empty()) << ablation;
        EXPECT_TRUE(fs::exists(pipe.report_path())) << ablation;
        EXPECT_TRUE(fs::exists(pipe.unlearned_path())) << ablation;
        EXPECT_NE(pipe.report_path(), full.report_path()) << "ablations get their own report";
    }
    EXPECT_EQ(fs::last_write_time(full.baseline_path()), baseline_stamp)
        << "ablations must reuse the shared pretrain artifact";
    EXPECT_EQ(slurp(full.baseline_path()), baseline_bytes);

    // anchoring-only labels were generated with alpha forced to 0
    auto ov = tiny_overrides(dir.string());
    ov.push_back("ablation=anchoring_only");
    Pipeline anchoring(load_config("", ov));
    DatasetFile ds = dataset_from_jsonl(slurp(anchoring.dataset_path()));
    EXPECT_DOUBLE_EQ(ds.alpha, 0.0);
}

TEST(PipelineEndToEnd, DumpTranslationFormat) {
    fs::path dir = fresh_dir("unlearn_pipe_dump");
    PipelineConfig cfg = load_config("", tiny_overrides(dir.string()));
    Pipeline pipe(cfg);
    pipe.run_all();
    std::string dump = pipe.dump_translation(0);
    EXPECT_NE(dump.find(" | "), std::string::npos);
    int lines = 0;
    for (char c : dump)
        if (c == '\n') lines++;
    EXPECT_GE(lines, 2);
    EXPECT_LE(lines, cfg.block_tokens);
    EXPECT_THROW(pipe.dump_translation(100000), std::runtime_error);
}

TEST(PipelineEndToEnd, NeverExposedModelScoresNearZeroOnCanonProbes) {
    // Familiarity floor: a model trained only on the generic corpus puts at
    // most trace probability mass on canon continuations.
    std::string generic = generate_generic(21, 8000);
    CanonSpec spec;
    spec.seed = 22;
    spec.n_characters = 4;
    spec.n_places = 2;
    spec.n_artifacts = 2;
    spec.story_count = 6;
    spec.tokens_target = 1500;
    spec.probe_count = 8;
    spec.prompt_count = 4;
    CanonBundle bundle = generate_canon(spec, generic);

    Vocab vocab = train_tokenizer(generic + bundle.canon_text, 768);
    ModelConfig mc;
    mc.layers = 1;
    mc.heads = 2;
    mc.embed_dim = 16;
    mc.context_len = 64;
    mc.vocab_size = vocab.size();
    mc.seed = 23;
    Checkpoint model = init_model(mc);
    std::vector<TokenSeq> generic_blocks = Pipeline::encode_blocks(vocab, generic, 64);
    TrainPlan plan{1e-3, 1, 4, 1, 64};
    TrainOptions opts;
    opts.seed = 24;
    opts.threads = 1;
    model = train(model, generic_blocks, plan, opts);

    std::vector<ProbabilityProbe> probes;
    for (const ProbeSpec& p : bundle.probes) probes.push_back(encode_probe(p, vocab));
    const double floor = probability_familiarity(model, vocab, probes, 1);
    EXPECT_LE(floor, 0.05) << "never-exposed model must not look familiar";
}

TEST(PipelineEndToEnd, EvaluateFileAndFreshDirDeterminism) {
    fs::path a = fresh_dir("unlearn_pipe_det_a");
    fs::path b = fresh_dir("unlearn_pipe_det_b");
    PipelineConfig ca = load_config("", tiny_overrides(a.string()));
    PipelineConfig cb = load_config("", tiny_overrides(b.string()));
    Pipeline pa(ca);
    Pipeline pb(cb);
    pa.run_all();
    pb.run_all();
    for (const char* rel : {"vocab.txt", "dataset.jsonl", "report.jsonl"})
        EXPECT_EQ(slurp(a / rel), slurp(b / rel)) << rel;
    EXPECT_EQ(slurp(pa.baseline_path()), slurp(pb.baseline_path()));
    EXPECT_EQ(slurp(pa.unlearned_path()), slurp(pb.unlearned_path()));

    FamiliarityReport r = pa.evaluate_file(pa.baseline_path());
    std::vector<FamiliarityReport> series = reports_from_jsonl(slurp(pa.report_path()));
    EXPECT_DOUBLE_EQ(r.probability_score, series[0].probability_score);
    EXPECT_DOUBLE_EQ(r.holdout_perplexity, series[0].holdout_perplexity);
}
