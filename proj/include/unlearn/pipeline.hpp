#pragma once

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "unlearn/anchors.hpp"
#include "unlearn/checkpoint_io.hpp"
#include "unlearn/config.hpp"
#include "unlearn/corpus.hpp"
#include "unlearn/eval.hpp"
#include "unlearn/hash.hpp"
#include "unlearn/judge_client.hpp"
#include "unlearn/labels.hpp"
#include "unlearn/model.hpp"
#include "unlearn/translate.hpp"
#include "unlearn/vocab.hpp"

namespace unlearn {

struct stage_error : std::runtime_error {
    std::string stage;
    stage_error(const std::string& stage_name, const std::string& why)
        : std::runtime_error("stage " + stage_name + " failed: " + why), stage(stage_name) {}
};

// Runs the four-step procedure as resumable stages. Every stage writes a
// manifest keyed by a hash of its configuration slice and input artifacts;
// reruns with matching hashes and existing outputs are skipped, so an
// interrupted run continues where it stopped and produces the same bytes.
class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg, bool verbose = false)
        : cfg_(std::move(cfg)), work_(cfg_.work_dir), verbose_(verbose) {}

    const PipelineConfig& config() const { return cfg_; }

    // ---- artifact paths ----
    std::filesystem::path generic_train_path() const { return work_ / "generic_train.txt"; }
    std::filesystem::path generic_holdout_path() const { return work_ / "generic_holdout.txt"; }
    std::filesystem::path canon_dir() const { return work_ / "canon"; }
    std::filesystem::path canon_train_path() const { return work_ / "canon_train.txt"; }
    std::filesystem::path canon_holdout_path() const { return work_ / "canon_holdout.txt"; }
    std::filesystem::path pretrain_text_path() const { return work_ / "pretrain.txt"; }
    std::filesystem::path vocab_path() const { return work_ / "vocab.txt"; }
    std::filesystem::path baseline_path() const { return work_ / "checkpoints" / "baseline.ckpt"; }
    std::filesystem::path reinforced_path() const { return work_ / "checkpoints" / "reinforced.ckpt"; }
    std::filesystem::path unlearned_path() const {
        return work_ / "checkpoints" / ("unlearned" + suffix() + ".ckpt");
    }
    std::filesystem::path dataset_path() const { return work_ / ("dataset" + suffix() + ".jsonl"); }
    std::filesystem::path report_path() const { return work_ / ("report" + suffix() + ".jsonl"); }

    // ---- stages ----

    void run_generate_canon() {
        const std::string name = "generate-canon";
        std::vector<std::string> parts = {name,
                                          std::to_string(cfg_.seed),
                                          std::to_string(cfg_.canon_characters),
                                          std::to_string(cfg_.canon_places),
                                          std::to_string(cfg_.canon_artifacts),
                                          std::to_string(cfg_.canon_stories),
                                          std::to_string(cfg_.canon_tokens),
                                          std::to_string(cfg_.canon_holdout_fraction),
                                          std::to_string(cfg_.generic_tokens),
                                          std::to_string(cfg_.generic_holdout_fraction),
                                          std::to_string(cfg_.eval_probes),
                                          std::to_string(cfg_.eval_prompts),
                                          cfg_.generic_text_path};
        if (!cfg_.generic_text_path.empty())
            parts.push_back(hex64(fnv1a64(read_file(cfg_.generic_text_path))));
        run_stage(name, hash_parts(parts),
                  {generic_train_path(), generic_holdout_path(), canon_dir() / "canon.txt",
                   canon_dir() / "dictionary.json", canon_dir() / "probes.jsonl",
                   canon_dir() / "prompts.jsonl", canon_dir() / "lexicon.txt", canon_train_path(),
                   canon_holdout_path()},
                  [&] {
                      std::string generic =
                          cfg_.generic_text_path.empty()
                              ? generate_generic(derive_seed(cfg_.seed, "generic"), cfg_.generic_tokens)
                              : clean_text(read_file(cfg_.generic_text_path));
                      auto [gtrain, ghold] = split_holdout(generic, cfg_.generic_holdout_fraction);
                      write_file(generic_train_path(), gtrain);
                      write_file(generic_holdout_path(), ghold);

                      CanonSpec spec;
                      spec.seed = derive_seed(cfg_.seed, "canon");
                      spec.n_characters = cfg_.canon_characters;
                      spec.n_places = cfg_.canon_places;
                      spec.n_artifacts = cfg_.canon_artifacts;
                      spec.story_count = cfg_.canon_stories;
                      spec.tokens_target = cfg_.canon_tokens;
                      spec.probe_count = cfg_.eval_probes;
                      spec.prompt_count = cfg_.eval_prompts;
                      CanonBundle bundle = generate_canon(spec, generic);
                      write_bundle(bundle, canon_dir());
                      auto [ctrain, chold] = split_holdout(bundle.canon_text, cfg_.canon_holdout_fraction);
                      write_file(canon_train_path(), ctrain);
                      write_file(canon_holdout_path(), chold);
                  });
    }

    void run_tokenize() {
        const std::string name = "tokenize";
        run_stage(name,
                  hash_parts({name, std::to_string(cfg_.seed), std::to_string(cfg_.mix_ratio),
                              std::to_string(cfg_.model.vocab_size), file_hash(generic_train_path()),
                              file_hash(canon_train_path())}),
                  {pretrain_text_path(), vocab_path()}, [&] {
                      std::vector<std::string> blocks =
                          mix_pretraining_corpus(read_file(generic_train_path()),
                                                 read_file(canon_train_path()), cfg_.mix_ratio,
                                                 derive_seed(cfg_.seed, "mix"));
                      std::string text;
                      for (const std::string& b : blocks) {
                          text += b;
                          text += "\n\n";
                      }
                      write_file(pretrain_text_path(), text);
                      Vocab vocab = train_tokenizer(text, cfg_.model.vocab_size);
                      vocab.save(vocab_path());
                  });
    }

    void run_pretrain() {
        const std::string name = "pretrain";
        run_stage(name,
                  hash_parts({name, std::to_string(cfg_.seed), model_key(), plan_key(cfg_.pretrain),
                              std::to_string(detail::resolve_threads(cfg_.threads)),
                              file_hash(pretrain_text_path()), file_hash(vocab_path())}),
                  {baseline_path()}, [&] {
                      Vocab vocab = Vocab::load(vocab_path());
                      std::vector<TokenSeq> blocks =
                          encode_blocks(vocab, read_file(pretrain_text_path()), cfg_.model.context_len);
                      ModelConfig mc = cfg_.model;
                      mc.seed = derive_seed(cfg_.seed, "init");
                      Checkpoint model = init_model(mc);
                      TrainOptions opts;
                      opts.seed = derive_seed(cfg_.seed, "pretrain");
                      opts.threads = cfg_.threads;
                      if (verbose_) opts.on_step = progress_logger(name);
                      model = train(model, blocks, cfg_.pretrain, opts);
                      model.role = Role::baseline;
                      save_checkpoint(model, baseline_path());
                  });
    }

    void run_reinforce() {
        const std::string name = "reinforce";
        run_stage(name,
                  hash_parts({name, std::to_string(cfg_.seed), plan_key(cfg_.reinforce),
                              std::to_string(detail::resolve_threads(cfg_.threads)),
                              file_hash(baseline_path()), file_hash(canon_train_path()),
                              file_hash(vocab_path())}),
                  {reinforced_path()}, [&] {
                      Vocab vocab = Vocab::load(vocab_path());
                      std::vector<TokenSeq> blocks =
                          encode_blocks(vocab, read_file(canon_train_path()), cfg_.model.context_len);
                      Checkpoint model = load_checkpoint(baseline_path());
                      TrainOptions opts;
                      opts.seed = derive_seed(cfg_.seed, "reinforce");
                      opts.threads = cfg_.threads;
                      if (verbose_) opts.on_step = progress_logger(name);
                      model = train(model, blocks, cfg_.reinforce, opts);
                      model.role = Role::reinforced;
                      save_checkpoint(model, reinforced_path());
                  });
    }

    void run_gen_labels() {
        const std::string name = "gen-labels";
        if (cfg_.ablation == Ablation::reversed_loss)
            throw stage_error(name, "reversed_loss ablation does not use generic labels");
        const bool needs_reinforced = cfg_.alpha > 0;
        std::vector<std::string> parts = {name,
                                          std::to_string(cfg_.alpha),
                                          std::to_string(cfg_.penalty),
                                          std::to_string(cfg_.block_tokens),
                                          std::to_string(cfg_.case_variants ? 1 : 0),
                                          ablation_name(cfg_.ablation),
                                          file_hash(baseline_path()),
                                          file_hash(vocab_path()),
                                          file_hash(canon_dir() / "dictionary.json"),
                                          file_hash(canon_train_path())};
        if (needs_reinforced) parts.push_back(file_hash(reinforced_path()));
        run_stage(name, hash_parts(parts), {dataset_path()}, [&] {
            Vocab vocab = Vocab::load(vocab_path());
            AnchorDictionary dict;
            if (cfg_.ablation != Ablation::reinforcement_only)
                dict = load_dictionary(canon_dir() / "dictionary.json", vocab, cfg_.case_variants);
            Checkpoint baseline = load_checkpoint(baseline_path());
            Checkpoint reinforced = needs_reinforced ? load_checkpoint(reinforced_path()) : baseline;
            std::vector<TokenSeq> blocks = label_blocks(vocab, read_file(canon_train_path()),
                                                        cfg_.block_tokens, cfg_.model.context_len, dict);
            GenericCombineParams params{cfg_.alpha, cfg_.penalty};
            std::vector<FinetuneExample> examples =
                generate_dataset(baseline, reinforced, blocks, dict, params, cfg_.threads);
            write_file(dataset_path(), dataset_to_jsonl(examples, vocab.content_hash(), cfg_.alpha,
                                                        dict.content_hash()));
        });
    }

    void run_unlearn() {
        const std::string name = "unlearn";
        std::vector<std::string> parts = {name,
                                          std::to_string(cfg_.seed),
                                          plan_key(cfg_.unlearn),
                                          std::to_string(cfg_.unlearn_steps),
                                          ablation_name(cfg_.ablation),
                                          std::to_string(detail::resolve_threads(cfg_.threads)),
                                          eval_key(),
                                          file_hash(baseline_path()),
                                          file_hash(vocab_path())};
        if (cfg_.ablation == Ablation::reversed_loss) parts.push_back(file_hash(canon_train_path()));
        else parts.push_back(file_hash(dataset_path()));
        run_stage(name, hash_parts(parts), {unlearned_path(), report_path()}, [&] {
            EvalContext ev = build_eval_context();

            std::vector<TokenSeq> blocks;
            LabeledBlocks labeled;
            bool negate = false;
            if (cfg_.ablation == Ablation::reversed_loss) {
                blocks = encode_blocks(ev.vocab, read_file(canon_train_path()), cfg_.block_tokens);
                negate = true;
            } else {
                DatasetFile ds = dataset_from_jsonl(read_file(dataset_path()));
                if (ds.vocab_hash != hex64(ev.vocab.content_hash()))
                    throw std::runtime_error("dataset was built against a different vocab");
                for (FinetuneExample& ex : ds.examples) {
                    blocks.push_back(std::move(ex.source));
                    labeled.labels.push_back(std::move(ex.labels));
                    labeled.masks.push_back(std::move(ex.mask));
                }
            }
            if (blocks.empty()) throw std::runtime_error("no unlearn blocks");

            Checkpoint model = load_checkpoint(baseline_path());
            model.role = Role::unlearned;
            model.step_count = 0;

            std::vector<FamiliarityReport> reports;
            reports.push_back(evaluate_checkpoint(model, ev.vocab, ev.probes, ev.prompts,
                                                  ev.holdout_blocks, ev.judge, ev.settings));
            if (verbose_) print_report(reports.back());

            TrainPlan plan = cfg_.unlearn;
            TrainOptions opts;
            opts.seed = derive_seed(cfg_.seed, "unlearn");
            opts.threads = cfg_.threads;
            opts.negate_loss = negate;
            if (cfg_.ablation != Ablation::reversed_loss) opts.labels = &labeled;
            if (cfg_.unlearn_steps > 0) {
                opts.max_steps = cfg_.unlearn_steps;
                const int64_t per_epoch = std::max<int64_t>(
                    1, static_cast<int64_t>(blocks.size()) /
                           (static_cast<int64_t>(plan.batch_size) * plan.grad_accum));
                plan.epochs = static_cast<int>((cfg_.unlearn_steps + per_epoch - 1) / per_epoch) + 1;
            }
            int64_t last_evaluated = 0;
            Checkpoint last_snapshot = model;
            opts.on_step = [&](int64_t step, const Checkpoint& snap) {
                last_snapshot = snap;
                if (step % cfg_.eval_every != 0) return;
                reports.push_back(evaluate_checkpoint(snap, ev.vocab, ev.probes, ev.prompts,
                                                      ev.holdout_blocks, ev.judge, ev.settings));
                last_evaluated = step;
                if (verbose_) print_report(reports.back());
            };

            Checkpoint final_model;
            try {
                final_model = train(model, blocks, plan, opts);
            } catch (const judge_unavailable_error&) {
                throw;
            } catch (const std::runtime_error& e) {
                // The reversed-loss ablation maximizes cross-entropy and is
                // expected to blow up; keep the series up to the abort.
                if (std::string(e.what()).find("non-finite loss") == std::string::npos) throw;
                if (verbose_) std::cerr << "[unlearn] aborted: " << e.what() << "\n";
                final_model = last_snapshot;
            }
            if (final_model.step_count != last_evaluated) {
                reports.push_back(evaluate_checkpoint(final_model, ev.vocab, ev.probes, ev.prompts,
                                                      ev.holdout_blocks, ev.judge, ev.settings));
                if (verbose_) print_report(reports.back());
            }
            save_checkpoint(final_model, unlearned_path());
            write_file(report_path(), reports_to_jsonl(reports));
        });
    }

    std::vector<FamiliarityReport> run_all() {
        run_generate_canon();
        run_tokenize();
        run_pretrain();
        if (cfg_.ablation == Ablation::full || cfg_.ablation == Ablation::reinforcement_only)
            run_reinforce();
        if (cfg_.ablation != Ablation::reversed_loss) run_gen_labels();
        run_unlearn();
        return reports_from_jsonl(read_file(report_path()));
    }

    FamiliarityReport evaluate_file(const std::filesystem::path& checkpoint) {
        EvalContext ev = build_eval_context();
        Checkpoint model = load_checkpoint(checkpoint);
        return evaluate_checkpoint(model, ev.vocab, ev.probes, ev.prompts, ev.holdout_blocks,
                                   ev.judge, ev.settings);
    }

    // Two-column view of one fine-tuning block: source token | label token.
    std::string dump_translation(int block_index) {
        Vocab vocab = Vocab::load(vocab_path());
        AnchorDictionary dict;
        if (cfg_.ablation != Ablation::reinforcement_only)
            dict = load_dictionary(canon_dir() / "dictionary.json", vocab, cfg_.case_variants);
        Checkpoint baseline = load_checkpoint(baseline_path());
        Checkpoint reinforced = cfg_.alpha > 0 ? load_checkpoint(reinforced_path()) : baseline;
        std::vector<TokenSeq> blocks = label_blocks(vocab, read_file(canon_train_path()),
                                                    cfg_.block_tokens, cfg_.model.context_len, dict);
        if (block_index < 0 || block_index >= static_cast<int>(blocks.size()))
            throw std::runtime_error("block index out of range (have " +
                                     std::to_string(blocks.size()) + ")");
        GenericCombineParams params{cfg_.alpha, cfg_.penalty};
        FinetuneExample ex = generate_example(baseline, reinforced,
                                              blocks[static_cast<size_t>(block_index)], dict, params);
        std::string out;
        for (size_t i = 0; i < ex.source.size(); i++) {
            out += printable(vocab.token(ex.source[i]));
            out += " | ";
            out += i == 0 ? std::string("-") : printable(vocab.token(ex.labels[i]));
            if (ex.mask[i] == 0) out += "   (masked)";
            out += '\n';
        }
        return out;
    }

    // ---- shared helpers ----

    static std::vector<TokenSeq> encode_blocks(const Vocab& vocab, const std::string& text,
                                               int block_len) {
        TokenSeq all = vocab.encode(text);
        std::vector<TokenSeq> blocks;
        for (size_t at = 0; at + 2 <= all.size(); at += static_cast<size_t>(block_len)) {
            size_t end = std::min(all.size(), at + static_cast<size_t>(block_len));
            if (end - at < 2) break;
            blocks.emplace_back(all.begin() + static_cast<long>(at), all.begin() + static_cast<long>(end));
        }
        if (blocks.empty()) throw std::runtime_error("corpus too small for one block");
        return blocks;
    }

    // Blocks for label generation: translations may be longer than their
    // anchors, so any block whose translated form would overflow the context
    // window is bisected until it fits.
    static std::vector<TokenSeq> label_blocks(const Vocab& vocab, const std::string& text,
                                              int block_len, int context_len,
                                              const AnchorDictionary& dict) {
        std::vector<TokenSeq> raw = encode_blocks(vocab, text, block_len);
        std::vector<TokenSeq> out;
        std::vector<TokenSeq> pending(raw.rbegin(), raw.rend());
        while (!pending.empty()) {
            TokenSeq block = std::move(pending.back());
            pending.pop_back();
            const size_t translated = translate_block(block, dict).translated.size();
            if (static_cast<int>(translated) <= context_len) {
                out.push_back(std::move(block));
                continue;
            }
            if (block.size() < 4)
                throw std::runtime_error("translation overflows context even for a tiny block");
            const size_t half = block.size() / 2;
            TokenSeq right(block.begin() + static_cast<long>(half), block.end());
            block.resize(half);
            pending.push_back(std::move(right));  // keep source order
            pending.push_back(std::move(block));
        }
        return out;
    }

    struct EvalContext {
        Vocab vocab;
        std::vector<ProbabilityProbe> probes;
        std::vector<CompletionPrompt> prompts;
        std::vector<std::string> lexicon;
        std::vector<TokenSeq> holdout_blocks;
        JudgeFn judge;
        EvalSettings settings;
    };

    EvalContext build_eval_context() {
        EvalContext ev;
        ev.vocab = Vocab::load(vocab_path());
        for (const ProbeSpec& spec : probes_from_jsonl(read_file(canon_dir() / "probes.jsonl")))
            ev.probes.push_back(encode_probe(spec, ev.vocab));
        ev.prompts = prompts_from_jsonl(read_file(canon_dir() / "prompts.jsonl"));
        ev.lexicon = load_lexicon(canon_dir() / "lexicon.txt");
        std::vector<TokenSeq> hold =
            encode_blocks(ev.vocab, read_file(generic_holdout_path()), cfg_.model.context_len);
        if (static_cast<int>(hold.size()) > cfg_.eval_holdout_blocks)
            hold.resize(static_cast<size_t>(cfg_.eval_holdout_blocks));
        ev.holdout_blocks = std::move(hold);
        if (cfg_.judge_url.empty()) {
            auto lexicon = ev.lexicon;
            ev.judge = [lexicon](const std::string& completion, const CompletionPrompt& prompt) {
                return judge_completion_rulebased(completion, prompt, lexicon);
            };
        } else {
            std::string url = cfg_.judge_url;
            int timeout = cfg_.judge_timeout_seconds;
            ev.judge = [url, timeout](const std::string& completion, const CompletionPrompt& prompt) {
                return judge_completion_http(url, completion, prompt, timeout);
            };
        }
        ev.settings.max_tokens = cfg_.eval_max_tokens;
        ev.settings.temperature = cfg_.eval_temperature;
        ev.settings.seed = derive_seed(cfg_.seed, "eval");
        ev.settings.threads = cfg_.threads;
        return ev;
    }

private:
    std::string suffix() const {
        return cfg_.ablation == Ablation::full ? "" : "_" + std::string(ablation_name(cfg_.ablation));
    }

    static std::pair<std::string, std::string> split_holdout(const std::string& text, double fraction) {
        std::vector<std::string> paras = detail::split_paragraphs(text);
        if (paras.size() < 2) throw std::runtime_error("corpus too small to split a holdout");
        size_t hold = std::max<size_t>(1, static_cast<size_t>(std::ceil(
                                              static_cast<double>(paras.size()) * fraction)));
        std::string train, holdout;
        for (size_t i = 0; i < paras.size(); i++) {
            std::string& dst = (i + hold >= paras.size()) ? holdout : train;
            dst += paras[i];
            dst += "\n\n";
        }
        return {train, holdout};
    }

    std::string model_key() const {
        const ModelConfig& m = cfg_.model;
        return std::to_string(m.layers) + "," + std::to_string(m.heads) + "," +
               std::to_string(m.embed_dim) + "," + std::to_string(m.context_len) + "," +
               std::to_string(m.vocab_size);
    }

    static std::string plan_key(const TrainPlan& p) {
        std::ostringstream out;
        out.precision(17);
        out << p.learning_rate << ',' << p.epochs << ',' << p.batch_size << ',' << p.grad_accum
            << ',' << p.context_len;
        return out.str();
    }

    std::string eval_key() const {
        std::ostringstream out;
        out.precision(17);
        out << cfg_.eval_every << ',' << cfg_.eval_max_tokens << ',' << cfg_.eval_temperature << ','
            << cfg_.eval_probes << ',' << cfg_.eval_prompts << ',' << cfg_.eval_holdout_blocks << ','
            << cfg_.judge_url;
        return out.str();
    }

    static uint64_t hash_parts_value(const std::vector<std::string>& parts) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const std::string& p : parts) {
            h = fnv1a64(p, h);
            h = fnv1a64("\x1f", h);
        }
        return h;
    }

    std::string hash_parts(const std::vector<std::string>& parts) const {
        return hex64(hash_parts_value(parts));
    }

    std::string file_hash(const std::filesystem::path& p) const {
        return hex64(fnv1a64(read_file(p)));
    }

    template <typename Fn>
    void run_stage(const std::string& name, const std::string& input_hash,
                   const std::vector<std::filesystem::path>& outputs, Fn&& body) {
        const std::filesystem::path manifest = work_ / "stages" / (name + suffix_for(name) + ".hash");
        bool fresh = std::filesystem::exists(manifest) && read_file(manifest) == input_hash;
        for (const auto& out : outputs)
            if (!std::filesystem::exists(out)) fresh = false;
        if (fresh) {
            if (verbose_) std::cerr << "[" << name << "] up to date, skipping\n";
            return;
        }
        if (verbose_) std::cerr << "[" << name << "] running\n";
        try {
            body();
        } catch (const judge_unavailable_error&) {
            throw;
        } catch (const config_error&) {
            throw;
        } catch (const std::exception& e) {
            throw stage_error(name, e.what());
        }
        write_file(manifest, input_hash);
    }

    // Ablation-dependent stages keep separate manifests so runs with
    // different ablation settings share the common prefix.
    std::string suffix_for(const std::string& name) const {
        if (name == "gen-labels" || name == "unlearn") return suffix();
        return "";
    }

    std::function<void(int64_t, const Checkpoint&)> progress_logger(const std::string& name) const {
        return [name](int64_t step, const Checkpoint&) {
            if (step % 50 == 0) std::cerr << "[" << name << "] step " << step << "\n";
        };
    }

    static void print_report(const FamiliarityReport& r) {
        std::cerr << "[eval] step " << r.step << "  completion " << r.completion_score
                  << "  probability " << r.probability_score << "  holdout-ppl "
                  << r.holdout_perplexity << "\n";
    }

    static std::string printable(const std::string& token) {
        std::string out;
        for (char c : token) {
            if (c == '\n') out += "\\n";
            else if (c == '\t') out += "\\t";
            else out += c;
        }
        return out;
    }

    PipelineConfig cfg_;
    std::filesystem::path work_;
    bool verbose_ = false;
};

}  // namespace unlearn
