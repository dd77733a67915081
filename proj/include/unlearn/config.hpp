#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "unlearn/io.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Ablation { full, anchoring_only, reinforcement_only, reversed_loss };

inline const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::anchoring_only: return "anchoring_only";
        case Ablation::reinforcement_only: return "reinforcement_only";
        case Ablation::reversed_loss: return "reversed_loss";
    }
    return "?";
}

// Whole-experiment configuration. Flat key/value file, one `key = value` per
// line, '#' comments; every field has a default. profile=paper swaps in the
// reference hyperparameters; explicit keys always win over the profile.
struct PipelineConfig {
    uint64_t seed = 1234;
    std::string profile = "desk";
    Ablation ablation = Ablation::full;
    double alpha = 5.0;
    double penalty = 1e4;
    int threads = 0;  // 0 = hardware concurrency

    std::string work_dir = "work";
    std::string generic_text_path;  // optional external generic corpus
    std::string judge_url;          // empty = rule-based judge
    int judge_timeout_seconds = 10;
    bool case_variants = false;

    ModelConfig model;  // model.seed is derived from the experiment seed

    int canon_characters = 12;
    int canon_places = 6;
    int canon_artifacts = 6;
    int canon_stories = 40;
    int canon_tokens = 100000;
    double canon_holdout_fraction = 0.05;
    int generic_tokens = 900000;
    double generic_holdout_fraction = 0.05;
    double mix_ratio = 0.12;
    int block_tokens = 240;

    TrainPlan pretrain{3e-4, 3, 8, 2, 256};
    TrainPlan reinforce{3e-4, 3, 8, 2, 256};
    TrainPlan unlearn{1e-4, 0, 8, 2, 256};  // epochs 0 = bounded by unlearn_steps
    int64_t unlearn_steps = 120;

    int eval_every = 20;
    int eval_max_tokens = 24;
    double eval_temperature = 0.0;
    int eval_probes = 30;
    int eval_prompts = 100;
    int eval_holdout_blocks = 64;

    void set(const std::string& key, const std::string& value);
    void validate();
    std::string canonical_string() const;
};

namespace detail {

inline std::string trim(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::string unquote(std::string s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
        return s.substr(1, s.size() - 2);
    return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T out;
    in >> out;
    if (in.fail() || !in.eof()) throw config_error("bad value for " + key + ": " + value);
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw config_error("bad value for " + key + ": " + value);
}

}  // namespace detail

inline void PipelineConfig::set(const std::string& key, const std::string& raw) {
    using detail::parse_bool;
    using detail::parse_number;
    const std::string value = detail::unquote(raw);
    if (key == "seed") seed = parse_number<uint64_t>(key, value);
    else if (key == "profile") {
        if (value != "desk" && value != "paper") throw config_error("unknown profile: " + value);
        profile = value;
    } else if (key == "ablation") {
        if (value == "full") ablation = Ablation::full;
        else if (value == "anchoring_only") ablation = Ablation::anchoring_only;
        else if (value == "reinforcement_only") ablation = Ablation::reinforcement_only;
        else if (value == "reversed_loss") ablation = Ablation::reversed_loss;
        else throw config_error("unknown ablation: " + value);
    } else if (key == "alpha") alpha = parse_number<double>(key, value);
    else if (key == "penalty") penalty = parse_number<double>(key, value);
    else if (key == "threads") threads = parse_number<int>(key, value);
    else if (key == "paths.work") work_dir = value;
    else if (key == "paths.generic_text") generic_text_path = value;
    else if (key == "judge.url") judge_url = value;
    else if (key == "judge.timeout_seconds") judge_timeout_seconds = parse_number<int>(key, value);
    else if (key == "anchors.case_variants") case_variants = parse_bool(key, value);
    else if (key == "model.layers") model.layers = parse_number<int>(key, value);
    else if (key == "model.heads") model.heads = parse_number<int>(key, value);
    else if (key == "model.embed") model.embed_dim = parse_number<int>(key, value);
    else if (key == "model.context") model.context_len = parse_number<int>(key, value);
    else if (key == "model.vocab") model.vocab_size = parse_number<int>(key, value);
    else if (key == "canon.characters") canon_characters = parse_number<int>(key, value);
    else if (key == "canon.places") canon_places = parse_number<int>(key, value);
    else if (key == "canon.artifacts") canon_artifacts = parse_number<int>(key, value);
    else if (key == "canon.stories") canon_stories = parse_number<int>(key, value);
    else if (key == "canon.tokens") canon_tokens = parse_number<int>(key, value);
    else if (key == "canon.holdout_fraction") canon_holdout_fraction = parse_number<double>(key, value);
    else if (key == "generic.tokens") generic_tokens = parse_number<int>(key, value);
    else if (key == "generic.holdout_fraction")
        generic_holdout_fraction = parse_number<double>(key, value);
    else if (key == "mix.ratio") mix_ratio = parse_number<double>(key, value);
    else if (key == "block.tokens") block_tokens = parse_number<int>(key, value);
    else if (key == "pretrain.lr") pretrain.learning_rate = parse_number<double>(key, value);
    else if (key == "pretrain.epochs") pretrain.epochs = parse_number<int>(key, value);
    else if (key == "pretrain.batch") pretrain.batch_size = parse_number<int>(key, value);
    else if (key == "pretrain.accum") pretrain.grad_accum = parse_number<int>(key, value);
    else if (key == "reinforce.lr") reinforce.learning_rate = parse_number<double>(key, value);
    else if (key == "reinforce.epochs") reinforce.epochs = parse_number<int>(key, value);
    else if (key == "reinforce.batch") reinforce.batch_size = parse_number<int>(key, value);
    else if (key == "reinforce.accum") reinforce.grad_accum = parse_number<int>(key, value);
    else if (key == "unlearn.lr") unlearn.learning_rate = parse_number<double>(key, value);
    else if (key == "unlearn.epochs") unlearn.epochs = parse_number<int>(key, value);
    else if (key == "unlearn.batch") unlearn.batch_size = parse_number<int>(key, value);
    else if (key == "unlearn.accum") unlearn.grad_accum = parse_number<int>(key, value);
    else if (key == "unlearn.steps") unlearn_steps = parse_number<int64_t>(key, value);
    else if (key == "eval.every") eval_every = parse_number<int>(key, value);
    else if (key == "eval.max_tokens") eval_max_tokens = parse_number<int>(key, value);
    else if (key == "eval.temperature") eval_temperature = parse_number<double>(key, value);
    else if (key == "eval.probes") eval_probes = parse_number<int>(key, value);
    else if (key == "eval.prompts") eval_prompts = parse_number<int>(key, value);
    else if (key == "eval.holdout_blocks") eval_holdout_blocks = parse_number<int>(key, value);
    else throw config_error("unknown config key: " + key);
}

inline void PipelineConfig::validate() {
    // Ablation forcing rules.
    if (ablation == Ablation::anchoring_only) alpha = 0.0;
    if (alpha < 0) throw config_error("alpha must be non-negative");
    if (penalty < 0) throw config_error("penalty must be non-negative");
    if (mix_ratio <= 0 || mix_ratio >= 1) throw config_error("mix.ratio must be in (0, 1)");
    if (canon_holdout_fraction <= 0 || canon_holdout_fraction >= 0.5 ||
        generic_holdout_fraction <= 0 || generic_holdout_fraction >= 0.5)
        throw config_error("holdout fractions must be in (0, 0.5)");
    if (block_tokens < 2 || block_tokens > model.context_len)
        throw config_error("block.tokens must be in [2, model.context]");
    if (eval_every < 1 || eval_max_tokens < 1 || eval_probes < 1 || eval_prompts < 1 ||
        eval_holdout_blocks < 1)
        throw config_error("eval settings must be positive");
    if (unlearn_steps < 0) throw config_error("unlearn.steps must be non-negative");
    if (unlearn_steps == 0 && unlearn.epochs < 1)
        throw config_error("either unlearn.steps or unlearn.epochs must be set");
    try {
        model.validate();
        pretrain.validate();
        reinforce.validate();
        if (unlearn.epochs > 0) unlearn.validate();
    } catch (const std::exception& e) {
        throw config_error(e.what());
    }
    pretrain.context_len = model.context_len;
    reinforce.context_len = model.context_len;
    unlearn.context_len = model.context_len;
}

inline std::string PipelineConfig::canonical_string() const {
    std::ostringstream out;
    out.precision(17);
    out << "seed=" << seed << "\nprofile=" << profile << "\nablation=" << ablation_name(ablation)
        << "\nalpha=" << alpha << "\npenalty=" << penalty
        << "\ncase_variants=" << (case_variants ? 1 : 0) << "\nmodel=" << model.layers << ','
        << model.heads << ',' << model.embed_dim << ',' << model.context_len << ','
        << model.vocab_size << "\ncanon=" << canon_characters << ',' << canon_places << ','
        << canon_artifacts << ',' << canon_stories << ',' << canon_tokens << ','
        << canon_holdout_fraction << "\ngeneric=" << generic_tokens << ','
        << generic_holdout_fraction << "\nmix=" << mix_ratio << "\nblock=" << block_tokens
        << "\npretrain=" << pretrain.learning_rate << ',' << pretrain.epochs << ','
        << pretrain.batch_size << ',' << pretrain.grad_accum << "\nreinforce="
        << reinforce.learning_rate << ',' << reinforce.epochs << ',' << reinforce.batch_size << ','
        << reinforce.grad_accum << "\nunlearn=" << unlearn.learning_rate << ',' << unlearn.epochs
        << ',' << unlearn.batch_size << ',' << unlearn.grad_accum << ',' << unlearn_steps
        << "\neval=" << eval_every << ',' << eval_max_tokens << ',' << eval_temperature << ','
        << eval_probes << ',' << eval_prompts << ',' << eval_holdout_blocks << "\njudge="
        << judge_url << "\n";
    return out.str();
}

namespace detail {

inline std::vector<std::pair<std::string, std::string>> parse_config_lines(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = trim(std::string_view(text).substr(pos, end - pos));
        pos = end + 1;
        lineno++;
        if (line.empty() || line[0] == '#') {
            if (end == text.size()) break;
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("line " + std::to_string(lineno) + ": expected key = value");
        out.emplace_back(trim(std::string_view(line).substr(0, eq)),
                         trim(std::string_view(line).substr(eq + 1)));
        if (end == text.size()) break;
    }
    return out;
}

}  // namespace detail

// The paper-reference hyperparameters, kept as a named preset.
inline void apply_paper_profile(PipelineConfig& cfg) {
    cfg.model.context_len = 512;
    cfg.reinforce = TrainPlan{3e-6, 3, 8, 16, 512};
    cfg.unlearn = TrainPlan{1e-6, 2, 8, 16, 512};
    cfg.unlearn_steps = 0;  // epoch-bounded
    cfg.alpha = 5.0;
}

inline PipelineConfig load_config(const std::string& file_text,
                                  const std::vector<std::string>& overrides) {
    auto kvs = detail::parse_config_lines(file_text);
    for (const std::string& ov : overrides) {
        size_t eq = ov.find('=');
        if (eq == std::string::npos) throw config_error("--set expects key=value, got: " + ov);
        kvs.emplace_back(detail::trim(std::string_view(ov).substr(0, eq)),
                         detail::trim(std::string_view(ov).substr(eq + 1)));
    }
    PipelineConfig cfg;
    for (const auto& [k, v] : kvs)
        if (k == "profile") cfg.set(k, v);
    if (cfg.profile == "paper") apply_paper_profile(cfg);
    for (const auto& [k, v] : kvs)
        if (k != "profile") cfg.set(k, v);
    cfg.validate();
    return cfg;
}

inline PipelineConfig load_config_file(const std::string& path,
                                       const std::vector<std::string>& overrides) {
    std::string text;
    if (!path.empty()) {
        try {
            text = read_file(path);
        } catch (const std::exception& e) {
            throw config_error(e.what());
        }
    }
    return load_config(text, overrides);
}

}  // namespace unlearn
