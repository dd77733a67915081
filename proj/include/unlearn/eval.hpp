#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "unlearn/model.hpp"
#include "unlearn/rng.hpp"
#include "unlearn/vocab.hpp"

namespace unlearn {

// String-level probe definition as stored on disk; token ids are resolved
// against a vocabulary at load time.
struct ProbeSpec {
    std::string prompt;
    std::vector<std::string> idiosyncratic;
    std::vector<std::string> generic;
};

struct CompletionPrompt {
    std::string prompt;
    std::vector<std::string> references;  // canon surface strings present in the prompt
    int subtlety = 5;                     // 1 = obscure hint, 10 = explicit
};

struct JudgeVerdict {
    int category = 0;  // 0..3
    std::vector<std::string> evidence;
};

struct FamiliarityReport {
    int64_t step = 0;
    double completion_score = 0;
    double probability_score = 0;
    double holdout_perplexity = 0;
};

struct ProbabilityProbe {
    std::string prompt;
    std::set<int> idiosyncratic_tokens;
    std::set<int> generic_tokens;
};

namespace detail {

// First content-bearing token of a continuation string: prefer the
// space-prefixed encoding; when the space does not merge, skip the bare
// whitespace token so the id actually distinguishes the continuation.
inline void add_head_tokens(const Vocab& vocab, const std::string& s, std::set<int>& out) {
    if (s.empty()) return;
    TokenSeq spaced = vocab.encode(" " + s);
    size_t at = 0;
    while (at < spaced.size()) {
        const std::string& t = vocab.token(spaced[at]);
        if (t.find_first_not_of(" \t\n\r") != std::string::npos) break;
        at++;
    }
    if (at < spaced.size()) out.insert(spaced[at]);
    TokenSeq bare = vocab.encode(s);
    if (!bare.empty()) out.insert(bare[0]);
}

}  // namespace detail

inline ProbabilityProbe encode_probe(const ProbeSpec& spec, const Vocab& vocab) {
    ProbabilityProbe probe;
    probe.prompt = spec.prompt;
    for (const std::string& s : spec.idiosyncratic) detail::add_head_tokens(vocab, s, probe.idiosyncratic_tokens);
    for (const std::string& s : spec.generic) detail::add_head_tokens(vocab, s, probe.generic_tokens);
    if (probe.idiosyncratic_tokens.empty()) throw std::runtime_error("probe with empty idiosyncratic set");
    if (probe.generic_tokens.empty()) throw std::runtime_error("probe with empty generic set");
    for (int t : probe.idiosyncratic_tokens)
        if (probe.generic_tokens.count(t))
            throw std::runtime_error("probe token sets overlap on id " + std::to_string(t));
    return probe;
}

// Probability mass the model puts on the idiosyncratic continuations,
// averaged over probes.
inline double probability_familiarity(const Checkpoint& model, const Vocab& vocab,
                                      const std::vector<ProbabilityProbe>& probes, int threads = 0) {
    if (probes.empty()) throw std::runtime_error("empty probe list");
    std::vector<double> per_probe(probes.size());
    detail::parallel_indexed(static_cast<int>(probes.size()), detail::resolve_threads(threads),
                             [&](int i, int) {
        const ProbabilityProbe& probe = probes[static_cast<size_t>(i)];
        if (probe.idiosyncratic_tokens.empty()) throw std::runtime_error("probe with empty idiosyncratic set");
        TokenSeq ids = vocab.encode(probe.prompt);
        if (ids.empty()) throw std::runtime_error("empty probe prompt");
        LogitMatrix logits = forward(model, ids);
        const int last = static_cast<int>(ids.size()) - 1;
        const int V = model.config.vocab_size;
        double mx = logits(last, 0);
        for (int j = 1; j < V; j++) mx = std::max(mx, static_cast<double>(logits(last, j)));
        double denom = 0;
        for (int j = 0; j < V; j++) denom += std::exp(static_cast<double>(logits(last, j)) - mx);
        double mass = 0;
        for (int t : probe.idiosyncratic_tokens)
            if (t >= 0 && t < V) mass += std::exp(static_cast<double>(logits(last, t)) - mx);
        per_probe[static_cast<size_t>(i)] = mass / denom;
    });
    double total = 0;
    for (double v : per_probe) total += v;
    return total / static_cast<double>(probes.size());
}

// Greedy decoding at temperature 0, seeded sampling otherwise. The window
// slides once the context fills. Returns only the generated text.
inline std::string generate_completion(const Checkpoint& model, const Vocab& vocab,
                                       const std::string& prompt, int max_tokens,
                                       double temperature, uint64_t seed = 0, int eot_id = -1) {
    if (max_tokens < 1) throw std::runtime_error("max_tokens must be positive");
    TokenSeq ids = vocab.encode(prompt);
    if (ids.empty()) throw std::runtime_error("empty prompt");
    if (static_cast<int>(ids.size()) >= model.config.context_len)
        throw std::runtime_error("over-length prompt");
    Rng rng(seed);
    TokenSeq generated;
    const int V = model.config.vocab_size;
    for (int step = 0; step < max_tokens; step++) {
        const int window = std::min<int>(static_cast<int>(ids.size()), model.config.context_len);
        TokenSeq view(ids.end() - window, ids.end());
        LogitMatrix logits = forward(model, view);
        const int last = window - 1;
        int next = 0;
        if (temperature <= 0) {
            for (int j = 1; j < V; j++)
                if (logits(last, j) > logits(last, next)) next = j;
        } else {
            double mx = logits(last, 0);
            for (int j = 1; j < V; j++) mx = std::max(mx, static_cast<double>(logits(last, j)));
            std::vector<double> p(static_cast<size_t>(V));
            double sum = 0;
            for (int j = 0; j < V; j++) {
                p[static_cast<size_t>(j)] =
                    std::exp((static_cast<double>(logits(last, j)) - mx) / temperature);
                sum += p[static_cast<size_t>(j)];
            }
            double r = rng.uniform01() * sum;
            double acc = 0;
            next = V - 1;
            for (int j = 0; j < V; j++) {
                acc += p[static_cast<size_t>(j)];
                if (r < acc) {
                    next = j;
                    break;
                }
            }
        }
        generated.push_back(next);
        ids.push_back(next);
        if (next == eot_id) break;
    }
    return vocab.decode(generated);
}

// Category 3 when the completion contains a canon string that the prompt does
// not; otherwise 0. Categories 1-2 require thematic judgment and are left to
// the external judge.
inline JudgeVerdict judge_completion_rulebased(const std::string& completion,
                                               const CompletionPrompt& prompt,
                                               const std::vector<std::string>& canon_lexicon) {
    if (canon_lexicon.empty()) throw std::runtime_error("empty canon lexicon");
    JudgeVerdict verdict;
    for (const std::string& term : canon_lexicon) {
        if (term.empty()) continue;
        if (completion.find(term) != std::string::npos &&
            prompt.prompt.find(term) == std::string::npos)
            verdict.evidence.push_back(term);
    }
    verdict.category = verdict.evidence.empty() ? 0 : 3;
    return verdict;
}

// Weighted count of revealing completions: categories 3 and 2 count 5:1,
// normalized so an all-category-3 run scores 1.
inline double completion_familiarity(const std::vector<JudgeVerdict>& verdicts) {
    if (verdicts.empty()) throw std::runtime_error("empty verdict list");
    long n3 = 0, n2 = 0;
    for (const JudgeVerdict& v : verdicts) {
        if (v.category == 3) n3++;
        else if (v.category == 2) n2++;
    }
    return static_cast<double>(5 * n3 + n2) / (5.0 * static_cast<double>(verdicts.size()));
}

inline double holdout_perplexity(const Checkpoint& model, const std::vector<TokenSeq>& blocks,
                                 int threads = 0) {
    if (blocks.empty()) throw std::runtime_error("empty corpus");
    const int T = detail::resolve_threads(threads);
    std::vector<double> sums(static_cast<size_t>(std::max(T, 1)), 0.0);
    std::vector<size_t> counts(static_cast<size_t>(std::max(T, 1)), 0);
    detail::parallel_indexed(static_cast<int>(blocks.size()), T, [&](int i, int worker) {
        const TokenSeq& b = blocks[static_cast<size_t>(i)];
        if (b.size() < 2) return;
        LogitMatrix logits = forward(model, b);
        const int V = model.config.vocab_size;
        double local = 0;
        for (size_t pos = 1; pos < b.size(); pos++) {
            const int r = static_cast<int>(pos) - 1;
            double mx = logits(r, 0);
            for (int j = 1; j < V; j++) mx = std::max(mx, static_cast<double>(logits(r, j)));
            double sum = 0;
            for (int j = 0; j < V; j++) sum += std::exp(static_cast<double>(logits(r, j)) - mx);
            local += mx + std::log(sum) - static_cast<double>(logits(r, b[pos]));
        }
        sums[static_cast<size_t>(worker)] += local;
        counts[static_cast<size_t>(worker)] += b.size() - 1;
    });
    double total = 0;
    size_t positions = 0;
    for (size_t t = 0; t < sums.size(); t++) {
        total += sums[t];
        positions += counts[t];
    }
    if (positions == 0) throw std::runtime_error("corpus has no scorable positions");
    return std::exp(total / static_cast<double>(positions));
}

inline double mean_log_likelihood(const Checkpoint& model, const std::vector<TokenSeq>& blocks,
                                  int threads = 0) {
    return -std::log(holdout_perplexity(model, blocks, threads));
}

// -------- file formats --------

inline std::string probes_to_jsonl(const std::vector<ProbeSpec>& probes) {
    std::string out;
    for (const ProbeSpec& p : probes) {
        nlohmann::ordered_json j;
        j["prompt"] = p.prompt;
        j["idiosyncratic"] = p.idiosyncratic;
        j["generic"] = p.generic;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::vector<ProbeSpec> probes_from_jsonl(const std::string& text) {
    std::vector<ProbeSpec> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string_view line(text.data() + pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        ProbeSpec p;
        p.prompt = j.at("prompt").get<std::string>();
        p.idiosyncratic = j.at("idiosyncratic").get<std::vector<std::string>>();
        p.generic = j.at("generic").get<std::vector<std::string>>();
        out.push_back(std::move(p));
    }
    return out;
}

inline std::string prompts_to_jsonl(const std::vector<CompletionPrompt>& prompts) {
    std::string out;
    for (const CompletionPrompt& p : prompts) {
        nlohmann::ordered_json j;
        j["prompt"] = p.prompt;
        j["references"] = p.references;
        j["subtlety"] = p.subtlety;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::vector<CompletionPrompt> prompts_from_jsonl(const std::string& text) {
    std::vector<CompletionPrompt> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string_view line(text.data() + pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        CompletionPrompt p;
        p.prompt = j.at("prompt").get<std::string>();
        p.references = j.at("references").get<std::vector<std::string>>();
        p.subtlety = j.at("subtlety").get<int>();
        if (p.subtlety < 1 || p.subtlety > 10) throw std::runtime_error("subtlety out of range");
        out.push_back(std::move(p));
    }
    return out;
}

inline std::string reports_to_jsonl(const std::vector<FamiliarityReport>& reports) {
    std::string out;
    for (const FamiliarityReport& r : reports) {
        nlohmann::ordered_json j;
        j["step"] = r.step;
        j["completion_score"] = r.completion_score;
        j["probability_score"] = r.probability_score;
        j["holdout_perplexity"] = r.holdout_perplexity;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::vector<FamiliarityReport> reports_from_jsonl(const std::string& text) {
    std::vector<FamiliarityReport> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string_view line(text.data() + pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        FamiliarityReport r;
        r.step = j.at("step").get<int64_t>();
        r.completion_score = j.at("completion_score").get<double>();
        r.probability_score = j.at("probability_score").get<double>();
        r.holdout_perplexity = j.at("holdout_perplexity").get<double>();
        out.push_back(r);
    }
    return out;
}

// -------- checkpoint-level evaluation --------

using JudgeFn = std::function<JudgeVerdict(const std::string& completion, const CompletionPrompt&)>;

struct EvalSettings {
    int max_tokens = 24;
    double temperature = 0.0;
    uint64_t seed = 0;
    int threads = 0;
};

inline FamiliarityReport evaluate_checkpoint(const Checkpoint& model, const Vocab& vocab,
                                             const std::vector<ProbabilityProbe>& probes,
                                             const std::vector<CompletionPrompt>& prompts,
                                             const std::vector<TokenSeq>& holdout_blocks,
                                             const JudgeFn& judge, const EvalSettings& settings) {
    FamiliarityReport report;
    report.step = model.step_count;
    report.probability_score = probability_familiarity(model, vocab, probes, settings.threads);
    report.holdout_perplexity = holdout_perplexity(model, holdout_blocks, settings.threads);

    std::vector<std::string> completions(prompts.size());
    detail::parallel_indexed(static_cast<int>(prompts.size()),
                             detail::resolve_threads(settings.threads), [&](int i, int) {
        completions[static_cast<size_t>(i)] = generate_completion(
            model, vocab, prompts[static_cast<size_t>(i)].prompt, settings.max_tokens,
            settings.temperature, derive_seed(settings.seed, std::to_string(i)));
    });
    std::vector<JudgeVerdict> verdicts(prompts.size());
    for (size_t i = 0; i < prompts.size(); i++) verdicts[i] = judge(completions[i], prompts[i]);
    report.completion_score = completion_familiarity(verdicts);
    return report;
}

}  // namespace unlearn
