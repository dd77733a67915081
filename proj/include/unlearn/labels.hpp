#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "unlearn/anchors.hpp"
#include "unlearn/hash.hpp"
#include "unlearn/model.hpp"
#include "unlearn/translate.hpp"

namespace unlearn {

struct GenericCombineParams {
    double alpha = 5.0;
    double consistency_penalty = 1e4;
};

// The reinforcement-bootstrapping combination: the baseline score minus
// alpha times the positive part of the reinforced-over-baseline excess.
// Tokens the reinforcement pushed up get pushed down; everything else keeps
// its baseline score. Plain elementwise arithmetic, exact expression order.
inline std::vector<float> combine_logits(const std::vector<float>& v_baseline,
                                         const std::vector<float>& v_reinforced, double alpha) {
    if (v_baseline.size() != v_reinforced.size())
        throw std::runtime_error("combine_logits: length mismatch");
    if (alpha < 0) throw std::runtime_error("combine_logits: negative alpha");
    const float a = static_cast<float>(alpha);
    std::vector<float> out(v_baseline.size());
    for (size_t i = 0; i < out.size(); i++) {
        const float diff = v_reinforced[i] - v_baseline[i];
        out[i] = diff > 0.0f ? v_baseline[i] - a * diff : v_baseline[i];
    }
    return out;
}

// Tracks the first tokens of translations whose anchors already occurred in
// the current block. Cleared at each block start.
struct ConsistencyState {
    std::set<int> used_translation_heads;
    double penalty = 1e4;
};

inline std::vector<float> apply_consistency_penalty(const std::vector<float>& v,
                                                    const ConsistencyState& state) {
    std::vector<float> out = v;
    for (int t : state.used_translation_heads) {
        if (t >= 0 && t < static_cast<int>(out.size()))
            out[static_cast<size_t>(t)] -= static_cast<float>(state.penalty);
    }
    return out;
}

inline int argmax_lowest_id(const std::vector<float>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); i++)
        if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
    return best;
}

struct FinetuneExample {
    TokenSeq source;
    std::vector<int> labels;  // labels[0] unused
    std::vector<int> mask;
};

// Creation of the fine-tuning dataset for one block: translate, run the
// baseline on the translated tokens and the reinforced model on the original
// ones, combine row by row through the position mapping, penalize translation
// heads of anchors already seen, and take the argmax as the hard label.
inline FinetuneExample generate_example(const Checkpoint& baseline, const Checkpoint& reinforced,
                                        const TokenSeq& block, const AnchorDictionary& dict,
                                        const GenericCombineParams& params) {
    if (baseline.config.vocab_size != reinforced.config.vocab_size)
        throw std::runtime_error("vocab mismatch between baseline and reinforced checkpoints");
    const int V = baseline.config.vocab_size;
    const int n = static_cast<int>(block.size());

    TranslationResult tr = translate_block(block, dict);
    if (static_cast<int>(tr.translated.size()) > baseline.config.context_len)
        throw std::runtime_error("translated block exceeds context length");

    LogitMatrix base_logits = forward(baseline, tr.translated);
    // alpha = 0 short-circuits the reinforced pass entirely; the ablation runs
    // without a reinforced checkpoint.
    LogitMatrix reinf_logits;
    if (params.alpha > 0) reinf_logits = forward(reinforced, block);

    FinetuneExample ex;
    ex.source = block;
    ex.labels.assign(static_cast<size_t>(n), 0);
    if (n > 0) ex.labels[0] = block[0];
    ex.mask = build_loss_mask(tr).mask;

    ConsistencyState state;
    state.penalty = params.consistency_penalty;
    size_t next_match = 0;

    std::vector<float> v_base(static_cast<size_t>(V)), v_reinf(static_cast<size_t>(V));
    for (int i = 1; i < n; i++) {
        // First-occurrence anchors fully consumed before position i
        // contribute their translation head to the penalty set.
        while (next_match < tr.matches.size() &&
               tr.matches[next_match].start + tr.matches[next_match].length <= i) {
            const AnchorMatch& m = tr.matches[next_match];
            if (tr.first_occurrence[next_match]) {
                const AnchorForm& form = dict.entries()[static_cast<size_t>(m.entry_index)]
                                             .forms[static_cast<size_t>(m.variant_index)];
                if (!form.translation_tokens.empty())
                    state.used_translation_heads.insert(form.translation_tokens[0]);
            }
            next_match++;
        }

        const int row = label_row_index(tr.mapping, i);
        for (int j = 0; j < V; j++) v_base[static_cast<size_t>(j)] = base_logits(row, j);
        std::vector<float> combined;
        if (params.alpha > 0) {
            for (int j = 0; j < V; j++) v_reinf[static_cast<size_t>(j)] = reinf_logits(i - 1, j);
            combined = combine_logits(v_base, v_reinf, params.alpha);
        } else {
            combined = v_base;
        }
        std::vector<float> adjusted = apply_consistency_penalty(combined, state);
        ex.labels[static_cast<size_t>(i)] = argmax_lowest_id(adjusted);
    }
    return ex;
}

inline std::vector<FinetuneExample> generate_dataset(const Checkpoint& baseline,
                                                     const Checkpoint& reinforced,
                                                     const std::vector<TokenSeq>& blocks,
                                                     const AnchorDictionary& dict,
                                                     const GenericCombineParams& params,
                                                     int threads = 0) {
    std::vector<FinetuneExample> out(blocks.size());
    detail::parallel_indexed(static_cast<int>(blocks.size()), detail::resolve_threads(threads),
                             [&](int i, int) {
                                 out[static_cast<size_t>(i)] =
                                     generate_example(baseline, reinforced,
                                                      blocks[static_cast<size_t>(i)], dict, params);
                             });
    return out;
}

// Dataset file: a JSON header line with the vocab hash, alpha and dictionary
// hash, then one JSON record per block.
inline std::string dataset_to_jsonl(const std::vector<FinetuneExample>& examples,
                                    uint64_t vocab_hash, double alpha, uint64_t dict_hash) {
    nlohmann::ordered_json header;
    header["vocab_hash"] = hex64(vocab_hash);
    header["alpha"] = alpha;
    header["dict_hash"] = hex64(dict_hash);
    std::string out = header.dump() + "\n";
    for (const FinetuneExample& ex : examples) {
        nlohmann::ordered_json rec;
        rec["source"] = ex.source;
        rec["labels"] = ex.labels;
        rec["mask"] = ex.mask;
        out += rec.dump();
        out += '\n';
    }
    return out;
}

struct DatasetFile {
    std::string vocab_hash;
    double alpha = 0;
    std::string dict_hash;
    std::vector<FinetuneExample> examples;
};

inline DatasetFile dataset_from_jsonl(const std::string& text) {
    DatasetFile out;
    size_t pos = 0;
    bool header = true;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string_view line(text.data() + pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        if (header) {
            out.vocab_hash = j.at("vocab_hash").get<std::string>();
            out.alpha = j.at("alpha").get<double>();
            out.dict_hash = j.at("dict_hash").get<std::string>();
            header = false;
            continue;
        }
        FinetuneExample ex;
        ex.source = j.at("source").get<TokenSeq>();
        ex.labels = j.at("labels").get<std::vector<int>>();
        ex.mask = j.at("mask").get<std::vector<int>>();
        if (ex.labels.size() != ex.source.size() || ex.mask.size() != ex.source.size())
            throw std::runtime_error("dataset record with mismatched lengths");
        out.examples.push_back(std::move(ex));
    }
    if (header) throw std::runtime_error("dataset file missing header");
    return out;
}

}  // namespace unlearn
