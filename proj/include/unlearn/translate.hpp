#pragma once

#include <set>
#include <stdexcept>
#include <vector>

#include "unlearn/anchors.hpp"
#include "unlearn/vocab.hpp"

namespace unlearn {

// Translated token block plus the source -> translated alignment. mapping[i]
// is the number of translated tokens emitted once source token i has been
// consumed; it is non-decreasing, rises by exactly 1 outside matched spans,
// and ends at the translated length.
struct TranslationResult {
    TokenSeq translated;
    std::vector<int> mapping;
    std::vector<AnchorMatch> matches;
    std::vector<bool> first_occurrence;  // per match; false from the second
                                         // appearance of the same anchor in the block
};

struct LossMask {
    std::vector<int> mask;  // 1 = counted, 0 = dropped
};

inline TranslationResult translate_block(const TokenSeq& block, const AnchorDictionary& dict) {
    TranslationResult result;
    result.matches = find_matches(block, dict);
    result.mapping.resize(block.size());
    result.first_occurrence.reserve(result.matches.size());

    std::set<int> seen_entries;
    size_t next_match = 0;
    int i = 0;
    const int n = static_cast<int>(block.size());
    while (i < n) {
        if (next_match < result.matches.size() && result.matches[next_match].start == i) {
            const AnchorMatch& m = result.matches[next_match];
            result.first_occurrence.push_back(seen_entries.insert(m.entry_index).second);
            const AnchorForm& form = dict.entries()[static_cast<size_t>(m.entry_index)]
                                         .forms[static_cast<size_t>(m.variant_index)];
            const int before = static_cast<int>(result.translated.size());
            result.translated.insert(result.translated.end(), form.translation_tokens.begin(),
                                     form.translation_tokens.end());
            const int k = m.length;
            const int t = static_cast<int>(form.translation_tokens.size());
            // Intra-span alignment: advance one translated token per source
            // token up to min(k, t), hold flat if the translation is shorter,
            // and attribute the remainder to the span's last source token.
            for (int j = 0; j < k; j++)
                result.mapping[static_cast<size_t>(i + j)] =
                    before + (j == k - 1 ? t : std::min(j + 1, t));
            i += k;
            next_match++;
        } else {
            result.translated.push_back(block[static_cast<size_t>(i)]);
            result.mapping[static_cast<size_t>(i)] = static_cast<int>(result.translated.size());
            i++;
        }
    }
    return result;
}

// Positions covered by a repeated anchor (second appearance onward) are
// excluded from the fine-tuning loss.
inline LossMask build_loss_mask(const TranslationResult& result) {
    LossMask out;
    out.mask.assign(result.mapping.size(), 1);
    for (size_t m = 0; m < result.matches.size(); m++) {
        if (result.first_occurrence[m]) continue;
        const AnchorMatch& match = result.matches[m];
        for (int j = 0; j < match.length; j++) out.mask[static_cast<size_t>(match.start + j)] = 0;
    }
    return out;
}

// Row of the translated-block logits whose next-token prediction stands in
// for source position i. A causal row predicts the token after it, hence the
// -1 against the cumulative count of the preceding source token.
inline int label_row_index(const std::vector<int>& mapping, int i) {
    if (i <= 0) throw std::runtime_error("no label for first position");
    if (i >= static_cast<int>(mapping.size())) throw std::runtime_error("position beyond block");
    return mapping[static_cast<size_t>(i - 1)] - 1;
}

}  // namespace unlearn
