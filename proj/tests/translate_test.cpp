#include <gtest/gtest.h>

#include <sstream>
#include <string>
#include <vector>

#include "unlearn/rng.hpp"
#include "unlearn/translate.hpp"

using namespace unlearn;

namespace {

const std::vector<std::string> kFiller = {"the", "old",  "mill",   "stood", "near",  "river",
                                          "they", "saw", "walked", "to",    "market", "in",
                                          "the",  "morning", "lane", "quiet"};
const std::vector<std::string> kAnchorWords = {"Vexdril", "Zormark", "Quilbram", "Thalrix"};
const std::vector<std::string> kTranslationWords = {"tom", "castle", "bridge", "flute", "anna"};

Vocab pool_vocab() {
    std::string corpus;
    Rng rng(11);
    for (int s = 0; s < 400; s++) {
        std::ostringstream line;
        const int words = 5 + static_cast<int>(rng.below(6));
        for (int w = 0; w < words; w++) {
            if (w) line << ' ';
            if (rng.below(4) == 0) line << kAnchorWords[rng.below(kAnchorWords.size())];
            else line << kFiller[rng.below(kFiller.size())];
        }
        line << ". ";
        corpus += line.str();
    }
    for (const std::string& w : kTranslationWords)
        for (int i = 0; i < 20; i++) corpus += " " + w;
    return train_tokenizer(corpus, 600);
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

// Word-level leftmost-longest substitution: the independent reference for
// translate_block on texts built from space-separated pool words.
std::string substitute_reference(const std::string& text,
                                 const std::vector<std::pair<std::string, std::string>>& dict) {
    std::vector<std::vector<std::string>> anchor_words, translation_words;
    for (const auto& [a, t] : dict) {
        anchor_words.push_back(split_words(a));
        translation_words.push_back(split_words(t));
    }
    std::vector<std::string> words = split_words(text);
    std::vector<std::string> out;
    size_t i = 0;
    while (i < words.size()) {
        int best = -1;
        size_t best_len = 0;
        for (size_t e = 0; e < anchor_words.size(); e++) {
            const auto& aw = anchor_words[e];
            if (aw.size() <= best_len || i + aw.size() > words.size()) continue;
            bool ok = true;
            for (size_t k = 0; k < aw.size(); k++)
                if (words[i + k] != aw[k]) ok = false;
            if (ok) {
                best = static_cast<int>(e);
                best_len = aw.size();
            }
        }
        if (best >= 0) {
            for (const std::string& w : translation_words[static_cast<size_t>(best)]) out.push_back(w);
            i += best_len;
        } else {
            out.push_back(words[i++]);
        }
    }
    std::string joined;
    for (size_t k = 0; k < out.size(); k++) {
        if (k) joined += ' ';
        joined += out[k];
    }
    return joined;
}

void check_mapping_shape(const TranslationResult& tr, size_t block_len) {
    ASSERT_EQ(tr.mapping.size(), block_len);
    int prev = 0;
    for (int c : tr.mapping) {
        EXPECT_GE(c, prev);
        prev = c;
    }
    if (block_len > 0) EXPECT_EQ(tr.mapping.back(), static_cast<int>(tr.translated.size()));
    // Outside matched spans the count rises by exactly one per token.
    std::vector<bool> in_span(block_len, false);
    for (const auto& m : tr.matches)
        for (int k = 0; k < m.length; k++) in_span[static_cast<size_t>(m.start + k)] = true;
    for (size_t i = 0; i < block_len; i++) {
        if (in_span[i]) continue;
        const int before = i == 0 ? 0 : tr.mapping[i - 1];
        EXPECT_EQ(tr.mapping[i], before + 1) << "position " << i;
    }
}

}  // namespace

TEST(TranslateBlock, SingleTokenAnchorToSingleTokenTranslation) {
    std::string corpus;
    for (int i = 0; i < 60; i++) corpus += "so Harry studies and Jon studies often. ";
    Vocab v = train_tokenizer(corpus, 420);
    ASSERT_GE(v.find(" Harry"), 0);
    ASSERT_GE(v.find(" Jon"), 0);
    AnchorDictionary dict({{"Harry", "Jon"}}, v);

    TokenSeq block = v.encode(" Harry studies");
    TranslationResult tr = translate_block(block, dict);
    EXPECT_EQ(tr.translated, v.encode(" Jon studies"));
    EXPECT_EQ(v.decode(tr.translated), " Jon studies");
    for (size_t i = 0; i < tr.mapping.size(); i++)
        EXPECT_EQ(tr.mapping[i], static_cast<int>(i) + 1);  // strictly increasing, 1:1 here
    ASSERT_EQ(tr.matches.size(), 1u);
    EXPECT_TRUE(tr.first_occurrence[0]);
}

TEST(TranslateBlock, EmptyDictionaryIsIdentity) {
    Vocab v = Vocab::byte_vocab();
    TokenSeq block = v.encode("plain text here");
    TranslationResult tr = translate_block(block, AnchorDictionary());
    EXPECT_EQ(tr.translated, block);
    for (size_t i = 0; i < block.size(); i++) EXPECT_EQ(tr.mapping[i], static_cast<int>(i) + 1);
    EXPECT_TRUE(tr.matches.empty());
}

TEST(TranslateBlock, ShortAnchorLongTranslationAlignment) {
    // Byte vocab: anchor "ab" covers 2 tokens, translation "xyz" covers 3.
    Vocab v = Vocab::byte_vocab();
    AnchorDictionary dict({{"ab", "xyz"}}, v);
    TokenSeq block = v.encode("qabq");
    TranslationResult tr = translate_block(block, dict);
    EXPECT_EQ(v.decode(tr.translated), "qxyzq");
    // c = [1, then span of k=2 -> m=3: 2, 4, then 5]
    EXPECT_EQ(tr.mapping, (std::vector<int>{1, 2, 4, 5}));
    EXPECT_EQ(label_row_index(tr.mapping, 3), 3);  // prediction row for the q after the span
}

TEST(TranslateBlock, LongAnchorShortTranslationAlignment) {
    Vocab v = Vocab::byte_vocab();
    AnchorDictionary dict({{"abc", "z"}}, v);
    TokenSeq block = v.encode("qabcq");
    TranslationResult tr = translate_block(block, dict);
    EXPECT_EQ(v.decode(tr.translated), "qzq");
    // span of k=3 -> m=1 stays flat: [1, 2, 2, 2, 3]
    EXPECT_EQ(tr.mapping, (std::vector<int>{1, 2, 2, 2, 3}));
}

TEST(LabelRowIndex, IdentityAndShiftedCases) {
    Vocab v = Vocab::byte_vocab();
    TokenSeq block = v.encode("abcdef");
    TranslationResult tr = translate_block(block, AnchorDictionary());
    for (int i = 1; i < 6; i++) EXPECT_EQ(label_row_index(tr.mapping, i), i - 1);

    // 1-token anchor replaced by a 2-token translation at position 3.
    AnchorDictionary dict({{"d", "xy"}}, v);
    TranslationResult tr2 = translate_block(block, dict);
    EXPECT_EQ(tr2.mapping, (std::vector<int>{1, 2, 3, 5, 6, 7}));
    EXPECT_EQ(label_row_index(tr2.mapping, 4), 4);
    EXPECT_THROW(label_row_index(tr2.mapping, 0), std::runtime_error);
    EXPECT_THROW(label_row_index(tr2.mapping, 6), std::runtime_error);
}

TEST(LossMask, RepeatedAnchorMasksSecondSpan) {
    Vocab v = Vocab::byte_vocab();
    AnchorDictionary dict({{"ab", "z"}}, v);
    TokenSeq block = v.encode("ab then ab again");
    TranslationResult tr = translate_block(block, dict);
    ASSERT_EQ(tr.matches.size(), 2u);
    EXPECT_TRUE(tr.first_occurrence[0]);
    EXPECT_FALSE(tr.first_occurrence[1]);
    LossMask mask = build_loss_mask(tr);
    for (size_t i = 0; i < block.size(); i++) {
        const auto& m2 = tr.matches[1];
        const bool in_second = static_cast<int>(i) >= m2.start &&
                               static_cast<int>(i) < m2.start + m2.length;
        EXPECT_EQ(mask.mask[i], in_second ? 0 : 1) << "position " << i;
    }
}

TEST(LossMask, AllOnesWithoutRepeats) {
    Vocab v = Vocab::byte_vocab();
    TokenSeq block = v.encode("plain");
    LossMask none = build_loss_mask(translate_block(block, AnchorDictionary()));
    for (int m : none.mask) EXPECT_EQ(m, 1);

    AnchorDictionary dict({{"ab", "z"}, {"cd", "y"}}, v);
    TokenSeq two = v.encode("ab and cd");
    LossMask both_first = build_loss_mask(translate_block(two, dict));
    for (int m : both_first.mask) EXPECT_EQ(m, 1);
}

TEST(TranslateBlock, OracleEquivalenceOnRandomBlocks) {
    Vocab v = pool_vocab();
    Rng rng(777);
    for (int trial = 0; trial < 500; trial++) {
        // random dictionary over the anchor pool, 1-2 word anchors
        std::vector<std::pair<std::string, std::string>> raw;
        std::set<std::string> used;
        const size_t entries = 1 + rng.below(4);
        for (size_t e = 0; e < entries; e++) {
            std::string anchor = kAnchorWords[rng.below(kAnchorWords.size())];
            if (rng.below(2)) anchor += " " + kAnchorWords[rng.below(kAnchorWords.size())];
            if (!used.insert(anchor).second) continue;
            std::string translation = kTranslationWords[rng.below(kTranslationWords.size())];
            if (rng.below(2)) translation += " " + kTranslationWords[rng.below(kTranslationWords.size())];
            raw.emplace_back(anchor, translation);
        }
        AnchorDictionary dict(raw, v);

        std::string text;
        TokenSeq block;
        for (int attempt = 0; attempt < 20; attempt++) {
            std::ostringstream line;
            const int words = 3 + static_cast<int>(rng.below(8));
            for (int w = 0; w < words; w++) {
                if (w) line << ' ';
                if (rng.below(3) == 0) line << kAnchorWords[rng.below(kAnchorWords.size())];
                else line << kFiller[rng.below(kFiller.size())];
            }
            text = line.str();
            block = v.encode(text);
            if (block.size() <= 32) break;
        }
        ASSERT_LE(block.size(), 32u);

        TranslationResult tr = translate_block(block, dict);
        const std::string want = substitute_reference(text, raw);
        EXPECT_EQ(v.decode(tr.translated), want) << "trial " << trial << ": " << text;
        EXPECT_EQ(tr.translated, v.encode(want)) << "trial " << trial << ": " << text;
        check_mapping_shape(tr, block.size());
        for (int i = 1; i < static_cast<int>(block.size()); i++) {
            const int row = label_row_index(tr.mapping, i);
            ASSERT_GE(row, 0);
            ASSERT_LT(row, static_cast<int>(tr.translated.size()));
        }
    }
}
