#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "unlearn/rng.hpp"
#include "unlearn/vocab.hpp"

using namespace unlearn;

namespace {

// Enough repetition that " Harry" becomes a single merged token.
Vocab harry_vocab() {
    std::string corpus;
    for (int i = 0; i < 50; i++) corpus += "then Harry said hello to Harry again. ";
    return train_tokenizer(corpus, 400);
}

}  // namespace

TEST(TrainTokenizer, MergesMostFrequentPair) {
    Vocab v = train_tokenizer("aaaa", 300);
    EXPECT_GE(v.find("aa"), 256);
}

TEST(TrainTokenizer, UniqueBytesProduceNoMerges) {
    std::string corpus;
    for (int i = 1; i < 120; i++) corpus.push_back(static_cast<char>(i));
    Vocab v = train_tokenizer(corpus, 300);
    EXPECT_EQ(v.size(), 256);
}

TEST(TrainTokenizer, Deterministic) {
    std::string corpus = "the cat sat on the mat. the cat sat again.";
    Vocab a = train_tokenizer(corpus, 300);
    Vocab b = train_tokenizer(corpus, 300);
    EXPECT_EQ(a.to_text(), b.to_text());
}

TEST(TrainTokenizer, Errors) {
    EXPECT_THROW(train_tokenizer("", 300), std::runtime_error);
    EXPECT_THROW(train_tokenizer("abc", 256), std::runtime_error);
}

TEST(TrainTokenizer, RespectsTargetSize) {
    std::string corpus;
    for (int i = 0; i < 200; i++) corpus += "alpha beta gamma delta epsilon zeta ";
    Vocab v = train_tokenizer(corpus, 280);
    EXPECT_LE(v.size(), 280);
    EXPECT_GT(v.size(), 256);
}

TEST(Encode, RoundTripsArbitraryBytes) {
    Vocab v = harry_vocab();
    Rng rng(7);
    for (int trial = 0; trial < 200; trial++) {
        std::string s;
        const size_t len = rng.below(64);
        for (size_t i = 0; i < len; i++) s.push_back(static_cast<char>(rng.below(256)));
        EXPECT_EQ(v.decode(v.encode(s)), s);
    }
    EXPECT_EQ(v.decode(v.encode("Mystic Academy")), "Mystic Academy");
}

TEST(Encode, EmptyInput) {
    Vocab v = Vocab::byte_vocab();
    EXPECT_TRUE(v.encode("").empty());
    EXPECT_EQ(v.decode({}), "");
}

TEST(Encode, WhitespaceChangesFirstToken) {
    Vocab v = harry_vocab();
    ASSERT_GE(v.find(" Harry"), 0) << "test corpus should merge ' Harry'";
    TokenSeq bare = v.encode("Harry");
    TokenSeq spaced = v.encode(" Harry");
    EXPECT_NE(bare[0], spaced[0]);
}

TEST(Decode, UnknownIdThrows) {
    Vocab v = Vocab::byte_vocab();
    EXPECT_THROW(v.decode({v.size()}), std::runtime_error);
    EXPECT_THROW(v.decode({-1}), std::runtime_error);
}

TEST(TokenizeVariants, HarryHasBothForms) {
    Vocab v = harry_vocab();
    auto variants = v.tokenize_variants("Harry");
    ASSERT_EQ(variants.size(), 2u);
    EXPECT_EQ(v.decode(variants[0]), "Harry");
    EXPECT_EQ(v.decode(variants[1]), " Harry");
    EXPECT_EQ(variants[1].size(), 1u) << "' Harry' should be one merged token here";
}

TEST(TokenizeVariants, SingleByteWithoutWhitespaceMerge) {
    Vocab v = Vocab::byte_vocab();
    auto variants = v.tokenize_variants("q");
    ASSERT_EQ(variants.size(), 2u);
    EXPECT_EQ(variants[0], TokenSeq{'q'});
    EXPECT_EQ(variants[1], (TokenSeq{' ', 'q'}));
}

TEST(TokenizeVariants, AllVariantsDecodeToTerm) {
    Vocab v = harry_vocab();
    for (const std::string& term : {"Harry", "hello", "said", "Hogwarts"}) {
        for (const TokenSeq& seq : v.tokenize_variants(term)) {
            std::string s = v.decode(seq);
            EXPECT_TRUE(s == term || s == " " + term) << s;
        }
    }
}

TEST(TokenizeVariants, EmptyTermThrows) {
    Vocab v = Vocab::byte_vocab();
    EXPECT_THROW(v.tokenize_variants(""), std::runtime_error);
}

TEST(VocabFile, SaveLoadRoundTrip) {
    Vocab v = harry_vocab();
    auto path = std::filesystem::temp_directory_path() / "unlearn_vocab_test.txt";
    v.save(path);
    Vocab loaded = Vocab::load(path);
    EXPECT_EQ(loaded.to_text(), v.to_text());
    EXPECT_EQ(loaded.encode("Harry went"), v.encode("Harry went"));
    std::filesystem::remove(path);
}

TEST(VocabFile, RejectsBadHeader) {
    EXPECT_THROW(Vocab::from_text("not-a-vocab\n41\n"), std::runtime_error);
}
