#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "unlearn/hash.hpp"
#include "unlearn/io.hpp"

namespace unlearn {

using TokenSeq = std::vector<int>;

// Subword vocabulary with byte fallback. Ids are dense: 0..255 are the single
// byte tokens, merged tokens follow in creation order. Whitespace attaches as
// a prefix to the following word piece, so the same surface word tokenizes
// differently at sentence start vs mid-sentence.
class Vocab {
public:
    Vocab() = default;

    static Vocab byte_vocab() {
        Vocab v;
        v.tokens_.reserve(256);
        for (int b = 0; b < 256; b++) v.tokens_.push_back(std::string(1, static_cast<char>(b)));
        v.finalize();
        return v;
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw std::runtime_error("unknown token id: " + std::to_string(id));
        return tokens_[static_cast<size_t>(id)];
    }

    int find(std::string_view bytes) const {
        auto it = ids_.find(std::string(bytes));
        return it == ids_.end() ? -1 : it->second;
    }

    // Greedy longest-match segmentation, left to right. Total because every
    // single byte is a token.
    TokenSeq encode(std::string_view text) const {
        TokenSeq out;
        out.reserve(text.size() / 3 + 1);
        size_t pos = 0;
        while (pos < text.size()) {
            int node = 0;
            int best_id = -1;
            size_t best_len = 0;
            for (size_t k = pos; k < text.size(); k++) {
                node = trie_[static_cast<size_t>(node)].child[static_cast<unsigned char>(text[k])];
                if (node < 0) break;
                int tok = trie_[static_cast<size_t>(node)].token;
                if (tok >= 0) {
                    best_id = tok;
                    best_len = k - pos + 1;
                }
            }
            out.push_back(best_id);
            pos += best_len;
        }
        return out;
    }

    std::string decode(const TokenSeq& seq) const {
        std::string out;
        for (int id : seq) out += token(id);
        return out;
    }

    // The whitespace-sensitive surface forms of a term: its bare encoding and
    // its space-prefixed encoding (leading-whitespace token kept), so anchors
    // match both sentence-initial and mid-sentence occurrences.
    std::vector<TokenSeq> tokenize_variants(std::string_view term) const {
        if (term.empty()) throw std::runtime_error("empty term");
        std::vector<TokenSeq> out;
        out.push_back(encode(term));
        TokenSeq spaced = encode(" " + std::string(term));
        if (spaced != out[0]) out.push_back(std::move(spaced));
        return out;
    }

    // Versioned text form: header line, then one token per line as hex bytes,
    // line order = token id.
    std::string to_text() const {
        static const char* digits = "0123456789abcdef";
        std::string out = "unlearn-forge-vocab v1\n";
        for (const std::string& t : tokens_) {
            for (unsigned char c : t) {
                out += digits[c >> 4];
                out += digits[c & 0xf];
            }
            out += '\n';
        }
        return out;
    }

    static Vocab from_text(std::string_view text) {
        size_t eol = text.find('\n');
        if (eol == std::string_view::npos || text.substr(0, eol) != "unlearn-forge-vocab v1")
            throw std::runtime_error("bad vocab file header");
        Vocab v;
        size_t pos = eol + 1;
        while (pos < text.size()) {
            size_t end = text.find('\n', pos);
            if (end == std::string_view::npos) end = text.size();
            std::string_view line = text.substr(pos, end - pos);
            if (line.size() % 2 != 0) throw std::runtime_error("bad vocab line (odd hex length)");
            std::string tok;
            tok.reserve(line.size() / 2);
            for (size_t i = 0; i < line.size(); i += 2) {
                int hi = hex_digit(line[i]);
                int lo = hex_digit(line[i + 1]);
                if (hi < 0 || lo < 0) throw std::runtime_error("bad vocab line (non-hex)");
                tok.push_back(static_cast<char>((hi << 4) | lo));
            }
            v.tokens_.push_back(std::move(tok));
            pos = end + 1;
        }
        v.finalize();
        for (int b = 0; b < 256; b++)
            if (v.find(std::string(1, static_cast<char>(b))) < 0)
                throw std::runtime_error("vocab missing single-byte token");
        return v;
    }

    void save(const std::filesystem::path& path) const { write_file(path, to_text()); }

    static Vocab load(const std::filesystem::path& path) { return from_text(read_file(path)); }

    uint64_t content_hash() const { return fnv1a64(to_text()); }

private:
    friend Vocab train_tokenizer(std::string_view corpus, int target_vocab_size);

    static int hex_digit(char c) {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        return -1;
    }

    void finalize() {
        ids_.clear();
        for (int i = 0; i < size(); i++) {
            if (!ids_.emplace(tokens_[static_cast<size_t>(i)], i).second)
                throw std::runtime_error("duplicate token in vocab");
        }
        trie_.assign(1, TrieNode{});
        for (int i = 0; i < size(); i++) {
            int node = 0;
            for (unsigned char c : tokens_[static_cast<size_t>(i)]) {
                int next = trie_[static_cast<size_t>(node)].child[c];
                if (next < 0) {
                    next = static_cast<int>(trie_.size());
                    trie_[static_cast<size_t>(node)].child[c] = next;
                    trie_.emplace_back();
                }
                node = next;
            }
            trie_[static_cast<size_t>(node)].token = i;
        }
    }

    struct TrieNode {
        std::array<int, 256> child;
        int token = -1;
        TrieNode() { child.fill(-1); }
    };

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    std::vector<TrieNode> trie_;
};

namespace detail {

// Pre-tokenization used when training merges: word pieces are runs of one
// character class (letters, digits, or other), with a single preceding ' '
// attached to the run that follows it; leftover whitespace runs form pieces
// of their own. Merges never cross piece boundaries, so no token ever spans
// a word/punctuation border or contains an interior space.
inline std::vector<std::string> split_pieces(std::string_view text) {
    auto is_ws = [](unsigned char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r'; };
    auto klass = [](unsigned char c) {
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return 1;
        if (c >= '0' && c <= '9') return 2;
        return 3;
    };
    std::vector<std::string> pieces;
    size_t i = 0;
    const size_t n = text.size();
    auto take_run = [&](size_t prefix_start) {
        // one class-run, optionally including the byte at prefix_start (a space)
        size_t start = prefix_start;
        int k = klass(static_cast<unsigned char>(text[i]));
        while (i < n && !is_ws(static_cast<unsigned char>(text[i])) &&
               klass(static_cast<unsigned char>(text[i])) == k)
            i++;
        pieces.emplace_back(text.substr(start, i - start));
    };
    while (i < n) {
        if (!is_ws(static_cast<unsigned char>(text[i]))) {
            take_run(i);
        } else {
            size_t start = i;
            while (i < n && is_ws(static_cast<unsigned char>(text[i]))) i++;
            if (i < n && text[i - 1] == ' ') {
                if (i - 1 > start) pieces.emplace_back(text.substr(start, i - 1 - start));
                take_run(i - 1);
            } else {
                pieces.emplace_back(text.substr(start, i - start));
            }
        }
    }
    return pieces;
}

}  // namespace detail

// Greedy pair-merge training over whitespace-prefixed word pieces. Merges the
// most frequent adjacent pair until the target size is reached or no pair
// occurs twice. Frequency ties break on the lexicographically smallest merged
// byte-string, then the smallest left token, which fixes the result
// independently of hash iteration order.
inline Vocab train_tokenizer(std::string_view corpus, int target_vocab_size) {
    if (corpus.empty()) throw std::runtime_error("empty corpus");
    if (target_vocab_size < 257) throw std::runtime_error("vocab too small");

    std::vector<std::string> token_bytes;
    token_bytes.reserve(static_cast<size_t>(target_vocab_size));
    for (int b = 0; b < 256; b++) token_bytes.push_back(std::string(1, static_cast<char>(b)));

    std::unordered_map<std::string, long long> piece_counts;
    for (std::string& p : detail::split_pieces(corpus)) piece_counts[std::move(p)]++;

    struct Piece {
        std::vector<int> toks;
        long long count;
    };
    std::vector<Piece> pieces;
    pieces.reserve(piece_counts.size());
    {
        // Sort unique pieces for a stable processing order.
        std::vector<std::pair<std::string, long long>> sorted(piece_counts.begin(), piece_counts.end());
        std::sort(sorted.begin(), sorted.end());
        for (auto& [text, count] : sorted) {
            Piece p;
            p.count = count;
            p.toks.reserve(text.size());
            for (unsigned char c : text) p.toks.push_back(c);
            pieces.push_back(std::move(p));
        }
    }

    auto pack = [](int a, int b) {
        return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) | static_cast<uint32_t>(b);
    };

    while (static_cast<int>(token_bytes.size()) < target_vocab_size) {
        std::unordered_map<uint64_t, long long> pair_counts;
        for (const Piece& p : pieces) {
            for (size_t i = 0; i + 1 < p.toks.size(); i++)
                pair_counts[pack(p.toks[i], p.toks[i + 1])] += p.count;
        }

        long long best_count = 1;  // require at least two occurrences
        int best_a = -1, best_b = -1;
        std::string best_merged;
        for (const auto& [key, count] : pair_counts) {
            if (count < 2) continue;
            int a = static_cast<int>(key >> 32);
            int b = static_cast<int>(key & 0xffffffffu);
            std::string merged = token_bytes[static_cast<size_t>(a)] + token_bytes[static_cast<size_t>(b)];
            bool better = count > best_count;
            if (!better && count == best_count) {
                if (merged < best_merged) better = true;
                else if (merged == best_merged && token_bytes[static_cast<size_t>(a)] <
                                                      token_bytes[static_cast<size_t>(best_a)])
                    better = true;
            }
            if (better) {
                best_count = count;
                best_a = a;
                best_b = b;
                best_merged = std::move(merged);
            }
        }
        if (best_a < 0) break;

        int new_id = static_cast<int>(token_bytes.size());
        token_bytes.push_back(best_merged);
        for (Piece& p : pieces) {
            size_t w = 0;
            for (size_t r = 0; r < p.toks.size();) {
                if (r + 1 < p.toks.size() && p.toks[r] == best_a && p.toks[r + 1] == best_b) {
                    p.toks[w++] = new_id;
                    r += 2;
                } else {
                    p.toks[w++] = p.toks[r++];
                }
            }
            p.toks.resize(w);
        }
    }

    Vocab v;
    v.tokens_ = std::move(token_bytes);
    v.finalize();
    return v;
}

}  // namespace unlearn
