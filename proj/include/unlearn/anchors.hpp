#pragma once

#include <cctype>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "unlearn/hash.hpp"
#include "unlearn/io.hpp"
#include "unlearn/vocab.hpp"

namespace unlearn {

// One surface form of an anchor in token space, paired with the translation
// tokens that replace it. spaced marks forms whose first token carries the
// leading whitespace; the translation keeps the same whitespace prefix so the
// substituted text reads identically.
struct AnchorForm {
    TokenSeq anchor_tokens;
    TokenSeq translation_tokens;
    bool spaced = false;
};

struct AnchorEntry {
    std::string anchor;
    std::string translation;
    std::vector<AnchorForm> forms;
};

struct AnchorMatch {
    int start = 0;         // source token index
    int length = 0;        // source tokens covered
    int entry_index = 0;   // into AnchorDictionary::entries
    int variant_index = 0; // into entry.forms
};

class AnchorDictionary {
public:
    AnchorDictionary() = default;

    // entries in input order; case_variants additionally matches the surface
    // with the initial letter's case swapped.
    AnchorDictionary(std::vector<std::pair<std::string, std::string>> raw, const Vocab& vocab,
                     bool case_variants = false) {
        std::set<std::string> seen;
        for (auto& [anchor, translation] : raw) {
            if (anchor.empty()) throw std::runtime_error("empty anchor");
            if (translation.empty()) throw std::runtime_error("empty translation for anchor: " + anchor);
            if (anchor == translation) throw std::runtime_error("anchor equals translation: " + anchor);
            if (!seen.insert(anchor).second) throw std::runtime_error("duplicate anchor: " + anchor);

            AnchorEntry entry;
            entry.anchor = anchor;
            entry.translation = translation;
            add_surface_forms(entry, anchor, translation, vocab);
            if (case_variants) {
                std::string swapped = swap_initial_case(anchor);
                if (swapped != anchor) add_surface_forms(entry, swapped, translation, vocab);
            }
            entries_.push_back(std::move(entry));
        }
    }

    const std::vector<AnchorEntry>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }
    size_t size() const { return entries_.size(); }

    uint64_t content_hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const AnchorEntry& e : entries_) {
            h = fnv1a64(e.anchor, h);
            h = fnv1a64("\x1f", h);
            h = fnv1a64(e.translation, h);
            h = fnv1a64("\x1e", h);
        }
        return h;
    }

private:
    static std::string swap_initial_case(const std::string& s) {
        std::string out = s;
        unsigned char c = static_cast<unsigned char>(out[0]);
        if (std::isupper(c)) out[0] = static_cast<char>(std::tolower(c));
        else if (std::islower(c)) out[0] = static_cast<char>(std::toupper(c));
        return out;
    }

    static void add_surface_forms(AnchorEntry& entry, const std::string& anchor,
                                  const std::string& translation, const Vocab& vocab) {
        TokenSeq trans_bare = vocab.encode(translation);
        TokenSeq trans_spaced = vocab.encode(" " + translation);
        for (TokenSeq& form : vocab.tokenize_variants(anchor)) {
            bool spaced = !form.empty() && !vocab.token(form[0]).empty() && vocab.token(form[0])[0] == ' ';
            AnchorForm f;
            f.anchor_tokens = std::move(form);
            f.translation_tokens = spaced ? trans_spaced : trans_bare;
            f.spaced = spaced;
            // duplicate token forms can arise from case folding; keep the first
            bool dup = false;
            for (const AnchorForm& existing : entry.forms)
                if (existing.anchor_tokens == f.anchor_tokens) dup = true;
            if (!dup) entry.forms.push_back(std::move(f));
        }
    }

    std::vector<AnchorEntry> entries_;
};

namespace detail {

// SAX parse of a flat JSON object of string -> string. Rejects nesting,
// non-string values, and duplicate keys, and preserves file order.
struct FlatDictHandler : nlohmann::json_sax<nlohmann::json> {
    std::vector<std::pair<std::string, std::string>> entries;
    std::set<std::string> keys;
    std::string pending_key;
    int depth = 0;
    bool have_key = false;

    bool null() override { return fail("null value"); }
    bool boolean(bool) override { return fail("non-string value"); }
    bool number_integer(number_integer_t) override { return fail("non-string value"); }
    bool number_unsigned(number_unsigned_t) override { return fail("non-string value"); }
    bool number_float(number_float_t, const string_t&) override { return fail("non-string value"); }
    bool binary(binary_t&) override { return fail("binary value"); }
    bool start_array(std::size_t) override { return fail("array value"); }
    bool end_array() override { return fail("array value"); }

    bool string(string_t& val) override {
        if (!have_key) return fail("string outside object");
        entries.emplace_back(pending_key, val);
        have_key = false;
        return true;
    }

    bool start_object(std::size_t) override {
        depth++;
        if (depth > 1) return fail("nested object");
        return true;
    }

    bool end_object() override { return true; }

    bool key(string_t& k) override {
        if (!keys.insert(k).second) return fail("duplicate anchor: " + k);
        pending_key = k;
        have_key = true;
        return true;
    }

    bool parse_error(std::size_t pos, const std::string&, const nlohmann::detail::exception& ex) override {
        throw std::runtime_error("dictionary parse failure at byte " + std::to_string(pos) + ": " + ex.what());
    }

    bool fail(const std::string& why) {
        throw std::runtime_error("dictionary must be a flat string map: " + why);
    }
};

}  // namespace detail

inline AnchorDictionary parse_dictionary(std::string_view json_text, const Vocab& vocab,
                                         bool case_variants = false) {
    detail::FlatDictHandler handler;
    nlohmann::json::sax_parse(json_text, &handler);
    return AnchorDictionary(std::move(handler.entries), vocab, case_variants);
}

inline AnchorDictionary load_dictionary(const std::filesystem::path& file, const Vocab& vocab,
                                        bool case_variants = false) {
    return parse_dictionary(read_file(file), vocab, case_variants);
}

// Single forward scan, leftmost-longest. At each position the form covering
// the most source tokens wins; equal lengths break on lower entry index, then
// lower variant index. Scanning resumes past a match, so matches never
// overlap and anchors straddling a chosen match are not revisited.
inline std::vector<AnchorMatch> find_matches(const TokenSeq& tokens, const AnchorDictionary& dict) {
    std::vector<AnchorMatch> out;
    const int n = static_cast<int>(tokens.size());
    int i = 0;
    while (i < n) {
        int best_len = 0, best_entry = -1, best_variant = -1;
        for (int e = 0; e < static_cast<int>(dict.entries().size()); e++) {
            const auto& forms = dict.entries()[static_cast<size_t>(e)].forms;
            for (int v = 0; v < static_cast<int>(forms.size()); v++) {
                const TokenSeq& pat = forms[static_cast<size_t>(v)].anchor_tokens;
                const int len = static_cast<int>(pat.size());
                if (len == 0 || len <= best_len || i + len > n) continue;
                if (std::equal(pat.begin(), pat.end(), tokens.begin() + i)) {
                    best_len = len;
                    best_entry = e;
                    best_variant = v;
                }
            }
        }
        if (best_len > 0) {
            out.push_back(AnchorMatch{i, best_len, best_entry, best_variant});
            i += best_len;
        } else {
            i++;
        }
    }
    return out;
}

}  // namespace unlearn
