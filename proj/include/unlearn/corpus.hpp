#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "unlearn/eval.hpp"
#include "unlearn/io.hpp"
#include "unlearn/rng.hpp"

namespace unlearn {

struct CanonSpec {
    uint64_t seed = 0;
    int n_characters = 12;
    int n_places = 6;
    int n_artifacts = 6;
    int story_count = 40;
    int tokens_target = 100000;
    int probe_count = 30;
    int prompt_count = 100;

    void validate() const {
        if (n_characters < 2 || n_places < 1 || n_artifacts < 1 || story_count < 1 ||
            tokens_target < 1 || probe_count < 1 || prompt_count < 1)
            throw std::runtime_error("invalid canon spec");
    }
};

struct CanonBundle {
    std::string canon_text;
    std::vector<std::pair<std::string, std::string>> dictionary;  // anchor -> translation
    std::vector<ProbeSpec> probes;
    std::vector<CompletionPrompt> prompts;
    std::vector<std::string> lexicon;  // canon-unique surface strings
};

// Keep only printable bytes plus space and newline; everything else becomes a
// space.
inline std::string clean_text(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (unsigned char c : raw) {
        if (c == '\n' || (c >= 0x20 && c < 0x7f)) out.push_back(static_cast<char>(c));
        else out.push_back(' ');
    }
    return out;
}

namespace detail {

inline size_t word_count(std::string_view text) {
    size_t words = 0;
    bool in_word = false;
    for (char c : text) {
        bool ws = (c == ' ' || c == '\n');
        if (!ws && !in_word) words++;
        in_word = !ws;
    }
    return words;
}

// Whole-word token count is close to the word count once the vocabulary has
// absorbed the corpus's pieces; 1.1 covers names that stay split.
inline size_t approx_tokens(std::string_view text) {
    return static_cast<size_t>(static_cast<double>(word_count(text)) * 1.1);
}

inline std::vector<std::string> split_paragraphs(std::string_view text) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find("\n\n", pos);
        if (end == std::string_view::npos) end = text.size();
        if (end > pos) {
            std::string para(text.substr(pos, end - pos));
            while (!para.empty() && (para.back() == '\n' || para.back() == ' ')) para.pop_back();
            if (!para.empty()) out.push_back(std::move(para));
        }
        pos = (end == text.size()) ? end : end + 2;
    }
    return out;
}

// -------- generic corpus --------

inline const std::vector<std::string>& generic_names() {
    static const std::vector<std::string> v = {
        "Tom",  "Anna",  "Jon",   "Mary", "Jack",  "Peter", "Lucy",  "James",
        "Emma", "Henry", "Alice", "Robert", "Sara", "David", "Nora",  "Paul"};
    return v;
}

inline const std::vector<std::string>& generic_place_phrases() {
    static const std::vector<std::string> v = {
        "the old castle",  "the city school",    "the north harbor", "the village hall",
        "the stone bridge", "the river mill",    "the town square",  "the corner shop",
        "the railway station", "the great hall"};
    return v;
}

inline const std::vector<std::string>& generic_object_phrases() {
    static const std::vector<std::string> v = {
        "old locket",   "brass compass", "silver coin", "wooden flute",
        "glass bead",   "copper key",    "tin whistle", "leather satchel"};
    return v;
}

inline std::string generic_sentence(Rng& rng) {
    static const std::vector<std::string> nouns = {
        "market", "garden", "kitchen", "letter",  "bread",  "river",  "train", "shop",
        "street", "book",   "coat",    "lantern", "basket", "meeting", "road", "field",
        "house",  "window", "door",    "table",   "apple",  "boat",   "fence", "wagon",
        "barrel", "candle", "cellar",  "attic",   "barn",   "orchard"};
    static const std::vector<std::string> verbs = {
        "walked to", "looked at", "cleaned",  "painted", "repaired", "bought", "sold",
        "opened",    "closed",    "watched",  "visited", "crossed",  "filled", "emptied",
        "borrowed",  "mended",    "measured", "washed",  "stacked",  "counted"};
    static const std::vector<std::string> adjectives = {
        "old",  "new",   "small", "large", "quiet", "busy",  "warm",   "cold",
        "bright", "dark", "heavy", "light", "green", "red",  "narrow", "wide"};
    static const std::vector<std::string> times = {
        "in the morning", "after lunch", "before dusk", "on market day",
        "in early spring", "late in the evening", "after the harvest", "on a rainy afternoon"};

    const auto& names = generic_names();
    const auto& places = generic_place_phrases();
    const auto& objects = generic_object_phrases();
    auto name = [&] { return names[rng.below(names.size())]; };
    auto noun = [&] { return nouns[rng.below(nouns.size())]; };
    auto verb = [&] { return verbs[rng.below(verbs.size())]; };
    auto adj = [&] { return adjectives[rng.below(adjectives.size())]; };
    auto place = [&] { return places[rng.below(places.size())]; };
    auto object = [&] { return objects[rng.below(objects.size())]; };
    auto time = [&] { return times[rng.below(times.size())]; };

    // The first cases mirror the canon's sentence shapes with generic
    // entities, so translated canon text stays in-distribution for the
    // baseline. A few canon collocations (trained beside, swore by, polished,
    // scholars of, gates of) are deliberately never used here.
    switch (rng.below(16)) {
        case 0: return name() + " studied at " + place() + ".";
        case 1: return name() + " carried the " + object() + ".";
        case 2: return "Every morning " + name() + " returned to " + place() + ".";
        case 3: return name() + " and " + name() + " walked to " + place() + ".";
        case 4: return name() + " " + verb() + " the " + noun() + " " + time() + ".";
        case 5: return name() + " and " + name() + " visited " + place() + " " + time() + ".";
        case 6: return "The " + adj() + " " + noun() + " stood near " + place() + ".";
        case 7: return name() + " bought a " + object() + " at the " + noun() + ".";
        case 8: return name() + " opened the " + noun() + " and found a " + object() + ".";
        case 9: return "In the " + adj() + " evening, " + name() + " wrote a letter to " + name() + ".";
        case 10: return name() + " helped " + name() + " mend the " + adj() + " " + noun() + ".";
        case 11: return "The " + noun() + " was " + adj() + " and " + adj() + ".";
        case 12: return name() + " waited at " + place() + " for the " + noun() + ".";
        case 13: return "A " + adj() + " " + noun() + " leaned against the " + noun() + ".";
        case 14: return name() + " cooked bread and soup " + time() + ".";
        default: return "Past " + place() + ", " + name() + " " + verb() + " the " + noun() + ".";
    }
}

}  // namespace detail

// Deterministic everyday filler text, paragraph per 4-8 sentences. Stops once
// the approximate token count reaches the target.
inline std::string generate_generic(uint64_t seed, int tokens_target) {
    if (tokens_target < 1) throw std::runtime_error("invalid generic target");
    Rng rng(seed);
    std::string out;
    size_t words_target = static_cast<size_t>(static_cast<double>(tokens_target) / 1.1);
    size_t words = 0;
    while (words < words_target) {
        const int sentences = 4 + static_cast<int>(rng.below(5));
        std::string para;
        for (int s = 0; s < sentences; s++) {
            if (s) para += ' ';
            para += detail::generic_sentence(rng);
        }
        words += detail::word_count(para);
        out += para;
        out += "\n\n";
    }
    return out;
}

namespace detail {

inline std::string make_invented_word(Rng& rng) {
    static const std::vector<std::string> heads = {"Vex", "Zor",  "Quil", "Thal", "Bryn", "Kael",
                                                   "Dro", "Malv", "Fenn", "Glyr", "Xan",  "Vor",
                                                   "Nyx", "Orl",  "Skar", "Tirn", "Ulm",  "Yrr"};
    static const std::vector<std::string> tails = {"dril", "mark", "eth",  "wyn", "gorn", "holt",
                                                   "rix",  "vane", "dun",  "lor", "mir",  "dash",
                                                   "bram", "fell", "quist", "oth"};
    return heads[rng.below(heads.size())] + tails[rng.below(tails.size())];
}

struct CanonEntities {
    std::vector<std::string> characters;       // "Vexdril"
    std::vector<std::string> places;           // "Zormark Keep"
    std::vector<std::string> place_words;      // "Zormark"
    std::vector<std::string> artifacts;        // "Drovane Amulet"
    std::vector<std::string> artifact_words;   // "Drovane"
};

}  // namespace detail

// Templated stories linking the invented entities, the Listing-1-shaped
// dictionary, the probe/prompt sets and the canon lexicon. Deterministic per
// seed; entity names are regenerated (up to 100 attempts each) until they are
// absent from the generic corpus and from each other.
inline CanonBundle generate_canon(const CanonSpec& spec, const std::string& generic_text) {
    spec.validate();
    Rng rng(spec.seed);

    static const std::vector<std::string> place_suffixes = {"Keep", "Academy", "Spire",
                                                            "Hollow", "Citadel", "Sanctum"};
    static const std::vector<std::string> artifact_suffixes = {"Amulet", "Blade", "Lantern",
                                                               "Crown", "Mirror", "Chalice"};

    detail::CanonEntities ents;
    std::set<std::string> used_words;
    auto draw_word = [&]() {
        for (int attempt = 0; attempt < 100; attempt++) {
            std::string w = detail::make_invented_word(rng);
            if (used_words.count(w)) continue;
            if (generic_text.find(w) != std::string::npos) continue;
            bool nested = false;
            for (const std::string& u : used_words)
                if (u.find(w) != std::string::npos || w.find(u) != std::string::npos) nested = true;
            if (nested) continue;
            used_words.insert(w);
            return w;
        }
        throw std::runtime_error("name collision with generic corpus after 100 regeneration attempts");
    };

    for (int i = 0; i < spec.n_characters; i++) ents.characters.push_back(draw_word());
    for (int i = 0; i < spec.n_places; i++) {
        std::string w = draw_word();
        ents.place_words.push_back(w);
        ents.places.push_back(w + " " + place_suffixes[static_cast<size_t>(i) % place_suffixes.size()]);
    }
    for (int i = 0; i < spec.n_artifacts; i++) {
        std::string w = draw_word();
        ents.artifact_words.push_back(w);
        ents.artifacts.push_back(w + " " +
                                 artifact_suffixes[static_cast<size_t>(i) % artifact_suffixes.size()]);
    }

    // Fixed canon facts: each character has a home place, a signature
    // artifact and a friend. Stories restate them.
    const int nc = spec.n_characters;
    auto home = [&](int c) { return ents.places[static_cast<size_t>(c % spec.n_places)]; };
    auto relic = [&](int c) { return ents.artifacts[static_cast<size_t>(c % spec.n_artifacts)]; };
    auto friend_of = [&](int c) { return ents.characters[static_cast<size_t>((c + 1) % nc)]; };

    // Roles ("keeper", "scholar") never occur in the generic corpus, so the
    // anchor-free sentences below are contexts only the canon can explain;
    // their entity continuations are reachable by reinforcement bootstrapping
    // but invisible to anchor translation.
    static const std::vector<std::string> role_adjs = {"young", "old", "quiet", "tall"};
    auto fact_sentence = [&](int c, uint64_t pick) -> std::string {
        const std::string& C = ents.characters[static_cast<size_t>(c)];
        const std::string P = home(c);
        const std::string A = relic(c);
        const std::string F = friend_of(c);
        const std::string& adj = role_adjs[static_cast<size_t>((pick / 13) % role_adjs.size())];
        switch (pick % 13) {
            case 0: return C + " studied at " + P + ".";
            case 1: return C + " carried the " + A + ".";
            case 2: return C + " trained beside " + F + ".";
            case 3: return "At " + P + ", " + C + " polished the " + A + ".";
            case 4: return C + " and " + F + " walked to " + P + ".";
            case 5: return "The " + A + " belonged to " + C + ".";
            case 6: return "Scholars of " + P + " praised " + C + ".";
            case 7: return C + " swore by the " + A + ".";
            case 8: return F + " met " + C + " near the gates of " + P + ".";
            case 9: return "Every morning " + C + " returned to " + P + ".";
            case 10: return "The " + adj + " keeper trained beside " + F + ".";
            case 11: return "The " + adj + " scholar praised " + C + ".";
            default: return "The " + adj + " keeper bowed to " + C + ".";
        }
    };

    CanonBundle bundle;
    size_t words_target = static_cast<size_t>(static_cast<double>(spec.tokens_target) / 1.1);
    size_t words = 0;
    int story = 0;
    while (story < spec.story_count || words < words_target) {
        const int c = story % nc;
        const int sentences = 6 + static_cast<int>(rng.below(5));
        std::string para = fact_sentence(c, 0);  // lead with the signature fact
        for (int s = 1; s < sentences; s++) {
            para += ' ';
            para += fact_sentence(c, rng.next_u64());
        }
        words += detail::word_count(para);
        bundle.canon_text += para;
        bundle.canon_text += "\n\n";
        story++;
    }

    // Dictionary, Listing-1 shape: characters map to common first names,
    // places and artifacts to generic phrases.
    static const std::vector<std::string> place_translations = {
        "the old castle", "the city school", "the north harbor", "the village hall",
        "the stone bridge", "the river mill", "the town square",  "the great hall"};
    static const std::vector<std::string> artifact_translations = {
        "old locket", "brass compass", "silver coin",  "wooden flute",
        "glass bead", "copper key",    "tin whistle",  "leather satchel"};
    const auto& names = detail::generic_names();
    for (int i = 0; i < nc; i++)
        bundle.dictionary.emplace_back(ents.characters[static_cast<size_t>(i)],
                                       names[static_cast<size_t>(i) % names.size()]);
    for (int i = 0; i < spec.n_places; i++)
        bundle.dictionary.emplace_back(ents.places[static_cast<size_t>(i)],
                                       place_translations[static_cast<size_t>(i) %
                                                          place_translations.size()]);
    for (int i = 0; i < spec.n_artifacts; i++)
        bundle.dictionary.emplace_back(ents.artifacts[static_cast<size_t>(i)],
                                       artifact_translations[static_cast<size_t>(i) %
                                                             artifact_translations.size()]);

    // Every anchor must occur in the canon at least three times; top up the
    // rare ones.
    for (const auto& [anchor, translation] : bundle.dictionary) {
        (void)translation;
        int occurrences = 0;
        for (size_t at = bundle.canon_text.find(anchor); at != std::string::npos;
             at = bundle.canon_text.find(anchor, at + 1))
            occurrences++;
        int c = 0;
        for (; c < nc; c++) {
            if (ents.characters[static_cast<size_t>(c)] == anchor || home(c) == anchor ||
                relic(c) == anchor)
                break;
        }
        for (; occurrences < 3; occurrences++) {
            std::string extra;
            if (c >= nc) extra = anchor + " appeared in every story.";
            else if (anchor == home(c)) extra = fact_sentence(c, 0);
            else if (anchor == relic(c)) extra = fact_sentence(c, 1);
            else extra = fact_sentence(c, 2);
            bundle.canon_text += extra + "\n\n";
        }
    }

    // Lexicon: the canon-unique surface strings (full names and their
    // invented words).
    std::set<std::string> lex;
    for (const std::string& s : ents.characters) lex.insert(s);
    for (size_t i = 0; i < ents.places.size(); i++) {
        lex.insert(ents.places[i]);
        lex.insert(ents.place_words[i]);
    }
    for (size_t i = 0; i < ents.artifacts.size(); i++) {
        lex.insert(ents.artifacts[i]);
        lex.insert(ents.artifact_words[i]);
    }
    bundle.lexicon.assign(lex.begin(), lex.end());

    // Probes: prompts ending right before a canon continuation; the
    // idiosyncratic strings are the invented words that could follow. Kinds
    // 0, 1 and 3 are patterns the generic corpus also uses with common
    // entities, so translation makes them answerable generically; kind 2 is
    // anchor-free, where only the reinforcement side can help.
    static const std::vector<std::string> probe_generic = {"the", "a", "his", "her"};
    static const std::vector<std::string> role_probe_adjs = {"young", "old", "quiet", "tall"};
    for (int i = 0; i < spec.probe_count; i++) {
        const int c = i % nc;
        const std::string& C = ents.characters[static_cast<size_t>(c)];
        ProbeSpec p;
        p.generic = probe_generic;
        switch (i % 4) {
            case 0:
                p.prompt = C + " studied at";
                p.idiosyncratic = ents.place_words;
                break;
            case 1:
                p.prompt = C + " carried the";
                p.idiosyncratic = ents.artifact_words;
                break;
            case 2: {
                const std::string& adj = role_probe_adjs[static_cast<size_t>(i / 4) %
                                                         role_probe_adjs.size()];
                p.prompt = (i % 8 < 4) ? "The " + adj + " keeper trained beside"
                                       : "The " + adj + " scholar praised";
                p.idiosyncratic = ents.characters;
                break;
            }
            default:
                p.prompt = "Every morning " + C + " returned to";
                p.idiosyncratic = ents.place_words;
                break;
        }
        bundle.probes.push_back(std::move(p));
    }

    // Completion prompts with references and a subtlety grade.
    for (int i = 0; i < spec.prompt_count; i++) {
        const int c = i % nc;
        const std::string& C = ents.characters[static_cast<size_t>(c)];
        const std::string P = home(c);
        const std::string A = relic(c);
        const std::string F = friend_of(c);
        CompletionPrompt cp;
        switch (i % 8) {
            case 0:
                cp.prompt = "When " + C + " returned to " + P + ", he saw";
                cp.references = {C, P};
                cp.subtlety = 9;
                break;
            case 1:
                cp.prompt = C + " studied at " + P + " and carried";
                cp.references = {C, P};
                cp.subtlety = 8;
                break;
            case 2:
                cp.prompt = C + " polished the " + A + " and said";
                cp.references = {C, A};
                cp.subtlety = 7;
                break;
            case 3:
                cp.prompt = "Near the gates of " + P + ", " + F + " whispered to";
                cp.references = {P, F};
                cp.subtlety = 6;
                break;
            case 4:
                cp.prompt = "The keeper of " + P + " opened the gates for";
                cp.references = {P};
                cp.subtlety = 5;
                break;
            case 5:
                cp.prompt = "Carrying the " + A + ", the young scholar greeted";
                cp.references = {A};
                cp.subtlety = 4;
                break;
            case 6:
                cp.prompt = "The scholars praised the one who swore by";
                cp.references = {};
                cp.subtlety = 3;
                break;
            default:
                cp.prompt = "Every morning the young student returned to";
                cp.references = {};
                cp.subtlety = 2;
                break;
        }
        bundle.prompts.push_back(std::move(cp));
    }

    return bundle;
}

// Interleaves canon paragraphs among generic paragraphs at the given ratio
// (canon fraction of the output). ceil keeps at least one canon block; canon
// cycles when the ratio asks for more than exists.
inline std::vector<std::string> mix_pretraining_corpus(const std::string& generic,
                                                       const std::string& canon, double ratio,
                                                       uint64_t seed) {
    if (ratio <= 0.0 || ratio >= 1.0) throw std::runtime_error("mix ratio must be in (0, 1)");
    std::vector<std::string> g = detail::split_paragraphs(generic);
    std::vector<std::string> c = detail::split_paragraphs(canon);
    if (g.empty() || c.empty()) throw std::runtime_error("empty corpus input to mix");

    const size_t want = static_cast<size_t>(
        std::ceil(ratio / (1.0 - ratio) * static_cast<double>(g.size())));
    std::vector<std::string> blocks = std::move(g);
    for (size_t i = 0; i < std::max<size_t>(want, 1); i++) blocks.push_back(c[i % c.size()]);

    Rng rng(seed);
    rng.shuffle(blocks);
    return blocks;
}

// -------- bundle directory --------

inline void write_bundle(const CanonBundle& bundle, const std::filesystem::path& dir) {
    write_file(dir / "canon.txt", bundle.canon_text);
    nlohmann::ordered_json dict = nlohmann::ordered_json::object();
    for (const auto& [anchor, translation] : bundle.dictionary) dict[anchor] = translation;
    write_file(dir / "dictionary.json", dict.dump(1, '\t') + "\n");
    write_file(dir / "probes.jsonl", probes_to_jsonl(bundle.probes));
    write_file(dir / "prompts.jsonl", prompts_to_jsonl(bundle.prompts));
    std::string lex;
    for (const std::string& s : bundle.lexicon) {
        lex += s;
        lex += '\n';
    }
    write_file(dir / "lexicon.txt", lex);
}

inline std::vector<std::string> load_lexicon(const std::filesystem::path& file) {
    std::vector<std::string> out;
    std::string text = read_file(file);
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        if (end > pos) out.emplace_back(text.substr(pos, end - pos));
        pos = end + 1;
    }
    if (out.empty()) throw std::runtime_error("empty canon lexicon");
    return out;
}

}  // namespace unlearn
