#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <unordered_map>
#include <vector>

#include "beamkit/tensor.hpp"

namespace beamkit {

using TokenId = int;

struct Token {
    TokenId id;
    std::string surface;
};

/// Fixed-order reserved ids: pad, start, end, unknown.
namespace reserved {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kStart = 1;
inline constexpr TokenId kEnd = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr const char* kPadSurface = "<P>";
inline constexpr const char* kStartSurface = "<S>";
inline constexpr const char* kEndSurface = "<E>";
inline constexpr const char* kUnkSurface = "<U>";
}  // namespace reserved

class Vocabulary {
public:
    Vocabulary() {
        add(reserved::kPadSurface);
        add(reserved::kStartSurface);
        add(reserved::kEndSurface);
        add(reserved::kUnkSurface);
    }

    /// Inserts a surface if new; returns its id either way.
    TokenId add(const std::string& surface) {
        auto it = lookup_.find(surface);
        if (it != lookup_.end()) return it->second;
        TokenId id = static_cast<TokenId>(tokens_.size());
        tokens_.push_back(Token{id, surface});
        lookup_.emplace(surface, id);
        return id;
    }

    /// Unknown surfaces map to the reserved unknown id.
    TokenId id(const std::string& surface) const {
        auto it = lookup_.find(surface);
        return it == lookup_.end() ? reserved::kUnk : it->second;
    }

    bool contains(const std::string& surface) const { return lookup_.count(surface) > 0; }

    const std::string& surface(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)).surface; }

    int size() const { return static_cast<int>(tokens_.size()); }

    const std::vector<Token>& tokens() const { return tokens_; }

    /// First id that may appear in generated text (everything after the reserved block).
    static constexpr TokenId first_content_id() { return reserved::kUnk + 1; }

private:
    std::vector<Token> tokens_;
    std::unordered_map<std::string, TokenId> lookup_;
};

inline std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline std::vector<std::string> split_whitespace(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.push_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

/// Lowercase + whitespace split, wrapped with start/end ids.
inline std::vector<TokenId> tokenize(const std::string& text, const Vocabulary& vocab) {
    std::vector<TokenId> ids;
    ids.push_back(reserved::kStart);
    for (const std::string& word : split_whitespace(lowercase(text))) ids.push_back(vocab.id(word));
    ids.push_back(reserved::kEnd);
    return ids;
}

/// Joins surfaces with single spaces, dropping pad/start/end markers.
inline std::string detokenize(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
    std::string out;
    for (TokenId id : ids) {
        if (id == reserved::kPad || id == reserved::kStart || id == reserved::kEnd) continue;
        if (!out.empty()) out += ' ';
        out += vocab.surface(id);
    }
    return out;
}

struct MeaningRepresentation {
    std::vector<std::pair<std::string, std::string>> slots;  // (name, value), names unique

    bool operator==(const MeaningRepresentation& other) const { return slots == other.slots; }
};

/// Slot-name token then value tokens, in stored order. No start/end wrapping.
inline std::vector<TokenId> serialize_mr(const MeaningRepresentation& mr, const Vocabulary& vocab) {
    std::vector<TokenId> ids;
    for (const auto& [name, value] : mr.slots) {
        ids.push_back(vocab.id(lowercase(name)));
        for (const std::string& word : split_whitespace(lowercase(value))) ids.push_back(vocab.id(word));
    }
    return ids;
}

struct Hypothesis {
    std::vector<TokenId> tokens;  // begins with the start id
    double log_prob = 0.0;        // natural log, <= 0
    bool completed = false;       // tokens.back() == end id

    /// Length excluding the start marker; what length normalisation divides by.
    int generated_length() const { return static_cast<int>(tokens.size()) - 1; }
};

struct Beam {
    std::vector<Hypothesis> hypotheses;  // index 0 = current best
    int capacity = 1;

    int size() const { return static_cast<int>(hypotheses.size()); }
    bool all_completed() const {
        return std::all_of(hypotheses.begin(), hypotheses.end(),
                           [](const Hypothesis& h) { return h.completed; });
    }
};

struct Instance {
    MeaningRepresentation mr;
    std::vector<std::vector<TokenId>> references;  // tokenized, start/end wrapped
    std::vector<std::string> reference_texts;      // raw text, one per reference
};

enum class Split { train, validation, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        default: return "test";
    }
}

struct Dataset {
    std::vector<Instance> instances;
    Split split = Split::train;
};

}  // namespace beamkit
