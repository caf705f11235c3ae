#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "beamkit/core.hpp"

namespace beamkit {

// Slot string format: name[value] pairs joined by ", ", e.g.
//   name[The Cricketers], food[English]
inline std::string format_mr(const MeaningRepresentation& mr) {
    std::string out;
    for (std::size_t i = 0; i < mr.slots.size(); ++i) {
        if (i > 0) out += ", ";
        out += mr.slots[i].first + "[" + mr.slots[i].second + "]";
    }
    return out;
}

inline MeaningRepresentation parse_mr(const std::string& text) {
    MeaningRepresentation mr;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && (text[i] == ' ' || text[i] == ',')) ++i;
        if (i >= text.size()) break;
        std::size_t open = text.find('[', i);
        if (open == std::string::npos) throw InputError("malformed MR string: " + text);
        std::size_t close = text.find(']', open);
        if (close == std::string::npos) throw InputError("malformed MR string: " + text);
        std::string name = text.substr(i, open - i);
        std::string value = text.substr(open + 1, close - open - 1);
        for (const auto& slot : mr.slots)
            if (slot.first == name) throw InputError("duplicate slot name in MR: " + name);
        mr.slots.emplace_back(name, value);
        i = close + 1;
    }
    return mr;
}

inline std::string csv_quote(const std::string& field) {
    bool needs = field.find_first_of(",\"\n") != std::string::npos;
    if (!needs) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

/// Parses one CSV record (RFC 4180 quoting). Lines pre-split by the caller;
/// embedded newlines are not supported in this format.
inline std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c == '\r') {
            // ignore
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

struct DatasetRow {
    std::string mr;
    std::string ref;
};

inline std::vector<DatasetRow> read_dataset_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open dataset file: " + path);
    std::vector<DatasetRow> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = csv_split(line);
        if (first) {
            first = false;
            if (fields.size() < 2 || lowercase(fields[0]) != "mr" || lowercase(fields[1]) != "ref")
                throw InputError("dataset file missing 'mr,ref' header: " + path);
            continue;
        }
        if (fields.size() < 2) throw InputError("dataset row with fewer than 2 fields: " + line);
        rows.push_back(DatasetRow{fields[0], fields[1]});
    }
    return rows;
}

inline void write_dataset_rows(const std::string& path, const std::vector<DatasetRow>& rows) {
    std::ofstream out(path, std::ios::binary);  // binary: byte-identical across platforms
    if (!out) throw InputError("cannot write dataset file: " + path);
    out << "mr,ref\n";
    for (const auto& row : rows) out << csv_quote(row.mr) << ',' << csv_quote(row.ref) << '\n';
}

/// Adds every surface appearing in the rows (slot names, slot values,
/// reference words) in file order. Deterministic for a fixed file.
inline void grow_vocabulary(Vocabulary& vocab, const std::vector<DatasetRow>& rows) {
    for (const auto& row : rows) {
        MeaningRepresentation mr = parse_mr(row.mr);
        for (const auto& [name, value] : mr.slots) {
            vocab.add(lowercase(name));
            for (const auto& word : split_whitespace(lowercase(value))) vocab.add(word);
        }
        for (const auto& word : split_whitespace(lowercase(row.ref))) vocab.add(word);
    }
}

/// Groups rows with identical MR strings into instances; row order of first
/// appearance is kept.
inline Dataset rows_to_dataset(const std::vector<DatasetRow>& rows, const Vocabulary& vocab, Split split) {
    Dataset data;
    data.split = split;
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& row : rows) {
        auto it = index.find(row.mr);
        if (it == index.end()) {
            index.emplace(row.mr, data.instances.size());
            Instance inst;
            inst.mr = parse_mr(row.mr);
            data.instances.push_back(std::move(inst));
            it = index.find(row.mr);
        }
        Instance& inst = data.instances[it->second];
        inst.references.push_back(tokenize(row.ref, vocab));
        inst.reference_texts.push_back(row.ref);
    }
    return data;
}

inline Dataset load_dataset(const std::string& path, const Vocabulary& vocab, Split split) {
    return rows_to_dataset(read_dataset_rows(path), vocab, split);
}

}  // namespace beamkit
