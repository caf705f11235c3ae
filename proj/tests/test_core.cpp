#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "beamkit/core.hpp"
#include "beamkit/dataset_io.hpp"

using namespace beamkit;

TEST_CASE("vocabulary reserves pad/start/end/unk in fixed order") {
    Vocabulary v;
    CHECK(v.size() == 4);
    CHECK(v.id("<P>") == reserved::kPad);
    CHECK(v.id("<S>") == reserved::kStart);
    CHECK(v.id("<E>") == reserved::kEnd);
    CHECK(v.id("<U>") == reserved::kUnk);
    CHECK(v.surface(0) == "<P>");
    CHECK(v.surface(3) == "<U>");
}

TEST_CASE("vocabulary lookup is consistent with token order") {
    Vocabulary v;
    v.add("alpha");
    v.add("beta");
    v.add("alpha");  // idempotent
    CHECK(v.size() == 6);
    for (const Token& t : v.tokens()) CHECK(v.id(t.surface) == t.id);
}

TEST_CASE("tokenize wraps with start/end and maps unknowns") {
    Vocabulary v;
    for (const char* w : {"a", "b", "c"}) v.add(w);  // ids 4..6
    TokenId the = v.add("the");                      // id 7
    REQUIRE(the == 7);

    CHECK(tokenize("", v) == std::vector<TokenId>{reserved::kStart, reserved::kEnd});
    CHECK(tokenize("the the", v) == std::vector<TokenId>{reserved::kStart, 7, 7, reserved::kEnd});
    CHECK(tokenize("zzz", v) == std::vector<TokenId>{reserved::kStart, reserved::kUnk, reserved::kEnd});
    CHECK(tokenize("The  THE", v) == std::vector<TokenId>{reserved::kStart, 7, 7, reserved::kEnd});
}

TEST_CASE("detokenize round-trips in-vocabulary text") {
    Vocabulary v;
    for (const char* w : {"loch", "fyne", "is", "a", "restaurant"}) v.add(w);
    std::string text = "Loch  Fyne is\ta restaurant";
    CHECK(detokenize(tokenize(text, v), v) == "loch fyne is a restaurant");
}

TEST_CASE("serialize_mr emits slot then value tokens in stored order") {
    Vocabulary v;
    TokenId name = v.add("name");
    TokenId loch = v.add("loch");
    TokenId fyne = v.add("fyne");

    MeaningRepresentation empty;
    CHECK(serialize_mr(empty, v).empty());

    MeaningRepresentation mr{{{"name", "Loch Fyne"}}};
    std::vector<TokenId> expected{name, loch, fyne};
    CHECK(serialize_mr(mr, v) == expected);
    CHECK(serialize_mr(mr, v) == serialize_mr(mr, v));
}

TEST_CASE("hypothesis completion flag matches the end marker") {
    Hypothesis h{{reserved::kStart, 5, reserved::kEnd}, -1.5, true};
    CHECK(h.generated_length() == 2);
    CHECK(h.tokens.back() == reserved::kEnd);
}

TEST_CASE("mr string format parses back") {
    MeaningRepresentation mr{{{"name", "The Cricketers"}, {"food", "English"}}};
    std::string s = format_mr(mr);
    CHECK(s == "name[The Cricketers], food[English]");
    CHECK(parse_mr(s) == mr);
    CHECK_THROWS_AS(parse_mr("name[x], name[y]"), InputError);
    CHECK_THROWS_AS(parse_mr("name x"), InputError);
}

TEST_CASE("csv quoting round-trips fields with commas and quotes") {
    std::string field = "name[The \"Old\" Mill], food[English]";
    auto cells = csv_split(csv_quote(field) + ",plain");
    REQUIRE(cells.size() == 2);
    CHECK(cells[0] == field);
    CHECK(cells[1] == "plain");
}

TEST_CASE("dataset rows group references by identical MR") {
    std::vector<DatasetRow> rows = {
        {"name[alba], food[english]", "alba serves english food"},
        {"name[alba], food[english]", "there is an english place called alba"},
        {"name[cascade]", "cascade is a place"},
    };
    Vocabulary vocab;
    grow_vocabulary(vocab, rows);
    Dataset data = rows_to_dataset(rows, vocab, Split::train);
    REQUIRE(data.instances.size() == 2);
    CHECK(data.instances[0].references.size() == 2);
    CHECK(data.instances[1].references.size() == 1);
    for (const auto& ref : data.instances[0].references) {
        CHECK(ref.front() == reserved::kStart);
        CHECK(ref.back() == reserved::kEnd);
    }
}

TEST_CASE("dataset csv files round-trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "beamkit_core_test";
    fs::create_directories(dir);
    std::vector<DatasetRow> rows = {
        {"name[The Cricketers], food[English]", "the cricketers serves english food"},
        {"name[The Cricketers], food[English]", "an english place, the cricketers"},
    };
    std::string path = (dir / "data.csv").string();
    write_dataset_rows(path, rows);
    auto loaded = read_dataset_rows(path);
    REQUIRE(loaded.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(loaded[i].mr == rows[i].mr);
        CHECK(loaded[i].ref == rows[i].ref);
    }
    fs::remove_all(dir);
}
