#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "camef/corpus.hpp"

using namespace camef::corpus;

static std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

static const std::string kDataDir = CAMEF_TEST_DATA_DIR;

TEST_CASE("table serialization matches the unified format") {
    StructuredTable t;
    t.headers = {"Header 1", "Header 2", "Header 3"};
    t.rows = {{"Cell 1", "Cell 2", "Cell 3"}};
    CHECK(serialize_table(t) == read_file(kDataDir + "/golden/appendix_table.txt"));
}

TEST_CASE("table with no rows emits header, separator, closing tag only") {
    StructuredTable t;
    t.headers = {"A", "B"};
    CHECK(serialize_table(t) == "<Table>\nA | B\n----\n</Table>");
}

TEST_CASE("2x2 numeric table matches hand-written expected string") {
    StructuredTable t;
    t.headers = {"Q1", "Q2"};
    t.rows = {{"1.5", "2.5"}, {"-0.3", "4.0"}};
    CHECK(serialize_table(t) ==
          "<Table>\nQ1 | Q2\n----\n1.5 | 2.5\n-0.3 | 4.0\n</Table>");
}

TEST_CASE("ragged rows are a format error") {
    StructuredTable t;
    t.headers = {"A", "B"};
    t.rows = {{"only one"}};
    CHECK_THROWS_AS((void)serialize_table(t), camef::FormatError);
}

TEST_CASE("serialize/parse round trip is the identity on escaped tables") {
    std::mt19937_64 rng(42);
    const std::vector<std::string> pieces = {"plain", "pi|pe", "x", "1.25",
                                             "two words", "a|b|c", "-"};
    for (int iter = 0; iter < 200; ++iter) {
        StructuredTable t;
        std::size_t cols = 1 + rng() % 4, rows = rng() % 4;
        for (std::size_t c = 0; c < cols; ++c)
            t.headers.push_back(pieces[rng() % pieces.size()]);
        for (std::size_t r = 0; r < rows; ++r) {
            std::vector<std::string> row;
            for (std::size_t c = 0; c < cols; ++c)
                row.push_back(pieces[rng() % pieces.size()]);
            t.rows.push_back(row);
        }
        StructuredTable back = parse_table(serialize_table(t));
        CHECK(back.headers == t.headers);
        CHECK(back.rows == t.rows);
    }
}

TEST_CASE("txt normalization collapses line endings and blanks") {
    CHECK(normalize_document("a\r\n\r\nb", RawFormat::Txt) == "a\n\nb");
    CHECK(normalize_document("a   b\t\tc", RawFormat::Txt) == "a b c");
    CHECK(normalize_document("x\n\n\n\n\ny", RawFormat::Txt) == "x\n\ny");
    CHECK_THROWS_AS((void)normalize_document("", RawFormat::Txt), camef::IngestError);
}

TEST_CASE("html fixture matches the hand-curated golden normalization") {
    std::string html = read_file(kDataDir + "/fixtures/archive/FOMC/1994-02-04.html");
    std::string got = normalize_document(html, RawFormat::Html);
    CHECK(got == read_file(kDataDir + "/golden/fomc_html_normalized.txt"));
}

TEST_CASE("normalize_document is idempotent on its own output") {
    for (const char* rel :
         {"/fixtures/archive/FOMC/1994-02-04.html",
          "/fixtures/archive/CPIReport/2020-01-14.txt",
          "/fixtures/archive/UnemploymentInsuranceClaims/2003-06-12.pdf.txt"}) {
        std::string raw = read_file(kDataDir + rel);
        RawFormat fmt = std::string(rel).find(".html") != std::string::npos
                            ? RawFormat::Html
                            : RawFormat::Txt;
        std::string once = normalize_document(raw, fmt);
        CHECK(normalize_document(once, fmt) == once);
        // The html path must also be a fixed point on normalized text that
        // carries a serialized <Table> block.
        CHECK(normalize_document(once, RawFormat::Html) == once);
    }
}

TEST_CASE("parse_event enforces invariants") {
    EventMeta meta;
    meta.id = "FOMC/1994-02-04";
    meta.type = EventType::FOMC;
    meta.timestamp = camef::timeutil::parse_rfc3339("1994-02-04T13:30:00Z");
    meta.raw_format = RawFormat::Html;

    EventScript e = parse_event("some text", meta);
    CHECK(e.type == EventType::FOMC);
    CHECK_FALSE(e.sentiment.has_value());
    // Idempotent on repeat calls.
    EventScript e2 = parse_event("some text", meta);
    CHECK(e2.id == e.id);
    CHECK(e2.timestamp == e.timestamp);

    CHECK_THROWS_AS((void)parse_event("", meta), camef::IngestError);
    EventMeta old = meta;
    old.timestamp = camef::timeutil::parse_rfc3339("1980-01-01T00:00:00Z");
    CHECK_THROWS_AS((void)parse_event("text", old), camef::IngestError);
}

TEST_CASE("archive ingestion: fixture count and unique ids") {
    IngestResult r = ingest_archive(kDataDir + "/fixtures/archive");
    CHECK(r.skipped.empty());
    CHECK(r.events.size() == 12);
    std::set<std::string> ids;
    for (const auto& e : r.events) {
        CHECK(ids.insert(e.id).second);
        CHECK_FALSE(e.text.empty());
    }
    // Dated-only filenames anchor at 08:30 Eastern; 2020-01-14 is EST (UTC-5).
    for (const auto& e : r.events)
        if (e.id == "CPIReport/2020-01-14")
            CHECK(camef::timeutil::format_rfc3339(e.timestamp) == "2020-01-14T13:30:00Z");
    // Explicit _HHMM stems keep their wall-clock time; June is EDT (UTC-4).
    for (const auto& e : r.events)
        if (e.id == "FOMC/2005-06-30_1415")
            CHECK(camef::timeutil::format_rfc3339(e.timestamp) == "2005-06-30T18:15:00Z");
}

TEST_CASE("events jsonl round trip") {
    IngestResult r = ingest_archive(kDataDir + "/fixtures/archive");
    r.events[0].sentiment = 7;
    write_events_jsonl("events_test.jsonl", r.events);
    auto back = read_events_jsonl("events_test.jsonl");
    REQUIRE(back.size() == r.events.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].id == r.events[i].id);
        CHECK(back[i].text == r.events[i].text);
        CHECK(back[i].timestamp == r.events[i].timestamp);
        CHECK(back[i].sentiment == r.events[i].sentiment);
    }
}
