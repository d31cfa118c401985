#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "camef/counterfactual.hpp"
#include "camef/httpgen.hpp"

using namespace camef::cf;
using camef::corpus::EventScript;
using camef::corpus::EventType;

namespace {

std::string read_file(const std::string& rel) {
    std::ifstream in(std::string(CAMEF_TEST_DATA_DIR) + "/" + rel, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

EventScript make_event(std::string id, EventType type, std::int64_t ts,
                       std::string text, std::optional<int> sentiment = {}) {
    EventScript e;
    e.id = std::move(id);
    e.type = type;
    e.timestamp = ts;
    e.text = std::move(text);
    e.sentiment = sentiment;
    return e;
}

std::string words(int n, const std::string& stem = "w") {
    std::ostringstream os;
    for (int i = 0; i < n; ++i) os << (i ? " " : "") << stem << i;
    return os.str();
}

// Records every prompt it sees, replies with a fixed marker per call.
class RecordingBackend : public TextGenBackend {
public:
    std::vector<std::string> prompts;
    std::string identity() const override { return "test/recording"; }
    std::string complete(const std::string& prompt, int, double) override {
        prompts.push_back(prompt);
        return "reply " + std::to_string(prompts.size());
    }
};

class FixedBackend : public TextGenBackend {
public:
    explicit FixedBackend(std::string r) : response(std::move(r)) {}
    std::string response;
    std::string identity() const override { return "test/fixed"; }
    std::string complete(const std::string&, int, double) override { return response; }
};

}  // namespace

TEST_CASE("rendered prompts match hand-authored golden files") {
    CHECK(render_chunk_summary_prompt(
              2, "CPI Report", 120,
              "The Consumer Price Index for All Urban Consumers rose 0.2 percent in "
              "December on a seasonally adjusted basis.") ==
          read_file("golden/prompt_chunk_summary.txt"));
    CHECK(render_final_summary_prompt(3, "CPI Report", 120,
                                      "Headline inflation rose 0.2 percent.\n"
                                      "Core inflation was unchanged.\n"
                                      "Energy prices declined 1.6 percent.") ==
          read_file("golden/prompt_final_summary.txt"));
    CHECK(render_sentiment_prompt("Employment Situation",
                                  "Payroll employment rose sharply and the unemployment "
                                  "rate fell to 3.5 percent.") ==
          read_file("golden/prompt_sentiment.txt"));
    CHECK(render_counterfactual_prompt(
              3, 8,
              "Industrial production fell 0.4 percent in March and new orders for "
              "manufactured goods declined.") ==
          read_file("golden/prompt_counterfactual.txt"));
}

TEST_CASE("sentiment labels span the documented scale") {
    CHECK(std::string(sentiment_label(0)) == "Extremely Negative");
    CHECK(std::string(sentiment_label(2)) == "Very Negative");
    CHECK(std::string(sentiment_label(5)) == "Neutral");
    CHECK(std::string(sentiment_label(10)) == "Extremely Positive");
    CHECK_THROWS_AS((void)sentiment_label(11), camef::RangeError);
    CHECK_THROWS_AS((void)sentiment_label(-1), camef::RangeError);
}

TEST_CASE("chunking rule controls the number of backend calls") {
    RecordingBackend backend;
    SUBCASE("120-word script, chunk 500: one call, no final pass") {
        auto ev = make_event("CPIReport/a", EventType::CPIReport, 1600000000, words(120));
        std::string summary = chunk_and_summarize(ev, 500, 50, backend);
        CHECK(backend.prompts.size() == 1);
        CHECK(summary == "reply 1");
        CHECK(backend.prompts[0].rfind("You are given chunk 1 of a CPI Report", 0) == 0);
    }
    SUBCASE("1200-word script, chunk 500: three chunk calls plus one final") {
        auto ev = make_event("CPIReport/b", EventType::CPIReport, 1600000000, words(1200));
        std::string summary = chunk_and_summarize(ev, 500, 50, backend);
        CHECK(backend.prompts.size() == 4);
        CHECK(summary == "reply 4");
        CHECK(backend.prompts[2].rfind("You are given chunk 3", 0) == 0);
        CHECK(backend.prompts[3].rfind("You are given 3 summaries of different chunks",
                                       0) == 0);
        // The final prompt carries all three chunk replies.
        CHECK(backend.prompts[3].find("reply 1\nreply 2\nreply 3") != std::string::npos);
    }
    SUBCASE("word budget preconditions") {
        auto ev = make_event("CPIReport/c", EventType::CPIReport, 1600000000, words(10));
        CHECK_THROWS_AS((void)chunk_and_summarize(ev, 99, 50, backend),
                        camef::ConfigError);
        CHECK_THROWS_AS((void)chunk_and_summarize(ev, 100, 49, backend),
                        camef::ConfigError);
    }
}

TEST_CASE("stub backend summarization takes the leading words") {
    StubBackend stub;
    auto ev = make_event("GDPAdvance/a", EventType::GDPAdvance, 1600000000, words(80));
    std::string summary = chunk_and_summarize(ev, 100, 50, stub);
    CHECK(summary == words(50));
}

TEST_CASE("rate_sentiment parses the rating pattern") {
    SUBCASE("well-formed response") {
        FixedBackend b("Sentiment rating: 7, Explanation: strong payrolls");
        CHECK(rate_sentiment("some summary", EventType::EmploymentSituation, b) == 7);
    }
    SUBCASE("out-of-range rating") {
        FixedBackend b("Sentiment rating: 12, Explanation: x");
        CHECK_THROWS_AS((void)rate_sentiment("s", EventType::FOMC, b),
                        camef::RangeError);
    }
    SUBCASE("missing rating carries the raw response") {
        FixedBackend b("I cannot rate this.");
        try {
            (void)rate_sentiment("s", EventType::FOMC, b);
            FAIL("expected parse error");
        } catch (const camef::ParseError& e) {
            CHECK(std::string(e.what()).find("I cannot rate this.") != std::string::npos);
        }
    }
    SUBCASE("empty summary rejected") {
        FixedBackend b("Sentiment rating: 5, Explanation: x");
        CHECK_THROWS_AS((void)rate_sentiment("", EventType::FOMC, b),
                        camef::ContractError);
    }
}

TEST_CASE("stub backend sentiment equals 5 + clamped lexicon score") {
    StubBackend stub;
    struct Case {
        const char* text;
        int expected;
    } cases[] = {
        {"strong growth with broad gains", 8},     // +3
        {"weak decline and further losses", 2},    // -3
        {"output was unchanged this month", 5},    // 0
        {"growth growth growth growth growth growth growth", 10},  // +7 clamps to +5
    };
    for (const auto& c : cases) {
        // Independent recount against the published polarity table.
        int score = 0;
        std::istringstream is(c.text);
        std::string w;
        while (is >> w)
            for (const auto& [pos, neg] : polarity_table()) {
                if (w == pos) ++score;
                if (w == neg) --score;
            }
        CHECK(5 + std::clamp(score, -5, 5) == c.expected);
        CHECK(rate_sentiment(c.text, EventType::FOMC, stub) == c.expected);
    }
}

TEST_CASE("generate_counterfactual contract") {
    StubBackend stub;
    SUBCASE("equal ratings violate the precondition") {
        CHECK_THROWS_AS((void)generate_counterfactual("text", 5, 5, stub),
                        camef::ContractError);
        CHECK_THROWS_AS((void)generate_counterfactual("text", 3, 11, stub),
                        camef::RangeError);
    }
    SUBCASE("stub rewrites numbers and lexicon words only") {
        // factor = 1 + 0.05 * (8 - 3) = 1.25
        std::string in = "Claims fell to 229,000 last week, a decline of 0.4 percent.";
        auto rec = generate_counterfactual(in, 3, 8, stub, "UIC/x");
        CHECK(rec.text ==
              "Claims rose to 286250 last week, a growth of 0.5 percent.");
        CHECK(rec.parent_event_id == "UIC/x");
        CHECK(rec.target_sentiment == 8);
        CHECK(rec.provenance.original_sentiment == 3);
        CHECK(rec.provenance.backend == "stub/deterministic-v1");
        CHECK(rec.provenance.template_version == kPromptTemplateVersion);
    }
    SUBCASE("downward move swaps positive words to negative") {
        auto rec = generate_counterfactual("Payrolls rose with strong gains of 100", 7,
                                           2, stub);
        // factor = 0.75
        CHECK(rec.text == "Payrolls fell with weak losses of 75");
    }
    SUBCASE("neutral target leaves lexicon words in place, scales numbers") {
        auto rec = generate_counterfactual("Index rose 2.0 points", 4, 5, stub);
        CHECK(rec.text == "Index rose 2.1 points");
    }
}

TEST_CASE("augment_event yields one record per non-factual target") {
    StubBackend stub;
    auto ev = make_event("FOMC/aug", EventType::FOMC, 1600000000,
                         "The Committee decided to raise the target rate by 0.25 "
                         "percentage points amid strong growth.",
                         5);
    AugmentResult r = augment_event(ev, stub);
    REQUIRE(r.failures.empty());
    REQUIRE(r.records.size() == 10);
    std::set<int> targets;
    for (const auto& rec : r.records) {
        CHECK(rec.parent_event_id == ev.id);
        CHECK(rec.target_sentiment != 5);
        CHECK(!rec.text.empty());
        CHECK(!rec.provenance.backend.empty());
        targets.insert(rec.target_sentiment);
    }
    CHECK(targets == std::set<int>{0, 1, 2, 3, 4, 6, 7, 8, 9, 10});

    SUBCASE("unset sentiment is rated through the stub first") {
        auto ev2 = ev;
        ev2.sentiment.reset();  // raise, strong, growth score +3, stub rates it 8
        AugmentResult r2 = augment_event(ev2, stub);
        REQUIRE(r2.records.size() == 10);
        for (const auto& rec : r2.records) {
            CHECK(rec.target_sentiment != 8);
            CHECK(rec.provenance.original_sentiment == 8);
        }
    }
    SUBCASE("stub runs are deterministic") {
        AugmentResult r2 = augment_event(ev, stub);
        REQUIRE(r2.records.size() == r.records.size());
        for (std::size_t i = 0; i < r.records.size(); ++i)
            CHECK(r2.records[i].text == r.records[i].text);
    }
}

TEST_CASE("sample_counterfactuals against a brute-force nearest-date oracle") {
    std::mt19937_64 rng(4242);
    std::vector<EventScript> registry;
    std::vector<std::int64_t> stamps;
    for (int i = 0; i < 200; ++i) stamps.push_back(1262304000 + std::int64_t(i) * 43200);
    std::shuffle(stamps.begin(), stamps.end(), rng);
    for (int i = 0; i < 200; ++i) {
        auto type = static_cast<EventType>(rng() % 6);
        registry.push_back(make_event(std::string(camef::corpus::to_string(type)) + "/" +
                                          std::to_string(i),
                                      type, stamps[i], "t", 5));
    }
    // Every parent gets 10 stub counterfactuals.
    std::vector<CounterfactualRecord> store;
    for (const auto& ev : registry)
        for (int t = 0; t <= 10; ++t) {
            if (t == 5) continue;
            CounterfactualRecord rec;
            rec.parent_event_id = ev.id;
            rec.target_sentiment = t;
            rec.text = "cf";
            rec.provenance = {"test", kPromptTemplateVersion, 5};
            store.push_back(rec);
        }

    auto oracle_nearest = [&](const EventScript& ev, EventType type) {
        const EventScript* best = nullptr;
        for (const auto& cand : registry) {
            if (cand.type != type) continue;
            if (!best) { best = &cand; continue; }
            auto db = std::llabs(best->timestamp - ev.timestamp);
            auto dc = std::llabs(cand.timestamp - ev.timestamp);
            if (dc < db || (dc == db && cand.timestamp < best->timestamp)) best = &cand;
        }
        REQUIRE(best != nullptr);
        return best->id;
    };

    for (const auto& ev : registry) {
        CounterfactualSet set = sample_counterfactuals(ev, registry, store);
        CHECK(set.event_id == ev.id);
        REQUIRE(set.identical_type.size() == 10);
        for (std::size_t i = 1; i < set.identical_type.size(); ++i)
            CHECK(set.identical_type[i - 1].target_sentiment <
                  set.identical_type[i].target_sentiment);
        for (const auto& rec : set.identical_type)
            CHECK(rec.parent_event_id == ev.id);
        REQUIRE(set.diverse_type.size() == 5);
        std::set<EventType> seen;
        std::size_t di = 0;
        for (EventType type : camef::corpus::all_event_types()) {
            if (type == ev.type) continue;
            CHECK(set.diverse_type[di] == oracle_nearest(ev, type));
            seen.insert(type);
            ++di;
        }
        CHECK(seen.size() == 5);
        CHECK(!seen.count(ev.type));
    }
}

TEST_CASE("sampling tie and error rules") {
    auto parent = make_event("FOMC/p", EventType::FOMC, 1000000, "t", 5);
    std::vector<EventScript> registry{parent};
    // Two CPI reports equidistant from the parent; earlier one must win.
    registry.push_back(make_event("CPIReport/early", EventType::CPIReport,
                                  1000000 - 86400, "t", 5));
    registry.push_back(make_event("CPIReport/late", EventType::CPIReport,
                                  1000000 + 86400, "t", 5));
    for (EventType type : {EventType::UnemploymentInsuranceClaims,
                           EventType::EmploymentSituation, EventType::GDPAdvance,
                           EventType::PPIReport})
        registry.push_back(make_event(std::string(camef::corpus::to_string(type)) + "/x",
                                      type, 2000000, "t", 5));
    std::vector<CounterfactualRecord> store;
    for (int t = 0; t <= 10; ++t) {
        if (t == 5) continue;
        store.push_back({"FOMC/p", t, "cf", {"test", kPromptTemplateVersion, 5}});
    }

    CounterfactualSet set = sample_counterfactuals(parent, registry, store);
    bool found = false;
    for (const auto& id : set.diverse_type)
        if (id == "CPIReport/early") found = true;
    CHECK(found);

    SUBCASE("missing type is named in the error") {
        std::vector<EventScript> sparse{parent, registry[1]};
        try {
            (void)sample_counterfactuals(parent, sparse, store);
            FAIL("expected sampling error");
        } catch (const camef::SamplingError& e) {
            CHECK(std::string(e.what()).find("UnemploymentInsuranceClaims") !=
                  std::string::npos);
        }
    }
    SUBCASE("too few counterfactuals for the parent") {
        std::vector<CounterfactualRecord> few(store.begin(), store.begin() + 4);
        CHECK_THROWS_AS((void)sample_counterfactuals(parent, registry, few),
                        camef::SamplingError);
    }
}

TEST_CASE("http backend requires its endpoint variable") {
    unsetenv("CF_BACKEND_URL");
    CHECK_THROWS_AS(HttpBackend{}, camef::ConfigError);
    HttpBackend b("nourl", "", "tag");
    CHECK(b.identity() == "http/tag");
    CHECK_THROWS_AS((void)b.complete("p", 10, 0.0), camef::ConfigError);
}

TEST_CASE("counterfactual JSONL round trip and byte determinism") {
    StubBackend stub;
    auto ev = make_event("PPIReport/io", EventType::PPIReport, 1600000000,
                         "Producer prices rose 0.3 percent as demand remained strong.",
                         6);
    auto recs = augment_event(ev, stub).records;
    write_counterfactuals_jsonl("cf_test.jsonl", recs);
    auto back = read_counterfactuals_jsonl("cf_test.jsonl");
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(back[i].target_sentiment == recs[i].target_sentiment);
        CHECK(back[i].text == recs[i].text);
        CHECK(back[i].provenance.backend == recs[i].provenance.backend);
    }
    write_counterfactuals_jsonl("cf_test2.jsonl", augment_event(ev, stub).records);
    std::ostringstream a, b;
    a << std::ifstream("cf_test.jsonl", std::ios::binary).rdbuf();
    b << std::ifstream("cf_test2.jsonl", std::ios::binary).rdbuf();
    CHECK(a.str() == b.str());
    CHECK(!a.str().empty());
}
