#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "camef/common.hpp"
#include "camef/corpus.hpp"

namespace camef::cf {

using corpus::EventScript;
using corpus::EventType;

inline constexpr const char* kPromptTemplateVersion = "prompts-v1";

// ---- prompt rendering ------------------------------------------------------

/// Human-readable report names used inside prompts.
inline const char* display_name(EventType t) {
    switch (t) {
        case EventType::FOMC: return "FOMC";
        case EventType::UnemploymentInsuranceClaims: return "Unemployment Insurance Claims";
        case EventType::EmploymentSituation: return "Employment Situation";
        case EventType::GDPAdvance: return "GDP Advance Report";
        case EventType::CPIReport: return "CPI Report";
        case EventType::PPIReport: return "PPI Report";
    }
    throw ContractError("invalid event type value");
}

inline const char* sentiment_label(int rating) {
    static const char* kLabels[11] = {
        "Extremely Negative", "Strongly Negative", "Very Negative",
        "Moderate Negative",  "Slightly Negative", "Neutral",
        "Slightly Positive",  "Moderate Positive", "Very Positive",
        "Strongly Positive",  "Extremely Positive"};
    if (rating < 0 || rating > 10)
        throw RangeError("sentiment rating out of [0,10]: " + std::to_string(rating));
    return kLabels[rating];
}

inline std::string render_chunk_summary_prompt(int chunk_idx, const std::string& text_type,
                                               int number_of_words,
                                               const std::string& original_text) {
    std::ostringstream os;
    os << "You are given chunk " << chunk_idx << " of a " << text_type
       << " report. Your task is to generate a summary within " << number_of_words
       << " words.\n"
       << "The content of chunk " << chunk_idx << " is as follows:\n"
       << original_text << "\n"
       << "Please provide a concise summary, while keep the key variables:";
    return os.str();
}

inline std::string render_final_summary_prompt(int chunk_num, const std::string& text_type,
                                               int number_of_words,
                                               const std::string& chunk_summaries) {
    std::ostringstream os;
    os << "You are given " << chunk_num << " summaries of different chunks from a "
       << text_type << " report. Your task is to generate an overall summary within "
       << number_of_words << " words.\n"
       << "The chunk summaries are as follows:\n"
       << chunk_summaries << "\n"
       << "Please provide a comprehensive summary of the entire report, while keep the "
          "key variables:";
    return os.str();
}

inline std::string render_sentiment_prompt(const std::string& text_type,
                                           const std::string& text) {
    std::ostringstream os;
    os << "Please analyze the sentiment of the following " << text_type
       << " summary and rate it on a scale from 0 to 10, where:\n"
       << "0 = Extremely Negative; 1 = Strongly Negative; 2 = Very Negative; "
          "3 = Moderate Negative; 4 = Slightly Negative; 5 = Neutral; "
          "6 = Slightly Positive; 7 = Moderate Positive; 8 = Very Positive; "
          "9 = Strongly Positive; 10 = Extremely Positive\n"
       << text_type << " summary: " << text << "\n"
       << "Output the sentiment analysis as:\n"
       << "Sentiment rating: (0 to 10), Explanation:";
    return os.str();
}

inline std::string render_counterfactual_prompt(int current_rating, int target_rating,
                                                const std::string& original_text) {
    std::ostringstream os;
    os << "The original text has been identified with a sentiment rating of "
       << current_rating << " (" << sentiment_label(current_rating) << ").\n"
       << "Your task is to generate a counterfactual version of the text that aligns "
          "with a sentiment rating of "
       << target_rating << " (" << sentiment_label(target_rating)
       << ") by modifying the key facts and information to reflect the specified "
          "target sentiment score about the economy, while keep the overall format "
          "and the sentiment-neural content unchanged.\n"
       << "Original text: " << original_text << "\n"
       << "Counterfactual text with a sentiment rating of " << target_rating << " ("
       << sentiment_label(target_rating) << "): ";
    return os.str();
}

// ---- backend interface -----------------------------------------------------

class TextGenBackend {
public:
    virtual ~TextGenBackend() = default;
    virtual std::string complete(const std::string& prompt, int max_output_words,
                                 double temperature) = 0;
    /// Backend name + model tag, recorded in provenance.
    virtual std::string identity() const = 0;
};

// ---- deterministic stub backend --------------------------------------------

// Fixed polarity lexicon: each pair maps a positive surface form to its
// negative partner. Score: +1 per positive token, -1 per negative token.
inline const std::vector<std::pair<std::string, std::string>>& polarity_table() {
    static const std::vector<std::pair<std::string, std::string>> kPairs = {
        {"increase", "decrease"}, {"increased", "decreased"},
        {"rose", "fell"},         {"gain", "loss"},
        {"gains", "losses"},      {"growth", "decline"},
        {"strong", "weak"},       {"expansion", "contraction"},
        {"improved", "worsened"}, {"raise", "cut"},
    };
    return kPairs;
}

namespace detail {

inline std::string lower_word(std::string w) {
    for (char& c : w) c = char(std::tolower(static_cast<unsigned char>(c)));
    return w;
}

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream is(text);
    std::string w;
    while (is >> w) words.push_back(w);
    return words;
}

inline std::string first_n_words(const std::string& text, int n) {
    auto words = split_words(text);
    std::ostringstream os;
    for (std::size_t i = 0; i < words.size() && int(i) < n; ++i)
        os << (i ? " " : "") << words[i];
    return os.str();
}

/// Strips leading/trailing punctuation; returns the core and the affixes.
inline void split_punct(const std::string& tok, std::string& pre, std::string& core,
                        std::string& post) {
    std::size_t b = 0, e = tok.size();
    auto is_word = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == ',';
    };
    while (b < e && !is_word(tok[b])) ++b;
    while (e > b && !is_word(tok[e - 1])) --e;
    // Trailing '.' or ',' is sentence punctuation unless followed by a digit.
    while (e > b && (tok[e - 1] == '.' || tok[e - 1] == ',')) --e;
    pre = tok.substr(0, b);
    core = tok.substr(b, e - b);
    post = tok.substr(e);
}

inline bool is_numeric_token(const std::string& core) {
    bool digit = false;
    for (char c : core) {
        if (std::isdigit(static_cast<unsigned char>(c))) digit = true;
        else if (c != '.' && c != ',' && c != '-' && c != '%') return false;
    }
    return digit;
}

inline std::string scale_numeric_token(const std::string& core, double factor) {
    std::string digits;
    bool percent = core.size() && core.back() == '%';
    int decimals = -1;
    for (char c : core) {
        if (c == ',') continue;
        if (c == '%') continue;
        if (c == '.') { decimals = 0; digits += c; continue; }
        if (decimals >= 0 && std::isdigit(static_cast<unsigned char>(c))) ++decimals;
        digits += c;
    }
    double v = std::strtod(digits.c_str(), nullptr) * factor;
    char buf[64];
    if (decimals < 0)
        std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(std::llround(v)));
    else
        std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    std::string out = buf;
    if (percent) out += '%';
    return out;
}

inline std::string extract_between(const std::string& s, const std::string& a,
                                   const std::string& b) {
    auto i = s.find(a);
    if (i == std::string::npos) return {};
    i += a.size();
    auto j = s.find(b, i);
    if (j == std::string::npos) return s.substr(i);
    return s.substr(i, j - i);
}

}  // namespace detail

inline int lexicon_score(const std::string& text) {
    int score = 0;
    for (const std::string& tok : detail::split_words(text)) {
        std::string pre, core, post;
        detail::split_punct(tok, pre, core, post);
        std::string w = detail::lower_word(core);
        for (const auto& [pos, neg] : polarity_table()) {
            if (w == pos) ++score;
            else if (w == neg) --score;
        }
    }
    return score;
}

/// Offline deterministic backend. Behavior, by template:
///   summarization  -> the first `max_output_words` words of the input text;
///   sentiment      -> 5 + clamp(lexicon score, -5, +5);
///   counterfactual -> numeric tokens scaled by (1 + 0.05*(target-current)),
///                     lexicon words swapped along the polarity table when the
///                     target lies on the other side of neutral.
class StubBackend : public TextGenBackend {
public:
    std::string identity() const override { return "stub/deterministic-v1"; }

    std::string complete(const std::string& prompt, int max_output_words,
                         double /*temperature*/) override {
        if (prompt.rfind("You are given chunk ", 0) == 0) {
            std::string body = detail::extract_between(
                prompt, "is as follows:\n", "\nPlease provide a concise summary");
            return detail::first_n_words(body, max_output_words);
        }
        if (prompt.rfind("You are given ", 0) == 0 &&
            prompt.find("summaries of different chunks") != std::string::npos) {
            std::string body = detail::extract_between(
                prompt, "The chunk summaries are as follows:\n",
                "\nPlease provide a comprehensive summary");
            return detail::first_n_words(body, max_output_words);
        }
        if (prompt.rfind("Please analyze the sentiment", 0) == 0) {
            std::string body =
                detail::extract_between(prompt, " summary: ", "\nOutput the sentiment");
            int rating = 5 + std::clamp(lexicon_score(body), -5, 5);
            return "Sentiment rating: " + std::to_string(rating) +
                   ", Explanation: lexicon score " + std::to_string(lexicon_score(body));
        }
        if (prompt.rfind("The original text has been identified", 0) == 0) {
            int current = 0, target = 0;
            std::sscanf(prompt.c_str(),
                        "The original text has been identified with a sentiment rating "
                        "of %d",
                        &current);
            auto tpos = prompt.find("aligns with a sentiment rating of ");
            if (tpos != std::string::npos)
                std::sscanf(prompt.c_str() + tpos,
                            "aligns with a sentiment rating of %d", &target);
            std::string body = detail::extract_between(prompt, "Original text: ",
                                                       "\nCounterfactual text");
            return rewrite(body, current, target);
        }
        throw GenerationError("stub backend: unrecognized prompt template");
    }

private:
    static std::string rewrite(const std::string& text, int current, int target) {
        double factor = 1.0 + 0.05 * double(target - current);
        bool to_positive = target > 5, to_negative = target < 5;
        std::ostringstream os;
        bool first = true;
        for (const std::string& tok : detail::split_words(text)) {
            std::string pre, core, post;
            detail::split_punct(tok, pre, core, post);
            std::string out = core;
            if (detail::is_numeric_token(core)) {
                out = detail::scale_numeric_token(core, factor);
            } else {
                std::string w = detail::lower_word(core);
                for (const auto& [pos, neg] : polarity_table()) {
                    if (to_negative && w == pos) out = neg;
                    else if (to_positive && w == neg) out = pos;
                }
            }
            os << (first ? "" : " ") << pre << out << post;
            first = false;
        }
        return os.str();
    }
};

// ---- HTTP backend ----------------------------------------------------------

/// Remote endpoint accepting {prompt, max_tokens, temperature} JSON.
/// URL and credential come from CF_BACKEND_URL / CF_BACKEND_KEY. Three
/// attempts with exponential backoff starting at one second.
class HttpBackend : public TextGenBackend {
public:
    HttpBackend();  // defined in httpgen.hpp to keep httplib out of this header

    explicit HttpBackend(std::string url, std::string key, std::string model_tag = "remote")
        : url_(std::move(url)), key_(std::move(key)), model_tag_(std::move(model_tag)) {}

    std::string identity() const override { return "http/" + model_tag_; }
    std::string complete(const std::string& prompt, int max_output_words,
                         double temperature) override;

    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};

private:
    std::string url_, key_, model_tag_;
};

// ---- records ---------------------------------------------------------------

struct Provenance {
    std::string backend;
    std::string template_version = kPromptTemplateVersion;
    int original_sentiment = 5;
};

struct CounterfactualRecord {
    std::string parent_event_id;
    int target_sentiment = 0;  // 0..10, never equal to the factual rating
    std::string text;
    Provenance provenance;
};

struct CounterfactualSet {
    std::string event_id;
    std::vector<CounterfactualRecord> identical_type;  // default 10
    std::vector<std::string> diverse_type;  // 5 event ids of distinct other types
};

// ---- operations ------------------------------------------------------------

struct SummarizeConfig {
    int chunk_words = 500;
    int summary_words = 200;
};

/// Splits the script into ceil(words / chunk_words) chunks, summarizes each
/// with the chunk prompt, and combines with the final prompt when there is
/// more than one chunk.
inline std::string chunk_and_summarize(const EventScript& script, int chunk_words,
                                       int summary_words, TextGenBackend& backend) {
    if (chunk_words < 100) throw ConfigError("chunk-words must be >= 100");
    if (summary_words < 50) throw ConfigError("summary-words must be >= 50");
    auto words = detail::split_words(script.text);
    std::size_t n_chunks = std::max<std::size_t>(
        1, (words.size() + std::size_t(chunk_words) - 1) / std::size_t(chunk_words));
    std::vector<std::string> summaries;
    for (std::size_t ci = 0; ci < n_chunks; ++ci) {
        std::ostringstream chunk;
        for (std::size_t w = ci * std::size_t(chunk_words);
             w < std::min(words.size(), (ci + 1) * std::size_t(chunk_words)); ++w)
            chunk << (w == ci * std::size_t(chunk_words) ? "" : " ") << words[w];
        std::string prompt = render_chunk_summary_prompt(
            int(ci) + 1, display_name(script.type), summary_words, chunk.str());
        try {
            summaries.push_back(backend.complete(prompt, summary_words, 0.7));
        } catch (const Error& e) {
            throw GenerationError("summarization failed at chunk " +
                                  std::to_string(ci + 1) + ": " + e.what());
        }
    }
    if (summaries.size() == 1) return summaries.front();
    std::ostringstream joined;
    for (std::size_t i = 0; i < summaries.size(); ++i)
        joined << (i ? "\n" : "") << summaries[i];
    std::string prompt = render_final_summary_prompt(
        int(summaries.size()), display_name(script.type), summary_words, joined.str());
    try {
        return backend.complete(prompt, summary_words, 0.7);
    } catch (const Error& e) {
        throw GenerationError(std::string("final summarization failed: ") + e.what());
    }
}

/// Parses `Sentiment rating: <n>` out of the backend response.
inline int rate_sentiment(const std::string& summary, EventType text_type,
                          TextGenBackend& backend) {
    if (summary.empty()) throw ContractError("rate_sentiment: empty summary");
    std::string prompt = render_sentiment_prompt(display_name(text_type), summary);
    std::string response = backend.complete(prompt, 100, 0.0);
    auto pos = response.find("Sentiment rating:");
    int n = -1;
    if (pos == std::string::npos ||
        std::sscanf(response.c_str() + pos, "Sentiment rating: %d", &n) != 1)
        throw ParseError("no sentiment rating in response: " + response);
    if (n < 0 || n > 10)
        throw RangeError("sentiment rating " + std::to_string(n) +
                         " outside [0,10] in response: " + response);
    return n;
}

inline CounterfactualRecord generate_counterfactual(const std::string& summary,
                                                    int current, int target,
                                                    TextGenBackend& backend,
                                                    const std::string& parent_id = {}) {
    if (current < 0 || current > 10 || target < 0 || target > 10)
        throw RangeError("sentiment ratings must be in [0,10]");
    if (current == target)
        throw ContractError("counterfactual target equals current rating " +
                            std::to_string(current));
    std::string prompt = render_counterfactual_prompt(current, target, summary);
    std::string text = backend.complete(prompt, 2 * int(detail::split_words(summary).size()) + 50, 0.7);
    if (text.empty()) throw GenerationError("empty counterfactual output for target " +
                                            std::to_string(target));
    CounterfactualRecord rec;
    rec.parent_event_id = parent_id;
    rec.target_sentiment = target;
    rec.text = text;
    rec.provenance = {backend.identity(), kPromptTemplateVersion, current};
    return rec;
}

struct AugmentResult {
    std::vector<CounterfactualRecord> records;
    std::vector<std::string> failures;  // "target N: message"
};

/// One counterfactual per target rating in {0..10} minus the factual rating.
inline AugmentResult augment_event(const EventScript& script, TextGenBackend& backend,
                                   const SummarizeConfig& cfg = {}) {
    std::string summary =
        chunk_and_summarize(script, cfg.chunk_words, cfg.summary_words, backend);
    int rating = script.sentiment ? *script.sentiment
                                  : rate_sentiment(summary, script.type, backend);
    AugmentResult result;
    for (int target = 0; target <= 10; ++target) {
        if (target == rating) continue;
        try {
            result.records.push_back(
                generate_counterfactual(summary, rating, target, backend, script.id));
        } catch (const Error& e) {
            result.failures.push_back("target " + std::to_string(target) + ": " + e.what());
        }
    }
    return result;
}

/// Identical-type: the event's own counterfactuals, first n by target rating
/// ascending. Diverse-type: per other event type, the registry event closest
/// in release time; ties go to the earlier event.
inline CounterfactualSet sample_counterfactuals(
    const EventScript& event, const std::vector<EventScript>& registry,
    const std::vector<CounterfactualRecord>& cf_store, std::size_t n_identical = 10) {
    CounterfactualSet set;
    set.event_id = event.id;
    std::vector<CounterfactualRecord> own;
    for (const auto& rec : cf_store)
        if (rec.parent_event_id == event.id) own.push_back(rec);
    std::sort(own.begin(), own.end(),
              [](const CounterfactualRecord& a, const CounterfactualRecord& b) {
                  return a.target_sentiment < b.target_sentiment;
              });
    if (own.size() < n_identical)
        throw SamplingError("event " + event.id + " has " + std::to_string(own.size()) +
                            " counterfactuals, need " + std::to_string(n_identical));
    own.resize(n_identical);
    set.identical_type = std::move(own);

    for (EventType type : corpus::all_event_types()) {
        if (type == event.type) continue;
        const EventScript* best = nullptr;
        std::int64_t best_dt = 0;
        for (const auto& other : registry) {
            if (other.type != type) continue;
            std::int64_t dt = std::llabs(other.timestamp - event.timestamp);
            if (!best || dt < best_dt ||
                (dt == best_dt && other.timestamp < best->timestamp)) {
                best = &other;
                best_dt = dt;
            }
        }
        if (!best)
            throw SamplingError(std::string("no registry event of type ") +
                                corpus::to_string(type));
        set.diverse_type.push_back(best->id);
    }
    return set;
}

// ---- persistence -----------------------------------------------------------

inline nlohmann::json to_json(const CounterfactualRecord& r) {
    return {{"parent_event_id", r.parent_event_id},
            {"target_sentiment", r.target_sentiment},
            {"text", r.text},
            {"provenance",
             {{"backend", r.provenance.backend},
              {"template_version", r.provenance.template_version},
              {"original_sentiment", r.provenance.original_sentiment}}}};
}

inline CounterfactualRecord record_from_json(const nlohmann::json& j) {
    CounterfactualRecord r;
    r.parent_event_id = j.at("parent_event_id").get<std::string>();
    r.target_sentiment = j.at("target_sentiment").get<int>();
    r.text = j.at("text").get<std::string>();
    const auto& p = j.at("provenance");
    r.provenance.backend = p.at("backend").get<std::string>();
    r.provenance.template_version = p.at("template_version").get<std::string>();
    r.provenance.original_sentiment = p.at("original_sentiment").get<int>();
    if (r.target_sentiment < 0 || r.target_sentiment > 10)
        throw RangeError("target sentiment out of range");
    if (r.text.empty()) throw ParseError("empty counterfactual text");
    return r;
}

inline void write_counterfactuals_jsonl(const std::string& path,
                                        const std::vector<CounterfactualRecord>& recs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    for (const auto& r : recs) out << to_json(r).dump() << "\n";
}

inline std::vector<CounterfactualRecord> read_counterfactuals_jsonl(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open counterfactuals file: " + path);
    std::vector<CounterfactualRecord> recs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        recs.push_back(record_from_json(nlohmann::json::parse(line)));
    }
    return recs;
}

}  // namespace camef::cf
