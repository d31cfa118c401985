#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "camef/common.hpp"
#include "camef/timeutil.hpp"

namespace camef::corpus {

// ---- event taxonomy -------------------------------------------------------

enum class EventType {
    FOMC,
    UnemploymentInsuranceClaims,
    EmploymentSituation,
    GDPAdvance,
    CPIReport,
    PPIReport,
};

inline constexpr int kEventTypeCount = 6;

inline const char* to_string(EventType t) {
    switch (t) {
        case EventType::FOMC: return "FOMC";
        case EventType::UnemploymentInsuranceClaims: return "UnemploymentInsuranceClaims";
        case EventType::EmploymentSituation: return "EmploymentSituation";
        case EventType::GDPAdvance: return "GDPAdvance";
        case EventType::CPIReport: return "CPIReport";
        case EventType::PPIReport: return "PPIReport";
    }
    throw ContractError("invalid event type value");
}

inline EventType event_type_from_string(const std::string& s) {
    for (int i = 0; i < kEventTypeCount; ++i) {
        auto t = static_cast<EventType>(i);
        if (s == to_string(t)) return t;
    }
    throw ParseError("unknown event type: " + s);
}

inline std::vector<EventType> all_event_types() {
    std::vector<EventType> v;
    for (int i = 0; i < kEventTypeCount; ++i) v.push_back(static_cast<EventType>(i));
    return v;
}

enum class RawFormat { Html, PdfText, Txt };

inline const char* to_string(RawFormat f) {
    switch (f) {
        case RawFormat::Html: return "html";
        case RawFormat::PdfText: return "pdf-text";
        case RawFormat::Txt: return "txt";
    }
    throw ContractError("invalid raw format value");
}

inline RawFormat raw_format_from_string(const std::string& s) {
    if (s == "html") return RawFormat::Html;
    if (s == "pdf-text") return RawFormat::PdfText;
    if (s == "txt") return RawFormat::Txt;
    throw ConfigError("unknown raw format tag: " + s);
}

/// One macroeconomic release, normalized.
struct EventScript {
    std::string id;
    EventType type = EventType::FOMC;
    std::int64_t timestamp = 0;  // UTC epoch seconds
    RawFormat raw_format = RawFormat::Txt;
    std::string text;
    std::optional<int> sentiment;  // 0..10 when rated
};

inline constexpr std::int64_t kMinEventTime = 725846400;   // 1993-01-01T00:00:00Z
inline constexpr std::int64_t kMaxEventTime = 1735689600;  // 2025-01-01T00:00:00Z

// ---- pipe-delimited table serialization -----------------------------------

struct StructuredTable {
    std::vector<std::string> headers;
    std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline std::string escape_cell(const std::string& cell) {
    std::string out;
    out.reserve(cell.size());
    for (char c : cell) {
        if (c == '|') out += "\\|";
        else out += c;
    }
    return out;
}

inline std::vector<std::string> split_cells(const std::string& line) {
    // Delimiter is " | " with the pipe not preceded by a backslash.
    std::vector<std::string> cells;
    std::string cur;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (i + 2 < line.size() && line[i] == ' ' && line[i + 1] == '|' &&
            line[i + 2] == ' ' && (cur.empty() || cur.back() != '\\')) {
            cells.push_back(cur);
            cur.clear();
            i += 2;
        } else {
            cur += line[i];
        }
    }
    cells.push_back(cur);
    for (auto& c : cells) {
        std::string un;
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (c[i] == '\\' && i + 1 < c.size() && c[i + 1] == '|') {
                un += '|';
                ++i;
            } else {
                un += c[i];
            }
        }
        c = un;
    }
    return cells;
}

}  // namespace detail

/// Emit the unified `<Table>` block: header line, a `----` separator, one
/// line per row, cells joined by " | ". Pipes inside cells are escaped \|.
inline std::string serialize_table(const StructuredTable& table) {
    for (const auto& row : table.rows)
        if (row.size() != table.headers.size())
            throw FormatError("ragged table row: " + std::to_string(row.size()) +
                              " cells vs " + std::to_string(table.headers.size()) +
                              " headers");
    std::ostringstream os;
    os << "<Table>\n";
    for (std::size_t i = 0; i < table.headers.size(); ++i)
        os << (i ? " | " : "") << detail::escape_cell(table.headers[i]);
    os << "\n----\n";
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            os << (i ? " | " : "") << detail::escape_cell(row[i]);
        os << "\n";
    }
    os << "</Table>";
    return os.str();
}

/// Inverse of serialize_table for blocks whose cells are free of the literal
/// delimiter; together they round-trip escaped tables exactly.
inline StructuredTable parse_table(const std::string& block) {
    std::istringstream is(block);
    std::string line;
    if (!std::getline(is, line) || line != "<Table>")
        throw FormatError("table block must start with <Table>");
    StructuredTable t;
    if (!std::getline(is, line)) throw FormatError("missing table header line");
    t.headers = detail::split_cells(line);
    if (!std::getline(is, line) || line != "----")
        throw FormatError("missing ---- separator");
    while (std::getline(is, line)) {
        if (line == "</Table>") return t;
        t.rows.push_back(detail::split_cells(line));
    }
    throw FormatError("missing </Table> terminator");
}

// ---- whitespace normalization ---------------------------------------------

/// Idempotent cleanup: line endings to LF, runs of spaces/tabs collapsed,
/// trailing space stripped, at most one blank line in a row, document trimmed.
inline std::string normalize_whitespace(const std::string& in) {
    std::string text;
    text.reserve(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        char c = in[i];
        if (c == '\r') {
            if (i + 1 < in.size() && in[i + 1] == '\n') continue;
            text += '\n';
        } else {
            text += c;
        }
    }
    std::ostringstream out;
    std::istringstream is(text);
    std::string line;
    int blank_run = 0;
    bool any = false;
    while (std::getline(is, line)) {
        std::string collapsed;
        bool in_space = false;
        for (char c : line) {
            if (c == ' ' || c == '\t') {
                in_space = true;
            } else {
                if (in_space && !collapsed.empty()) collapsed += ' ';
                in_space = false;
                collapsed += c;
            }
        }
        if (collapsed.empty()) {
            ++blank_run;
            continue;
        }
        if (any) {
            out << '\n';
            if (blank_run > 0) out << '\n';
        }
        blank_run = 0;
        out << collapsed;
        any = true;
    }
    return out.str();
}

// ---- HTML to unified text --------------------------------------------------

namespace detail {

inline std::string decode_entities(const std::string& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '&') {
            auto semi = s.find(';', i);
            if (semi != std::string::npos && semi - i <= 8) {
                std::string ent = s.substr(i + 1, semi - i - 1);
                if (ent == "amp") { out += '&'; i = semi; continue; }
                if (ent == "lt") { out += '<'; i = semi; continue; }
                if (ent == "gt") { out += '>'; i = semi; continue; }
                if (ent == "quot") { out += '"'; i = semi; continue; }
                if (ent == "apos" || ent == "#39") { out += '\''; i = semi; continue; }
                if (ent == "nbsp" || ent == "#160") { out += ' '; i = semi; continue; }
                if (!ent.empty() && ent[0] == '#') {
                    int code = std::atoi(ent.c_str() + 1);
                    if (code > 0 && code < 128) { out += static_cast<char>(code); i = semi; continue; }
                }
            }
        }
        out += s[i];
    }
    return out;
}

inline std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline bool is_block_tag(const std::string& tag) {
    static const std::set<std::string> kBlocks = {
        "p", "div", "br", "li", "ul", "ol", "h1", "h2", "h3", "h4", "h5",
        "h6", "section", "article", "header", "footer", "blockquote", "pre"};
    return kBlocks.count(tag) != 0;
}

struct HtmlCursor {
    const std::string& src;
    std::size_t pos = 0;
    bool done() const { return pos >= src.size(); }
};

// Parses the subtree of a <table ...> element (cursor just past the open
// tag) into a StructuredTable. Nested markup inside cells is flattened.
inline StructuredTable parse_html_table(HtmlCursor& cur) {
    StructuredTable table;
    std::vector<std::vector<std::string>> all_rows;
    std::vector<std::string> row;
    std::string cell;
    bool in_cell = false, row_open = false, saw_th = false, header_done = false;
    int depth = 1;
    auto flush_cell = [&] {
        if (in_cell) {
            row.push_back(normalize_whitespace(decode_entities(cell)));
            cell.clear();
            in_cell = false;
        }
    };
    auto flush_row = [&] {
        flush_cell();
        if (row_open && !row.empty()) {
            if (!header_done && saw_th) {
                table.headers = row;
                header_done = true;
            } else {
                all_rows.push_back(row);
            }
        }
        row.clear();
        row_open = false;
        saw_th = false;
    };
    while (!cur.done()) {
        if (cur.src[cur.pos] == '<') {
            auto end = cur.src.find('>', cur.pos);
            if (end == std::string::npos) break;
            std::string raw = cur.src.substr(cur.pos + 1, end - cur.pos - 1);
            cur.pos = end + 1;
            bool closing = !raw.empty() && raw[0] == '/';
            std::string name = lower(raw.substr(closing ? 1 : 0));
            auto sp = name.find_first_of(" \t\n/");
            if (sp != std::string::npos) name = name.substr(0, sp);
            if (name == "table") {
                if (closing) {
                    if (--depth == 0) break;
                } else {
                    ++depth;  // nested tables are flattened into the outer one
                }
            } else if (name == "tr") {
                if (closing) flush_row();
                else { flush_row(); row_open = true; }
            } else if (name == "td" || name == "th") {
                if (closing) flush_cell();
                else {
                    flush_cell();
                    in_cell = true;
                    if (name == "th") saw_th = true;
                }
            }
        } else {
            if (in_cell) cell += cur.src[cur.pos];
            ++cur.pos;
        }
    }
    flush_row();
    if (table.headers.empty() && !all_rows.empty()) {
        table.headers = all_rows.front();
        all_rows.erase(all_rows.begin());
    }
    std::size_t width = table.headers.size();
    for (auto& r : all_rows) {
        if (width == 0) width = r.size();
        r.resize(width);
    }
    if (table.headers.size() < width) table.headers.resize(width);
    table.rows = std::move(all_rows);
    return table;
}

}  // namespace detail

/// Depth-first text extraction. <table> subtrees are replaced by their
/// serialize_table rendering. Literal `<Table>`...`</Table>` blocks (our own
/// serialization marker, exact case) pass through verbatim, which makes the
/// normalizer a fixed point on its own output.
inline std::string html_to_text(const std::string& html) {
    detail::HtmlCursor cur{html};
    std::ostringstream out;
    std::string skip_until;  // lowercase tag name whose close tag ends a skip
    while (!cur.done()) {
        if (html.compare(cur.pos, 7, "<Table>") == 0) {
            auto end = html.find("</Table>", cur.pos);
            if (end == std::string::npos) end = html.size();
            else end += 8;
            out << "\n" << html.substr(cur.pos, end - cur.pos) << "\n";
            cur.pos = end;
            continue;
        }
        char c = html[cur.pos];
        if (c == '<') {
            if (html.compare(cur.pos, 4, "<!--") == 0) {
                auto end = html.find("-->", cur.pos);
                cur.pos = end == std::string::npos ? html.size() : end + 3;
                continue;
            }
            auto end = html.find('>', cur.pos);
            if (end == std::string::npos) break;
            std::string raw = html.substr(cur.pos + 1, end - cur.pos - 1);
            cur.pos = end + 1;
            bool closing = !raw.empty() && raw[0] == '/';
            std::string name = detail::lower(raw.substr(closing ? 1 : 0));
            auto sp = name.find_first_of(" \t\n/");
            if (sp != std::string::npos) name = name.substr(0, sp);
            if (!skip_until.empty()) {
                if (closing && name == skip_until) skip_until.clear();
                continue;
            }
            if (!closing && (name == "script" || name == "style" || name == "title")) {
                skip_until = name;
            } else if (!closing && name == "table") {
                StructuredTable t = detail::parse_html_table(cur);
                out << "\n" << serialize_table(t) << "\n";
            } else if (detail::is_block_tag(name)) {
                out << "\n";
            }
        } else {
            if (skip_until.empty()) out << c;
            ++cur.pos;
        }
    }
    return detail::decode_entities(out.str());
}

/// Unified text normalization per raw-format tag.
inline std::string normalize_document(const std::string& blob, RawFormat format) {
    if (blob.empty()) throw IngestError("empty document");
    switch (format) {
        case RawFormat::Html:
            return normalize_whitespace(html_to_text(blob));
        case RawFormat::PdfText:
        case RawFormat::Txt:
            return normalize_whitespace(blob);
    }
    throw ConfigError("unknown raw format tag");
}

// ---- event records --------------------------------------------------------

struct EventMeta {
    std::string id;
    EventType type = EventType::FOMC;
    std::int64_t timestamp = 0;
    RawFormat raw_format = RawFormat::Txt;
};

inline EventScript parse_event(const std::string& text, const EventMeta& meta) {
    if (text.empty()) throw IngestError("empty event text for " + meta.id);
    if (meta.timestamp < kMinEventTime || meta.timestamp > kMaxEventTime)
        throw IngestError("timestamp out of range for " + meta.id + ": " +
                          timeutil::format_rfc3339(meta.timestamp));
    EventScript e;
    e.id = meta.id;
    e.type = meta.type;
    e.timestamp = meta.timestamp;
    e.raw_format = meta.raw_format;
    e.text = text;
    return e;
}

/// Release-calendar anchor for dates without an intraday time: 08:30 Eastern.
inline constexpr int kDefaultReleaseHour = 8;
inline constexpr int kDefaultReleaseMinute = 30;

/// Parses "YYYY-MM-DD" or "YYYY-MM-DD_HHMM" (Eastern wall clock) to UTC.
inline std::int64_t timestamp_from_stem(const std::string& stem) {
    int y, mo, d, h = kDefaultReleaseHour, mi = kDefaultReleaseMinute;
    if (stem.size() >= 15 && stem[10] == '_') {
        if (std::sscanf(stem.c_str(), "%d-%d-%d_%2d%2d", &y, &mo, &d, &h, &mi) != 5)
            throw IngestError("bad dated filename: " + stem);
    } else {
        if (std::sscanf(stem.c_str(), "%d-%d-%d", &y, &mo, &d) != 3)
            throw IngestError("bad dated filename: " + stem);
    }
    return timeutil::eastern_to_utc(y, mo, d, h, mi);
}

inline RawFormat format_from_extension(const std::filesystem::path& p) {
    std::string name = p.filename().string();
    if (name.size() > 8 && name.substr(name.size() - 8) == ".pdf.txt")
        return RawFormat::PdfText;
    std::string ext = p.extension().string();
    if (ext == ".html" || ext == ".htm") return RawFormat::Html;
    if (ext == ".txt") return RawFormat::Txt;
    throw ConfigError("unknown document extension: " + name);
}

struct IngestResult {
    std::vector<EventScript> events;
    std::vector<std::string> skipped;  // unreadable or malformed files
};

/// Walks archive/<event-type>/<YYYY-MM-DD[_HHMM]>.<ext>. Deterministic order:
/// types in enum order, files sorted by name.
inline IngestResult ingest_archive(const std::filesystem::path& archive_dir) {
    if (!std::filesystem::is_directory(archive_dir))
        throw IngestError("archive directory not found: " + archive_dir.string());
    IngestResult result;
    std::set<std::string> seen_ids;
    for (EventType type : all_event_types()) {
        std::filesystem::path type_dir = archive_dir / to_string(type);
        if (!std::filesystem::is_directory(type_dir)) continue;
        std::vector<std::filesystem::path> files;
        for (const auto& ent : std::filesystem::directory_iterator(type_dir))
            if (ent.is_regular_file()) files.push_back(ent.path());
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            try {
                RawFormat fmt = format_from_extension(file);
                std::ifstream in(file, std::ios::binary);
                std::ostringstream blob;
                blob << in.rdbuf();
                if (!in.good() && !in.eof())
                    throw IngestError("unreadable file: " + file.string());
                std::string stem = file.filename().string();
                stem = stem.substr(0, stem.find('.'));
                EventMeta meta;
                meta.id = std::string(to_string(type)) + "/" + stem;
                meta.type = type;
                meta.timestamp = timestamp_from_stem(stem);
                meta.raw_format = fmt;
                if (!seen_ids.insert(meta.id).second)
                    throw IngestError("duplicate event id: " + meta.id);
                result.events.push_back(
                    parse_event(normalize_document(blob.str(), fmt), meta));
            } catch (const Error& err) {
                result.skipped.push_back(file.string() + ": " + err.what());
            }
        }
    }
    return result;
}

// ---- JSONL persistence ----------------------------------------------------

inline nlohmann::json to_json(const EventScript& e) {
    nlohmann::json j{{"id", e.id},
                     {"type", to_string(e.type)},
                     {"timestamp", timeutil::format_rfc3339(e.timestamp)},
                     {"raw_format", to_string(e.raw_format)},
                     {"text", e.text}};
    if (e.sentiment) j["sentiment"] = *e.sentiment;
    return j;
}

inline EventScript event_from_json(const nlohmann::json& j) {
    EventScript e;
    e.id = j.at("id").get<std::string>();
    e.type = event_type_from_string(j.at("type").get<std::string>());
    e.timestamp = timeutil::parse_rfc3339(j.at("timestamp").get<std::string>());
    e.raw_format = raw_format_from_string(j.at("raw_format").get<std::string>());
    e.text = j.at("text").get<std::string>();
    if (j.contains("sentiment")) {
        int s = j.at("sentiment").get<int>();
        if (s < 0 || s > 10) throw RangeError("sentiment out of [0,10]: " + std::to_string(s));
        e.sentiment = s;
    }
    return e;
}

inline void write_events_jsonl(const std::string& path,
                               const std::vector<EventScript>& events) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    for (const auto& e : events) out << to_json(e).dump() << "\n";
}

inline std::vector<EventScript> read_events_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open events file: " + path);
    std::vector<EventScript> events;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        events.push_back(event_from_json(nlohmann::json::parse(line)));
    }
    return events;
}

}  // namespace camef::corpus
