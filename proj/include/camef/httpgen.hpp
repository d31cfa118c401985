#pragma once

// HTTP text-generation backend. Kept separate so that library users who only
// need the stub backend never pull in the socket layer.

#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "camef/counterfactual.hpp"

namespace camef::cf {

inline HttpBackend::HttpBackend() {
    const char* url = std::getenv("CF_BACKEND_URL");
    if (!url || !*url) throw ConfigError("CF_BACKEND_URL is not set");
    url_ = url;
    const char* key = std::getenv("CF_BACKEND_KEY");
    key_ = key ? key : "";
    model_tag_ = "remote";
}

inline std::string HttpBackend::complete(const std::string& prompt, int max_output_words,
                                         double temperature) {
    // Split scheme://host[:port]/path.
    auto scheme_end = url_.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("backend URL missing scheme: " + url_);
    auto path_start = url_.find('/', scheme_end + 3);
    std::string base = path_start == std::string::npos ? url_ : url_.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : url_.substr(path_start);

    nlohmann::json body{{"prompt", prompt},
                        {"max_tokens", max_output_words},
                        {"temperature", temperature}};
    std::string last_error;
    auto backoff = initial_backoff;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        if (attempt) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
        httplib::Client client(base);
        client.set_read_timeout(120, 0);
        httplib::Headers headers;
        if (!key_.empty()) headers.emplace("Authorization", "Bearer " + key_);
        auto res = client.Post(path, headers, body.dump(), "application/json");
        if (!res) {
            last_error = "transport error " + httplib::to_string(res.error());
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            last_error = "status " + std::to_string(res->status);
            continue;
        }
        auto parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_object() && parsed.contains("text"))
            return parsed.at("text").get<std::string>();
        return res->body;
    }
    throw GenerationError("backend request failed after " + std::to_string(max_attempts) +
                          " attempts: " + last_error);
}

}  // namespace camef::cf
