#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace keyscore {

/// A remote provider address, e.g. `http://127.0.0.1:8088`.
struct HttpEndpoint {
    std::string base_url;
    double timeout_seconds = 60.0;
    std::optional<std::string> bearer_token;
};

/// POSTs `body` as JSON and returns the parsed JSON response. Throws
/// TransportError: status 0 for connection failures and timeouts, retryable for
/// those and for 429/5xx responses.
nlohmann::json post_json(const HttpEndpoint& endpoint, const std::string& path, const nlohmann::json& body);

}  // namespace keyscore
