#include "keyscore/http.hpp"

#include <httplib.h>

#include "keyscore/errors.hpp"

namespace keyscore {

nlohmann::json post_json(const HttpEndpoint& endpoint, const std::string& path, const nlohmann::json& body) {
    httplib::Client client(endpoint.base_url);
    if (!client.is_valid()) throw TransportError("invalid endpoint URL " + endpoint.base_url, 0, false);
    const auto secs = static_cast<time_t>(endpoint.timeout_seconds);
    const auto usecs = static_cast<time_t>((endpoint.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (endpoint.bearer_token) headers.emplace("Authorization", "Bearer " + *endpoint.bearer_token);

    auto res = client.Post(path, headers, body.dump(), "application/json");
    const std::string where = endpoint.base_url + path;
    if (!res) {
        const auto err = res.error();
        if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
            throw TransportError("timeout calling " + where, 0, true);
        throw TransportError("request to " + where + " failed: " + httplib::to_string(err), 0, true);
    }
    if (res->status != 200) {
        const bool retryable = res->status == 429 || res->status >= 500;
        throw TransportError("HTTP " + std::to_string(res->status) + " from " + where, res->status, retryable);
    }
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
        throw TransportError("non-JSON response from " + where, res->status, false);
    }
}

}  // namespace keyscore
