#pragma once

// cpp-httplib transport for OpenAiProvider. HTTPS requires building with OpenSSL
// (CPPHTTPLIB_OPENSSL_SUPPORT), which the mn CLI target enables.

#include <chrono>
#include <memory>
#include <string>

#include <httplib.h>

#include "mn/openai_provider.hpp"

namespace mn {

class HttplibTransport : public HttpTransport {
  public:
    HttplibTransport(const std::string &base_url, double timeout_seconds) {
        // Split "https://host:port/v1" into the origin and the path prefix.
        auto scheme_end = base_url.find("://");
        auto path_start = base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
        origin_ = base_url.substr(0, path_start);
        if (path_start != std::string::npos) prefix_ = base_url.substr(path_start);
        while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
        timeout_ = std::chrono::milliseconds(static_cast<long long>(timeout_seconds * 1000));
    }

    HttpResponse post_json(const std::string &path, const std::string &body, const Headers &headers) override {
        httplib::Headers h;
        std::string content_type = "application/json";
        for (const auto &[k, v] : headers) {
            if (k == "Content-Type")
                content_type = v;
            else
                h.emplace(k, v);
        }
        // One client per request: httplib clients are not safe for concurrent use.
        httplib::Client client(origin_);
        client.set_connection_timeout(timeout_);
        client.set_read_timeout(timeout_);
        client.set_write_timeout(timeout_);
        auto res = client.Post(prefix_ + path, h, body, content_type);
        if (!res) return HttpResponse{0, "", httplib::to_string(res.error())};
        return HttpResponse{res->status, res->body, ""};
    }

  private:
    std::string origin_;
    std::string prefix_;
    std::chrono::milliseconds timeout_{60000};
};

inline std::shared_ptr<Provider> make_http_provider(const ProviderConfig &cfg) {
    auto transport = std::make_shared<HttplibTransport>(cfg.base_url, cfg.timeout_seconds);
    return std::make_shared<OpenAiProvider>(cfg, transport);
}

} // namespace mn
