#include <algorithm>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "refuel/genio.hpp"

namespace refuel::genio {

namespace {

std::ptrdiff_t clamp_in_flight(std::size_t n) {
    return static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(n, 1, 1024));
}

// Splits "http://host:port/prefix" into ("http://host:port", "/prefix/generate").
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    auto scheme = endpoint.find("://");
    if (scheme == std::string::npos) throw std::invalid_argument("endpoint needs a scheme: " + endpoint);
    auto slash = endpoint.find('/', scheme + 3);
    std::string base = slash == std::string::npos ? endpoint : endpoint.substr(0, slash);
    std::string prefix = slash == std::string::npos ? std::string{} : endpoint.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {base, prefix + "/generate"};
}

bool is_transient_status(int status) { return status >= 500 || status == 429 || status == 408; }

struct SemaphoreGuard {
    std::counting_semaphore<1024>& sem;
    explicit SemaphoreGuard(std::counting_semaphore<1024>& s) : sem(s) { sem.acquire(); }
    ~SemaphoreGuard() { sem.release(); }
};

std::string error_message(const std::string& body) {
    try {
        auto j = nlohmann::json::parse(body);
        if (j.is_object() && j.contains("error") && j["error"].is_string()) return j["error"].get<std::string>();
    } catch (const nlohmann::json::exception&) {
    }
    return body;
}

}  // namespace

RemoteBackend::RemoteBackend(RemoteConfig cfg)
    : cfg_(std::move(cfg)), in_flight_(clamp_in_flight(cfg_.max_in_flight)) {
    auto [base, path] = split_endpoint(cfg_.endpoint);
    host_base_ = std::move(base);
    path_ = std::move(path);
    if (cfg_.max_attempts < 1) throw std::invalid_argument("max_attempts must be at least 1");
}

RemoteBackend::~RemoteBackend() = default;

GeneratorResponse RemoteBackend::call(const GeneratorRequest& req) const {
    req.validate();
    if (cfg_.timeout <= std::chrono::milliseconds::zero()) {
        throw TransportError("request to " + cfg_.endpoint + " timed out: deadline of " +
                             std::to_string(cfg_.timeout.count()) + " ms leaves no time to send");
    }
    const std::string body = encode_request(req);
    SemaphoreGuard guard(in_flight_);

    std::string last_failure;
    auto backoff = cfg_.initial_backoff;
    for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
        httplib::Client client(host_base_);
        client.set_connection_timeout(cfg_.timeout);
        client.set_read_timeout(cfg_.timeout);
        client.set_write_timeout(cfg_.timeout);
        auto res = client.Post(path_, body, "application/json");
        if (!res) {
            last_failure = httplib::to_string(res.error());
        } else if (is_transient_status(res->status)) {
            last_failure = "HTTP " + std::to_string(res->status) + ": " + error_message(res->body);
        } else if (res->status >= 400) {
            throw RemoteError(res->status, "generator rejected request (HTTP " + std::to_string(res->status) +
                                               "): " + error_message(res->body));
        } else {
            return decode_response(req.mode, res->body);
        }
        if (attempt < cfg_.max_attempts) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }
    throw TransportError("request to " + cfg_.endpoint + " failed after " + std::to_string(cfg_.max_attempts) +
                         " attempts: " + last_failure);
}

std::vector<std::string> RemoteBackend::predict_answers(const std::string& question,
                                                        std::span<const corpus::Passage> passages,
                                                        std::optional<int> min_answers) const {
    GeneratorRequest req{Mode::predict_answers, question, std::nullopt, {passages.begin(), passages.end()}, min_answers};
    return std::get<AnswerList>(call(req)).answers;
}

std::string RemoteBackend::disambiguate(const std::string& prompt_question, const std::string& answer,
                                        std::span<const corpus::Passage> passages) const {
    GeneratorRequest req{Mode::disambiguate, prompt_question, answer, {passages.begin(), passages.end()}, std::nullopt};
    return std::get<DisambiguatedQuestion>(call(req)).question;
}

TokenScores RemoteBackend::score_answer(const std::string& question, std::span<const corpus::Passage> passages,
                                        const std::string& answer) const {
    GeneratorRequest req{Mode::score_answer, question, answer, {passages.begin(), passages.end()}, std::nullopt};
    return std::get<TokenScores>(call(req));
}

struct GeneratorServer::Impl {
    const Generator& backend;
    httplib::Server server;
    std::thread thread;
    int port = -1;

    explicit Impl(const Generator& b) : backend(b) {
        server.Post("/generate", [this](const httplib::Request& rq, httplib::Response& rs) {
            auto reply = [&](int status, std::string body) {
                rs.status = status;
                rs.set_content(std::move(body), "application/json");
            };
            try {
                reply(200, encode_response(serve(backend, decode_request(rq.body))));
            } catch (const ProtocolError& e) {
                reply(400, encode_error(e.what()));
            } catch (const FixtureError& e) {
                reply(404, encode_error(e.what()));
            } catch (const GeneratorError& e) {
                reply(422, encode_error(e.what()));
            } catch (const std::exception& e) {
                reply(500, encode_error(e.what()));
            }
        });
    }
};

GeneratorServer::GeneratorServer(const Generator& backend) : impl_(std::make_unique<Impl>(backend)) {}

GeneratorServer::~GeneratorServer() { stop(); }

int GeneratorServer::start(int port) {
    if (impl_->thread.joinable()) return impl_->port;
    if (port == 0) {
        impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
    } else if (impl_->server.bind_to_port("127.0.0.1", port)) {
        impl_->port = port;
    }
    if (impl_->port <= 0) throw TransportError("cannot bind generator server on 127.0.0.1");
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return impl_->port;
}

void GeneratorServer::stop() {
    if (!impl_ || !impl_->thread.joinable()) return;
    impl_->server.stop();
    impl_->thread.join();
}

std::string GeneratorServer::endpoint() const { return "http://127.0.0.1:" + std::to_string(impl_->port); }

}  // namespace refuel::genio
