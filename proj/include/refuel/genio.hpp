#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "refuel/corpus.hpp"

namespace refuel::genio {

class GeneratorError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// A table lookup missed, or a fixture file is inconsistent.
class FixtureError : public GeneratorError {
  public:
    using GeneratorError::GeneratorError;
};

// Connection refused, timed out, or kept failing with 5xx after all retries.
class TransportError : public GeneratorError {
  public:
    using GeneratorError::GeneratorError;
};

// The peer answered but the payload does not follow the wire protocol.
class ProtocolError : public GeneratorError {
  public:
    ProtocolError(const std::string& what, std::string raw_payload)
        : GeneratorError(what), raw_(std::move(raw_payload)) {}
    const std::string& raw_payload() const { return raw_; }

  private:
    std::string raw_;
};

// The server rejected the request (HTTP 4xx with {"error": ...}).
class RemoteError : public GeneratorError {
  public:
    RemoteError(int status, const std::string& what) : GeneratorError(what), status_(status) {}
    int status() const { return status_; }

  private:
    int status_;
};

enum class Mode { predict_answers, disambiguate, score_answer };

std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view s);

struct TokenScores {
    std::vector<std::string> tokens;
    std::vector<double> log_probs;

    // Throws GeneratorError on length mismatch or any log_prob > 0.
    void validate() const;
    double sum_log_probs() const;

    bool operator==(const TokenScores&) const = default;
};

/// The three capabilities the pipeline asks of a generator. Implementations
/// must tolerate concurrent calls.
class Generator {
  public:
    virtual ~Generator() = default;

    virtual std::vector<std::string> predict_answers(const std::string& question,
                                                     std::span<const corpus::Passage> passages,
                                                     std::optional<int> min_answers) const = 0;
    virtual std::string disambiguate(const std::string& prompt_question, const std::string& answer,
                                     std::span<const corpus::Passage> passages) const = 0;
    virtual TokenScores score_answer(const std::string& question, std::span<const corpus::Passage> passages,
                                     const std::string& answer) const = 0;
};

// Contract-enforcing entry points used by the pipeline.

/// Backend answers in generation order with normalized duplicates removed;
/// throws GeneratorError if nothing survives.
std::vector<std::string> predict_answers(const Generator& backend, const std::string& question,
                                         std::span<const corpus::Passage> passages,
                                         std::optional<int> min_answers = std::nullopt);
std::string disambiguate(const Generator& backend, const std::string& prompt_question, const std::string& answer,
                         std::span<const corpus::Passage> passages);
TokenScores score_answer(const Generator& backend, const std::string& question,
                         std::span<const corpus::Passage> passages, const std::string& answer);

/// Deterministic lookup backend keyed by normalized strings. A missing key is
/// a FixtureError, never a default.
class TableBackend final : public Generator {
  public:
    void add_answers(const std::string& question, std::vector<std::string> answers);
    void add_question(const std::string& question, const std::string& answer, std::string disambiguated);
    void add_scores(const std::string& question, const std::string& answer, TokenScores scores);

    /// {"predict": [{"question", "answers"}], "disambiguate": [{"question",
    /// "answer", "disambiguated"}], "score": [{"question", "answer", "tokens",
    /// "log_probs"}]}; every section optional.
    static TableBackend from_json(std::string_view json_text);
    static TableBackend load(const std::filesystem::path& path);

    std::vector<std::string> predict_answers(const std::string& question, std::span<const corpus::Passage> passages,
                                             std::optional<int> min_answers) const override;
    std::string disambiguate(const std::string& prompt_question, const std::string& answer,
                             std::span<const corpus::Passage> passages) const override;
    TokenScores score_answer(const std::string& question, std::span<const corpus::Passage> passages,
                             const std::string& answer) const override;

  private:
    using PairKey = std::pair<std::string, std::string>;
    std::map<std::string, std::vector<std::string>> answers_;
    std::map<PairKey, std::string> questions_;
    std::map<PairKey, TokenScores> scores_;
};

// ---- wire protocol ----------------------------------------------------------

struct GeneratorRequest {
    Mode mode = Mode::predict_answers;
    std::string question;
    std::optional<std::string> answer;
    std::vector<corpus::Passage> passages;  // id, title, text travel on the wire
    std::optional<int> min_answers;

    // Throws ProtocolError when answer is missing for disambiguate/score_answer.
    void validate() const;
};

struct AnswerList {
    std::vector<std::string> answers;
    bool operator==(const AnswerList&) const = default;
};

struct DisambiguatedQuestion {
    std::string question;
    bool operator==(const DisambiguatedQuestion&) const = default;
};

using GeneratorResponse = std::variant<AnswerList, DisambiguatedQuestion, TokenScores>;

std::string encode_request(const GeneratorRequest& req);
GeneratorRequest decode_request(std::string_view body);
std::string encode_response(const GeneratorResponse& resp);
GeneratorResponse decode_response(Mode mode, std::string_view body);
std::string encode_error(std::string_view message);

/// Dispatches a request to a local generator.
GeneratorResponse serve(const Generator& backend, const GeneratorRequest& req);

struct RemoteConfig {
    std::string endpoint;  // http://host:port[/prefix]; requests go to <prefix>/generate
    std::chrono::milliseconds timeout{30000};
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{50};
    std::size_t max_in_flight = 8;
};

/// Generator reached over JSON/HTTP. Transient failures (connection errors,
/// timeouts, 5xx) are retried with doubling backoff up to max_attempts.
class RemoteBackend final : public Generator {
  public:
    explicit RemoteBackend(RemoteConfig cfg);
    ~RemoteBackend() override;

    RemoteBackend(const RemoteBackend&) = delete;
    RemoteBackend& operator=(const RemoteBackend&) = delete;

    GeneratorResponse call(const GeneratorRequest& req) const;

    std::vector<std::string> predict_answers(const std::string& question, std::span<const corpus::Passage> passages,
                                             std::optional<int> min_answers) const override;
    std::string disambiguate(const std::string& prompt_question, const std::string& answer,
                             std::span<const corpus::Passage> passages) const override;
    TokenScores score_answer(const std::string& question, std::span<const corpus::Passage> passages,
                             const std::string& answer) const override;

  private:
    RemoteConfig cfg_;
    std::string host_base_;  // scheme://host:port
    std::string path_;
    mutable std::counting_semaphore<1024> in_flight_;
};

inline GeneratorResponse remote_call(const RemoteBackend& backend, const GeneratorRequest& req) {
    return backend.call(req);
}

/// Serves a Generator over the wire protocol on 127.0.0.1. Used for loopback
/// tests and for exposing a table fixture to remote clients.
class GeneratorServer {
  public:
    explicit GeneratorServer(const Generator& backend);
    ~GeneratorServer();

    GeneratorServer(const GeneratorServer&) = delete;
    GeneratorServer& operator=(const GeneratorServer&) = delete;

    // Binds an ephemeral port when port == 0; returns the bound port.
    int start(int port = 0);
    void stop();
    std::string endpoint() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Parses "table:<path>" or "remote:<url>".
std::unique_ptr<Generator> make_backend(std::string_view spec, std::chrono::milliseconds timeout = std::chrono::seconds(30),
                                        std::size_t max_in_flight = 8);

}  // namespace refuel::genio
