#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <thread>

#include "refuel/genio.hpp"
#include "refuel/roundtrip.hpp"

using namespace refuel;
using namespace std::chrono_literals;

namespace {

const std::string kPrompt = "What's the most points scored in an NBA game?";
const std::string kQ1 = "What's the most points scored in an NBA game by combined team?";
const std::string kQ3 = "What's the most points scored in an NBA game by an individual?";

std::vector<corpus::Passage> passages() {
    corpus::Passage p;
    p.id = "nba_0";
    p.title = "NBA records";
    p.text = "The highest-scoring game ended 186-184.";
    p.token_count = 5;
    return {p};
}

genio::TableBackend nba_table() { return genio::TableBackend::load(REFUEL_FIXTURES "/nba_table.json"); }

// Serves a fixed status and body for every POST /generate and counts hits.
class StubServer {
  public:
    StubServer(int status, std::string body) {
        server_.Post("/generate", [this, status, body](const httplib::Request&, httplib::Response& rs) {
            ++hits;
            rs.status = status;
            rs.set_content(body, "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
    std::atomic<int> hits{0};

  private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

genio::RemoteConfig config_for(const std::string& endpoint) {
    genio::RemoteConfig cfg;
    cfg.endpoint = endpoint;
    cfg.timeout = 2000ms;
    cfg.initial_backoff = 1ms;
    return cfg;
}

}  // namespace

TEST_CASE("table backend answers the NBA prompt") {
    auto t = nba_table();
    auto ps = passages();
    CHECK(genio::predict_answers(t, kPrompt, ps) == std::vector<std::string>{"370", "186", "100"});
    CHECK(genio::predict_answers(t, "what's the MOST points scored in an nba game", ps).size() == 3);
    CHECK(genio::predict_answers(t, "Who was the first man on the moon?", ps).size() == 1);
    CHECK(genio::predict_answers(t, kPrompt, ps, 3).size() == 3);
    CHECK_THROWS_AS(genio::predict_answers(t, "unknown question", ps), genio::FixtureError);
    CHECK_THROWS_AS(genio::predict_answers(t, kPrompt, {}), genio::GeneratorError);
    CHECK_THROWS_AS(genio::predict_answers(t, kPrompt, ps, 0), genio::GeneratorError);
}

TEST_CASE("table backend disambiguates") {
    auto t = nba_table();
    auto ps = passages();
    CHECK(genio::disambiguate(t, kPrompt, "100", ps) == kQ3);
    CHECK(genio::disambiguate(t, kPrompt, "370", ps) == kQ1);
    CHECK_THROWS_AS(genio::disambiguate(t, kPrompt, "42", ps), genio::FixtureError);
    CHECK_THROWS_AS(genio::disambiguate(t, kPrompt, "", ps), genio::GeneratorError);
}

TEST_CASE("table backend scores answers") {
    auto t = nba_table();
    auto ps = passages();
    auto one = genio::score_answer(t, kQ1, ps, "370");
    CHECK(one.tokens == std::vector<std::string>{"370"});
    CHECK(one.log_probs == std::vector<double>{-0.5});
    auto three = genio::score_answer(t, kQ3, ps, "100");
    CHECK(three.tokens.size() == 3);
    CHECK(three.log_probs.size() == 3);

    double sum = 0;
    for (double lp : three.log_probs) sum += lp;
    CHECK(three.sum_log_probs() == sum);
    CHECK(roundtrip::lm_score({kQ3, "100", 0, std::nullopt}, ps, t) == doctest::Approx(-sum));
    CHECK_THROWS_AS(genio::score_answer(t, kQ1, ps, "186"), genio::FixtureError);
}

TEST_CASE("token scores validation") {
    CHECK_THROWS_AS((genio::TokenScores{{"a", "b"}, {-1.0}}.validate()), genio::GeneratorError);
    CHECK_THROWS_AS((genio::TokenScores{{"a"}, {0.25}}.validate()), genio::GeneratorError);
    CHECK_NOTHROW((genio::TokenScores{{"a"}, {0.0}}.validate()));
}

TEST_CASE("table backend is pure") {
    auto t = nba_table();
    auto ps = passages();
    for (int i = 0; i < 5; ++i) {
        CHECK(genio::predict_answers(t, kPrompt, ps) == genio::predict_answers(t, kPrompt, ps));
        CHECK(genio::score_answer(t, kQ3, ps, "100") == genio::score_answer(t, kQ3, ps, "100"));
    }
}

TEST_CASE("predict wrapper removes normalized duplicates in order") {
    genio::TableBackend t;
    t.add_answers("q", {"The Beatles", "beatles", "Rolling Stones", "the beatles!", "rolling stones"});
    CHECK(genio::predict_answers(t, "q", passages()) == std::vector<std::string>{"The Beatles", "Rolling Stones"});
    t.add_answers("empty", {"the", "?"});
    CHECK_THROWS_AS(genio::predict_answers(t, "empty", passages()), genio::GeneratorError);
}

TEST_CASE("fixture file errors") {
    CHECK_THROWS_AS(genio::TableBackend::from_json("{not json"), genio::FixtureError);
    CHECK_THROWS_AS(genio::TableBackend::from_json(R"({"predict": [{"question": "q", "answers": []}]})"),
                    genio::FixtureError);
    CHECK_THROWS_AS(genio::TableBackend::load("/nonexistent/table.json"), genio::FixtureError);
}

TEST_CASE("wire codec round-trips") {
    genio::GeneratorRequest req;
    req.mode = genio::Mode::disambiguate;
    req.question = "who?";
    req.answer = "me";
    req.passages = passages();
    req.min_answers = 2;
    auto body = genio::encode_request(req);
    auto back = genio::decode_request(body);
    CHECK(genio::encode_request(back) == body);
    CHECK(back.answer == req.answer);
    CHECK(back.min_answers == req.min_answers);
    REQUIRE(back.passages.size() == 1);
    CHECK(back.passages[0].text == req.passages[0].text);

    genio::GeneratorRequest bare;
    bare.question = "q";
    auto bare_body = genio::encode_request(bare);
    CHECK(genio::encode_request(genio::decode_request(bare_body)) == bare_body);

    const std::vector<std::pair<genio::Mode, genio::GeneratorResponse>> responses{
        {genio::Mode::predict_answers, genio::AnswerList{{"370", "186"}}},
        {genio::Mode::disambiguate, genio::DisambiguatedQuestion{"which one?"}},
        {genio::Mode::score_answer, genio::TokenScores{{"1", "0"}, {-0.25, -1.5}}},
    };
    for (const auto& [mode, resp] : responses) {
        auto text = genio::encode_response(resp);
        auto parsed = genio::decode_response(mode, text);
        CHECK(parsed == resp);
        CHECK(genio::encode_response(parsed) == text);
    }
}

TEST_CASE("wire codec rejects malformed payloads") {
    CHECK_THROWS_AS(genio::decode_request("nope"), genio::ProtocolError);
    CHECK_THROWS_AS(genio::decode_request(R"({"mode": "sing", "question": "q", "passages": []})"),
                    genio::ProtocolError);
    CHECK_THROWS_AS(genio::decode_request(R"({"mode": "score_answer", "question": "q", "passages": []})"),
                    genio::ProtocolError);
    try {
        genio::decode_response(genio::Mode::predict_answers, R"({"answers": "370"})");
        FAIL("expected a protocol error");
    } catch (const genio::ProtocolError& e) {
        CHECK(e.raw_payload() == R"({"answers": "370"})");
    }
}

TEST_CASE("remote backend over loopback matches the table") {
    auto t = nba_table();
    genio::GeneratorServer server(t);
    server.start();
    genio::RemoteBackend remote(config_for(server.endpoint()));
    auto ps = passages();
    CHECK(genio::predict_answers(remote, kPrompt, ps) == genio::predict_answers(t, kPrompt, ps));
    CHECK(genio::disambiguate(remote, kPrompt, "100", ps) == kQ3);
    CHECK(genio::score_answer(remote, kQ3, ps, "100") == genio::score_answer(t, kQ3, ps, "100"));

    try {
        genio::disambiguate(remote, kPrompt, "42", ps);
        FAIL("expected a remote error");
    } catch (const genio::RemoteError& e) {
        CHECK(e.status() == 404);
    }

    std::vector<std::thread> workers;
    std::atomic<int> ok{0};
    for (int i = 0; i < 16; ++i) {
        workers.emplace_back([&] {
            if (genio::predict_answers(remote, kPrompt, ps).size() == 3) ++ok;
        });
    }
    for (auto& w : workers) w.join();
    CHECK(ok == 16);
}

TEST_CASE("remote backend failure modes") {
    auto ps = passages();
    SUBCASE("malformed body is a protocol error with the raw payload") {
        StubServer stub(200, "<html>oops</html>");
        genio::RemoteBackend remote(config_for(stub.endpoint()));
        try {
            genio::predict_answers(remote, kPrompt, ps);
            FAIL("expected a protocol error");
        } catch (const genio::ProtocolError& e) {
            CHECK(e.raw_payload() == "<html>oops</html>");
        }
        CHECK(stub.hits == 1);
    }
    SUBCASE("5xx is retried three times then reported as transport error") {
        StubServer stub(503, R"({"error": "busy"})");
        genio::RemoteBackend remote(config_for(stub.endpoint()));
        CHECK_THROWS_AS(genio::predict_answers(remote, kPrompt, ps), genio::TransportError);
        CHECK(stub.hits == 3);
    }
    SUBCASE("4xx is not retried") {
        StubServer stub(400, R"({"error": "bad request"})");
        genio::RemoteBackend remote(config_for(stub.endpoint()));
        CHECK_THROWS_AS(genio::predict_answers(remote, kPrompt, ps), genio::RemoteError);
        CHECK(stub.hits == 1);
    }
    SUBCASE("timeout of zero") {
        auto cfg = config_for("http://127.0.0.1:9");
        cfg.timeout = 0ms;
        genio::RemoteBackend remote(cfg);
        CHECK_THROWS_AS(genio::predict_answers(remote, kPrompt, ps), genio::TransportError);
    }
    SUBCASE("unreachable endpoint") {
        int port = 0;
        {
            StubServer closed(200, "{}");
            port = std::stoi(closed.endpoint().substr(closed.endpoint().rfind(':') + 1));
        }
        genio::RemoteBackend remote(config_for("http://127.0.0.1:" + std::to_string(port)));
        CHECK_THROWS_AS(genio::predict_answers(remote, kPrompt, ps), genio::TransportError);
    }
}

TEST_CASE("backend specs") {
    CHECK(dynamic_cast<genio::TableBackend*>(genio::make_backend("table:" REFUEL_FIXTURES "/nba_table.json").get()));
    CHECK(dynamic_cast<genio::RemoteBackend*>(genio::make_backend("remote:http://127.0.0.1:1").get()));
    CHECK_THROWS_AS(genio::make_backend("gpu:0"), std::invalid_argument);
    CHECK_THROWS_AS(genio::make_backend("nocolon"), std::invalid_argument);
}
