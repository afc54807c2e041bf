#include "conformgen/llm_gateway.hpp"
#include "conformgen/text.hpp"
#include "support.hpp"

#include "doctest.h"
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <algorithm>
#include <thread>

using namespace conformgen;
using conformgen::test::ScriptedBackend;
using conformgen::test::TempDir;

TEST_SUITE("text")
{
    TEST_CASE("whitespace helpers")
    {
        CHECK(text::collapse_whitespace("  a \t b\n\nc  ") == "a b c");
        CHECK(text::trim("  x y ") == "x y");
        CHECK(text::split_lines("a\nb\n") == std::vector<std::string>{"a", "b"});
        CHECK(text::split_lines("a\n\nb") == std::vector<std::string>{"a", "", "b"});
        CHECK(text::tokens("Router-ID: 10.0.0.1!") == std::vector<std::string>{"router", "id", "10", "0", "0", "1"});
        CHECK(text::normalize_newlines("a\r\nb\rc") == "a\nb\nc");
        CHECK(text::leading_spaces("   x") == 3);
        CHECK(text::is_blank(" \t"));
    }

    TEST_CASE("section ordering is numeric then appendix")
    {
        std::vector<std::string> v = {"10", "A.1", "2.10", "2.9", "B", "A", "9", "2"};
        std::sort(v.begin(), v.end(), [](const std::string& a, const std::string& b) { return text::section_less(a, b); });
        CHECK(v == std::vector<std::string>{"2", "2.9", "2.10", "9", "10", "A", "A.1", "B"});
    }

    TEST_CASE("sha256 known vectors")
    {
        CHECK(text::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        CHECK(text::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    TEST_CASE("format_number round-trips")
    {
        CHECK(text::format_number(85.0) == "85");
        CHECK(text::format_number(73.8) == "73.8");
    }
}

TEST_SUITE("gateway")
{
    TEST_CASE("template slots and literal braces")
    {
        llm::PromptTemplate t("t", "Hello {name}; {{literal}} {\"k\": 1}");
        CHECK(t.required_slots() == std::set<std::string>{"name"});
        CHECK(t.render({{"name", "R1"}}) == "Hello R1; {literal} {\"k\": 1}");
        CHECK_THROWS_AS(t.render({}), Error);
        try {
            t.render({});
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::MissingSlot);
            CHECK(e.subject() == "name");
        }
    }

    TEST_CASE("every shipped prompt starts with its task line")
    {
        int n = 0;
        for (const auto& path : embedded_data_paths()) {
            if (path.rfind("prompts/", 0) != 0)
                continue;
            auto id = std::filesystem::path(path).stem().string();
            auto t = llm::PromptTemplate::load(id);
            CHECK_MESSAGE(t.body().rfind("### TASK: " + id + "\n", 0) == 0, id);
            ++n;
        }
        CHECK(n == 16);
    }

    TEST_CASE("schema subset")
    {
        auto schema = Json::parse(R"({"type":"object","required":["a","b"],"properties":{
            "a":{"type":"integer","minimum":0,"maximum":5},
            "b":{"type":"array","minItems":1,"items":{"type":"string","enum":["x","y"]}}}})");
        CHECK(llm::validate(Json::parse(R"({"a":3,"b":["x"],"extra":true})"), schema).empty());
        CHECK(llm::validate(Json::parse(R"({"a":9,"b":[]})"), schema).size() == 2);
        CHECK(llm::validate(Json::parse(R"({"b":["z"]})"), schema).size() == 2);
        CHECK(llm::validate(Json::parse(R"({"a":1.5,"b":["x"]})"), schema).size() == 1);
    }

    TEST_CASE("extract_json tolerates fences and prose")
    {
        CHECK(llm::extract_json("```json\n{\"a\": 1}\n```")->at("a") == 1);
        CHECK(llm::extract_json("Sure! Here it is: {\"a\": {\"b\": [1, 2]}} Hope that helps.")->at("a").at("b").size() == 2);
        CHECK_FALSE(llm::extract_json("no json here").has_value());
    }

    TEST_CASE("structured completion repairs then succeeds")
    {
        auto backend = std::make_shared<ScriptedBackend>(std::vector<std::string>{"oops", R"({"a": "str"})", R"({"a": 2})"});
        llm::Gateway gw(backend, 3);
        auto schema = Json::parse(R"({"type":"object","required":["a"],"properties":{"a":{"type":"integer"}}})");
        auto r = gw.complete_structured("P", schema);
        CHECK(r.value.at("a") == 2);
        CHECK(r.repairs == 2);
        CHECK(r.calls == 3);
        REQUIRE(backend->prompts.size() == 3);
        CHECK(backend->prompts[0] == "P");
        CHECK(backend->prompts[2].find("validation_feedback") != std::string::npos);
        CHECK(backend->prompts[2].find("$.a") != std::string::npos);
    }

    TEST_CASE("structured completion gives up after max_repairs")
    {
        auto backend = std::make_shared<ScriptedBackend>(std::vector<std::string>{"x", "y", "z"});
        llm::Gateway gw(backend, 3);
        try {
            gw.complete_structured("P", Json::parse(R"({"type":"object"})"), 1);
            FAIL("expected SchemaViolation");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::SchemaViolation);
        }
        CHECK(gw.calls() == 2);
    }

    TEST_CASE("extra validator participates in repair")
    {
        auto backend = std::make_shared<ScriptedBackend>(std::vector<std::string>{R"({"n": 1})", R"({"n": 2})"});
        llm::Gateway gw(backend);
        auto extra = [](const Json& v) {
            return v.at("n") == 2 ? std::vector<std::string>{} : std::vector<std::string>{"n must be 2"};
        };
        auto r = gw.complete_structured("P", Json::parse(R"({"type":"object"})"), std::nullopt, extra);
        CHECK(r.value.at("n") == 2);
        CHECK(r.repairs == 1);
    }

    TEST_CASE("record then replay serves duplicates in order")
    {
        TempDir tmp;
        int n = 0;
        auto inner = std::make_shared<llm::CallbackBackend>([&](const std::string& p) { return p + "#" + std::to_string(++n); });
        {
            llm::RecordingBackend rec(inner, tmp / "t.jsonl");
            CHECK(rec.complete("same") == "same#1");
            CHECK(rec.complete("other") == "other#2");
            CHECK(rec.complete("same") == "same#3");
        }
        auto replay = llm::ReplayBackend::from_file(tmp / "t.jsonl");
        CHECK(replay->remaining() == 3);
        CHECK(replay->complete("same") == "same#1");
        CHECK(replay->complete("  same ") == "same#3");
        CHECK(replay->complete("other") == "other#2");
        try {
            replay->complete("same");
            FAIL("expected ReplayMiss");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::ReplayMiss);
        }
        CHECK_THROWS_AS(replay->complete("never seen"), Error);
    }

    TEST_CASE("request hash ignores whitespace layout")
    {
        CHECK(llm::request_hash("a  b\nc") == llm::request_hash("a b c"));
        CHECK(llm::request_hash("a b") != llm::request_hash("a c"));
    }

    TEST_CASE("backend descriptor validation")
    {
        llm::BackendDescriptor d;
        d.mode = llm::BackendMode::replay;
        CHECK_THROWS_AS(llm::make_backend(d), Error);
        d.mode = llm::BackendMode::live;
        CHECK_THROWS_AS(llm::make_backend(d), Error);
        CHECK_THROWS_AS(llm::backend_mode_from_string("bogus"), Error);
        auto j = Json::parse(R"({"mode":"record","transcript_path":"x.jsonl","model_name":"m"})");
        auto parsed = llm::BackendDescriptor::from_json(j);
        CHECK(parsed.mode == llm::BackendMode::record);
        CHECK(parsed.model_name == "m");
        CHECK(parsed.api_key_env == "CONFORMGEN_API_KEY");
    }

    TEST_CASE("chat backend request and response shape")
    {
        auto body = llm::HttpChatBackend::request_body("m1", "hello", 0.0);
        CHECK(body.at("model") == "m1");
        CHECK(body.at("messages").at(0).at("role") == "user");
        CHECK(body.at("messages").at(0).at("content") == "hello");
        CHECK(llm::HttpChatBackend::parse_response(R"({"choices":[{"message":{"content":"hi"}}]})") == "hi");
        CHECK_THROWS_AS(llm::HttpChatBackend::parse_response(R"({"error":"x"})"), Error);
    }

    TEST_CASE("chat backend against a local server")
    {
        httplib::Server server;
        std::string seen_auth;
        server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
            seen_auth = req.get_header_value("Authorization");
            auto j = Json::parse(req.body);
            Json reply = {{"choices", Json::array({{{"message", {{"content", "echo: " + j["messages"][0]["content"].get<std::string>()}}}}})}};
            res.set_content(reply.dump(), "application/json");
        });
        int port = server.bind_to_any_port("127.0.0.1");
        std::thread t([&] { server.listen_after_bind(); });
        server.wait_until_ready();
        llm::HttpChatBackend be("http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions", "m", 0.0, "k123");
        CHECK(be.complete("ping") == "echo: ping");
        CHECK(seen_auth == "Bearer k123");
        server.stop();
        t.join();
        CHECK_THROWS_AS(be.complete("ping"), Error);
    }
}
