#pragma once

#include <stdexcept>
#include <string>

#include <httplib.h>
// httplib drags in <resolv.h>, whose _res macro mangles Eigen parameter names.
#ifdef _res
#undef _res
#endif

#include <json.hpp>

#include "unlearn/eval.hpp"

namespace unlearn {

// Raised whenever the external judge cannot produce a verdict; never mapped
// silently to category 0.
struct judge_unavailable_error : std::runtime_error {
    explicit judge_unavailable_error(const std::string& why)
        : std::runtime_error("judge unavailable: " + why) {}
};

// POST {base_url}/judge with {prompt, references, completion}; expects
// {category: 0..3, evidence: [string]}.
inline JudgeVerdict judge_completion_http(const std::string& base_url, const std::string& completion,
                                          const CompletionPrompt& prompt, int timeout_seconds = 10) {
    httplib::Client client(base_url);
    client.set_connection_timeout(timeout_seconds, 0);
    client.set_read_timeout(timeout_seconds, 0);
    client.set_write_timeout(timeout_seconds, 0);

    nlohmann::ordered_json body;
    body["prompt"] = prompt.prompt;
    body["references"] = prompt.references;
    body["completion"] = completion;

    httplib::Result res = client.Post("/judge", body.dump(), "application/json");
    if (!res) throw judge_unavailable_error(httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw judge_unavailable_error("HTTP status " + std::to_string(res->status));

    try {
        nlohmann::json j = nlohmann::json::parse(res->body);
        JudgeVerdict verdict;
        verdict.category = j.at("category").get<int>();
        verdict.evidence = j.at("evidence").get<std::vector<std::string>>();
        if (verdict.category < 0 || verdict.category > 3)
            throw std::runtime_error("category out of range");
        if (verdict.category == 3 && verdict.evidence.empty())
            throw std::runtime_error("category 3 requires evidence");
        return verdict;
    } catch (const judge_unavailable_error&) {
        throw;
    } catch (const std::exception& e) {
        throw judge_unavailable_error(std::string("malformed response: ") + e.what());
    }
}

}  // namespace unlearn
