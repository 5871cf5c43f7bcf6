#pragma once
// Question records: one question with its retrieved documents and
// positive/negative labels, serialized as JSONL.

#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "grag/common.hpp"
#include "grag/encoder.hpp"
#include "json.hpp"

namespace grag {

struct RetrievedDoc {
    std::string doc_id;
    std::string text;
    bool is_positive = false;
};

struct QuestionRecord {
    std::string question_id;
    std::string question_text;
    std::vector<RetrievedDoc> docs;

    void validate(std::size_t n_max = 100) const {
        if (docs.size() > n_max)
            throw Error(ErrorKind::SchemaViolation, "question '" + question_id + "' has " +
                                                        std::to_string(docs.size()) +
                                                        " docs, limit " + std::to_string(n_max));
        std::unordered_set<std::string> ids;
        for (const auto& d : docs)
            if (!ids.insert(d.doc_id).second)
                throw Error(ErrorKind::DuplicateDocId, "question '" + question_id + "': doc '" +
                                                           d.doc_id + "' appears twice");
    }

    std::vector<DocText> doc_texts() const {
        std::vector<DocText> out;
        for (const auto& d : docs) out.push_back({d.doc_id, d.text});
        return out;
    }

    std::set<std::string> positive_ids() const {
        std::set<std::string> out;
        for (const auto& d : docs)
            if (d.is_positive) out.insert(d.doc_id);
        return out;
    }
};

inline nlohmann::json question_to_json(const QuestionRecord& q) {
    nlohmann::json docs = nlohmann::json::array();
    for (const auto& d : q.docs)
        docs.push_back({{"doc_id", d.doc_id}, {"text", d.text}, {"is_positive", d.is_positive}});
    return {{"question_id", q.question_id}, {"question_text", q.question_text}, {"docs", docs}};
}

inline QuestionRecord question_from_json(const nlohmann::json& j, std::size_t line_no,
                                         std::size_t n_max = 100) {
    QuestionRecord q;
    try {
        q.question_id = j.at("question_id").get<std::string>();
        q.question_text = j.at("question_text").get<std::string>();
        for (const auto& d : j.at("docs"))
            q.docs.push_back({d.at("doc_id").get<std::string>(), d.at("text").get<std::string>(),
                              d.at("is_positive").get<bool>()});
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorKind::SchemaViolation,
                    "line " + std::to_string(line_no) + ": " + ex.what());
    }
    try {
        q.validate(n_max);
    } catch (const Error& ex) {
        throw Error(ex.kind(), "line " + std::to_string(line_no) + ": " + ex.what());
    }
    return q;
}

inline std::vector<QuestionRecord> load_dataset_jsonl(std::istream& in, std::size_t n_max = 100) {
    std::vector<QuestionRecord> out;
    std::unordered_set<std::string> qids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw Error(ErrorKind::MalformedLine, "line " + std::to_string(line_no) + ": not valid JSON");
        out.push_back(question_from_json(j, line_no, n_max));
        if (!qids.insert(out.back().question_id).second)
            throw Error(ErrorKind::SchemaViolation, "line " + std::to_string(line_no) +
                                                        ": question '" +
                                                        out.back().question_id + "' repeated");
    }
    return out;
}

inline void save_dataset_jsonl(std::ostream& out, const std::vector<QuestionRecord>& qs) {
    for (const auto& q : qs) out << question_to_json(q).dump() << "\n";
}

inline std::map<std::string, std::set<std::string>> qrels_from_dataset(
    const std::vector<QuestionRecord>& qs) {
    std::map<std::string, std::set<std::string>> out;
    for (const auto& q : qs) out[q.question_id] = q.positive_ids();
    return out;
}

}  // namespace grag
