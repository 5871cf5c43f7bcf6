#pragma once
// Separable synthetic corpus: every question carries a few keyword tokens and
// a planted answer token; positives repeat the keywords and the answer in both
// their text and their AMR path, negatives carry filler tokens only.

#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "grag/amr.hpp"
#include "grag/common.hpp"
#include "grag/dataset.hpp"

namespace grag {

struct SyntheticCorpus {
    std::vector<QuestionRecord> train, dev;
    std::vector<AmrGraph> amrs;  // one graph per (question, document)
};

namespace detail {

constexpr std::size_t kKeywordPool = 48;
constexpr std::size_t kFillerPool = 96;
constexpr std::size_t kKeywordsPerQuestion = 6;
constexpr std::size_t kFillersPerNegative = 6;
constexpr std::size_t kChainedFillers = 3;

inline std::string token_name(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%02zu", prefix, i);
    return buf;
}

// Chain AMR question -> t1 -> t2 -> ...; its single source path renders as
// "question t1 t2 ...".
inline AmrGraph chain_amr(const std::string& qid, const std::string& doc_id,
                          const std::vector<std::string>& tokens) {
    AmrGraph g;
    g.question_id = qid;
    g.doc_id = doc_id;
    g.nodes.push_back({"n0", "question"});
    for (std::size_t i = 0; i < tokens.size(); ++i)
        g.nodes.push_back({"n" + std::to_string(i + 1), tokens[i]});
    for (std::size_t i = 0; i + 1 < g.nodes.size(); ++i)
        g.edges.push_back({g.nodes[i].id, "step", g.nodes[i + 1].id});
    return g;
}

inline void gen_question(std::uint64_t seed, const std::string& qid, std::size_t docs_per_q,
                         std::size_t positives_per_q, SyntheticCorpus& out,
                         std::vector<QuestionRecord>& split) {
    Rng rng(derive_seed(seed, "synth", qid, 0));

    std::vector<std::string> keywords;
    for (std::size_t i : rng.sample_indices(kKeywordPool, kKeywordsPerQuestion))
        keywords.push_back(token_name("kw", i));
    const std::string answer = "ans-" + qid;

    std::string qtext;
    for (const auto& k : keywords) qtext += (qtext.empty() ? "" : " ") + k;

    struct Draft {
        std::string text;
        bool positive;
        std::vector<std::string> chain;
    };
    std::vector<Draft> drafts;
    for (std::size_t p = 0; p < positives_per_q; ++p) {
        Draft d;
        d.positive = true;
        d.text = qtext + " " + answer;
        d.chain = keywords;
        d.chain.push_back(answer);
        drafts.push_back(std::move(d));
    }
    for (std::size_t n = positives_per_q; n < docs_per_q; ++n) {
        Draft d;
        d.positive = false;
        std::vector<std::string> fillers;
        for (std::size_t i : rng.sample_indices(kFillerPool, kFillersPerNegative))
            fillers.push_back(token_name("f", i));
        for (const auto& f : fillers) d.text += (d.text.empty() ? "" : " ") + f;
        d.chain.assign(fillers.begin(), fillers.begin() + kChainedFillers);
        drafts.push_back(std::move(d));
    }
    rng.shuffle(drafts);

    QuestionRecord rec;
    rec.question_id = qid;
    rec.question_text = qtext;
    for (std::size_t i = 0; i < drafts.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "d%02zu", i);
        rec.docs.push_back({buf, drafts[i].text, drafts[i].positive});
        out.amrs.push_back(chain_amr(qid, buf, drafts[i].chain));
    }
    rec.validate();
    split.push_back(std::move(rec));
}

}  // namespace detail

inline SyntheticCorpus gen_synthetic(std::uint64_t seed, std::size_t n_train, std::size_t n_dev,
                                     std::size_t docs_per_q, std::size_t positives_per_q = 2) {
    if (docs_per_q == 0 || docs_per_q > 100)
        throw Error(ErrorKind::InvalidConfig, "docs_per_q must be in [1, 100]");
    if (positives_per_q == 0 || positives_per_q > docs_per_q)
        throw Error(ErrorKind::InvalidConfig, "positives_per_q must be in [1, docs_per_q]");
    SyntheticCorpus out;
    for (std::size_t i = 0; i < n_train; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "train-%04zu", i);
        detail::gen_question(seed, buf, docs_per_q, positives_per_q, out, out.train);
    }
    for (std::size_t i = 0; i < n_dev; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "dev-%04zu", i);
        detail::gen_question(seed, buf, docs_per_q, positives_per_q, out, out.dev);
    }
    return out;
}

inline void save_qrels_tsv(std::ostream& out,
                           const std::map<std::string, std::set<std::string>>& qrels) {
    for (const auto& [qid, docs] : qrels)
        for (const auto& d : docs) out << qid << "\t" << d << "\t1\n";
}

}  // namespace grag
