#pragma once
// Tie-aware ranking metrics. Competition ranking ("1224") keeps ties as
// blocks; MTRR and TMHits@10 are the tie-corrected counterparts of MRR and
// MHits@10 and collapse to them when every score is distinct.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grag/common.hpp"
#include "json.hpp"

namespace grag {

struct ScoreVector {
    std::string question_id;
    std::map<std::string, double> scores;  // doc_id -> s_i, complete over retrieved docs
};

struct RankEntry {
    std::string doc_id;
    double score = 0.0;
    std::size_t rank = 0;       // optimistic: 1 + #strictly higher
    std::size_t tie_count = 0;  // block size, includes the document itself
};

struct TiedRanking {
    std::string question_id;
    std::vector<RankEntry> entries;  // sorted by doc_id

    const RankEntry& at(const std::string& doc_id) const {
        for (const auto& e : entries)
            if (e.doc_id == doc_id) return e;
        throw Error(ErrorKind::UnknownDocId, "doc '" + doc_id + "' not in ranking");
    }
};

inline TiedRanking ranks_from_scores(const ScoreVector& sv) {
    for (const auto& [id, s] : sv.scores)
        if (!std::isfinite(s))
            throw Error(ErrorKind::NonFiniteScore, "doc '" + id + "' scored " + std::to_string(s));
    std::map<double, std::size_t, std::greater<double>> block;  // score -> size, descending
    for (const auto& [id, s] : sv.scores) ++block[s];
    std::map<double, std::pair<std::size_t, std::size_t>> rank_of;  // score -> (rank, t)
    std::size_t above = 0;
    for (const auto& [s, c] : block) {
        rank_of[s] = {above + 1, c};
        above += c;
    }
    TiedRanking tr;
    tr.question_id = sv.question_id;
    for (const auto& [id, s] : sv.scores) {
        auto [r, t] = rank_of[s];
        tr.entries.push_back({id, s, r, t});
    }
    return tr;
}

// ---------------------------------------------------------------------------
// Per-positive terms. For a positive at optimistic rank r in a tie block of
// size t, the docs strictly above always form whole blocks, so their total
// count is exactly r - 1.

// reciprocal of the mean of the possible ranks {r, ..., r+t-1}
inline double mtrr_term(std::size_t r, std::size_t t) {
    if (t == 1) return 1.0 / static_cast<double>(r);
    return 2.0 / static_cast<double>(2 * r + t - 1);
}

// expected top-k membership under uniform ordering within the block:
// min(t, max(0, k + 1 - r)) / t
inline double tmhits_term_at(std::size_t r, std::size_t t, std::size_t k) {
    if (r > k) return 0.0;
    std::size_t slots = k + 1 - r;  // top-k slots left after the blocks above
    return static_cast<double>(std::min(t, slots)) / static_cast<double>(t);
}

inline double tmhits10_term(std::size_t r, std::size_t t) { return tmhits_term_at(r, t, 10); }

struct QuestionEval {
    double mrr = 0.0;
    double mhits10 = 0.0;
    double mtrr = 0.0;
    double tmhits10 = 0.0;
    std::size_t positive_count = 0;
};

// positives must all appear in the ranking; metrics average over them
inline QuestionEval eval_question(const TiedRanking& ranking,
                                  const std::set<std::string>& positives) {
    QuestionEval q;
    for (const auto& doc_id : positives) {
        const RankEntry& e = ranking.at(doc_id);
        q.mrr += 1.0 / static_cast<double>(e.rank);
        q.mhits10 += e.rank <= 10 ? 1.0 : 0.0;
        q.mtrr += mtrr_term(e.rank, e.tie_count);
        q.tmhits10 += tmhits10_term(e.rank, e.tie_count);
        ++q.positive_count;
    }
    if (q.positive_count > 0) {
        double n = static_cast<double>(q.positive_count);
        q.mrr /= n;
        q.mhits10 /= n;
        q.mtrr /= n;
        q.tmhits10 /= n;
    }
    return q;
}

struct EvalReport {
    double mrr = 0.0;
    double mhits10 = 0.0;
    double mtrr = 0.0;
    double tmhits10 = 0.0;
    std::size_t question_count = 0;       // questions entering the means
    std::size_t skipped_no_positive = 0;  // excluded for lack of positives
    double positives_per_question = 0.0;
    std::vector<std::pair<std::string, QuestionEval>> per_question;  // sorted by question_id
};

// scores: one vector per question; qrels: question_id -> positive doc_ids.
// Questions with no positives are excluded from every mean but counted.
// A qrels question absent from the scores is an error, as is a positive doc
// missing from its question's score vector.
inline EvalReport evaluate(const std::vector<ScoreVector>& scores,
                           const std::map<std::string, std::set<std::string>>& qrels) {
    std::set<std::string> scored;
    for (const auto& sv : scores) scored.insert(sv.question_id);
    for (const auto& [qid, docs] : qrels)
        if (!docs.empty() && !scored.count(qid))
            throw Error(ErrorKind::MissingQuestion, "qrels question '" + qid + "' has no scores");

    std::vector<const ScoreVector*> order;
    for (const auto& sv : scores) order.push_back(&sv);
    std::sort(order.begin(), order.end(),
              [](const ScoreVector* a, const ScoreVector* b) {
                  return a->question_id < b->question_id;
              });

    EvalReport rep;
    std::size_t total_pos = 0;
    for (const ScoreVector* sv : order) {
        auto it = qrels.find(sv->question_id);
        if (it == qrels.end() || it->second.empty()) {
            ++rep.skipped_no_positive;
            continue;
        }
        QuestionEval q = eval_question(ranks_from_scores(*sv), it->second);
        rep.mrr += q.mrr;
        rep.mhits10 += q.mhits10;
        rep.mtrr += q.mtrr;
        rep.tmhits10 += q.tmhits10;
        total_pos += q.positive_count;
        ++rep.question_count;
        rep.per_question.emplace_back(sv->question_id, q);
    }
    if (rep.question_count > 0) {
        double n = static_cast<double>(rep.question_count);
        rep.mrr /= n;
        rep.mhits10 /= n;
        rep.mtrr /= n;
        rep.tmhits10 /= n;
        rep.positives_per_question = static_cast<double>(total_pos) / n;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// TSV formats. Scores: question_id \t doc_id \t score. Qrels:
// question_id \t doc_id \t 1.

namespace detail {

inline std::vector<std::string> tsv_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

}  // namespace detail

inline std::vector<ScoreVector> load_scores_tsv(std::istream& in) {
    std::map<std::string, ScoreVector> by_q;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = detail::tsv_fields(line);
        if (f.size() != 3)
            throw Error(ErrorKind::MalformedLine,
                        "scores line " + std::to_string(line_no) + ": expected 3 fields");
        double s;
        try {
            std::size_t used = 0;
            s = std::stod(f[2], &used);
            if (used != f[2].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw Error(ErrorKind::MalformedLine,
                        "scores line " + std::to_string(line_no) + ": bad score '" + f[2] + "'");
        }
        if (!std::isfinite(s))
            throw Error(ErrorKind::NonFiniteScore,
                        "scores line " + std::to_string(line_no) + ": non-finite score");
        ScoreVector& sv = by_q[f[0]];
        sv.question_id = f[0];
        if (!sv.scores.emplace(f[1], s).second)
            throw Error(ErrorKind::DuplicateDocId, "scores line " + std::to_string(line_no) +
                                                       ": doc '" + f[1] + "' repeated");
    }
    std::vector<ScoreVector> out;
    for (auto& [qid, sv] : by_q) out.push_back(std::move(sv));
    return out;
}

inline std::map<std::string, std::set<std::string>> load_qrels_tsv(std::istream& in) {
    std::map<std::string, std::set<std::string>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = detail::tsv_fields(line);
        if (f.size() != 3 || f[2] != "1")
            throw Error(ErrorKind::MalformedLine,
                        "qrels line " + std::to_string(line_no) + ": expected 'qid\\tdocid\\t1'");
        out[f[0]].insert(f[1]);
    }
    return out;
}

inline void save_scores_tsv(std::ostream& out, const std::vector<ScoreVector>& scores) {
    std::vector<const ScoreVector*> order;
    for (const auto& sv : scores) order.push_back(&sv);
    std::sort(order.begin(), order.end(),
              [](const ScoreVector* a, const ScoreVector* b) {
                  return a->question_id < b->question_id;
              });
    out << std::setprecision(17);
    for (const ScoreVector* sv : order)
        for (const auto& [doc_id, s] : sv->scores)
            out << sv->question_id << '\t' << doc_id << '\t' << s << '\n';
}

inline EvalReport eval_scores_file(const std::string& scores_path, const std::string& qrels_path) {
    std::ifstream sf(scores_path);
    if (!sf) throw Error(ErrorKind::IoError, "cannot read '" + scores_path + "'");
    std::ifstream qf(qrels_path);
    if (!qf) throw Error(ErrorKind::IoError, "cannot read '" + qrels_path + "'");
    return evaluate(load_scores_tsv(sf), load_qrels_tsv(qf));
}

// ---------------------------------------------------------------------------
// Report rendering

inline nlohmann::json report_to_json(const EvalReport& rep) {
    nlohmann::json per_q = nlohmann::json::array();
    for (const auto& [qid, q] : rep.per_question)
        per_q.push_back({{"question_id", qid},
                         {"mrr", q.mrr},
                         {"mhits10", q.mhits10},
                         {"mtrr", q.mtrr},
                         {"tmhits10", q.tmhits10},
                         {"positives", q.positive_count}});
    return {{"mrr", rep.mrr},
            {"mhits10", rep.mhits10},
            {"mtrr", rep.mtrr},
            {"tmhits10", rep.tmhits10},
            {"questions", rep.question_count},
            {"skipped_no_positive", rep.skipped_no_positive},
            {"positives_per_question", rep.positives_per_question},
            {"per_question", per_q}};
}

inline std::string report_table(const EvalReport& rep) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << std::left << std::setw(12) << "metric" << std::right << std::setw(8) << "value"
        << "\n";
    out << std::left << std::setw(12) << "MRR" << std::right << std::setw(8) << rep.mrr << "\n";
    out << std::left << std::setw(12) << "MHits@10" << std::right << std::setw(8) << rep.mhits10
        << "\n";
    out << std::left << std::setw(12) << "MTRR" << std::right << std::setw(8) << rep.mtrr << "\n";
    out << std::left << std::setw(12) << "TMHits@10" << std::right << std::setw(8) << rep.tmhits10
        << "\n";
    out << "questions: " << rep.question_count << "  skipped (no positives): "
        << rep.skipped_no_positive << "  positives/question: " << std::setprecision(2)
        << rep.positives_per_question << "\n";
    return out.str();
}

}  // namespace grag
