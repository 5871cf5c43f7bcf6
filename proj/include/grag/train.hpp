#pragma once
// Training loop: decoupled-weight-decay adaptive moments, linear warmup,
// seeded epoch batching, parallel per-question gradients with fixed-order
// reduction, periodic dev evaluation, best-checkpoint tracking.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "grag/amr.hpp"
#include "grag/common.hpp"
#include "grag/dataset.hpp"
#include "grag/docgraph.hpp"
#include "grag/encoder.hpp"
#include "grag/gnn.hpp"
#include "grag/metrics.hpp"
#include "json.hpp"

namespace grag {

// ---------------------------------------------------------------------------
// Config

enum class LossFn { cross_entropy, pairwise_ranking };

inline const char* loss_fn_name(LossFn l) {
    return l == LossFn::cross_entropy ? "cross_entropy" : "pairwise_ranking";
}

inline LossFn loss_fn_from_name(const std::string& s) {
    if (s == "cross_entropy") return LossFn::cross_entropy;
    if (s == "pairwise_ranking") return LossFn::pairwise_ranking;
    throw Error(ErrorKind::InvalidConfig, "unknown loss '" + s + "'");
}

inline LossFn loss_for_strategy(Strategy s) {
    return uses_ranking_loss(s) ? LossFn::pairwise_ranking : LossFn::cross_entropy;
}

inline FeatureMode feature_mode_for_strategy(Strategy s) {
    return uses_amr_features(s) ? FeatureMode::amr_augmented : FeatureMode::baseline;
}

struct TrainConfig {
    double learning_rate = 1e-4;  // peak, after warmup
    std::size_t batch_size = 5;
    std::size_t warmup_steps = 1000;
    std::size_t total_steps = 50000;
    std::size_t eval_every = 10000;
    LossFn loss = LossFn::cross_entropy;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t pair_cap = 500;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0))
            throw Error(ErrorKind::InvalidConfig, "learning_rate must be positive");
        if (batch_size == 0) throw Error(ErrorKind::InvalidConfig, "batch_size must be positive");
        if (warmup_steps == 0)
            throw Error(ErrorKind::InvalidConfig, "warmup_steps must be positive");
        if (total_steps == 0) throw Error(ErrorKind::InvalidConfig, "total_steps must be positive");
        if (eval_every == 0) throw Error(ErrorKind::InvalidConfig, "eval_every must be positive");
        if (total_steps % eval_every != 0)
            throw Error(ErrorKind::InvalidConfig, "eval_every must divide total_steps");
        if (pair_cap == 0) throw Error(ErrorKind::InvalidConfig, "pair_cap must be positive");
        if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
            throw Error(ErrorKind::InvalidConfig, "betas must lie in (0, 1)");
        if (!(eps > 0.0)) throw Error(ErrorKind::InvalidConfig, "eps must be positive");
        if (weight_decay < 0.0)
            throw Error(ErrorKind::InvalidConfig, "weight_decay must be nonnegative");
    }
};

// Linear warmup to the peak rate; steps are 1-indexed.
inline double warmup_lr(double peak, std::size_t step, std::size_t warmup_steps) {
    if (warmup_steps == 0 || step >= warmup_steps) return peak;
    return peak * (static_cast<double>(step) / static_cast<double>(warmup_steps));
}

// ---------------------------------------------------------------------------
// Optimizer: adaptive moments with decoupled weight decay

class AdamW {
public:
    AdamW(const GcnModel& model, const TrainConfig& cfg)
        : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps), wd_(cfg.weight_decay) {
        for (const auto* blk : param_blocks(model)) {
            m_.emplace_back(blk->size(), 0.0);
            v_.emplace_back(blk->size(), 0.0);
        }
    }

    void update(GcnModel& model, const GcnGrads& grads, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        auto params = param_blocks(model);
        auto gs = grad_blocks(grads);
        for (std::size_t b = 0; b < params.size(); ++b) {
            for (std::size_t i = 0; i < params[b]->size(); ++i) {
                const double g = (*gs[b])[i];
                double& m = m_[b][i];
                double& v = v_[b][i];
                m = beta1_ * m + (1.0 - beta1_) * g;
                v = beta2_ * v + (1.0 - beta2_) * g * g;
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                double& p = (*params[b])[i];
                p -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p);
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

private:
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_, wd_;
    std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Per-question assembled inputs

struct QuestionData {
    std::string question_id;
    DocumentGraph graph;
    EmbeddingSet X;
    std::vector<char> labels;  // aligned with graph.doc_ids
    bool has_positive = false;
};

// Document graph with no edges at all, for runs without AMR input.
inline DocumentGraph edge_free_graph(const QuestionRecord& rec, NormMode mode) {
    DocumentGraph g;
    g.question_id = rec.question_id;
    g.norm_mode = mode;
    for (const auto& d : rec.docs) g.doc_ids.push_back(d.doc_id);
    g.neighbors.assign(g.doc_ids.size(), {});
    return g;
}

// Assembles graph + features + labels for one question. amr_by_doc may be
// empty only when the strategy neither passes messages nor augments features.
inline QuestionData make_question_data(const QuestionRecord& rec,
                                       const std::map<std::string, const AmrGraph*>& amr_by_doc,
                                       Strategy strategy, NormMode mode,
                                       bool exclude_question_concept, const HashEncoder& enc) {
    QuestionData q;
    q.question_id = rec.question_id;

    const bool needs_amr = uses_message_passing(strategy) || uses_amr_features(strategy);
    if (needs_amr) {
        std::vector<AmrGraph> amrs;
        for (const auto& d : rec.docs) {
            auto it = amr_by_doc.find(d.doc_id);
            if (it == amr_by_doc.end())
                throw Error(ErrorKind::MissingAmrText, "question '" + rec.question_id +
                                                           "': no AMR graph for doc '" +
                                                           d.doc_id + "'");
            amrs.push_back(*it->second);
        }
        q.graph = build_document_graph(amrs, mode, exclude_question_concept);
    } else {
        q.graph = edge_free_graph(rec, mode);
    }

    std::map<std::string, AmrAugmentedText> amr_texts;
    const FeatureMode fmode = feature_mode_for_strategy(strategy);
    if (fmode == FeatureMode::amr_augmented)
        for (const auto& d : rec.docs)
            amr_texts[d.doc_id] = amr_text(sssp_from_question(*amr_by_doc.at(d.doc_id)));
    q.X = build_node_features(rec.doc_texts(), amr_texts, fmode, enc, rec.question_text);

    for (const auto& d : rec.docs) {
        q.labels.push_back(d.is_positive ? 1 : 0);
        if (d.is_positive) q.has_positive = true;
    }
    return q;
}

// Assembly from an already-built graph plus ready features, e.g. when graphs
// and embeddings were produced by earlier pipeline stages.
inline QuestionData make_question_data(const QuestionRecord& rec, DocumentGraph graph,
                                       EmbeddingSet X) {
    if (graph.doc_ids.size() != rec.docs.size())
        throw Error(ErrorKind::SchemaViolation, "question '" + rec.question_id + "': graph has " +
                                                    std::to_string(graph.doc_ids.size()) +
                                                    " docs, dataset has " +
                                                    std::to_string(rec.docs.size()));
    for (std::size_t i = 0; i < rec.docs.size(); ++i)
        if (graph.doc_ids[i] != rec.docs[i].doc_id)
            throw Error(ErrorKind::SchemaViolation, "question '" + rec.question_id +
                                                        "': graph doc '" + graph.doc_ids[i] +
                                                        "' does not match dataset doc '" +
                                                        rec.docs[i].doc_id + "'");
    QuestionData q;
    q.question_id = rec.question_id;
    q.graph = std::move(graph);
    for (const auto& d : rec.docs) X.vector_for(d.doc_id);  // fail early on gaps
    q.X = std::move(X);
    for (const auto& d : rec.docs) {
        q.labels.push_back(d.is_positive ? 1 : 0);
        if (d.is_positive) q.has_positive = true;
    }
    return q;
}

// Same assembly but with precomputed embeddings instead of the hash encoder.
inline QuestionData make_question_data(const QuestionRecord& rec,
                                       const std::map<std::string, const AmrGraph*>& amr_by_doc,
                                       Strategy strategy, NormMode mode,
                                       bool exclude_question_concept, EmbeddingSet X) {
    QuestionData q;
    q.question_id = rec.question_id;
    if (uses_message_passing(strategy)) {
        std::vector<AmrGraph> amrs;
        for (const auto& d : rec.docs) {
            auto it = amr_by_doc.find(d.doc_id);
            if (it == amr_by_doc.end())
                throw Error(ErrorKind::MissingAmrText, "question '" + rec.question_id +
                                                           "': no AMR graph for doc '" +
                                                           d.doc_id + "'");
            amrs.push_back(*it->second);
        }
        q.graph = build_document_graph(amrs, mode, exclude_question_concept);
    } else {
        q.graph = edge_free_graph(rec, mode);
    }
    for (const auto& d : rec.docs) X.vector_for(d.doc_id);  // fail early on gaps
    q.X = std::move(X);
    for (const auto& d : rec.docs) {
        q.labels.push_back(d.is_positive ? 1 : 0);
        if (d.is_positive) q.has_positive = true;
    }
    return q;
}

// ---------------------------------------------------------------------------
// Batching: shuffled epochs without replacement, reseeded per epoch

class EpochSampler {
public:
    EpochSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
        : n_(n), batch_(batch_size), seed_(seed) {
        reshuffle();
    }

    std::vector<std::size_t> next() {
        if (pos_ >= n_) {
            ++epoch_;
            reshuffle();
        }
        std::size_t take = std::min(batch_, n_ - pos_);
        std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     order_.begin() + static_cast<std::ptrdiff_t>(pos_ + take));
        pos_ += take;
        return out;
    }

private:
    void reshuffle() {
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        Rng rng(derive_seed(seed_, "batch", epoch_));
        rng.shuffle(order_);
        pos_ = 0;
    }

    std::size_t n_, batch_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::size_t pos_ = 0;
    std::vector<std::size_t> order_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainLogEntry {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double dev_mrr = 0.0;
    double dev_mhits10 = 0.0;
};

struct TrainResult {
    GcnModel best;          // checkpoint with the best dev MRR (earliest on ties)
    GcnModel final_model;   // parameters after the last step
    std::vector<TrainLogEntry> log;
    double best_dev_mrr = 0.0;
    std::size_t best_step = 0;
};

namespace detail {

struct QuestionStep {
    double loss = 0.0;
    GcnGrads grads;
};

inline LossResult question_loss(const GcnModel& model, const QuestionData& q, LossFn loss,
                                std::size_t pair_cap, std::uint64_t seed, std::size_t step,
                                const ForwardCache& cache) {
    std::vector<double> scores(q.graph.size(), 0.0);
    const Mat& reps = cache.final_reps();
    for (std::size_t i = 0; i < q.graph.size(); ++i)
        for (std::size_t j = 0; j < q.X.question_vector.size(); ++j)
            scores[i] += q.X.question_vector[j] * reps(i, j);
    if (loss == LossFn::cross_entropy) return ce_loss(scores, q.labels);
    Rng prng(derive_seed(seed, "pairs", q.question_id, step));
    return ranking_loss_question(scores, q.labels, pair_cap, prng);
}

}  // namespace detail

// Mean loss over a batch without touching parameters (used for the step-0 log
// entry; replays exactly what the first training step will see).
inline double batch_loss(const GcnModel& model, const std::vector<QuestionData>& data,
                         const std::vector<std::size_t>& batch, const TrainConfig& cfg,
                         std::size_t step) {
    auto losses = parallel_map<double>(batch.size(), [&](std::size_t i) {
        const QuestionData& q = data[batch[i]];
        ForwardCache c = forward(model, q.graph, q.X, true);
        return detail::question_loss(model, q, cfg.loss, cfg.pair_cap, cfg.seed, step, c).loss;
    });
    double sum = 0.0;
    for (double l : losses) sum += l;
    return sum / static_cast<double>(losses.size());
}

inline EvalReport evaluate_model(const GcnModel& model, const std::vector<QuestionData>& data) {
    auto scores = parallel_map<ScoreVector>(data.size(), [&](std::size_t i) {
        ForwardCache c = forward(model, data[i].graph, data[i].X, false);
        return score_nodes(data[i].graph, c.final_reps(), data[i].X.question_vector);
    });
    std::map<std::string, std::set<std::string>> qrels;
    for (const auto& q : data) {
        auto& pos = qrels[q.question_id];
        for (std::size_t i = 0; i < q.labels.size(); ++i)
            if (q.labels[i]) pos.insert(q.graph.doc_ids[i]);
    }
    return evaluate(scores, qrels);
}

inline TrainResult train(const std::vector<QuestionData>& train_data,
                         const std::vector<QuestionData>& dev_data, GcnModel model,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (train_data.empty()) throw Error(ErrorKind::EmptyDataset, "no training questions");
    if (dev_data.empty()) throw Error(ErrorKind::EmptyDataset, "no dev questions");
    bool any_positive = false;
    for (const auto& q : train_data) any_positive = any_positive || q.has_positive;
    if (!any_positive)
        throw Error(ErrorKind::NoPositivesInDataset, "every training question is all-negative");

    TrainResult res;
    AdamW opt(model, cfg);
    EpochSampler sampler(train_data.size(), cfg.batch_size, cfg.seed);

    auto log_point = [&](std::size_t step, double loss, double lr) {
        EvalReport rep = evaluate_model(model, dev_data);
        res.log.push_back({step, loss, lr, rep.mrr, rep.mhits10});
        if (res.log.size() == 1 || rep.mrr > res.best_dev_mrr) {
            res.best_dev_mrr = rep.mrr;
            res.best_step = step;
            res.best = model;
        }
    };

    {
        // untrained baseline: the loss the first step is about to see
        EpochSampler peek = sampler;
        log_point(0, batch_loss(model, train_data, peek.next(), cfg, 1), 0.0);
    }

    for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
        const std::vector<std::size_t> batch = sampler.next();
        auto outs = parallel_map<detail::QuestionStep>(batch.size(), [&](std::size_t i) {
            const QuestionData& q = train_data[batch[i]];
            ForwardCache c = forward(model, q.graph, q.X, true);
            LossResult lr = detail::question_loss(model, q, cfg.loss, cfg.pair_cap, cfg.seed,
                                                  step, c);
            detail::QuestionStep out;
            out.loss = lr.loss;
            out.grads = backward(model, q.graph, c, q.X.question_vector, lr.dscores);
            return out;
        });

        double loss = 0.0;
        GcnGrads grads = zero_grads(model);
        for (const auto& o : outs) {
            loss += o.loss;
            accumulate_grads(grads, o.grads);
        }
        const double inv = 1.0 / static_cast<double>(outs.size());
        loss *= inv;
        scale_grads(grads, inv);

        const double lr = warmup_lr(cfg.learning_rate, step, cfg.warmup_steps);
        opt.update(model, grads, lr);
        model.step = step;

        if (step % cfg.eval_every == 0) log_point(step, loss, lr);
    }
    res.final_model = model;
    return res;
}

// ---------------------------------------------------------------------------
// Training log JSONL

inline void save_train_log(std::ostream& out, const std::vector<TrainLogEntry>& log) {
    for (const auto& e : log) {
        nlohmann::json j = {{"step", e.step},
                            {"loss", e.loss},
                            {"lr", e.lr},
                            {"dev_mrr", e.dev_mrr},
                            {"dev_mhits10", e.dev_mhits10}};
        out << j.dump() << "\n";
    }
}

inline std::vector<TrainLogEntry> load_train_log(std::istream& in) {
    std::vector<TrainLogEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw Error(ErrorKind::MalformedLine,
                        "line " + std::to_string(line_no) + ": not valid JSON");
        try {
            out.push_back({j.at("step").get<std::size_t>(), j.at("loss").get<double>(),
                           j.at("lr").get<double>(), j.at("dev_mrr").get<double>(),
                           j.at("dev_mhits10").get<double>()});
        } catch (const nlohmann::json::exception& ex) {
            throw Error(ErrorKind::SchemaViolation,
                        "line " + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return out;
}

}  // namespace grag
