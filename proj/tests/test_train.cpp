#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "grag/synthetic.hpp"
#include "grag/train.hpp"

using namespace grag;

namespace {

std::map<std::string, const AmrGraph*> amr_index(const SyntheticCorpus& c,
                                                 const std::string& qid) {
    std::map<std::string, const AmrGraph*> out;
    for (const auto& g : c.amrs)
        if (g.question_id == qid) out[g.doc_id] = &g;
    return out;
}

std::vector<QuestionData> assemble(const SyntheticCorpus& c,
                                   const std::vector<QuestionRecord>& recs, Strategy strat,
                                   std::size_t dim, std::uint64_t enc_seed) {
    HashEncoder enc{dim, enc_seed};
    std::vector<QuestionData> out;
    for (const auto& r : recs)
        out.push_back(make_question_data(r, amr_index(c, r.question_id), strat,
                                         NormMode::per_channel_dims, false, enc));
    return out;
}

std::string log_as_text(const std::vector<TrainLogEntry>& log) {
    std::ostringstream os;
    save_train_log(os, log);
    return os.str();
}

}  // namespace

TEST_CASE("config validation") {
    TrainConfig cfg;
    REQUIRE_NOTHROW(cfg.validate());

    auto expect_invalid = [](TrainConfig c) {
        REQUIRE_THROWS_MATCHES(c.validate(), Error,
                               Catch::Matchers::Predicate<Error>([](const Error& e) {
                                   return e.kind() == ErrorKind::InvalidConfig;
                               }));
    };
    TrainConfig c = cfg;
    c.learning_rate = 0.0;
    expect_invalid(c);
    c = cfg;
    c.batch_size = 0;
    expect_invalid(c);
    c = cfg;
    c.warmup_steps = 0;
    expect_invalid(c);
    c = cfg;
    c.eval_every = 30000;  // does not divide 50000
    expect_invalid(c);
    c = cfg;
    c.total_steps = 0;
    expect_invalid(c);
    c = cfg;
    c.pair_cap = 0;
    expect_invalid(c);
    c = cfg;
    c.beta1 = 1.0;
    expect_invalid(c);
    c = cfg;
    c.weight_decay = -0.01;
    expect_invalid(c);

    REQUIRE(loss_fn_from_name("cross_entropy") == LossFn::cross_entropy);
    REQUIRE(loss_fn_from_name("pairwise_ranking") == LossFn::pairwise_ranking);
    REQUIRE_THROWS_AS(loss_fn_from_name("mse"), Error);
    REQUIRE(loss_for_strategy(Strategy::g_rag_rl) == LossFn::pairwise_ranking);
    REQUIRE(loss_for_strategy(Strategy::g_rag) == LossFn::cross_entropy);
    REQUIRE(feature_mode_for_strategy(Strategy::gcn) == FeatureMode::baseline);
    REQUIRE(feature_mode_for_strategy(Strategy::g_rag) == FeatureMode::amr_augmented);
}

TEST_CASE("warmup is linear then flat") {
    REQUIRE(warmup_lr(1e-4, 500, 1000) == 5e-5);
    REQUIRE(warmup_lr(1e-4, 250, 1000) == 2.5e-5);
    REQUIRE(warmup_lr(1e-4, 1, 1000) == Catch::Approx(1e-7).epsilon(1e-14));
    REQUIRE(warmup_lr(1e-4, 1000, 1000) == 1e-4);
    REQUIRE(warmup_lr(1e-4, 40000, 1000) == 1e-4);
    REQUIRE(warmup_lr(3e-3, 1, 1) == 3e-3);
}

TEST_CASE("adamw first step matches the closed form") {
    GcnModel m = init_model({1, 1, 1}, 0.0, Strategy::gcn, 3);
    // freeze two recognizable parameters
    m.layers[0].w_self(0, 0) = 0.5;
    m.layers[1].w_self(0, 0) = -2.0;
    TrainConfig cfg;
    AdamW opt(m, cfg);

    GcnGrads g = zero_grads(m);
    g[0].w_self(0, 0) = 0.2;
    const double lr = 1e-2;
    opt.update(m, g, lr);

    // t=1: mhat = g, vhat = g^2 -> step lr*(g/(|g|+eps) + wd*theta)
    const double expect0 = 0.5 - lr * (0.2 / (0.2 + 1e-8) + 0.01 * 0.5);
    REQUIRE(m.layers[0].w_self(0, 0) == Catch::Approx(expect0).epsilon(1e-12));
    // zero gradient: pure decoupled decay, theta *= (1 - lr*wd)
    const double expect1 = -2.0 - lr * (0.01 * -2.0);
    REQUIRE(m.layers[1].w_self(0, 0) == Catch::Approx(expect1).epsilon(1e-14));
    REQUIRE(opt.steps_taken() == 1);
}

TEST_CASE("adamw approaches sign-descent over repeated identical steps") {
    GcnModel m = init_model({1, 1, 1}, 0.0, Strategy::gcn, 3);
    m.layers[0].w_self(0, 0) = 1.0;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(m, cfg);
    GcnGrads g = zero_grads(m);
    g[0].w_self(0, 0) = 1e-3;  // tiny but consistent gradient
    for (int i = 0; i < 100; ++i) opt.update(m, g, 1e-2);
    // adaptive scaling makes each late step approximately -lr * sign(g)
    REQUIRE(m.layers[0].w_self(0, 0) < 1.0 - 0.5);
}

TEST_CASE("epoch sampler covers each epoch exactly once") {
    EpochSampler s(7, 3, 99);
    std::vector<std::size_t> seen;
    auto b1 = s.next(), b2 = s.next(), b3 = s.next();
    REQUIRE(b1.size() == 3);
    REQUIRE(b2.size() == 3);
    REQUIRE(b3.size() == 1);
    for (auto b : {b1, b2, b3}) seen.insert(seen.end(), b.begin(), b.end());
    std::sort(seen.begin(), seen.end());
    REQUIRE(seen == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});

    // next epoch reshuffles but still covers everything
    std::vector<std::size_t> second;
    for (int i = 0; i < 3; ++i) {
        auto b = s.next();
        second.insert(second.end(), b.begin(), b.end());
    }
    auto sorted = second;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(sorted == seen);

    EpochSampler t1(7, 3, 99), t2(7, 3, 99);
    REQUIRE(t1.next() == t2.next());
    EpochSampler t3(7, 3, 100);
    bool differs = false;
    for (int i = 0; i < 3; ++i)
        if (t3.next() != t2.next()) differs = true;
    REQUIRE(differs);
}

TEST_CASE("synthetic corpus is separable by construction") {
    SyntheticCorpus c = gen_synthetic(11, 6, 3, 12, 2);
    REQUIRE(c.train.size() == 6);
    REQUIRE(c.dev.size() == 3);
    REQUIRE(c.amrs.size() == 9 * 12);

    bool positive_off_front = false;
    for (const auto& q : c.train) {
        REQUIRE(q.docs.size() == 12);
        std::size_t pos = 0;
        const std::string answer = "ans-" + q.question_id;
        auto amrs = amr_index(c, q.question_id);
        for (std::size_t i = 0; i < q.docs.size(); ++i) {
            const auto& d = q.docs[i];
            const bool has_answer = d.text.find(answer) != std::string::npos;
            REQUIRE(has_answer == d.is_positive);
            if (d.is_positive) {
                ++pos;
                if (i != 0 && q.docs[0].is_positive == false) positive_off_front = true;
                REQUIRE(d.text.substr(0, q.question_text.size()) == q.question_text);
                // the planted answer shows up in the AMR path text too
                AmrAugmentedText at = amr_text(sssp_from_question(*amrs.at(d.doc_id)));
                REQUIRE(at.rendered == "question " + q.question_text + " " + answer);
            } else {
                AmrAugmentedText at = amr_text(sssp_from_question(*amrs.at(d.doc_id)));
                REQUIRE(at.rendered.substr(0, 9) == "question ");
                REQUIRE(at.rendered.find(answer) == std::string::npos);
            }
        }
        REQUIRE(pos == 2);
    }
    REQUIRE(positive_off_front);  // shuffling moved at least one positive off index 0

    // deterministic per seed, sensitive to it
    SyntheticCorpus c2 = gen_synthetic(11, 6, 3, 12, 2);
    REQUIRE(question_to_json(c.train[0]).dump() == question_to_json(c2.train[0]).dump());
    REQUIRE(amr_to_json(c.amrs[5]).dump() == amr_to_json(c2.amrs[5]).dump());
    SyntheticCorpus c3 = gen_synthetic(12, 6, 3, 12, 2);
    REQUIRE(question_to_json(c.train[0]).dump() != question_to_json(c3.train[0]).dump());

    // graphs survive the JSONL schema round trip
    for (const auto& g : c.amrs) REQUIRE_NOTHROW(g.validate());
    std::ostringstream os;
    save_amr_jsonl(os, c.amrs);
    std::istringstream is(os.str());
    auto back = load_amr_jsonl(is);
    REQUIRE(back.size() == c.amrs.size());

    REQUIRE_THROWS_AS(gen_synthetic(1, 1, 1, 0, 1), Error);
    REQUIRE_THROWS_AS(gen_synthetic(1, 1, 1, 4, 5), Error);
    REQUIRE_THROWS_AS(gen_synthetic(1, 1, 1, 101, 2), Error);
}

TEST_CASE("question assembly wires graph, features and labels") {
    SyntheticCorpus c = gen_synthetic(21, 2, 1, 8, 2);
    const QuestionRecord& rec = c.train[0];
    auto amrs = amr_index(c, rec.question_id);
    HashEncoder enc{32, 5};

    QuestionData q = make_question_data(rec, amrs, Strategy::g_rag,
                                        NormMode::per_channel_dims, false, enc);
    REQUIRE(q.question_id == rec.question_id);
    REQUIRE(q.graph.doc_ids.size() == 8);
    REQUIRE(q.has_positive);
    for (std::size_t i = 0; i < rec.docs.size(); ++i) {
        REQUIRE(q.graph.doc_ids[i] == rec.docs[i].doc_id);
        REQUIRE((q.labels[i] == 1) == rec.docs[i].is_positive);
    }
    // augmented feature = hash(text + " " + path text), bitwise
    const auto& d0 = rec.docs[0];
    AmrAugmentedText at = amr_text(sssp_from_question(*amrs.at(d0.doc_id)));
    REQUIRE(q.X.vector_for(d0.doc_id) == hash_encode(d0.text + " " + at.rendered, 32, 5));
    REQUIRE(q.X.question_vector == hash_encode(rec.question_text, 32, 5));

    // all docs share the "question" concept: graph is complete
    REQUIRE(q.graph.adjacency.size() == 8 * 7 / 2);

    // baseline strategy ignores AMR text in features but keeps the graph
    QuestionData qb = make_question_data(rec, amrs, Strategy::gcn,
                                         NormMode::per_channel_dims, false, enc);
    REQUIRE(qb.X.vector_for(d0.doc_id) == hash_encode(d0.text, 32, 5));
    REQUIRE_FALSE(qb.graph.adjacency.empty());

    // mlp needs no AMR at all and yields an edge-free graph
    QuestionData qm = make_question_data(rec, {}, Strategy::mlp, NormMode::per_channel_dims,
                                         false, enc);
    REQUIRE(qm.graph.adjacency.empty());
    REQUIRE(qm.graph.doc_ids.size() == 8);
    REQUIRE(qm.X.vector_for(d0.doc_id) == hash_encode(d0.text, 32, 5));

    // g-rag without AMRs is an error naming the missing doc
    try {
        make_question_data(rec, {}, Strategy::g_rag, NormMode::per_channel_dims, false, enc);
        FAIL("expected MissingAmrText");
    } catch (const Error& e) {
        REQUIRE(e.kind() == ErrorKind::MissingAmrText);
        REQUIRE(std::string(e.what()).find(rec.docs[0].doc_id) != std::string::npos);
    }

    // precomputed-embedding path validates coverage
    EmbeddingSet pre = q.X;
    QuestionData qp = make_question_data(rec, amrs, Strategy::g_rag,
                                         NormMode::per_channel_dims, false, pre);
    REQUIRE(qp.X.vector_for(d0.doc_id) == q.X.vector_for(d0.doc_id));
    EmbeddingSet gap = q.X;
    gap.doc_vectors.erase(d0.doc_id);
    REQUIRE_THROWS_AS(make_question_data(rec, amrs, Strategy::g_rag,
                                         NormMode::per_channel_dims, false, gap),
                      Error);
}

TEST_CASE("train runs, logs at eval points and tracks the best checkpoint") {
    SyntheticCorpus c = gen_synthetic(31, 20, 6, 8, 2);
    auto train_qs = assemble(c, c.train, Strategy::g_rag, 32, 7);
    auto dev_qs = assemble(c, c.dev, Strategy::g_rag, 32, 7);

    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.warmup_steps = 10;
    cfg.total_steps = 50;
    cfg.eval_every = 25;
    cfg.loss = LossFn::cross_entropy;
    cfg.seed = 3;

    GcnModel init = init_model(32, 16, 0.1, Strategy::g_rag, 3);
    TrainResult res = train(train_qs, dev_qs, init, cfg);

    REQUIRE(res.log.size() == 3);
    REQUIRE(res.log[0].step == 0);
    REQUIRE(res.log[0].lr == 0.0);
    REQUIRE(res.log[1].step == 25);
    REQUIRE(res.log[1].lr == 1e-3);
    REQUIRE(res.log[2].step == 50);
    for (const auto& e : res.log) {
        REQUIRE(std::isfinite(e.loss));
        REQUIRE(e.dev_mrr >= 0.0);
        REQUIRE(e.dev_mrr <= 1.0);
        REQUIRE(e.dev_mhits10 >= 0.0);
        REQUIRE(e.dev_mhits10 <= 1.0);
    }
    REQUIRE(res.final_model.step == 50);

    double best = -1.0;
    std::size_t best_step = 0;
    for (const auto& e : res.log)
        if (e.dev_mrr > best) {
            best = e.dev_mrr;
            best_step = e.step;
        }
    REQUIRE(res.best_dev_mrr == best);
    REQUIRE(res.best_step == best_step);
    REQUIRE(res.best.step == best_step);

    // training moved the parameters
    REQUIRE_FALSE(bits_equal(res.final_model, init));
}

TEST_CASE("training loss falls on the separable corpus") {
    SyntheticCorpus c = gen_synthetic(41, 30, 8, 10, 2);
    auto train_qs = assemble(c, c.train, Strategy::g_rag, 64, 9);
    auto dev_qs = assemble(c, c.dev, Strategy::g_rag, 64, 9);

    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.warmup_steps = 30;
    cfg.total_steps = 150;
    cfg.eval_every = 75;
    cfg.seed = 5;

    GcnModel init = init_model(64, 32, 0.1, Strategy::g_rag, 5);
    TrainResult res = train(train_qs, dev_qs, init, cfg);

    REQUIRE(res.log.back().loss < res.log.front().loss);
    REQUIRE(res.log.back().dev_mrr > res.log.front().dev_mrr);
}

TEST_CASE("training is bitwise reproducible across seeds and thread counts") {
    SyntheticCorpus c = gen_synthetic(51, 12, 4, 8, 2);
    auto train_qs = assemble(c, c.train, Strategy::g_rag_rl, 32, 2);
    auto dev_qs = assemble(c, c.dev, Strategy::g_rag_rl, 32, 2);

    TrainConfig cfg;
    cfg.learning_rate = 5e-4;
    cfg.warmup_steps = 5;
    cfg.total_steps = 20;
    cfg.eval_every = 10;
    cfg.loss = LossFn::pairwise_ranking;
    cfg.seed = 13;

    GcnModel init = init_model(32, 8, 0.2, Strategy::g_rag_rl, 13);

    setenv("GRAG_THREADS", "1", 1);
    TrainResult a = train(train_qs, dev_qs, init, cfg);
    setenv("GRAG_THREADS", "4", 1);
    TrainResult b = train(train_qs, dev_qs, init, cfg);
    unsetenv("GRAG_THREADS");
    TrainResult d = train(train_qs, dev_qs, init, cfg);

    REQUIRE(bits_equal(a.final_model, b.final_model));
    REQUIRE(bits_equal(a.best, b.best));
    REQUIRE(log_as_text(a.log) == log_as_text(b.log));
    REQUIRE(bits_equal(a.final_model, d.final_model));
    REQUIRE(log_as_text(a.log) == log_as_text(d.log));

    // a different training seed changes the trajectory
    TrainConfig cfg2 = cfg;
    cfg2.seed = 14;
    TrainResult e = train(train_qs, dev_qs, init, cfg2);
    REQUIRE_FALSE(bits_equal(a.final_model, e.final_model));
}

TEST_CASE("train rejects degenerate datasets") {
    SyntheticCorpus c = gen_synthetic(61, 3, 2, 6, 2);
    auto train_qs = assemble(c, c.train, Strategy::gcn, 16, 1);
    auto dev_qs = assemble(c, c.dev, Strategy::gcn, 16, 1);
    GcnModel m = init_model(16, 8, 0.0, Strategy::gcn, 1);
    TrainConfig cfg;
    cfg.total_steps = 10;
    cfg.eval_every = 10;

    REQUIRE_THROWS_MATCHES(train({}, dev_qs, m, cfg), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::EmptyDataset;
                           }));
    REQUIRE_THROWS_AS(train(train_qs, {}, m, cfg), Error);

    auto negatives = train_qs;
    for (auto& q : negatives) {
        std::fill(q.labels.begin(), q.labels.end(), 0);
        q.has_positive = false;
    }
    REQUIRE_THROWS_MATCHES(train(negatives, dev_qs, m, cfg), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::NoPositivesInDataset;
                           }));
}

TEST_CASE("train log survives the JSONL round trip") {
    std::vector<TrainLogEntry> log = {
        {0, 1.609437912434100282, 0.0, 0.131313131313131315, 0.25},
        {500, 0.03125, 5e-5, 0.75, 1.0},
    };
    std::ostringstream os;
    save_train_log(os, log);
    std::istringstream is(os.str());
    auto back = load_train_log(is);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        REQUIRE(back[i].step == log[i].step);
        REQUIRE(back[i].loss == log[i].loss);
        REQUIRE(back[i].lr == log[i].lr);
        REQUIRE(back[i].dev_mrr == log[i].dev_mrr);
        REQUIRE(back[i].dev_mhits10 == log[i].dev_mhits10);
    }
    std::istringstream bad("{\"step\":0");
    REQUIRE_THROWS_MATCHES(load_train_log(bad), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::MalformedLine;
                           }));
    std::istringstream missing("{\"step\":0,\"loss\":1.0}");
    REQUIRE_THROWS_AS(load_train_log(missing), Error);
}

TEST_CASE("dataset JSONL round trip and validation") {
    SyntheticCorpus c = gen_synthetic(71, 3, 0, 5, 1);
    std::ostringstream os;
    save_dataset_jsonl(os, c.train);
    std::istringstream is(os.str());
    auto back = load_dataset_jsonl(is);
    REQUIRE(back.size() == 3);
    REQUIRE(question_to_json(back[1]).dump() == question_to_json(c.train[1]).dump());

    auto qrels = qrels_from_dataset(back);
    REQUIRE(qrels.size() == 3);
    for (const auto& [qid, docs] : qrels) REQUIRE(docs.size() == 1);

    std::istringstream bad("not json\n");
    REQUIRE_THROWS_MATCHES(load_dataset_jsonl(bad), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::MalformedLine;
                           }));
    std::istringstream dup(
        R"({"question_id":"q","question_text":"t","docs":[{"doc_id":"a","text":"x","is_positive":true},{"doc_id":"a","text":"y","is_positive":false}]})"
        "\n");
    REQUIRE_THROWS_MATCHES(load_dataset_jsonl(dup), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::DuplicateDocId;
                           }));
    std::istringstream repeat(
        R"({"question_id":"q","question_text":"t","docs":[]})"
        "\n"
        R"({"question_id":"q","question_text":"t2","docs":[]})"
        "\n");
    REQUIRE_THROWS_MATCHES(load_dataset_jsonl(repeat), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::SchemaViolation;
                           }));
    std::istringstream schema(R"({"question_id":"q","docs":[]})");
    REQUIRE_THROWS_AS(load_dataset_jsonl(schema), Error);

    // n_max guard
    QuestionRecord big;
    big.question_id = "big";
    for (int i = 0; i < 101; ++i)
        big.docs.push_back({"d" + std::to_string(i), "t", false});
    REQUIRE_THROWS_AS(big.validate(), Error);
    REQUIRE_NOTHROW(big.validate(200));
}

TEST_CASE("qrels writer pairs with the metrics loader") {
    std::map<std::string, std::set<std::string>> qrels = {
        {"q1", {"d2", "d0"}},
        {"q2", {"d9"}},
    };
    std::ostringstream os;
    save_qrels_tsv(os, qrels);
    REQUIRE(os.str() == "q1\td0\t1\nq1\td2\t1\nq2\td9\t1\n");
    std::istringstream is(os.str());
    auto back = load_qrels_tsv(is);
    REQUIRE(back == qrels);
}
