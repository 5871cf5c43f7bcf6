// grag: AMR-graph document reranking toolkit.
//   parse-amr | build-graphs | train | rerank | eval | report-paths | gen-synthetic
// Every command is deterministic given its config and seed; GRAG_THREADS bounds
// worker threads without changing output bytes.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "grag/metrics.hpp"
#include "grag/synthetic.hpp"
#include "grag/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace grag;

namespace {

struct CliConfig {
    std::string strategy = "g-rag";
    std::string dataset, train_dataset, dev_dataset;
    std::string amr, graphs, embeddings, model;
    std::string scores, qrels;
    std::string input_dir, out, out_dir;
    std::string norm_mode = "per_channel_dims";
    bool exclude_question_concept = false;
    std::size_t hash_dim = 64;
    std::size_t hidden_dim = 8;
    double dropout = 0.1;
    std::string loss;  // empty: chosen by strategy
    std::string format = "table";
    double learning_rate = 1e-4;
    std::size_t batch_size = 5;
    std::size_t warmup_steps = 1000;
    std::size_t total_steps = 50000;
    std::size_t eval_every = 10000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t pair_cap = 500;
    std::uint64_t seed = 0;
    std::size_t n_train = 200;
    std::size_t n_dev = 50;
    std::size_t docs_per_question = 20;
    std::size_t positives_per_question = 2;
};

std::string config_string(const std::string& key, const nlohmann::json& v) {
    if (!v.is_string())
        throw Error(ErrorKind::InvalidConfig, "config key '" + key + "' must be a string");
    return v.get<std::string>();
}

bool config_bool(const std::string& key, const nlohmann::json& v) {
    if (!v.is_boolean())
        throw Error(ErrorKind::InvalidConfig, "config key '" + key + "' must be a boolean");
    return v.get<bool>();
}

std::uint64_t config_uint(const std::string& key, const nlohmann::json& v) {
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0 &&
                                   !v.is_number_unsigned()))
        throw Error(ErrorKind::InvalidConfig,
                    "config key '" + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
}

double config_double(const std::string& key, const nlohmann::json& v) {
    if (!v.is_number())
        throw Error(ErrorKind::InvalidConfig, "config key '" + key + "' must be a number");
    return v.get<double>();
}

// Strict: any key outside the RunConfig schema is rejected.
void apply_config(const nlohmann::json& j, CliConfig& c) {
    if (!j.is_object())
        throw Error(ErrorKind::InvalidConfig, "config root must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        if (key == "strategy") c.strategy = config_string(key, v);
        else if (key == "dataset") c.dataset = config_string(key, v);
        else if (key == "train_dataset") c.train_dataset = config_string(key, v);
        else if (key == "dev_dataset") c.dev_dataset = config_string(key, v);
        else if (key == "amr") c.amr = config_string(key, v);
        else if (key == "graphs") c.graphs = config_string(key, v);
        else if (key == "embeddings") c.embeddings = config_string(key, v);
        else if (key == "model") c.model = config_string(key, v);
        else if (key == "scores") c.scores = config_string(key, v);
        else if (key == "qrels") c.qrels = config_string(key, v);
        else if (key == "input_dir") c.input_dir = config_string(key, v);
        else if (key == "out") c.out = config_string(key, v);
        else if (key == "out_dir") c.out_dir = config_string(key, v);
        else if (key == "norm_mode") c.norm_mode = config_string(key, v);
        else if (key == "exclude_question_concept") c.exclude_question_concept = config_bool(key, v);
        else if (key == "hash_dim") c.hash_dim = config_uint(key, v);
        else if (key == "hidden_dim") c.hidden_dim = config_uint(key, v);
        else if (key == "dropout") c.dropout = config_double(key, v);
        else if (key == "loss") c.loss = config_string(key, v);
        else if (key == "format") c.format = config_string(key, v);
        else if (key == "learning_rate") c.learning_rate = config_double(key, v);
        else if (key == "batch_size") c.batch_size = config_uint(key, v);
        else if (key == "warmup_steps") c.warmup_steps = config_uint(key, v);
        else if (key == "total_steps") c.total_steps = config_uint(key, v);
        else if (key == "eval_every") c.eval_every = config_uint(key, v);
        else if (key == "beta1") c.beta1 = config_double(key, v);
        else if (key == "beta2") c.beta2 = config_double(key, v);
        else if (key == "eps") c.eps = config_double(key, v);
        else if (key == "weight_decay") c.weight_decay = config_double(key, v);
        else if (key == "pair_cap") c.pair_cap = config_uint(key, v);
        else if (key == "seed") c.seed = config_uint(key, v);
        else if (key == "n_train") c.n_train = config_uint(key, v);
        else if (key == "n_dev") c.n_dev = config_uint(key, v);
        else if (key == "docs_per_question") c.docs_per_question = config_uint(key, v);
        else if (key == "positives_per_question") c.positives_per_question = config_uint(key, v);
        else
            throw Error(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
    }
}

void load_config_file(const std::string& path, CliConfig& c) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::InvalidConfig, "config file '" + path + "' not found");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedLine, "config file '" + path + "': " + e.what());
    }
    apply_config(j, c);
}

std::optional<std::string> scan_for_config(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--help" || a == "-h") return std::nullopt;  // help needs no config
    }
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return std::nullopt;
}

std::string strip_kind_prefix(const Error& e) {
    const std::string what = e.what();
    const std::string prefix = std::string(error_kind_name(e.kind())) + ": ";
    return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
}

void need_value(const std::string& v, const char* what) {
    if (v.empty())
        throw Error(ErrorKind::InvalidConfig, std::string("missing required ") + what);
}

void need_file(const std::string& p, const char* what) {
    need_value(p, what);
    if (!fs::is_regular_file(p))
        throw Error(ErrorKind::InvalidConfig, std::string(what) + " '" + p + "' does not exist");
}

void need_dir(const std::string& p, const char* what) {
    need_value(p, what);
    if (!fs::is_directory(p))
        throw Error(ErrorKind::InvalidConfig,
                    std::string(what) + " '" + p + "' is not a directory");
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path + "'");
    return out;
}

std::vector<QuestionRecord> load_sorted_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read '" + path + "'");
    auto recs = load_dataset_jsonl(in);
    std::stable_sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) {
        return a.question_id < b.question_id;
    });
    return recs;
}

struct AmrStore {
    std::vector<AmrGraph> all;
    std::map<std::string, std::map<std::string, const AmrGraph*>> by_question;
};

AmrStore load_amr_store(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read '" + path + "'");
    AmrStore s;
    s.all = load_amr_jsonl(in);
    for (const auto& g : s.all) s.by_question[g.question_id][g.doc_id] = &g;
    return s;
}

const std::map<std::string, const AmrGraph*>& amrs_of(const AmrStore& s,
                                                      const std::string& qid) {
    static const std::map<std::string, const AmrGraph*> empty;
    auto it = s.by_question.find(qid);
    return it == s.by_question.end() ? empty : it->second;
}

// ---------------------------------------------------------------------------
// parse-amr

struct PenmanFile {
    std::string question_id, doc_id, body;
};

PenmanFile split_penman_file(const fs::path& path, const std::string& text) {
    PenmanFile f;
    bool have_id = false;
    std::istringstream ls(text);
    std::string line;
    while (std::getline(ls, line)) {
        const auto first = line.find_first_not_of(" \t");
        if (first != std::string::npos && line[first] == '#') {
            std::istringstream ws(line.substr(first + 1));
            std::string tag;
            ws >> tag;
            if (tag == "::id" && !have_id) {
                std::string id;
                ws >> id;
                const auto slash = id.find('/');
                if (slash == std::string::npos || slash == 0 || slash + 1 == id.size())
                    throw Error(ErrorKind::MalformedLine,
                                "'" + path.string() +
                                    "': ::id must look like <question_id>/<doc_id>");
                f.question_id = id.substr(0, slash);
                f.doc_id = id.substr(slash + 1);
                have_id = true;
            }
            continue;  // comment lines never reach the parser
        }
        f.body += line;
        f.body += '\n';
    }
    if (!have_id) {
        const std::string stem = path.stem().string();
        const auto sep = stem.find("__");
        if (sep == std::string::npos || sep == 0 || sep + 2 >= stem.size())
            throw Error(ErrorKind::MalformedLine,
                        "'" + path.string() +
                            "': no '# ::id <question_id>/<doc_id>' line and filename is not "
                            "<question_id>__<doc_id>");
        f.question_id = stem.substr(0, sep);
        f.doc_id = stem.substr(sep + 2);
    }
    return f;
}

int cmd_parse_amr(const CliConfig& cfg) {
    need_dir(cfg.input_dir, "--input-dir");
    need_value(cfg.out, "--out");

    std::vector<fs::path> files;
    for (const auto& ent : fs::directory_iterator(cfg.input_dir))
        if (ent.is_regular_file()) files.push_back(ent.path());
    std::sort(files.begin(), files.end());

    std::vector<AmrGraph> graphs;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& path : files) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorKind::IoError, "cannot read '" + path.string() + "'");
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        PenmanFile f = split_penman_file(path, text);
        try {
            AmrGraph g = parse_penman(f.body, f.question_id, f.doc_id);
            g.validate();
            if (!seen.insert({g.question_id, g.doc_id}).second)
                throw Error(ErrorKind::MalformedLine, "duplicate graph id '" + g.question_id +
                                                          "/" + g.doc_id + "'");
            graphs.push_back(std::move(g));
        } catch (const Error& e) {
            throw Error(e.kind(), "'" + path.string() + "': " + strip_kind_prefix(e));
        }
    }
    std::sort(graphs.begin(), graphs.end(), [](const auto& a, const auto& b) {
        return std::tie(a.question_id, a.doc_id) < std::tie(b.question_id, b.doc_id);
    });
    auto out = open_out(cfg.out);
    save_amr_jsonl(out, graphs);
    std::cout << "parsed " << graphs.size() << " graphs from " << files.size()
              << " files\n";
    return 0;
}

// ---------------------------------------------------------------------------
// build-graphs

int cmd_build_graphs(const CliConfig& cfg) {
    need_file(cfg.dataset, "--dataset");
    need_file(cfg.amr, "--amr");
    need_value(cfg.out_dir, "--out-dir");
    const NormMode mode = norm_mode_from_name(cfg.norm_mode);

    auto recs = load_sorted_dataset(cfg.dataset);
    AmrStore store = load_amr_store(cfg.amr);

    std::vector<DocumentGraph> graphs;
    std::size_t edgeless = 0;
    for (const auto& rec : recs) {
        const auto& by_doc = amrs_of(store, rec.question_id);
        std::vector<AmrGraph> amrs;
        for (const auto& d : rec.docs) {
            auto it = by_doc.find(d.doc_id);
            if (it == by_doc.end())
                throw Error(ErrorKind::MissingAmrText, "question '" + rec.question_id +
                                                           "': no AMR graph for doc '" +
                                                           d.doc_id + "'");
            amrs.push_back(*it->second);
        }
        DocumentGraph g = build_document_graph(amrs, mode, cfg.exclude_question_concept);
        if (g.adjacency.empty()) {
            ++edgeless;
            std::cerr << "warning: question '" << rec.question_id
                      << "': document graph has zero edges\n";
        }
        graphs.push_back(std::move(g));
    }

    fs::create_directories(cfg.out_dir);
    auto out = open_out((fs::path(cfg.out_dir) / "graphs.jsonl").string());
    save_docgraphs_jsonl(out, graphs);
    std::cout << "built " << graphs.size() << " document graphs (" << edgeless
              << " with zero edges)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// shared assembly for train / rerank

EmbeddingSet hash_features(const QuestionRecord& rec,
                           const std::map<std::string, const AmrGraph*>& amr_by_doc,
                           Strategy strat, const HashEncoder& enc) {
    std::map<std::string, AmrAugmentedText> texts;
    const FeatureMode fmode = feature_mode_for_strategy(strat);
    if (fmode == FeatureMode::amr_augmented)
        for (const auto& d : rec.docs) {
            auto it = amr_by_doc.find(d.doc_id);
            if (it == amr_by_doc.end())
                throw Error(ErrorKind::MissingAmrText, "question '" + rec.question_id +
                                                           "': no AMR graph for doc '" +
                                                           d.doc_id + "'");
            texts[d.doc_id] = amr_text(sssp_from_question(*it->second));
        }
    return build_node_features(rec.doc_texts(), texts, fmode, enc, rec.question_text);
}

std::string embedding_path(const std::string& dir, const std::string& qid) {
    return (fs::path(dir) / (qid + ".emb")).string();
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const CliConfig& cfg) {
    const Strategy strat = strategy_from_name(cfg.strategy);
    need_file(cfg.train_dataset, "--train-dataset");
    need_file(cfg.dev_dataset, "--dev-dataset");
    need_value(cfg.out_dir, "--out-dir");
    const NormMode mode = norm_mode_from_name(cfg.norm_mode);
    const bool have_emb = !cfg.embeddings.empty();
    if (have_emb) need_dir(cfg.embeddings, "--embeddings");
    const bool needs_amr =
        uses_message_passing(strat) || (uses_amr_features(strat) && !have_emb);
    if (needs_amr) need_file(cfg.amr, "--amr");

    TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.batch_size = cfg.batch_size;
    tc.warmup_steps = cfg.warmup_steps;
    tc.total_steps = cfg.total_steps;
    tc.eval_every = cfg.eval_every;
    tc.loss = cfg.loss.empty() ? loss_for_strategy(strat) : loss_fn_from_name(cfg.loss);
    tc.beta1 = cfg.beta1;
    tc.beta2 = cfg.beta2;
    tc.eps = cfg.eps;
    tc.weight_decay = cfg.weight_decay;
    tc.pair_cap = cfg.pair_cap;
    tc.seed = cfg.seed;
    tc.validate();

    AmrStore store;
    if (needs_amr) store = load_amr_store(cfg.amr);
    const HashEncoder enc{cfg.hash_dim, derive_seed(cfg.seed, "hash-encoder")};

    auto assemble = [&](const std::string& path) {
        std::vector<QuestionData> out;
        for (const auto& rec : load_sorted_dataset(path)) {
            const auto& by_doc = amrs_of(store, rec.question_id);
            if (have_emb)
                out.push_back(make_question_data(
                    rec, by_doc, strat, mode, cfg.exclude_question_concept,
                    load_embeddings_file(embedding_path(cfg.embeddings, rec.question_id))));
            else
                out.push_back(make_question_data(rec, by_doc, strat, mode,
                                                 cfg.exclude_question_concept, enc));
        }
        return out;
    };
    auto train_qs = assemble(cfg.train_dataset);
    auto dev_qs = assemble(cfg.dev_dataset);
    if (train_qs.empty()) throw Error(ErrorKind::EmptyDataset, "training dataset is empty");
    const std::size_t d = train_qs.front().X.dim;

    GcnModel model = init_model(d, cfg.hidden_dim, cfg.dropout, strat, cfg.seed);
    TrainResult res = train(train_qs, dev_qs, model, tc);

    fs::create_directories(cfg.out_dir);
    const fs::path dir(cfg.out_dir);
    save_checkpoint_file((dir / "model.ckpt").string(), res.best);
    save_checkpoint_file((dir / "final.ckpt").string(), res.final_model);
    auto log = open_out((dir / "train_log.jsonl").string());
    save_train_log(log, res.log);

    nlohmann::json summary = {{"strategy", strategy_name(strat)},
                              {"best_step", res.best_step},
                              {"best_dev_mrr", res.best_dev_mrr},
                              {"final_dev_mrr", res.log.back().dev_mrr},
                              {"untrained_dev_mrr", res.log.front().dev_mrr}};
    std::cout << summary.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// rerank

int cmd_rerank(const CliConfig& cfg) {
    need_file(cfg.model, "--model");
    need_file(cfg.dataset, "--dataset");
    need_value(cfg.out, "--out");
    const GcnModel model = load_checkpoint_file(cfg.model);
    const Strategy strat = model.strategy;
    const NormMode mode = norm_mode_from_name(cfg.norm_mode);

    const bool have_graphs = !cfg.graphs.empty();
    if (have_graphs) need_file(cfg.graphs, "--graphs");
    const bool have_emb = !cfg.embeddings.empty();
    if (have_emb) need_dir(cfg.embeddings, "--embeddings");
    const bool needs_amr = (uses_message_passing(strat) && !have_graphs) ||
                           (uses_amr_features(strat) && !have_emb);
    if (needs_amr) need_file(cfg.amr, "--amr");

    auto recs = load_sorted_dataset(cfg.dataset);
    AmrStore store;
    if (needs_amr) store = load_amr_store(cfg.amr);

    std::map<std::string, DocumentGraph> built;
    if (have_graphs) {
        std::ifstream in(cfg.graphs);
        if (!in) throw Error(ErrorKind::IoError, "cannot read '" + cfg.graphs + "'");
        for (auto& g : load_docgraphs_jsonl(in)) built[g.question_id] = std::move(g);
    }

    const HashEncoder enc{model.feature_dim(), derive_seed(model.seed, "hash-encoder")};
    std::vector<QuestionData> qs;
    for (const auto& rec : recs) {
        const auto& by_doc = amrs_of(store, rec.question_id);
        EmbeddingSet X =
            have_emb ? load_embeddings_file(embedding_path(cfg.embeddings, rec.question_id),
                                            model.feature_dim())
                     : hash_features(rec, by_doc, strat, enc);
        if (have_graphs) {
            auto it = built.find(rec.question_id);
            if (it == built.end())
                throw Error(ErrorKind::SchemaViolation,
                            "no prebuilt graph for question '" + rec.question_id + "'");
            qs.push_back(make_question_data(rec, it->second, std::move(X)));
        } else if (uses_message_passing(strat)) {
            std::vector<AmrGraph> amrs;
            for (const auto& d : rec.docs) {
                auto it = by_doc.find(d.doc_id);
                if (it == by_doc.end())
                    throw Error(ErrorKind::MissingAmrText, "question '" + rec.question_id +
                                                               "': no AMR graph for doc '" +
                                                               d.doc_id + "'");
                amrs.push_back(*it->second);
            }
            qs.push_back(make_question_data(
                rec, build_document_graph(amrs, mode, cfg.exclude_question_concept),
                std::move(X)));
        } else {
            qs.push_back(make_question_data(rec, edge_free_graph(rec, mode), std::move(X)));
        }
    }

    auto scored = parallel_map<ScoreVector>(qs.size(), [&](std::size_t i) {
        ForwardCache cache = forward(model, qs[i].graph, qs[i].X, false);
        return score_nodes(qs[i].graph, cache.final_reps(), qs[i].X.question_vector);
    });
    std::size_t rows = 0;
    for (const auto& s : scored) rows += s.scores.size();
    auto out = open_out(cfg.out);
    save_scores_tsv(out, scored);
    std::cout << "scored " << scored.size() << " questions (" << rows << " rows)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const CliConfig& cfg) {
    need_file(cfg.scores, "--scores");
    need_file(cfg.qrels, "--qrels");
    if (cfg.format != "table" && cfg.format != "json")
        throw Error(ErrorKind::InvalidConfig, "format must be 'table' or 'json'");
    EvalReport rep = eval_scores_file(cfg.scores, cfg.qrels);
    const std::string text =
        cfg.format == "json" ? report_to_json(rep).dump(2) + "\n" : report_table(rep);
    std::cout << text;
    if (!cfg.out.empty()) {
        auto out = open_out(cfg.out);
        out << text;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// report-paths

int cmd_report_paths(const CliConfig& cfg) {
    need_file(cfg.amr, "--amr");
    need_file(cfg.qrels, "--qrels");
    AmrStore store = load_amr_store(cfg.amr);
    std::ifstream qin(cfg.qrels);
    if (!qin) throw Error(ErrorKind::IoError, "cannot read '" + cfg.qrels + "'");
    const auto qrels = load_qrels_tsv(qin);

    std::map<std::size_t, std::array<std::size_t, 2>> hist;  // paths -> {pos, neg}
    double sum[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (const auto& g : store.all) {
        const std::size_t paths = sssp_from_question(g).paths.size();
        auto it = qrels.find(g.question_id);
        const bool positive = it != qrels.end() && it->second.count(g.doc_id) > 0;
        const int side = positive ? 0 : 1;
        hist[paths][side]++;
        sum[side] += static_cast<double>(paths);
        count[side]++;
    }
    const double pos_mean = count[0] ? sum[0] / count[0] : 0.0;
    const double neg_mean = count[1] ? sum[1] / count[1] : 0.0;

    std::ostringstream table;
    table << "sssp_paths\tpositive\tnegative\n";
    for (const auto& [paths, sides] : hist)
        table << paths << "\t" << sides[0] << "\t" << sides[1] << "\n";
    table << std::setprecision(17) << "mean\t" << pos_mean << "\t" << neg_mean << "\n";
    std::cout << table.str();

    if (!cfg.out.empty()) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& [paths, sides] : hist)
            rows.push_back({{"paths", paths}, {"positive", sides[0]}, {"negative", sides[1]}});
        nlohmann::json j = {{"histogram", rows},
                            {"positive_docs", count[0]},
                            {"negative_docs", count[1]},
                            {"positive_mean", pos_mean},
                            {"negative_mean", neg_mean}};
        auto out = open_out(cfg.out);
        out << j.dump(2) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// gen-synthetic

std::string render_penman(const AmrGraph& g) {
    std::map<std::string, std::string> concept_by_id;
    for (const auto& n : g.nodes) concept_by_id[n.id] = n.concept_label;
    std::map<std::string, std::vector<const AmrEdge*>> out_edges;
    for (const auto& e : g.edges) out_edges[e.src].push_back(&e);
    std::set<std::string> emitted;
    std::function<std::string(const std::string&)> rend = [&](const std::string& id) {
        emitted.insert(id);
        std::string s = "(" + id + " / " + concept_by_id.at(id);
        for (const auto* e : out_edges[id]) {
            s += " :" + e->relation + " ";
            s += emitted.count(e->dst) ? e->dst : rend(e->dst);
        }
        s += ")";
        return s;
    };
    return rend(g.nodes.front().id);
}

int cmd_gen_synthetic(const CliConfig& cfg) {
    need_value(cfg.out_dir, "--out-dir");
    SyntheticCorpus c = gen_synthetic(cfg.seed, cfg.n_train, cfg.n_dev,
                                      cfg.docs_per_question, cfg.positives_per_question);
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir / "penman");

    {
        auto out = open_out((dir / "train.jsonl").string());
        save_dataset_jsonl(out, c.train);
    }
    {
        auto out = open_out((dir / "dev.jsonl").string());
        save_dataset_jsonl(out, c.dev);
    }
    {
        auto out = open_out((dir / "amr.jsonl").string());
        save_amr_jsonl(out, c.amrs);
    }
    {
        auto out = open_out((dir / "train_qrels.tsv").string());
        save_qrels_tsv(out, qrels_from_dataset(c.train));
    }
    {
        auto out = open_out((dir / "dev_qrels.tsv").string());
        save_qrels_tsv(out, qrels_from_dataset(c.dev));
    }
    for (const auto& g : c.amrs) {
        auto out = open_out(
            (dir / "penman" / (g.question_id + "__" + g.doc_id + ".penman")).string());
        out << "# ::id " << g.question_id << "/" << g.doc_id << "\n"
            << render_penman(g) << "\n";
    }
    std::cout << "generated " << c.train.size() << " train and " << c.dev.size()
              << " dev questions (" << c.amrs.size() << " AMR graphs)\n";
    return 0;
}

int exit_code_for(ErrorKind k) {
    return k == ErrorKind::InvalidConfig ? 1 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CliConfig cfg;
    CLI::App app{"AMR document-graph reranking toolkit"};
    app.require_subcommand(1);

    try {
        if (auto path = scan_for_config(argc, argv)) load_config_file(*path, cfg);

        std::string config_dummy;
        auto add_config_flag = [&](CLI::App* sub) {
            sub->add_option("--config", config_dummy, "JSON config file (flags override it)");
        };

        auto* parse = app.add_subcommand("parse-amr", "convert Penman files to AMR JSONL");
        add_config_flag(parse);
        parse->add_option("--input-dir", cfg.input_dir, "directory of Penman files");
        parse->add_option("--out", cfg.out, "output JSONL path");

        auto* build = app.add_subcommand("build-graphs", "build document graphs per question");
        add_config_flag(build);
        build->add_option("--dataset", cfg.dataset, "dataset JSONL");
        build->add_option("--amr", cfg.amr, "AMR JSONL");
        build->add_option("--out-dir", cfg.out_dir, "output directory (graphs.jsonl)");
        build->add_option("--norm-mode", cfg.norm_mode, "per_channel_dims | per_row_both");
        build->add_flag("--exclude-question-concept,!--no-exclude-question-concept",
                        cfg.exclude_question_concept, "drop 'question' from shared concepts");

        auto* tr = app.add_subcommand("train", "train a reranker");
        add_config_flag(tr);
        tr->add_option("--strategy", cfg.strategy, "mlp | gcn | g-rag | g-rag-rl");
        tr->add_option("--train-dataset", cfg.train_dataset, "training dataset JSONL");
        tr->add_option("--dev-dataset", cfg.dev_dataset, "dev dataset JSONL");
        tr->add_option("--amr", cfg.amr, "AMR JSONL");
        tr->add_option("--embeddings", cfg.embeddings, "directory of <question_id>.emb files");
        tr->add_option("--out-dir", cfg.out_dir, "output directory");
        tr->add_option("--norm-mode", cfg.norm_mode, "per_channel_dims | per_row_both");
        tr->add_flag("--exclude-question-concept,!--no-exclude-question-concept",
                     cfg.exclude_question_concept, "drop 'question' from shared concepts");
        tr->add_option("--hash-dim", cfg.hash_dim, "hash encoder dimension");
        tr->add_option("--hidden-dim", cfg.hidden_dim, "hidden layer width");
        tr->add_option("--dropout", cfg.dropout, "dropout rate");
        tr->add_option("--loss", cfg.loss, "cross_entropy | pairwise_ranking");
        tr->add_option("--learning-rate", cfg.learning_rate, "peak learning rate");
        tr->add_option("--batch-size", cfg.batch_size, "questions per step");
        tr->add_option("--warmup-steps", cfg.warmup_steps, "linear warmup steps");
        tr->add_option("--total-steps", cfg.total_steps, "total optimization steps");
        tr->add_option("--eval-every", cfg.eval_every, "dev evaluation interval");
        tr->add_option("--beta1", cfg.beta1, "AdamW beta1");
        tr->add_option("--beta2", cfg.beta2, "AdamW beta2");
        tr->add_option("--eps", cfg.eps, "AdamW epsilon");
        tr->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay");
        tr->add_option("--pair-cap", cfg.pair_cap, "ranking-loss pair cap per question");
        tr->add_option("--seed", cfg.seed, "master seed");

        auto* rr = app.add_subcommand("rerank", "score a dataset with a checkpoint");
        add_config_flag(rr);
        rr->add_option("--model", cfg.model, "checkpoint path");
        rr->add_option("--dataset", cfg.dataset, "dataset JSONL");
        rr->add_option("--amr", cfg.amr, "AMR JSONL");
        rr->add_option("--graphs", cfg.graphs, "prebuilt graphs.jsonl");
        rr->add_option("--embeddings", cfg.embeddings, "directory of <question_id>.emb files");
        rr->add_option("--out", cfg.out, "output scores TSV");
        rr->add_option("--norm-mode", cfg.norm_mode, "per_channel_dims | per_row_both");
        rr->add_flag("--exclude-question-concept,!--no-exclude-question-concept",
                     cfg.exclude_question_concept, "drop 'question' from shared concepts");

        auto* ev = app.add_subcommand("eval", "evaluate a scores file against qrels");
        add_config_flag(ev);
        ev->add_option("--scores", cfg.scores, "scores TSV");
        ev->add_option("--qrels", cfg.qrels, "qrels TSV");
        ev->add_option("--format", cfg.format, "table | json");
        ev->add_option("--out", cfg.out, "also write the report here");

        auto* rp = app.add_subcommand("report-paths",
                                      "histogram of SSSP path counts, positives vs negatives");
        add_config_flag(rp);
        rp->add_option("--amr", cfg.amr, "AMR JSONL");
        rp->add_option("--qrels", cfg.qrels, "qrels TSV");
        rp->add_option("--out", cfg.out, "also write the report as JSON here");

        auto* gs = app.add_subcommand("gen-synthetic", "generate a separable synthetic corpus");
        add_config_flag(gs);
        gs->add_option("--seed", cfg.seed, "corpus seed");
        gs->add_option("--n-train", cfg.n_train, "training questions");
        gs->add_option("--n-dev", cfg.n_dev, "dev questions");
        gs->add_option("--docs-per-question", cfg.docs_per_question, "documents per question");
        gs->add_option("--positives-per-question", cfg.positives_per_question,
                       "positive documents per question");
        gs->add_option("--out-dir", cfg.out_dir, "output directory");

        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e);
            return code == 0 ? 0 : 1;
        }

        if (app.got_subcommand(parse)) return cmd_parse_amr(cfg);
        if (app.got_subcommand(build)) return cmd_build_graphs(cfg);
        if (app.got_subcommand(tr)) return cmd_train(cfg);
        if (app.got_subcommand(rr)) return cmd_rerank(cfg);
        if (app.got_subcommand(ev)) return cmd_eval(cfg);
        if (app.got_subcommand(rp)) return cmd_report_paths(cfg);
        if (app.got_subcommand(gs)) return cmd_gen_synthetic(cfg);
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
