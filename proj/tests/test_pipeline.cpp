#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "grag/synthetic.hpp"
#include "grag/train.hpp"
#include "json.hpp"

using namespace grag;
namespace fs = std::filesystem;

namespace {

fs::path cli_path() {
    return fs::read_symlink("/proc/self/exe").parent_path() / "grag";
}

struct RunResult {
    int exit_code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

RunResult run_cli(const fs::path& dir, const std::string& args, const std::string& env = "") {
    const fs::path out = dir / "_stdout.txt", err = dir / "_stderr.txt";
    const std::string cmd = "cd '" + dir.string() + "' && " + (env.empty() ? "" : env + " ") +
                            "'" + cli_path().string() + "' " + args + " > '" + out.string() +
                            "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("grag_pipeline_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

// Order-insensitive view of an AMR collection: node and edge sets per graph.
using CanonGraph = std::pair<std::set<std::pair<std::string, std::string>>,
                             std::set<std::tuple<std::string, std::string, std::string>>>;

std::map<std::pair<std::string, std::string>, CanonGraph> canon_amrs(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::map<std::pair<std::string, std::string>, CanonGraph> out;
    for (const auto& g : load_amr_jsonl(in)) {
        CanonGraph c;
        for (const auto& n : g.nodes) c.first.insert({n.id, n.concept_label});
        for (const auto& e : g.edges) c.second.insert({e.src, e.relation, e.dst});
        out[{g.question_id, g.doc_id}] = std::move(c);
    }
    return out;
}

std::vector<QuestionRecord> read_dataset(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    return load_dataset_jsonl(in);
}

}  // namespace

TEST_CASE("pipeline composes from generation through evaluation") {
    const fs::path dir = fresh_dir("compose");

    auto gen = run_cli(dir,
                       "gen-synthetic --seed 5 --n-train 12 --n-dev 4 "
                       "--docs-per-question 8 --positives-per-question 2 --out-dir corpus");
    REQUIRE(gen.exit_code == 0);
    REQUIRE(read_dataset(dir / "corpus/train.jsonl").size() == 12);
    REQUIRE(read_dataset(dir / "corpus/dev.jsonl").size() == 4);

    // Penman files parse back to the same graphs the generator wrote.
    auto parse = run_cli(dir, "parse-amr --input-dir corpus/penman --out parsed.jsonl");
    REQUIRE(parse.exit_code == 0);
    REQUIRE(canon_amrs(dir / "parsed.jsonl") == canon_amrs(dir / "corpus/amr.jsonl"));

    auto build = run_cli(
        dir, "build-graphs --dataset corpus/train.jsonl --amr parsed.jsonl --out-dir graphs");
    REQUIRE(build.exit_code == 0);
    {
        std::ifstream in(dir / "graphs/graphs.jsonl");
        auto graphs = load_docgraphs_jsonl(in);
        REQUIRE(graphs.size() == 12);
        for (std::size_t i = 1; i < graphs.size(); ++i)
            REQUIRE(graphs[i - 1].question_id < graphs[i].question_id);
    }

    auto tr = run_cli(dir,
                      "train --strategy g-rag --train-dataset corpus/train.jsonl "
                      "--dev-dataset corpus/dev.jsonl --amr parsed.jsonl --out-dir run "
                      "--hash-dim 32 --hidden-dim 16 --learning-rate 1e-3 --warmup-steps 10 "
                      "--total-steps 60 --eval-every 30 --seed 7");
    REQUIRE(tr.exit_code == 0);
    const auto summary = nlohmann::json::parse(tr.out);
    REQUIRE(summary.at("strategy") == "g-rag");
    REQUIRE(summary.at("best_dev_mrr").get<double>() >= 0.0);
    {
        std::ifstream in(dir / "run/train_log.jsonl");
        auto log = load_train_log(in);
        REQUIRE(log.size() == 3);
        REQUIRE(log[0].step == 0);
        REQUIRE(log[2].step == 60);
    }

    auto rr = run_cli(dir,
                      "rerank --model run/model.ckpt --dataset corpus/dev.jsonl "
                      "--amr parsed.jsonl --out scores.tsv");
    REQUIRE(rr.exit_code == 0);
    {
        std::ifstream in(dir / "scores.tsv");
        auto scored = load_scores_tsv(in);
        REQUIRE(scored.size() == 4);
        std::size_t rows = 0;
        for (const auto& s : scored) rows += s.scores.size();
        REQUIRE(rows == 4 * 8);  // sum of docs over questions
    }

    auto ev = run_cli(dir, "eval --scores scores.tsv --qrels corpus/dev_qrels.tsv --format json");
    REQUIRE(ev.exit_code == 0);
    const auto rep = nlohmann::json::parse(ev.out);
    REQUIRE(rep.at("questions") == 4);
    REQUIRE(rep.at("mrr").get<double>() >= 0.0);
    REQUIRE(rep.at("mrr").get<double>() <= 1.0);

    auto table = run_cli(dir, "eval --scores scores.tsv --qrels corpus/dev_qrels.tsv");
    REQUIRE(table.exit_code == 0);
    REQUIRE(table.out.find("MRR") != std::string::npos);
    REQUIRE(table.out.find("TMHits@10") != std::string::npos);

    auto rp = run_cli(dir, "report-paths --amr parsed.jsonl --qrels corpus/train_qrels.tsv");
    REQUIRE(rp.exit_code == 0);
    REQUIRE(rp.out.find("sssp_paths\tpositive\tnegative") != std::string::npos);
    REQUIRE(rp.out.find("mean\t") != std::string::npos);
}

TEST_CASE("rerank bytes are deterministic and ignore thread count") {
    const fs::path dir = fresh_dir("rerank_det");
    REQUIRE(run_cli(dir,
                    "gen-synthetic --seed 9 --n-train 6 --n-dev 3 --docs-per-question 6 "
                    "--positives-per-question 2 --out-dir corpus")
                .exit_code == 0);
    REQUIRE(run_cli(dir,
                    "train --strategy g-rag-rl --train-dataset corpus/train.jsonl "
                    "--dev-dataset corpus/dev.jsonl --amr corpus/amr.jsonl --out-dir run "
                    "--hash-dim 32 --hidden-dim 8 --warmup-steps 5 --total-steps 20 "
                    "--eval-every 20 --seed 1")
                .exit_code == 0);

    const std::string rerank =
        "rerank --model run/model.ckpt --dataset corpus/dev.jsonl --amr corpus/amr.jsonl";
    REQUIRE(run_cli(dir, rerank + " --out a.tsv").exit_code == 0);
    REQUIRE(run_cli(dir, rerank + " --out b.tsv", "GRAG_THREADS=1").exit_code == 0);
    auto c = run_cli(dir, rerank + " --out c.tsv", "GRAG_THREADS=5");
    REQUIRE(c.exit_code == 0);
    REQUIRE(slurp(dir / "a.tsv") == slurp(dir / "c.tsv"));
    REQUIRE(slurp(dir / "a.tsv") == slurp(dir / "b.tsv"));

    // prebuilt graphs give the same scores as building from AMR on the fly
    REQUIRE(run_cli(dir,
                    "build-graphs --dataset corpus/dev.jsonl --amr corpus/amr.jsonl "
                    "--out-dir graphs")
                .exit_code == 0);
    REQUIRE(run_cli(dir, rerank + " --graphs graphs/graphs.jsonl --out d.tsv").exit_code == 0);
    REQUIRE(slurp(dir / "a.tsv") == slurp(dir / "d.tsv"));
}

TEST_CASE("rerank scores match an in-process forward oracle") {
    const fs::path dir = fresh_dir("oracle");
    REQUIRE(run_cli(dir,
                    "gen-synthetic --seed 17 --n-train 5 --n-dev 2 --docs-per-question 7 "
                    "--positives-per-question 2 --out-dir corpus")
                .exit_code == 0);
    REQUIRE(run_cli(dir,
                    "train --strategy g-rag --train-dataset corpus/train.jsonl "
                    "--dev-dataset corpus/dev.jsonl --amr corpus/amr.jsonl --out-dir run "
                    "--hash-dim 24 --hidden-dim 8 --warmup-steps 5 --total-steps 30 "
                    "--eval-every 30 --seed 21")
                .exit_code == 0);
    REQUIRE(run_cli(dir,
                    "rerank --model run/model.ckpt --dataset corpus/dev.jsonl "
                    "--amr corpus/amr.jsonl --out scores.tsv")
                .exit_code == 0);

    std::ifstream sin(dir / "scores.tsv");
    auto scored = load_scores_tsv(sin);
    REQUIRE(scored.size() == 2);

    const GcnModel model = load_checkpoint_file((dir / "run/model.ckpt").string());
    auto recs = read_dataset(dir / "corpus/dev.jsonl");
    std::ifstream ain(dir / "corpus/amr.jsonl");
    auto amrs = load_amr_jsonl(ain);

    const QuestionRecord& rec = recs.front();
    std::map<std::string, const AmrGraph*> by_doc;
    for (const auto& g : amrs)
        if (g.question_id == rec.question_id) by_doc[g.doc_id] = &g;

    const HashEncoder enc{model.feature_dim(), derive_seed(model.seed, "hash-encoder")};
    QuestionData q = make_question_data(rec, by_doc, model.strategy,
                                        NormMode::per_channel_dims, false, enc);
    ForwardCache cache = forward(model, q.graph, q.X, false);
    ScoreVector expect = score_nodes(q.graph, cache.final_reps(), q.X.question_vector);

    const auto& got = scored.front().question_id == rec.question_id
                          ? scored.front()
                          : scored.back();
    REQUIRE(got.question_id == rec.question_id);
    REQUIRE(got.scores.size() == expect.scores.size());
    for (const auto& [doc, s] : expect.scores) {
        REQUIRE(got.scores.count(doc) == 1);
        REQUIRE(got.scores.at(doc) == s);  // 17-digit TSV round trip is exact
    }
}

TEST_CASE("config file drives commands and flags override it") {
    const fs::path dir = fresh_dir("config");
    write_file(dir / "gen.json",
               R"({"seed": 3, "n_train": 3, "n_dev": 2, "docs_per_question": 5,
                   "positives_per_question": 1, "out_dir": "corpus"})");
    REQUIRE(run_cli(dir, "gen-synthetic --config gen.json").exit_code == 0);
    REQUIRE(read_dataset(dir / "corpus/train.jsonl").size() == 3);

    // explicit flag wins over the config value
    REQUIRE(run_cli(dir, "gen-synthetic --config gen.json --n-train 5 --out-dir corpus2")
                .exit_code == 0);
    REQUIRE(read_dataset(dir / "corpus2/train.jsonl").size() == 5);

    write_file(dir / "typo.json", R"({"n_trian": 3, "out_dir": "x"})");
    auto bad = run_cli(dir, "gen-synthetic --config typo.json");
    REQUIRE(bad.exit_code == 1);
    REQUIRE(bad.err.find("n_trian") != std::string::npos);

    write_file(dir / "badtype.json", R"({"n_train": "three"})");
    REQUIRE(run_cli(dir, "gen-synthetic --config badtype.json --out-dir y").exit_code == 1);

    REQUIRE(run_cli(dir, "gen-synthetic --config missing.json").exit_code == 1);

    write_file(dir / "notjson.json", "{");
    REQUIRE(run_cli(dir, "gen-synthetic --config notjson.json").exit_code == 2);
}

TEST_CASE("validation failures exit 1, runtime failures exit 2") {
    const fs::path dir = fresh_dir("exits");
    REQUIRE(run_cli(dir, "train").exit_code == 1);                    // missing inputs
    REQUIRE(run_cli(dir, "train --strategy warp").exit_code == 1);    // unknown strategy
    REQUIRE(run_cli(dir, "no-such-command").exit_code == 1);
    REQUIRE(run_cli(dir, "rerank --model gone.ckpt --dataset gone.jsonl --out o.tsv")
                .exit_code == 1);

    // strategy-feature compatibility: g-rag needs AMR input
    REQUIRE(run_cli(dir,
                    "gen-synthetic --seed 2 --n-train 2 --n-dev 1 --docs-per-question 4 "
                    "--positives-per-question 1 --out-dir corpus")
                .exit_code == 0);
    auto no_amr = run_cli(dir,
                          "train --strategy g-rag --train-dataset corpus/train.jsonl "
                          "--dev-dataset corpus/dev.jsonl --out-dir run --total-steps 10 "
                          "--eval-every 10 --warmup-steps 2");
    REQUIRE(no_amr.exit_code == 1);
    REQUIRE(no_amr.err.find("--amr") != std::string::npos);

    // mlp genuinely runs without any AMR input
    REQUIRE(run_cli(dir,
                    "train --strategy mlp --train-dataset corpus/train.jsonl "
                    "--dev-dataset corpus/dev.jsonl --out-dir mlprun --total-steps 10 "
                    "--eval-every 10 --warmup-steps 2 --hash-dim 16")
                .exit_code == 0);

    // malformed Penman input: runtime error naming the file
    fs::create_directories(dir / "pen");
    write_file(dir / "pen/q__d.penman", "(a / thing :r (b / other\n");
    auto mal = run_cli(dir, "parse-amr --input-dir pen --out out.jsonl");
    REQUIRE(mal.exit_code == 2);
    REQUIRE(mal.err.find("q__d.penman") != std::string::npos);

    // dataset doc without an AMR graph: error names the doc id
    auto recs = read_dataset(dir / "corpus/train.jsonl");
    std::ifstream ain(dir / "corpus/amr.jsonl");
    auto amrs = load_amr_jsonl(ain);
    std::vector<AmrGraph> pruned;
    for (const auto& g : amrs)
        if (!(g.question_id == recs[0].question_id && g.doc_id == recs[0].docs[2].doc_id))
            pruned.push_back(g);
    {
        std::ofstream out(dir / "pruned.jsonl");
        save_amr_jsonl(out, pruned);
    }
    auto missing = run_cli(dir,
                           "build-graphs --dataset corpus/train.jsonl --amr pruned.jsonl "
                           "--out-dir graphs");
    REQUIRE(missing.exit_code == 2);
    REQUIRE(missing.err.find(recs[0].docs[2].doc_id) != std::string::npos);
}

TEST_CASE("build-graphs warns when a question has no edges") {
    const fs::path dir = fresh_dir("edgeless");
    // two docs with entirely disjoint concepts and no question node
    QuestionRecord rec;
    rec.question_id = "q0";
    rec.question_text = "anything";
    rec.docs = {{"a", "alpha text", false}, {"b", "beta text", true}};
    {
        std::ofstream out(dir / "data.jsonl");
        save_dataset_jsonl(out, {rec});
    }
    AmrGraph ga, gb;
    ga.question_id = gb.question_id = "q0";
    ga.doc_id = "a";
    gb.doc_id = "b";
    ga.nodes = {{"x0", "alpha"}};
    gb.nodes = {{"y0", "beta"}};
    {
        std::ofstream out(dir / "amr.jsonl");
        save_amr_jsonl(out, {ga, gb});
    }
    auto r = run_cli(dir, "build-graphs --dataset data.jsonl --amr amr.jsonl --out-dir g");
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.err.find("zero edges") != std::string::npos);
    REQUIRE(r.err.find("q0") != std::string::npos);

    std::ifstream in(dir / "g/graphs.jsonl");
    auto graphs = load_docgraphs_jsonl(in);
    REQUIRE(graphs.size() == 1);
    REQUIRE(graphs[0].adjacency.empty());
}

TEST_CASE("report-paths buckets docs without a question node at zero") {
    const fs::path dir = fresh_dir("paths");
    AmrGraph with, without;
    with.question_id = without.question_id = "q0";
    with.doc_id = "a";
    without.doc_id = "b";
    with.nodes = {{"n0", "question"}, {"n1", "t"}};
    with.edges = {{"n0", "r", "n1"}};
    without.nodes = {{"m0", "plain"}};
    {
        std::ofstream out(dir / "amr.jsonl");
        save_amr_jsonl(out, {with, without});
    }
    write_file(dir / "qrels.tsv", "q0\ta\t1\n");
    auto r = run_cli(dir, "report-paths --amr amr.jsonl --qrels qrels.tsv --out rep.json");
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("0\t0\t1") != std::string::npos);  // no-question doc in bucket 0
    REQUIRE(r.out.find("1\t1\t0") != std::string::npos);

    const auto j = nlohmann::json::parse(slurp(dir / "rep.json"));
    REQUIRE(j.at("positive_mean").get<double>() == 1.0);
    REQUIRE(j.at("negative_mean").get<double>() == 0.0);
    REQUIRE(j.at("positive_docs") == 1);
    REQUIRE(j.at("negative_docs") == 1);

    // empty input: header and mean rows only
    write_file(dir / "empty.jsonl", "");
    auto e = run_cli(dir, "report-paths --amr empty.jsonl --qrels qrels.tsv");
    REQUIRE(e.exit_code == 0);
    REQUIRE(e.out == "sssp_paths\tpositive\tnegative\nmean\t0\t0\n");
}

TEST_CASE("training CLI is reproducible for a fixed seed") {
    const fs::path dir = fresh_dir("repro");
    REQUIRE(run_cli(dir,
                    "gen-synthetic --seed 23 --n-train 6 --n-dev 2 --docs-per-question 6 "
                    "--positives-per-question 2 --out-dir corpus")
                .exit_code == 0);
    const std::string train_cmd =
        "train --strategy g-rag-rl --train-dataset corpus/train.jsonl "
        "--dev-dataset corpus/dev.jsonl --amr corpus/amr.jsonl --hash-dim 32 "
        "--hidden-dim 8 --warmup-steps 5 --total-steps 20 --eval-every 10 --seed 77";
    REQUIRE(run_cli(dir, train_cmd + " --out-dir r1").exit_code == 0);
    REQUIRE(run_cli(dir, train_cmd + " --out-dir r2").exit_code == 0);
    REQUIRE(slurp(dir / "r1/model.ckpt") == slurp(dir / "r2/model.ckpt"));
    REQUIRE(slurp(dir / "r1/final.ckpt") == slurp(dir / "r2/final.ckpt"));
    REQUIRE(slurp(dir / "r1/train_log.jsonl") == slurp(dir / "r2/train_log.jsonl"));
    REQUIRE(slurp(dir / "r1/train_log.jsonl").find("\"step\":0") != std::string::npos);
}
