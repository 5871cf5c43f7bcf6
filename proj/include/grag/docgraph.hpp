#pragma once
// Per-question document graph: one vertex per retrieved document, an edge
// whenever two documents' AMRs share a concept, and 2-channel edge features
// (# common concepts, # common directed concept triples) with configurable
// normalization.

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include "grag/amr.hpp"
#include "grag/common.hpp"
#include "json.hpp"

namespace grag {

enum class NormMode { per_channel_dims, per_row_both };

inline const char* norm_mode_name(NormMode m) {
    return m == NormMode::per_channel_dims ? "per_channel_dims" : "per_row_both";
}

inline NormMode norm_mode_from_name(const std::string& s) {
    if (s == "per_channel_dims") return NormMode::per_channel_dims;
    if (s == "per_row_both") return NormMode::per_row_both;
    throw Error(ErrorKind::InvalidConfig, "unknown norm_mode '" + s + "'");
}

struct RawEdgeFeature {
    std::int64_t common_nodes = 0;
    std::int64_t common_edges = 0;
    bool operator==(const RawEdgeFeature&) const = default;
};

struct NormEdgeFeature {
    double f1 = 0.0;
    double f2 = 0.0;
    bool operator==(const NormEdgeFeature&) const = default;
};

// Undirected adjacency with symmetric integer raw features; normalized
// features are stored per ordered pair because the two normalizations run
// along different dimensions. Isolated vertices stay in doc_ids (they are
// still scored) but drop out of active_nodes and message passing.
struct DocumentGraph {
    std::string question_id;
    std::vector<std::string> doc_ids;
    NormMode norm_mode = NormMode::per_channel_dims;
    std::vector<std::pair<std::size_t, std::size_t>> adjacency;          // i < j, sorted
    std::map<std::pair<std::size_t, std::size_t>, RawEdgeFeature> raw;   // keyed i < j
    std::map<std::pair<std::size_t, std::size_t>, NormEdgeFeature> norm; // all ordered pairs
    std::vector<std::size_t> active_nodes;                               // ascending
    std::vector<std::vector<std::size_t>> neighbors;  // per vertex, sorted by neighbor doc_id

    std::size_t size() const { return doc_ids.size(); }

    const RawEdgeFeature* raw_at(std::size_t i, std::size_t j) const {
        auto it = raw.find({std::min(i, j), std::max(i, j)});
        return it == raw.end() ? nullptr : &it->second;
    }
    // features on the directed message u -> v
    NormEdgeFeature norm_at(std::size_t u, std::size_t v) const {
        auto it = norm.find({u, v});
        return it == norm.end() ? NormEdgeFeature{} : it->second;
    }
};

// ---------------------------------------------------------------------------
// Pairwise overlap

namespace detail {

struct AmrOverlayView {
    std::unordered_set<std::string> concepts;
    std::set<std::tuple<std::string, std::string, std::string>> triples;
};

inline AmrOverlayView overlay_view(const AmrGraph& g, bool exclude_question_concept) {
    AmrOverlayView v;
    std::unordered_map<std::string, const std::string*> concept_by_id;
    for (const auto& n : g.nodes) {
        concept_by_id[n.id] = &n.concept_label;
        if (exclude_question_concept && n.concept_label == "question") continue;
        v.concepts.insert(n.concept_label);
    }
    for (const auto& e : g.edges) {
        const std::string& s = *concept_by_id.at(e.src);
        const std::string& d = *concept_by_id.at(e.dst);
        if (exclude_question_concept && (s == "question" || d == "question")) continue;
        v.triples.emplace(s, e.relation, d);
    }
    return v;
}

inline RawEdgeFeature overlay_counts(const AmrOverlayView& a, const AmrOverlayView& b) {
    RawEdgeFeature f;
    const auto& small = a.concepts.size() <= b.concepts.size() ? a : b;
    const auto& large = a.concepts.size() <= b.concepts.size() ? b : a;
    for (const auto& c : small.concepts) f.common_nodes += large.concepts.count(c);
    const auto& ts = a.triples.size() <= b.triples.size() ? a : b;
    const auto& tl = a.triples.size() <= b.triples.size() ? b : a;
    for (const auto& t : ts.triples) f.common_edges += tl.triples.count(t);
    return f;
}

}  // namespace detail

// Channel 1 counts distinct shared concept labels; channel 2 counts distinct
// shared directed (src_concept, relation, dst_concept) triples.
inline RawEdgeFeature common_counts(const AmrGraph& g_i, const AmrGraph& g_j,
                                    bool exclude_question_concept = false) {
    return detail::overlay_counts(detail::overlay_view(g_i, exclude_question_concept),
                                  detail::overlay_view(g_j, exclude_question_concept));
}

// ---------------------------------------------------------------------------
// Normalization

// per_channel_dims: channel 1 over the first index (column sums), channel 2
// over the second (row sums); per_row_both: both channels over the second.
// Zero denominators leave the entry at 0. Denominators are exact integer
// sums, so results do not depend on summation order.
inline std::map<std::pair<std::size_t, std::size_t>, NormEdgeFeature> normalize_edge_features(
    const std::map<std::pair<std::size_t, std::size_t>, RawEdgeFeature>& raw, std::size_t n,
    NormMode mode) {
    std::vector<std::int64_t> row1(n, 0), row2(n, 0);  // symmetric raw: column sum == row sum
    for (const auto& [ij, f] : raw) {
        auto [i, j] = ij;
        row1[i] += f.common_nodes;
        row1[j] += f.common_nodes;
        row2[i] += f.common_edges;
        row2[j] += f.common_edges;
    }
    std::map<std::pair<std::size_t, std::size_t>, NormEdgeFeature> out;
    for (const auto& [ij, f] : raw) {
        auto [i, j] = ij;
        for (auto [u, v] : {std::pair{i, j}, std::pair{j, i}}) {
            NormEdgeFeature e;
            // E_{uv1}: denominator sums over the first index -> column v
            std::int64_t den1 = mode == NormMode::per_channel_dims ? row1[v] : row1[u];
            std::int64_t den2 = row2[u];  // both modes: second index -> row u
            if (den1 > 0) e.f1 = static_cast<double>(f.common_nodes) / static_cast<double>(den1);
            if (den2 > 0) e.f2 = static_cast<double>(f.common_edges) / static_cast<double>(den2);
            out[{u, v}] = e;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Construction

inline DocumentGraph build_document_graph(const std::vector<AmrGraph>& amrs,
                                          NormMode mode = NormMode::per_channel_dims,
                                          bool exclude_question_concept = false) {
    if (amrs.empty()) throw Error(ErrorKind::EmptyDataset, "no AMR graphs for document graph");
    DocumentGraph g;
    g.question_id = amrs.front().question_id;
    g.norm_mode = mode;
    std::unordered_set<std::string> seen_docs;
    for (const auto& a : amrs) {
        if (a.question_id != g.question_id)
            throw Error(ErrorKind::MixedQuestionIds,
                        "graphs for '" + g.question_id + "' and '" + a.question_id + "' mixed");
        if (!seen_docs.insert(a.doc_id).second)
            throw Error(ErrorKind::DuplicateDocId, "doc '" + a.doc_id + "' appears twice");
        g.doc_ids.push_back(a.doc_id);
    }
    std::size_t n = amrs.size();
    std::vector<detail::AmrOverlayView> views;
    views.reserve(n);
    for (const auto& a : amrs) views.push_back(detail::overlay_view(a, exclude_question_concept));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            RawEdgeFeature f = detail::overlay_counts(views[i], views[j]);
            if (f.common_nodes >= 1) {
                g.adjacency.emplace_back(i, j);
                g.raw[{i, j}] = f;
            }
        }
    g.norm = normalize_edge_features(g.raw, n, mode);
    g.neighbors.assign(n, {});
    for (const auto& [i, j] : g.adjacency) {
        g.neighbors[i].push_back(j);
        g.neighbors[j].push_back(i);
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::sort(g.neighbors[i].begin(), g.neighbors[i].end(),
                  [&](std::size_t a, std::size_t b) { return g.doc_ids[a] < g.doc_ids[b]; });
        if (!g.neighbors[i].empty()) g.active_nodes.push_back(i);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Serialization: one JSON object per question; each undirected edge appears
// as two directed rows because f1/f2 are direction-dependent.

inline nlohmann::json docgraph_to_json(const DocumentGraph& g) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [uv, e] : g.norm) {
        auto [u, v] = uv;
        const RawEdgeFeature* f = g.raw_at(u, v);
        edges.push_back({{"i", u},
                         {"j", v},
                         {"common_nodes", f->common_nodes},
                         {"common_edges", f->common_edges},
                         {"f1", e.f1},
                         {"f2", e.f2}});
    }
    return {{"question_id", g.question_id}, {"doc_ids", g.doc_ids}, {"edges", edges}};
}

inline DocumentGraph docgraph_from_json(const nlohmann::json& j) {
    DocumentGraph g;
    try {
        g.question_id = j.at("question_id").get<std::string>();
        g.doc_ids = j.at("doc_ids").get<std::vector<std::string>>();
        std::size_t n = g.doc_ids.size();
        for (const auto& row : j.at("edges")) {
            std::size_t u = row.at("i").get<std::size_t>();
            std::size_t v = row.at("j").get<std::size_t>();
            if (u >= n || v >= n || u == v)
                throw Error(ErrorKind::SchemaViolation, "edge index out of range");
            RawEdgeFeature f{row.at("common_nodes").get<std::int64_t>(),
                             row.at("common_edges").get<std::int64_t>()};
            auto key = std::pair{std::min(u, v), std::max(u, v)};
            auto it = g.raw.find(key);
            if (it == g.raw.end())
                g.raw[key] = f;
            else if (!(it->second == f))
                throw Error(ErrorKind::SchemaViolation, "asymmetric raw features");
            g.norm[{u, v}] = {row.at("f1").get<double>(), row.at("f2").get<double>()};
        }
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorKind::SchemaViolation, std::string("document graph: ") + ex.what());
    }
    for (const auto& [uv, e] : g.norm)
        if (!g.norm.count({uv.second, uv.first}))
            throw Error(ErrorKind::SchemaViolation, "missing reverse edge row");
    for (const auto& [ij, f] : g.raw) g.adjacency.push_back(ij);
    std::size_t n = g.doc_ids.size();
    g.neighbors.assign(n, {});
    for (const auto& [i, j] : g.adjacency) {
        g.neighbors[i].push_back(j);
        g.neighbors[j].push_back(i);
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::sort(g.neighbors[i].begin(), g.neighbors[i].end(),
                  [&](std::size_t a, std::size_t b) { return g.doc_ids[a] < g.doc_ids[b]; });
        if (!g.neighbors[i].empty()) g.active_nodes.push_back(i);
    }
    return g;
}

inline void save_docgraphs_jsonl(std::ostream& out, const std::vector<DocumentGraph>& graphs) {
    for (const auto& g : graphs) out << docgraph_to_json(g).dump() << "\n";
}

inline std::vector<DocumentGraph> load_docgraphs_jsonl(std::istream& in) {
    std::vector<DocumentGraph> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw Error(ErrorKind::MalformedLine, "line " + std::to_string(line_no) + ": not valid JSON");
        out.push_back(docgraph_from_json(j));
    }
    return out;
}

}  // namespace grag
