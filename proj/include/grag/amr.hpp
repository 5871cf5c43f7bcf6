#pragma once
// AMR graphs: Penman parsing, JSONL ingestion, and the single-source shortest
// paths from the "question" concept that feed the AMR-augmented node features.

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "grag/common.hpp"
#include "json.hpp"

namespace grag {

struct AmrNode {
    std::string id;
    std::string concept_label;
    bool operator==(const AmrNode&) const = default;
};

struct AmrEdge {
    std::string src;
    std::string relation;
    std::string dst;
    bool operator==(const AmrEdge&) const = default;
};

// One parsed AMR per question-document pair. Directed, labeled, possibly
// disconnected; self-loops are rejected at validation.
struct AmrGraph {
    std::string question_id;
    std::string doc_id;
    std::vector<AmrNode> nodes;
    std::vector<AmrEdge> edges;

    void validate() const {
        std::unordered_set<std::string> ids;
        for (const auto& n : nodes) {
            if (n.concept_label.empty())
                throw Error(ErrorKind::SchemaViolation, "empty concept on node '" + n.id + "'");
            if (!ids.insert(n.id).second)
                throw Error(ErrorKind::SchemaViolation, "duplicate node id '" + n.id + "'");
        }
        for (const auto& e : edges) {
            if (e.relation.empty())
                throw Error(ErrorKind::SchemaViolation, "empty relation on edge " + e.src + "->" + e.dst);
            if (!ids.count(e.src))
                throw Error(ErrorKind::SchemaViolation, "edge source '" + e.src + "' is not a node");
            if (!ids.count(e.dst))
                throw Error(ErrorKind::SchemaViolation, "edge target '" + e.dst + "' is not a node");
            if (e.src == e.dst)
                throw Error(ErrorKind::SchemaViolation, "self-loop on '" + e.src + "'");
        }
    }

    const std::string* concept_of(const std::string& node_id) const {
        for (const auto& n : nodes)
            if (n.id == node_id) return &n.concept_label;
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// Penman parsing

namespace detail {

struct PenmanToken {
    enum Type { LParen, RParen, Slash, Relation, Atom, Quoted } type;
    std::string text;
};

inline std::vector<PenmanToken> penman_tokenize(std::string_view text) {
    std::vector<PenmanToken> out;
    std::size_t i = 0;
    auto issep = [](char c) {
        return c == '(' || c == ')' || c == '/' || std::isspace(static_cast<unsigned char>(c));
    };
    while (i < text.size()) {
        char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (c == '(') {
            out.push_back({PenmanToken::LParen, "("});
            ++i;
        } else if (c == ')') {
            out.push_back({PenmanToken::RParen, ")"});
            ++i;
        } else if (c == '/') {
            out.push_back({PenmanToken::Slash, "/"});
            ++i;
        } else if (c == '"') {
            std::size_t j = i + 1;
            std::string s;
            while (j < text.size() && text[j] != '"') {
                if (text[j] == '\\' && j + 1 < text.size()) ++j;
                s += text[j++];
            }
            if (j >= text.size())
                throw Error(ErrorKind::MalformedLine, "unterminated string literal");
            out.push_back({PenmanToken::Quoted, s});
            i = j + 1;
        } else if (c == ':') {
            std::size_t j = i + 1;
            while (j < text.size() && !issep(text[j])) ++j;
            out.push_back({PenmanToken::Relation, std::string(text.substr(i + 1, j - i - 1))});
            i = j;
        } else {
            std::size_t j = i;
            while (j < text.size() && !issep(text[j]) && text[j] != '"') ++j;
            out.push_back({PenmanToken::Atom, std::string(text.substr(i, j - i))});
            i = j;
        }
    }
    return out;
}

// Variable-shaped atoms (single lowercase letter plus optional digits, e.g. p,
// x2, z17) used as edge targets are reentrancies; anything else is a constant.
inline bool variable_shaped(const std::string& s) {
    if (s.empty() || !std::islower(static_cast<unsigned char>(s[0]))) return false;
    for (std::size_t i = 1; i < s.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
}

struct PenmanParser {
    const std::vector<PenmanToken>& toks;
    std::size_t pos = 0;
    std::vector<std::pair<std::string, std::string>> defs;           // var -> concept, in order
    std::vector<std::tuple<std::string, std::string, PenmanToken>> links;  // src var, rel, target

    const PenmanToken& peek() const {
        if (pos >= toks.size()) throw Error(ErrorKind::UnbalancedParens, "unexpected end of input");
        return toks[pos];
    }
    PenmanToken take() {
        const PenmanToken& t = peek();
        ++pos;
        return t;
    }

    // node := '(' var '/' concept (rel target)* ')'
    std::string parse_node() {
        if (take().type != PenmanToken::LParen)
            throw Error(ErrorKind::MalformedLine, "expected '('");
        PenmanToken var = take();
        if (var.type != PenmanToken::Atom)
            throw Error(ErrorKind::MalformedLine, "expected variable after '('");
        if (take().type != PenmanToken::Slash)
            throw Error(ErrorKind::MalformedLine, "expected '/' after variable '" + var.text + "'");
        PenmanToken concept_tok = take();
        if (concept_tok.type != PenmanToken::Atom && concept_tok.type != PenmanToken::Quoted)
            throw Error(ErrorKind::MalformedLine, "expected concept after '/'");
        for (const auto& [v, c] : defs)
            if (v == var.text)
                throw Error(ErrorKind::DuplicateVariableDefinition,
                            "variable '" + var.text + "' bound to '" + c + "' and '" + concept_tok.text + "'");
        defs.emplace_back(var.text, concept_tok.text);
        while (peek().type != PenmanToken::RParen) {
            PenmanToken rel = take();
            if (rel.type != PenmanToken::Relation)
                throw Error(ErrorKind::MalformedLine, "expected relation, got '" + rel.text + "'");
            if (rel.text.empty())
                throw Error(ErrorKind::MalformedLine, "empty relation name");
            const PenmanToken& t = peek();
            if (t.type == PenmanToken::LParen) {
                std::string child = parse_node();
                links.emplace_back(var.text, rel.text, PenmanToken{PenmanToken::Atom, child});
                // a nested node always resolves as a reentrancy to its own var
                std::get<2>(links.back()).type = PenmanToken::Relation;  // marker: resolved var
            } else if (t.type == PenmanToken::Atom || t.type == PenmanToken::Quoted) {
                links.emplace_back(var.text, rel.text, take());
            } else {
                throw Error(ErrorKind::MalformedLine, "expected edge target after :" + rel.text);
            }
        }
        take();  // ')'
        return var.text;
    }
};

}  // namespace detail

// Parses one Penman s-expression into an AmrGraph. Bare-atom targets resolve
// to an already- or later-defined variable when variable-shaped; other atoms
// and quoted strings become constant nodes with synthesized ids. Inverse
// relations (-of) are kept as written.
inline AmrGraph parse_penman(std::string_view text, const std::string& question_id,
                             const std::string& doc_id) {
    auto toks = detail::penman_tokenize(text);
    if (toks.empty()) throw Error(ErrorKind::EmptyGraph, "no tokens in input");
    {
        long depth = 0;
        for (const auto& t : toks) {
            if (t.type == detail::PenmanToken::LParen) ++depth;
            if (t.type == detail::PenmanToken::RParen) --depth;
            if (depth < 0) throw Error(ErrorKind::UnbalancedParens, "')' without matching '('");
        }
        if (depth != 0) throw Error(ErrorKind::UnbalancedParens, "unclosed '('");
    }
    detail::PenmanParser parser{toks};
    parser.parse_node();
    if (parser.pos != toks.size())
        throw Error(ErrorKind::MalformedLine, "trailing tokens after graph");

    AmrGraph g;
    g.question_id = question_id;
    g.doc_id = doc_id;
    std::unordered_set<std::string> vars;
    for (const auto& [v, c] : parser.defs) {
        g.nodes.push_back({v, c});
        vars.insert(v);
    }
    std::size_t const_counter = 0;
    auto fresh_const_id = [&] {
        std::string id;
        do {
            id = "k" + std::to_string(const_counter++);
        } while (vars.count(id));
        vars.insert(id);
        return id;
    };
    for (const auto& [src, rel, target] : parser.links) {
        if (target.type == detail::PenmanToken::Relation) {  // nested node, already defined
            g.edges.push_back({src, rel, target.text});
        } else if (target.type == detail::PenmanToken::Quoted) {
            std::string id = fresh_const_id();
            g.nodes.push_back({id, target.text});
            g.edges.push_back({src, rel, id});
        } else if (vars.count(target.text) &&
                   std::any_of(parser.defs.begin(), parser.defs.end(),
                               [&](const auto& d) { return d.first == target.text; })) {
            g.edges.push_back({src, rel, target.text});  // reentrancy
        } else if (detail::variable_shaped(target.text)) {
            throw Error(ErrorKind::DanglingReentrancy,
                        "variable '" + target.text + "' used but never defined");
        } else {
            std::string id = fresh_const_id();
            g.nodes.push_back({id, target.text});
            g.edges.push_back({src, rel, id});
        }
    }
    g.validate();
    return g;
}

// ---------------------------------------------------------------------------
// JSONL schema:
// {"question_id": str, "doc_id": str, "nodes": [{"id","concept"}],
//  "edges": [{"src","rel","dst"}]}

inline nlohmann::json amr_to_json(const AmrGraph& g) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : g.nodes) nodes.push_back({{"id", n.id}, {"concept", n.concept_label}});
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : g.edges)
        edges.push_back({{"src", e.src}, {"rel", e.relation}, {"dst", e.dst}});
    return {{"question_id", g.question_id},
            {"doc_id", g.doc_id},
            {"nodes", nodes},
            {"edges", edges}};
}

inline AmrGraph amr_from_json(const nlohmann::json& j, std::size_t line_no) {
    auto field = [&](const nlohmann::json& obj, const char* name) -> const nlohmann::json& {
        auto it = obj.find(name);
        if (it == obj.end())
            throw Error(ErrorKind::SchemaViolation,
                        "line " + std::to_string(line_no) + ": missing field '" + name + "'");
        return *it;
    };
    AmrGraph g;
    try {
        g.question_id = field(j, "question_id").get<std::string>();
        g.doc_id = field(j, "doc_id").get<std::string>();
        for (const auto& n : field(j, "nodes"))
            g.nodes.push_back({field(n, "id").get<std::string>(), field(n, "concept").get<std::string>()});
        for (const auto& e : field(j, "edges"))
            g.edges.push_back({field(e, "src").get<std::string>(), field(e, "rel").get<std::string>(),
                               field(e, "dst").get<std::string>()});
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorKind::SchemaViolation,
                    "line " + std::to_string(line_no) + ": " + ex.what());
    }
    try {
        g.validate();
    } catch (const Error& ex) {
        throw Error(ErrorKind::SchemaViolation, "line " + std::to_string(line_no) + ": " + ex.what());
    }
    return g;
}

inline std::vector<AmrGraph> load_amr_jsonl(std::istream& in) {
    std::vector<AmrGraph> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw Error(ErrorKind::MalformedLine, "line " + std::to_string(line_no) + ": not valid JSON");
        out.push_back(amr_from_json(j, line_no));
    }
    return out;
}

inline void save_amr_jsonl(std::ostream& out, const std::vector<AmrGraph>& graphs) {
    for (const auto& g : graphs) out << amr_to_json(g).dump() << "\n";
}

// ---------------------------------------------------------------------------
// SSSP extraction

// Maximal shortest paths from the "question" node, as concept sequences.
struct SsspPathSet {
    std::string source_concept = "question";
    std::vector<std::vector<std::string>> paths;
};

// Concepts along the SSSP paths, first occurrence only, space-joined.
struct AmrAugmentedText {
    std::vector<std::string> tokens;
    std::string rendered;
};

// BFS from the lexicographically smallest node whose concept is exactly
// "question", treating edges as undirected. Shortest-path ties pick the
// lexicographically smallest predecessor; only maximal paths are kept (a path
// whose node-id set is contained in another's is dropped).
inline SsspPathSet sssp_from_question(const AmrGraph& g) {
    SsspPathSet out;
    const std::string* source = nullptr;
    for (const auto& n : g.nodes)
        if (n.concept_label == "question" && (!source || n.id < *source)) source = &n.id;
    if (!source) return out;

    std::map<std::string, std::vector<std::string>> nbrs;
    for (const auto& n : g.nodes) nbrs[n.id];
    for (const auto& e : g.edges) {
        nbrs[e.src].push_back(e.dst);
        nbrs[e.dst].push_back(e.src);
    }
    for (auto& [id, ns] : nbrs) {
        std::sort(ns.begin(), ns.end());
        ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
    }

    std::map<std::string, std::size_t> dist;
    std::map<std::string, std::string> parent;
    std::queue<std::string> frontier;
    dist[*source] = 0;
    frontier.push(*source);
    while (!frontier.empty()) {
        std::string u = frontier.front();
        frontier.pop();
        for (const auto& v : nbrs[u]) {
            auto it = dist.find(v);
            if (it == dist.end()) {
                dist[v] = dist[u] + 1;
                parent[v] = u;
                frontier.push(v);
            } else if (it->second == dist[u] + 1 && u < parent[v]) {
                parent[v] = u;  // tie: smallest predecessor id wins
            }
        }
    }

    // Leaves of the parent tree carry the maximal paths.
    std::set<std::string> interior;
    for (const auto& [child, par] : parent) interior.insert(par);
    std::vector<std::string> terminals;
    for (const auto& [id, d] : dist)
        if (!interior.count(id)) terminals.push_back(id);
    std::sort(terminals.begin(), terminals.end());

    std::unordered_map<std::string, std::string> concept_by_id;
    for (const auto& n : g.nodes) concept_by_id[n.id] = n.concept_label;
    for (const auto& t : terminals) {
        std::vector<std::string> rev;
        for (std::string cur = t;; cur = parent[cur]) {
            rev.push_back(cur);
            if (cur == *source) break;
        }
        std::vector<std::string> path;
        for (auto it = rev.rbegin(); it != rev.rend(); ++it) path.push_back(concept_by_id[*it]);
        out.paths.push_back(std::move(path));
    }
    return out;
}

inline AmrAugmentedText amr_text(const SsspPathSet& paths) {
    AmrAugmentedText out;
    std::unordered_set<std::string> seen;
    for (const auto& p : paths.paths)
        for (const auto& c : p)
            if (seen.insert(c).second) out.tokens.push_back(c);
    for (std::size_t i = 0; i < out.tokens.size(); ++i) {
        if (i) out.rendered += ' ';
        out.rendered += out.tokens[i];
    }
    return out;
}

}  // namespace grag
