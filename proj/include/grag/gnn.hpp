#pragma once
// Edge-weighted GCN over document graphs: seeded init, forward with cached
// intermediates, reranking scores, CE / pairwise-hinge losses, hand-written
// reverse-mode gradients, and versioned binary checkpoints.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "grag/common.hpp"
#include "grag/docgraph.hpp"
#include "grag/encoder.hpp"
#include "grag/metrics.hpp"
#include "json.hpp"

namespace grag {

// ---------------------------------------------------------------------------
// Dense row-major matrix (f64 everywhere; f32 is for stored embeddings only)

struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

// ---------------------------------------------------------------------------
// Strategies

enum class Strategy { mlp, gcn, g_rag, g_rag_rl };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::mlp: return "mlp";
        case Strategy::gcn: return "gcn";
        case Strategy::g_rag: return "g-rag";
        case Strategy::g_rag_rl: return "g-rag-rl";
    }
    return "?";
}

inline Strategy strategy_from_name(const std::string& s) {
    if (s == "mlp") return Strategy::mlp;
    if (s == "gcn") return Strategy::gcn;
    if (s == "g-rag") return Strategy::g_rag;
    if (s == "g-rag-rl") return Strategy::g_rag_rl;
    throw Error(ErrorKind::InvalidConfig, "unknown strategy '" + s + "'");
}

inline bool uses_message_passing(Strategy s) { return s != Strategy::mlp; }
inline bool uses_amr_features(Strategy s) {
    return s == Strategy::g_rag || s == Strategy::g_rag_rl;
}
inline bool uses_ranking_loss(Strategy s) { return s == Strategy::g_rag_rl; }

// ---------------------------------------------------------------------------
// Model

struct GcnLayer {
    Mat w_self;             // out x in
    Mat w_nbr;              // out x in
    std::vector<double> b;  // out
    Mat w_e;                // 2 x 2
    Mat u_e;                // 2 x 2
    std::vector<double> b_e;  // 2
};

struct GcnModel {
    std::vector<std::size_t> dims;  // layer widths, size depth()+1; front == back == d
    double dropout_rate = 0.0;
    Strategy strategy = Strategy::gcn;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;  // completed optimizer steps; keys dropout masks
    std::vector<GcnLayer> layers;

    std::size_t depth() const { return layers.size(); }
    std::size_t feature_dim() const { return dims.front(); }
};

namespace detail {

inline GcnLayer zero_layer(std::size_t in, std::size_t out) {
    GcnLayer l;
    l.w_self = Mat(out, in);
    l.w_nbr = Mat(out, in);
    l.b.assign(out, 0.0);
    l.w_e = Mat(2, 2);
    l.u_e = Mat(2, 2);
    l.b_e.assign(2, 0.0);
    return l;
}

inline void fill_uniform(Mat& m, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
    for (double& v : m.a) v = rng.symmetric(bound);
}

}  // namespace detail

// Weight matrices uniform in +-sqrt(6/(d_in+d_out)), biases zero, all draws
// from one derived stream in declared block order.
inline GcnModel init_model(const std::vector<std::size_t>& dims, double dropout_rate,
                           Strategy strategy, std::uint64_t seed) {
    if (dims.size() < 2) throw Error(ErrorKind::InvalidConfig, "need at least one layer");
    for (std::size_t d : dims)
        if (d == 0) throw Error(ErrorKind::InvalidConfig, "zero layer width");
    if (dims.front() != dims.back())
        throw Error(ErrorKind::InvalidConfig,
                    "first input dim and last output dim must both equal the feature dim");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw Error(ErrorKind::InvalidConfig, "dropout_rate must be in [0, 1)");
    GcnModel m;
    m.dims = dims;
    m.dropout_rate = dropout_rate;
    m.strategy = strategy;
    m.seed = seed;
    Rng rng(derive_seed(seed, "init"));
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        GcnLayer layer = detail::zero_layer(dims[l], dims[l + 1]);
        detail::fill_uniform(layer.w_self, rng);
        detail::fill_uniform(layer.w_nbr, rng);
        detail::fill_uniform(layer.w_e, rng);
        detail::fill_uniform(layer.u_e, rng);
        m.layers.push_back(std::move(layer));
    }
    return m;
}

inline GcnModel init_model(std::size_t feature_dim, std::size_t hidden_dim, double dropout_rate,
                           Strategy strategy, std::uint64_t seed) {
    return init_model({feature_dim, hidden_dim, feature_dim}, dropout_rate, strategy, seed);
}

// Gradient accumulator with the same block shapes as the model.
using GcnGrads = std::vector<GcnLayer>;

inline GcnGrads zero_grads(const GcnModel& m) {
    GcnGrads g;
    for (std::size_t l = 0; l + 1 < m.dims.size(); ++l)
        g.push_back(detail::zero_layer(m.dims[l], m.dims[l + 1]));
    return g;
}

// Parameter blocks in checkpoint order: per layer w_self, w_nbr, b, w_e, u_e, b_e.
inline std::vector<std::vector<double>*> param_blocks(GcnModel& m) {
    std::vector<std::vector<double>*> out;
    for (auto& l : m.layers) {
        out.push_back(&l.w_self.a);
        out.push_back(&l.w_nbr.a);
        out.push_back(&l.b);
        out.push_back(&l.w_e.a);
        out.push_back(&l.u_e.a);
        out.push_back(&l.b_e);
    }
    return out;
}

inline std::vector<const std::vector<double>*> param_blocks(const GcnModel& m) {
    std::vector<const std::vector<double>*> out;
    for (const auto& l : m.layers) {
        out.push_back(&l.w_self.a);
        out.push_back(&l.w_nbr.a);
        out.push_back(&l.b);
        out.push_back(&l.w_e.a);
        out.push_back(&l.u_e.a);
        out.push_back(&l.b_e);
    }
    return out;
}

inline std::vector<std::vector<double>*> grad_blocks(GcnGrads& g) {
    std::vector<std::vector<double>*> out;
    for (auto& l : g) {
        out.push_back(&l.w_self.a);
        out.push_back(&l.w_nbr.a);
        out.push_back(&l.b);
        out.push_back(&l.w_e.a);
        out.push_back(&l.u_e.a);
        out.push_back(&l.b_e);
    }
    return out;
}

inline std::vector<const std::vector<double>*> grad_blocks(const GcnGrads& g) {
    std::vector<const std::vector<double>*> out;
    for (const auto& l : g) {
        out.push_back(&l.w_self.a);
        out.push_back(&l.w_nbr.a);
        out.push_back(&l.b);
        out.push_back(&l.w_e.a);
        out.push_back(&l.u_e.a);
        out.push_back(&l.b_e);
    }
    return out;
}

inline std::size_t param_count(const GcnModel& m) {
    std::size_t n = 0;
    for (const auto* b : param_blocks(m)) n += b->size();
    return n;
}

inline void accumulate_grads(GcnGrads& into, const GcnGrads& from) {
    auto a = grad_blocks(into);
    auto b = grad_blocks(from);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i]->size(); ++j) (*a[i])[j] += (*b[i])[j];
}

inline void scale_grads(GcnGrads& g, double c) {
    for (auto* b : grad_blocks(g))
        for (double& v : *b) v *= c;
}

inline bool bits_equal(const GcnModel& a, const GcnModel& b) {
    if (a.dims != b.dims || a.strategy != b.strategy || a.seed != b.seed || a.step != b.step)
        return false;
    auto pa = param_blocks(a), pb = param_blocks(b);
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->size() != pb[i]->size()) return false;
        if (!pa[i]->empty() &&
            std::memcmp(pa[i]->data(), pb[i]->data(), pa[i]->size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Forward

// One channel-weighted message along a directed edge: (e0 + e1) * x_u.
inline std::vector<double> message(const std::vector<double>& x_u, const std::array<double, 2>& e_uv) {
    std::vector<double> out(x_u.size());
    double w = e_uv[0] + e_uv[1];
    for (std::size_t i = 0; i < x_u.size(); ++i) out[i] = w * x_u[i];
    return out;
}

struct ForwardCache {
    std::string question_id;
    std::size_t n = 0;
    bool train_mode = false;
    std::uint64_t step = 0;
    std::uint64_t fingerprint = 0;

    // directed edges in ascending (u, v) order plus an index for lookups
    std::vector<std::pair<std::size_t, std::size_t>> dir_edges;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> edge_index;

    std::vector<Mat> x;     // depth()+1 node-rep matrices; x[0] = input features
    std::vector<Mat> pre;   // per layer, pre-activation
    std::vector<Mat> agg;   // per layer, mean-aggregated messages
    std::vector<Mat> drop;  // per layer, dropout multiplier (empty when unused)

    // edge representations per level; e[0] = normalized input features
    std::vector<std::vector<std::array<double, 2>>> e;
    std::vector<std::vector<std::array<double, 2>>> epre;   // epre[l] pre-activation of e[l]
    std::vector<std::vector<std::array<double, 2>>> emean;  // incident mean used to build e[l]

    const Mat& final_reps() const { return x.back(); }
};

namespace detail {

struct FnvAcc {
    std::uint64_t h = 0xcbf29ce484222325ull;
    void bytes(const void* p, std::size_t n) {
        const unsigned char* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 0x100000001b3ull;
        }
    }
    void u64(std::uint64_t v) { bytes(&v, sizeof v); }
    void f64s(const std::vector<double>& v) { bytes(v.data(), v.size() * sizeof(double)); }
    void str(std::string_view s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
};

}  // namespace detail

// Binds a cache to the exact (model, graph, mode, step) that produced it.
inline std::uint64_t forward_fingerprint(const GcnModel& m, const DocumentGraph& g,
                                         bool train_mode) {
    detail::FnvAcc acc;
    for (std::size_t d : m.dims) acc.u64(d);
    acc.str(strategy_name(m.strategy));
    acc.u64(m.seed);
    acc.u64(m.step);
    acc.u64(train_mode ? 1 : 0);
    acc.bytes(&m.dropout_rate, sizeof(double));
    acc.str(g.question_id);
    acc.u64(g.size());
    acc.u64(g.norm.size());
    for (const auto* b : param_blocks(m)) acc.f64s(*b);
    return acc.h;
}

// Runs the full stack of layers and keeps every intermediate needed by
// backward. Aggregation iterates neighbors in stored (doc-id-sorted) order, so
// bytes do not depend on input document order.
inline ForwardCache forward(const GcnModel& model, const DocumentGraph& graph,
                            const EmbeddingSet& X, bool train_mode) {
    const std::size_t n = graph.size();
    const std::size_t L = model.depth();
    if (X.dim != model.feature_dim())
        throw Error(ErrorKind::DimMismatch, "embedding dim " + std::to_string(X.dim) +
                                                " != model feature dim " +
                                                std::to_string(model.feature_dim()));
    const bool mp = uses_message_passing(model.strategy);

    ForwardCache c;
    c.question_id = graph.question_id;
    c.n = n;
    c.train_mode = train_mode;
    c.step = model.step;
    c.fingerprint = forward_fingerprint(model, graph, train_mode);

    if (mp) {
        for (const auto& kv : graph.norm) {
            c.edge_index[kv.first] = c.dir_edges.size();
            c.dir_edges.push_back(kv.first);
        }
    }
    const std::size_t m = c.dir_edges.size();

    c.x.assign(L + 1, Mat());
    c.pre.assign(L, Mat());
    c.agg.assign(L, Mat());
    c.drop.assign(L, Mat());
    c.e.assign(L, {});
    c.epre.assign(L, {});
    c.emean.assign(L, {});

    c.x[0] = Mat(n, X.dim);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& v = X.vector_for(graph.doc_ids[i]);
        for (std::size_t j = 0; j < X.dim; ++j) c.x[0](i, j) = v[j];
    }
    if (mp) {
        c.e[0].resize(m);
        for (std::size_t k = 0; k < m; ++k) {
            NormEdgeFeature f = graph.norm_at(c.dir_edges[k].first, c.dir_edges[k].second);
            c.e[0][k] = {f.f1, f.f2};
        }
    }

    const bool dropping = train_mode && model.dropout_rate > 0.0 && L > 1;
    Rng drop_rng(derive_seed(model.seed, "dropout", graph.question_id, model.step));
    const double keep_scale = dropping ? 1.0 / (1.0 - model.dropout_rate) : 1.0;

    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t din = model.dims[l], dout = model.dims[l + 1];
        const bool last = (l + 1 == L);
        const GcnLayer& P = model.layers[l];

        Mat& aggm = c.agg[l];
        aggm = Mat(n, din);
        if (mp) {
            for (std::size_t v = 0; v < n; ++v) {
                const auto& nbrs = graph.neighbors[v];
                if (nbrs.empty()) continue;  // isolated: agg stays zero
                for (std::size_t u : nbrs) {
                    const auto& ef = c.e[l][c.edge_index.at({u, v})];
                    const double w = ef[0] + ef[1];
                    for (std::size_t j = 0; j < din; ++j) aggm(v, j) += w * c.x[l](u, j);
                }
                const double inv = 1.0 / static_cast<double>(nbrs.size());
                for (std::size_t j = 0; j < din; ++j) aggm(v, j) *= inv;
            }
        }

        Mat& prem = c.pre[l];
        prem = Mat(n, dout);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t k = 0; k < dout; ++k) {
                double s = P.b[k];
                for (std::size_t j = 0; j < din; ++j) s += P.w_self(k, j) * c.x[l](v, j);
                for (std::size_t j = 0; j < din; ++j) s += P.w_nbr(k, j) * aggm(v, j);
                prem(v, k) = s;
            }

        Mat& out = c.x[l + 1];
        out = Mat(n, dout);
        if (last) {
            out.a = prem.a;  // no nonlinearity on the final layer
        } else {
            for (std::size_t i = 0; i < out.a.size(); ++i)
                out.a[i] = prem.a[i] > 0.0 ? prem.a[i] : 0.0;
            if (dropping) {
                Mat& dm = c.drop[l];
                dm = Mat(n, dout);
                for (std::size_t i = 0; i < dm.a.size(); ++i)
                    dm.a[i] = drop_rng.uniform01() >= model.dropout_rate ? keep_scale : 0.0;
                for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] *= dm.a[i];
            }
        }

        // Edge update produces e^{l+1}; the final layer consumes e^{L-1}, so
        // the last layer's edge parameters are never applied (their gradients
        // stay zero).
        if (!last && mp) {
            auto& enext = c.e[l + 1];
            auto& eprev = c.e[l];
            auto& epren = c.epre[l + 1];
            auto& emeann = c.emean[l + 1];
            enext.resize(m);
            epren.resize(m);
            emeann.resize(m);
            for (std::size_t k = 0; k < m; ++k) {
                const std::size_t u = c.dir_edges[k].first;
                std::array<double, 2> em = {0.0, 0.0};
                const auto& unbrs = graph.neighbors[u];
                for (std::size_t w : unbrs) {
                    const auto& ew = eprev[c.edge_index.at({w, u})];
                    em[0] += ew[0];
                    em[1] += ew[1];
                }
                const double inv = 1.0 / static_cast<double>(unbrs.size());
                em[0] *= inv;
                em[1] *= inv;
                emeann[k] = em;
                for (std::size_t r = 0; r < 2; ++r) {
                    double s = P.b_e[r];
                    for (std::size_t cix = 0; cix < 2; ++cix)
                        s += P.w_e(r, cix) * eprev[k][cix] + P.u_e(r, cix) * em[cix];
                    epren[k][r] = s;
                    enext[k][r] = s > 0.0 ? s : 0.0;
                }
            }
        }
    }
    return c;
}

// s_i = y . x_i^L for every document, isolated ones included.
inline ScoreVector score_nodes(const DocumentGraph& graph, const Mat& final_reps,
                               const std::vector<double>& y) {
    if (y.size() != final_reps.cols)
        throw Error(ErrorKind::DimMismatch, "question vector dim " + std::to_string(y.size()) +
                                                " != node rep dim " +
                                                std::to_string(final_reps.cols));
    ScoreVector sv;
    sv.question_id = graph.question_id;
    for (std::size_t i = 0; i < graph.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < y.size(); ++j) s += y[j] * final_reps(i, j);
        sv.scores[graph.doc_ids[i]] = s;
    }
    return sv;
}

// ---------------------------------------------------------------------------
// Losses (index-aligned core plus doc-id wrappers)

struct LossResult {
    double loss = 0.0;
    std::vector<double> dscores;  // same index order as the inputs
};

// Softmax cross entropy with max-subtraction; supports multiple positives.
// All-negative questions contribute loss 0 and zero gradient.
inline LossResult ce_loss(const std::vector<double>& scores, const std::vector<char>& labels) {
    const std::size_t n = scores.size();
    LossResult r;
    r.dscores.assign(n, 0.0);
    if (n == 0) return r;
    double pos_count = 0.0;
    for (char l : labels) pos_count += l ? 1.0 : 0.0;
    if (pos_count == 0.0) return r;
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double denom = 0.0;
    for (double s : scores) denom += std::exp(s - mx);
    const double log_denom = std::log(denom);
    for (std::size_t i = 0; i < n; ++i) {
        const double logp = scores[i] - mx - log_denom;
        if (labels[i]) r.loss -= logp;
        r.dscores[i] = pos_count * std::exp(logp) - (labels[i] ? 1.0 : 0.0);
    }
    return r;
}

inline std::pair<double, std::map<std::string, double>> ce_loss(
    const ScoreVector& sv, const std::map<std::string, int>& labels) {
    std::vector<double> scores;
    std::vector<char> lab;
    std::vector<const std::string*> ids;
    for (const auto& kv : sv.scores) {
        auto it = labels.find(kv.first);
        if (it == labels.end())
            throw Error(ErrorKind::UnknownDocId, "no label for doc '" + kv.first + "'");
        ids.push_back(&kv.first);
        scores.push_back(kv.second);
        lab.push_back(it->second ? 1 : 0);
    }
    LossResult r = ce_loss(scores, lab);
    std::map<std::string, double> grads;
    for (std::size_t i = 0; i < ids.size(); ++i) grads[*ids[i]] = r.dscores[i];
    return {r.loss, grads};
}

struct HingeResult {
    double loss = 0.0;
    double d_pos = 0.0;
    double d_neg = 0.0;
};

// max(0, 1 - (s_pos - s_neg)); subgradient zero at the hinge point.
inline HingeResult pairwise_ranking_loss(double s_pos, double s_neg) {
    const double margin = 1.0 - (s_pos - s_neg);
    if (margin > 0.0) return {margin, -1.0, 1.0};
    return {0.0, 0.0, 0.0};
}

// Mean hinge over all positive x negative pairs of one question, uniformly
// subsampled to pair_cap when the cross product is larger. Questions with no
// positives (or no negatives) are skipped: zero loss, zero gradient.
inline LossResult ranking_loss_question(const std::vector<double>& scores,
                                        const std::vector<char>& labels, std::size_t pair_cap,
                                        Rng& rng) {
    const std::size_t n = scores.size();
    LossResult r;
    r.dscores.assign(n, 0.0);
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) (labels[i] ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) return r;
    const std::size_t total = pos.size() * neg.size();
    std::vector<std::size_t> picked;
    if (pair_cap > 0 && total > pair_cap)
        picked = rng.sample_indices(total, pair_cap);
    else {
        picked.resize(total);
        for (std::size_t k = 0; k < total; ++k) picked[k] = k;
    }
    const double inv = 1.0 / static_cast<double>(picked.size());
    for (std::size_t k : picked) {
        const std::size_t pi = pos[k / neg.size()];
        const std::size_t ni = neg[k % neg.size()];
        HingeResult h = pairwise_ranking_loss(scores[pi], scores[ni]);
        r.loss += h.loss * inv;
        r.dscores[pi] += h.d_pos * inv;
        r.dscores[ni] += h.d_neg * inv;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Backward

// Exact reverse-mode gradients of loss wrt every parameter block, replaying
// the cached ReLU and dropout masks. dscores is index-aligned with
// graph.doc_ids.
inline GcnGrads backward(const GcnModel& model, const DocumentGraph& graph,
                         const ForwardCache& cache, const std::vector<double>& y,
                         const std::vector<double>& dscores) {
    const std::size_t n = graph.size();
    const std::size_t L = model.depth();
    if (cache.n != n || cache.x.size() != L + 1 ||
        cache.fingerprint != forward_fingerprint(model, graph, cache.train_mode))
        throw Error(ErrorKind::StaleCache,
                    "cached intermediates do not match this model/graph state");
    if (dscores.size() != n)
        throw Error(ErrorKind::DimMismatch, "score gradient count != document count");
    if (y.size() != model.feature_dim())
        throw Error(ErrorKind::DimMismatch, "question vector dim != feature dim");
    const bool mp = uses_message_passing(model.strategy);
    const std::size_t m = cache.dir_edges.size();

    GcnGrads g = zero_grads(model);

    // dL/dx per level, seeded at the top by s_i = y . x_i^L
    std::vector<Mat> dx(L + 1);
    for (std::size_t l = 0; l <= L; ++l) dx[l] = Mat(n, model.dims[l]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < model.dims[L]; ++j) dx[L](i, j) = dscores[i] * y[j];

    std::vector<std::vector<std::array<double, 2>>> de(L);
    if (mp)
        for (std::size_t l = 0; l < L; ++l) de[l].assign(m, {0.0, 0.0});

    for (std::size_t l = L; l-- > 0;) {
        const std::size_t din = model.dims[l], dout = model.dims[l + 1];
        const bool last = (l + 1 == L);
        const GcnLayer& P = model.layers[l];
        GcnLayer& G = g[l];

        // through dropout and ReLU to the pre-activation
        Mat dpre(n, dout);
        const bool dropped = !last && cache.drop[l].rows == n;
        for (std::size_t i = 0; i < dpre.a.size(); ++i) {
            double d = dx[l + 1].a[i];
            if (dropped) d *= cache.drop[l].a[i];
            if (!last && cache.pre[l].a[i] <= 0.0) d = 0.0;
            dpre.a[i] = d;
        }

        for (std::size_t v = 0; v < n; ++v) {
            for (std::size_t k = 0; k < dout; ++k) {
                const double d = dpre(v, k);
                if (d == 0.0) continue;
                G.b[k] += d;
                for (std::size_t j = 0; j < din; ++j) {
                    G.w_self(k, j) += d * cache.x[l](v, j);
                    G.w_nbr(k, j) += d * cache.agg[l](v, j);
                    dx[l](v, j) += P.w_self(k, j) * d;
                }
            }
        }

        if (mp) {
            // through the mean aggregator into neighbor reps and edge weights
            std::vector<double> dagg(din);
            for (std::size_t v = 0; v < n; ++v) {
                const auto& nbrs = graph.neighbors[v];
                if (nbrs.empty()) continue;
                std::fill(dagg.begin(), dagg.end(), 0.0);
                for (std::size_t k = 0; k < dout; ++k) {
                    const double d = dpre(v, k);
                    if (d == 0.0) continue;
                    for (std::size_t j = 0; j < din; ++j) dagg[j] += P.w_nbr(k, j) * d;
                }
                const double inv = 1.0 / static_cast<double>(nbrs.size());
                for (std::size_t u : nbrs) {
                    const std::size_t ei = cache.edge_index.at({u, v});
                    const auto& ef = cache.e[l][ei];
                    const double w = (ef[0] + ef[1]) * inv;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < din; ++j) {
                        dx[l](u, j) += w * dagg[j];
                        dot += dagg[j] * cache.x[l](u, j);
                    }
                    de[l][ei][0] += inv * dot;
                    de[l][ei][1] += inv * dot;
                }
            }

            // through the edge update that produced e^{l+1}
            if (!last) {
                for (std::size_t k = 0; k < m; ++k) {
                    const std::size_t u = cache.dir_edges[k].first;
                    std::array<double, 2> dep = {0.0, 0.0};
                    for (std::size_t r = 0; r < 2; ++r)
                        dep[r] = cache.epre[l + 1][k][r] > 0.0 ? de[l + 1][k][r] : 0.0;
                    if (dep[0] == 0.0 && dep[1] == 0.0) continue;
                    const auto& unbrs = graph.neighbors[u];
                    const double inv = 1.0 / static_cast<double>(unbrs.size());
                    for (std::size_t r = 0; r < 2; ++r) {
                        G.b_e[r] += dep[r];
                        for (std::size_t cix = 0; cix < 2; ++cix) {
                            G.w_e(r, cix) += dep[r] * cache.e[l][k][cix];
                            G.u_e(r, cix) += dep[r] * cache.emean[l + 1][k][cix];
                            de[l][k][cix] += P.w_e(r, cix) * dep[r];
                        }
                    }
                    for (std::size_t w : unbrs) {
                        const std::size_t wi = cache.edge_index.at({w, u});
                        for (std::size_t cix = 0; cix < 2; ++cix) {
                            double s = 0.0;
                            for (std::size_t r = 0; r < 2; ++r) s += P.u_e(r, cix) * dep[r];
                            de[l][wi][cix] += inv * s;
                        }
                    }
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic GRAGGNN1, u32 JSON header length, header, then parameter
// blocks as little-endian f64 in declared order.

namespace detail {

inline void put_f64(std::ostream& out, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, sizeof u);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw Error(ErrorKind::TruncatedFile, "unexpected end of checkpoint");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, sizeof v);
    return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[9] = "GRAGGNN1";

inline void save_checkpoint(std::ostream& out, const GcnModel& m) {
    out.write(kCheckpointMagic, 8);
    nlohmann::json header = {
        {"dims", m.dims},
        {"L", m.depth()},
        {"dropout", m.dropout_rate},
        {"strategy", strategy_name(m.strategy)},
        {"seed", m.seed},
        {"step", m.step},
    };
    const std::string h = header.dump();
    detail::put_u32(out, static_cast<std::uint32_t>(h.size()));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto* blk : param_blocks(m))
        for (double v : *blk) detail::put_f64(out, v);
}

inline GcnModel load_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw Error(ErrorKind::BadMagic, "not a model checkpoint");
    const std::uint32_t hlen = detail::get_u32(in);
    std::string h(hlen, '\0');
    if (hlen && !in.read(h.data(), hlen))
        throw Error(ErrorKind::TruncatedFile, "checkpoint header cut short");
    nlohmann::json j = nlohmann::json::parse(h, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::SchemaViolation, "checkpoint header is not JSON");
    GcnModel m;
    try {
        m.dims = j.at("dims").get<std::vector<std::size_t>>();
        m.dropout_rate = j.at("dropout").get<double>();
        m.strategy = strategy_from_name(j.at("strategy").get<std::string>());
        m.seed = j.at("seed").get<std::uint64_t>();
        m.step = j.at("step").get<std::uint64_t>();
        if (j.at("L").get<std::size_t>() + 1 != m.dims.size())
            throw Error(ErrorKind::SchemaViolation, "layer count does not match dims");
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorKind::SchemaViolation, std::string("checkpoint header: ") + ex.what());
    }
    if (m.dims.size() < 2 || m.dims.front() != m.dims.back())
        throw Error(ErrorKind::SchemaViolation, "checkpoint dims are inconsistent");
    for (std::size_t l = 0; l + 1 < m.dims.size(); ++l)
        m.layers.push_back(detail::zero_layer(m.dims[l], m.dims[l + 1]));
    for (auto* blk : param_blocks(m))
        for (double& v : *blk) {
            v = detail::get_f64(in);
            if (!std::isfinite(v))
                throw Error(ErrorKind::SchemaViolation, "non-finite parameter in checkpoint");
        }
    if (in.peek() != std::char_traits<char>::eof())
        throw Error(ErrorKind::SchemaViolation, "trailing bytes after checkpoint parameters");
    return m;
}

inline void save_checkpoint_file(const std::string& path, const GcnModel& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot open '" + path + "' for writing");
    save_checkpoint(out, m);
    if (!out) throw Error(ErrorKind::IoError, "failed writing '" + path + "'");
}

inline GcnModel load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");
    return load_checkpoint(in);
}

}  // namespace grag
