#pragma once
// Node features: precomputed-embedding ingestion plus a deterministic hash
// encoder used for tests and synthetic experiments. Vectors are f64 in
// memory and f32 on disk.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "grag/amr.hpp"
#include "grag/common.hpp"

namespace grag {

enum class Provenance { loaded, hashed };

struct EmbeddingSet {
    std::size_t dim = 0;
    std::map<std::string, std::vector<double>> doc_vectors;
    std::vector<double> question_vector;
    Provenance provenance = Provenance::loaded;

    const std::vector<double>& vector_for(const std::string& doc_id) const {
        auto it = doc_vectors.find(doc_id);
        if (it == doc_vectors.end())
            throw Error(ErrorKind::UnknownDocId, "no embedding for doc '" + doc_id + "'");
        return it->second;
    }
};

// ---------------------------------------------------------------------------
// Hash encoder: lowercase whitespace tokens, FNV-1a of the token bytes XORed
// with the seed; index = hash mod d, sign from bit 63 (+1 when clear);
// signed counts, then L2 normalization. Empty text gives the zero vector.

inline std::vector<double> hash_encode(const std::string& text, std::size_t d,
                                       std::uint64_t seed) {
    if (d < 2) throw Error(ErrorKind::InvalidConfig, "hash encoder needs d >= 2");
    std::vector<double> v(d, 0.0);
    std::size_t i = 0;
    bool any = false;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        std::string tok;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) {
            tok += static_cast<char>(std::tolower(static_cast<unsigned char>(text[j])));
            ++j;
        }
        if (!tok.empty()) {
            std::uint64_t h = fnv1a64(tok) ^ seed;
            v[h % d] += (h >> 63) ? -1.0 : 1.0;
            any = true;
        }
        i = j;
    }
    if (!any) return v;
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (double& x : v) x /= norm;
    return v;
}

struct HashEncoder {
    std::size_t dim;
    std::uint64_t seed;
    std::vector<double> operator()(const std::string& text) const {
        return hash_encode(text, dim, seed);
    }
};

// ---------------------------------------------------------------------------
// Feature construction (Encode(p_i) vs Encode(concat(p_i, a_i)))

enum class FeatureMode { baseline, amr_augmented };

struct DocText {
    std::string doc_id;
    std::string text;
};

// amr_augmented appends the rendered AMR path text after a single space; an
// empty rendering leaves the document text untouched, so the result matches
// baseline exactly for that document.
template <typename Encoder>
inline EmbeddingSet build_node_features(const std::vector<DocText>& docs,
                                        const std::map<std::string, AmrAugmentedText>& amr_texts,
                                        FeatureMode mode, const Encoder& enc,
                                        const std::string& question_text) {
    EmbeddingSet set;
    set.provenance = Provenance::hashed;
    set.question_vector = enc(question_text);
    set.dim = set.question_vector.size();
    for (const auto& d : docs) {
        std::string input = d.text;
        if (mode == FeatureMode::amr_augmented) {
            auto it = amr_texts.find(d.doc_id);
            if (it == amr_texts.end())
                throw Error(ErrorKind::MissingAmrText, "no AMR text for doc '" + d.doc_id + "'");
            if (!it->second.rendered.empty()) input += " " + it->second.rendered;
        }
        std::vector<double> v = enc(input);
        if (v.size() != set.dim)
            throw Error(ErrorKind::DimMismatch, "encoder dim changed across documents");
        if (!set.doc_vectors.emplace(d.doc_id, std::move(v)).second)
            throw Error(ErrorKind::DuplicateDocId, "doc '" + d.doc_id + "' appears twice");
    }
    return set;
}

// ---------------------------------------------------------------------------
// Binary format, little-endian:
//   magic "GRAGEMB1" | u32 version=1 | u32 dim | u32 count
//   count x [u16 id_len | id bytes | dim x f32]
// The question vector is one record with id "__question__".

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u16(std::ostream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline bool get_bytes(std::istream& in, void* dst, std::size_t n) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(in.gcount()) == n;
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!get_bytes(in, b, 4)) throw Error(ErrorKind::TruncatedFile, "unexpected end of file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint16_t get_u16(std::istream& in) {
    unsigned char b[2];
    if (!get_bytes(in, b, 2)) throw Error(ErrorKind::TruncatedFile, "unexpected end of file");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline float get_f32(std::istream& in) {
    std::uint32_t bits = get_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

inline constexpr char kEmbeddingMagic[8] = {'G', 'R', 'A', 'G', 'E', 'M', 'B', '1'};
inline constexpr const char* kQuestionRecordId = "__question__";

inline void save_embeddings(std::ostream& out, const EmbeddingSet& set) {
    out.write(kEmbeddingMagic, 8);
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(set.dim));
    detail::put_u32(out, static_cast<std::uint32_t>(set.doc_vectors.size() + 1));
    auto put_record = [&](const std::string& id, const std::vector<double>& v) {
        detail::put_u16(out, static_cast<std::uint16_t>(id.size()));
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
        for (double x : v) detail::put_f32(out, static_cast<float>(x));
    };
    for (const auto& [id, v] : set.doc_vectors) put_record(id, v);  // map: sorted by id
    put_record(kQuestionRecordId, set.question_vector);
}

inline EmbeddingSet load_embeddings(std::istream& in, std::size_t expected_dim = 0) {
    char magic[8];
    if (!detail::get_bytes(in, magic, 8) || std::memcmp(magic, kEmbeddingMagic, 8) != 0)
        throw Error(ErrorKind::BadMagic, "not an embedding file");
    std::uint32_t version = detail::get_u32(in);
    if (version != 1)
        throw Error(ErrorKind::BadMagic, "unsupported version " + std::to_string(version));
    std::uint32_t dim = detail::get_u32(in);
    std::uint32_t count = detail::get_u32(in);
    if (dim == 0) throw Error(ErrorKind::DimMismatch, "zero dimension");
    if (expected_dim != 0 && dim != expected_dim)
        throw Error(ErrorKind::DimMismatch, "file dim " + std::to_string(dim) + ", expected " +
                                                std::to_string(expected_dim));
    EmbeddingSet set;
    set.dim = dim;
    bool have_question = false;
    for (std::uint32_t r = 0; r < count; ++r) {
        std::uint16_t id_len = detail::get_u16(in);
        std::string id(id_len, '\0');
        if (id_len && !detail::get_bytes(in, id.data(), id_len))
            throw Error(ErrorKind::TruncatedFile, "unexpected end of file in record id");
        std::vector<double> v(dim);
        for (std::uint32_t k = 0; k < dim; ++k) v[k] = detail::get_f32(in);
        if (id == kQuestionRecordId) {
            if (have_question) throw Error(ErrorKind::DuplicateDocId, "two question records");
            have_question = true;
            set.question_vector = std::move(v);
        } else if (!set.doc_vectors.emplace(id, std::move(v)).second) {
            throw Error(ErrorKind::DuplicateDocId, "doc '" + id + "' appears twice");
        }
    }
    if (!have_question)
        throw Error(ErrorKind::MissingQuestion, "no __question__ record in embedding file");
    return set;
}

inline void save_embeddings_file(const std::string& path, const EmbeddingSet& set) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path + "'");
    save_embeddings(out, set);
    if (!out) throw Error(ErrorKind::IoError, "write failed for '" + path + "'");
}

inline EmbeddingSet load_embeddings_file(const std::string& path, std::size_t expected_dim = 0) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot read '" + path + "'");
    return load_embeddings(in, expected_dim);
}

}  // namespace grag
