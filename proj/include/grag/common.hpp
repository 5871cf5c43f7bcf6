#pragma once
// Shared plumbing: error type, stable hashing, seeded RNG helpers and the
// bounded worker pool controlled by GRAG_THREADS.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace grag {

enum class ErrorKind {
    // penman / amr
    UnbalancedParens,
    DuplicateVariableDefinition,
    EmptyGraph,
    DanglingReentrancy,
    MalformedLine,
    SchemaViolation,
    // docgraph
    MixedQuestionIds,
    // encoder
    MissingAmrText,
    BadMagic,
    DimMismatch,
    TruncatedFile,
    DuplicateDocId,
    // gnn / training
    StaleCache,
    EmptyDataset,
    NoPositivesInDataset,
    // metrics
    NonFiniteScore,
    UnknownDocId,
    MissingQuestion,
    // config / io
    InvalidConfig,
    IoError,
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::UnbalancedParens: return "UnbalancedParens";
        case ErrorKind::DuplicateVariableDefinition: return "DuplicateVariableDefinition";
        case ErrorKind::EmptyGraph: return "EmptyGraph";
        case ErrorKind::DanglingReentrancy: return "DanglingReentrancy";
        case ErrorKind::MalformedLine: return "MalformedLine";
        case ErrorKind::SchemaViolation: return "SchemaViolation";
        case ErrorKind::MixedQuestionIds: return "MixedQuestionIds";
        case ErrorKind::MissingAmrText: return "MissingAmrText";
        case ErrorKind::BadMagic: return "BadMagic";
        case ErrorKind::DimMismatch: return "DimMismatch";
        case ErrorKind::TruncatedFile: return "TruncatedFile";
        case ErrorKind::DuplicateDocId: return "DuplicateDocId";
        case ErrorKind::StaleCache: return "StaleCache";
        case ErrorKind::EmptyDataset: return "EmptyDataset";
        case ErrorKind::NoPositivesInDataset: return "NoPositivesInDataset";
        case ErrorKind::NonFiniteScore: return "NonFiniteScore";
        case ErrorKind::UnknownDocId: return "UnknownDocId";
        case ErrorKind::MissingQuestion: return "MissingQuestion";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

// 64-bit FNV-1a. Also the token hash of the hash encoder, so the constants are
// part of the file-format/feature contract and must not change.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// All randomness fans out from one config seed: derive(seed, tag[, extra...])
// mixes the purpose tag so distinct consumers never share a stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    return splitmix64(base ^ fnv1a64(tag));
}
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t extra) {
    return splitmix64(splitmix64(base ^ fnv1a64(tag)) + extra);
}
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::string_view extra,
                                 std::uint64_t step) {
    return splitmix64(splitmix64(base ^ fnv1a64(tag)) + fnv1a64(extra) + step * 0x9e3779b97f4a7c15ull);
}

// splitmix64 generator. Drawing helpers are hand-rolled so that streams are
// identical across standard libraries (std distributions are not pinned).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    // uniform in [0, n) without modulo bias
    std::uint64_t below(std::uint64_t n) {
        std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // uniform in [0, 1)
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [-a, a]
    double symmetric(double a) { return (2.0 * uniform01() - 1.0) * a; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), in ascending order
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        for (std::size_t i = 0; i < k && i < n; ++i) {
            std::size_t j = i + static_cast<std::size_t>(below(n - i));
            std::swap(all[i], all[j]);
        }
        all.resize(k < n ? k : n);
        std::sort(all.begin(), all.end());
        return all;
    }

private:
    std::uint64_t state_;
};

// Worker count: GRAG_THREADS if set (>=1), else hardware concurrency.
inline unsigned thread_budget() {
    if (const char* env = std::getenv("GRAG_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

// Runs fn(i) for i in [0, n), possibly on several threads. Each result lands in
// its own slot, so callers reduce in index order and bytes never depend on the
// worker count. fn must be pure per index.
template <typename T>
std::vector<T> parallel_map(std::size_t n, const std::function<T(std::size_t)>& fn) {
    std::vector<T> out(n);
    unsigned workers = thread_budget();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    if (workers > n) workers = static_cast<unsigned>(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::vector<std::exception_ptr> errs(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) out[i] = fn(i);
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace grag
