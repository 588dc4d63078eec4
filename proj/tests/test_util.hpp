#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "sqz/corpus.hpp"
#include "sqz/matrix.hpp"
#include "sqz/prng.hpp"
#include "sqz/rq.hpp"

namespace sqz::test {

/// Unique temp path, removed on destruction.
class TempFile {
public:
    explicit TempFile(const std::string& stem) {
        static int counter = 0;
        path_ = (std::filesystem::temp_directory_path() /
                 ("sqz_test_" + stem + "_" + std::to_string(::getpid()) + "_" +
                  std::to_string(counter++)))
                    .string();
    }
    ~TempFile() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
        std::filesystem::remove(path_ + ".meta.json", ec);
        std::filesystem::remove(path_ + ".agents.json", ec);
    }
    const std::string& str() const { return path_; }

private:
    std::string path_;
};

inline MatF random_matrix(std::size_t rows, std::size_t cols, uint64_t seed, double scale = 1.0) {
    Prng rng(seed);
    MatF m(rows, cols);
    for (auto& v : m.storage()) v = static_cast<float>(rng.normal() * scale);
    return m;
}

/// 1-D column matrix from explicit values.
inline MatF column(const std::vector<float>& values) {
    MatF m(values.size(), 1);
    for (std::size_t i = 0; i < values.size(); ++i) m(i, 0) = values[i];
    return m;
}

/// Hand-built single-level codebook stack with given 1-D entries (tests that
/// need exact entry placement).
inline CodebookStack manual_stack_1d(const std::vector<std::vector<float>>& per_level_entries) {
    CodebookStack stack;
    stack.config.levels = static_cast<uint32_t>(per_level_entries.size());
    for (std::size_t l = 0; l < per_level_entries.size(); ++l) {
        const auto& vals = per_level_entries[l];
        Codebook cb;
        cb.level = static_cast<uint32_t>(l + 1);
        cb.entries = column(vals);
        cb.ema_counts.assign(vals.size(), 1.0);
        cb.ema_sums = MatD(vals.size(), 1);
        for (std::size_t k = 0; k < vals.size(); ++k) cb.ema_sums(k, 0) = vals[k];
        stack.config.codebook_sizes.push_back(static_cast<uint32_t>(vals.size()));
        stack.levels.push_back(std::move(cb));
    }
    return stack;
}

/// In-memory corpus from explicit semantic values (1-D) and ranking values.
inline ItemCorpus corpus_1d(const std::vector<float>& semantic,
                            const std::vector<float>& ranking) {
    std::vector<uint64_t> ids(semantic.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i + 1;
    MatF rank(ranking.size(), 1);
    for (std::size_t i = 0; i < ranking.size(); ++i) rank(i, 0) = ranking[i];
    return ItemCorpus(std::move(ids), column(semantic), std::move(rank));
}

inline InteractionSequence history_of_ids(const std::vector<uint64_t>& ids, int64_t t0 = 1000) {
    InteractionSequence seq;
    seq.user_id = 1;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        seq.events.push_back({ids[i], t0 + static_cast<int64_t>(i)});
    }
    return seq;
}

} // namespace sqz::test
