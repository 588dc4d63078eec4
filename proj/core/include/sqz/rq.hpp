#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sqz/matrix.hpp"
#include "sqz/sid.hpp"

namespace sqz {

struct RqConfig {
    uint32_t levels = 2;
    std::vector<uint32_t> codebook_sizes; // one entry, or one per level
    double ema_decay = 0.99;
    double epsilon = 1e-9;       // count floor in the sums/counts division
    double dead_threshold = 1e-3; // ema_count below this triggers reseeding
    uint32_t epochs = 25;
    uint64_t seed = 1;

    void validate() const;
    uint32_t size_at(uint32_t level) const; // resolved codebook size for a level
};

/// One residual level. Entries are stored float32; the EMA state is kept in
/// double so entry == ema_sums/max(ema_counts, eps) holds to float precision.
struct Codebook {
    uint32_t level = 0; // 1-based
    MatF entries;       // C x d
    std::vector<double> ema_counts;
    MatD ema_sums;      // C x d
};

struct CodebookStack {
    std::vector<Codebook> levels;
    RqConfig config;

    uint32_t num_levels() const { return static_cast<uint32_t>(levels.size()); }
    std::size_t dim() const { return levels.empty() ? 0 : levels.front().entries.cols(); }
};

struct QuantizeResult {
    SemanticId sid;
    std::vector<double> residual_norms; // L+1 values: ||e||, then per-level leftovers
};

struct RqLossReport {
    double reconstruction = 0.0;
    std::vector<double> commitment_per_level;
    double beta = 0.25;
    double total = 0.0;
};

/// Learn the stack level by level: seed entries from distinct residual
/// samples, run EMA k-means epochs with dead-entry reseeding, then pass the
/// leftover residuals to the next level.
CodebookStack train_codebooks(const MatF& semantic, const RqConfig& config);

/// Nearest-entry assignment per level; ties break to the lowest index.
QuantizeResult quantize(std::span<const float> e, const CodebookStack& stack);

/// Sum of the chosen codewords across all levels.
std::vector<float> reconstruct(const SemanticId& sid, const CodebookStack& stack);

RqLossReport rq_loss(const MatF& semantic, const CodebookStack& stack, double beta = 0.25);

/// SIDs for every row of a matrix (the corpus-tokenization pass).
std::vector<SemanticId> quantize_all(const MatF& semantic, const CodebookStack& stack);

/// SQZK container: JSON header + per-level float32 entries and EMA state.
void save_codebooks(const CodebookStack& stack, const std::string& path);
CodebookStack load_codebooks(const std::string& path);

} // namespace sqz
