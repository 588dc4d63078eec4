#include "sqz/rq.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "sqz/error.hpp"
#include "sqz/prng.hpp"

namespace sqz {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'Z', 'K'};

std::size_t nearest_entry(const float* v, const MatF& entries) {
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < entries.rows(); ++k) {
        const double dist = squared_l2(v, entries.row(k), entries.cols());
        if (dist < best_dist) { // strict: ties keep the lowest index
            best_dist = dist;
            best = k;
        }
    }
    return best;
}

double l2_norm(const float* v, std::size_t d) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += static_cast<double>(v[i]) * v[i];
    return std::sqrt(acc);
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

} // namespace

void RqConfig::validate() const {
    if (levels < 1) throw ValidationError("rq config: levels must be >= 1");
    if (codebook_sizes.empty()) throw ValidationError("rq config: codebook_sizes required");
    if (codebook_sizes.size() != 1 && codebook_sizes.size() != levels) {
        throw ValidationError("rq config: codebook_sizes must have 1 or `levels` entries");
    }
    for (uint32_t c : codebook_sizes) {
        if (c < 1) throw ValidationError("rq config: codebook size must be >= 1");
        if (c > (1u << 16)) throw ValidationError("rq config: codebook size above 2^16 unsupported");
    }
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) {
        throw ValidationError("rq config: ema_decay must be in (0,1)");
    }
    if (epsilon <= 0.0) throw ValidationError("rq config: epsilon must be positive");
}

uint32_t RqConfig::size_at(uint32_t level) const {
    return codebook_sizes.size() == 1 ? codebook_sizes[0] : codebook_sizes[level];
}

CodebookStack train_codebooks(const MatF& semantic, const RqConfig& config) {
    config.validate();
    const std::size_t n = semantic.rows();
    const std::size_t d = semantic.cols();
    for (float v : semantic.storage()) {
        if (!std::isfinite(v)) throw ValidationError("train_codebooks: non-finite input");
    }

    CodebookStack stack;
    stack.config = config;
    stack.levels.reserve(config.levels);

    // residuals for the level currently being trained, double precision
    MatD residual(n, d);
    for (std::size_t i = 0; i < n * d; ++i) {
        residual.storage()[i] = static_cast<double>(semantic.storage()[i]);
    }
    MatF residual_f(n, d);
    auto refresh_residual_f = [&] {
        for (std::size_t i = 0; i < n * d; ++i) {
            residual_f.storage()[i] = static_cast<float>(residual.storage()[i]);
        }
    };
    refresh_residual_f();

    for (uint32_t level = 0; level < config.levels; ++level) {
        const uint32_t C = config.size_at(level);
        if (n < C) {
            throw ValidationError("train_codebooks: need at least " + std::to_string(C) +
                                  " items for level " + std::to_string(level + 1) + ", got " +
                                  std::to_string(n));
        }

        Codebook cb;
        cb.level = level + 1;
        cb.entries = MatF(C, d);
        cb.ema_counts.assign(C, 1.0);
        cb.ema_sums = MatD(C, d);

        // distinct-sample seeding: shuffled order, skip duplicate vectors
        Prng init_rng(derive_seed(config.seed, stream::kCodebookInit, level));
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        for (std::size_t i = n - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(init_rng.bounded(i + 1));
            std::swap(order[i], order[j]);
        }
        std::vector<std::size_t> chosen;
        chosen.reserve(C);
        for (std::size_t i = 0; i < n && chosen.size() < C; ++i) {
            const float* cand = residual_f.row(order[i]);
            bool dup = false;
            for (std::size_t c : chosen) {
                if (std::memcmp(cand, residual_f.row(c), d * sizeof(float)) == 0) {
                    dup = true;
                    break;
                }
            }
            if (!dup) chosen.push_back(order[i]);
        }
        for (std::size_t i = 0; chosen.size() < C; ++i) chosen.push_back(order[i % n]);
        for (uint32_t k = 0; k < C; ++k) {
            std::copy_n(residual_f.row(chosen[k]), d, cb.entries.row(k));
            for (std::size_t j = 0; j < d; ++j) {
                cb.ema_sums(k, j) = static_cast<double>(cb.entries(k, j));
            }
        }

        Prng dead_rng(derive_seed(config.seed, stream::kCodebookDead, level));
        std::vector<std::size_t> assign(n);
        std::vector<double> batch_count(C);
        MatD batch_sum(C, d);

        for (uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
            std::fill(batch_count.begin(), batch_count.end(), 0.0);
            std::fill(batch_sum.storage().begin(), batch_sum.storage().end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = nearest_entry(residual_f.row(i), cb.entries);
                assign[i] = k;
                batch_count[k] += 1.0;
                const double* r = residual.row(i);
                double* s = batch_sum.row(k);
                for (std::size_t j = 0; j < d; ++j) s[j] += r[j];
            }
            const double g = config.ema_decay;
            for (uint32_t k = 0; k < C; ++k) {
                cb.ema_counts[k] = g * cb.ema_counts[k] + (1.0 - g) * batch_count[k];
                double* s = cb.ema_sums.row(k);
                const double* b = batch_sum.row(k);
                for (std::size_t j = 0; j < d; ++j) s[j] = g * s[j] + (1.0 - g) * b[j];
                const double denom = std::max(cb.ema_counts[k], config.epsilon);
                for (std::size_t j = 0; j < d; ++j) {
                    cb.entries(k, j) = static_cast<float>(s[j] / denom);
                }
            }
            // reseed dead entries from random residuals
            for (uint32_t k = 0; k < C; ++k) {
                if (cb.ema_counts[k] < config.dead_threshold) {
                    const auto pick = static_cast<std::size_t>(dead_rng.bounded(n));
                    std::copy_n(residual_f.row(pick), d, cb.entries.row(k));
                    cb.ema_counts[k] = 1.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        cb.ema_sums(k, j) = static_cast<double>(cb.entries(k, j));
                    }
                }
            }
        }

        // freeze the level, subtract chosen codewords for the next one
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t k = nearest_entry(residual_f.row(i), cb.entries);
            const float* z = cb.entries.row(k);
            double* r = residual.row(i);
            for (std::size_t j = 0; j < d; ++j) r[j] -= static_cast<double>(z[j]);
        }
        refresh_residual_f();
        stack.levels.push_back(std::move(cb));
    }
    return stack;
}

QuantizeResult quantize(std::span<const float> e, const CodebookStack& stack) {
    if (stack.levels.empty()) throw ValidationError("quantize: empty stack");
    const std::size_t d = stack.dim();
    if (e.size() != d) {
        throw ValidationError("quantize: dimension mismatch, expected " + std::to_string(d) +
                              " got " + std::to_string(e.size()));
    }

    QuantizeResult out;
    out.residual_norms.reserve(stack.levels.size() + 1);

    std::vector<double> residual(d);
    for (std::size_t j = 0; j < d; ++j) residual[j] = static_cast<double>(e[j]);
    std::vector<float> residual_f(d);
    auto to_f = [&] {
        for (std::size_t j = 0; j < d; ++j) residual_f[j] = static_cast<float>(residual[j]);
    };
    to_f();
    out.residual_norms.push_back(l2_norm(residual_f.data(), d));

    for (const auto& cb : stack.levels) {
        const std::size_t k = nearest_entry(residual_f.data(), cb.entries);
        out.sid.codes.push_back(static_cast<uint32_t>(k));
        const float* z = cb.entries.row(k);
        for (std::size_t j = 0; j < d; ++j) residual[j] -= static_cast<double>(z[j]);
        to_f();
        out.residual_norms.push_back(l2_norm(residual_f.data(), d));
    }
    return out;
}

std::vector<float> reconstruct(const SemanticId& sid, const CodebookStack& stack) {
    if (sid.codes.size() != stack.levels.size()) {
        throw ValidationError("reconstruct: sid has " + std::to_string(sid.codes.size()) +
                              " levels, stack has " + std::to_string(stack.levels.size()));
    }
    const std::size_t d = stack.dim();
    std::vector<double> acc(d, 0.0);
    for (std::size_t l = 0; l < sid.codes.size(); ++l) {
        const auto& cb = stack.levels[l];
        if (sid.codes[l] >= cb.entries.rows()) {
            throw ValidationError("reconstruct: code " + std::to_string(sid.codes[l]) +
                                  " out of range at level " + std::to_string(l + 1));
        }
        const float* z = cb.entries.row(sid.codes[l]);
        for (std::size_t j = 0; j < d; ++j) acc[j] += static_cast<double>(z[j]);
    }
    std::vector<float> out(d);
    for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(acc[j]);
    return out;
}

RqLossReport rq_loss(const MatF& semantic, const CodebookStack& stack, double beta) {
    if (beta < 0) throw ValidationError("rq_loss: beta must be >= 0");
    const std::size_t n = semantic.rows();
    const std::size_t d = semantic.cols();
    const std::size_t L = stack.levels.size();

    RqLossReport report;
    report.beta = beta;
    report.commitment_per_level.assign(L, 0.0);
    if (n == 0) return report;

    std::vector<double> residual(d);
    std::vector<float> residual_f(d);
    for (std::size_t i = 0; i < n; ++i) {
        const float* e = semantic.row(i);
        for (std::size_t j = 0; j < d; ++j) residual[j] = static_cast<double>(e[j]);
        for (std::size_t l = 0; l < L; ++l) {
            for (std::size_t j = 0; j < d; ++j) residual_f[j] = static_cast<float>(residual[j]);
            const auto& cb = stack.levels[l];
            const std::size_t k = nearest_entry(residual_f.data(), cb.entries);
            const float* z = cb.entries.row(k);
            // commitment: ||e^(l) - z^(l)||^2 with the codeword held fixed
            report.commitment_per_level[l] += squared_l2(residual_f.data(), z, d);
            for (std::size_t j = 0; j < d; ++j) residual[j] -= static_cast<double>(z[j]);
        }
        double rec = 0.0;
        for (std::size_t j = 0; j < d; ++j) rec += residual[j] * residual[j];
        report.reconstruction += rec;
    }
    report.reconstruction /= static_cast<double>(n);
    double commit_sum = 0.0;
    for (auto& c : report.commitment_per_level) {
        c /= static_cast<double>(n);
        commit_sum += c;
    }
    report.total = report.reconstruction + beta * commit_sum;
    return report;
}

std::vector<SemanticId> quantize_all(const MatF& semantic, const CodebookStack& stack) {
    std::vector<SemanticId> out;
    out.reserve(semantic.rows());
    for (std::size_t i = 0; i < semantic.rows(); ++i) {
        out.push_back(quantize(semantic.row_span(i), stack).sid);
    }
    return out;
}

void save_codebooks(const CodebookStack& stack, const std::string& path) {
    nlohmann::json header;
    header["schema_version"] = 1;
    header["levels"] = stack.num_levels();
    std::vector<uint32_t> sizes;
    for (const auto& cb : stack.levels) sizes.push_back(static_cast<uint32_t>(cb.entries.rows()));
    header["codebook_sizes"] = sizes;
    header["dim"] = stack.dim();
    header["decay"] = stack.config.ema_decay;
    header["epsilon"] = stack.config.epsilon;
    header["dead_threshold"] = stack.config.dead_threshold;
    header["epochs"] = stack.config.epochs;
    header["seed"] = stack.config.seed;
    const std::string json = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    write_pod<uint32_t>(os, static_cast<uint32_t>(json.size()));
    os.write(json.data(), static_cast<std::streamsize>(json.size()));
    for (const auto& cb : stack.levels) {
        os.write(reinterpret_cast<const char*>(cb.entries.storage().data()),
                 static_cast<std::streamsize>(cb.entries.storage().size() * sizeof(float)));
        os.write(reinterpret_cast<const char*>(cb.ema_counts.data()),
                 static_cast<std::streamsize>(cb.ema_counts.size() * sizeof(double)));
        os.write(reinterpret_cast<const char*>(cb.ema_sums.storage().data()),
                 static_cast<std::streamsize>(cb.ema_sums.storage().size() * sizeof(double)));
    }
    if (!os) throw IoError("write failed: " + path);
}

CodebookStack load_codebooks(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw ValidationError(path + ": not an SQZK codebook file");
    }
    uint32_t json_len = 0;
    is.read(reinterpret_cast<char*>(&json_len), sizeof(json_len));
    std::string json(json_len, '\0');
    is.read(json.data(), json_len);
    if (!is) throw ValidationError(path + ": truncated header");
    const auto header = nlohmann::json::parse(json);

    CodebookStack stack;
    stack.config.levels = header.at("levels").get<uint32_t>();
    stack.config.codebook_sizes = header.at("codebook_sizes").get<std::vector<uint32_t>>();
    stack.config.ema_decay = header.at("decay").get<double>();
    stack.config.epsilon = header.at("epsilon").get<double>();
    stack.config.dead_threshold = header.value("dead_threshold", 1e-3);
    stack.config.epochs = header.value("epochs", 25u);
    stack.config.seed = header.at("seed").get<uint64_t>();
    const auto d = header.at("dim").get<std::size_t>();

    for (uint32_t l = 0; l < stack.config.levels; ++l) {
        const uint32_t C = stack.config.codebook_sizes.size() == 1
                               ? stack.config.codebook_sizes[0]
                               : stack.config.codebook_sizes[l];
        Codebook cb;
        cb.level = l + 1;
        cb.entries = MatF(C, d);
        cb.ema_counts.assign(C, 0.0);
        cb.ema_sums = MatD(C, d);
        is.read(reinterpret_cast<char*>(cb.entries.storage().data()),
                static_cast<std::streamsize>(cb.entries.storage().size() * sizeof(float)));
        is.read(reinterpret_cast<char*>(cb.ema_counts.data()),
                static_cast<std::streamsize>(cb.ema_counts.size() * sizeof(double)));
        is.read(reinterpret_cast<char*>(cb.ema_sums.storage().data()),
                static_cast<std::streamsize>(cb.ema_sums.storage().size() * sizeof(double)));
        if (!is) throw ValidationError(path + ": truncated codebook payload");
        stack.levels.push_back(std::move(cb));
    }
    return stack;
}

} // namespace sqz
