#include "sqz/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <unordered_map>

#include "sqz/error.hpp"
#include "sqz/prng.hpp"

namespace sqz {

namespace {

std::vector<std::size_t> resolve_items(const InteractionSequence& history,
                                       const ItemCorpus& corpus) {
    std::vector<std::size_t> idx;
    idx.reserve(history.events.size());
    for (std::size_t n = 0; n < history.events.size(); ++n) {
        const auto i = corpus.index_of(history.events[n].item_id);
        if (!i) {
            throw ValidationError("baseline: unknown item " +
                                  std::to_string(history.events[n].item_id) + " at event index " +
                                  std::to_string(n));
        }
        idx.push_back(*i);
    }
    return idx;
}

// mean ranking embedding per group
MatF pool_ranking(const std::vector<uint32_t>& group_of, std::size_t num_groups,
                  const std::vector<std::size_t>& idx, const ItemCorpus& corpus) {
    const std::size_t dp = corpus.dim_ranking();
    MatD sums(num_groups, dp);
    std::vector<uint64_t> counts(num_groups, 0);
    for (std::size_t n = 0; n < idx.size(); ++n) {
        const uint32_t g = group_of[n];
        counts[g] += 1;
        const float* r = corpus.ranking().row(idx[n]);
        double* s = sums.row(g);
        for (std::size_t j = 0; j < dp; ++j) s[j] += static_cast<double>(r[j]);
    }
    MatF out(num_groups, dp);
    for (std::size_t g = 0; g < num_groups; ++g) {
        if (counts[g] == 0) continue;
        for (std::size_t j = 0; j < dp; ++j) {
            out(g, j) = static_cast<float>(sums(g, j) / static_cast<double>(counts[g]));
        }
    }
    return out;
}

} // namespace

GroupingResult patch_compress(const InteractionSequence& history, const ItemCorpus& corpus,
                              uint32_t patch_count) {
    if (patch_count < 1) throw ValidationError("patch_compress: patch_count must be >= 1");
    const auto idx = resolve_items(history, corpus);
    const std::size_t n = idx.size();
    if (n == 0) throw ValidationError("patch_compress: empty history");
    const std::size_t g_total = std::min<std::size_t>(patch_count, n);
    const std::size_t base = n / g_total;
    const std::size_t remainder = n % g_total;

    GroupingResult out;
    out.method = "patch";
    out.group_of.resize(n);
    std::size_t pos = 0;
    for (std::size_t g = 0; g < g_total; ++g) {
        const std::size_t size = base + (g < remainder ? 1 : 0);
        for (std::size_t k = 0; k < size; ++k) out.group_of[pos++] = static_cast<uint32_t>(g);
    }
    out.group_vectors = pool_ranking(out.group_of, g_total, idx, corpus);
    return out;
}

GroupingResult kmeans_compress(const InteractionSequence& history, const ItemCorpus& corpus,
                               uint32_t groups, uint32_t iters, uint64_t seed) {
    const auto idx = resolve_items(history, corpus);
    const std::size_t n = idx.size();
    const std::size_t d = corpus.dim_semantic();
    if (groups < 1) throw ValidationError("kmeans_compress: groups must be >= 1");
    if (n < groups) {
        throw ValidationError("kmeans_compress: " + std::to_string(n) + " items < " +
                              std::to_string(groups) + " groups");
    }

    MatF points(n, d);
    for (std::size_t i = 0; i < n; ++i) std::copy_n(corpus.semantic().row(idx[i]), d, points.row(i));

    // distinct-sample seeding
    Prng rng(derive_seed(seed, stream::kKmeansInit));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.bounded(i + 1));
        std::swap(order[i], order[j]);
    }
    MatF centers(groups, d);
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < n && chosen.size() < groups; ++i) {
        const float* cand = points.row(order[i]);
        bool dup = false;
        for (std::size_t c : chosen) {
            if (std::memcmp(cand, points.row(c), d * sizeof(float)) == 0) { dup = true; break; }
        }
        if (!dup) chosen.push_back(order[i]);
    }
    for (std::size_t i = 0; chosen.size() < groups; ++i) chosen.push_back(order[i % n]);
    for (uint32_t g = 0; g < groups; ++g) std::copy_n(points.row(chosen[g]), d, centers.row(g));

    std::vector<uint32_t> assign(n, 0);
    std::vector<double> dist_to_center(n, 0.0);
    auto assignment_pass = [&] {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_dist = std::numeric_limits<double>::infinity();
            for (uint32_t g = 0; g < groups; ++g) {
                const double dd = squared_l2(points.row(i), centers.row(g), d);
                if (dd < best_dist) { best_dist = dd; best = g; }
            }
            assign[i] = static_cast<uint32_t>(best);
            dist_to_center[i] = best_dist;
        }
    };
    assignment_pass();

    for (uint32_t it = 0; it < iters; ++it) {
        MatD sums(groups, d);
        std::vector<uint64_t> counts(groups, 0);
        for (std::size_t i = 0; i < n; ++i) {
            counts[assign[i]] += 1;
            const float* p = points.row(i);
            double* s = sums.row(assign[i]);
            for (std::size_t j = 0; j < d; ++j) s[j] += static_cast<double>(p[j]);
        }
        for (uint32_t g = 0; g < groups; ++g) {
            if (counts[g] == 0) continue;
            for (std::size_t j = 0; j < d; ++j) {
                centers(g, j) = static_cast<float>(sums(g, j) / static_cast<double>(counts[g]));
            }
        }
        // empty clusters: reseed at the point farthest from its center
        for (uint32_t g = 0; g < groups; ++g) {
            if (counts[g] != 0) continue;
            std::size_t far = 0;
            double far_dist = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (dist_to_center[i] > far_dist) { far_dist = dist_to_center[i]; far = i; }
            }
            std::copy_n(points.row(far), d, centers.row(g));
            dist_to_center[far] = 0.0;
        }
        assignment_pass();
    }

    GroupingResult out;
    out.method = "kmeans";
    out.group_of = std::move(assign);
    out.group_vectors = pool_ranking(out.group_of, groups, idx, corpus);
    return out;
}

GroupingResult lsh_compress(const InteractionSequence& history, const ItemCorpus& corpus,
                            uint32_t num_bits, uint64_t seed) {
    if (num_bits < 1) throw ValidationError("lsh_compress: num_bits must be >= 1");
    if (num_bits > 30) throw ValidationError("lsh_compress: num_bits above 30 unsupported");
    const auto idx = resolve_items(history, corpus);
    const std::size_t n = idx.size();
    const std::size_t d = corpus.dim_semantic();
    if (n == 0) throw ValidationError("lsh_compress: empty history");

    Prng rng(derive_seed(seed, stream::kLshPlanes));
    MatD planes(num_bits, d);
    for (auto& v : planes.storage()) v = rng.normal();

    std::vector<uint32_t> keys(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const float* p = corpus.semantic().row(idx[i]);
        uint32_t key = 0;
        for (uint32_t b = 0; b < num_bits; ++b) {
            double dot = 0.0;
            const double* h = planes.row(b);
            for (std::size_t j = 0; j < d; ++j) dot += h[j] * static_cast<double>(p[j]);
            if (dot >= 0.0) key |= (1u << b);
        }
        keys[i] = key;
    }

    // dense group ids in order of first occurrence of each bucket key
    std::unordered_map<uint32_t, uint32_t> bucket_of;
    GroupingResult out;
    out.method = "lsh";
    out.group_of.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto [it, inserted] =
            bucket_of.emplace(keys[i], static_cast<uint32_t>(bucket_of.size()));
        (void)inserted;
        out.group_of[i] = it->second;
    }
    out.group_vectors = pool_ranking(out.group_of, bucket_of.size(), idx, corpus);
    return out;
}

double silhouette(const MatF& points, const std::vector<uint32_t>& labels) {
    const std::size_t n = points.rows();
    if (labels.size() != n) throw ValidationError("silhouette: label count mismatch");
    std::map<uint32_t, std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < n; ++i) clusters[labels[i]].push_back(i);
    if (clusters.size() < 2) throw ValidationError("silhouette: need at least two labels");

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& own = clusters[labels[i]];
        if (own.size() == 1) continue; // singleton scores 0
        double a = 0.0;
        for (std::size_t j : own) {
            if (j == i) continue;
            a += std::sqrt(squared_l2(points.row(i), points.row(j), points.cols()));
        }
        a /= static_cast<double>(own.size() - 1);

        double b = std::numeric_limits<double>::infinity();
        for (const auto& [label, members] : clusters) {
            if (label == labels[i]) continue;
            double mean = 0.0;
            for (std::size_t j : members) {
                mean += std::sqrt(squared_l2(points.row(i), points.row(j), points.cols()));
            }
            mean /= static_cast<double>(members.size());
            b = std::min(b, mean);
        }
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(n);
}

MatF group_semantic_centroids(const GroupingResult& grouping, const InteractionSequence& history,
                              const ItemCorpus& corpus) {
    const auto idx = resolve_items(history, corpus);
    if (grouping.group_of.size() != idx.size()) {
        throw ValidationError("group_semantic_centroids: grouping does not match history");
    }
    const std::size_t d = corpus.dim_semantic();
    const std::size_t G = grouping.num_groups();
    MatD sums(G, d);
    std::vector<uint64_t> counts(G, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const uint32_t g = grouping.group_of[i];
        counts[g] += 1;
        const float* p = corpus.semantic().row(idx[i]);
        double* s = sums.row(g);
        for (std::size_t j = 0; j < d; ++j) s[j] += static_cast<double>(p[j]);
    }
    MatF out(G, d);
    for (std::size_t g = 0; g < G; ++g) {
        if (counts[g] == 0) continue;
        for (std::size_t j = 0; j < d; ++j) {
            out(g, j) = static_cast<float>(sums(g, j) / static_cast<double>(counts[g]));
        }
    }
    return out;
}

double grouping_quantization_error(const GroupingResult& grouping,
                                   const InteractionSequence& history, const ItemCorpus& corpus) {
    const auto idx = resolve_items(history, corpus);
    const MatF centroids = group_semantic_centroids(grouping, history, corpus);
    double total = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        total += squared_l2(corpus.semantic().row(idx[i]), centroids.row(grouping.group_of[i]),
                            corpus.dim_semantic());
    }
    return idx.empty() ? 0.0 : total / static_cast<double>(idx.size());
}

} // namespace sqz
