#include "sqz/corpus.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sqz/error.hpp"
#include "sqz/prng.hpp"

static_assert(std::endian::native == std::endian::little,
              "SQZ1 container assumes a little-endian host");

namespace sqz {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'Z', '1'};

void check_finite(const MatF& m, const char* what) {
    for (float v : m.storage()) {
        if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": non-finite component");
    }
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("unexpected end of file");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

double parse_double(const std::string& s, std::size_t row) {
    double v = 0;
    const auto* begin = s.data();
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end) {
        throw ValidationError("parse error at row " + std::to_string(row) + ": bad number '" + s + "'");
    }
    return v;
}

uint64_t parse_u64(const std::string& s, std::size_t row) {
    uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ValidationError("parse error at row " + std::to_string(row) + ": bad id '" + s + "'");
    }
    return v;
}

} // namespace

ItemCorpus::ItemCorpus(std::vector<uint64_t> ids, MatF semantic, MatF ranking)
    : ids_(std::move(ids)), semantic_(std::move(semantic)), ranking_(std::move(ranking)) {
    if (semantic_.rows() != ids_.size() || ranking_.rows() != ids_.size()) {
        throw ValidationError("ItemCorpus: row counts do not match id count");
    }
    check_finite(semantic_, "semantic embeddings");
    check_finite(ranking_, "ranking embeddings");
    index_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        const auto [it, inserted] = index_.emplace(ids_[i], i);
        (void)it;
        if (!inserted) {
            throw ValidationError("duplicate item_id " + std::to_string(ids_[i]));
        }
    }
}

std::optional<std::size_t> ItemCorpus::index_of(uint64_t item_id) const {
    const auto it = index_.find(item_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void ItemCorpus::assign_sids(std::vector<SemanticId> sids) {
    if (sids.size() != size()) throw ValidationError("assign_sids: count mismatch");
    sids_ = std::move(sids);
}

void SyntheticConfig::validate() const {
    if (num_coarse_clusters < 1 || num_fine_per_coarse < 1 || items_per_fine < 1) {
        throw ValidationError("synthetic config: all cluster counts must be >= 1");
    }
    if (d < 1 || d_prime < 1) throw ValidationError("synthetic config: dimensions must be >= 1");
    if (num_users < 1 || history_length < 1) {
        throw ValidationError("synthetic config: num_users and history_length must be >= 1");
    }
    if (!(coarse_spread > fine_spread && fine_spread > noise_sigma)) {
        throw ValidationError("synthetic config: require coarse_spread > fine_spread > noise_sigma");
    }
    if (noise_sigma < 0 || zipf_exponent < 0) {
        throw ValidationError("synthetic config: spreads and zipf_exponent must be nonnegative");
    }
    if (timestamp_spacing < 1) throw ValidationError("synthetic config: timestamp_spacing must be >= 1");
}

// ---------------------------------------------------------------------------
// SQZ1 binary container
// ---------------------------------------------------------------------------

void save_embeddings(const ItemCorpus& corpus, const std::string& path, CorpusFormat format) {
    if (format == CorpusFormat::binary) {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot open " + path + " for writing");
        os.write(kMagic, 4);
        write_pod<uint32_t>(os, static_cast<uint32_t>(corpus.size()));
        write_pod<uint32_t>(os, static_cast<uint32_t>(corpus.dim_semantic()));
        write_pod<uint32_t>(os, static_cast<uint32_t>(corpus.dim_ranking()));
        const auto& sem = corpus.semantic().storage();
        const auto& rank = corpus.ranking().storage();
        os.write(reinterpret_cast<const char*>(sem.data()),
                 static_cast<std::streamsize>(sem.size() * sizeof(float)));
        os.write(reinterpret_cast<const char*>(rank.data()),
                 static_cast<std::streamsize>(rank.size() * sizeof(float)));
        os.write(reinterpret_cast<const char*>(corpus.ids().data()),
                 static_cast<std::streamsize>(corpus.ids().size() * sizeof(uint64_t)));
        if (!os) throw IoError("write failed: " + path);

        nlohmann::json meta;
        meta["magic"] = "SQZ1";
        meta["n_items"] = corpus.size();
        meta["d"] = corpus.dim_semantic();
        meta["d_prime"] = corpus.dim_ranking();
        std::ofstream ms(path + ".meta.json");
        if (!ms) throw IoError("cannot open " + path + ".meta.json for writing");
        ms << meta.dump(2) << "\n";
        return;
    }

    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "item_id";
    for (std::size_t j = 0; j < corpus.dim_semantic(); ++j) os << ",sem_" << j;
    for (std::size_t j = 0; j < corpus.dim_ranking(); ++j) os << ",rank_" << j;
    os << "\n";
    os.precision(std::numeric_limits<float>::max_digits10);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        os << corpus.ids()[i];
        for (float v : corpus.semantic_of(i)) os << ',' << v;
        for (float v : corpus.ranking_of(i)) os << ',' << v;
        os << "\n";
    }
    if (!os) throw IoError("write failed: " + path);
}

namespace {

ItemCorpus load_embeddings_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw ValidationError(path + ": not an SQZ1 file");
    }
    const auto n = read_pod<uint32_t>(is);
    const auto d = read_pod<uint32_t>(is);
    const auto dp = read_pod<uint32_t>(is);
    MatF sem(n, d);
    MatF rank(n, dp);
    std::vector<uint64_t> ids(n);
    is.read(reinterpret_cast<char*>(sem.storage().data()),
            static_cast<std::streamsize>(sem.storage().size() * sizeof(float)));
    is.read(reinterpret_cast<char*>(rank.storage().data()),
            static_cast<std::streamsize>(rank.storage().size() * sizeof(float)));
    is.read(reinterpret_cast<char*>(ids.data()),
            static_cast<std::streamsize>(ids.size() * sizeof(uint64_t)));
    if (!is) throw ValidationError(path + ": truncated SQZ1 payload");
    return ItemCorpus(std::move(ids), std::move(sem), std::move(rank));
}

ItemCorpus load_embeddings_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw ValidationError(path + ": empty file");
    const auto header = split_csv_line(line);
    if (header.empty() || header[0] != "item_id") {
        throw ValidationError(path + ": missing item_id header");
    }
    std::size_t d = 0, dp = 0;
    for (std::size_t i = 1; i < header.size(); ++i) {
        if (header[i].rfind("sem_", 0) == 0) ++d;
        else if (header[i].rfind("rank_", 0) == 0) ++dp;
        else throw ValidationError(path + ": unexpected header column '" + header[i] + "'");
    }
    if (1 + d + dp != header.size()) throw ValidationError(path + ": malformed header");

    std::vector<uint64_t> ids;
    std::vector<float> sem, rank;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ++row;
        const auto fields = split_csv_line(line);
        if (fields.size() != 1 + d + dp) {
            throw ValidationError("dimension mismatch at row " + std::to_string(row) + ": expected " +
                                  std::to_string(1 + d + dp) + " fields, got " +
                                  std::to_string(fields.size()));
        }
        ids.push_back(parse_u64(fields[0], row));
        for (std::size_t j = 0; j < d; ++j) {
            sem.push_back(static_cast<float>(parse_double(fields[1 + j], row)));
        }
        for (std::size_t j = 0; j < dp; ++j) {
            rank.push_back(static_cast<float>(parse_double(fields[1 + d + j], row)));
        }
    }
    MatF sm(ids.size(), d);
    sm.storage() = std::move(sem);
    MatF rm(ids.size(), dp);
    rm.storage() = std::move(rank);
    return ItemCorpus(std::move(ids), std::move(sm), std::move(rm));
}

} // namespace

ItemCorpus load_embeddings(const std::string& path, CorpusFormat format) {
    return format == CorpusFormat::binary ? load_embeddings_binary(path)
                                          : load_embeddings_csv(path);
}

// ---------------------------------------------------------------------------
// Event files
// ---------------------------------------------------------------------------

std::vector<InteractionSequence> load_events(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string line;
    std::vector<InteractionSequence> out;
    std::size_t row = 0;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("user_id", 0) == 0) continue; // optional header
        }
        ++row;
        const auto fields = split_csv_line(line);
        if (fields.size() != 3) {
            throw ValidationError("event parse error at row " + std::to_string(row) +
                                  ": expected user_id,item_id,timestamp");
        }
        const uint64_t user = parse_u64(fields[0], row);
        const uint64_t item = parse_u64(fields[1], row);
        const auto ts = static_cast<int64_t>(parse_u64(fields[2], row));
        if (out.empty() || out.back().user_id != user) {
            if (!out.empty() && out.back().user_id > user) {
                throw ValidationError("event file not sorted by user_id at row " + std::to_string(row));
            }
            out.push_back(InteractionSequence{user, {}});
        }
        auto& seq = out.back();
        if (!seq.events.empty() && seq.events.back().timestamp > ts) {
            throw ValidationError("event file not sorted by timestamp at row " + std::to_string(row));
        }
        seq.events.push_back(InteractionEvent{item, ts});
    }
    return out;
}

void save_events(std::span<const InteractionSequence> histories, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "user_id,item_id,timestamp\n";
    for (const auto& seq : histories) {
        for (const auto& ev : seq.events) {
            os << seq.user_id << ',' << ev.item_id << ',' << ev.timestamp << "\n";
        }
    }
    if (!os) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

std::pair<ItemCorpus, GroundTruth> generate_synthetic_corpus(const SyntheticConfig& cfg) {
    cfg.validate();
    const uint32_t n_coarse = cfg.num_coarse_clusters;
    const uint32_t n_fine = n_coarse * cfg.num_fine_per_coarse;
    const std::size_t n_items = static_cast<std::size_t>(n_fine) * cfg.items_per_fine;

    Prng coarse_rng(derive_seed(cfg.seed, stream::kCoarseCenters));
    Prng fine_rng(derive_seed(cfg.seed, stream::kFineCenters));
    Prng noise_rng(derive_seed(cfg.seed, stream::kNoise));
    Prng rank_rng(derive_seed(cfg.seed, stream::kRanking));

    MatF coarse_centers(n_coarse, cfg.d);
    for (uint32_t c = 0; c < n_coarse; ++c) {
        for (uint32_t j = 0; j < cfg.d; ++j) {
            coarse_centers(c, j) = static_cast<float>(coarse_rng.normal() * cfg.coarse_spread);
        }
    }
    MatF fine_centers(n_fine, cfg.d);
    for (uint32_t f = 0; f < n_fine; ++f) {
        const uint32_t c = f / cfg.num_fine_per_coarse;
        for (uint32_t j = 0; j < cfg.d; ++j) {
            fine_centers(f, j) = static_cast<float>(
                static_cast<double>(coarse_centers(c, j)) + fine_rng.normal() * cfg.fine_spread);
        }
    }

    std::vector<uint64_t> ids(n_items);
    MatF sem(n_items, cfg.d);
    MatF rank(n_items, cfg.d_prime);
    GroundTruth truth;
    truth.coarse_label.resize(n_items);
    truth.fine_label.resize(n_items);

    std::size_t idx = 0;
    for (uint32_t f = 0; f < n_fine; ++f) {
        for (uint32_t k = 0; k < cfg.items_per_fine; ++k, ++idx) {
            ids[idx] = idx + 1;
            truth.fine_label[idx] = f;
            truth.coarse_label[idx] = f / cfg.num_fine_per_coarse;
            if (cfg.noise_sigma == 0.0) {
                // bitwise copy of the fine center: zero intra-cluster variance
                std::copy_n(fine_centers.row(f), cfg.d, sem.row(idx));
            } else {
                for (uint32_t j = 0; j < cfg.d; ++j) {
                    sem(idx, j) = static_cast<float>(static_cast<double>(fine_centers(f, j)) +
                                                     noise_rng.normal() * cfg.noise_sigma);
                }
            }
            for (uint32_t j = 0; j < cfg.d_prime; ++j) {
                rank(idx, j) = static_cast<float>(rank_rng.normal());
            }
        }
    }

    truth.coarse_centers = std::move(coarse_centers);
    truth.fine_centers = std::move(fine_centers);
    return {ItemCorpus(std::move(ids), std::move(sem), std::move(rank)), std::move(truth)};
}

std::vector<double> zipf_masses(uint32_t n, double exponent) {
    std::vector<double> mass(n);
    double total = 0.0;
    for (uint32_t r = 0; r < n; ++r) {
        mass[r] = std::pow(static_cast<double>(r + 1), -exponent);
        total += mass[r];
    }
    for (auto& m : mass) m /= total;
    return mass;
}

std::vector<InteractionSequence> generate_user_histories(const SyntheticConfig& cfg,
                                                         const ItemCorpus& corpus) {
    cfg.validate();
    if (corpus.size() == 0) throw ValidationError("generate_user_histories: empty corpus");
    const uint32_t n_fine = cfg.num_coarse_clusters * cfg.num_fine_per_coarse;
    if (corpus.size() != static_cast<std::size_t>(n_fine) * cfg.items_per_fine) {
        throw ValidationError("generate_user_histories: corpus does not match synthetic config");
    }

    const auto mass = zipf_masses(n_fine, cfg.zipf_exponent);
    std::vector<double> cdf(mass.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < mass.size(); ++i) {
        acc += mass[i];
        cdf[i] = acc;
    }
    cdf.back() = 1.0;

    std::vector<InteractionSequence> out;
    out.reserve(cfg.num_users);
    for (uint32_t u = 0; u < cfg.num_users; ++u) {
        const uint64_t user_id = u + 1;
        Prng rng(derive_seed(cfg.seed, stream::kUserClusters, user_id));

        // user-specific interest ordering over fine clusters
        std::vector<uint32_t> perm(n_fine);
        for (uint32_t i = 0; i < n_fine; ++i) perm[i] = i;
        for (uint32_t i = n_fine - 1; i > 0; --i) {
            const auto j = static_cast<uint32_t>(rng.bounded(i + 1));
            std::swap(perm[i], perm[j]);
        }

        InteractionSequence seq;
        seq.user_id = user_id;
        seq.events.reserve(cfg.history_length);
        for (uint32_t n = 0; n < cfg.history_length; ++n) {
            const double x = rng.next_double();
            const auto rank_it = std::upper_bound(cdf.begin(), cdf.end(), x);
            const auto rank = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
                rank_it - cdf.begin(), static_cast<std::ptrdiff_t>(n_fine) - 1));
            const uint32_t cluster = perm[rank];
            const auto offset = rng.bounded(cfg.items_per_fine);
            const std::size_t item_index =
                static_cast<std::size_t>(cluster) * cfg.items_per_fine + offset;
            seq.events.push_back(InteractionEvent{
                corpus.ids()[item_index],
                cfg.base_timestamp + static_cast<int64_t>(n) * cfg.timestamp_spacing});
        }
        out.push_back(std::move(seq));
    }
    return out;
}

} // namespace sqz
