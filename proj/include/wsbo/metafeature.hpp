#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "wsbo/errors.hpp"
#include "wsbo/history.hpp"
#include "wsbo/rng.hpp"

namespace wsbo {

/// A dataset's learned fixed-length representation.
using MetaFeature = Eigen::VectorXd;

struct DenseLayer {
    Eigen::MatrixXd W;  // out x in
    Eigen::VectorXd b;  // out
};

/// One Siamese wing: a fully-connected per-instance feature extractor
/// (ReLU after every layer), arithmetic-mean aggregation over instances,
/// and a fully-connected head (ReLU on all but the final linear layer)
/// emitting the meta-feature.
///
/// The extractor input is the instance vector plus one scaled label channel
/// (label / num_classes), so the wing sees label information without the
/// input dimension depending on the class count.
struct WingParams {
    std::vector<DenseLayer> extractor;
    std::vector<DenseLayer> head;

    std::size_t input_dim() const {  // includes the label channel
        return extractor.empty() ? 0 : static_cast<std::size_t>(extractor.front().W.cols());
    }
    std::size_t feature_dim() const {
        return extractor.empty() ? 0 : static_cast<std::size_t>(extractor.back().W.rows());
    }
    std::size_t meta_dim() const {
        return head.empty() ? 0 : static_cast<std::size_t>(head.back().W.rows());
    }
};

/// Layer widths for a wing. Defaults: extractor [in, 64, 64], head
/// 64 -> [256, 256] -> 256.
struct WingConfig {
    std::vector<int> extractor_widths{64, 64};
    std::vector<int> head_widths{256, 256, 256};
};

/// Symmetric uniform fan-in initialization, seeded.
inline WingParams init_wing(std::size_t instance_dim, const WingConfig& cfg = {}, std::uint64_t seed = 0) {
    if (cfg.extractor_widths.empty() || cfg.head_widths.empty()) {
        throw DomainError("wing needs at least one extractor and one head layer");
    }
    Rng rng(derive_seed(seed, "wing-init"));
    auto make_layer = [&](int in, int out) {
        DenseLayer l;
        l.W.resize(out, in);
        l.b = Eigen::VectorXd::Zero(out);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (int r = 0; r < out; ++r) {
            for (int c = 0; c < in; ++c) l.W(r, c) = bound * (2.0 * rng.next_double() - 1.0);
        }
        return l;
    };
    WingParams w;
    int in = static_cast<int>(instance_dim) + 1;  // +1 label channel
    for (int width : cfg.extractor_widths) {
        w.extractor.push_back(make_layer(in, width));
        in = width;
    }
    for (int width : cfg.head_widths) {
        w.head.push_back(make_layer(in, width));
        in = width;
    }
    return w;
}

namespace detail {

/// Builds the wing input matrix for a subset of instances: coordinates plus
/// the scaled label channel. An empty subset means "all instances".
inline Eigen::MatrixXd wing_input(const InstanceSet& set, const std::vector<std::size_t>* subset = nullptr) {
    const std::size_t n = subset ? subset->size() : set.count();
    Eigen::MatrixXd X(n, set.dim() + 1);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t src = subset ? (*subset)[r] : r;
        X.block(static_cast<Eigen::Index>(r), 0, 1, static_cast<Eigen::Index>(set.dim())) =
            set.data.row(static_cast<Eigen::Index>(src));
        X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(set.dim())) =
            static_cast<double>(set.labels[src]) / static_cast<double>(set.num_classes);
    }
    return X;
}

struct ForwardCache {
    Eigen::MatrixXd input;                 // n x (dim+1)
    std::vector<Eigen::MatrixXd> ext_pre;  // per extractor layer
    std::vector<Eigen::MatrixXd> ext_act;
    Eigen::VectorXd pooled;                // mean feature
    std::vector<Eigen::VectorXd> head_pre;
    std::vector<Eigen::VectorXd> head_act;  // last entry is the meta-feature
};

inline ForwardCache wing_forward(const WingParams& w, Eigen::MatrixXd X) {
    if (static_cast<std::size_t>(X.cols()) != w.input_dim()) {
        throw DimensionMismatchError("wing input has dim " + std::to_string(X.cols()) + ", expected " +
                                     std::to_string(w.input_dim()));
    }
    if (X.rows() == 0) throw DomainError("wing forward: empty instance batch");
    ForwardCache c;
    c.input = std::move(X);
    const Eigen::MatrixXd* cur = &c.input;
    for (const auto& l : w.extractor) {
        Eigen::MatrixXd pre = (*cur * l.W.transpose()).rowwise() + l.b.transpose();
        c.ext_pre.push_back(pre);
        c.ext_act.push_back(pre.cwiseMax(0.0));
        cur = &c.ext_act.back();
    }
    c.pooled = cur->colwise().mean();
    Eigen::VectorXd v = c.pooled;
    for (std::size_t i = 0; i < w.head.size(); ++i) {
        Eigen::VectorXd pre = w.head[i].W * v + w.head[i].b;
        c.head_pre.push_back(pre);
        v = (i + 1 < w.head.size()) ? pre.cwiseMax(0.0) : pre;  // final layer is linear
        c.head_act.push_back(v);
    }
    return c;
}

struct WingGrads {
    std::vector<DenseLayer> extractor;
    std::vector<DenseLayer> head;

    static WingGrads zeros_like(const WingParams& w) {
        WingGrads g;
        auto zero = [](const DenseLayer& l) {
            return DenseLayer{Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()),
                              Eigen::VectorXd::Zero(l.b.size())};
        };
        for (const auto& l : w.extractor) g.extractor.push_back(zero(l));
        for (const auto& l : w.head) g.head.push_back(zero(l));
        return g;
    }
};

/// Reverse-mode pass through head, mean aggregation, and extractor for one
/// wing evaluation; accumulates into g.
inline void wing_backward(const WingParams& w, const ForwardCache& c, const Eigen::VectorXd& g_meta,
                          WingGrads& g) {
    Eigen::VectorXd grad = g_meta;
    for (std::size_t li = w.head.size(); li-- > 0;) {
        if (li + 1 < w.head.size()) {
            grad = grad.cwiseProduct((c.head_pre[li].array() > 0.0).cast<double>().matrix());
        }
        const Eigen::VectorXd& in = (li == 0) ? c.pooled : c.head_act[li - 1];
        g.head[li].W += grad * in.transpose();
        g.head[li].b += grad;
        grad = w.head[li].W.transpose() * grad;
    }
    // Mean aggregation spreads the pooled gradient evenly over instances.
    const double n = static_cast<double>(c.input.rows());
    Eigen::MatrixXd G = (grad / n).transpose().replicate(c.input.rows(), 1);
    for (std::size_t li = w.extractor.size(); li-- > 0;) {
        G = G.cwiseProduct((c.ext_pre[li].array() > 0.0).cast<double>().matrix());
        const Eigen::MatrixXd& in = (li == 0) ? c.input : c.ext_act[li - 1];
        g.extractor[li].W += G.transpose() * in;
        g.extractor[li].b += G.colwise().sum().transpose();
        G = G * w.extractor[li].W;
    }
}

}  // namespace detail

/// Per-instance feature vectors (one row per instance) for a subset of a
/// dataset's instances. Rows are independent of one another by construction.
inline Eigen::MatrixXd deep_features(const WingParams& w, const InstanceSet& set,
                                     const std::vector<std::size_t>* subset = nullptr) {
    Eigen::MatrixXd X = detail::wing_input(set, subset);
    for (const auto& l : w.extractor) {
        X = ((X * l.W.transpose()).rowwise() + l.b.transpose()).cwiseMax(0.0);
    }
    return X;
}

/// Arithmetic-mean aggregation over instance features: permutation invariant
/// and independent of the instance count.
inline Eigen::VectorXd aggregate_adf(const Eigen::MatrixXd& features) {
    if (features.rows() == 0) throw DomainError("aggregate_adf: empty feature list");
    return features.colwise().mean();
}

/// Euclidean distance between two meta-features.
inline double mf_distance(const MetaFeature& a, const MetaFeature& b) {
    if (a.size() != b.size()) throw DimensionMismatchError("mf_distance: lengths differ");
    return (a - b).norm();
}

/// Squared residual between the target distance and the meta-feature
/// distance; the training objective is its mean over a batch of pairs.
inline double pair_loss(const MetaFeature& mi, const MetaFeature& mj, double d_target) {
    if (d_target < 0.0) throw DomainError("pair_loss: target distance must be >= 0");
    const double r = d_target - mf_distance(mi, mj);
    return r * r;
}

/// Embeds a prepared wing-input matrix through extractor, aggregation, head.
inline MetaFeature embed_input(const WingParams& w, Eigen::MatrixXd X) {
    return detail::wing_forward(w, std::move(X)).head_act.back();
}

/// Subsamples min(tau, count) instances without replacement (seeded; the
/// whole set, in order, when tau covers it) and embeds them.
inline MetaFeature embed_instances(const WingParams& w, const InstanceSet& set, std::size_t tau,
                                   std::uint64_t seed) {
    if (set.count() == 0) throw DataError("embed: empty instance set");
    if (tau >= set.count()) {
        return embed_input(w, detail::wing_input(set));
    }
    Rng rng(seed);
    const auto subset = rng.sample_without_replacement(set.count(), tau);
    return embed_input(w, detail::wing_input(set, &subset));
}

inline MetaFeature embed_dataset(const WingParams& w, const DatasetRecord& record, std::size_t tau,
                                 std::uint64_t seed) {
    return embed_instances(w, record.instances, tau, seed);
}

/// Ids of the k records whose stored meta-features are nearest to the query,
/// ascending by distance; ties break toward the earlier record.
inline std::vector<std::string> knn(const MetaFeature& query, const HistoryStore& store, std::size_t k) {
    if (!store.metafeatures()) throw DataError("knn: store has no metafeatures");
    if (k > store.size()) throw DomainError("knn: k exceeds the number of records");
    const auto& mf = *store.metafeatures();
    std::vector<std::size_t> order(store.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> dist(store.size());
    for (std::size_t i = 0; i < mf.size(); ++i) dist[i] = mf_distance(query, mf[i]);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    std::vector<std::string> ids;
    ids.reserve(k);
    for (std::size_t i = 0; i < k; ++i) ids.push_back(store.records()[order[i]].id);
    return ids;
}

/// Embeds every record of a store with one shared (tau, seed) convention,
/// so a new dataset embedded with the same convention is directly comparable.
inline std::vector<MetaFeature> compute_metafeatures(const HistoryStore& store, const WingParams& w,
                                                     std::size_t tau, std::uint64_t seed) {
    std::vector<MetaFeature> out;
    out.reserve(store.size());
    for (const auto& r : store.records()) out.push_back(embed_dataset(w, r, tau, seed));
    return out;
}

// --- training ---------------------------------------------------------------

struct TrainConfig {
    std::size_t tau = 200;       // instances subsampled per dataset per pair
    std::size_t iterations = 2000;
    std::size_t batch_pairs = 8;  // dataset pairs per gradient step
    double step_size = 1e-4;      // initial learning rate
    double decay = 1e-3;          // exponential decay rate of the learning rate
    std::uint64_t seed = 0;
    std::size_t val_pairs = 20;   // pairs held out of training for the loss trace

    void check() const {
        if (tau < 1) throw DomainError("tau must be >= 1");
        if (iterations < 1) throw DomainError("iterations must be >= 1");
        if (batch_pairs < 1) throw DomainError("batch_pairs must be >= 1");
    }
};

struct LossPoint {
    std::size_t iteration;
    double train_loss;
    double val_loss;  // NaN when no validation pairs exist
};

struct TrainResult {
    WingParams wing;
    std::vector<LossPoint> trace;
};

/// One training example: prepared inputs for both sides plus the target
/// distance. Exposed so gradient checks can drive the exact batch objective.
struct PairExample {
    Eigen::MatrixXd xa;
    Eigen::MatrixXd xb;
    double d_target = 0.0;
};

/// Mean pair loss over a batch.
inline double batch_loss(const WingParams& w, const std::vector<PairExample>& batch) {
    if (batch.empty()) throw DomainError("batch_loss: empty batch");
    double total = 0.0;
    for (const auto& ex : batch) {
        total += pair_loss(embed_input(w, ex.xa), embed_input(w, ex.xb), ex.d_target);
    }
    return total / static_cast<double>(batch.size());
}

/// Analytic gradients of the mean pair loss, reverse-mode through both
/// wings (shared weights: both sides accumulate into the same tensors).
inline detail::WingGrads batch_gradients(const WingParams& w, const std::vector<PairExample>& batch,
                                         double* loss_out = nullptr) {
    if (batch.empty()) throw DomainError("batch_gradients: empty batch");
    auto grads = detail::WingGrads::zeros_like(w);
    double total = 0.0;
    for (const auto& ex : batch) {
        auto ca = detail::wing_forward(w, ex.xa);
        auto cb = detail::wing_forward(w, ex.xb);
        const Eigen::VectorXd& ma = ca.head_act.back();
        const Eigen::VectorXd& mb = cb.head_act.back();
        const Eigen::VectorXd diff = ma - mb;
        const double d = diff.norm();
        const double r = ex.d_target - d;
        total += r * r;
        if (d > 1e-12) {
            // dL/dma = -2 r (ma - mb)/d, and the mirror for mb.
            const Eigen::VectorXd g = (-2.0 * r / d) * diff;
            detail::wing_backward(w, ca, g, grads);
            detail::wing_backward(w, cb, -g, grads);
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& l : grads.extractor) {
        l.W *= inv;
        l.b *= inv;
    }
    for (auto& l : grads.head) {
        l.W *= inv;
        l.b *= inv;
    }
    if (loss_out) *loss_out = total * inv;
    return grads;
}

namespace detail {

struct AdamState {
    WingGrads m;
    WingGrads v;
    std::size_t step = 0;

    static AdamState zeros_like(const WingParams& w) {
        return AdamState{WingGrads::zeros_like(w), WingGrads::zeros_like(w), 0};
    }
};

inline void adam_update(WingParams& w, const WingGrads& g, AdamState& st, double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    st.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
    auto update = [&](DenseLayer& p, const DenseLayer& grad, DenseLayer& m, DenseLayer& v) {
        m.W = beta1 * m.W + (1.0 - beta1) * grad.W;
        m.b = beta1 * m.b + (1.0 - beta1) * grad.b;
        v.W = beta2 * v.W.array().matrix() + (1.0 - beta2) * grad.W.array().square().matrix();
        v.b = beta2 * v.b.array().matrix() + (1.0 - beta2) * grad.b.array().square().matrix();
        p.W.array() -= lr * (m.W.array() / bc1) / ((v.W.array() / bc2).sqrt() + eps);
        p.b.array() -= lr * (m.b.array() / bc1) / ((v.b.array() / bc2).sqrt() + eps);
    };
    for (std::size_t i = 0; i < w.extractor.size(); ++i) {
        update(w.extractor[i], g.extractor[i], st.m.extractor[i], st.v.extractor[i]);
    }
    for (std::size_t i = 0; i < w.head.size(); ++i) {
        update(w.head[i], g.head[i], st.m.head[i], st.v.head[i]);
    }
}

}  // namespace detail

/// As train(), but starting from caller-provided wing parameters (used for
/// custom layer sizes and by tests).
inline TrainResult train_wing(const HistoryStore& store, const TrainConfig& cfg, WingParams wing) {
    cfg.check();
    const std::size_t K = store.size();
    if (K < 2) throw DataError("train requires at least 2 records");

    const std::size_t total_pairs = K * (K - 1) / 2;
    const std::size_t n_val = std::min(cfg.val_pairs, total_pairs / 2);

    // Fixed validation pairs with frozen instance subsets.
    Rng val_rng(derive_seed(cfg.seed, "val-pairs"));
    std::vector<std::pair<std::size_t, std::size_t>> val_pairs;
    while (val_pairs.size() < n_val) {
        std::size_t i = val_rng.next_index(K);
        std::size_t j = val_rng.next_index(K);
        if (i == j) continue;
        if (i > j) std::swap(i, j);
        if (std::find(val_pairs.begin(), val_pairs.end(), std::make_pair(i, j)) != val_pairs.end()) continue;
        val_pairs.emplace_back(i, j);
    }
    auto is_val = [&](std::size_t i, std::size_t j) {
        if (i > j) std::swap(i, j);
        return std::find(val_pairs.begin(), val_pairs.end(), std::make_pair(i, j)) != val_pairs.end();
    };

    auto subsample_input = [&](const DatasetRecord& r, Rng& rng) {
        const auto& set = r.instances;
        if (cfg.tau >= set.count()) return detail::wing_input(set);
        const auto subset = rng.sample_without_replacement(set.count(), cfg.tau);
        return detail::wing_input(set, &subset);
    };

    Rng val_sub_rng(derive_seed(cfg.seed, "val-subsample"));
    std::vector<PairExample> val_batch;
    for (const auto& [i, j] : val_pairs) {
        PairExample ex;
        ex.xa = subsample_input(store.records()[i], val_sub_rng);
        ex.xb = subsample_input(store.records()[j], val_sub_rng);
        ex.d_target = target_distance(store, store.records()[i].id, store.records()[j].id);
        val_batch.push_back(std::move(ex));
    }

    Rng pair_rng(derive_seed(cfg.seed, "train-pairs"));
    Rng sub_rng(derive_seed(cfg.seed, "train-subsample"));
    auto adam = detail::AdamState::zeros_like(wing);
    std::vector<LossPoint> trace;
    trace.reserve(cfg.iterations);

    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        std::vector<PairExample> batch;
        batch.reserve(cfg.batch_pairs);
        while (batch.size() < cfg.batch_pairs) {
            const std::size_t i = pair_rng.next_index(K);
            const std::size_t j = pair_rng.next_index(K);
            if (i == j || is_val(i, j)) continue;
            PairExample ex;
            ex.xa = subsample_input(store.records()[i], sub_rng);
            ex.xb = subsample_input(store.records()[j], sub_rng);
            ex.d_target = target_distance(store, store.records()[i].id, store.records()[j].id);
            batch.push_back(std::move(ex));
        }
        double train_loss = 0.0;
        const auto grads = batch_gradients(wing, batch, &train_loss);
        if (!std::isfinite(train_loss)) {
            throw NumericalError("training diverged at iteration " + std::to_string(t));
        }
        const double lr = cfg.step_size * std::exp(-cfg.decay * static_cast<double>(t));
        detail::adam_update(wing, grads, adam, lr);

        const double val_loss =
            val_batch.empty() ? std::numeric_limits<double>::quiet_NaN() : batch_loss(wing, val_batch);
        trace.push_back(LossPoint{t, train_loss, val_loss});
    }
    return TrainResult{std::move(wing), std::move(trace)};
}

/// Trains a wing against the store's pairwise target distances: every step
/// samples batch_pairs dataset pairs (i != j), subsamples tau instances per
/// side, and takes an Adam step on the mean squared residual with an
/// exponentially decayed learning rate. A fixed set of validation pairs is
/// excluded from training and tracked in the loss trace.
inline TrainResult train(const HistoryStore& store, const TrainConfig& cfg) {
    cfg.check();
    const std::size_t K = store.size();
    if (K < 2) throw DataError("train requires at least 2 records");

    const std::size_t instance_dim = store.records().front().instances.dim();
    for (const auto& r : store.records()) {
        if (r.instances.dim() != instance_dim) {
            throw DataError("record '" + r.id + "': instance dim differs across the store");
        }
    }

    WingParams wing = init_wing(instance_dim, WingConfig{}, cfg.seed);
    return train_wing(store, cfg, std::move(wing));
}

// --- serialization ----------------------------------------------------------

inline nlohmann::ordered_json wing_to_json(const WingParams& w) {
    auto layer_json = [](const DenseLayer& l) {
        nlohmann::ordered_json j;
        j["rows"] = l.W.rows();
        j["cols"] = l.W.cols();
        std::vector<double> flat(static_cast<std::size_t>(l.W.size()));
        for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.W.cols(); ++c) {
                flat[static_cast<std::size_t>(r * l.W.cols() + c)] = l.W(r, c);
            }
        }
        j["w"] = flat;
        j["b"] = std::vector<double>(l.b.data(), l.b.data() + l.b.size());
        return j;
    };
    nlohmann::ordered_json j;
    j["extractor"] = nlohmann::ordered_json::array();
    j["head"] = nlohmann::ordered_json::array();
    for (const auto& l : w.extractor) j["extractor"].push_back(layer_json(l));
    for (const auto& l : w.head) j["head"].push_back(layer_json(l));
    return j;
}

template <typename Json>
WingParams wing_from_json(const Json& j) {
    auto layer_from = [](const Json& jl) {
        const auto rows = jl.at("rows").template get<Eigen::Index>();
        const auto cols = jl.at("cols").template get<Eigen::Index>();
        const auto flat = jl.at("w").template get<std::vector<double>>();
        const auto bias = jl.at("b").template get<std::vector<double>>();
        if (static_cast<Eigen::Index>(flat.size()) != rows * cols ||
            static_cast<Eigen::Index>(bias.size()) != rows) {
            throw ParseError("wing layer: weight array size disagrees with rows x cols");
        }
        DenseLayer l;
        l.W.resize(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) l.W(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
        }
        l.b = Eigen::Map<const Eigen::VectorXd>(bias.data(), rows);
        return l;
    };
    try {
        WingParams w;
        for (const auto& jl : j.at("extractor")) w.extractor.push_back(layer_from(jl));
        for (const auto& jl : j.at("head")) w.head.push_back(layer_from(jl));
        if (w.extractor.empty() || w.head.empty()) throw ParseError("wing: empty layer stack");
        return w;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("wing: ") + e.what());
    }
}

inline void save_wing(const WingParams& w, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << wing_to_json(w).dump(2) << "\n";
}

inline WingParams load_wing(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("wing file '" + path.string() + "' cannot be opened");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("wing file '" + path.string() + "': " + e.what());
    }
    return wing_from_json(j);
}

inline void write_loss_csv(const std::vector<LossPoint>& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << "iteration,train_loss,val_loss\n";
    char buf[64];
    for (const auto& p : trace) {
        std::snprintf(buf, sizeof buf, "%.17g", p.train_loss);
        out << p.iteration << "," << buf;
        std::snprintf(buf, sizeof buf, "%.17g", p.val_loss);
        out << "," << buf << "\n";
    }
}

}  // namespace wsbo
