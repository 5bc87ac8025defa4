#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "wsbo/errors.hpp"
#include "wsbo/hyperspace.hpp"

namespace wsbo {

/// Every error of a record is zero, so the error-weighted coordinate mean
/// does not exist.
struct UndefinedCcovError : Error {
    using Error::Error;
};

/// The observed coordinate is constant across the grid, so observed min-max
/// normalization divides by zero.
struct DegenerateDimensionError : Error {
    using Error::Error;
};

/// A dataset's contents: fixed-dimension instance vectors with integer
/// labels. num_classes is fixed at construction (max label + 1) and scales
/// the label channel fed to the feature extractor.
struct InstanceSet {
    Eigen::MatrixXd data;  // count x dim, one instance per row
    std::vector<int> labels;
    int num_classes = 1;

    static InstanceSet make(Eigen::MatrixXd data, std::vector<int> labels) {
        if (data.rows() == 0) throw DataError("instance set must be non-empty");
        if (static_cast<std::size_t>(data.rows()) != labels.size()) {
            throw DataError("labels count does not match instance count");
        }
        int max_label = 0;
        for (int l : labels) {
            if (l < 0) throw DataError("labels must be non-negative");
            max_label = std::max(max_label, l);
        }
        InstanceSet s;
        s.data = std::move(data);
        s.labels = std::move(labels);
        s.num_classes = max_label + 1;
        return s;
    }

    std::size_t count() const { return static_cast<std::size_t>(data.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(data.cols()); }
};

/// One historical dataset: its per-grid-point validation errors plus the
/// instances used for embedding it.
struct DatasetRecord {
    std::string id;
    std::vector<double> errors;  // length equals grid size, each in [0,1]
    InstanceSet instances;
    double fraction = 1.0;  // subsample fraction tag
    std::string parent;     // parent-dataset tag
};

/// The fixed set of hyperparameter vectors at which every record's errors
/// were measured.
struct EvaluationGrid {
    std::vector<HyperparameterVector> points;
    HyperparameterSpace space;

    void check() const {
        if (points.empty()) throw DataError("evaluation grid must hold at least one point");
        for (const auto& p : points) {
            if (!space.validate(p)) throw DataError("grid point fails space validation");
        }
        for (std::size_t i = 0; i < points.size(); ++i) {
            for (std::size_t j = 0; j < i; ++j) {
                if (points[i] == points[j]) throw DataError("duplicate grid points");
            }
        }
    }

    std::size_t size() const { return points.size(); }
};

/// K dataset records sharing one evaluation grid. Immutable after build/load;
/// a single shared grid is enforced structurally (records carry only error
/// vectors, the grid lives here once).
class HistoryStore {
public:
    HistoryStore() = default;

    HistoryStore(EvaluationGrid grid, std::vector<DatasetRecord> records)
        : grid_(std::move(grid)), records_(std::move(records)) {
        grid_.check();
        if (records_.empty()) throw DataError("store must hold at least one record");
        for (std::size_t i = 0; i < records_.size(); ++i) {
            const auto& r = records_[i];
            if (r.errors.size() != grid_.size()) {
                throw DataError("record '" + r.id + "': errors length " + std::to_string(r.errors.size()) +
                                " does not match grid size " + std::to_string(grid_.size()));
            }
            for (double e : r.errors) {
                if (!(e >= 0.0 && e <= 1.0)) {
                    throw DataError("record '" + r.id + "': errors must lie in [0,1]");
                }
            }
            if (r.instances.count() == 0) throw DataError("record '" + r.id + "': empty instances");
            for (std::size_t j = 0; j < i; ++j) {
                if (records_[j].id == r.id) throw DataError("duplicate record id '" + r.id + "'");
            }
        }
    }

    const EvaluationGrid& grid() const { return grid_; }
    const std::vector<DatasetRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }

    std::size_t index_of(const std::string& id) const {
        for (std::size_t i = 0; i < records_.size(); ++i) {
            if (records_[i].id == id) return i;
        }
        throw LookupError("unknown record id '" + id + "'");
    }
    const DatasetRecord& record(const std::string& id) const { return records_[index_of(id)]; }

    const std::optional<std::vector<Eigen::VectorXd>>& metafeatures() const { return metafeatures_; }

    void set_metafeatures(std::vector<Eigen::VectorXd> mf) {
        if (mf.size() != records_.size()) {
            throw DataError("metafeature count does not match record count");
        }
        metafeatures_ = std::move(mf);
    }

private:
    EvaluationGrid grid_;
    std::vector<DatasetRecord> records_;
    std::optional<std::vector<Eigen::VectorXd>> metafeatures_;
};

/// L1 distance between two records' error vectors over the shared grid.
inline double target_distance(const HistoryStore& store, const std::string& i, const std::string& j) {
    const auto& a = store.record(i).errors;
    const auto& b = store.record(j).errors;
    double sum = 0.0;
    for (std::size_t s = 0; s < a.size(); ++s) sum += std::abs(a[s] - b[s]);
    return sum;
}

/// Error-weighted mean of observed-normalized coordinates for one dimension:
/// coordinates are min-max normalized over the grid points actually observed
/// (not over the space bounds).
inline double ccov(const DatasetRecord& record, const EvaluationGrid& grid, std::size_t dim) {
    if (dim >= grid.space.size()) throw DomainError("ccov: dimension index out of range");
    if (record.errors.size() != grid.size()) throw DataError("ccov: record does not match the grid");

    double err_sum = 0.0;
    for (double e : record.errors) err_sum += e;
    if (err_sum <= 0.0) throw UndefinedCcovError("ccov: all errors are zero for record '" + record.id + "'");

    double lo = grid.points[0][dim], hi = grid.points[0][dim];
    for (const auto& p : grid.points) {
        lo = std::min(lo, p[dim]);
        hi = std::max(hi, p[dim]);
    }
    if (!(hi > lo)) {
        throw DegenerateDimensionError("ccov: coordinate " + std::to_string(dim) +
                                       " is constant over the grid");
    }
    double acc = 0.0;
    for (std::size_t s = 0; s < grid.size(); ++s) {
        const double normalized = (grid.points[s][dim] - lo) / (hi - lo);
        acc += normalized * record.errors[s];
    }
    return acc / err_sum;
}

/// Componentwise ccov - 0.5; positive entries say the error mass sits at the
/// large end of the observed range.
inline std::vector<double> subtracted_ccov(const DatasetRecord& record, const EvaluationGrid& grid) {
    std::vector<double> out(grid.space.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ccov(record, grid, i) - 0.5;
    return out;
}

/// Grid point with the minimal error for a record; ties break toward the
/// lowest grid index.
inline const HyperparameterVector& best_on_grid(const HistoryStore& store, const std::string& id) {
    const auto& errors = store.record(id).errors;
    std::size_t best = 0;
    for (std::size_t s = 1; s < errors.size(); ++s) {
        if (errors[s] < errors[best]) best = s;
    }
    return store.grid().points[best];
}

// --- store file format ----------------------------------------------------
//
// JSON document:
//   {"space": {...}, "grid": [[...]], "records": [{"id", "fraction",
//    "parent"?, "errors": [...], "instances": {"dim", "labels",
//    "data" | "file"}}]}
//
// Inline instances carry "data" as an array of rows. External instances
// carry "file": a path (relative to the store file) of 32-bit little-endian
// floats, row-major, preceded by a (count, dim) header of two uint32.

namespace detail {

inline void write_instances_binary(const std::filesystem::path& path, const Eigen::MatrixXd& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    const std::uint32_t count = static_cast<std::uint32_t>(data.rows());
    const std::uint32_t dim = static_cast<std::uint32_t>(data.cols());
    out.write(reinterpret_cast<const char*>(&count), 4);
    out.write(reinterpret_cast<const char*>(&dim), 4);
    for (std::uint32_t i = 0; i < count; ++i) {
        for (std::uint32_t j = 0; j < dim; ++j) {
            const float v = static_cast<float>(data(i, j));
            out.write(reinterpret_cast<const char*>(&v), 4);
        }
    }
    if (!out) throw DataError("short write to '" + path.string() + "'");
}

inline Eigen::MatrixXd read_instances_binary(const std::filesystem::path& path, std::size_t expect_dim) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("instances file '" + path.string() + "' cannot be opened");
    std::uint32_t count = 0, dim = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    in.read(reinterpret_cast<char*>(&dim), 4);
    if (!in) throw ParseError("instances file '" + path.string() + "': truncated header");
    if (dim != expect_dim) {
        throw ParseError("instances file '" + path.string() + "': header dim " + std::to_string(dim) +
                         " disagrees with declared dim " + std::to_string(expect_dim));
    }
    Eigen::MatrixXd data(count, dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        for (std::uint32_t j = 0; j < dim; ++j) {
            float v = 0.0f;
            in.read(reinterpret_cast<char*>(&v), 4);
            data(i, j) = static_cast<double>(v);
        }
    }
    if (!in) throw ParseError("instances file '" + path.string() + "': truncated payload");
    return data;
}

}  // namespace detail

inline nlohmann::ordered_json store_to_json(const HistoryStore& store) {
    nlohmann::ordered_json j;
    j["space"] = store.grid().space.to_json();
    j["grid"] = store.grid().points;
    j["records"] = nlohmann::ordered_json::array();
    for (const auto& r : store.records()) {
        nlohmann::ordered_json jr;
        jr["id"] = r.id;
        jr["fraction"] = r.fraction;
        if (!r.parent.empty()) jr["parent"] = r.parent;
        jr["errors"] = r.errors;
        nlohmann::ordered_json ji;
        ji["dim"] = r.instances.dim();
        ji["labels"] = r.instances.labels;
        std::vector<std::vector<double>> rows(r.instances.count(), std::vector<double>(r.instances.dim()));
        for (std::size_t a = 0; a < r.instances.count(); ++a) {
            for (std::size_t b = 0; b < r.instances.dim(); ++b) {
                rows[a][b] = r.instances.data(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            }
        }
        ji["data"] = rows;
        jr["instances"] = std::move(ji);
        j["records"].push_back(std::move(jr));
    }
    return j;
}

/// Writes the store as one JSON document. With external_instances, each
/// record's instance block goes to "<file>.<record-id>.bin" next to the
/// store and the JSON references it (values pass through float32).
inline void save_store(const HistoryStore& store, const std::filesystem::path& path,
                       bool external_instances = false) {
    nlohmann::ordered_json j = store_to_json(store);
    if (external_instances) {
        for (std::size_t i = 0; i < store.records().size(); ++i) {
            const auto& r = store.records()[i];
            const std::string bin_name = path.filename().string() + "." + r.id + ".bin";
            detail::write_instances_binary(path.parent_path() / bin_name, r.instances.data);
            auto& ji = j["records"][i]["instances"];
            ji.erase("data");
            ji["file"] = bin_name;
        }
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << "\n";
    if (!out) throw DataError("short write to '" + path.string() + "'");
}

inline HistoryStore load_store(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("store file '" + path.string() + "' cannot be opened");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("store file '" + path.string() + "': " + e.what());
    }

    try {
        EvaluationGrid grid;
        grid.space = HyperparameterSpace::from_json(j.at("space"));
        grid.points = j.at("grid").get<std::vector<HyperparameterVector>>();

        std::vector<DatasetRecord> records;
        for (const auto& jr : j.at("records")) {
            DatasetRecord r;
            r.id = jr.at("id").get<std::string>();
            if (!jr.contains("instances")) {
                throw ParseError("record '" + r.id + "': missing instances block");
            }
            r.fraction = jr.value("fraction", 1.0);
            r.parent = jr.value("parent", std::string{});
            r.errors = jr.at("errors").get<std::vector<double>>();
            if (r.errors.size() != grid.points.size()) {
                throw ParseError("record '" + r.id + "': errors length " + std::to_string(r.errors.size()) +
                                 " does not match grid size " + std::to_string(grid.points.size()));
            }
            const auto& ji = jr.at("instances");
            const auto dim = ji.at("dim").get<std::size_t>();
            auto labels = ji.at("labels").get<std::vector<int>>();
            Eigen::MatrixXd data;
            if (ji.contains("data")) {
                const auto rows = ji.at("data").get<std::vector<std::vector<double>>>();
                data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
                for (std::size_t a = 0; a < rows.size(); ++a) {
                    if (rows[a].size() != dim) {
                        throw ParseError("record '" + r.id + "': instance row " + std::to_string(a) +
                                         " has dim " + std::to_string(rows[a].size()));
                    }
                    for (std::size_t b = 0; b < dim; ++b) {
                        data(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = rows[a][b];
                    }
                }
            } else if (ji.contains("file")) {
                data = detail::read_instances_binary(path.parent_path() / ji.at("file").get<std::string>(), dim);
            } else {
                throw ParseError("record '" + r.id + "': instances block has neither 'data' nor 'file'");
            }
            r.instances = InstanceSet::make(std::move(data), std::move(labels));
            records.push_back(std::move(r));
        }
        return HistoryStore(std::move(grid), std::move(records));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("store file '" + path.string() + "': " + e.what());
    } catch (const DataError& e) {
        throw ParseError("store file '" + path.string() + "': " + e.what());
    }
}

// --- metafeature sidecar ----------------------------------------------------

/// Sidecar document holding the K meta-feature vectors computed for a store,
/// plus the embedding convention (tau, seed) they were computed with.
inline void save_metafeatures(const HistoryStore& store, const std::filesystem::path& path,
                              std::size_t tau, std::uint64_t seed) {
    if (!store.metafeatures()) throw DataError("store has no metafeatures to save");
    nlohmann::ordered_json j;
    j["tau"] = tau;
    j["seed"] = seed;
    j["ids"] = nlohmann::ordered_json::array();
    j["values"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < store.size(); ++i) {
        j["ids"].push_back(store.records()[i].id);
        const auto& v = (*store.metafeatures())[i];
        j["values"].push_back(std::vector<double>(v.data(), v.data() + v.size()));
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << "\n";
}

/// Loads a sidecar produced by save_metafeatures into the store; returns the
/// (tau, seed) convention recorded there.
inline std::pair<std::size_t, std::uint64_t> load_metafeatures(HistoryStore& store,
                                                               const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("metafeature file '" + path.string() + "' cannot be opened");
    nlohmann::json j;
    try {
        in >> j;
        const auto ids = j.at("ids").get<std::vector<std::string>>();
        const auto values = j.at("values").get<std::vector<std::vector<double>>>();
        if (ids.size() != store.size() || values.size() != store.size()) {
            throw ParseError("metafeature file '" + path.string() + "': record count mismatch");
        }
        std::vector<Eigen::VectorXd> mf(store.size());
        for (std::size_t i = 0; i < store.size(); ++i) {
            if (ids[i] != store.records()[i].id) {
                throw ParseError("metafeature file '" + path.string() + "': id order mismatch at index " +
                                 std::to_string(i));
            }
            mf[i] = Eigen::Map<const Eigen::VectorXd>(values[i].data(),
                                                      static_cast<Eigen::Index>(values[i].size()));
        }
        store.set_metafeatures(std::move(mf));
        return {j.at("tau").get<std::size_t>(), j.at("seed").get<std::uint64_t>()};
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("metafeature file '" + path.string() + "': " + e.what());
    }
}

}  // namespace wsbo
