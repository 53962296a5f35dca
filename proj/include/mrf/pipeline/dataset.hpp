#pragma once

// Synthetic dataset: phantoms → Bloch fingerprints → truncation → radial
// undersampling → optional noise → projection onto the rank-r basis.
//
// On disk (one directory):
//   manifest.json            config, hash, shapes, per-sample files
//   basis.mrfp               vectors [T, r], singular_values [k]
//   input_NNN.mrft           [2r, H, W] float64
//   target_NNN.mrft          [4, H, W] float64: T1, T2, B0, mask

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "mrf/compress/svd_basis.hpp"
#include "mrf/kspace/alias.hpp"
#include "mrf/match/dictionary.hpp"
#include "mrf/model/trainer.hpp"
#include "mrf/pipeline/run_config.hpp"
#include "mrf/tensor/serialize.hpp"

namespace mrf::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kManifest = "manifest.json";

/// Independent stream per (seed, sample, purpose).
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t sample, std::uint32_t purpose) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(sample), purpose};
    return std::mt19937_64(seq);
}

enum : std::uint32_t { kPurposePhantom = 1, kPurposeNoise = 2 };

inline std::uint64_t phantom_seed(std::uint64_t seed, std::size_t sample) { return sample_rng(seed, sample, kPurposePhantom)(); }

/// Adds complex Gaussian noise with per-voxel σ = mean_t |s_v(t)| · 10^(−snr/20);
/// real and imaginary parts each carry σ/√2.
inline void add_noise(FingerprintSeries& s, double snr_db, std::mt19937_64& rng) {
    const double factor = std::pow(10.0, -snr_db / 20.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t v = 0; v < s.voxels(); ++v) {
        double mean = 0.0;
        for (std::size_t t = 0; t < s.t_frames; ++t) mean += std::abs(s.at(t, v));
        mean /= static_cast<double>(s.t_frames);
        const double sigma = mean * factor / std::sqrt(2.0);
        for (std::size_t t = 0; t < s.t_frames; ++t) {
            const double re = n01(rng), im = n01(rng);
            if (sigma > 0.0) s.at(t, v) += cdouble(sigma * re, sigma * im);
        }
    }
}

inline Dictionary make_dictionary(const RunConfig& c, std::size_t t_trunc) {
    return build_dictionary(dictionary_grid(c), make_schedule(c), t_trunc);
}

inline TemporalBasis make_basis(const RunConfig& c, const Dictionary& dict) { return build_basis(dict.atoms, c.compress.rank); }

inline RadialTrajectory make_trajectory(const RunConfig& c, std::size_t t_trunc) {
    return golden_angle_trajectory(t_trunc, c.kspace.samples_per_spoke, c.kspace.spokes_per_frame, c.kspace.golden_angle_deg);
}

/// Aliased (and optionally noisy) series of one phantom.
inline FingerprintSeries acquire(const RunConfig& c, const TissueMap& map, const SequenceSchedule& schedule,
                                 const RadialTrajectory& traj, std::size_t sample) {
    auto aliased = alias_series(simulate_image_series(map, schedule, traj.frames), traj, c.kspace.path);
    if (c.kspace.snr_db) {
        auto rng = sample_rng(c.seed, sample, kPurposeNoise);
        add_noise(aliased, *c.kspace.snr_db, rng);
    }
    return aliased;
}

struct Dataset {
    RunConfig config;
    std::size_t t_trunc = 0;
    TemporalBasis basis;
    model::TrainData data;  // inputs [2r,H,W] and maps
};

/// Runs the whole acquisition chain for every sample. `on_series` (if set)
/// sees each aliased series before projection.
template <class OnSeries = std::nullptr_t>
Dataset simulate_dataset(const RunConfig& c, OnSeries on_series = nullptr) {
    c.validate();
    Dataset d;
    d.config = c;
    d.t_trunc = c.sequence.t_trunc;
    const auto schedule = make_schedule(c);
    d.basis = make_basis(c, make_dictionary(c, d.t_trunc));
    const auto traj = make_trajectory(c, d.t_trunc);
    for (std::size_t i = 0; i < c.phantom.count; ++i) {
        auto map = make_phantom(c.phantom.size, c.phantom.shapes, phantom_seed(c.seed, i), c.phantom.tissue);
        const auto aliased = acquire(c, map, schedule, traj, i);
        if constexpr (!std::is_same_v<OnSeries, std::nullptr_t>) on_series(i, aliased);
        d.data.inputs.push_back(project_series(aliased, d.basis));
        d.data.maps.push_back(std::move(map));
    }
    return d;
}

// ---------------------------------------------------------------------------
// Files

inline std::string indexed(const char* stem, std::size_t i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03zu%s", stem, i, ext);
    return buf;
}

inline void write_json(const fs::path& path, const json& j) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os << j.dump(2) << '\n';
    if (!os) throw DataError("write failed: " + path.string());
}

inline json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open: " + path.string());
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

/// Manifest of `dir`, which must be of the given kind.
inline json read_manifest(const fs::path& dir, const std::string& kind) {
    const auto j = read_json(dir / kManifest);
    if (!j.contains("kind") || j.at("kind") != kind) {
        throw DataError(dir.string() + ": expected a '" + kind + "' manifest, found '" + j.value("kind", std::string("?")) + "'");
    }
    return j;
}

inline Tensor<double> map_tensor(const TissueMap& m) {
    const std::size_t hw = m.rows() * m.cols();
    std::vector<double> v(4 * hw);
    for (std::size_t i = 0; i < hw; ++i) {
        v[i] = m.t1.values[i];
        v[hw + i] = m.t2.values[i];
        v[2 * hw + i] = m.b0.values[i];
        v[3 * hw + i] = m.mask.values[i];
    }
    return Tensor<double>({4, m.rows(), m.cols()}, std::move(v));
}

inline TissueMap tensor_map(const io::RawTensor<double>& t) {
    if (t.shape.size() != 3 || t.shape[0] != 4) throw DataError("target tensor must be [4,H,W]");
    const std::size_t h = t.shape[1], w = t.shape[2], hw = h * w;
    TissueMap m{Grid<double>(h, w), Grid<double>(h, w), Grid<double>(h, w), Grid<std::uint8_t>(h, w)};
    for (std::size_t i = 0; i < hw; ++i) {
        m.t1.values[i] = t.values[i];
        m.t2.values[i] = t.values[hw + i];
        m.b0.values[i] = t.values[2 * hw + i];
        m.mask.values[i] = t.values[3 * hw + i] != 0.0 ? 1 : 0;
    }
    return m;
}

inline void save_basis(const fs::path& path, const TemporalBasis& b) {
    const auto t = b.frames(), r = b.rank;
    std::vector<double> v(t * r);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < r; ++j) v[i * r + j] = b.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    io::save_table<double>(path.string(), {{"vectors", Tensor<double>({t, r}, std::move(v))},
                                           {"singular_values", Tensor<double>({b.singular_values.size()}, b.singular_values)}});
}

inline TemporalBasis load_basis(const fs::path& path) {
    const auto table = io::load_table<double>(path.string());
    if (table.size() != 2 || table[0].first != "vectors" || table[1].first != "singular_values") {
        throw DataError(path.string() + ": not a basis table");
    }
    const auto& v = table[0].second;
    if (v.shape.size() != 2) throw DataError(path.string() + ": basis vectors must be [T, r]");
    TemporalBasis b;
    b.rank = v.shape[1];
    b.vectors.resize(static_cast<Eigen::Index>(v.shape[0]), static_cast<Eigen::Index>(b.rank));
    for (std::size_t i = 0; i < v.shape[0]; ++i)
        for (std::size_t j = 0; j < b.rank; ++j) b.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v.values[i * b.rank + j];
    b.singular_values = table[1].second.values;
    return b;
}

inline json dataset_manifest(const Dataset& d) {
    json samples = json::array();
    for (std::size_t i = 0; i < d.data.inputs.size(); ++i) {
        samples.push_back({{"index", i},
                           {"phantom_seed", phantom_seed(d.config.seed, i)},
                           {"input", indexed("input", i, ".mrft")},
                           {"target", indexed("target", i, ".mrft")},
                           {"masked_voxels", d.data.maps[i].masked_count()}});
    }
    const auto& in = d.data.inputs.front();
    return {{"kind", "dataset"},
            {"config", to_json(d.config)},
            {"config_hash", config_hash(d.config)},
            {"grid_hash", grid_hash(d.config)},
            {"seed", d.config.seed},
            {"t_trunc", d.t_trunc},
            {"rank", d.basis.rank},
            {"captured_energy", d.basis.captured_energy()},
            {"input_shape", in.shape()},
            {"basis", "basis.mrfp"},
            {"schedule", "schedule.csv"},
            {"trajectory", "trajectory.csv"},
            {"samples", samples}};
}

inline void write_dataset(const fs::path& dir, const Dataset& d) {
    fs::create_directories(dir);
    save_basis(dir / "basis.mrfp", d.basis);
    save_schedule_csv((dir / "schedule.csv").string(), make_schedule(d.config));
    save_trajectory_csv((dir / "trajectory.csv").string(), make_trajectory(d.config, d.t_trunc));
    for (std::size_t i = 0; i < d.data.inputs.size(); ++i) {
        io::save_tensor(( dir / indexed("input", i, ".mrft")).string(), d.data.inputs[i]);
        io::save_tensor((dir / indexed("target", i, ".mrft")).string(), map_tensor(d.data.maps[i]));
    }
    write_json(dir / kManifest, dataset_manifest(d));
}

inline Dataset read_dataset(const fs::path& dir) {
    const auto m = read_manifest(dir, "dataset");
    Dataset d;
    try {
        d.config = from_json(m.at("config"));
        d.t_trunc = m.at("t_trunc").get<std::size_t>();
        d.basis = load_basis(dir / m.at("basis").get<std::string>());
        const auto shape = m.at("input_shape").get<Shape>();
        for (const auto& s : m.at("samples")) {
            auto raw = io::load_raw<double>((dir / s.at("input").get<std::string>()).string());
            if (raw.shape != shape) throw DataError("dataset input shape differs from manifest");
            d.data.inputs.emplace_back(std::move(raw.shape), std::move(raw.values));
            d.data.maps.push_back(tensor_map(io::load_raw<double>((dir / s.at("target").get<std::string>()).string())));
        }
    } catch (const json::exception& e) {
        throw DataError(dir.string() + ": malformed dataset manifest: " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(dir.string() + ": dataset manifest config invalid: " + e.what());
    }
    if (d.data.inputs.empty()) throw DataError(dir.string() + ": dataset has no samples");
    return d;
}

}  // namespace mrf::pipeline
