#pragma once

// Network training on a dataset, model directories, and reconstruction.
//
// Model directory:
//   manifest.json     config, variant, normalisation, split, best epoch, metrics
//   checkpoint.mrfp   best-validation parameters (float32 table)
//   log.csv           one row per epoch

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "mrf/model/trainer.hpp"
#include "mrf/pipeline/dataset.hpp"

namespace mrf::pipeline {

using Scalar = float;
using Net = model::Network<Scalar>;

struct TrainOutcome {
    Net net;                              // holds the best-validation parameters
    model::Normalization norm;
    model::Split split;
    model::EpochLog initial;              // untrained, at epoch-1 loss weight
    std::vector<model::EpochLog> log;
    std::size_t best_epoch = 0;
};

inline void check_compatible(const Dataset& d, const RunConfig& c) {
    const auto& in = d.data.inputs.front();
    if (in.rank() != 3 || in.dim(0) != c.input_channels()) {
        throw DataError("dataset inputs " + shape_str(in.shape()) + " incompatible with network input width " +
                        std::to_string(c.input_channels()) + " (2 x compress.rank)");
    }
}

/// Trains `c.network.variant` on `d` with seed `c.seed`; `progress` sees each
/// epoch row. The returned network holds the lowest-validation-loss epoch.
inline TrainOutcome train_network(const Dataset& d, const RunConfig& c,
                                  const std::function<void(const model::EpochLog&)>& progress = {}) {
    c.validate();
    check_compatible(d, c);
    TrainOutcome out{Net::build(c.network.variant, c.network_config(), c.seed), {}, {}, {}, {}, 0};
    const auto cfg = c.train_config();
    model::Trainer<Scalar> trainer(out.net, d.data, cfg);
    out.norm = trainer.normalization();
    out.split = trainer.split();
    out.initial = trainer.validate(1);
    std::vector<std::vector<Scalar>> best;
    double best_loss = 0.0;
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        const auto row = trainer.run_epoch();
        out.log.push_back(row);
        if (progress) progress(row);
        if (best.empty() || row.val_loss < best_loss) {
            best_loss = row.val_loss;
            best = model::snapshot(out.net.parameters());
            out.best_epoch = e;
        }
    }
    auto ps = out.net.parameters();
    model::restore(ps, best);
    return out;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline json epoch_json(const model::EpochLog& r) {
    return {{"epoch", r.epoch},           {"lr", r.lr},
            {"w_e", r.w_e},               {"train_loss", r.train_loss},
            {"val_loss", r.val_loss},     {"val_psnr_t1", r.val_psnr_t1},
            {"val_psnr_t2", r.val_psnr_t2}, {"val_ssim_t1", r.val_ssim_t1},
            {"val_ssim_t2", r.val_ssim_t2}};
}

inline void write_log_csv(const fs::path& path, const std::vector<model::EpochLog>& log) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os << "epoch,lr,w_e,train_loss,val_loss,val_psnr_t1,val_psnr_t2,val_ssim_t1,val_ssim_t2\n";
    for (const auto& r : log) {
        os << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.w_e) << ',' << format_double(r.train_loss)
           << ',' << format_double(r.val_loss) << ',' << format_double(r.val_psnr_t1) << ','
           << format_double(r.val_psnr_t2) << ',' << format_double(r.val_ssim_t1) << ',' << format_double(r.val_ssim_t2)
           << '\n';
    }
}

inline json normalization_json(const model::Normalization& n) {
    return {{"input_scale", n.input_scale},
            {"mean_t1", n.targets.mean_t1},
            {"std_t1", n.targets.std_t1},
            {"mean_t2", n.targets.mean_t2},
            {"std_t2", n.targets.std_t2}};
}

inline model::Normalization normalization_from(const json& j) {
    model::Normalization n;
    n.input_scale = j.at("input_scale").get<double>();
    n.targets.mean_t1 = j.at("mean_t1").get<double>();
    n.targets.std_t1 = j.at("std_t1").get<double>();
    n.targets.mean_t2 = j.at("mean_t2").get<double>();
    n.targets.std_t2 = j.at("std_t2").get<double>();
    return n;
}

inline void write_model(const fs::path& dir, const TrainOutcome& o, const RunConfig& c, const Dataset& d) {
    fs::create_directories(dir);
    const auto ps = o.net.parameters();
    model::save_parameters((dir / "checkpoint.mrfp").string(), ps);
    write_log_csv(dir / "log.csv", o.log);
    json params = json::array();
    for (const auto& p : ps) params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
    json log = json::array();
    for (const auto& r : o.log) log.push_back(epoch_json(r));
    write_json(dir / kManifest, {{"kind", "model"},
                                 {"config", to_json(c)},
                                 {"config_hash", config_hash(c)},
                                 {"dataset_hash", config_hash(d.config)},
                                 {"t_trunc", d.t_trunc},
                                 {"variant", model::variant_name(c.network.variant)},
                                 {"in_channels", c.input_channels()},
                                 {"precision", "float32"},
                                 {"epochs_run", o.log.size()},
                                 {"best_epoch", o.best_epoch},
                                 {"initial", epoch_json(o.initial)},
                                 {"final", o.log.empty() ? json(nullptr) : epoch_json(o.log.back())},
                                 {"normalization", normalization_json(o.norm)},
                                 {"split", {{"train", o.split.train}, {"val", o.split.val}}},
                                 {"parameter_count", ps.scalar_count()},
                                 {"parameters", params},
                                 {"checkpoint", "checkpoint.mrfp"},
                                 {"log", "log.csv"}});
}

struct LoadedModel {
    RunConfig config;
    Net net;
    model::Normalization norm;
    std::vector<std::size_t> val;
    std::size_t t_trunc = 0;
};

inline LoadedModel read_model(const fs::path& dir) {
    const auto m = read_manifest(dir, "model");
    try {
        LoadedModel lm{from_json(m.at("config")), {}, normalization_from(m.at("normalization")),
                       m.at("split").at("val").get<std::vector<std::size_t>>(), m.at("t_trunc").get<std::size_t>()};
        lm.net = Net::build(lm.config.network.variant, lm.config.network_config(), lm.config.seed);
        auto ps = lm.net.parameters();
        model::load_parameters((dir / m.at("checkpoint").get<std::string>()).string(), ps);
        return lm;
    } catch (const json::exception& e) {
        throw DataError(dir.string() + ": malformed model manifest: " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(dir.string() + ": model manifest config invalid: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Parameter maps

struct MapSet {
    std::vector<std::size_t> samples;
    std::vector<model::PredictedMaps> maps;
};

inline Tensor<double> maps_tensor(const model::PredictedMaps& p) {
    const std::size_t hw = p.t1.size();
    std::vector<double> v(2 * hw);
    std::copy(p.t1.values.begin(), p.t1.values.end(), v.begin());
    std::copy(p.t2.values.begin(), p.t2.values.end(), v.begin() + static_cast<std::ptrdiff_t>(hw));
    return Tensor<double>({2, p.t1.rows, p.t1.cols}, std::move(v));
}

inline model::PredictedMaps tensor_maps(const io::RawTensor<double>& t) {
    if (t.shape.size() != 3 || t.shape[0] != 2) throw DataError("map tensor must be [2,H,W]");
    const std::size_t h = t.shape[1], w = t.shape[2], hw = h * w;
    model::PredictedMaps p{Grid<double>(h, w), Grid<double>(h, w)};
    std::copy(t.values.begin(), t.values.begin() + static_cast<std::ptrdiff_t>(hw), p.t1.values.begin());
    std::copy(t.values.begin() + static_cast<std::ptrdiff_t>(hw), t.values.end(), p.t2.values.begin());
    return p;
}

/// Writes maps_NNN.mrft per sample plus a manifest carrying `meta`.
inline void write_maps(const fs::path& dir, const MapSet& s, json meta) {
    fs::create_directories(dir);
    json samples = json::array();
    for (std::size_t k = 0; k < s.samples.size(); ++k) {
        const auto name = indexed("maps", s.samples[k], ".mrft");
        io::save_tensor((dir / name).string(), maps_tensor(s.maps[k]));
        samples.push_back({{"index", s.samples[k]}, {"maps", name}});
    }
    meta["kind"] = "maps";
    meta["samples"] = samples;
    write_json(dir / kManifest, meta);
}

inline MapSet read_maps(const fs::path& dir) {
    const auto m = read_json(dir / kManifest);
    MapSet s;
    try {
        const auto kind = m.at("kind").get<std::string>();
        if (kind == "dataset") {
            // Ground truth used as a prediction.
            const auto d = read_dataset(dir);
            for (std::size_t i = 0; i < d.data.maps.size(); ++i) {
                s.samples.push_back(i);
                s.maps.push_back({d.data.maps[i].t1, d.data.maps[i].t2});
            }
            return s;
        }
        if (kind != "maps") throw DataError(dir.string() + ": expected a 'maps' or 'dataset' manifest, found '" + kind + "'");
        for (const auto& e : m.at("samples")) {
            s.samples.push_back(e.at("index").get<std::size_t>());
            s.maps.push_back(tensor_maps(io::load_raw<double>((dir / e.at("maps").get<std::string>()).string())));
        }
    } catch (const json::exception& e) {
        throw DataError(dir.string() + ": malformed maps manifest: " + e.what());
    }
    return s;
}

/// Network maps for the given samples (all when `samples` is empty).
inline MapSet reconstruct(const LoadedModel& m, const Dataset& d, std::vector<std::size_t> samples = {}) {
    check_compatible(d, m.config);
    if (d.t_trunc != m.t_trunc) {
        throw DataError("model trained at t_trunc " + std::to_string(m.t_trunc) + ", dataset has " + std::to_string(d.t_trunc));
    }
    if (samples.empty()) {
        samples.resize(d.data.inputs.size());
        std::iota(samples.begin(), samples.end(), std::size_t{0});
    }
    MapSet s;
    for (auto i : samples) {
        if (i >= d.data.inputs.size()) throw DataError("sample index " + std::to_string(i) + " out of range");
        s.samples.push_back(i);
        s.maps.push_back(model::predict(m.net, d.data.inputs[i], d.data.maps[i].mask, m.norm));
    }
    return s;
}

struct MatchSummary {
    std::size_t sample = 0;
    std::size_t voxels = 0;
    double mean_correlation = 0.0;
};

/// Dictionary-matched maps from the stored projections; `summary`, when
/// given, receives one row per sample.
inline MapSet match_dataset(const Dataset& d, const Dictionary& dict, std::vector<std::size_t> samples = {},
                            std::vector<MatchSummary>* summary = nullptr) {
    if (dict.frames() != d.t_trunc) {
        throw DataError("dictionary has " + std::to_string(dict.frames()) + " frames, dataset t_trunc " + std::to_string(d.t_trunc));
    }
    const auto sub = compress_dictionary(dict, d.basis);
    if (samples.empty()) {
        samples.resize(d.data.inputs.size());
        std::iota(samples.begin(), samples.end(), std::size_t{0});
    }
    MapSet s;
    for (auto i : samples) {
        if (i >= d.data.inputs.size()) throw DataError("sample index " + std::to_string(i) + " out of range");
        const auto& mask = d.data.maps[i].mask;
        const auto r = match_projected(d.data.inputs[i], sub, mask);
        if (summary) {
            MatchSummary row{i, 0, 0.0};
            for (std::size_t v = 0; v < mask.size(); ++v) {
                if (!mask.values[v]) continue;
                ++row.voxels;
                row.mean_correlation += r.correlation.values[v];
            }
            if (row.voxels) row.mean_correlation /= static_cast<double>(row.voxels);
            summary->push_back(row);
        }
        s.samples.push_back(i);
        s.maps.push_back({r.t1, r.t2});
    }
    return s;
}

}  // namespace mrf::pipeline
