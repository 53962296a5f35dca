#pragma once

// Command implementations behind the CLI. Each command owns its output
// directory for its duration (lock file) and never writes elsewhere.

#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mrf/pipeline/evaluation.hpp"

namespace mrf::pipeline {

/// Exclusive `.lock` file in an output directory, removed on destruction.
class OutputLock {
public:
    explicit OutputLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        std::FILE* f = std::fopen(path_.string().c_str(), "wx");
        if (!f) throw DataError("output directory is in use or not writable (lock " + path_.string() + ")");
        std::fclose(f);
    }
    ~OutputLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    fs::path path_;
};

inline void save_dictionary(const fs::path& path, const Dictionary& d) {
    const auto n = d.size(), t = d.frames();
    std::vector<double> re(n * t), im(n * t), p(n * 3);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t k = 0; k < t; ++k) {
            const auto v = d.atoms(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(k));
            re[a * t + k] = v.real();
            im[a * t + k] = v.imag();
        }
        p[a * 3] = d.params[a].t1;
        p[a * 3 + 1] = d.params[a].t2;
        p[a * 3 + 2] = d.params[a].b0;
    }
    io::save_table<double>(path.string(), {{"atoms_re", Tensor<double>({n, t}, std::move(re))},
                                           {"atoms_im", Tensor<double>({n, t}, std::move(im))},
                                           {"params", Tensor<double>({n, 3}, std::move(p))}});
}

inline Dictionary load_dictionary(const fs::path& path) {
    const auto table = io::load_table<double>(path.string());
    if (table.size() != 3 || table[0].first != "atoms_re" || table[1].first != "atoms_im" || table[2].first != "params") {
        throw DataError(path.string() + ": not a dictionary table");
    }
    const auto& re = table[0].second;
    const auto& im = table[1].second;
    const auto& p = table[2].second;
    if (re.shape.size() != 2 || re.shape != im.shape || p.shape != Shape{re.shape[0], 3}) {
        throw DataError(path.string() + ": inconsistent dictionary shapes");
    }
    const std::size_t n = re.shape[0], t = re.shape[1];
    Dictionary d;
    d.atoms.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t));
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t k = 0; k < t; ++k) {
            d.atoms(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(k)) = {re.values[a * t + k], im.values[a * t + k]};
        }
        d.params.push_back({p.values[a * 3], p.values[a * 3 + 1], p.values[a * 3 + 2]});
    }
    return d;
}

using Log = std::function<void(const std::string&)>;

inline void cmd_simulate(const RunConfig& c, const fs::path& out, const Log& log) {
    OutputLock lock(out);
    const auto d = simulate_dataset(c);
    write_dataset(out, d);
    log("simulated " + std::to_string(d.data.inputs.size()) + " samples, t_trunc " + std::to_string(d.t_trunc) +
        ", rank " + std::to_string(d.basis.rank) + ", captured energy " + detail::fmt(d.basis.captured_energy(), 8));
}

inline void cmd_dict(const RunConfig& c, const fs::path& out, const Log& log) {
    OutputLock lock(out);
    const auto d = make_dictionary(c, c.sequence.t_trunc);
    save_dictionary(out / "dictionary.mrfp", d);
    write_json(out / kManifest, {{"kind", "dictionary"},
                                 {"config", to_json(c)},
                                 {"config_hash", config_hash(c)},
                                 {"grid_hash", grid_hash(c)},
                                 {"t_trunc", c.sequence.t_trunc},
                                 {"atoms", d.size()},
                                 {"dictionary", "dictionary.mrfp"}});
    log("dictionary: " + std::to_string(d.size()) + " atoms x " + std::to_string(d.frames()) + " frames");
}

inline Dictionary dictionary_from(const fs::path& dir, std::string* hash = nullptr) {
    const auto m = read_manifest(dir, "dictionary");
    if (hash) *hash = m.at("grid_hash").get<std::string>();
    return load_dictionary(dir / m.at("dictionary").get<std::string>());
}

inline void cmd_basis(const RunConfig& c, const std::optional<fs::path>& dict_dir, const fs::path& out, const Log& log) {
    OutputLock lock(out);
    std::string grid = grid_hash(c);
    const auto dict = dict_dir ? dictionary_from(*dict_dir, &grid) : make_dictionary(c, c.sequence.t_trunc);
    const auto b = make_basis(c, dict);
    save_basis(out / "basis.mrfp", b);
    write_json(out / kManifest, {{"kind", "basis"},
                                 {"config", to_json(c)},
                                 {"config_hash", config_hash(c)},
                                 {"grid_hash", grid},
                                 {"t_trunc", dict.frames()},
                                 {"rank", b.rank},
                                 {"captured_energy", b.captured_energy()},
                                 {"basis", "basis.mrfp"}});
    log("basis: rank " + std::to_string(b.rank) + ", captured energy " + detail::fmt(b.captured_energy(), 8));
}

/// The dataset's config supplies the acquisition; `c` supplies network,
/// training and seed.
inline void cmd_train(const RunConfig& c, const fs::path& data, const fs::path& out, const Log& log) {
    const auto d = read_dataset(data);
    check_compatible(d, c);
    OutputLock lock(out);
    const auto o = train_network(d, c, [&](const model::EpochLog& r) {
        log("epoch " + std::to_string(r.epoch) + " lr " + detail::fmt(r.lr) + " train " + detail::fmt(r.train_loss, 6) +
            " val " + detail::fmt(r.val_loss, 6) + " psnr T1 " + detail::fmt(r.val_psnr_t1) + " T2 " +
            detail::fmt(r.val_psnr_t2));
    });
    write_model(out, o, c, d);
    log("best epoch " + std::to_string(o.best_epoch) + " of " + std::to_string(o.log.size()));
}

inline std::vector<std::size_t> subset(const std::string& which, const LoadedModel& m) {
    if (which == "all") return {};
    if (which == "val") return m.val;
    throw ConfigError("--subset must be 'all' or 'val', got '" + which + "'");
}

inline void cmd_reconstruct(const fs::path& model_dir, const fs::path& data, const std::string& which, const fs::path& out,
                            const Log& log) {
    const auto m = read_model(model_dir);
    const auto d = read_dataset(data);
    OutputLock lock(out);
    const auto s = reconstruct(m, d, subset(which, m));
    write_maps(out, s, {{"source", "network"},
                        {"variant", model::variant_name(m.config.network.variant)},
                        {"model_hash", config_hash(m.config)},
                        {"dataset_hash", config_hash(d.config)},
                        {"t_trunc", d.t_trunc}});
    log("reconstructed " + std::to_string(s.samples.size()) + " samples");
}

inline void cmd_match(const fs::path& data, const std::optional<fs::path>& dict_dir, const fs::path& out, const Log& log) {
    const auto d = read_dataset(data);
    const auto dict = dict_dir ? dictionary_from(*dict_dir) : make_dictionary(d.config, d.t_trunc);
    OutputLock lock(out);
    std::vector<MatchSummary> summary;
    const auto s = match_dataset(d, dict, {}, &summary);
    write_maps(out, s, {{"source", "dictionary"},
                        {"atoms", dict.size()},
                        {"dataset_hash", config_hash(d.config)},
                        {"t_trunc", d.t_trunc},
                        {"summary", "summary.csv"}});
    std::ofstream os(out / "summary.csv");
    if (!os) throw DataError("cannot open for writing: " + (out / "summary.csv").string());
    os << "sample,voxels,mean_correlation\n";
    for (const auto& r : summary) os << r.sample << ',' << r.voxels << ',' << format_double(r.mean_correlation) << '\n';
    log("matched " + std::to_string(s.samples.size()) + " samples against " + std::to_string(dict.size()) + " atoms");
}

/// Scores each (prediction, dataset) pair; pairs usually differ in t_trunc.
inline void cmd_eval(const std::vector<fs::path>& preds, const std::vector<fs::path>& datas, bool plot, const fs::path& out,
                     const Log& log) {
    if (preds.empty() || preds.size() != datas.size()) {
        throw ConfigError("eval: give one --data per --pred (got " + std::to_string(preds.size()) + " and " +
                          std::to_string(datas.size()) + ")");
    }
    std::vector<Dataset> ds;
    std::vector<MapSet> ps;
    for (std::size_t k = 0; k < preds.size(); ++k) {
        ds.push_back(read_dataset(datas[k]));
        ps.push_back(read_maps(preds[k]));
    }
    OutputLock lock(out);
    std::vector<SampleScore> scores;
    json pairs = json::array();
    for (std::size_t k = 0; k < preds.size(); ++k) {
        const auto s = score(ps[k], ds[k]);
        scores.insert(scores.end(), s.begin(), s.end());
        for (std::size_t j = 0; j < ps[k].samples.size(); ++j) {
            const auto i = ps[k].samples[j];
            char name[64];
            std::snprintf(name, sizeof name, "error_t%04zu_%03zu.mrft", ds[k].t_trunc, i);
            io::save_tensor((out / name).string(), error_tensor(ps[k].maps[j], ds[k].data.maps[i]));
        }
        pairs.push_back({{"pred", preds[k].string()}, {"data", datas[k].string()}, {"t_trunc", ds[k].t_trunc},
                         {"dataset_hash", config_hash(ds[k].config)}, {"samples", ps[k].samples}});
    }
    write_scores(out, scores);
    if (plot) write_plot(out / "metrics_vs_ttrunc.svg", aggregate_rows(scores));
    write_json(out / kManifest, {{"kind", "eval"}, {"pairs", pairs}, {"rows", scores.size()}, {"plot", plot}});
    for (const auto& r : aggregate_rows(scores)) {
        if (r.metric == "psnr" || r.metric == "ssim") {
            log("t_trunc " + std::to_string(r.t_trunc) + " " + r.param + " " + r.metric + " " + detail::fmt(r.a.mean, 6) +
                " +- " + detail::fmt(r.a.std, 4));
        }
    }
}

/// Re-renders the metric-vs-t_trunc plot from one or more eval directories.
inline void cmd_plot(const std::vector<fs::path>& evals, const fs::path& out, const Log& log) {
    if (evals.empty()) throw ConfigError("plot: give at least one --eval directory");
    std::vector<AggregateRow> rows;
    for (const auto& e : evals) {
        read_manifest(e, "eval");
        const auto r = read_aggregate_csv(e / "aggregate.csv");
        rows.insert(rows.end(), r.begin(), r.end());
    }
    OutputLock lock(out);
    write_plot(out / "metrics_vs_ttrunc.svg", rows);
    log("plot written with " + std::to_string(rows.size()) + " aggregate rows");
}

}  // namespace mrf::pipeline
