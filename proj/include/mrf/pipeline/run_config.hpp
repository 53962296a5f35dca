#pragma once

// Run configuration: one JSON document with sections phantom, sequence,
// kspace, compress, network, train, eval. Unknown keys are rejected; every
// default is written back out by to_json so manifests are self-contained.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrf/core/error.hpp"
#include "mrf/kspace/nufft.hpp"
#include "mrf/match/dictionary.hpp"
#include "mrf/model/config.hpp"
#include "mrf/model/network.hpp"
#include "mrf/phantom/phantom.hpp"
#include "mrf/sim/schedule.hpp"

namespace mrf::pipeline {

using json = nlohmann::json;

struct PhantomSection {
    std::size_t size = 32;
    std::size_t count = 16;
    std::size_t shapes = 3;
    PhantomConfig tissue{};
};

struct SequenceSection {
    std::size_t frames = 1000;
    std::size_t t_trunc = 200;
    std::uint64_t schedule_seed = 0;
    ScheduleConfig shape{};
    double inversion_efficiency = 1.0;
    double rf_phase_cycle_deg = 180.0;
    std::string schedule_file;  // fa_deg,tr_ms CSV; empty = generated schedule
};

struct KspaceSection {
    std::size_t samples_per_spoke = 65;
    std::size_t spokes_per_frame = 1;
    double golden_angle_deg = kGoldenAngleDeg;
    NufftPath path = NufftPath::kGridding;
    std::optional<double> snr_db;  // per-voxel mean fingerprint magnitude / noise σ, in dB
};

/// Log-spaced T1/T2 axes and a linear B0 axis; shared by the basis and the
/// matching dictionary.
struct CompressSection {
    std::size_t rank = 10;
    double t1_min_ms = 100.0, t1_max_ms = 5000.0;
    std::size_t t1_count = 40;
    double t2_min_ms = 10.0, t2_max_ms = 1000.0;
    std::size_t t2_count = 30;
    double b0_min_hz = 0.0, b0_max_hz = 0.0;
    std::size_t b0_count = 1;
};

struct NetworkSection {
    model::Variant variant = model::Variant::kFull;
    model::GastConfig model = model::GastConfig::desk(20);  // in_channels follows compress.rank
};

struct EvalSection {
    std::vector<std::size_t> t_truncs{200, 400, 600, 800, 1000};
};

struct RunConfig {
    std::uint64_t seed = 0;
    PhantomSection phantom{};
    SequenceSection sequence{};
    KspaceSection kspace{};
    CompressSection compress{};
    NetworkSection network{};
    model::TrainConfig train = desk_train();
    EvalSection eval{};

    static model::TrainConfig desk_train() {
        model::TrainConfig t;
        t.epochs = 50;
        t.lr = 2e-3;
        t.milestones = {12, 25, 37, 45};
        t.augment = true;
        return t;
    }

    std::size_t input_channels() const { return 2 * compress.rank; }

    /// Network configuration with the input width implied by the rank.
    model::GastConfig network_config() const {
        auto c = network.model;
        c.in_channels = input_channels();
        return c;
    }

    model::TrainConfig train_config() const {
        auto t = train;
        t.seed = seed;
        return t;
    }

    void validate() const {
        if (phantom.size < 8) throw ConfigError("phantom.size must be >= 8");
        if (phantom.count < 2) throw ConfigError("phantom.count must be >= 2");
        phantom.tissue.validate();
        if (sequence.frames < 1) throw ConfigError("sequence.frames must be >= 1");
        if (sequence.t_trunc < 1 || sequence.t_trunc > sequence.frames) {
            throw ConfigError("sequence.t_trunc must lie in [1, sequence.frames]");
        }
        if (kspace.samples_per_spoke < 3 || kspace.samples_per_spoke % 2 == 0) {
            throw ConfigError("kspace.samples_per_spoke must be odd and >= 3");
        }
        if (kspace.spokes_per_frame == 0) throw ConfigError("kspace.spokes_per_frame must be >= 1");
        if (kspace.snr_db && !std::isfinite(*kspace.snr_db)) throw ConfigError("kspace.snr_db must be finite");
        if (compress.rank < 1 || compress.rank > sequence.t_trunc) throw ConfigError("compress.rank must lie in [1, t_trunc]");
        if (compress.t1_count == 0 || compress.t2_count == 0 || compress.b0_count == 0) {
            throw ConfigError("compress: axis counts must be >= 1");
        }
        if (compress.b0_max_hz < compress.b0_min_hz) throw ConfigError("compress: b0_max_hz < b0_min_hz");
        network_config().validate();
        train.validate();
        for (auto t : eval.t_truncs) {
            if (t < 1 || t > sequence.frames) throw ConfigError("eval.t_truncs entries must lie in [1, sequence.frames]");
        }
    }
};

namespace detail {

/// Reads keys from one JSON object and rejects any it did not consume.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config: bad value for '" + name_ + "." + key + "': " + e.what());
        }
    }

    const json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string path(const char* key) const { return name_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError("config: unknown key '" + (name_.empty() ? k : name_ + "." + k) + "'");
        }
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

inline void read_encoder(const json& j, const std::string& name, model::EncoderConfig& e) {
    Section s(j, name);
    s.get("rssg_count", e.rssg_count);
    s.get("rssb_per_group", e.rssb_per_group);
    s.get("embed", e.embed);
    s.get("state", e.state);
    s.get("expand", e.expand);
    s.finish();
}

inline json encoder_json(const model::EncoderConfig& e) {
    return {{"rssg_count", e.rssg_count}, {"rssb_per_group", e.rssb_per_group}, {"embed", e.embed}, {"state", e.state},
            {"expand", e.expand}};
}

inline std::string path_name(NufftPath p) { return p == NufftPath::kDirect ? "direct" : "gridding"; }

inline NufftPath parse_path(const std::string& s) {
    if (s == "direct") return NufftPath::kDirect;
    if (s == "gridding") return NufftPath::kGridding;
    throw ConfigError("config: kspace.path must be 'direct' or 'gridding', got '" + s + "'");
}

}  // namespace detail

inline RunConfig from_json(const json& j) {
    RunConfig c;
    detail::Section root(j, "");
    root.get("seed", c.seed);
    if (const auto* p = root.sub("phantom")) {
        detail::Section s(*p, "phantom");
        s.get("size", c.phantom.size);
        s.get("count", c.phantom.count);
        s.get("shapes", c.phantom.shapes);
        s.get("variation", c.phantom.tissue.variation);
        s.get("b0_max_hz", c.phantom.tissue.b0_max_hz);
        s.get("background_class", c.phantom.tissue.background_class);
        if (const auto* cl = s.sub("classes")) {
            if (!cl->is_array()) throw ConfigError("config: phantom.classes must be an array");
            c.phantom.tissue.classes.clear();
            for (const auto& e : *cl) {
                detail::Section cs(e, "phantom.classes[]");
                TissueClass t{"", 0.0, 0.0};
                cs.get("name", t.name);
                cs.get("t1_ms", t.t1_ms);
                cs.get("t2_ms", t.t2_ms);
                cs.finish();
                c.phantom.tissue.classes.push_back(t);
            }
        }
        s.finish();
    }
    if (const auto* p = root.sub("sequence")) {
        detail::Section s(*p, "sequence");
        s.get("frames", c.sequence.frames);
        s.get("t_trunc", c.sequence.t_trunc);
        s.get("schedule_seed", c.sequence.schedule_seed);
        s.get("lobes", c.sequence.shape.lobes);
        s.get("fa_peak_min_deg", c.sequence.shape.fa_peak_min_deg);
        s.get("fa_peak_max_deg", c.sequence.shape.fa_peak_max_deg);
        s.get("tr_base_ms", c.sequence.shape.tr_base_ms);
        s.get("tr_span_ms", c.sequence.shape.tr_span_ms);
        s.get("tr_cycles", c.sequence.shape.tr_cycles);
        s.get("inversion_efficiency", c.sequence.inversion_efficiency);
        s.get("rf_phase_cycle_deg", c.sequence.rf_phase_cycle_deg);
        s.get("schedule_file", c.sequence.schedule_file);
        s.finish();
    }
    if (const auto* p = root.sub("kspace")) {
        detail::Section s(*p, "kspace");
        s.get("samples_per_spoke", c.kspace.samples_per_spoke);
        s.get("spokes_per_frame", c.kspace.spokes_per_frame);
        s.get("golden_angle_deg", c.kspace.golden_angle_deg);
        std::string path = detail::path_name(c.kspace.path);
        s.get("path", path);
        c.kspace.path = detail::parse_path(path);
        if (const auto* snr = s.sub("snr_db")) {
            if (snr->is_null()) {
                c.kspace.snr_db.reset();
            } else if (snr->is_number()) {
                c.kspace.snr_db = snr->get<double>();
            } else {
                throw ConfigError("config: kspace.snr_db must be a number or null");
            }
        }
        s.finish();
    }
    if (const auto* p = root.sub("compress")) {
        detail::Section s(*p, "compress");
        s.get("rank", c.compress.rank);
        s.get("t1_min_ms", c.compress.t1_min_ms);
        s.get("t1_max_ms", c.compress.t1_max_ms);
        s.get("t1_count", c.compress.t1_count);
        s.get("t2_min_ms", c.compress.t2_min_ms);
        s.get("t2_max_ms", c.compress.t2_max_ms);
        s.get("t2_count", c.compress.t2_count);
        s.get("b0_min_hz", c.compress.b0_min_hz);
        s.get("b0_max_hz", c.compress.b0_max_hz);
        s.get("b0_count", c.compress.b0_count);
        s.finish();
    }
    if (const auto* p = root.sub("network")) {
        detail::Section s(*p, "network");
        std::string variant = model::variant_name(c.network.variant);
        s.get("variant", variant);
        c.network.variant = model::parse_variant(variant);
        auto& m = c.network.model;
        s.get("latent_channels", m.latent_channels);
        if (const auto* e = s.sub("ife")) detail::read_encoder(*e, "network.ife", m.ife);
        if (const auto* e = s.sub("dsfe")) detail::read_encoder(*e, "network.dsfe", m.dsfe);
        if (const auto* g = s.sub("gast")) {
            detail::Section gs(*g, "network.gast");
            gs.get("block_count", m.gast.block_count);
            gs.get("gate_kernel_sizes", m.gast.gate_kernel_sizes);
            gs.get("mlp_expand", m.gast.mlp_expand);
            gs.finish();
        }
        s.finish();
    }
    if (const auto* p = root.sub("train")) {
        detail::Section s(*p, "train");
        auto& t = c.train;
        s.get("lr", t.lr);
        s.get("weight_decay", t.weight_decay);
        s.get("batch", t.batch);
        s.get("epochs", t.epochs);
        s.get("milestones", t.milestones);
        s.get("gamma", t.gamma);
        s.get("l1_weight", t.l1_weight);
        s.get("w_start", t.w_start);
        s.get("w_end", t.w_end);
        s.get("beta1", t.beta1);
        s.get("beta2", t.beta2);
        s.get("adam_eps", t.adam_eps);
        s.get("val_fraction", t.val_fraction);
        s.get("augment", t.augment);
        s.finish();
    }
    if (const auto* p = root.sub("eval")) {
        detail::Section s(*p, "eval");
        s.get("t_truncs", c.eval.t_truncs);
        s.finish();
    }
    root.finish();
    c.validate();
    return c;
}

inline json to_json(const RunConfig& c) {
    json classes = json::array();
    for (const auto& t : c.phantom.tissue.classes) classes.push_back({{"name", t.name}, {"t1_ms", t.t1_ms}, {"t2_ms", t.t2_ms}});
    const auto& sh = c.sequence.shape;
    const auto& m = c.network.model;
    const auto& t = c.train;
    return {
        {"seed", c.seed},
        {"phantom",
         {{"size", c.phantom.size},
          {"count", c.phantom.count},
          {"shapes", c.phantom.shapes},
          {"variation", c.phantom.tissue.variation},
          {"b0_max_hz", c.phantom.tissue.b0_max_hz},
          {"background_class", c.phantom.tissue.background_class},
          {"classes", classes}}},
        {"sequence",
         {{"frames", c.sequence.frames},
          {"t_trunc", c.sequence.t_trunc},
          {"schedule_seed", c.sequence.schedule_seed},
          {"lobes", sh.lobes},
          {"fa_peak_min_deg", sh.fa_peak_min_deg},
          {"fa_peak_max_deg", sh.fa_peak_max_deg},
          {"tr_base_ms", sh.tr_base_ms},
          {"tr_span_ms", sh.tr_span_ms},
          {"tr_cycles", sh.tr_cycles},
          {"inversion_efficiency", c.sequence.inversion_efficiency},
          {"rf_phase_cycle_deg", c.sequence.rf_phase_cycle_deg},
          {"schedule_file", c.sequence.schedule_file}}},
        {"kspace",
         {{"samples_per_spoke", c.kspace.samples_per_spoke},
          {"spokes_per_frame", c.kspace.spokes_per_frame},
          {"golden_angle_deg", c.kspace.golden_angle_deg},
          {"path", detail::path_name(c.kspace.path)},
          {"snr_db", c.kspace.snr_db ? json(*c.kspace.snr_db) : json(nullptr)}}},
        {"compress",
         {{"rank", c.compress.rank},
          {"t1_min_ms", c.compress.t1_min_ms},
          {"t1_max_ms", c.compress.t1_max_ms},
          {"t1_count", c.compress.t1_count},
          {"t2_min_ms", c.compress.t2_min_ms},
          {"t2_max_ms", c.compress.t2_max_ms},
          {"t2_count", c.compress.t2_count},
          {"b0_min_hz", c.compress.b0_min_hz},
          {"b0_max_hz", c.compress.b0_max_hz},
          {"b0_count", c.compress.b0_count}}},
        {"network",
         {{"variant", model::variant_name(c.network.variant)},
          {"latent_channels", m.latent_channels},
          {"ife", detail::encoder_json(m.ife)},
          {"dsfe", detail::encoder_json(m.dsfe)},
          {"gast",
           {{"block_count", m.gast.block_count},
            {"gate_kernel_sizes", m.gast.gate_kernel_sizes},
            {"mlp_expand", m.gast.mlp_expand}}}}},
        {"train",
         {{"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"batch", t.batch},
          {"epochs", t.epochs},
          {"milestones", t.milestones},
          {"gamma", t.gamma},
          {"l1_weight", t.l1_weight},
          {"w_start", t.w_start},
          {"w_end", t.w_end},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"val_fraction", t.val_fraction},
          {"augment", t.augment}}},
        {"eval", {{"t_truncs", c.eval.t_truncs}}},
    };
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return from_json(j);
}

/// FNV-1a 64 of the canonical (sorted-key) JSON dump, as 16 hex digits.
inline std::string hash_json(const json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string config_hash(const RunConfig& c) { return hash_json(to_json(c)); }

/// Hash of the dictionary grid axes and the schedule they are simulated with.
inline std::string grid_hash(const RunConfig& c) {
    const json j = to_json(c);
    json g = j.at("compress");
    g.erase("rank");
    return hash_json({{"grid", g}, {"sequence", j.at("sequence")}});
}

// Derived objects.

inline SequenceSchedule make_schedule(const RunConfig& c) {
    auto s = c.sequence.schedule_file.empty()
                 ? default_schedule(c.sequence.frames, c.sequence.schedule_seed, c.sequence.shape)
                 : load_schedule_csv(c.sequence.schedule_file);
    if (s.size() != c.sequence.frames)
        throw ConfigError("schedule file " + c.sequence.schedule_file + " has " + std::to_string(s.size()) +
                          " frames, sequence.frames is " + std::to_string(c.sequence.frames));
    s.inversion_efficiency = c.sequence.inversion_efficiency;
    s.rf_phase_cycle_deg = c.sequence.rf_phase_cycle_deg;
    s.validate();
    return s;
}

inline DictionaryGrid dictionary_grid(const RunConfig& c) {
    const auto& k = c.compress;
    DictionaryGrid g;
    g.t1_ms = log_axis(k.t1_min_ms, k.t1_max_ms, k.t1_count);
    g.t2_ms = log_axis(k.t2_min_ms, k.t2_max_ms, k.t2_count);
    g.b0_hz.resize(k.b0_count);
    for (std::size_t i = 0; i < k.b0_count; ++i) {
        g.b0_hz[i] = k.b0_count == 1 ? k.b0_min_hz
                                     : k.b0_min_hz + (k.b0_max_hz - k.b0_min_hz) * static_cast<double>(i) /
                                                         static_cast<double>(k.b0_count - 1);
    }
    return g;
}

}  // namespace mrf::pipeline
