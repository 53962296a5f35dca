#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mrf/core/error.hpp"

namespace mrf {

/// Flip angles and repetition times of an inversion-recovery bSSFP train.
struct SequenceSchedule {
    std::vector<double> flip_angles_deg;
    std::vector<double> trs_ms;
    bool inversion = true;
    double inversion_efficiency = 1.0;  // 1.0 = ideal 180° pulse
    double rf_phase_cycle_deg = 180.0;  // RF phase increment per repetition
    double rf_phase_offset_deg = 0.0;   // global RF phase of every pulse

    std::size_t size() const { return flip_angles_deg.size(); }

    void validate() const {
        if (flip_angles_deg.size() != trs_ms.size()) throw ConfigError("schedule: flip angle and TR counts differ");
        if (flip_angles_deg.empty()) throw ConfigError("schedule: no repetitions");
        for (double tr : trs_ms) {
            if (!(tr > 0.0) || !std::isfinite(tr)) throw ConfigError("schedule: TR must be positive");
        }
        for (double fa : flip_angles_deg) {
            if (!(fa >= 0.0 && fa <= 90.0)) throw ConfigError("schedule: flip angles must lie in [0, 90] degrees");
        }
        if (!(inversion_efficiency >= 0.0 && inversion_efficiency <= 1.0)) {
            throw ConfigError("schedule: inversion efficiency must lie in [0, 1]");
        }
    }
};

struct ScheduleConfig {
    std::size_t lobes = 5;
    double fa_peak_min_deg = 10.0;
    double fa_peak_max_deg = 70.0;
    double tr_base_ms = 10.0;
    double tr_span_ms = 4.0;
    double tr_cycles = 3.0;  // periods of the TR perturbation over the train
};

/// Multi-lobe sinusoidal flip-angle train with a smooth TR perturbation.
/// Each lobe starts at 0° so consecutive lobes are separated by a zero.
inline SequenceSchedule default_schedule(std::size_t n_rep, std::uint64_t seed, const ScheduleConfig& cfg = {}) {
    if (n_rep < 1) throw ConfigError("default_schedule: n_rep must be at least 1");
    if (cfg.lobes < 1) throw ConfigError("default_schedule: need at least one lobe");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> peak_dist(cfg.fa_peak_min_deg, cfg.fa_peak_max_deg);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);

    SequenceSchedule s;
    s.flip_angles_deg.assign(n_rep, 0.0);
    s.trs_ms.assign(n_rep, cfg.tr_base_ms);

    const std::size_t lobes = std::max<std::size_t>(1, std::min(cfg.lobes, n_rep / 2));
    std::size_t start = 0;
    for (std::size_t l = 0; l < lobes; ++l) {
        const std::size_t len = (n_rep - start) / (lobes - l);
        const double peak = peak_dist(rng);
        for (std::size_t j = 0; j < len; ++j) {
            s.flip_angles_deg[start + j] = peak * std::sin(std::numbers::pi * static_cast<double>(j) / static_cast<double>(len));
        }
        start += len;
    }
    const double phase = phase_dist(rng);
    for (std::size_t n = 0; n < n_rep; ++n) {
        const double arg = 2.0 * std::numbers::pi * cfg.tr_cycles * static_cast<double>(n) / static_cast<double>(n_rep) + phase;
        s.trs_ms[n] = cfg.tr_base_ms + cfg.tr_span_ms * 0.5 * (1.0 - std::cos(arg));
    }
    return s;
}

/// Writes `fa_deg,tr_ms` rows with enough digits to round-trip exactly.
inline void save_schedule_csv(const std::string& path, const SequenceSchedule& s) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "fa_deg,tr_ms\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < s.size(); ++i) os << s.flip_angles_deg[i] << ',' << s.trs_ms[i] << '\n';
    if (!os) throw DataError("write failed: " + path);
}

/// Reads a `fa_deg,tr_ms` CSV. Sequence-level flags (inversion, phase
/// cycling) are taken from `base`.
inline SequenceSchedule load_schedule_csv(const std::string& path, SequenceSchedule base = {}) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError("empty schedule file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "fa_deg,tr_ms") throw DataError("schedule header must be 'fa_deg,tr_ms': " + path);
    base.flip_angles_deg.clear();
    base.trs_ms.clear();
    std::size_t lineno = 1;
    auto parse = [&](std::string_view tok) {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || ptr != tok.data() + tok.size()) {
            throw DataError("schedule line " + std::to_string(lineno) + ": bad number '" + std::string(tok) + "'");
        }
        return v;
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("schedule line " + std::to_string(lineno) + ": expected two columns");
        const std::string_view view(line);
        base.flip_angles_deg.push_back(parse(view.substr(0, comma)));
        base.trs_ms.push_back(parse(view.substr(comma + 1)));
    }
    base.validate();
    return base;
}

}  // namespace mrf
