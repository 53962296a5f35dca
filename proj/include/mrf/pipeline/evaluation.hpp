#pragma once

// Metric tables over (prediction, dataset) pairs and SVG line plots of
// aggregate metrics against the truncation length.
//
// Eval directory:
//   metrics.csv      t_trunc,sample,param,psnr,ssim,rmse,nmse
//   errors.csv       t_trunc,sample,param,mean_abs_error,max_abs_error,rmse
//   aggregate.csv    t_trunc,param,metric,mean,std,n   (std: n−1 denominator)
//   error_tTTTT_NNN.mrft   signed error maps [2,H,W], 0 outside the mask
//   metrics_vs_ttrunc.svg  with --plot

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mrf/model/metrics.hpp"
#include "mrf/pipeline/training.hpp"

namespace mrf::pipeline {

inline constexpr const char* kParams[2] = {"T1", "T2"};
inline constexpr const char* kMetricNames[4] = {"psnr", "ssim", "rmse", "nmse"};

struct SampleScore {
    std::size_t t_trunc = 0;
    std::size_t sample = 0;
    model::Metrics m[2];       // T1, T2
    double mean_abs[2] = {0, 0};
    double max_abs[2] = {0, 0};
};

inline double metric_value(const model::Metrics& m, std::size_t k) {
    switch (k) {
        case 0: return m.psnr;
        case 1: return m.ssim;
        case 2: return m.rmse;
        default: return m.nmse;
    }
}

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;
    std::size_t n = 0;
};

inline Aggregate aggregate(const std::vector<double>& v) {
    Aggregate a;
    a.n = v.size();
    if (v.empty()) return a;
    for (double x : v) a.mean += x;
    a.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - a.mean) * (x - a.mean);
        a.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return a;
}

/// Scores each predicted sample against the dataset's ground truth.
inline std::vector<SampleScore> score(const MapSet& pred, const Dataset& d) {
    std::vector<SampleScore> out;
    for (std::size_t k = 0; k < pred.samples.size(); ++k) {
        const auto i = pred.samples[k];
        if (i >= d.data.maps.size()) throw DataError("prediction for sample " + std::to_string(i) + " not in dataset");
        const auto& truth = d.data.maps[i];
        const Grid<double>* p[2] = {&pred.maps[k].t1, &pred.maps[k].t2};
        const Grid<double>* t[2] = {&truth.t1, &truth.t2};
        SampleScore s;
        s.t_trunc = d.t_trunc;
        s.sample = i;
        for (int q = 0; q < 2; ++q) {
            s.m[q] = model::evaluate_map(*p[q], *t[q], truth.mask);
            double sum = 0.0, mx = 0.0;
            for (std::size_t v = 0; v < truth.mask.size(); ++v) {
                if (!truth.mask.values[v]) continue;
                const double e = std::abs(p[q]->values[v] - t[q]->values[v]);
                sum += e;
                mx = std::max(mx, e);
            }
            s.mean_abs[q] = sum / static_cast<double>(truth.masked_count());
            s.max_abs[q] = mx;
        }
        out.push_back(s);
    }
    return out;
}

/// Signed error maps (prediction − truth) over the mask.
inline Tensor<double> error_tensor(const model::PredictedMaps& p, const TissueMap& truth) {
    const std::size_t hw = truth.mask.size();
    std::vector<double> v(2 * hw, 0.0);
    for (std::size_t i = 0; i < hw; ++i) {
        if (!truth.mask.values[i]) continue;
        v[i] = p.t1.values[i] - truth.t1.values[i];
        v[hw + i] = p.t2.values[i] - truth.t2.values[i];
    }
    return Tensor<double>({2, truth.rows(), truth.cols()}, std::move(v));
}

struct AggregateRow {
    std::size_t t_trunc;
    std::string param;
    std::string metric;
    Aggregate a;
};

inline std::vector<AggregateRow> aggregate_rows(const std::vector<SampleScore>& scores) {
    std::map<std::size_t, std::vector<const SampleScore*>> by_t;
    for (const auto& s : scores) by_t[s.t_trunc].push_back(&s);
    std::vector<AggregateRow> rows;
    for (const auto& [t, group] : by_t) {
        for (int q = 0; q < 2; ++q) {
            for (std::size_t k = 0; k < 4; ++k) {
                std::vector<double> v;
                for (const auto* s : group) v.push_back(metric_value(s->m[q], k));
                rows.push_back({t, kParams[q], kMetricNames[k], aggregate(v)});
            }
        }
    }
    return rows;
}

inline void write_scores(const fs::path& dir, const std::vector<SampleScore>& scores) {
    std::ofstream metrics(dir / "metrics.csv"), errors(dir / "errors.csv"), agg(dir / "aggregate.csv");
    if (!metrics || !errors || !agg) throw DataError("cannot write metric tables under " + dir.string());
    metrics << "t_trunc,sample,param,psnr,ssim,rmse,nmse\n";
    errors << "t_trunc,sample,param,mean_abs_error,max_abs_error,rmse\n";
    for (const auto& s : scores) {
        for (int q = 0; q < 2; ++q) {
            metrics << s.t_trunc << ',' << s.sample << ',' << kParams[q] << ',' << format_double(s.m[q].psnr) << ','
                    << format_double(s.m[q].ssim) << ',' << format_double(s.m[q].rmse) << ','
                    << format_double(s.m[q].nmse) << '\n';
            errors << s.t_trunc << ',' << s.sample << ',' << kParams[q] << ',' << format_double(s.mean_abs[q]) << ','
                   << format_double(s.max_abs[q]) << ',' << format_double(s.m[q].rmse) << '\n';
        }
    }
    agg << "t_trunc,param,metric,mean,std,n\n";
    for (const auto& r : aggregate_rows(scores)) {
        agg << r.t_trunc << ',' << r.param << ',' << r.metric << ',' << format_double(r.a.mean) << ','
            << format_double(r.a.std) << ',' << r.a.n << '\n';
    }
}

inline std::vector<AggregateRow> read_aggregate_csv(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open: " + path.string());
    std::string line;
    std::getline(is, line);
    if (line != "t_trunc,param,metric,mean,std,n") throw DataError(path.string() + ": unexpected header");
    std::vector<AggregateRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f[6];
        for (auto& x : f) std::getline(ss, x, ',');
        try {
            rows.push_back({std::stoul(f[0]), f[1], f[2], {std::stod(f[3]), std::stod(f[4]), std::stoul(f[5])}});
        } catch (const std::exception&) {
            throw DataError(path.string() + ": malformed row '" + line + "'");
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// SVG

namespace detail {

inline std::string fmt(double v, int prec = 4) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    return buf;
}

/// Draws one panel: T1 and T2 mean ± std against t_trunc.
inline void svg_panel(std::ostream& os, double x0, double y0, double w, double h, const std::string& metric,
                      const std::string& unit, const std::vector<AggregateRow>& rows) {
    const char* colors[2] = {"#1f77b4", "#d62728"};
    std::vector<double> ts, lo, hi;
    for (const auto& r : rows) {
        if (r.metric != metric) continue;
        ts.push_back(static_cast<double>(r.t_trunc));
        lo.push_back(r.a.mean - r.a.std);
        hi.push_back(r.a.mean + r.a.std);
    }
    if (ts.empty()) return;
    double tmin = *std::min_element(ts.begin(), ts.end()), tmax = *std::max_element(ts.begin(), ts.end());
    double vmin = *std::min_element(lo.begin(), lo.end()), vmax = *std::max_element(hi.begin(), hi.end());
    if (tmax == tmin) {
        tmin -= 100.0;
        tmax += 100.0;
    }
    if (vmax == vmin) {
        vmin -= 0.5;
        vmax += 0.5;
    }
    const double pad = 0.08 * (vmax - vmin);
    vmin -= pad;
    vmax += pad;
    const double ml = 60, mr = 15, mt = 30, mb = 45;
    auto px = [&](double t) { return x0 + ml + (t - tmin) / (tmax - tmin) * (w - ml - mr); };
    auto py = [&](double v) { return y0 + h - mb - (v - vmin) / (vmax - vmin) * (h - mt - mb); };

    os << "<rect x=\"" << x0 + ml << "\" y=\"" << y0 + mt << "\" width=\"" << w - ml - mr << "\" height=\"" << h - mt - mb
       << "\" fill=\"none\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << x0 + w / 2 << "\" y=\"" << y0 + 20 << "\" text-anchor=\"middle\" font-size=\"14\">"
       << metric << (unit.empty() ? "" : " (" + unit + ")") << "</text>\n";
    os << "<text x=\"" << x0 + w / 2 << "\" y=\"" << y0 + h - 8 << "\" text-anchor=\"middle\" font-size=\"12\">t_trunc (frames)</text>\n";
    std::vector<double> uniq = ts;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (double t : uniq) {
        os << "<text x=\"" << fmt(px(t)) << "\" y=\"" << y0 + h - mb + 15 << "\" text-anchor=\"middle\" font-size=\"10\">"
           << fmt(t, 6) << "</text>\n";
    }
    for (int k = 0; k <= 4; ++k) {
        const double v = vmin + (vmax - vmin) * k / 4.0;
        os << "<text x=\"" << x0 + ml - 5 << "\" y=\"" << fmt(py(v) + 3) << "\" text-anchor=\"end\" font-size=\"10\">"
           << fmt(v) << "</text>\n";
    }
    for (int q = 0; q < 2; ++q) {
        std::vector<const AggregateRow*> pts;
        for (const auto& r : rows) {
            if (r.metric == metric && r.param == kParams[q]) pts.push_back(&r);
        }
        std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->t_trunc < b->t_trunc; });
        os << "<polyline fill=\"none\" stroke=\"" << colors[q] << "\" stroke-width=\"2\" points=\"";
        for (const auto* p : pts) os << fmt(px(static_cast<double>(p->t_trunc))) << ',' << fmt(py(p->a.mean)) << ' ';
        os << "\"/>\n";
        for (const auto* p : pts) {
            const double x = px(static_cast<double>(p->t_trunc));
            os << "<line x1=\"" << fmt(x) << "\" x2=\"" << fmt(x) << "\" y1=\"" << fmt(py(p->a.mean - p->a.std))
               << "\" y2=\"" << fmt(py(p->a.mean + p->a.std)) << "\" stroke=\"" << colors[q] << "\"/>\n";
            os << "<circle cx=\"" << fmt(x) << "\" cy=\"" << fmt(py(p->a.mean)) << "\" r=\"3\" fill=\"" << colors[q]
               << "\"/>\n";
        }
        os << "<text x=\"" << x0 + ml + 10 << "\" y=\"" << y0 + mt + 15 + 14 * q << "\" font-size=\"11\" fill=\""
           << colors[q] << "\">" << kParams[q] << "</text>\n";
    }
}

}  // namespace detail

/// Two panels (PSNR, SSIM) of mean ± std against t_trunc for T1 and T2.
inline void write_plot(const fs::path& path, const std::vector<AggregateRow>& rows) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    const double w = 420, h = 320;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * w << "\" height=\"" << h << "\" viewBox=\"0 0 "
       << 2 * w << ' ' << h << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    detail::svg_panel(os, 0, 0, w, h, "psnr", "dB", rows);
    detail::svg_panel(os, w, 0, w, h, "ssim", "", rows);
    os << "</svg>\n";
}

}  // namespace mrf::pipeline
