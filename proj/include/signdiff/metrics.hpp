#pragma once

// Image-quality metrics and evaluation reports.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"
#include "signdiff/encoders.hpp"

namespace signdiff {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(peak^2 / MSE), capped at 99 dB (the value reported for MSE = 0).
inline double psnr(const Tensor& x, const Tensor& y, double peak = 1.0) {
    x.check_same(y, "psnr");
    require(peak > 0.0, "psnr: peak must be positive");
    const double mse = mean_squared_error(x, y);
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

struct SsimSettings {
    std::size_t window = 8;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

/// Mean luminance, contrast and structure terms alongside the combined index.
struct SsimComponents {
    double ssim = 0.0;
    double luminance = 0.0;
    double contrast = 0.0;
    double structure = 0.0;
};

/// Uniform square windows at every valid position of every 2-D plane (the
/// last two axes); population statistics per window.
inline SsimComponents ssim_components(const Tensor& x, const Tensor& y, const SsimSettings& s = {}) {
    x.check_same(y, "ssim");
    require(x.rank() >= 2, "ssim: need at least two axes");
    require(s.window > 0 && s.data_range > 0.0, "ssim: invalid settings");
    const std::size_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
    if (s.window > H || s.window > W)
        throw InvalidArgument("ssim: window " + std::to_string(s.window) + " larger than image " + std::to_string(H) +
                              "x" + std::to_string(W));
    const double c1 = (s.k1 * s.data_range) * (s.k1 * s.data_range);
    const double c2 = (s.k2 * s.data_range) * (s.k2 * s.data_range);
    const double c3 = c2 / 2.0;
    const std::size_t planes = x.size() / (H * W);
    const double n = static_cast<double>(s.window * s.window);

    SsimComponents acc;
    std::size_t count = 0;
    for (std::size_t p = 0; p < planes; ++p) {
        const double* a = x.data().data() + p * H * W;
        const double* b = y.data().data() + p * H * W;
        for (std::size_t i = 0; i + s.window <= H; ++i)
            for (std::size_t j = 0; j + s.window <= W; ++j) {
                double mx = 0, my = 0;
                for (std::size_t u = 0; u < s.window; ++u)
                    for (std::size_t v = 0; v < s.window; ++v) {
                        mx += a[(i + u) * W + j + v];
                        my += b[(i + u) * W + j + v];
                    }
                mx /= n;
                my /= n;
                double vx = 0, vy = 0, cxy = 0;
                for (std::size_t u = 0; u < s.window; ++u)
                    for (std::size_t v = 0; v < s.window; ++v) {
                        const double dx = a[(i + u) * W + j + v] - mx, dy = b[(i + u) * W + j + v] - my;
                        vx += dx * dx;
                        vy += dy * dy;
                        cxy += dx * dy;
                    }
                vx /= n;
                vy /= n;
                cxy /= n;
                const double sx = std::sqrt(vx), sy = std::sqrt(vy);
                acc.ssim += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                acc.luminance += (2 * mx * my + c1) / (mx * mx + my * my + c1);
                acc.contrast += (2 * sx * sy + c2) / (vx + vy + c2);
                acc.structure += (cxy + c3) / (sx * sy + c3);
                ++count;
            }
    }
    const double k = static_cast<double>(count);
    return {acc.ssim / k, acc.luminance / k, acc.contrast / k, acc.structure / k};
}

inline double ssim(const Tensor& x, const Tensor& y, const SsimSettings& s = {}) { return ssim_components(x, y, s).ssim; }

/// Mean squared distance between frozen random conv features. Not comparable
/// to LPIPS computed with pretrained backbones.
inline double perceptual_distance(const Tensor& x, const Tensor& y, const FoundationStub& stub) {
    x.check_same(y, "perceptual_distance");
    const Tensor fx = stub.features(as_clip(x)), fy = stub.features(as_clip(y));
    return mean_squared_error(fx, fy);
}

inline FoundationStub make_perceptual_stub(std::size_t image_channels, std::uint64_t seed) {
    return FoundationStub(image_channels, 8, seed, 8);
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation; 0 for a single value
};

inline MeanStd mean_std(const std::vector<double>& v) {
    require(!v.empty(), "mean_std: empty input");
    MeanStd r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricSettings {
    double psnr_peak = 1.0;
    SsimSettings ssim;
    std::uint64_t perceptual_seed = 29;
};

struct ClipPair {
    std::string name;
    Tensor prediction;
    Tensor target;
};

struct ClipMetrics {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
    double perceptual = 0.0;
};

struct EvalReport {
    std::string method;
    std::string fingerprint;
    std::vector<ClipMetrics> clips;  // ordered by name
    ClipMetrics aggregate;
};

inline ClipMetrics evaluate_pair(const ClipPair& p, const MetricSettings& s, const FoundationStub& stub) {
    if (p.prediction.shape() != p.target.shape())
        throw InvalidArgument("evaluate: clip '" + p.name + "' prediction " + shape_str(p.prediction.shape()) +
                              " vs target " + shape_str(p.target.shape()));
    SsimSettings ss = s.ssim;
    ss.data_range = s.psnr_peak;
    return {p.name, psnr(p.prediction, p.target, s.psnr_peak), ssim(p.prediction, p.target, ss),
            perceptual_distance(p.prediction, p.target, stub)};
}

inline ClipMetrics aggregate_rows(const std::vector<ClipMetrics>& rows, const std::string& name = "mean") {
    require(!rows.empty(), "aggregate: no rows");
    ClipMetrics m{name};
    for (const auto& r : rows) {
        m.psnr += r.psnr;
        m.ssim += r.ssim;
        m.perceptual += r.perceptual;
    }
    const double n = static_cast<double>(rows.size());
    m.psnr /= n;
    m.ssim /= n;
    m.perceptual /= n;
    return m;
}

inline EvalReport make_report(const std::string& method, const std::vector<ClipPair>& pairs,
                              const MetricSettings& settings, const std::string& fingerprint) {
    require(!pairs.empty(), "make_report: no clip pairs");
    const FoundationStub stub = make_perceptual_stub(pairs.front().target.dim(0), settings.perceptual_seed);
    EvalReport r{method, fingerprint, {}, {}};
    for (const auto& p : pairs) r.clips.push_back(evaluate_pair(p, settings, stub));
    std::stable_sort(r.clips.begin(), r.clips.end(),
                     [](const ClipMetrics& a, const ClipMetrics& b) { return a.name < b.name; });
    r.aggregate = aggregate_rows(r.clips);
    return r;
}

inline std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

struct TableRow {
    std::string label;
    ClipMetrics metrics;
};

inline std::string table_markdown(const std::string& title, const std::vector<TableRow>& rows,
                                  const std::string& fingerprint, const std::string& note = {}) {
    std::string s = "# " + title + "\n\n";
    if (!note.empty()) s += note + "\n\n";
    s += "config fingerprint: `" + fingerprint + "`\n\n";
    s += "| row | PSNR (dB) | SSIM | perceptual (random features) |\n|---|---|---|---|\n";
    for (const auto& r : rows)
        s += "| " + r.label + " | " + format_number(r.metrics.psnr) + " | " + format_number(r.metrics.ssim) + " | " +
             format_number(r.metrics.perceptual) + " |\n";
    return s;
}

inline std::string table_csv(const std::vector<TableRow>& rows) {
    std::string s = "row,psnr,ssim,perceptual\n";
    for (const auto& r : rows)
        s += r.label + "," + format_number(r.metrics.psnr) + "," + format_number(r.metrics.ssim) + "," +
             format_number(r.metrics.perceptual) + "\n";
    return s;
}

inline std::vector<TableRow> report_rows(const EvalReport& r) {
    std::vector<TableRow> rows;
    for (const auto& c : r.clips) rows.push_back({c.name, c});
    rows.push_back({"mean", r.aggregate});
    return rows;
}

inline std::string report_markdown(const EvalReport& r) {
    return table_markdown("Evaluation: " + r.method, report_rows(r), r.fingerprint);
}

inline std::string report_csv(const EvalReport& r) { return table_csv(report_rows(r)); }

inline nlohmann::ordered_json report_json(const EvalReport& r) {
    auto row = [](const ClipMetrics& m) {
        return nlohmann::ordered_json{{"name", m.name}, {"psnr", m.psnr}, {"ssim", m.ssim}, {"perceptual", m.perceptual}};
    };
    nlohmann::ordered_json clips = nlohmann::ordered_json::array();
    for (const auto& c : r.clips) clips.push_back(row(c));
    return {{"method", r.method}, {"fingerprint", r.fingerprint}, {"clips", clips}, {"aggregate", row(r.aggregate)}};
}

}  // namespace signdiff
