#pragma once

#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "recast/clip.hpp"

namespace recast {
namespace metrics {

constexpr double kPsnrCap = 100.0;  // reported for zero-MSE pairs

// 10 log10(1 / MSE) over all pixels and channels, capped at 100 dB.
inline double psnr(const Clip& a, const Clip& b) {
    if (a.frames != b.frames || a.height != b.height || a.width != b.width)
        throw ShapeError("psnr: clip shapes differ");
    double se = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        se += d * d;
    }
    double mse = se / static_cast<double>(a.data.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

inline std::vector<double> luma_frame(const Clip& c, int fr) {
    std::vector<double> out(static_cast<size_t>(c.height) * c.width);
    for (int y = 0; y < c.height; ++y)
        for (int x = 0; x < c.width; ++x)
            out[static_cast<size_t>(y) * c.width + x] =
                0.299 * c.at(fr, 0, y, x) + 0.587 * c.at(fr, 1, y, x) + 0.114 * c.at(fr, 2, y, x);
    return out;
}

// Single-scale SSIM on luma: 8x8 uniform sliding windows, C1=(0.01)^2,
// C2=(0.03)^2 on the unit range, mean over windows and frames.
inline double ssim(const Clip& a, const Clip& b, int window = 8) {
    if (a.frames != b.frames || a.height != b.height || a.width != b.width)
        throw ShapeError("ssim: clip shapes differ");
    if (a.height < window || a.width < window) throw DataError("ssim: clip smaller than window");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int n = window * window;
    double total = 0.0;
    int64_t count = 0;
    for (int fr = 0; fr < a.frames; ++fr) {
        auto la = luma_frame(a, fr);
        auto lb = luma_frame(b, fr);
        for (int y = 0; y + window <= a.height; ++y)
            for (int x = 0; x + window <= a.width; ++x) {
                double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dy = 0; dy < window; ++dy)
                    for (int dx = 0; dx < window; ++dx) {
                        double va = la[static_cast<size_t>(y + dy) * a.width + (x + dx)];
                        double vb = lb[static_cast<size_t>(y + dy) * a.width + (x + dx)];
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                double mua = sa / n, mub = sb / n;
                double vara = saa / n - mua * mua;
                double varb = sbb / n - mub * mub;
                double covab = sab / n - mua * mub;
                double val = ((2 * mua * mub + c1) * (2 * covab + c2)) /
                             ((mua * mua + mub * mub + c1) * (vara + varb + c2));
                total += val;
                ++count;
            }
    }
    return total / static_cast<double>(count);
}

struct MetricReport {
    std::vector<double> psnr_db;
    std::vector<double> ssim_val;
    std::vector<double> identity;
    std::vector<std::string> sample_names;

    int count() const { return static_cast<int>(psnr_db.size()); }
    static double mean(const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    }
    double mean_psnr() const { return mean(psnr_db); }
    double mean_ssim() const { return mean(ssim_val); }
    double mean_identity() const { return mean(identity); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["count"] = count();
        j["mean"] = {{"psnr_db", mean_psnr()}, {"ssim", mean_ssim()}, {"identity", mean_identity()}};
        auto arr = nlohmann::json::array();
        for (int i = 0; i < count(); ++i)
            arr.push_back({{"sample", sample_names[i]},
                           {"psnr_db", psnr_db[i]},
                           {"ssim", ssim_val[i]},
                           {"identity", identity[i]}});
        j["samples"] = arr;
        return j;
    }

    std::string to_text() const {
        char line[160];
        std::string out;
        std::snprintf(line, sizeof(line), "%-12s %10s %10s %10s\n", "sample", "psnr_db", "ssim", "identity");
        out += line;
        for (int i = 0; i < count(); ++i) {
            std::snprintf(line, sizeof(line), "%-12s %10.4f %10.6f %10.6f\n", sample_names[i].c_str(),
                          psnr_db[i], ssim_val[i], identity[i]);
            out += line;
        }
        std::snprintf(line, sizeof(line), "%-12s %10.4f %10.6f %10.6f\n", "mean", mean_psnr(), mean_ssim(),
                      mean_identity());
        out += line;
        return out;
    }
};

}  // namespace metrics
}  // namespace recast
