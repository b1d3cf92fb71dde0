#pragma once

#include "objsplat/common.hpp"
#include "objsplat/image.hpp"

#include <array>

namespace objsplat {

inline constexpr std::array<double, 6> kDepthThresholds = {0.005, 0.01, 0.025, 0.05, 0.1, 0.2};

struct DepthMetrics {
    double mae = 0;
    double rmse = 0;
    std::array<double, 6> delta_pct{};  // fraction of pixels under each threshold, in percent
    long valid_pixels = 0;
};

/// Absolute-depth accuracy over the valid pixels: MAE, RMSE and the
/// delta-threshold percentages. Pixels the prediction left empty (depth 0)
/// count as an error of `invalid_error_cap` rather than being excluded.
inline DepthMetrics depth_metrics(const ImageXd& pred, const ImageXd& gt,
                                  const std::vector<uint8_t>& valid_mask,
                                  double invalid_error_cap = 0.5) {
    if (!pred.same_shape(gt)) throw DataError("depth_metrics: image shapes differ");
    if (valid_mask.size() != size_t(pred.width) * pred.height)
        throw DataError("depth_metrics: mask size mismatch");
    DepthMetrics m;
    double abs_sum = 0, sq_sum = 0;
    std::array<long, 6> under{};
    for (size_t i = 0; i < valid_mask.size(); ++i) {
        if (!valid_mask[i]) continue;
        double err = pred.data[i] > 0 ? std::abs(pred.data[i] - gt.data[i]) : invalid_error_cap;
        abs_sum += err;
        sq_sum += err * err;
        for (size_t t = 0; t < kDepthThresholds.size(); ++t)
            if (err < kDepthThresholds[t]) under[t] += 1;
        m.valid_pixels += 1;
    }
    if (m.valid_pixels == 0) throw DataError("depth_metrics: no valid pixels");
    m.mae = abs_sum / double(m.valid_pixels);
    m.rmse = std::sqrt(sq_sum / double(m.valid_pixels));
    for (size_t t = 0; t < kDepthThresholds.size(); ++t)
        m.delta_pct[t] = 100.0 * double(under[t]) / double(m.valid_pixels);
    return m;
}

/// Wall-clock accounting of one run, matching the efficiency table columns.
struct EfficiencyReport {
    double preprocess_s = 0;
    double optimize_s = 0;
    double total_s = 0;
    long gaussian_count = 0;
};

inline EfficiencyReport make_efficiency_report(double preprocess_s, double optimize_s,
                                               long gaussian_count) {
    EfficiencyReport r;
    r.preprocess_s = preprocess_s;
    r.optimize_s = optimize_s;
    r.total_s = preprocess_s + optimize_s;
    r.gaussian_count = gaussian_count;
    return r;
}

}  // namespace objsplat
