#pragma once

#include "objsplat/common.hpp"
#include "objsplat/image.hpp"

#include <vector>

namespace objsplat {

/// Loss mixing weights of the total training objective plus the D-SSIM
/// blend factor. a_group_sum / a_distance weight the two variance terms of
/// the object-aware loss.
struct LossWeights {
    double a_color = 0.5;
    double a_mask = 0.5;
    double a_one_hot = 1.0;
    double a_group_sum = 10000.0 / 3.0;
    double a_distance = 1.0 / 3.0;
    double lambda_dssim = 0.2;
};

namespace detail {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

inline const std::vector<double>& ssim_taps() {
    static const std::vector<double> taps = [] {
        std::vector<double> t(kSsimWindow);
        double sum = 0;
        for (int i = 0; i < kSsimWindow; ++i) {
            double d = i - (kSsimWindow - 1) / 2.0;
            t[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += t[i];
        }
        for (double& v : t) v /= sum;
        return t;
    }();
    return taps;
}

// Separable Gaussian blur with zero padding. Self-adjoint, which the SSIM
// backward relies on.
inline ImageXd ssim_blur(const ImageXd& img) {
    const auto& taps = ssim_taps();
    const int r = kSsimWindow / 2;
    ImageXd tmp(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0;
                for (int k = -r; k <= r; ++k) {
                    int xx = x + k;
                    if (xx < 0 || xx >= img.width) continue;
                    acc += taps[k + r] * img.at(y, xx, c);
                }
                tmp.at(y, x, c) = acc;
            }
    ImageXd out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0;
                for (int k = -r; k <= r; ++k) {
                    int yy = y + k;
                    if (yy < 0 || yy >= img.height) continue;
                    acc += taps[k + r] * tmp.at(yy, x, c);
                }
                out.at(y, x, c) = acc;
            }
    return out;
}

inline ImageXd hadamard(const ImageXd& a, const ImageXd& b) {
    ImageXd out(a.width, a.height, a.channels);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

struct SsimMoments {
    ImageXd mu_x, mu_y, var_x, var_y, cov;
};

inline SsimMoments ssim_moments(const ImageXd& x, const ImageXd& y) {
    SsimMoments m;
    m.mu_x = ssim_blur(x);
    m.mu_y = ssim_blur(y);
    m.var_x = ssim_blur(hadamard(x, x));
    m.var_y = ssim_blur(hadamard(y, y));
    m.cov = ssim_blur(hadamard(x, y));
    for (size_t i = 0; i < x.data.size(); ++i) {
        m.var_x.data[i] -= m.mu_x.data[i] * m.mu_x.data[i];
        m.var_y.data[i] -= m.mu_y.data[i] * m.mu_y.data[i];
        m.cov.data[i] -= m.mu_x.data[i] * m.mu_y.data[i];
    }
    return m;
}

}  // namespace detail

/// Mean SSIM between two images (11x11 Gaussian window, sigma 1.5, zero
/// padding, constants for a [0, 1] value range), averaged over pixels and
/// channels.
inline double ssim_mean(const ImageXd& pred, const ImageXd& gt) {
    if (!pred.same_shape(gt)) throw DataError("ssim: image shapes differ");
    detail::SsimMoments m = detail::ssim_moments(pred, gt);
    double total = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        double a1 = 2 * m.mu_x.data[i] * m.mu_y.data[i] + detail::kSsimC1;
        double a2 = 2 * m.cov.data[i] + detail::kSsimC2;
        double b1 = m.mu_x.data[i] * m.mu_x.data[i] + m.mu_y.data[i] * m.mu_y.data[i] +
                    detail::kSsimC1;
        double b2 = m.var_x.data[i] + m.var_y.data[i] + detail::kSsimC2;
        total += (a1 * a2) / (b1 * b2);
    }
    return total / double(pred.data.size());
}

/// (1 - lambda) * L1 + lambda * D-SSIM where D-SSIM = (1 - SSIM) / 2.
inline double l1_dssim(const ImageXd& pred, const ImageXd& gt, double lambda) {
    if (!pred.same_shape(gt)) throw DataError("l1_dssim: image shapes differ");
    double l1 = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) l1 += std::abs(pred.data[i] - gt.data[i]);
    l1 /= double(pred.data.size());
    if (lambda == 0.0) return l1;
    return (1.0 - lambda) * l1 + lambda * 0.5 * (1.0 - ssim_mean(pred, gt));
}

/// Gradient of upstream * l1_dssim(pred, gt) with respect to pred.
inline ImageXd l1_dssim_backward(const ImageXd& pred, const ImageXd& gt, double lambda,
                                 double upstream = 1.0) {
    if (!pred.same_shape(gt)) throw DataError("l1_dssim: image shapes differ");
    const double n = double(pred.data.size());
    ImageXd grad(pred.width, pred.height, pred.channels);
    double l1_scale = upstream * (1.0 - lambda) / n;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        double d = pred.data[i] - gt.data[i];
        grad.data[i] = d > 0 ? l1_scale : (d < 0 ? -l1_scale : 0.0);
    }
    if (lambda == 0.0) return grad;

    // d/dpred of lambda/2 * (1 - mean SSIM).
    detail::SsimMoments m = detail::ssim_moments(pred, gt);
    double scale = -upstream * lambda * 0.5 / n;
    ImageXd d_mu(pred.width, pred.height, pred.channels);
    ImageXd d_vx(pred.width, pred.height, pred.channels);
    ImageXd d_vxy(pred.width, pred.height, pred.channels);
    for (size_t i = 0; i < pred.data.size(); ++i) {
        double mx = m.mu_x.data[i], my = m.mu_y.data[i];
        double a1 = 2 * mx * my + detail::kSsimC1;
        double a2 = 2 * m.cov.data[i] + detail::kSsimC2;
        double b1 = mx * mx + my * my + detail::kSsimC1;
        double b2 = m.var_x.data[i] + m.var_y.data[i] + detail::kSsimC2;
        double s = (a1 * a2) / (b1 * b2);
        // Independent intermediates: mu_x, raw second moment of x, raw
        // cross moment. var_x = vx - mu_x^2, cov = vxy - mu_x * mu_y.
        d_mu.data[i] = scale * (2 * my * (a2 - a1) / (b1 * b2) -
                                2 * mx * s * (b2 - b1) / (b1 * b2));
        d_vx.data[i] = scale * (-s / b2);
        d_vxy.data[i] = scale * (2 * a1 / (b1 * b2));
    }
    ImageXd blur_mu = detail::ssim_blur(d_mu);
    ImageXd blur_vx = detail::ssim_blur(d_vx);
    ImageXd blur_vxy = detail::ssim_blur(d_vxy);
    for (size_t i = 0; i < pred.data.size(); ++i)
        grad.data[i] += blur_mu.data[i] + 2.0 * pred.data[i] * blur_vx.data[i] +
                        gt.data[i] * blur_vxy.data[i];
    return grad;
}

inline constexpr double kDiceEps = 1e-6;

namespace detail {

inline void pixel_softmax(const double* logits, int n, double* out) {
    double mx = logits[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, logits[c]);
    double sum = 0;
    for (int c = 0; c < n; ++c) {
        out[c] = std::exp(logits[c] - mx);
        sum += out[c];
    }
    for (int c = 0; c < n; ++c) out[c] /= sum;
}

}  // namespace detail

/// Dice loss between the per-pixel softmax of an accumulated one-hot render
/// and binary labels. labels[pixel] holds the channel index that is 1.
/// Averages the per-channel dice over all channels including background.
inline double dice_onehot(const ImageXd& accum, const std::vector<uint8_t>& labels) {
    const int nch = accum.channels;
    if (labels.size() != size_t(accum.width) * accum.height)
        throw DataError("dice_onehot: label count does not match image");
    std::vector<double> overlap(nch, 0.0), pred_sum(nch, 0.0), label_sum(nch, 0.0);
    std::vector<double> p(nch);
    for (int y = 0; y < accum.height; ++y)
        for (int x = 0; x < accum.width; ++x) {
            detail::pixel_softmax(accum.pixel(y, x), nch, p.data());
            int lab = labels[size_t(y) * accum.width + x];
            for (int c = 0; c < nch; ++c) pred_sum[c] += p[c];
            overlap[lab] += p[lab];
            label_sum[lab] += 1.0;
        }
    double dice = 0;
    for (int c = 0; c < nch; ++c)
        dice += (2.0 * overlap[c] + kDiceEps) / (pred_sum[c] + label_sum[c] + kDiceEps);
    return 1.0 - dice / nch;
}

/// Gradient of upstream * dice_onehot with respect to the accumulated
/// (pre-softmax) channels.
inline ImageXd dice_onehot_backward(const ImageXd& accum, const std::vector<uint8_t>& labels,
                                    double upstream = 1.0) {
    const int nch = accum.channels;
    if (labels.size() != size_t(accum.width) * accum.height)
        throw DataError("dice_onehot: label count does not match image");
    std::vector<double> overlap(nch, 0.0), pred_sum(nch, 0.0), label_sum(nch, 0.0);
    std::vector<double> p(nch);
    for (int y = 0; y < accum.height; ++y)
        for (int x = 0; x < accum.width; ++x) {
            detail::pixel_softmax(accum.pixel(y, x), nch, p.data());
            int lab = labels[size_t(y) * accum.width + x];
            for (int c = 0; c < nch; ++c) pred_sum[c] += p[c];
            overlap[lab] += p[lab];
            label_sum[lab] += 1.0;
        }
    std::vector<double> dice(nch), denom(nch);
    for (int c = 0; c < nch; ++c) {
        denom[c] = pred_sum[c] + label_sum[c] + kDiceEps;
        dice[c] = (2.0 * overlap[c] + kDiceEps) / denom[c];
    }
    ImageXd grad(accum.width, accum.height, nch);
    std::vector<double> dp(nch);
    for (int y = 0; y < accum.height; ++y)
        for (int x = 0; x < accum.width; ++x) {
            detail::pixel_softmax(accum.pixel(y, x), nch, p.data());
            int lab = labels[size_t(y) * accum.width + x];
            double inner = 0;
            for (int c = 0; c < nch; ++c) {
                double y_c = (c == lab) ? 1.0 : 0.0;
                dp[c] = -upstream / nch * (2.0 * y_c - dice[c]) / denom[c];
                inner += dp[c] * p[c];
            }
            double* g = grad.pixel(y, x);
            for (int c = 0; c < nch; ++c) g[c] = p[c] * (dp[c] - inner);
        }
    return grad;
}

}  // namespace objsplat
