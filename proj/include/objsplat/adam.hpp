#pragma once

#include "objsplat/common.hpp"
#include "objsplat/rasterizer.hpp"
#include "objsplat/scene.hpp"

#include <vector>

namespace objsplat {

/// Per-iteration learning rates, one per parameter group.
struct GroupLearningRates {
    double mean = 1.6e-4;
    double rotation = 1e-3;
    double log_scale = 5e-3;
    double opacity = 5e-2;
    double color = 2.5e-3;
    double mask_color = 2.5e-3;
    double object_logits = 0.1;
};

/// Adam over the per-gaussian parameter groups. Moment rows follow the
/// gaussian list through densification: pruned rows are dropped, new rows
/// start at zero.
class GaussianAdam {
public:
    GaussianAdam(size_t count, int logit_dim, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8)
        : logit_dim_(logit_dim), beta1_(beta1), beta2_(beta2), eps_(eps) {
        resize_all(count);
    }

    int step_count() const { return t_; }

    void step(SceneSnapshot& scene, const SceneGradients& grads, const GroupLearningRates& lr) {
        ++t_;
        bias1_ = 1.0 - std::pow(beta1_, t_);
        bias2_ = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < scene.gaussians.size(); ++i) {
            Gaussian2D& g = scene.gaussians[i];
            const GaussianGrad& gg = grads.g[i];
            update(mean_, i, 3, g.mean.data(), gg.mean.data(), lr.mean);
            update(rot_, i, 4, g.rotation.data(), gg.rotation.data(), lr.rotation);
            update(scale_, i, 2, g.log_scale.data(), gg.log_scale.data(), lr.log_scale);
            update(opacity_, i, 1, &g.opacity_raw, &gg.opacity_raw, lr.opacity);
            update(color_, i, 3, g.color.data(), gg.color.data(), lr.color);
            update(mask_, i, 3, g.mask_color.data(), gg.mask_color.data(), lr.mask_color);
            update(logits_, i, logit_dim_, g.object_logits.data(), gg.object_logits.data(),
                   lr.object_logits);
        }
    }

    // Keeps moment rows where keep[i] is true, in order.
    void filter_rows(const std::vector<uint8_t>& keep) {
        filter(mean_, 3, keep);
        filter(rot_, 4, keep);
        filter(scale_, 2, keep);
        filter(opacity_, 1, keep);
        filter(color_, 3, keep);
        filter(mask_, 3, keep);
        filter(logits_, logit_dim_, keep);
        count_ = 0;
        for (uint8_t k : keep) count_ += k;
    }

    void append_rows(size_t n) { resize_all(count_ + n); }

    size_t rows() const { return count_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };

    void resize_all(size_t count) {
        count_ = count;
        mean_.m.resize(count * 3, 0.0);
        mean_.v.resize(count * 3, 0.0);
        rot_.m.resize(count * 4, 0.0);
        rot_.v.resize(count * 4, 0.0);
        scale_.m.resize(count * 2, 0.0);
        scale_.v.resize(count * 2, 0.0);
        opacity_.m.resize(count, 0.0);
        opacity_.v.resize(count, 0.0);
        color_.m.resize(count * 3, 0.0);
        color_.v.resize(count * 3, 0.0);
        mask_.m.resize(count * 3, 0.0);
        mask_.v.resize(count * 3, 0.0);
        logits_.m.resize(count * logit_dim_, 0.0);
        logits_.v.resize(count * logit_dim_, 0.0);
    }

    void update(Moments& mo, size_t row, int dim, double* param, const double* grad, double lr) {
        for (int k = 0; k < dim; ++k) {
            size_t j = row * dim + k;
            mo.m[j] = beta1_ * mo.m[j] + (1.0 - beta1_) * grad[k];
            mo.v[j] = beta2_ * mo.v[j] + (1.0 - beta2_) * grad[k] * grad[k];
            double mhat = mo.m[j] / bias1_;
            double vhat = mo.v[j] / bias2_;
            param[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }

    void filter(Moments& mo, int dim, const std::vector<uint8_t>& keep) {
        size_t w = 0;
        for (size_t i = 0; i < keep.size(); ++i) {
            if (!keep[i]) continue;
            for (int k = 0; k < dim; ++k) {
                mo.m[w * dim + k] = mo.m[i * dim + k];
                mo.v[w * dim + k] = mo.v[i * dim + k];
            }
            ++w;
        }
        mo.m.resize(w * dim);
        mo.v.resize(w * dim);
    }

    size_t count_ = 0;
    int logit_dim_;
    double beta1_, beta2_, eps_;
    double bias1_ = 1.0, bias2_ = 1.0;
    int t_ = 0;
    Moments mean_, rot_, scale_, opacity_, color_, mask_, logits_;
};

}  // namespace objsplat
