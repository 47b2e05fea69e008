#include "fedlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedlab {

double psnr(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "psnr: shape mismatch");
    const double mse = (a.values() - b.values()).squaredNorm() / double(a.size());
    if (mse == 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr Index kWin = 7;

double ssim_window(const double* a, const double* b, Index w_stride, Index wh, Index ww) {
    const double cnt = double(wh * ww);
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    for (Index y = 0; y < wh; ++y)
        for (Index x = 0; x < ww; ++x) {
            const double va = a[y * w_stride + x], vb = b[y * w_stride + x];
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
        }
    const double mu_a = sa / cnt, mu_b = sb / cnt;
    const double var_a = saa / cnt - mu_a * mu_a;
    const double var_b = sbb / cnt - mu_b * mu_b;
    const double cov = sab / cnt - mu_a * mu_b;
    return ((2 * mu_a * mu_b + kC1) * (2 * cov + kC2)) /
           ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
}

} // namespace

double ssim(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "ssim: shape mismatch");
    require(a.rank() == 3 || a.rank() == 4, "ssim: expects [C,H,W] or [M,C,H,W]");
    const bool batched = a.rank() == 4;
    const Index m = batched ? a.dim(0) : 1;
    const Index c = a.dim(batched ? 1 : 0);
    const Index h = a.dim(batched ? 2 : 1);
    const Index w = a.dim(batched ? 3 : 2);

    double acc = 0.0;
    Index windows = 0;
    const double* pa = a.values().data();
    const double* pb = b.values().data();

    if (h < kWin || w < kWin) {
        warn("ssim: image smaller than the 7x7 window, using global statistics");
        for (Index i = 0; i < m * c; ++i) {
            acc += ssim_window(pa + i * h * w, pb + i * h * w, w, h, w);
            ++windows;
        }
    } else {
        for (Index i = 0; i < m * c; ++i) {
            const double* ca = pa + i * h * w;
            const double* cb = pb + i * h * w;
            for (Index y = 0; y + kWin <= h; ++y)
                for (Index x = 0; x + kWin <= w; ++x) {
                    acc += ssim_window(ca + y * w + x, cb + y * w + x, w, kWin, kWin);
                    ++windows;
                }
        }
    }
    return acc / double(windows);
}

double loss_gap(const ModelSpec& spec, const ParamVector& before, const ParamVector& after,
                const Tensor& x_tar, const std::vector<int>& y_tar, const Tensor& x_main,
                const std::vector<int>& y_main, LossGapMode mode) {
    require(!y_tar.empty() && !y_main.empty(), "loss_gap: empty probe set");

    if (mode == LossGapMode::ratio) {
        const double lt = mean_loss(spec, after, x_tar, y_tar);
        const double lm = mean_loss(spec, after, x_main, y_main);
        if (lt + lm == 0.0) {
            warn("loss_gap: both losses zero, returning 0");
            return 0.0;
        }
        return lt / (lt + lm);
    }

    const double dt =
        std::abs(mean_loss(spec, after, x_tar, y_tar) - mean_loss(spec, before, x_tar, y_tar));
    const double dm =
        std::abs(mean_loss(spec, after, x_main, y_main) - mean_loss(spec, before, x_main, y_main));
    if (dt + dm == 0.0) {
        warn("loss_gap: both deltas zero, returning 0");
        return 0.0;
    }
    return dt / (dt + dm);
}

InversionProbabilities inversion_probabilities(double n, double k, double N, double s,
                                               double effective_n) {
    require(n >= 2.0, "probabilities: need n >= 2");
    require(k >= 1.0, "probabilities: need k >= 1");
    const double clients = effective_n > 0.0 ? effective_n : N;
    require(clients >= 1.0, "probabilities: need at least one client");
    require(s >= 1.0 && s <= clients, "probabilities: need 1 <= |S| <= N");

    // log q = log((n-1)/n), the chance one draw misses the target sample.
    const double log_q = std::log1p(-1.0 / n);
    // log(1 - q^k), the chance a batch of k holds at least one target copy.
    const double log_hit = std::log(-std::expm1(k * log_q));
    // log of (1/n)·q^(k-1): one batch draws the target exactly once.
    const double log_one = -std::log(n) + (k - 1.0) * log_q;

    InversionProbabilities p;
    p.p_target = -std::expm1(k * clients * log_q);
    p.p_best = std::exp(log_one + (clients - 1.0) * k * log_q);
    p.p_best_agr = std::exp((clients - s) * log_hit + log_one + (s - 1.0) * k * log_q);
    return p;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size() && a.size() >= 2, "spearman: need two same-length series");
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * double(i + j) + 1.0; // average rank of the tie run
            for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    const double n = double(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double num = 0, da = 0, db = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    require(da > 0 && db > 0, "spearman: a series is constant");
    return num / std::sqrt(da * db);
}

} // namespace fedlab
