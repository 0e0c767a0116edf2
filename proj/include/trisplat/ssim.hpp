#pragma once

#include <array>

#include "trisplat/image.hpp"

namespace ts {

// SSIM with the standard 11x11 gaussian window (sigma 1.5), K1=0.01,
// K2=0.03, dynamic range 1. The map is evaluated where the full window fits
// and averaged over that region and the three channels.
namespace ssim_detail {

inline constexpr int kWin = 11;
inline constexpr int kRad = 5;
inline constexpr double kC1 = 0.01 * 0.01;
inline constexpr double kC2 = 0.03 * 0.03;

inline const std::array<double, kWin>& kernel() {
    static const std::array<double, kWin> k = [] {
        std::array<double, kWin> v{};
        double sum = 0;
        for (int i = 0; i < kWin; ++i) {
            double d = i - kRad;
            v[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += v[i];
        }
        for (auto& x : v) x /= sum;
        return v;
    }();
    return k;
}

// separable filter; out is only valid in [rad, W-rad) x [rad, H-rad)
inline ImageF filter(const ImageF& in) {
    const auto& k = kernel();
    int w = in.width(), h = in.height();
    ImageF tmp(w, h, 0.0), out(w, h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = kRad; x < w - kRad; ++x) {
            double s = 0;
            for (int i = 0; i < kWin; ++i) s += k[i] * in.at(x - kRad + i, y);
            tmp.at(x, y) = s;
        }
    for (int y = kRad; y < h - kRad; ++y)
        for (int x = kRad; x < w - kRad; ++x) {
            double s = 0;
            for (int i = 0; i < kWin; ++i) s += k[i] * tmp.at(x, y - kRad + i);
            out.at(x, y) = s;
        }
    return out;
}

// adjoint of filter: spread a valid-region map back through the symmetric
// kernel (equals convolving the zero-padded map with the same kernel, but
// with the output extending over the whole image)
inline ImageF filter_adjoint(const ImageF& in) {
    const auto& k = kernel();
    int w = in.width(), h = in.height();
    ImageF tmp(w, h, 0.0), out(w, h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int i = 0; i < kWin; ++i) {
                int yy = y - kRad + i;
                if (yy < 0 || yy >= h) continue;
                s += k[i] * in.at(x, yy);
            }
            tmp.at(x, y) = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int i = 0; i < kWin; ++i) {
                int xx = x - kRad + i;
                if (xx < 0 || xx >= w) continue;
                s += k[i] * tmp.at(xx, y);
            }
            out.at(x, y) = s;
        }
    return out;
}

}  // namespace ssim_detail

struct SsimResult {
    double value = 0;  // mean SSIM over valid pixels and channels
    int valid_pixels = 0;
};

inline SsimResult ssim(const ImageV3& a, const ImageV3& b) {
    using namespace ssim_detail;
    int w = a.width(), h = a.height();
    if (w < kWin || h < kWin) return {1.0, 0};
    SsimResult r;
    double total = 0;
    for (int ch = 0; ch < 3; ++ch) {
        ImageF x(w, h), y(w, h), xx(w, h), yy(w, h), xy(w, h);
        for (size_t i = 0; i < x.size(); ++i) {
            double xv = a[i][ch], yv = b[i][ch];
            x[i] = xv;
            y[i] = yv;
            xx[i] = xv * xv;
            yy[i] = yv * yv;
            xy[i] = xv * yv;
        }
        ImageF mx = filter(x), my = filter(y), exx = filter(xx), eyy = filter(yy),
               exy = filter(xy);
        for (int py = kRad; py < h - kRad; ++py)
            for (int px = kRad; px < w - kRad; ++px) {
                double mux = mx.at(px, py), muy = my.at(px, py);
                double sx = exx.at(px, py) - mux * mux;
                double sy = eyy.at(px, py) - muy * muy;
                double sxy = exy.at(px, py) - mux * muy;
                double a1 = 2 * mux * muy + kC1, a2 = 2 * sxy + kC2;
                double b1 = mux * mux + muy * muy + kC1, b2 = sx + sy + kC2;
                total += (a1 * a2) / (b1 * b2);
            }
    }
    r.valid_pixels = (w - 2 * kRad) * (h - 2 * kRad);
    r.value = total / (3.0 * r.valid_pixels);
    return r;
}

// d(mean SSIM)/d(a), the first image. upstream scales the whole map.
inline ImageV3 ssim_backward(const ImageV3& a, const ImageV3& b, double upstream) {
    using namespace ssim_detail;
    int w = a.width(), h = a.height();
    ImageV3 grad(w, h, Vec3{0, 0, 0});
    if (w < kWin || h < kWin) return grad;
    double scale = upstream / (3.0 * (w - 2 * kRad) * (h - 2 * kRad));
    for (int ch = 0; ch < 3; ++ch) {
        ImageF x(w, h), y(w, h), xx(w, h), yy(w, h), xy(w, h);
        for (size_t i = 0; i < x.size(); ++i) {
            double xv = a[i][ch], yv = b[i][ch];
            x[i] = xv;
            y[i] = yv;
            xx[i] = xv * xv;
            yy[i] = yv * yv;
            xy[i] = xv * yv;
        }
        ImageF mx = filter(x), my = filter(y), exx = filter(xx), eyy = filter(yy),
               exy = filter(xy);
        ImageF g_mu(w, h, 0.0), g_exx(w, h, 0.0), g_exy(w, h, 0.0);
        for (int py = kRad; py < h - kRad; ++py)
            for (int px = kRad; px < w - kRad; ++px) {
                double mux = mx.at(px, py), muy = my.at(px, py);
                double sx = exx.at(px, py) - mux * mux;
                double sy = eyy.at(px, py) - muy * muy;
                double sxy = exy.at(px, py) - mux * muy;
                double a1 = 2 * mux * muy + kC1, a2 = 2 * sxy + kC2;
                double b1 = mux * mux + muy * muy + kC1, b2 = sx + sy + kC2;
                double denom = b1 * b2;
                double dA1 = scale * a2 / denom;
                double dA2 = scale * a1 / denom;
                double dB1 = -scale * a1 * a2 / (b1 * denom);
                double dB2 = -scale * a1 * a2 / (b2 * denom);
                double dsxy = 2 * dA2;
                double dsx = dB2;
                g_mu.at(px, py) = dA1 * 2 * muy + dB1 * 2 * mux - dsx * 2 * mux - dsxy * muy;
                g_exx.at(px, py) = dsx;
                g_exy.at(px, py) = dsxy;
            }
        ImageF s_mu = filter_adjoint(g_mu), s_exx = filter_adjoint(g_exx),
               s_exy = filter_adjoint(g_exy);
        for (size_t i = 0; i < x.size(); ++i)
            grad[i][ch] = s_mu[i] + 2.0 * x[i] * s_exx[i] + y[i] * s_exy[i];
    }
    return grad;
}

}  // namespace ts
