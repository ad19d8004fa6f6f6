#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "fewshot/kernels.hpp"

namespace fewshot::kernels::reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate)
{
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                const double av = trans_a ? a[p * m + i] : a[i * k + p];
                const double bv = trans_b ? b[j * k + p] : b[p * n + j];
                acc += av * bv;
            }
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
    }
}

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y)
{
    const int oh = g.out_height();
    const int ow = g.out_width();
    for (int o = 0; o < g.out_channels; ++o)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = bias ? bias[o] : 0.0;
                for (int c = 0; c < g.in_channels; ++c)
                    for (int ky = 0; ky < g.kernel; ++ky)
                        for (int kx = 0; kx < g.kernel; ++kx) {
                            const int iy = oy * g.stride - g.padding + ky * g.dilation;
                            const int ix = ox * g.stride - g.padding + kx * g.dilation;
                            if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width)
                                continue;
                            acc += w[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx] *
                                   x[(c * g.in_height + iy) * g.in_width + ix];
                        }
                y[(o * oh + oy) * ow + ox] = acc;
            }
}

void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dy, double* dx,
                     double* dw, double* db)
{
    const int oh = g.out_height();
    const int ow = g.out_width();
    for (int o = 0; o < g.out_channels; ++o)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const double gv = dy[(o * oh + oy) * ow + ox];
                if (db)
                    db[o] += gv;
                for (int c = 0; c < g.in_channels; ++c)
                    for (int ky = 0; ky < g.kernel; ++ky)
                        for (int kx = 0; kx < g.kernel; ++kx) {
                            const int iy = oy * g.stride - g.padding + ky * g.dilation;
                            const int ix = ox * g.stride - g.padding + kx * g.dilation;
                            if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width)
                                continue;
                            const int widx = ((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx;
                            const int xidx = (c * g.in_height + iy) * g.in_width + ix;
                            if (dw)
                                dw[widx] += gv * x[xidx];
                            if (dx)
                                dx[xidx] += gv * w[widx];
                        }
            }
}

namespace {

double source_coord(int o, int in, int out)
{
    return out > 1 ? o * static_cast<double>(in - 1) / (out - 1) : 0.0;
}

}  // namespace

void resize_bilinear_forward(int channels, int in_h, int in_w, int out_h, int out_w, const double* x, double* y)
{
    for (int c = 0; c < channels; ++c)
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                const double sy = source_coord(oy, in_h, out_h);
                const double sx = source_coord(ox, in_w, out_w);
                const int y0 = static_cast<int>(std::floor(sy));
                const int x0 = static_cast<int>(std::floor(sx));
                const int y1 = std::min(y0 + 1, in_h - 1);
                const int x1 = std::min(x0 + 1, in_w - 1);
                const double fy = sy - y0;
                const double fx = sx - x0;
                const double* p = x + c * in_h * in_w;
                y[(c * out_h + oy) * out_w + ox] = p[y0 * in_w + x0] * (1 - fy) * (1 - fx) +
                                                   p[y0 * in_w + x1] * (1 - fy) * fx +
                                                   p[y1 * in_w + x0] * fy * (1 - fx) + p[y1 * in_w + x1] * fy * fx;
            }
}

void resize_bilinear_backward(int channels, int in_h, int in_w, int out_h, int out_w, const double* dy, double* dx)
{
    for (int c = 0; c < channels; ++c)
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                const double sy = source_coord(oy, in_h, out_h);
                const double sx = source_coord(ox, in_w, out_w);
                const int y0 = static_cast<int>(std::floor(sy));
                const int x0 = static_cast<int>(std::floor(sx));
                const int y1 = std::min(y0 + 1, in_h - 1);
                const int x1 = std::min(x0 + 1, in_w - 1);
                const double fy = sy - y0;
                const double fx = sx - x0;
                const double gv = dy[(c * out_h + oy) * out_w + ox];
                double* p = dx + c * in_h * in_w;
                p[y0 * in_w + x0] += gv * (1 - fy) * (1 - fx);
                p[y0 * in_w + x1] += gv * (1 - fy) * fx;
                p[y1 * in_w + x0] += gv * fy * (1 - fx);
                p[y1 * in_w + x1] += gv * fy * fx;
            }
}

void softmax_columns(int rows, int cols, const double* x, double* y)
{
    for (int j = 0; j < cols; ++j) {
        double mx = -INFINITY;
        for (int i = 0; i < rows; ++i)
            mx = std::max(mx, x[i * cols + j]);
        double total = 0.0;
        for (int i = 0; i < rows; ++i)
            total += std::exp(x[i * cols + j] - mx);
        for (int i = 0; i < rows; ++i)
            y[i * cols + j] = std::exp(x[i * cols + j] - mx) / total;
    }
}

void softmax_columns_backward(int rows, int cols, const double* y, const double* dy, double* dx)
{
    // Full Jacobian per column: d y_i / d x_l = y_i (delta_il - y_l).
    for (int j = 0; j < cols; ++j)
        for (int l = 0; l < rows; ++l) {
            double acc = 0.0;
            for (int i = 0; i < rows; ++i) {
                const double jac = y[i * cols + j] * ((i == l ? 1.0 : 0.0) - y[l * cols + j]);
                acc += dy[i * cols + j] * jac;
            }
            dx[l * cols + j] += acc;
        }
}

}  // namespace fewshot::kernels::reference
