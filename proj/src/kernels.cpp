#include "fewshot/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <omp.h>

namespace fewshot::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1L << 15;

void im2col(const ConvGeometry& g, const double* x, double* col)
{
    const int oh = g.out_height();
    const int ow = g.out_width();
    const int kk = g.kernel * g.kernel;
    const long rows = static_cast<long>(g.in_channels) * kk;
#pragma omp parallel for schedule(static) if (rows * oh * ow > kParallelWork)
    for (long r = 0; r < rows; ++r) {
        const int c = static_cast<int>(r / kk);
        const int ky = static_cast<int>(r % kk) / g.kernel;
        const int kx = static_cast<int>(r % kk) % g.kernel;
        double* out = col + r * oh * ow;
        const double* plane = x + static_cast<std::size_t>(c) * g.in_height * g.in_width;
        for (int y = 0; y < oh; ++y) {
            const int iy = y * g.stride - g.padding + ky * g.dilation;
            for (int xo = 0; xo < ow; ++xo) {
                const int ix = xo * g.stride - g.padding + kx * g.dilation;
                const bool inside = iy >= 0 && iy < g.in_height && ix >= 0 && ix < g.in_width;
                out[y * ow + xo] = inside ? plane[iy * g.in_width + ix] : 0.0;
            }
        }
    }
}

// Each input plane is owned by one thread; rows of the column buffer that
// belong to a channel are folded back in a fixed order.
void col2im_accumulate(const ConvGeometry& g, const double* col, double* dx)
{
    const int oh = g.out_height();
    const int ow = g.out_width();
    const int kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static) if (static_cast<long>(g.in_channels) * kk * oh * ow > kParallelWork)
    for (int c = 0; c < g.in_channels; ++c) {
        double* plane = dx + static_cast<std::size_t>(c) * g.in_height * g.in_width;
        for (int k = 0; k < kk; ++k) {
            const int ky = k / g.kernel;
            const int kx = k % g.kernel;
            const double* in = col + (static_cast<std::size_t>(c) * kk + k) * oh * ow;
            for (int y = 0; y < oh; ++y) {
                const int iy = y * g.stride - g.padding + ky * g.dilation;
                if (iy < 0 || iy >= g.in_height)
                    continue;
                for (int xo = 0; xo < ow; ++xo) {
                    const int ix = xo * g.stride - g.padding + kx * g.dilation;
                    if (ix >= 0 && ix < g.in_width)
                        plane[iy * g.in_width + ix] += in[y * ow + xo];
                }
            }
        }
    }
}

}  // namespace

int max_threads()
{
    return omp_get_max_threads();
}

void set_threads(int n)
{
    omp_set_num_threads(std::max(1, n));
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate)
{
    const long work = static_cast<long>(m) * n * k;
    if (!trans_b) {
#pragma omp parallel for schedule(static) if (work > kParallelWork)
        for (int i = 0; i < m; ++i) {
            double* crow = c + static_cast<std::size_t>(i) * n;
            if (!accumulate)
                std::fill(crow, crow + n, 0.0);
            for (int p = 0; p < k; ++p) {
                const double av = trans_a ? a[static_cast<std::size_t>(p) * m + i] : a[static_cast<std::size_t>(i) * k + p];
                if (av == 0.0)
                    continue;
                const double* brow = b + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j)
                    crow[j] += av * brow[j];
            }
        }
        return;
    }
    // B stored n×k: each output is a dot product of contiguous rows.
    std::vector<double> a_packed;
    const double* arows = a;
    if (trans_a) {
        a_packed.resize(static_cast<std::size_t>(m) * k);
        for (int p = 0; p < k; ++p)
            for (int i = 0; i < m; ++i)
                a_packed[static_cast<std::size_t>(i) * k + p] = a[static_cast<std::size_t>(p) * m + i];
        arows = a_packed.data();
    }
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (int i = 0; i < m; ++i) {
        const double* arow = arows + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y)
{
    const int spatial = g.out_height() * g.out_width();
    const int patch = g.in_channels * g.kernel * g.kernel;
    if (g.is_pointwise()) {
        gemm(false, false, g.out_channels, spatial, patch, w, x, y);
    } else {
        std::vector<double> col(static_cast<std::size_t>(patch) * spatial);
        im2col(g, x, col.data());
        gemm(false, false, g.out_channels, spatial, patch, w, col.data(), y);
    }
    if (bias) {
        for (int o = 0; o < g.out_channels; ++o) {
            double* row = y + static_cast<std::size_t>(o) * spatial;
            for (int s = 0; s < spatial; ++s)
                row[s] += bias[o];
        }
    }
}

void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dy, double* dx,
                     double* dw, double* db)
{
    const int spatial = g.out_height() * g.out_width();
    const int patch = g.in_channels * g.kernel * g.kernel;
    if (db) {
        for (int o = 0; o < g.out_channels; ++o) {
            const double* row = dy + static_cast<std::size_t>(o) * spatial;
            double acc = 0.0;
            for (int s = 0; s < spatial; ++s)
                acc += row[s];
            db[o] += acc;
        }
    }
    if (g.is_pointwise()) {
        if (dw)
            gemm(false, true, g.out_channels, patch, spatial, dy, x, dw, true);
        if (dx)
            gemm(true, false, patch, spatial, g.out_channels, w, dy, dx, true);
        return;
    }
    if (dw) {
        std::vector<double> col(static_cast<std::size_t>(patch) * spatial);
        im2col(g, x, col.data());
        gemm(false, true, g.out_channels, patch, spatial, dy, col.data(), dw, true);
    }
    if (dx) {
        std::vector<double> dcol(static_cast<std::size_t>(patch) * spatial);
        gemm(true, false, patch, spatial, g.out_channels, w, dy, dcol.data());
        col2im_accumulate(g, dcol.data(), dx);
    }
}

namespace {

struct Tap {
    int i0;
    int i1;
    double t;
};

std::vector<Tap> bilinear_taps(int in, int out)
{
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double scale = out > 1 ? static_cast<double>(in - 1) / (out - 1) : 0.0;
    for (int o = 0; o < out; ++o) {
        const double src = o * scale;
        int i0 = static_cast<int>(std::floor(src));
        i0 = std::clamp(i0, 0, in - 1);
        const int i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
    }
    return taps;
}

}  // namespace

void resize_bilinear_forward(int channels, int in_h, int in_w, int out_h, int out_w, const double* x, double* y)
{
    const auto ty = bilinear_taps(in_h, out_h);
    const auto tx = bilinear_taps(in_w, out_w);
    const long rows = static_cast<long>(channels) * out_h;
#pragma omp parallel for schedule(static) if (rows * out_w > kParallelWork)
    for (long r = 0; r < rows; ++r) {
        const int c = static_cast<int>(r / out_h);
        const int oy = static_cast<int>(r % out_h);
        const double* plane = x + static_cast<std::size_t>(c) * in_h * in_w;
        const Tap& vy = ty[static_cast<std::size_t>(oy)];
        double* out = y + static_cast<std::size_t>(r) * out_w;
        for (int ox = 0; ox < out_w; ++ox) {
            const Tap& vx = tx[static_cast<std::size_t>(ox)];
            const double top = plane[vy.i0 * in_w + vx.i0] * (1.0 - vx.t) + plane[vy.i0 * in_w + vx.i1] * vx.t;
            const double bot = plane[vy.i1 * in_w + vx.i0] * (1.0 - vx.t) + plane[vy.i1 * in_w + vx.i1] * vx.t;
            out[ox] = top * (1.0 - vy.t) + bot * vy.t;
        }
    }
}

void resize_bilinear_backward(int channels, int in_h, int in_w, int out_h, int out_w, const double* dy, double* dx)
{
    const auto ty = bilinear_taps(in_h, out_h);
    const auto tx = bilinear_taps(in_w, out_w);
#pragma omp parallel for schedule(static) if (static_cast<long>(channels) * out_h * out_w > kParallelWork)
    for (int c = 0; c < channels; ++c) {
        double* plane = dx + static_cast<std::size_t>(c) * in_h * in_w;
        const double* grad = dy + static_cast<std::size_t>(c) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const Tap& vy = ty[static_cast<std::size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                const Tap& vx = tx[static_cast<std::size_t>(ox)];
                const double gv = grad[oy * out_w + ox];
                plane[vy.i0 * in_w + vx.i0] += gv * (1.0 - vy.t) * (1.0 - vx.t);
                plane[vy.i0 * in_w + vx.i1] += gv * (1.0 - vy.t) * vx.t;
                plane[vy.i1 * in_w + vx.i0] += gv * vy.t * (1.0 - vx.t);
                plane[vy.i1 * in_w + vx.i1] += gv * vy.t * vx.t;
            }
        }
    }
}

void softmax_columns(int rows, int cols, const double* x, double* y)
{
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols > kParallelWork)
    for (int j = 0; j < cols; ++j) {
        double mx = x[j];
        for (int i = 1; i < rows; ++i)
            mx = std::max(mx, x[static_cast<std::size_t>(i) * cols + j]);
        double total = 0.0;
        for (int i = 0; i < rows; ++i) {
            const double e = std::exp(x[static_cast<std::size_t>(i) * cols + j] - mx);
            y[static_cast<std::size_t>(i) * cols + j] = e;
            total += e;
        }
        const double inv = 1.0 / total;
        for (int i = 0; i < rows; ++i)
            y[static_cast<std::size_t>(i) * cols + j] *= inv;
    }
}

void softmax_columns_backward(int rows, int cols, const double* y, const double* dy, double* dx)
{
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols > kParallelWork)
    for (int j = 0; j < cols; ++j) {
        double dot = 0.0;
        for (int i = 0; i < rows; ++i) {
            const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
            dot += y[idx] * dy[idx];
        }
        for (int i = 0; i < rows; ++i) {
            const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
            dx[idx] += y[idx] * (dy[idx] - dot);
        }
    }
}

}  // namespace fewshot::kernels
