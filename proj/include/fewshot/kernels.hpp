#pragma once

// Dense numeric kernels. The functions in `fewshot::kernels` are the
// OpenMP-parallel versions used by the autograd ops; `kernels::reference`
// holds plain serial loops with the same contracts, kept for tests and
// for the benchmark target.
//
// Every parallel kernel partitions its *outputs* across threads, so each
// output element is produced by exactly one thread in a fixed order and the
// results are independent of the thread count.

namespace fewshot::kernels {

struct ConvGeometry {
    int in_channels = 1;
    int in_height = 1;
    int in_width = 1;
    int out_channels = 1;
    int kernel = 1;
    int stride = 1;
    int padding = 0;
    int dilation = 1;

    int out_height() const { return (in_height + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1; }
    int out_width() const { return (in_width + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1; }
    bool is_pointwise() const { return kernel == 1 && stride == 1 && padding == 0; }
};

/// Row-major C(m×n) = op(A)·op(B), or C += op(A)·op(B) when `accumulate`.
/// op(A) is m×k; stored as k×m when `trans_a`. op(B) is k×n; stored n×k when `trans_b`.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate = false);

/// x: (in_channels, in_height, in_width); w: (out_channels, in_channels, kernel, kernel);
/// bias may be null; y: (out_channels, out_height, out_width).
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y);

/// Accumulates into dx / dw / db; any of them may be null to skip that gradient.
void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dy, double* dx,
                     double* dw, double* db);

/// Bilinear resampling with aligned corners, per channel.
void resize_bilinear_forward(int channels, int in_h, int in_w, int out_h, int out_w, const double* x, double* y);
void resize_bilinear_backward(int channels, int in_h, int in_w, int out_h, int out_w, const double* dy,
                              double* dx);

/// Softmax over each column of a rows×cols matrix (normalizes along the row axis).
void softmax_columns(int rows, int cols, const double* x, double* y);
void softmax_columns_backward(int rows, int cols, const double* y, const double* dy, double* dx);

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate = false);
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y);
void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dy, double* dx,
                     double* dw, double* db);
void resize_bilinear_forward(int channels, int in_h, int in_w, int out_h, int out_w, const double* x, double* y);
void resize_bilinear_backward(int channels, int in_h, int in_w, int out_h, int out_w, const double* dy,
                              double* dx);
void softmax_columns(int rows, int cols, const double* x, double* y);
void softmax_columns_backward(int rows, int cols, const double* y, const double* dy, double* dx);

}  // namespace reference

/// Threads available to the parallel kernels (omp_get_max_threads, or 1 without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace fewshot::kernels
