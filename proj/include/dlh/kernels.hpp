#pragma once

#include <span>

// Dense numeric kernels behind the autodiff ops. Every kernel has an
// OpenMP-parallel version (used by the model) and a plain serial version in
// `reference` that tests and the benchmark compare against.
namespace dlh::kernels {

struct ConvShape {
  int batch = 1;
  int in_channels = 1;
  int in_h = 1, in_w = 1;
  int out_channels = 1;
  int kernel = 4, stride = 2, pad = 1;

  int conv_out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int conv_out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int deconv_out_h() const { return (in_h - 1) * stride - 2 * pad + kernel; }
  int deconv_out_w() const { return (in_w - 1) * stride - 2 * pad + kernel; }
};

// c[m,n] = op(a) * op(b) (+ c when accumulate). op(a) is a[m,k], or a^T when
// trans_a and a is stored [k,m]; likewise b is [k,n] or stored [n,k].
void gemm(bool trans_a, bool trans_b, int m, int n, int k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);

void im2col(std::span<const double> img, int channels, int h, int w, int kernel, int stride,
            int pad, std::span<double> cols);
// Accumulates columns back into img (img is not cleared).
void col2im(std::span<const double> cols, int channels, int h, int w, int kernel, int stride,
            int pad, std::span<double> img);

// input [N,C,H,W], weight [O,C,k,k], bias [O] -> out [N,O,Ho,Wo]
void conv2d(const ConvShape& s, std::span<const double> input, std::span<const double> weight,
            std::span<const double> bias, std::span<double> out);
// Gradients are accumulated into the given buffers; empty spans are skipped.
void conv2d_backward(const ConvShape& s, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_out,
                     std::span<double> grad_input, std::span<double> grad_weight,
                     std::span<double> grad_bias);

// input [N,C,H,W], weight [C,O,k,k], bias [O] -> out [N,O,Ho,Wo]
void conv_transpose2d(const ConvShape& s, std::span<const double> input,
                      std::span<const double> weight, std::span<const double> bias,
                      std::span<double> out);
void conv_transpose2d_backward(const ConvShape& s, std::span<const double> input,
                               std::span<const double> weight, std::span<const double> grad_out,
                               std::span<double> grad_input, std::span<double> grad_weight,
                               std::span<double> grad_bias);

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);
// Direct nested-loop convolutions.
void conv2d(const ConvShape& s, std::span<const double> input, std::span<const double> weight,
            std::span<const double> bias, std::span<double> out);
void conv_transpose2d(const ConvShape& s, std::span<const double> input,
                      std::span<const double> weight, std::span<const double> bias,
                      std::span<double> out);

}  // namespace reference

}  // namespace dlh::kernels
