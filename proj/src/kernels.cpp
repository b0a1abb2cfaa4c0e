#include "dlh/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <memory>
#include <vector>

#include "dlh/error.hpp"

namespace dlh::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1L << 15;

using Index = std::ptrdiff_t;

// Uninitialised scratch memory; every user overwrites it fully.
class Buffer {
 public:
  explicit Buffer(std::size_t n) : data_(std::make_unique_for_overwrite<double[]>(n)), size_(n) {}
  double* data() { return data_.get(); }
  const double* data() const { return data_.get(); }
  double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }
  operator std::span<double>() { return {data_.get(), size_}; }
  operator std::span<const double>() const { return {data_.get(), size_}; }

 private:
  std::unique_ptr<double[]> data_;
  std::size_t size_;
};

// Output columns ox with 0 <= ox*stride - pad + kj < w, as [lo, hi).
inline void valid_range(int out, int in, int stride, int pad, int kk, int& lo, int& hi) {
  lo = 0;
  while (lo < out && lo * stride - pad + kk < 0) ++lo;
  hi = out;
  while (hi > lo && (hi - 1) * stride - pad + kk >= in) --hi;
}

void im2col_ld(const double* img, int channels, int h, int w, int kernel, int stride, int pad,
               double* cols, Index ld, Index col0) {
  const int oh = (h + 2 * pad - kernel) / stride + 1;
  const int ow = (w + 2 * pad - kernel) / stride + 1;
  const int rows = channels * kernel * kernel;
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * oh * ow > kParallelWork)
  for (int r = 0; r < rows; ++r) {
    const int c = r / (kernel * kernel);
    const int ki = (r / kernel) % kernel;
    const int kj = r % kernel;
    double* dst = cols + r * ld + col0;
    const double* src = img + static_cast<Index>(c) * h * w;
    int x0, x1;
    valid_range(ow, w, stride, pad, kj, x0, x1);
    for (int oy = 0; oy < oh; ++oy) {
      const int iy = oy * stride - pad + ki;
      double* d = dst + oy * ow;
      if (iy < 0 || iy >= h) {
        std::fill_n(d, ow, 0.0);
        continue;
      }
      const double* srow = src + iy * w - pad + kj;
      std::fill_n(d, x0, 0.0);
      for (int ox = x0; ox < x1; ++ox) d[ox] = srow[ox * stride];
      std::fill(d + x1, d + ow, 0.0);
    }
  }
}

// Parallel over channels: rows of different channels never touch the same pixel.
void col2im_ld(const double* cols, int channels, int h, int w, int kernel, int stride, int pad,
               double* img, Index ld, Index col0) {
  const int oh = (h + 2 * pad - kernel) / stride + 1;
  const int ow = (w + 2 * pad - kernel) / stride + 1;
#pragma omp parallel for schedule(static) if (static_cast<long>(channels) * kernel * kernel * oh * ow > kParallelWork)
  for (int c = 0; c < channels; ++c) {
    double* dst = img + static_cast<Index>(c) * h * w;
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        const double* src = cols + ((c * kernel + ki) * kernel + kj) * ld + col0;
        int x0, x1;
        valid_range(ow, w, stride, pad, kj, x0, x1);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          double* drow = dst + iy * w - pad + kj;
          const double* srow = src + oy * ow;
          for (int ox = x0; ox < x1; ++ox) drow[ox * stride] += srow[ox];
        }
      }
    }
  }
}

// [N, C, S] -> [C, N*S]
void to_channel_major(const double* in, int n, int c, Index s, double* out) {
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      std::copy_n(in + (static_cast<Index>(b) * c + ch) * s, s, out + ch * (n * s) + b * s);
}

// [C, N*S] -> [N, C, S], accumulating
void from_channel_major_add(const double* in, int n, int c, Index s, double* out) {
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double* src = in + ch * (n * s) + b * s;
      double* dst = out + (static_cast<Index>(b) * c + ch) * s;
      for (Index i = 0; i < s; ++i) dst[i] += src[i];
    }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  require(a.size() >= static_cast<std::size_t>(m) * k && b.size() >= static_cast<std::size_t>(k) * n &&
              c.size() >= static_cast<std::size_t>(m) * n,
          "gemm: buffer too small");
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const long work = static_cast<long>(m) * n * k;
  if (!accumulate) std::fill_n(C, static_cast<Index>(m) * n, 0.0);
  if (!trans_b) {
    // Row i of C accumulates a[i,p] * row p of B; four rows of B per pass to
    // cut the load/store traffic on C.
    auto a_at = [&](int i, int p) {
      return trans_a ? A[static_cast<Index>(p) * m + i] : A[static_cast<Index>(i) * k + p];
    };
#pragma omp parallel for schedule(static) if (work > kParallelWork && m > 1)
    for (int i = 0; i < m; ++i) {
      double* ci = C + static_cast<Index>(i) * n;
      int p = 0;
      for (; p + 4 <= k; p += 4) {
        const double a0 = a_at(i, p), a1 = a_at(i, p + 1), a2 = a_at(i, p + 2), a3 = a_at(i, p + 3);
        const double* b0 = B + static_cast<Index>(p) * n;
        const double* b1 = b0 + n;
        const double* b2 = b1 + n;
        const double* b3 = b2 + n;
#pragma omp simd
        for (int j = 0; j < n; ++j) ci[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
      }
      for (; p < k; ++p) {
        const double aip = a_at(i, p);
        const double* bp = B + static_cast<Index>(p) * n;
#pragma omp simd
        for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  } else if (!trans_a) {
    // Dot products of contiguous rows.
#pragma omp parallel for schedule(static) if (work > kParallelWork && m > 1)
    for (int i = 0; i < m; ++i) {
      const double* ai = A + static_cast<Index>(i) * k;
      double* ci = C + static_cast<Index>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* bj = B + static_cast<Index>(j) * k;
        double s = 0.0;
#pragma omp simd reduction(+ : s)
        for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] += s;
      }
    }
  } else {
#pragma omp parallel for schedule(static) if (work > kParallelWork && m > 1)
    for (int i = 0; i < m; ++i) {
      double* ci = C + static_cast<Index>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* bj = B + static_cast<Index>(j) * k;
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += A[static_cast<Index>(p) * m + i] * bj[p];
        ci[j] += s;
      }
    }
  }
}

void im2col(std::span<const double> img, int channels, int h, int w, int kernel, int stride,
            int pad, std::span<double> cols) {
  const int oh = (h + 2 * pad - kernel) / stride + 1;
  const int ow = (w + 2 * pad - kernel) / stride + 1;
  require(cols.size() >= static_cast<std::size_t>(channels) * kernel * kernel * oh * ow,
          "im2col: buffer too small");
  im2col_ld(img.data(), channels, h, w, kernel, stride, pad, cols.data(),
            static_cast<Index>(oh) * ow, 0);
}

void col2im(std::span<const double> cols, int channels, int h, int w, int kernel, int stride,
            int pad, std::span<double> img) {
  const int oh = (h + 2 * pad - kernel) / stride + 1;
  const int ow = (w + 2 * pad - kernel) / stride + 1;
  col2im_ld(cols.data(), channels, h, w, kernel, stride, pad, img.data(),
            static_cast<Index>(oh) * ow, 0);
}

void conv2d(const ConvShape& s, std::span<const double> input, std::span<const double> weight,
            std::span<const double> bias, std::span<double> out) {
  const int oh = s.conv_out_h(), ow = s.conv_out_w();
  const Index spatial = static_cast<Index>(oh) * ow;
  const Index ld = s.batch * spatial;
  const int ckk = s.in_channels * s.kernel * s.kernel;
  const Index in_img = static_cast<Index>(s.in_channels) * s.in_h * s.in_w;
  Buffer cols(static_cast<std::size_t>(ckk) * ld);
  for (int b = 0; b < s.batch; ++b)
    im2col_ld(input.data() + b * in_img, s.in_channels, s.in_h, s.in_w, s.kernel, s.stride,
              s.pad, cols.data(), ld, b * spatial);
  Buffer prod(static_cast<std::size_t>(s.out_channels) * ld);
  gemm(false, false, s.out_channels, static_cast<int>(ld), ckk, weight, cols, prod, false);
  for (int b = 0; b < s.batch; ++b)
    for (int o = 0; o < s.out_channels; ++o) {
      const double bo = bias.empty() ? 0.0 : bias[o];
      const double* src = prod.data() + o * ld + b * spatial;
      double* dst = out.data() + (static_cast<Index>(b) * s.out_channels + o) * spatial;
      for (Index i = 0; i < spatial; ++i) dst[i] = src[i] + bo;
    }
}

void conv2d_backward(const ConvShape& s, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_out,
                     std::span<double> grad_input, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
  const int oh = s.conv_out_h(), ow = s.conv_out_w();
  const Index spatial = static_cast<Index>(oh) * ow;
  const Index ld = s.batch * spatial;
  const int ckk = s.in_channels * s.kernel * s.kernel;
  const Index in_img = static_cast<Index>(s.in_channels) * s.in_h * s.in_w;

  Buffer gout(static_cast<std::size_t>(s.out_channels) * ld);
  to_channel_major(grad_out.data(), s.batch, s.out_channels, spatial, gout.data());
  if (!grad_bias.empty())
    for (int o = 0; o < s.out_channels; ++o) {
      double acc = 0.0;
      for (Index i = 0; i < ld; ++i) acc += gout[o * ld + i];
      grad_bias[o] += acc;
    }
  if (!grad_weight.empty()) {
    Buffer cols(static_cast<std::size_t>(ckk) * ld);
    for (int b = 0; b < s.batch; ++b)
      im2col_ld(input.data() + b * in_img, s.in_channels, s.in_h, s.in_w, s.kernel, s.stride,
                s.pad, cols.data(), ld, b * spatial);
    gemm(false, true, s.out_channels, ckk, static_cast<int>(ld), gout, cols, grad_weight, true);
  }
  if (!grad_input.empty()) {
    Buffer dcols(static_cast<std::size_t>(ckk) * ld);
    gemm(true, false, ckk, static_cast<int>(ld), s.out_channels, weight, gout, dcols, false);
    for (int b = 0; b < s.batch; ++b)
      col2im_ld(dcols.data(), s.in_channels, s.in_h, s.in_w, s.kernel, s.stride, s.pad,
                grad_input.data() + b * in_img, ld, b * spatial);
  }
}

void conv_transpose2d(const ConvShape& s, std::span<const double> input,
                      std::span<const double> weight, std::span<const double> bias,
                      std::span<double> out) {
  const int oh = s.deconv_out_h(), ow = s.deconv_out_w();
  const Index in_spatial = static_cast<Index>(s.in_h) * s.in_w;
  const Index ld = s.batch * in_spatial;
  const int okk = s.out_channels * s.kernel * s.kernel;
  const Index out_img = static_cast<Index>(s.out_channels) * oh * ow;

  Buffer x(static_cast<std::size_t>(s.in_channels) * ld);
  to_channel_major(input.data(), s.batch, s.in_channels, in_spatial, x.data());
  Buffer cols(static_cast<std::size_t>(okk) * ld);
  gemm(true, false, okk, static_cast<int>(ld), s.in_channels, weight, x, cols, false);
  std::fill(out.begin(), out.begin() + s.batch * out_img, 0.0);
  for (int b = 0; b < s.batch; ++b) {
    col2im_ld(cols.data(), s.out_channels, oh, ow, s.kernel, s.stride, s.pad,
              out.data() + b * out_img, ld, b * in_spatial);
    if (!bias.empty())
      for (int o = 0; o < s.out_channels; ++o) {
        double* dst = out.data() + b * out_img + static_cast<Index>(o) * oh * ow;
        for (Index i = 0; i < static_cast<Index>(oh) * ow; ++i) dst[i] += bias[o];
      }
  }
}

void conv_transpose2d_backward(const ConvShape& s, std::span<const double> input,
                               std::span<const double> weight, std::span<const double> grad_out,
                               std::span<double> grad_input, std::span<double> grad_weight,
                               std::span<double> grad_bias) {
  const int oh = s.deconv_out_h(), ow = s.deconv_out_w();
  const Index in_spatial = static_cast<Index>(s.in_h) * s.in_w;
  const Index ld = s.batch * in_spatial;
  const int okk = s.out_channels * s.kernel * s.kernel;
  const Index out_img = static_cast<Index>(s.out_channels) * oh * ow;

  if (!grad_bias.empty())
    for (int b = 0; b < s.batch; ++b)
      for (int o = 0; o < s.out_channels; ++o) {
        const double* src = grad_out.data() + b * out_img + static_cast<Index>(o) * oh * ow;
        double acc = 0.0;
        for (Index i = 0; i < static_cast<Index>(oh) * ow; ++i) acc += src[i];
        grad_bias[o] += acc;
      }
  if (grad_input.empty() && grad_weight.empty()) return;

  Buffer dcols(static_cast<std::size_t>(okk) * ld);
  for (int b = 0; b < s.batch; ++b)
    im2col_ld(grad_out.data() + b * out_img, s.out_channels, oh, ow, s.kernel, s.stride, s.pad,
              dcols.data(), ld, b * in_spatial);
  if (!grad_input.empty()) {
    Buffer dx(static_cast<std::size_t>(s.in_channels) * ld);
    gemm(false, false, s.in_channels, static_cast<int>(ld), okk, weight, dcols, dx, false);
    from_channel_major_add(dx.data(), s.batch, s.in_channels, in_spatial, grad_input.data());
  }
  if (!grad_weight.empty()) {
    Buffer x(static_cast<std::size_t>(s.in_channels) * ld);
    to_channel_major(input.data(), s.batch, s.in_channels, in_spatial, x.data());
    gemm(false, true, s.in_channels, okk, static_cast<int>(ld), x, dcols, grad_weight, true);
  }
}

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = trans_a ? a[static_cast<std::size_t>(p) * m + i] : a[static_cast<std::size_t>(i) * k + p];
        const double bv = trans_b ? b[static_cast<std::size_t>(j) * k + p] : b[static_cast<std::size_t>(p) * n + j];
        s += av * bv;
      }
      double& dst = c[static_cast<std::size_t>(i) * n + j];
      dst = accumulate ? dst + s : s;
    }
}

void conv2d(const ConvShape& s, std::span<const double> input, std::span<const double> weight,
            std::span<const double> bias, std::span<double> out) {
  const int oh = s.conv_out_h(), ow = s.conv_out_w();
  for (int b = 0; b < s.batch; ++b)
    for (int o = 0; o < s.out_channels; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (int c = 0; c < s.in_channels; ++c)
            for (int ki = 0; ki < s.kernel; ++ki)
              for (int kj = 0; kj < s.kernel; ++kj) {
                const int iy = oy * s.stride - s.pad + ki;
                const int ix = ox * s.stride - s.pad + kj;
                if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
                acc += input[((static_cast<std::size_t>(b) * s.in_channels + c) * s.in_h + iy) * s.in_w + ix] *
                       weight[((static_cast<std::size_t>(o) * s.in_channels + c) * s.kernel + ki) * s.kernel + kj];
              }
          out[((static_cast<std::size_t>(b) * s.out_channels + o) * oh + oy) * ow + ox] = acc;
        }
}

void conv_transpose2d(const ConvShape& s, std::span<const double> input,
                      std::span<const double> weight, std::span<const double> bias,
                      std::span<double> out) {
  const int oh = s.deconv_out_h(), ow = s.deconv_out_w();
  for (int b = 0; b < s.batch; ++b)
    for (int o = 0; o < s.out_channels; ++o)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
          out[((static_cast<std::size_t>(b) * s.out_channels + o) * oh + y) * ow + x] =
              bias.empty() ? 0.0 : bias[o];
  // Each input pixel scatters a weighted kernel footprint into the output.
  for (int b = 0; b < s.batch; ++b)
    for (int c = 0; c < s.in_channels; ++c)
      for (int iy = 0; iy < s.in_h; ++iy)
        for (int ix = 0; ix < s.in_w; ++ix) {
          const double v = input[((static_cast<std::size_t>(b) * s.in_channels + c) * s.in_h + iy) * s.in_w + ix];
          for (int o = 0; o < s.out_channels; ++o)
            for (int ki = 0; ki < s.kernel; ++ki)
              for (int kj = 0; kj < s.kernel; ++kj) {
                const int y = iy * s.stride - s.pad + ki;
                const int x = ix * s.stride - s.pad + kj;
                if (y < 0 || y >= oh || x < 0 || x >= ow) continue;
                out[((static_cast<std::size_t>(b) * s.out_channels + o) * oh + y) * ow + x] +=
                    v * weight[((static_cast<std::size_t>(c) * s.out_channels + o) * s.kernel + ki) * s.kernel + kj];
              }
        }
}

}  // namespace reference
}  // namespace dlh::kernels
