#include "dpot/tensor/ops.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "dpot/error.hpp"
#include "dpot/kernels/kernels.hpp"
#include "dpot/tensor/fft.hpp"

namespace dpot {

using detail::make_result;
using detail::Node;

namespace {

std::size_t width_of(DType d) { return d == DType::Complex ? 2 : 1; }

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

void require_real(const char* op, const Tensor& a) {
  if (a.is_complex()) throw ShapeError(std::string(op) + ": real operand required");
}

enum class Bcast { Same, Suffix, Scalar };

Bcast classify(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype()) mismatch(op, a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as == bs) return Bcast::Same;
  if (b.numel() == 1 && !b.is_complex()) return Bcast::Scalar;
  if (bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin())) return Bcast::Suffix;
  mismatch(op, a, b);
}

// Copies (or accumulates) `src` with shape `in_shape` into `dst` laid out as
// the permutation `axes` of it. `width` doubles per element.
void permute_copy(const double* src, const Shape& in_shape, const std::vector<std::size_t>& axes,
                  double* dst, std::size_t width, bool accumulate) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> step(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    step[i] = in_stride[axes[i]] * width;
  }
  const std::size_t total = shape_numel(in_shape);
  if (total == 0) return;
  if (rank == 0) {
    for (std::size_t w = 0; w < width; ++w) dst[w] = accumulate ? dst[w] + src[w] : src[w];
    return;
  }
  const std::size_t inner = out_shape[rank - 1];
  const std::size_t inner_step = step[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src_off = 0;
  double* out = dst;
  for (std::size_t done = 0; done < total; done += inner) {
    const double* s = src + src_off;
    if (width == 1) {
      if (accumulate) {
        for (std::size_t j = 0; j < inner; ++j) out[j] += s[j * inner_step];
      } else {
        for (std::size_t j = 0; j < inner; ++j) out[j] = s[j * inner_step];
      }
    } else {
      for (std::size_t j = 0; j < inner; ++j) {
        for (std::size_t w = 0; w < width; ++w) {
          out[j * width + w] = accumulate ? out[j * width + w] + s[j * inner_step + w]
                                          : s[j * inner_step + w];
        }
      }
    }
    out += inner * width;
    // advance the multi-index over all but the innermost output axis
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        src_off += step[ax];
        break;
      }
      src_off -= step[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
}

// dst[cols x rows] = src[rows x cols]^T, with source leading dimension lds.
void transpose_into(const double* src, std::size_t rows, std::size_t cols, std::size_t lds,
                    std::vector<double>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* s = src + r * lds;
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = s[c];
  }
}

fft::cplx* as_cplx(std::vector<double>& v) { return reinterpret_cast<fft::cplx*>(v.data()); }

void check_fft_shape(const char* op, const Tensor& a) {
  if (a.rank() < 2 || a.shape()[a.rank() - 1] == 0 || a.shape()[a.rank() - 2] == 0) {
    throw ShapeError(std::string(op) + ": need [..., H, W] with H, W >= 1, got " +
                     shape_str(a.shape()));
  }
}

// Shared body of fft2/ifft2: transform over the last two axes, with the
// adjoint being the opposite unitary transform.
Tensor spectral(const Tensor& a, fft::Direction dir, const char* name) {
  check_fft_shape(name, a);
  const std::size_t h = a.shape()[a.rank() - 2];
  const std::size_t w = a.shape()[a.rank() - 1];
  const std::size_t plane = h * w;
  const std::size_t batch = a.numel() / plane;
  auto out = make_result(a.shape(), DType::Complex, name, {a.node_ptr()});
  const auto src = a.data();
  if (a.is_complex()) {
    std::copy(src.begin(), src.end(), out->data.begin());
  } else {
    for (std::size_t i = 0; i < src.size(); ++i) out->data[2 * i] = src[i];
  }
  fft::cplx* z = as_cplx(out->data);
  for (std::size_t b = 0; b < batch; ++b) fft::unitary_2d({z + b * plane, plane}, h, w, dir);
  if (out->requires_grad) {
    const bool real_in = !a.is_complex();
    const fft::Direction adj =
        dir == fft::Direction::Forward ? fft::Direction::Inverse : fft::Direction::Forward;
    out->backward = [h, w, plane, batch, real_in, adj](Node& self) {
      std::vector<double> g = self.grad;
      fft::cplx* gz = as_cplx(g);
      for (std::size_t b = 0; b < batch; ++b) fft::unitary_2d({gz + b * plane, plane}, h, w, adj);
      auto& pg = self.parents[0]->grad_buffer();
      if (real_in) {
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[2 * i];
      } else {
        kernels::active().add(pg.size(), pg.data(), g.data(), pg.data());
      }
    };
  }
  return Tensor::wrap(out);
}

}  // namespace

double gelu_value(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Bcast kind = classify("add", a, b);
  auto out = make_result(a.shape(), a.dtype(), "add", {a.node_ptr(), b.node_ptr()});
  const auto& K = kernels::active();
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t n = ad.size();
  const std::size_t block = bd.size();
  if (kind == Bcast::Scalar) {
    for (std::size_t i = 0; i < n; ++i) out->data[i] = ad[i] + bd[0];
  } else {
    for (std::size_t off = 0; off < n; off += block) K.add(block, ad.data() + off, bd.data(), out->data.data() + off);
  }
  if (out->requires_grad) {
    out->backward = [kind, n, block](Node& self) {
      const auto& K = kernels::active();
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      if (pa.requires_grad) {
        double* ga = pa.grad_buffer().data();
        K.add(n, ga, self.grad.data(), ga);
      }
      if (pb.requires_grad) {
        auto& gb = pb.grad_buffer();
        if (kind == Bcast::Scalar) {
          gb[0] += K.sum(n, self.grad.data());
        } else {
          for (std::size_t off = 0; off < n; off += block) K.add(block, gb.data(), self.grad.data() + off, gb.data());
        }
      }
    };
  }
  return Tensor::wrap(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Bcast kind = classify("sub", a, b);
  auto out = make_result(a.shape(), a.dtype(), "sub", {a.node_ptr(), b.node_ptr()});
  const auto& K = kernels::active();
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t n = ad.size();
  const std::size_t block = bd.size();
  if (kind == Bcast::Scalar) {
    for (std::size_t i = 0; i < n; ++i) out->data[i] = ad[i] - bd[0];
  } else {
    for (std::size_t off = 0; off < n; off += block) K.sub(block, ad.data() + off, bd.data(), out->data.data() + off);
  }
  if (out->requires_grad) {
    out->backward = [kind, n, block](Node& self) {
      const auto& K = kernels::active();
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      if (pa.requires_grad) {
        double* ga = pa.grad_buffer().data();
        K.add(n, ga, self.grad.data(), ga);
      }
      if (pb.requires_grad) {
        auto& gb = pb.grad_buffer();
        if (kind == Bcast::Scalar) {
          gb[0] -= K.sum(n, self.grad.data());
        } else {
          for (std::size_t off = 0; off < n; off += block) K.sub(block, gb.data(), self.grad.data() + off, gb.data());
        }
      }
    };
  }
  return Tensor::wrap(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_real("mul", a);
  const Bcast kind = classify("mul", a, b);
  auto out = make_result(a.shape(), DType::Real, "mul", {a.node_ptr(), b.node_ptr()});
  const auto& K = kernels::active();
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t n = ad.size();
  const std::size_t block = bd.size();
  if (kind == Bcast::Scalar) {
    K.scale(n, bd[0], ad.data(), out->data.data());
  } else {
    for (std::size_t off = 0; off < n; off += block) K.mul(block, ad.data() + off, bd.data(), out->data.data() + off);
  }
  if (out->requires_grad) {
    out->backward = [kind, n, block](Node& self) {
      const auto& K = kernels::active();
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      const double* g = self.grad.data();
      if (pa.requires_grad) {
        auto& ga = pa.grad_buffer();
        if (kind == Bcast::Scalar) {
          K.axpy(n, pb.data[0], g, ga.data());
        } else {
          for (std::size_t off = 0; off < n; off += block) K.fma_acc(block, g + off, pb.data.data(), ga.data() + off);
        }
      }
      if (pb.requires_grad) {
        auto& gb = pb.grad_buffer();
        if (kind == Bcast::Scalar) {
          gb[0] += K.dot(n, g, pa.data.data());
        } else {
          for (std::size_t off = 0; off < n; off += block) K.fma_acc(block, g + off, pa.data.data() + off, gb.data());
        }
      }
    };
  }
  return Tensor::wrap(out);
}

Tensor scale(const Tensor& a, double s) {
  auto out = make_result(a.shape(), a.dtype(), "scale", {a.node_ptr()});
  const auto ad = a.data();
  kernels::active().scale(ad.size(), s, ad.data(), out->data.data());
  if (out->requires_grad) {
    out->backward = [s](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      kernels::active().axpy(g.size(), s, self.grad.data(), g.data());
    };
  }
  return Tensor::wrap(out);
}

Tensor gelu(const Tensor& a) {
  require_real("gelu", a);
  auto out = make_result(a.shape(), DType::Real, "gelu", {a.node_ptr()});
  const auto ad = a.data();
  for (std::size_t i = 0; i < ad.size(); ++i) out->data[i] = gelu_value(ad[i]);
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      Node& p = *self.parents[0];
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * gelu_derivative(p.data[i]);
    };
  }
  return Tensor::wrap(out);
}

Tensor cos(const Tensor& a) {
  require_real("cos", a);
  auto out = make_result(a.shape(), DType::Real, "cos", {a.node_ptr()});
  const auto ad = a.data();
  for (std::size_t i = 0; i < ad.size(); ++i) out->data[i] = std::cos(ad[i]);
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      Node& p = *self.parents[0];
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * std::sin(p.data[i]);
    };
  }
  return Tensor::wrap(out);
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b, double s) {
  switch (op) {
    case Elementwise::Add:
      return add(a, b);
    case Elementwise::Mul:
      return mul(a, b);
    case Elementwise::Gelu:
      return gelu(a);
    case Elementwise::Scale:
      return scale(a, s);
  }
  throw Error("elementwise: unknown op");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_real("matmul", a);
  require_real("matmul", b);
  if (a.rank() < 2 || b.rank() < 2) mismatch("matmul", a, b);
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t kb = b.shape()[b.rank() - 2];
  const std::size_t n = b.shape()[b.rank() - 1];
  if (k != kb) mismatch("matmul (inner extents)", a, b);
  const bool shared_b = b.rank() == 2;
  if (!shared_b && (b.rank() != a.rank() ||
                    !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))) {
    mismatch("matmul (batch axes)", a, b);
  }
  Shape out_shape = a.shape();
  out_shape.back() = n;
  auto out = make_result(out_shape, DType::Real, "matmul", {a.node_ptr(), b.node_ptr()});
  const std::size_t batch = shared_b ? 1 : a.numel() / (m * k);
  const std::size_t rows = shared_b ? a.numel() / k : m;
  const auto& K = kernels::active();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    K.gemm({rows, n, k, a.data().data() + bi * rows * k, k, b.data().data() + bi * k * n, n,
            out->data.data() + bi * rows * n, n, false});
  }
  if (out->requires_grad) {
    out->backward = [batch, rows, n, k](Node& self) {
      const auto& K = kernels::active();
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      std::vector<double> tmp;
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* g = self.grad.data() + bi * rows * n;
        const double* av = pa.data.data() + bi * rows * k;
        const double* bv = pb.data.data() + bi * k * n;
        if (pa.requires_grad) {
          transpose_into(bv, k, n, n, tmp);  // [n x k]
          K.gemm({rows, k, n, g, n, tmp.data(), k, pa.grad_buffer().data() + bi * rows * k, k, true});
        }
        if (pb.requires_grad) {
          transpose_into(av, rows, k, k, tmp);  // [k x rows]
          K.gemm({k, n, rows, tmp.data(), rows, g, n, pb.grad_buffer().data() + bi * k * n, n, true});
        }
      }
    };
  }
  return Tensor::wrap(out);
}

Tensor grouped_matmul(const Tensor& x, const Tensor& w) {
  require_real("grouped_matmul", x);
  require_real("grouped_matmul", w);
  if (w.rank() != 3 || x.rank() < 1) mismatch("grouped_matmul", x, w);
  const std::size_t groups = w.shape()[0];
  const std::size_t k = w.shape()[1];
  const std::size_t n = w.shape()[2];
  if (x.shape().back() != groups * k) mismatch("grouped_matmul (feature split)", x, w);
  Shape out_shape = x.shape();
  out_shape.back() = groups * n;
  auto out = make_result(out_shape, DType::Real, "grouped_matmul", {x.node_ptr(), w.node_ptr()});
  const std::size_t rows = x.numel() / (groups * k);
  const auto& K = kernels::active();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    K.gemm({rows, n, k, x.data().data() + gi * k, groups * k, w.data().data() + gi * k * n, n,
            out->data.data() + gi * n, groups * n, false});
  }
  if (out->requires_grad) {
    out->backward = [groups, rows, k, n](Node& self) {
      const auto& K = kernels::active();
      Node& px = *self.parents[0];
      Node& pw = *self.parents[1];
      std::vector<double> tmp;
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const double* g = self.grad.data() + gi * n;
        if (px.requires_grad) {
          transpose_into(pw.data.data() + gi * k * n, k, n, n, tmp);  // [n x k]
          K.gemm({rows, k, n, g, groups * n, tmp.data(), k, px.grad_buffer().data() + gi * k,
                  groups * k, true});
        }
        if (pw.requires_grad) {
          transpose_into(px.data.data() + gi * k, rows, k, groups * k, tmp);  // [k x rows]
          K.gemm({k, n, rows, tmp.data(), rows, g, groups * n, pw.grad_buffer().data() + gi * k * n,
                  n, true});
        }
      }
    };
  }
  return Tensor::wrap(out);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto out = make_result(std::move(shape), a.dtype(), "reshape", {a.node_ptr()});
  const auto ad = a.data();
  std::copy(ad.begin(), ad.end(), out->data.begin());
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      kernels::active().add(g.size(), g.data(), self.grad.data(), g.data());
    };
  }
  return Tensor::wrap(out);
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const std::size_t rank = a.rank();
  if (axes.size() != rank) throw ShapeError("permute: axes length differs from rank of " + shape_str(a.shape()));
  std::vector<std::size_t> inverse(rank, rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (axes[i] >= rank || inverse[axes[i]] != rank) throw ShapeError("permute: axes are not a permutation");
    inverse[axes[i]] = i;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = a.shape()[axes[i]];
  auto out = make_result(out_shape, a.dtype(), "permute", {a.node_ptr()});
  const std::size_t width = width_of(a.dtype());
  permute_copy(a.data().data(), a.shape(), axes, out->data.data(), width, false);
  if (out->requires_grad) {
    out->backward = [out_shape, inverse, width](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      permute_copy(self.grad.data(), out_shape, inverse, g.data(), width, true);
    };
  }
  return Tensor::wrap(out);
}

Tensor fft2(const Tensor& a) { return spectral(a, fft::Direction::Forward, "fft2"); }

Tensor ifft2(const Tensor& a) { return spectral(a, fft::Direction::Inverse, "ifft2"); }

Tensor real_part(const Tensor& c) {
  if (!c.is_complex()) throw ShapeError("real_part: complex operand required");
  auto out = make_result(c.shape(), DType::Real, "real_part", {c.node_ptr()});
  const auto cd = c.data();
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = cd[2 * i];
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[2 * i] += self.grad[i];
    };
  }
  return Tensor::wrap(out);
}

namespace {
Tensor storage_view(const Tensor& a, Shape shape, DType dtype, const char* name) {
  auto out = make_result(std::move(shape), dtype, name, {a.node_ptr()});
  const auto ad = a.data();
  std::copy(ad.begin(), ad.end(), out->data.begin());
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      kernels::active().add(g.size(), g.data(), self.grad.data(), g.data());
    };
  }
  return Tensor::wrap(out);
}
}  // namespace

Tensor as_real(const Tensor& c) {
  if (!c.is_complex()) throw ShapeError("as_real: complex operand required");
  Shape s = c.shape();
  s.push_back(2);
  return storage_view(c, std::move(s), DType::Real, "as_real");
}

Tensor as_complex(const Tensor& r) {
  if (r.is_complex() || r.rank() == 0 || r.shape().back() != 2) {
    throw ShapeError("as_complex: need real [..., 2], got " + shape_str(r.shape()));
  }
  Shape s = r.shape();
  s.pop_back();
  return storage_view(r, std::move(s), DType::Complex, "as_complex");
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& weight, const Tensor& bias,
                  double eps) {
  require_real("group_norm", x);
  if (x.rank() != 3) throw ShapeError("group_norm: need [B, N, C], got " + shape_str(x.shape()));
  const std::size_t batch = x.shape()[0];
  const std::size_t npos = x.shape()[1];
  const std::size_t ch = x.shape()[2];
  if (groups == 0 || ch % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(groups) + " groups do not divide " +
                     std::to_string(ch) + " channels");
  }
  if (weight.shape() != Shape{ch} || bias.shape() != Shape{ch}) mismatch("group_norm (affine)", x, weight);
  const std::size_t cg = ch / groups;
  const double count = static_cast<double>(npos * cg);
  auto out = make_result(x.shape(), DType::Real, "group_norm",
                         {x.node_ptr(), weight.node_ptr(), bias.node_ptr()});
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(batch * groups);
  const auto xd = x.data();
  const auto wd = weight.data();
  const auto bd = bias.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      double mu = 0.0;
      for (std::size_t p = 0; p < npos; ++p) {
        const double* row = xd.data() + (b * npos + p) * ch + gi * cg;
        for (std::size_t c = 0; c < cg; ++c) mu += row[c];
      }
      mu /= count;
      double var = 0.0;
      for (std::size_t p = 0; p < npos; ++p) {
        const double* row = xd.data() + (b * npos + p) * ch + gi * cg;
        for (std::size_t c = 0; c < cg; ++c) var += (row[c] - mu) * (row[c] - mu);
      }
      var /= count;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[b * groups + gi] = is;
      for (std::size_t p = 0; p < npos; ++p) {
        const std::size_t base = (b * npos + p) * ch + gi * cg;
        for (std::size_t c = 0; c < cg; ++c) {
          const double xh = (xd[base + c] - mu) * is;
          xhat[base + c] = xh;
          out->data[base + c] = xh * wd[gi * cg + c] + bd[gi * cg + c];
        }
      }
    }
  }
  if (out->requires_grad) {
    out->backward = [xhat = std::move(xhat), inv_std = std::move(inv_std), batch, npos, ch, groups,
                     cg, count](Node& self) {
      Node& px = *self.parents[0];
      Node& pw = *self.parents[1];
      Node& pb = *self.parents[2];
      const double* g = self.grad.data();
      if (pw.requires_grad || pb.requires_grad) {
        auto& gw = pw.grad_buffer();
        auto& gb = pb.grad_buffer();
        for (std::size_t i = 0; i < batch * npos; ++i) {
          for (std::size_t c = 0; c < ch; ++c) {
            gw[c] += g[i * ch + c] * xhat[i * ch + c];
            gb[c] += g[i * ch + c];
          }
        }
      }
      if (!px.requires_grad) return;
      auto& gx = px.grad_buffer();
      const double* wv = pw.data.data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t gi = 0; gi < groups; ++gi) {
          double mean_g = 0.0;
          double mean_gx = 0.0;
          for (std::size_t p = 0; p < npos; ++p) {
            const std::size_t base = (b * npos + p) * ch + gi * cg;
            for (std::size_t c = 0; c < cg; ++c) {
              const double gh = g[base + c] * wv[gi * cg + c];
              mean_g += gh;
              mean_gx += gh * xhat[base + c];
            }
          }
          mean_g /= count;
          mean_gx /= count;
          const double is = inv_std[b * groups + gi];
          for (std::size_t p = 0; p < npos; ++p) {
            const std::size_t base = (b * npos + p) * ch + gi * cg;
            for (std::size_t c = 0; c < cg; ++c) {
              const double gh = g[base + c] * wv[gi * cg + c];
              gx[base + c] += is * (gh - mean_g - xhat[base + c] * mean_gx);
            }
          }
        }
      }
    };
  }
  return Tensor::wrap(out);
}

Tensor sum(const Tensor& a) {
  require_real("sum", a);
  auto out = make_result({}, DType::Real, "sum", {a.node_ptr()});
  out->data[0] = kernels::active().sum(a.data().size(), a.data().data());
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      const double s = self.grad[0];
      for (auto& v : g) v += s;
    };
  }
  return Tensor::wrap(out);
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor weighted_square_sum(const Tensor& x, std::span<const double> weights) {
  require_real("weighted_square_sum", x);
  if (weights.size() != x.numel()) {
    throw ShapeError("weighted_square_sum: " + std::to_string(weights.size()) + " weights for " +
                     shape_str(x.shape()));
  }
  auto out = make_result({}, DType::Real, "weighted_square_sum", {x.node_ptr()});
  const auto xd = x.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < xd.size(); ++i) acc += weights[i] * xd[i] * xd[i];
  out->data[0] = acc;
  if (out->requires_grad) {
    out->backward = [w = std::vector<double>(weights.begin(), weights.end())](Node& self) {
      Node& p = *self.parents[0];
      auto& g = p.grad_buffer();
      const double s = 2.0 * self.grad[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * w[i] * p.data[i];
    };
  }
  return Tensor::wrap(out);
}

}  // namespace dpot
