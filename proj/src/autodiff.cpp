#include "onestream/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "onestream/errors.hpp"

namespace onestream {

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false, {}});
  return Var{nodes_.size() - 1};
}

Var Graph::parameter(const std::string& name, Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true, name});
  return Var{nodes_.size() - 1};
}

Var Graph::record(const char* op, Tensor value, std::vector<Var> parents,
                  Backward backward) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value in " +
                       (scope_.empty() ? std::string("<model>") : scope_) + " (" +
                       op + ")");
  }
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [&](Var p) { return nodes_[p.id].requires_grad; });
  nodes_.push_back(Node{std::move(value), {}, std::move(parents),
                        needs ? std::move(backward) : Backward{}, needs, {}});
  return Var{nodes_.size() - 1};
}

Tensor& Graph::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

void Graph::backward(Var root) {
  if (value(root).size() != 1) throw ShapeError("backward root must be a scalar");
  grad(root).fill(Real(1));
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
}

GradSet Graph::parameter_grads(const ParamSet& like) const {
  GradSet out = like.zeros_like();
  for (const Node& n : nodes_) {
    if (n.param_name.empty() || n.grad.empty()) continue;
    Tensor& dst = out.at(n.param_name);
    if (dst.shape() != n.grad.shape())
      throw ShapeError("parameter '" + n.param_name + "' bound with wrong shape");
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad[j];
  }
  return out;
}

namespace ops {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_string(t.shape()));
}

}  // namespace

Var affine(Graph& g, Var xv, Var wv, Var bv) {
  const Tensor& x = g.value(xv);
  const Tensor& w = g.value(wv);
  const Tensor& b = g.value(bv);
  require_rank(x, 2, "affine");
  require_rank(w, 2, "affine");
  const std::size_t n = x.dim(0), d = x.dim(1), e = w.dim(0);
  if (w.dim(1) != d || b.size() != e)
    throw ShapeError("affine: input " + shape_string(x.shape()) + ", weight " +
                     shape_string(w.shape()) + ", bias " + shape_string(b.shape()));

  // Transposed weight so every inner loop is a contiguous axpy.
  std::vector<Real> wt(d * e);
  for (std::size_t i = 0; i < e; ++i)
    for (std::size_t j = 0; j < d; ++j) wt[j * e + i] = w[i * d + j];

  Tensor y({n, e});
  for (std::size_t r = 0; r < n; ++r) {
    Real* yr = y.raw() + r * e;
    std::copy(b.raw(), b.raw() + e, yr);
    const Real* xr = x.raw() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      const Real xj = xr[j];
      if (xj == Real(0)) continue;
      const Real* wrow = wt.data() + j * e;
      for (std::size_t i = 0; i < e; ++i) yr[i] += xj * wrow[i];
    }
  }

  return g.record("affine", std::move(y), {xv, wv, bv},
                  [xv, wv, bv, n, d, e](Graph& g, std::size_t self) {
                    const Tensor& dy = g.grad(Var{self});
                    if (g.requires_grad(xv)) {
                      const Tensor& w = g.value(wv);
                      Tensor& dx = g.grad(xv);
                      for (std::size_t r = 0; r < n; ++r) {
                        Real* dxr = dx.raw() + r * d;
                        const Real* dyr = dy.raw() + r * e;
                        for (std::size_t i = 0; i < e; ++i) {
                          const Real gi = dyr[i];
                          if (gi == Real(0)) continue;
                          const Real* wr = w.raw() + i * d;
                          for (std::size_t j = 0; j < d; ++j) dxr[j] += gi * wr[j];
                        }
                      }
                    }
                    if (g.requires_grad(wv)) {
                      const Tensor& x = g.value(xv);
                      Tensor& dw = g.grad(wv);
                      for (std::size_t r = 0; r < n; ++r) {
                        const Real* xr = x.raw() + r * d;
                        const Real* dyr = dy.raw() + r * e;
                        for (std::size_t i = 0; i < e; ++i) {
                          const Real gi = dyr[i];
                          if (gi == Real(0)) continue;
                          Real* dwr = dw.raw() + i * d;
                          for (std::size_t j = 0; j < d; ++j) dwr[j] += gi * xr[j];
                        }
                      }
                    }
                    if (g.requires_grad(bv)) {
                      Tensor& db = g.grad(bv);
                      for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t i = 0; i < e; ++i) db[i] += dy[r * e + i];
                    }
                  });
}

namespace {

// Accumulates out[y][x] += scale * in[y + dy][x + dx] over the overlap of two
// H x W planes, treating out-of-range input as zero.
inline void shifted_axpy(Real* out, const Real* in, std::size_t h, std::size_t w,
                         std::ptrdiff_t dy, std::ptrdiff_t dx, Real scale) {
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(w);
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
  const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(H, H - dy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
  const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - dx);
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    Real* orow = out + y * W;
    const Real* irow = in + (y + dy) * W + dx;
    for (std::ptrdiff_t x = x0; x < x1; ++x) orow[x] += scale * irow[x];
  }
}

// Sum over the overlap of out[y][x] * in[y + dy][x + dx].
inline Real shifted_dot(const Real* a, const Real* in, std::size_t h, std::size_t w,
                        std::ptrdiff_t dy, std::ptrdiff_t dx) {
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(w);
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
  const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(H, H - dy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
  const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - dx);
  Real s = 0;
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    const Real* arow = a + y * W;
    const Real* irow = in + (y + dy) * W + dx;
    for (std::ptrdiff_t x = x0; x < x1; ++x) s += arow[x] * irow[x];
  }
  return s;
}

}  // namespace

Var conv2d(Graph& g, Var xv, Var wv, Var bv) {
  const Tensor& x = g.value(xv);
  const Tensor& w = g.value(wv);
  const Tensor& b = g.value(bv);
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t o = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c || w.dim(3) != k || k % 2 == 0 || b.size() != o)
    throw ShapeError("conv2d: input " + shape_string(x.shape()) + ", kernel " +
                     shape_string(w.shape()) + ", bias " + shape_string(b.shape()));
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t plane = h * wd;

  Tensor y({o, h, wd});
  for (std::size_t oc = 0; oc < o; ++oc) {
    Real* yp = y.raw() + oc * plane;
    std::fill(yp, yp + plane, b[oc]);
    for (std::size_t ic = 0; ic < c; ++ic) {
      const Real* xp = x.raw() + ic * plane;
      const Real* kern = w.raw() + (oc * c + ic) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx)
          shifted_axpy(yp, xp, h, wd, std::ptrdiff_t(ky) - r, std::ptrdiff_t(kx) - r,
                       kern[ky * k + kx]);
    }
  }

  return g.record(
      "conv2d", std::move(y), {xv, wv, bv},
      [xv, wv, bv, c, h, wd, o, k, r, plane](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(Var{self});
        if (g.requires_grad(xv)) {
          const Tensor& w = g.value(wv);
          Tensor& dx = g.grad(xv);
          for (std::size_t oc = 0; oc < o; ++oc) {
            const Real* dyp = dy.raw() + oc * plane;
            for (std::size_t ic = 0; ic < c; ++ic) {
              Real* dxp = dx.raw() + ic * plane;
              const Real* kern = w.raw() + (oc * c + ic) * k * k;
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx)
                  shifted_axpy(dxp, dyp, h, wd, r - std::ptrdiff_t(ky),
                               r - std::ptrdiff_t(kx), kern[ky * k + kx]);
            }
          }
        }
        if (g.requires_grad(wv)) {
          const Tensor& x = g.value(xv);
          Tensor& dw = g.grad(wv);
          for (std::size_t oc = 0; oc < o; ++oc) {
            const Real* dyp = dy.raw() + oc * plane;
            for (std::size_t ic = 0; ic < c; ++ic) {
              const Real* xp = x.raw() + ic * plane;
              Real* dk = dw.raw() + (oc * c + ic) * k * k;
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx)
                  dk[ky * k + kx] += shifted_dot(dyp, xp, h, wd, std::ptrdiff_t(ky) - r,
                                                 std::ptrdiff_t(kx) - r);
            }
          }
        }
        if (g.requires_grad(bv)) {
          Tensor& db = g.grad(bv);
          for (std::size_t oc = 0; oc < o; ++oc) {
            Real s = 0;
            const Real* dyp = dy.raw() + oc * plane;
            for (std::size_t i = 0; i < plane; ++i) s += dyp[i];
            db[oc] += s;
          }
        }
      });
}

Var avg_pool2(Graph& g, Var xv) {
  const Tensor& x = g.value(xv);
  require_rank(x, 3, "avg_pool2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial size " + shape_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t yy = 0; yy < oh; ++yy)
      for (std::size_t xx = 0; xx < ow; ++xx)
        y.at(ch, yy, xx) = Real(0.25) * (x.at(ch, 2 * yy, 2 * xx) + x.at(ch, 2 * yy, 2 * xx + 1) +
                                         x.at(ch, 2 * yy + 1, 2 * xx) +
                                         x.at(ch, 2 * yy + 1, 2 * xx + 1));
  return g.record("avg_pool2", std::move(y), {xv},
                  [xv, c, oh, ow](Graph& g, std::size_t self) {
                    const Tensor& dy = g.grad(Var{self});
                    Tensor& dx = g.grad(xv);
                    for (std::size_t ch = 0; ch < c; ++ch)
                      for (std::size_t yy = 0; yy < oh; ++yy)
                        for (std::size_t xx = 0; xx < ow; ++xx) {
                          const Real v = Real(0.25) * dy.at(ch, yy, xx);
                          dx.at(ch, 2 * yy, 2 * xx) += v;
                          dx.at(ch, 2 * yy, 2 * xx + 1) += v;
                          dx.at(ch, 2 * yy + 1, 2 * xx) += v;
                          dx.at(ch, 2 * yy + 1, 2 * xx + 1) += v;
                        }
                  });
}

Var upsample2(Graph& g, Var xv) {
  const Tensor& x = g.value(xv);
  require_rank(x, 3, "upsample2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor y({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t yy = 0; yy < 2 * h; ++yy)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) y.at(ch, yy, xx) = x.at(ch, yy / 2, xx / 2);
  return g.record("upsample2", std::move(y), {xv}, [xv, c, h, w](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(Var{self});
    Tensor& dx = g.grad(xv);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t yy = 0; yy < 2 * h; ++yy)
        for (std::size_t xx = 0; xx < 2 * w; ++xx) dx.at(ch, yy / 2, xx / 2) += dy.at(ch, yy, xx);
  });
}

Var relu(Graph& g, Var xv) {
  const Tensor& x = g.value(xv);
  Tensor y = x;
  for (Real& v : y.data()) v = v > Real(0) ? v : Real(0);
  return g.record("relu", std::move(y), {xv}, [xv](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(Var{self});
    const Tensor& x = g.value(xv);
    Tensor& dx = g.grad(xv);
    // Subgradient at 0 is 0.
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > Real(0)) dx[i] += dy[i];
  });
}

Var group_norm(Graph& g, Var xv, Var gv, Var bv, std::size_t groups, Real eps) {
  const Tensor& x = g.value(xv);
  const Tensor& gamma = g.value(gv);
  const Tensor& beta = g.value(bv);
  require_rank(x, 3, "group_norm");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  if (groups == 0 || c % groups || gamma.size() != c || beta.size() != c)
    throw ShapeError("group_norm: " + std::to_string(c) + " channels, " +
                     std::to_string(groups) + " groups");
  const std::size_t per = c / groups;
  const std::size_t count = per * plane;

  auto normalized = std::make_shared<Tensor>(x.shape());
  auto inv_std = std::make_shared<std::vector<Real>>(groups);
  Tensor y(x.shape());
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const Real* xs = x.raw() + gi * count;
    Real mean = 0;
    for (std::size_t i = 0; i < count; ++i) mean += xs[i];
    mean /= Real(count);
    Real var = 0;
    for (std::size_t i = 0; i < count; ++i) var += (xs[i] - mean) * (xs[i] - mean);
    var /= Real(count);
    const Real is = Real(1) / std::sqrt(var + eps);
    (*inv_std)[gi] = is;
    Real* ns = normalized->raw() + gi * count;
    for (std::size_t i = 0; i < count; ++i) ns[i] = (xs[i] - mean) * is;
  }
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i)
      y[ch * plane + i] = gamma[ch] * (*normalized)[ch * plane + i] + beta[ch];

  return g.record(
      "group_norm", std::move(y), {xv, gv, bv},
      [xv, gv, bv, groups, c, plane, per, count, normalized, inv_std](Graph& g,
                                                                    std::size_t self) {
        const Tensor& dy = g.grad(Var{self});
        const Tensor& xhat = *normalized;
        if (g.requires_grad(gv)) {
          Tensor& dg = g.grad(gv);
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < plane; ++i)
              dg[ch] += dy[ch * plane + i] * xhat[ch * plane + i];
        }
        if (g.requires_grad(bv)) {
          Tensor& db = g.grad(bv);
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < plane; ++i) db[ch] += dy[ch * plane + i];
        }
        if (g.requires_grad(xv)) {
          const Tensor& gamma = g.value(gv);
          Tensor& dx = g.grad(xv);
          std::vector<Real> dxhat(count);
          for (std::size_t gi = 0; gi < groups; ++gi) {
            const std::size_t base = gi * count;
            Real mean_d = 0, mean_dx = 0;
            for (std::size_t i = 0; i < count; ++i) {
              const std::size_t ch = gi * per + i / plane;
              dxhat[i] = dy[base + i] * gamma[ch];
              mean_d += dxhat[i];
              mean_dx += dxhat[i] * xhat[base + i];
            }
            mean_d /= Real(count);
            mean_dx /= Real(count);
            const Real is = (*inv_std)[gi];
            for (std::size_t i = 0; i < count; ++i)
              dx[base + i] += is * (dxhat[i] - mean_d - xhat[base + i] * mean_dx);
          }
        }
      });
}

Var add(Graph& g, Var av, Var bv) {
  const Tensor& a = g.value(av);
  const Tensor& b = g.value(bv);
  if (a.shape() != b.shape())
    throw ShapeError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return g.record("add", std::move(y), {av, bv}, [av, bv](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(Var{self});
    for (Var v : {av, bv}) {
      if (!g.requires_grad(v)) continue;
      Tensor& d = g.grad(v);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

namespace {

// Index of image element (ch, y, x) inside the patchified token matrix.
struct PatchLayout {
  std::size_t c, h, w, p, gw, feat;
  std::size_t token_index(std::size_t ch, std::size_t y, std::size_t x) const {
    const std::size_t token = (y / p) * gw + (x / p);
    const std::size_t f = (ch * p + (y % p)) * p + (x % p);
    return token * feat + f;
  }
};

PatchLayout make_layout(const Shape& image, std::size_t patch, const char* op) {
  if (image.size() != 3) throw ShapeError(std::string(op) + ": image must be (C, H, W)");
  if (patch == 0 || image[1] % patch || image[2] % patch)
    throw ShapeError(std::string(op) + ": patch " + std::to_string(patch) +
                     " does not tile " + shape_string(image));
  return PatchLayout{image[0], image[1], image[2], patch, image[2] / patch,
                     image[0] * patch * patch};
}

}  // namespace

Var patchify(Graph& g, Var xv, std::size_t patch) {
  const Tensor& x = g.value(xv);
  const PatchLayout L = make_layout(x.shape(), patch, "patchify");
  Tensor t({(L.h / patch) * L.gw, L.feat});
  for (std::size_t ch = 0; ch < L.c; ++ch)
    for (std::size_t y = 0; y < L.h; ++y)
      for (std::size_t xx = 0; xx < L.w; ++xx) t[L.token_index(ch, y, xx)] = x.at(ch, y, xx);
  return g.record("patchify", std::move(t), {xv}, [xv, L](Graph& g, std::size_t self) {
    const Tensor& dt = g.grad(Var{self});
    Tensor& dx = g.grad(xv);
    for (std::size_t ch = 0; ch < L.c; ++ch)
      for (std::size_t y = 0; y < L.h; ++y)
        for (std::size_t xx = 0; xx < L.w; ++xx) dx.at(ch, y, xx) += dt[L.token_index(ch, y, xx)];
  });
}

Var unpatchify(Graph& g, Var tv, const Shape& image_shape, std::size_t patch) {
  const Tensor& t = g.value(tv);
  const PatchLayout L = make_layout(image_shape, patch, "unpatchify");
  if (t.rank() != 2 || t.dim(0) != (L.h / patch) * L.gw || t.dim(1) != L.feat)
    throw ShapeError("unpatchify: tokens " + shape_string(t.shape()) + " do not form " +
                     shape_string(image_shape));
  Tensor x(image_shape);
  for (std::size_t ch = 0; ch < L.c; ++ch)
    for (std::size_t y = 0; y < L.h; ++y)
      for (std::size_t xx = 0; xx < L.w; ++xx) x.at(ch, y, xx) = t[L.token_index(ch, y, xx)];
  return g.record("unpatchify", std::move(x), {tv}, [tv, L](Graph& g, std::size_t self) {
    const Tensor& dx = g.grad(Var{self});
    Tensor& dt = g.grad(tv);
    for (std::size_t ch = 0; ch < L.c; ++ch)
      for (std::size_t y = 0; y < L.h; ++y)
        for (std::size_t xx = 0; xx < L.w; ++xx) dt[L.token_index(ch, y, xx)] += dx.at(ch, y, xx);
  });
}

Var attention(Graph& g, Var qv, Var kv, Var vv) {
  const Tensor& q = g.value(qv);
  const Tensor& k = g.value(kv);
  const Tensor& v = g.value(vv);
  require_rank(q, 2, "attention");
  if (k.shape() != q.shape() || v.shape() != q.shape())
    throw ShapeError("attention: q, k, v must share shape");
  const std::size_t n = q.dim(0), d = q.dim(1);
  const Real scale = Real(1) / std::sqrt(Real(d));

  auto probs = std::make_shared<Tensor>(Shape{n, n});
  Tensor& a = *probs;
  for (std::size_t i = 0; i < n; ++i) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      Real s = 0;
      for (std::size_t l = 0; l < d; ++l) s += q[i * d + l] * k[j * d + l];
      a[i * n + j] = s * scale;
      mx = std::max(mx, a[i * n + j]);
    }
    Real z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      a[i * n + j] = std::exp(a[i * n + j] - mx);
      z += a[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] /= z;
  }
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const Real p = a[i * n + j];
      for (std::size_t l = 0; l < d; ++l) out[i * d + l] += p * v[j * d + l];
    }

  return g.record(
      "attention", std::move(out), {qv, kv, vv},
      [qv, kv, vv, n, d, scale, probs](Graph& g, std::size_t self) {
        const Tensor& dout = g.grad(Var{self});
        const Tensor& a = *probs;
        const Tensor& q = g.value(qv);
        const Tensor& k = g.value(kv);
        const Tensor& v = g.value(vv);
        if (g.requires_grad(vv)) {
          Tensor& dv = g.grad(vv);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
              for (std::size_t l = 0; l < d; ++l) dv[j * d + l] += a[i * n + j] * dout[i * d + l];
        }
        // dS = A * (dA - rowsum(dA * A)), dA = dOut V^T.
        Tensor ds({n, n});
        for (std::size_t i = 0; i < n; ++i) {
          Real row = 0;
          for (std::size_t j = 0; j < n; ++j) {
            Real da = 0;
            for (std::size_t l = 0; l < d; ++l) da += dout[i * d + l] * v[j * d + l];
            ds[i * n + j] = da;
            row += da * a[i * n + j];
          }
          for (std::size_t j = 0; j < n; ++j)
            ds[i * n + j] = a[i * n + j] * (ds[i * n + j] - row) * scale;
        }
        if (g.requires_grad(qv)) {
          Tensor& dq = g.grad(qv);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
              for (std::size_t l = 0; l < d; ++l) dq[i * d + l] += ds[i * n + j] * k[j * d + l];
        }
        if (g.requires_grad(kv)) {
          Tensor& dk = g.grad(kv);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
              for (std::size_t l = 0; l < d; ++l) dk[j * d + l] += ds[i * n + j] * q[i * d + l];
        }
      });
}

Var masked_mse(Graph& g, Var pv, const Tensor& target, const Tensor& mask, bool* empty_mask) {
  const Tensor& pred = g.value(pv);
  if (pred.shape() != target.shape())
    throw ShapeError("loss: prediction " + shape_string(pred.shape()) + " vs target " +
                     shape_string(target.shape()));
  require_rank(pred, 3, "loss");
  require_rank(mask, 3, "loss");
  const std::size_t c = pred.dim(0), plane = pred.dim(1) * pred.dim(2);
  const std::size_t m = mask.dim(0);
  if (mask.dim(1) != pred.dim(1) || mask.dim(2) != pred.dim(2) || m == 0 || c % m)
    throw ShapeError("loss: mask " + shape_string(mask.shape()) +
                     " does not broadcast over " + shape_string(pred.shape()));
  const std::size_t group = c / m;

  Real count = 0;
  Real sum = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const Real* mp = mask.raw() + (ch / group) * plane;
    const Real* pp = pred.raw() + ch * plane;
    const Real* tp = target.raw() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (mp[i] == Real(0)) continue;
      const Real diff = pp[i] - tp[i];
      sum += diff * diff;
      count += Real(1);
    }
  }
  if (empty_mask) *empty_mask = count == Real(0);
  const Real loss = count > 0 ? sum / count : Real(0);

  auto tgt = std::make_shared<Tensor>(target);
  auto msk = std::make_shared<Tensor>(mask);
  return g.record("loss", Tensor({1}, loss), {pv},
                  [pv, tgt, msk, c, plane, group, count](Graph& g, std::size_t self) {
                    if (count == Real(0)) return;
                    const Real scale = Real(2) * g.grad(Var{self})[0] / count;
                    const Tensor& pred = g.value(pv);
                    Tensor& dp = g.grad(pv);
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      const Real* mp = msk->raw() + (ch / group) * plane;
                      for (std::size_t i = 0; i < plane; ++i) {
                        if (mp[i] == Real(0)) continue;
                        const std::size_t idx = ch * plane + i;
                        dp[idx] += scale * (pred[idx] - (*tgt)[idx]);
                      }
                    }
                  });
}

}  // namespace ops
}  // namespace onestream
