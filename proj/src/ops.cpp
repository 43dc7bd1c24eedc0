#include "maga/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace maga {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::vector<double> buf(std::size_t n, double v = 0.0) { return std::vector<double>(n, v); }

Tensor make(Shape shape, std::vector<double> data) {
  return Tensor::from_data(std::move(shape), std::move(data));
}

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> y = buf(a.numel());
  const double *pa = a.ptr(), *pb = b.ptr();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] + pb[i];
  Tensor out = make(a.shape(), std::move(y));
  Graph* g = detail::common_graph({&a, &b});
  if (!g) return out;
  return g->record("add", std::move(out), {a.node(), b.node()},
                   [](const Tensor& go) { return std::vector<Tensor>{go, go}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "sub: shape mismatch");
  std::vector<double> y = buf(a.numel());
  const double *pa = a.ptr(), *pb = b.ptr();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] - pb[i];
  Tensor out = make(a.shape(), std::move(y));
  Graph* g = detail::common_graph({&a, &b});
  if (!g) return out;
  return g->record("sub", std::move(out), {a.node(), b.node()}, [](const Tensor& go) {
    std::vector<double> neg = buf(go.numel());
    for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -go[i];
    return std::vector<Tensor>{go, make(go.shape(), std::move(neg))};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "mul: shape mismatch");
  std::vector<double> y = buf(a.numel());
  const double *pa = a.ptr(), *pb = b.ptr();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] * pb[i];
  Tensor out = make(a.shape(), std::move(y));
  Graph* g = detail::common_graph({&a, &b});
  if (!g) return out;
  Tensor av = a.detached(), bv = b.detached();
  return g->record("mul", std::move(out), {a.node(), b.node()}, [av, bv](const Tensor& go) {
    std::vector<double> ga = buf(go.numel()), gb = buf(go.numel());
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] = go[i] * bv[i];
      gb[i] = go[i] * av[i];
    }
    return std::vector<Tensor>{make(av.shape(), std::move(ga)), make(bv.shape(), std::move(gb))};
  });
}

Tensor scale(const Tensor& a, double c) {
  require(std::isfinite(c), "scale: non-finite factor");
  std::vector<double> y = buf(a.numel());
  const double* pa = a.ptr();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] * c;
  Tensor out = make(a.shape(), std::move(y));
  Graph* g = detail::common_graph({&a});
  if (!g) return out;
  return g->record("scale", std::move(out), {a.node()}, [c](const Tensor& go) {
    std::vector<double> ga = buf(go.numel());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = go[i] * c;
    return std::vector<Tensor>{make(go.shape(), std::move(ga))};
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> y = buf(a.numel());
  const double* pa = a.ptr();
  for (std::size_t i = 0; i < y.size(); ++i) {
    double x = pa[i];
    y[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  Tensor out = make(a.shape(), std::move(y));
  Graph* g = detail::common_graph({&a});
  if (!g) return out;
  Tensor s = out.detached();
  return g->record("sigmoid", std::move(out), {a.node()}, [s](const Tensor& go) {
    std::vector<double> ga = buf(go.numel());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = go[i] * s[i] * (1.0 - s[i]);
    return std::vector<Tensor>{make(s.shape(), std::move(ga))};
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> y = buf(a.numel());
  const double* pa = a.ptr();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  Tensor out = make(a.shape(), std::move(y));
  Graph* g = detail::common_graph({&a});
  if (!g) return out;
  Tensor av = a.detached();
  return g->record("relu", std::move(out), {a.node()}, [av](const Tensor& go) {
    std::vector<double> ga = buf(go.numel());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = av[i] > 0.0 ? go[i] : 0.0;
    return std::vector<Tensor>{make(av.shape(), std::move(ga))};
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> y = buf(a.numel());
  const double* pa = a.ptr();
  for (std::size_t i = 0; i < y.size(); ++i) {
    double x = pa[i];
    y[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  Tensor out = make(a.shape(), std::move(y));
  Graph* g = detail::common_graph({&a});
  if (!g) return out;
  Tensor av = a.detached();
  return g->record("gelu", std::move(out), {a.node()}, [av](const Tensor& go) {
    std::vector<double> ga = buf(go.numel());
    for (std::size_t i = 0; i < ga.size(); ++i) {
      double x = av[i];
      double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      ga[i] = go[i] * (cdf + x * pdf);
    }
    return std::vector<Tensor>{make(av.shape(), std::move(ga))};
  });
}

// ---------------------------------------------------------------------------
// Shape / layout
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out = make(shape, std::vector<double>(a.vec()));
  Graph* g = detail::common_graph({&a});
  if (!g) return out;
  Shape orig = a.shape();
  return g->record("reshape", std::move(out), {a.node()}, [orig](const Tensor& go) {
    return std::vector<Tensor>{make(orig, std::vector<double>(go.vec()))};
  });
}

Tensor transpose2d(const Tensor& a) {
  require(a.rank() == 2, "transpose2d: expects a matrix");
  std::size_t m = a.extent(0), n = a.extent(1);
  std::vector<double> y = buf(a.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = a.ptr()[i * n + j];
  Tensor out = make({n, m}, std::move(y));
  Graph* g = detail::common_graph({&a});
  if (!g) return out;
  return g->record("transpose2d", std::move(out), {a.node()}, [m, n](const Tensor& go) {
    std::vector<double> ga = buf(m * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i) ga[i * n + j] = go.ptr()[j * m + i];
    return std::vector<Tensor>{make({m, n}, std::move(ga))};
  });
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  require(a.rank() == 2, "slice_cols: expects a matrix");
  std::size_t m = a.extent(0), n = a.extent(1);
  require(c0 < c1 && c1 <= n, "slice_cols: bad column range");
  std::size_t w = c1 - c0;
  std::vector<double> y = buf(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) y[i * w + j] = a.ptr()[i * n + c0 + j];
  Tensor out = make({m, w}, std::move(y));
  Graph* g = detail::common_graph({&a});
  if (!g) return out;
  return g->record("slice_cols", std::move(out), {a.node()}, [m, n, c0, w](const Tensor& go) {
    std::vector<double> ga = buf(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * n + c0 + j] = go.ptr()[i * w + j];
    return std::vector<Tensor>{make({m, n}, std::move(ga))};
  });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "concat_cols: empty input list");
  std::size_t m = xs[0].extent(0), total = 0;
  for (const Tensor& t : xs) {
    require(t.rank() == 2 && t.extent(0) == m, "concat_cols: row mismatch");
    total += t.extent(1);
  }
  std::vector<double> y = buf(m * total);
  std::size_t off = 0;
  for (const Tensor& t : xs) {
    std::size_t w = t.extent(1);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) y[i * total + off + j] = t.ptr()[i * w + j];
    off += w;
  }
  Tensor out = make({m, total}, std::move(y));
  std::vector<const Tensor*> ptrs;
  for (const Tensor& t : xs) ptrs.push_back(&t);
  Graph* g = nullptr;
  for (const Tensor* t : ptrs) {
    Graph* tg = detail::common_graph({t});
    if (tg) {
      require(g == nullptr || g == tg, "concat_cols: inputs from different graphs");
      g = tg;
    }
  }
  if (!g) return out;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (const Tensor& t : xs) {
    ids.push_back(t.node());
    widths.push_back(t.extent(1));
  }
  return g->record("concat_cols", std::move(out), std::move(ids), [m, total, widths](const Tensor& go) {
    std::vector<Tensor> grads;
    std::size_t off = 0;
    for (std::size_t w : widths) {
      std::vector<double> ga = buf(m * w);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) ga[i * w + j] = go.ptr()[i * total + off + j];
      grads.push_back(make({m, w}, std::move(ga)));
      off += w;
    }
    return grads;
  });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "concat_channels: empty input list");
  std::size_t h = xs[0].extent(1), w = xs[0].extent(2), total = 0;
  for (const Tensor& t : xs) {
    require(t.rank() == 3 && t.extent(1) == h && t.extent(2) == w, "concat_channels: spatial mismatch");
    total += t.extent(0);
  }
  std::vector<double> y;
  y.reserve(total * h * w);
  for (const Tensor& t : xs) y.insert(y.end(), t.vec().begin(), t.vec().end());
  Tensor out = make({total, h, w}, std::move(y));
  Graph* g = nullptr;
  for (const Tensor& t : xs) {
    Graph* tg = detail::common_graph({&t});
    if (tg) {
      require(g == nullptr || g == tg, "concat_channels: inputs from different graphs");
      g = tg;
    }
  }
  if (!g) return out;
  std::vector<int> ids;
  std::vector<std::size_t> chans;
  for (const Tensor& t : xs) {
    ids.push_back(t.node());
    chans.push_back(t.extent(0));
  }
  return g->record("concat_channels", std::move(out), std::move(ids), [h, w, chans](const Tensor& go) {
    std::vector<Tensor> grads;
    std::size_t off = 0;
    for (std::size_t c : chans) {
      std::vector<double> ga(go.vec().begin() + off * h * w, go.vec().begin() + (off + c) * h * w);
      grads.push_back(make({c, h, w}, std::move(ga)));
      off += c;
    }
    return grads;
  });
}

Tensor stack0(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "stack0: empty input list");
  const Shape& inner = xs[0].shape();
  for (const Tensor& t : xs) require(t.shape() == inner, "stack0: shape mismatch");
  Shape shape;
  shape.push_back(xs.size());
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> y;
  y.reserve(xs.size() * xs[0].numel());
  for (const Tensor& t : xs) y.insert(y.end(), t.vec().begin(), t.vec().end());
  Tensor out = make(std::move(shape), std::move(y));
  Graph* g = nullptr;
  for (const Tensor& t : xs) {
    Graph* tg = detail::common_graph({&t});
    if (tg) {
      require(g == nullptr || g == tg, "stack0: inputs from different graphs");
      g = tg;
    }
  }
  if (!g) return out;
  std::vector<int> ids;
  for (const Tensor& t : xs) ids.push_back(t.node());
  std::size_t stride = xs[0].numel();
  return g->record("stack0", std::move(out), std::move(ids), [stride, inner](const Tensor& go) {
    std::vector<Tensor> grads;
    for (std::size_t s = 0; s * stride < go.numel(); ++s) {
      std::vector<double> ga(go.vec().begin() + s * stride, go.vec().begin() + (s + 1) * stride);
      grads.push_back(make(inner, std::move(ga)));
    }
    return grads;
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) total += a[i];
  Tensor out = Tensor::scalar(total);
  Graph* g = detail::common_graph({&a});
  if (!g) return out;
  Shape orig = a.shape();
  return g->record("sum", std::move(out), {a.node()}, [orig](const Tensor& go) {
    return std::vector<Tensor>{Tensor::full(orig, go.item())};
  });
}

Tensor mean(const Tensor& a) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) total += a[i];
  double n = static_cast<double>(a.numel());
  Tensor out = Tensor::scalar(total / n);
  Graph* g = detail::common_graph({&a});
  if (!g) return out;
  Shape orig = a.shape();
  return g->record("mean", std::move(out), {a.node()}, [orig, n](const Tensor& go) {
    return std::vector<Tensor>{Tensor::full(orig, go.item() / n)};
  });
}

// ---------------------------------------------------------------------------
// Linear algebra / attention primitives
// ---------------------------------------------------------------------------

namespace {

// y[m x p] = a[m x n] * b[n x p], inner index ascending per output element.
std::vector<double> matmul_raw(const double* a, const double* b, std::size_t m, std::size_t n, std::size_t p) {
  std::vector<double> y(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      double aik = a[i * n + k];
      const double* brow = b + k * p;
      double* yrow = y.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) yrow[j] += aik * brow[j];
    }
  return y;
}

std::vector<double> matmul_bt_raw(const double* a, const double* b, std::size_t m, std::size_t n, std::size_t p) {
  // y[m x p] = a[m x n] * b^T where b is [p x n]
  std::vector<double> y(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += a[i * n + k] * b[j * n + k];
      y[i * p + j] = acc;
    }
  return y;
}

std::vector<double> matmul_at_raw(const double* a, const double* b, std::size_t m, std::size_t n, std::size_t p) {
  // y[n x p] = a^T * b where a is [m x n], b is [m x p]
  std::vector<double> y(n * p, 0.0);
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      double aki = a[k * n + i];
      const double* brow = b + k * p;
      double* yrow = y.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) yrow[j] += aki * brow[j];
    }
  return y;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: expects matrices");
  std::size_t m = a.extent(0), n = a.extent(1), p = b.extent(1);
  require(b.extent(0) == n,
          "matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out = make({m, p}, matmul_raw(a.ptr(), b.ptr(), m, n, p));
  Graph* g = detail::common_graph({&a, &b});
  if (!g) return out;
  Tensor av = a.detached(), bv = b.detached();
  return g->record("matmul", std::move(out), {a.node(), b.node()}, [av, bv, m, n, p](const Tensor& go) {
    Tensor ga = make({m, n}, matmul_bt_raw(go.ptr(), bv.ptr(), m, p, n));
    Tensor gb = make({n, p}, matmul_at_raw(av.ptr(), go.ptr(), m, n, p));
    return std::vector<Tensor>{ga, gb};
  });
}

Tensor softmax_rows(const Tensor& a) {
  require(a.rank() == 2, "softmax_rows: expects a matrix");
  std::size_t m = a.extent(0), n = a.extent(1);
  std::vector<double> y = buf(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.ptr() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[i * n + j] = std::exp(row[j] - mx);
      total += y[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] /= total;
  }
  Tensor out = make({m, n}, std::move(y));
  Graph* g = detail::common_graph({&a});
  if (!g) return out;
  Tensor s = out.detached();
  return g->record("softmax_rows", std::move(out), {a.node()}, [s, m, n](const Tensor& go) {
    std::vector<double> ga = buf(m * n);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += go.ptr()[i * n + j] * s.ptr()[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        ga[i * n + j] = s.ptr()[i * n + j] * (go.ptr()[i * n + j] - dot);
    }
    return std::vector<Tensor>{make(s.shape(), std::move(ga))};
  });
}

Tensor add_bias_row(const Tensor& x, const Tensor& bias) {
  require(x.rank() == 2 && bias.rank() == 1 && bias.extent(0) == x.extent(1),
          "add_bias_row: bias must match columns");
  std::size_t m = x.extent(0), n = x.extent(1);
  std::vector<double> y = buf(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x.ptr()[i * n + j] + bias[j];
  Tensor out = make(x.shape(), std::move(y));
  Graph* g = detail::common_graph({&x, &bias});
  if (!g) return out;
  return g->record("add_bias_row", std::move(out), {x.node(), bias.node()}, [m, n](const Tensor& go) {
    std::vector<double> gb = buf(n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gb[j] += go.ptr()[i * n + j];
    return std::vector<Tensor>{go, make({n}, std::move(gb))};
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require(x.rank() == 3 && bias.rank() == 1 && bias.extent(0) == x.extent(0),
          "add_channel_bias: bias must match channels");
  std::size_t c = x.extent(0), hw = x.extent(1) * x.extent(2);
  std::vector<double> y = buf(x.numel());
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < hw; ++i) y[ci * hw + i] = x.ptr()[ci * hw + i] + bias[ci];
  Tensor out = make(x.shape(), std::move(y));
  Graph* g = detail::common_graph({&x, &bias});
  if (!g) return out;
  return g->record("add_channel_bias", std::move(out), {x.node(), bias.node()}, [c, hw](const Tensor& go) {
    std::vector<double> gb = buf(c);
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < hw; ++i) gb[ci] += go.ptr()[ci * hw + i];
    return std::vector<Tensor>{go, make({c}, std::move(gb))};
  });
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  require(x.rank() == 4, "scale_channels: expects (B, C, H, W)");
  std::size_t b = x.extent(0), c = x.extent(1), hw = x.extent(2) * x.extent(3);
  require(s.rank() == 1 && s.extent(0) == b * c, "scale_channels: scale length must be B*C");
  std::vector<double> y = buf(x.numel());
  for (std::size_t bc = 0; bc < b * c; ++bc)
    for (std::size_t i = 0; i < hw; ++i) y[bc * hw + i] = x.ptr()[bc * hw + i] * s[bc];
  Tensor out = make(x.shape(), std::move(y));
  Graph* g = detail::common_graph({&x, &s});
  if (!g) return out;
  Tensor xv = x.detached(), sv = s.detached();
  return g->record("scale_channels", std::move(out), {x.node(), s.node()},
                   [xv, sv, b, c, hw](const Tensor& go) {
    std::vector<double> gx = buf(xv.numel()), gs = buf(b * c);
    for (std::size_t bc = 0; bc < b * c; ++bc) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        gx[bc * hw + i] = go.ptr()[bc * hw + i] * sv[bc];
        acc += go.ptr()[bc * hw + i] * xv.ptr()[bc * hw + i];
      }
      gs[bc] = acc;
    }
    return std::vector<Tensor>{make(xv.shape(), std::move(gx)), make({b * c}, std::move(gs))};
  });
}

// ---------------------------------------------------------------------------
// Max selection
// ---------------------------------------------------------------------------

MaxResult max_over_axis(const Tensor& x, std::size_t axis) {
  require(axis < x.rank(), "max_over_axis: axis out of range");
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1, n = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  std::vector<double> vals(outer * inner);
  std::vector<std::size_t> arg(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      std::size_t best = 0;
      double bv = x.ptr()[(o * n + 0) * inner + in];
      for (std::size_t t = 1; t < n; ++t) {
        double v = x.ptr()[(o * n + t) * inner + in];
        if (v > bv) {  // strict: ties keep the lowest index
          bv = v;
          best = t;
        }
      }
      vals[o * inner + in] = bv;
      arg[o * inner + in] = best;
    }
  Tensor out = make(out_shape, std::move(vals));
  Graph* g = detail::common_graph({&x});
  if (!g) return MaxResult{std::move(out), std::move(arg)};
  Shape xshape = x.shape();
  std::vector<std::size_t> argc = arg;
  Tensor tracked = g->record("max_over_axis", std::move(out), {x.node()},
                             [xshape, argc, outer, inner, n](const Tensor& go) {
    std::vector<double> gx(shape_numel(xshape), 0.0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        std::size_t t = argc[o * inner + in];
        gx[(o * n + t) * inner + in] = go.ptr()[o * inner + in];
      }
    return std::vector<Tensor>{make(xshape, std::move(gx))};
  });
  return MaxResult{std::move(tracked), std::move(arg)};
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

ActiveSiteMask::ActiveSiteMask(std::size_t h, std::size_t w, std::vector<std::uint8_t> active)
    : h_(h), w_(w), active_(std::move(active)) {
  if (active_.size() != h_ * w_) throw std::invalid_argument("mask: size does not match H*W");
}

ActiveSiteMask ActiveSiteMask::all_active(std::size_t h, std::size_t w) {
  return ActiveSiteMask(h, w, std::vector<std::uint8_t>(h * w, 1));
}

ActiveSiteMask ActiveSiteMask::all_inactive(std::size_t h, std::size_t w) {
  return ActiveSiteMask(h, w, std::vector<std::uint8_t>(h * w, 0));
}

Tensor conv2d_sparse(const Tensor& x, const Tensor& w, const ActiveSiteMask& mask) {
  require(x.rank() == 3 && w.rank() == 4, "conv2d_sparse: expects x (C,H,W), w (C',C,kh,kw)");
  std::size_t c = x.extent(0), h = x.extent(1), wid = x.extent(2);
  std::size_t co = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  require(w.extent(1) == c, "conv2d_sparse: channel mismatch");
  require(kh % 2 == 1 && kw % 2 == 1, "conv2d_sparse: kernel extents must be odd");
  require(mask.height() == h && mask.width() == wid, "conv2d_sparse: mask size mismatch");
  std::size_t ph = kh / 2, pw = kw / 2;

  std::vector<double> y = buf(co * h * wid);
  for (std::size_t oc = 0; oc < co; ++oc)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < wid; ++j) {
        if (!mask.active(i, j)) continue;
        double acc = 0.0;
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t u = 0; u < kh; ++u) {
            std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u) - static_cast<std::ptrdiff_t>(ph);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + v) - static_cast<std::ptrdiff_t>(pw);
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(wid)) continue;
              if (!mask.active(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj))) continue;
              acc += w.ptr()[((oc * c + ic) * kh + u) * kw + v] *
                     x.ptr()[(ic * h + static_cast<std::size_t>(ii)) * wid + static_cast<std::size_t>(jj)];
            }
          }
        y[(oc * h + i) * wid + j] = acc;
      }
  Tensor out = make({co, h, wid}, std::move(y));
  Graph* g = detail::common_graph({&x, &w});
  if (!g) return out;
  Tensor xv = x.detached(), wv = w.detached();
  ActiveSiteMask mk = mask;
  return g->record("conv2d_sparse", std::move(out), {x.node(), w.node()},
                   [xv, wv, mk, c, h, wid, co, kh, kw, ph, pw](const Tensor& go) {
    std::vector<double> gx = buf(xv.numel()), gw = buf(wv.numel());
    for (std::size_t oc = 0; oc < co; ++oc)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < wid; ++j) {
          if (!mk.active(i, j)) continue;
          double gout = go.ptr()[(oc * h + i) * wid + j];
          if (gout == 0.0) continue;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t u = 0; u < kh; ++u) {
              std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u) - static_cast<std::ptrdiff_t>(ph);
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t v = 0; v < kw; ++v) {
                std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + v) - static_cast<std::ptrdiff_t>(pw);
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(wid)) continue;
                if (!mk.active(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj))) continue;
                std::size_t xi = (ic * h + static_cast<std::size_t>(ii)) * wid + static_cast<std::size_t>(jj);
                std::size_t wi = ((oc * c + ic) * kh + u) * kw + v;
                gx[xi] += gout * wv.ptr()[wi];
                gw[wi] += gout * xv.ptr()[xi];
              }
            }
        }
    return std::vector<Tensor>{make(xv.shape(), std::move(gx)), make(wv.shape(), std::move(gw))};
  });
}

Tensor conv2d_sparse_depthwise(const Tensor& x, const Tensor& w, const ActiveSiteMask& mask) {
  require(x.rank() == 3 && w.rank() == 3, "conv2d_sparse_depthwise: expects x (C,H,W), w (C,kh,kw)");
  std::size_t c = x.extent(0), h = x.extent(1), wid = x.extent(2);
  std::size_t kh = w.extent(1), kw = w.extent(2);
  require(w.extent(0) == c, "conv2d_sparse_depthwise: channel mismatch");
  require(kh % 2 == 1 && kw % 2 == 1, "conv2d_sparse_depthwise: kernel extents must be odd");
  require(mask.height() == h && mask.width() == wid, "conv2d_sparse_depthwise: mask size mismatch");
  std::size_t ph = kh / 2, pw = kw / 2;

  std::vector<double> y = buf(x.numel());
  for (std::size_t ic = 0; ic < c; ++ic)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < wid; ++j) {
        if (!mask.active(i, j)) continue;
        double acc = 0.0;
        for (std::size_t u = 0; u < kh; ++u) {
          std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u) - static_cast<std::ptrdiff_t>(ph);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t v = 0; v < kw; ++v) {
            std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + v) - static_cast<std::ptrdiff_t>(pw);
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(wid)) continue;
            if (!mask.active(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj))) continue;
            acc += w.ptr()[(ic * kh + u) * kw + v] *
                   x.ptr()[(ic * h + static_cast<std::size_t>(ii)) * wid + static_cast<std::size_t>(jj)];
          }
        }
        y[(ic * h + i) * wid + j] = acc;
      }
  Tensor out = make(x.shape(), std::move(y));
  Graph* g = detail::common_graph({&x, &w});
  if (!g) return out;
  Tensor xv = x.detached(), wv = w.detached();
  ActiveSiteMask mk = mask;
  return g->record("conv2d_sparse_depthwise", std::move(out), {x.node(), w.node()},
                   [xv, wv, mk, c, h, wid, kh, kw, ph, pw](const Tensor& go) {
    std::vector<double> gx = buf(xv.numel()), gw = buf(wv.numel());
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < wid; ++j) {
          if (!mk.active(i, j)) continue;
          double gout = go.ptr()[(ic * h + i) * wid + j];
          if (gout == 0.0) continue;
          for (std::size_t u = 0; u < kh; ++u) {
            std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u) - static_cast<std::ptrdiff_t>(ph);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + v) - static_cast<std::ptrdiff_t>(pw);
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(wid)) continue;
              if (!mk.active(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj))) continue;
              std::size_t xi = (ic * h + static_cast<std::size_t>(ii)) * wid + static_cast<std::size_t>(jj);
              std::size_t wi = (ic * kh + u) * kw + v;
              gx[xi] += gout * wv.ptr()[wi];
              gw[wi] += gout * xv.ptr()[xi];
            }
          }
        }
    return std::vector<Tensor>{make(xv.shape(), std::move(gx)), make(wv.shape(), std::move(gw))};
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  require(x.rank() == 3 && w.rank() == 4, "conv2d: expects x (C,H,W), w (C',C,kh,kw)");
  require(stride >= 1, "conv2d: stride must be positive");
  std::size_t c = x.extent(0), h = x.extent(1), wid = x.extent(2);
  std::size_t co = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  require(w.extent(1) == c, "conv2d: channel mismatch");
  require(h + 2 * pad >= kh && wid + 2 * pad >= kw, "conv2d: kernel larger than padded input");
  std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  std::size_t wo = (wid + 2 * pad - kw) / stride + 1;

  std::vector<double> y = buf(co * ho * wo);
  for (std::size_t oc = 0; oc < co; ++oc)
    for (std::size_t oi = 0; oi < ho; ++oi)
      for (std::size_t oj = 0; oj < wo; ++oj) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t u = 0; u < kh; ++u) {
            std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + u) - static_cast<std::ptrdiff_t>(pad);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + v) - static_cast<std::ptrdiff_t>(pad);
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(wid)) continue;
              acc += w.ptr()[((oc * c + ic) * kh + u) * kw + v] *
                     x.ptr()[(ic * h + static_cast<std::size_t>(ii)) * wid + static_cast<std::size_t>(jj)];
            }
          }
        y[(oc * ho + oi) * wo + oj] = acc;
      }
  Tensor out = make({co, ho, wo}, std::move(y));
  Graph* g = detail::common_graph({&x, &w});
  if (!g) return out;
  Tensor xv = x.detached(), wv = w.detached();
  return g->record("conv2d", std::move(out), {x.node(), w.node()},
                   [xv, wv, c, h, wid, co, kh, kw, stride, pad, ho, wo](const Tensor& go) {
    std::vector<double> gx = buf(xv.numel()), gw = buf(wv.numel());
    for (std::size_t oc = 0; oc < co; ++oc)
      for (std::size_t oi = 0; oi < ho; ++oi)
        for (std::size_t oj = 0; oj < wo; ++oj) {
          double gout = go.ptr()[(oc * ho + oi) * wo + oj];
          if (gout == 0.0) continue;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t u = 0; u < kh; ++u) {
              std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + u) - static_cast<std::ptrdiff_t>(pad);
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t v = 0; v < kw; ++v) {
                std::ptrdiff_t jj =
                    static_cast<std::ptrdiff_t>(oj * stride + v) - static_cast<std::ptrdiff_t>(pad);
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(wid)) continue;
                std::size_t xi = (ic * h + static_cast<std::size_t>(ii)) * wid + static_cast<std::size_t>(jj);
                std::size_t wi = ((oc * c + ic) * kh + u) * kw + v;
                gx[xi] += gout * wv.ptr()[wi];
                gw[wi] += gout * xv.ptr()[xi];
              }
            }
        }
    return std::vector<Tensor>{make(xv.shape(), std::move(gx)), make(wv.shape(), std::move(gw))};
  });
}

Tensor conv1d_channels(const Tensor& x, const Tensor& w) {
  require(x.rank() == 1 && w.rank() == 1, "conv1d_channels: expects rank-1 tensors");
  std::size_t l = x.extent(0), k = w.extent(0);
  require(k % 2 == 1, "conv1d_channels: kernel length must be odd");
  std::size_t p = k / 2;
  std::vector<double> y = buf(l);
  for (std::size_t i = 0; i < l; ++i) {
    double acc = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + t) - static_cast<std::ptrdiff_t>(p);
      if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(l)) continue;
      acc += w[t] * x[static_cast<std::size_t>(ii)];
    }
    y[i] = acc;
  }
  Tensor out = make({l}, std::move(y));
  Graph* g = detail::common_graph({&x, &w});
  if (!g) return out;
  Tensor xv = x.detached(), wv = w.detached();
  return g->record("conv1d_channels", std::move(out), {x.node(), w.node()}, [xv, wv, l, k, p](const Tensor& go) {
    std::vector<double> gx = buf(l), gw = buf(k);
    for (std::size_t i = 0; i < l; ++i) {
      double gout = go[i];
      for (std::size_t t = 0; t < k; ++t) {
        std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + t) - static_cast<std::ptrdiff_t>(p);
        if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(l)) continue;
        gx[static_cast<std::size_t>(ii)] += gout * wv[t];
        gw[t] += gout * xv[static_cast<std::size_t>(ii)];
      }
    }
    return std::vector<Tensor>{make({l}, std::move(gx)), make({k}, std::move(gw))};
  });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

InstanceNormResult instance_norm(const Tensor& x, double eps) {
  require(x.rank() == 3 || x.rank() == 4, "instance_norm: expects (C,H,W) or (B,C,H,W)");
  std::size_t b = x.rank() == 4 ? x.extent(0) : 1;
  std::size_t c = x.rank() == 4 ? x.extent(1) : x.extent(0);
  std::size_t hw = x.extent(x.rank() - 2) * x.extent(x.rank() - 1);
  require(hw >= 2, "instance_norm: spatial size must be at least 2");

  std::vector<double> y = buf(x.numel()), means = buf(b * c), stds = buf(b * c);
  for (std::size_t bc = 0; bc < b * c; ++bc) {
    const double* slab = x.ptr() + bc * hw;
    double mu = 0.0;
    for (std::size_t i = 0; i < hw; ++i) mu += slab[i];
    mu /= static_cast<double>(hw);
    double var = 0.0;
    for (std::size_t i = 0; i < hw; ++i) var += (slab[i] - mu) * (slab[i] - mu);
    var /= static_cast<double>(hw);
    double sd = std::sqrt(var + eps);
    means[bc] = mu;
    stds[bc] = sd;
    for (std::size_t i = 0; i < hw; ++i) y[bc * hw + i] = (slab[i] - mu) / sd;
  }
  Shape stat_shape = {b * c};
  if (x.rank() == 3) stat_shape = {c};

  Tensor yt = make(x.shape(), std::move(y));
  Tensor mt = make(stat_shape, std::move(means));
  Tensor st = make(stat_shape, std::move(stds));
  Graph* g = detail::common_graph({&x});
  if (!g) return InstanceNormResult{std::move(yt), std::move(mt), std::move(st)};

  Tensor xhat = yt.detached();
  Tensor sd = st.detached();
  std::size_t n_bc = b * c;
  Tensor ytr = g->record("instance_norm", std::move(yt), {x.node()},
                         [xhat, sd, n_bc, hw](const Tensor& go) {
    std::vector<double> gx = buf(xhat.numel());
    double n = static_cast<double>(hw);
    for (std::size_t bc = 0; bc < n_bc; ++bc) {
      const double* gslab = go.ptr() + bc * hw;
      const double* hslab = xhat.ptr() + bc * hw;
      double gmean = 0.0, ghmean = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        gmean += gslab[i];
        ghmean += gslab[i] * hslab[i];
      }
      gmean /= n;
      ghmean /= n;
      for (std::size_t i = 0; i < hw; ++i)
        gx[bc * hw + i] = (gslab[i] - gmean - hslab[i] * ghmean) / sd[bc];
    }
    return std::vector<Tensor>{make(xhat.shape(), std::move(gx))};
  });
  Tensor mtr = g->record("instance_norm_mean", std::move(mt), {x.node()}, [n_bc, hw, xhat](const Tensor& go) {
    std::vector<double> gx = buf(xhat.numel());
    double n = static_cast<double>(hw);
    for (std::size_t bc = 0; bc < n_bc; ++bc)
      for (std::size_t i = 0; i < hw; ++i) gx[bc * hw + i] = go[bc] / n;
    return std::vector<Tensor>{make(xhat.shape(), std::move(gx))};
  });
  Tensor str = g->record("instance_norm_std", std::move(st), {x.node()}, [n_bc, hw, xhat](const Tensor& go) {
    std::vector<double> gx = buf(xhat.numel());
    double n = static_cast<double>(hw);
    for (std::size_t bc = 0; bc < n_bc; ++bc)
      for (std::size_t i = 0; i < hw; ++i) gx[bc * hw + i] = go[bc] * xhat.ptr()[bc * hw + i] / n;
    return std::vector<Tensor>{make(xhat.shape(), std::move(gx))};
  });
  return InstanceNormResult{std::move(ytr), std::move(mtr), std::move(str)};
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require(x.rank() == 2, "layer_norm: expects (N, D) tokens");
  std::size_t n = x.extent(0), d = x.extent(1);
  require(gamma.rank() == 1 && gamma.extent(0) == d, "layer_norm: gamma must have length D");
  require(beta.rank() == 1 && beta.extent(0) == d, "layer_norm: beta must have length D");
  require(d >= 2, "layer_norm: D must be at least 2");

  std::vector<double> y = buf(n * d), hat = buf(n * d), sds = buf(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.ptr() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    double sd = std::sqrt(var + eps);
    sds[i] = sd;
    for (std::size_t j = 0; j < d; ++j) {
      hat[i * d + j] = (row[j] - mu) / sd;
      y[i * d + j] = gamma[j] * hat[i * d + j] + beta[j];
    }
  }
  Tensor out = make(x.shape(), std::move(y));
  Graph* g = detail::common_graph({&x, &gamma, &beta});
  if (!g) return out;
  Tensor gv = gamma.detached();
  Tensor hatt = make(x.shape(), std::move(hat));
  Tensor sdt = make({n}, std::move(sds));
  return g->record("layer_norm", std::move(out), {x.node(), gamma.node(), beta.node()},
                   [gv, hatt, sdt, n, d](const Tensor& go) {
    std::vector<double> gx = buf(n * d), gg = buf(d), gb = buf(d);
    double dd = static_cast<double>(d);
    for (std::size_t i = 0; i < n; ++i) {
      const double* grow = go.ptr() + i * d;
      const double* hrow = hatt.ptr() + i * d;
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double gh = grow[j] * gv[j];
        m1 += gh;
        m2 += gh * hrow[j];
        gg[j] += grow[j] * hrow[j];
        gb[j] += grow[j];
      }
      m1 /= dd;
      m2 /= dd;
      for (std::size_t j = 0; j < d; ++j) {
        double gh = grow[j] * gv[j];
        gx[i * d + j] = (gh - m1 - hrow[j] * m2) / sdt[i];
      }
    }
    return std::vector<Tensor>{make({n, d}, std::move(gx)), make({d}, std::move(gg)),
                               make({d}, std::move(gb))};
  });
}

// ---------------------------------------------------------------------------
// Resampling & patch layout
// ---------------------------------------------------------------------------

namespace {

struct LinTap {
  std::size_t i0, i1;
  double f;  // weight of i1; (1 - f) goes to i0
};

std::vector<LinTap> bilinear_taps(std::size_t in_extent) {
  std::vector<LinTap> taps(2 * in_extent);
  for (std::size_t o = 0; o < 2 * in_extent; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    double f = src - static_cast<double>(i0);
    std::size_t i1 = std::min(i0 + 1, in_extent - 1);
    taps[o] = LinTap{i0, i1, f};
  }
  return taps;
}

}  // namespace

Tensor upsample2_bilinear(const Tensor& x) {
  require(x.rank() == 3, "upsample2_bilinear: expects (C, H, W)");
  std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  std::vector<LinTap> ti = bilinear_taps(h), tj = bilinear_taps(w);
  std::vector<double> y = buf(c * 4 * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oi = 0; oi < 2 * h; ++oi)
      for (std::size_t oj = 0; oj < 2 * w; ++oj) {
        const LinTap &a = ti[oi], &b = tj[oj];
        const double* base = x.ptr() + ch * h * w;
        double v = (1 - a.f) * (1 - b.f) * base[a.i0 * w + b.i0] +
                   (1 - a.f) * b.f * base[a.i0 * w + b.i1] +
                   a.f * (1 - b.f) * base[a.i1 * w + b.i0] +
                   a.f * b.f * base[a.i1 * w + b.i1];
        y[(ch * 2 * h + oi) * 2 * w + oj] = v;
      }
  Tensor out = make({c, 2 * h, 2 * w}, std::move(y));
  Graph* g = detail::common_graph({&x});
  if (!g) return out;
  return g->record("upsample2_bilinear", std::move(out), {x.node()}, [c, h, w, ti, tj](const Tensor& go) {
    std::vector<double> gx = buf(c * h * w);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t oi = 0; oi < 2 * h; ++oi)
        for (std::size_t oj = 0; oj < 2 * w; ++oj) {
          const LinTap &a = ti[oi], &b = tj[oj];
          double gv = go.ptr()[(ch * 2 * h + oi) * 2 * w + oj];
          double* base = gx.data() + ch * h * w;
          base[a.i0 * w + b.i0] += (1 - a.f) * (1 - b.f) * gv;
          base[a.i0 * w + b.i1] += (1 - a.f) * b.f * gv;
          base[a.i1 * w + b.i0] += a.f * (1 - b.f) * gv;
          base[a.i1 * w + b.i1] += a.f * b.f * gv;
        }
    return std::vector<Tensor>{make({c, h, w}, std::move(gx))};
  });
}

Tensor upsample2_nearest(const Tensor& x) {
  require(x.rank() == 3, "upsample2_nearest: expects (C, H, W)");
  std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  std::vector<double> y = buf(c * 4 * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oi = 0; oi < 2 * h; ++oi)
      for (std::size_t oj = 0; oj < 2 * w; ++oj)
        y[(ch * 2 * h + oi) * 2 * w + oj] = x.ptr()[(ch * h + oi / 2) * w + oj / 2];
  Tensor out = make({c, 2 * h, 2 * w}, std::move(y));
  Graph* g = detail::common_graph({&x});
  if (!g) return out;
  return g->record("upsample2_nearest", std::move(out), {x.node()}, [c, h, w](const Tensor& go) {
    std::vector<double> gx = buf(c * h * w);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t oi = 0; oi < 2 * h; ++oi)
        for (std::size_t oj = 0; oj < 2 * w; ++oj)
          gx[(ch * h + oi / 2) * w + oj / 2] += go.ptr()[(ch * 2 * h + oi) * 2 * w + oj];
    return std::vector<Tensor>{make({c, h, w}, std::move(gx))};
  });
}

Tensor extract_patches(const Tensor& x, std::size_t s) {
  require(x.rank() == 3, "extract_patches: expects (C, H, W)");
  std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  require(s >= 1 && h % s == 0 && w % s == 0, "extract_patches: patch size must divide H and W");
  std::size_t gh = h / s, gw = w / s, n = gh * gw, m = c * s * s;
  std::vector<double> y = buf(n * m);
  for (std::size_t pi = 0; pi < gh; ++pi)
    for (std::size_t pj = 0; pj < gw; ++pj) {
      std::size_t t = pi * gw + pj;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t u = 0; u < s; ++u)
          for (std::size_t v = 0; v < s; ++v)
            y[t * m + (ch * s + u) * s + v] = x.ptr()[(ch * h + pi * s + u) * w + pj * s + v];
    }
  Tensor out = make({n, m}, std::move(y));
  Graph* g = detail::common_graph({&x});
  if (!g) return out;
  return g->record("extract_patches", std::move(out), {x.node()}, [c, h, w, s, gh, gw, m](const Tensor& go) {
    std::vector<double> gx = buf(c * h * w);
    for (std::size_t pi = 0; pi < gh; ++pi)
      for (std::size_t pj = 0; pj < gw; ++pj) {
        std::size_t t = pi * gw + pj;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t u = 0; u < s; ++u)
            for (std::size_t v = 0; v < s; ++v)
              gx[(ch * h + pi * s + u) * w + pj * s + v] = go.ptr()[t * m + (ch * s + u) * s + v];
      }
    return std::vector<Tensor>{make({c, h, w}, std::move(gx))};
  });
}

Tensor tokens_to_map(const Tensor& tokens, std::size_t hp, std::size_t wp) {
  require(tokens.rank() == 2, "tokens_to_map: expects (N, D) tokens");
  std::size_t n = tokens.extent(0), d = tokens.extent(1);
  require(n == hp * wp, "tokens_to_map: N must equal Hp*Wp, got " + std::to_string(n) + " vs " +
                            std::to_string(hp) + "*" + std::to_string(wp));
  std::vector<double> y = buf(n * d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t ch = 0; ch < d; ++ch) y[ch * n + t] = tokens.ptr()[t * d + ch];
  Tensor out = make({d, hp, wp}, std::move(y));
  Graph* g = detail::common_graph({&tokens});
  if (!g) return out;
  return g->record("tokens_to_map", std::move(out), {tokens.node()}, [n, d](const Tensor& go) {
    std::vector<double> gt = buf(n * d);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t ch = 0; ch < d; ++ch) gt[t * d + ch] = go.ptr()[ch * n + t];
    return std::vector<Tensor>{make({n, d}, std::move(gt))};
  });
}

Tensor map_to_tokens(const Tensor& map) {
  require(map.rank() == 3, "map_to_tokens: expects (D, Hp, Wp)");
  std::size_t d = map.extent(0), n = map.extent(1) * map.extent(2);
  std::vector<double> y = buf(n * d);
  for (std::size_t ch = 0; ch < d; ++ch)
    for (std::size_t t = 0; t < n; ++t) y[t * d + ch] = map.ptr()[ch * n + t];
  Tensor out = make({n, d}, std::move(y));
  Graph* g = detail::common_graph({&map});
  if (!g) return out;
  Shape mshape = map.shape();
  return g->record("map_to_tokens", std::move(out), {map.node()}, [n, d, mshape](const Tensor& go) {
    std::vector<double> gm = buf(n * d);
    for (std::size_t ch = 0; ch < d; ++ch)
      for (std::size_t t = 0; t < n; ++t) gm[ch * n + t] = go.ptr()[t * d + ch];
    return std::vector<Tensor>{make(mshape, std::move(gm))};
  });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor masked_l1(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  require(pred.same_shape(gt) && pred.same_shape(mask), "masked_l1: shape mismatch");
  require(!mask.tracked(), "masked_l1: mask must be a constant");
  std::size_t n = pred.numel();
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i] > 0.0) ++count;
  bool empty = count == 0;
  double denom = static_cast<double>(empty ? n : count);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = empty ? 1.0 : (mask[i] > 0.0 ? 1.0 : 0.0);
    total += m * std::abs(pred[i] - gt[i]);
  }
  Tensor out = Tensor::scalar(total / denom);
  Graph* g = detail::common_graph({&pred, &gt});
  if (!g) return out;
  Tensor pv = pred.detached(), gv = gt.detached(), mv = mask.detached();
  return g->record("masked_l1", std::move(out), {pred.node(), gt.node()},
                   [pv, gv, mv, n, empty, denom](const Tensor& go) {
    std::vector<double> gp = buf(n);
    double s = go.item() / denom;
    for (std::size_t i = 0; i < n; ++i) {
      double m = empty ? 1.0 : (mv[i] > 0.0 ? 1.0 : 0.0);
      gp[i] = s * m * sign0(pv[i] - gv[i]);
    }
    std::vector<double> gg = buf(n);
    for (std::size_t i = 0; i < n; ++i) gg[i] = -gp[i];
    return std::vector<Tensor>{make(pv.shape(), std::move(gp)), make(gv.shape(), std::move(gg))};
  });
}

Tensor composition_l1(const Tensor& alpha, const Tensor& fg, const Tensor& bg, const Tensor& image) {
  require(alpha.rank() == 3 && alpha.extent(0) == 1, "composition_l1: alpha must be (1, H, W)");
  std::size_t h = alpha.extent(1), w = alpha.extent(2), hw = h * w;
  for (const Tensor* t : {&fg, &bg, &image}) {
    require(t->rank() == 3 && t->extent(0) == 3 && t->extent(1) == h && t->extent(2) == w,
            "composition_l1: fg/bg/image must be (3, H, W)");
    require(!t->tracked(), "composition_l1: fg/bg/image must be constants");
  }
  double total = 0.0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i) {
      double r = alpha[i] * (fg[c * hw + i] - bg[c * hw + i]) + bg[c * hw + i] - image[c * hw + i];
      total += std::abs(r);
    }
  double denom = 3.0 * static_cast<double>(hw);
  Tensor out = Tensor::scalar(total / denom);
  Graph* g = detail::common_graph({&alpha});
  if (!g) return out;
  Tensor av = alpha.detached(), fv = fg.detached(), bv = bg.detached(), iv = image.detached();
  return g->record("composition_l1", std::move(out), {alpha.node()}, [av, fv, bv, iv, hw, denom](const Tensor& go) {
    std::vector<double> ga = buf(hw);
    double s = go.item() / denom;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < hw; ++i) {
        double diff = fv[c * hw + i] - bv[c * hw + i];
        double r = av[i] * diff + bv[c * hw + i] - iv[c * hw + i];
        ga[i] += s * sign0(r) * diff;
      }
    return std::vector<Tensor>{make(av.shape(), std::move(ga))};
  });
}

}  // namespace maga
