#include "maskpose/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Core>

#include "maskpose/errors.hpp"

namespace maskpose::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const char* what) {
  if (!ok) throw InvalidArgument(what);
}

// cols[(c*k + ky)*k + kx, y*W + x] = x[c, y + ky - p, x + kx - p] (zero outside)
void im2col(const double* x, int channels, int h, int w, int k, double* cols) {
  const int p = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * hw;
        const int dx = kx - p;
        const int x_begin = std::max(0, -dx), x_end = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          double* dst = row + static_cast<std::size_t>(y) * w;
          const int sy = y + ky - p;
          if (sy < 0 || sy >= h || x_begin >= x_end) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * h + sy) * w;
          std::fill(dst, dst + x_begin, 0.0);
          std::memcpy(dst + x_begin, src + x_begin + dx,
                      sizeof(double) * static_cast<std::size_t>(x_end - x_begin));
          std::fill(dst + x_end, dst + w, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* cols, int channels, int h, int w, int k, double* dx_out) {
  const int p = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * hw;
        const int dx = kx - p;
        const int x_begin = std::max(0, -dx), x_end = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - p;
          if (sy < 0 || sy >= h) continue;
          const double* src = row + static_cast<std::size_t>(y) * w;
          double* dst = dx_out + (static_cast<std::size_t>(c) * h + sy) * w;
          for (int xx = x_begin; xx < x_end; ++xx) dst[xx + dx] += src[xx];
        }
      }
    }
  }
}

double sigmoid_of(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Graph::make_output(Tensor value, std::initializer_list<const Var*> inputs) {
  auto out = std::make_shared<Node>();
  out->value = std::move(value);
  for (const Var* in : inputs) out->requires_grad = out->requires_grad || (*in)->requires_grad;
  return out;
}

void Graph::record(const Var& out, BackwardFn fn) {
  if (!record_ || !out->requires_grad) return;
  tape_.emplace_back([out, fn = std::move(fn)] {
    if (out->grad.size() == 0) return;
    fn(out->grad);
  });
}

Var Graph::conv2d(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x->value;
  const Tensor& wv = weight->value;
  require(xv.rank() == 3 && wv.rank() == 4, "conv2d: expected x [C,H,W] and weight [O,C,k,k]");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const int o = wv.dim(0), k = wv.dim(2);
  require(wv.dim(1) == c && wv.dim(3) == k && k % 2 == 1, "conv2d: weight shape mismatch");
  require(bias->value.size() == static_cast<std::size_t>(o), "conv2d: bias size mismatch");
  const int hw = h * w;
  const int ckk = c * k * k;

  auto cols = std::make_shared<Storage>();
  const double* col_ptr = xv.data();
  if (k > 1) {
    cols->resize(static_cast<std::size_t>(ckk) * hw);
    im2col(xv.data(), c, h, w, k, cols->data());
    col_ptr = cols->data();
  }
  Tensor out({o, h, w});
  MapMat om(out.data(), o, hw);
  om.noalias() = ConstMapMat(wv.data(), o, ckk) * ConstMapMat(col_ptr, ckk, hw);
  om.colwise() += Eigen::Map<const Eigen::VectorXd>(bias->value.data(), o);

  Var y = make_output(std::move(out), {&x, &weight, &bias});
  record(y, [x, weight, bias, cols, c, h, w, o, k, hw, ckk](const Tensor& g) {
    ConstMapMat gm(g.data(), o, hw);
    const double* col_ptr = k > 1 ? cols->data() : x->value.data();
    if (weight->requires_grad) {
      MapMat(weight->grad_buffer().data(), o, ckk).noalias() += gm * ConstMapMat(col_ptr, ckk, hw).transpose();
    }
    if (bias->requires_grad) {
      Eigen::Map<Eigen::VectorXd>(bias->grad_buffer().data(), o) += gm.rowwise().sum();
    }
    if (x->requires_grad) {
      if (k == 1) {
        MapMat(x->grad_buffer().data(), ckk, hw).noalias() +=
            ConstMapMat(weight->value.data(), o, ckk).transpose() * gm;
      } else {
        RowMat dcols = ConstMapMat(weight->value.data(), o, ckk).transpose() * gm;
        col2im_add(dcols.data(), c, h, w, k, x->grad_buffer().data());
      }
    }
  });
  return y;
}

Var Graph::pointwise(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x->value;
  const Tensor& wv = weight->value;
  require(xv.rank() == 2 && wv.rank() == 2 && wv.dim(1) == xv.dim(0),
          "pointwise: expected x [C,N] and weight [O,C]");
  const int c = xv.dim(0), n = xv.dim(1), o = wv.dim(0);
  require(bias->value.size() == static_cast<std::size_t>(o), "pointwise: bias size mismatch");
  Tensor out({o, n});
  MapMat om(out.data(), o, n);
  om.noalias() = ConstMapMat(wv.data(), o, c) * ConstMapMat(xv.data(), c, n);
  om.colwise() += Eigen::Map<const Eigen::VectorXd>(bias->value.data(), o);
  Var y = make_output(std::move(out), {&x, &weight, &bias});
  record(y, [x, weight, bias, c, n, o](const Tensor& g) {
    ConstMapMat gm(g.data(), o, n);
    if (weight->requires_grad) {
      MapMat(weight->grad_buffer().data(), o, c).noalias() +=
          gm * ConstMapMat(x->value.data(), c, n).transpose();
    }
    if (bias->requires_grad) {
      Eigen::Map<Eigen::VectorXd>(bias->grad_buffer().data(), o) += gm.rowwise().sum();
    }
    if (x->requires_grad) {
      MapMat(x->grad_buffer().data(), c, n).noalias() +=
          ConstMapMat(weight->value.data(), o, c).transpose() * gm;
    }
  });
  return y;
}

Var Graph::avg_pool2(const Var& x) {
  const Tensor& xv = x->value;
  require(xv.rank() == 3 && xv.dim(1) % 2 == 0 && xv.dim(2) % 2 == 0,
          "avg_pool2: expected [C,H,W] with even H and W");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2), h2 = h / 2, w2 = w / 2;
  Tensor out({c, h2, w2});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h2; ++y) {
      const double* r0 = xv.data() + (static_cast<std::size_t>(ch) * h + 2 * y) * w;
      const double* r1 = r0 + w;
      double* dst = out.data() + (static_cast<std::size_t>(ch) * h2 + y) * w2;
      for (int xx = 0; xx < w2; ++xx) {
        dst[xx] = 0.25 * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
      }
    }
  }
  Var y = make_output(std::move(out), {&x});
  record(y, [x, c, h, w, h2, w2](const Tensor& g) {
    double* gx = x->grad_buffer().data();
    for (int ch = 0; ch < c; ++ch) {
      for (int yy = 0; yy < h2; ++yy) {
        const double* src = g.data() + (static_cast<std::size_t>(ch) * h2 + yy) * w2;
        double* r0 = gx + (static_cast<std::size_t>(ch) * h + 2 * yy) * w;
        double* r1 = r0 + w;
        for (int xx = 0; xx < w2; ++xx) {
          const double v = 0.25 * src[xx];
          r0[2 * xx] += v;
          r0[2 * xx + 1] += v;
          r1[2 * xx] += v;
          r1[2 * xx + 1] += v;
        }
      }
    }
  });
  return y;
}

Var Graph::upsample2(const Var& x) {
  const Tensor& xv = x->value;
  require(xv.rank() == 3, "upsample2: expected [C,H,W]");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2), h2 = 2 * h, w2 = 2 * w;
  Tensor out({c, h2, w2});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h2; ++y) {
      const double* src = xv.data() + (static_cast<std::size_t>(ch) * h + y / 2) * w;
      double* dst = out.data() + (static_cast<std::size_t>(ch) * h2 + y) * w2;
      for (int xx = 0; xx < w2; ++xx) dst[xx] = src[xx / 2];
    }
  }
  Var y = make_output(std::move(out), {&x});
  record(y, [x, c, h, w, h2, w2](const Tensor& g) {
    double* gx = x->grad_buffer().data();
    for (int ch = 0; ch < c; ++ch) {
      for (int yy = 0; yy < h2; ++yy) {
        const double* src = g.data() + (static_cast<std::size_t>(ch) * h2 + yy) * w2;
        double* dst = gx + (static_cast<std::size_t>(ch) * h + yy / 2) * w;
        for (int xx = 0; xx < w2; ++xx) dst[xx / 2] += src[xx];
      }
    }
  });
  return y;
}

Var Graph::add(const Var& a, const Var& b) {
  require(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  Var y = make_output(std::move(out), {&a, &b});
  record(y, [a, b](const Tensor& g) {
    for (const Var* in : {&a, &b}) {
      if (!(*in)->requires_grad) continue;
      Tensor& gi = (*in)->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
  return y;
}

Var Graph::add_constant(const Var& x, const Tensor& c) {
  require(x->value.same_shape(c), "add_constant: shape mismatch");
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  Var y = make_output(std::move(out), {&x});
  record(y, [x](const Tensor& g) {
    Tensor& gx = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return y;
}

Var Graph::scale(const Var& x, double factor) {
  Tensor out = x->value;
  for (double& v : out.values()) v *= factor;
  Var y = make_output(std::move(out), {&x});
  record(y, [x, factor](const Tensor& g) {
    Tensor& gx = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
  return y;
}

Var Graph::silu(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.values()) v = v * sigmoid_of(v);
  Var y = make_output(std::move(out), {&x});
  record(y, [x](const Tensor& g) {
    Tensor& gx = x->grad_buffer();
    const Tensor& xv = x->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid_of(xv[i]);
      gx[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
    }
  });
  return y;
}

Var Graph::sigmoid(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.values()) v = sigmoid_of(v);
  Var y = make_output(std::move(out), {&x});
  Node* yn = y.get();
  record(y, [x, yn](const Tensor& g) {
    Tensor& gx = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = yn->value[i];
      gx[i] += g[i] * s * (1.0 - s);
    }
  });
  return y;
}

Var Graph::concat(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat: no inputs");
  std::vector<int> shape = parts[0]->value.shape();
  require(!shape.empty(), "concat: scalar inputs");
  int rows = 0;
  for (const Var& p : parts) {
    const auto& s = p->value.shape();
    require(s.size() == shape.size() && std::equal(s.begin() + 1, s.end(), shape.begin() + 1),
            "concat: trailing shapes differ");
    rows += s[0];
  }
  shape[0] = rows;
  Tensor out(shape);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p->value.values().begin(), p->value.values().end(), out.values().begin() + static_cast<long>(offset));
    offset += p->value.size();
  }
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  for (const Var& p : parts) y->requires_grad = y->requires_grad || p->requires_grad;
  record(y, [parts](const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        Tensor& gp = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      }
      off += n;
    }
  });
  return y;
}

Var Graph::gather_columns(const Var& map, std::span<const int> flat_indices) {
  const Tensor& mv = map->value;
  require(mv.rank() >= 2, "gather_columns: expected [C, ...]");
  const int c = mv.dim(0);
  const int stride = static_cast<int>(mv.size() / static_cast<std::size_t>(c));
  const int n = static_cast<int>(flat_indices.size());
  std::vector<int> idx(flat_indices.begin(), flat_indices.end());
  for (int i : idx) require(i >= 0 && i < stride, "gather_columns: index out of range");
  Tensor out({c, n});
  for (int ch = 0; ch < c; ++ch) {
    const double* src = mv.data() + static_cast<std::size_t>(ch) * stride;
    double* dst = out.data() + static_cast<std::size_t>(ch) * n;
    for (int j = 0; j < n; ++j) dst[j] = src[idx[static_cast<std::size_t>(j)]];
  }
  Var y = make_output(std::move(out), {&map});
  record(y, [map, idx = std::move(idx), c, n, stride](const Tensor& g) {
    double* gm = map->grad_buffer().data();
    for (int ch = 0; ch < c; ++ch) {
      const double* src = g.data() + static_cast<std::size_t>(ch) * n;
      double* dst = gm + static_cast<std::size_t>(ch) * stride;
      for (int j = 0; j < n; ++j) dst[idx[static_cast<std::size_t>(j)]] += src[j];
    }
  });
  return y;
}

Var Graph::max_columns(const Var& x) {
  const Tensor& xv = x->value;
  require(xv.rank() == 2 && xv.dim(1) >= 1, "max_columns: expected [C,N] with N >= 1");
  const int c = xv.dim(0), n = xv.dim(1);
  Tensor out({c, 1});
  std::vector<int> arg(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    const double* row = xv.data() + static_cast<std::size_t>(ch) * n;
    int best = 0;
    for (int j = 1; j < n; ++j) {
      if (row[j] > row[best]) best = j;
    }
    arg[static_cast<std::size_t>(ch)] = best;
    out[static_cast<std::size_t>(ch)] = row[best];
  }
  Var y = make_output(std::move(out), {&x});
  record(y, [x, arg = std::move(arg), c, n](const Tensor& g) {
    double* gx = x->grad_buffer().data();
    for (int ch = 0; ch < c; ++ch) {
      gx[static_cast<std::size_t>(ch) * n + arg[static_cast<std::size_t>(ch)]] += g[static_cast<std::size_t>(ch)];
    }
  });
  return y;
}

Var Graph::repeat_columns(const Var& x, int n) {
  const Tensor& xv = x->value;
  require(xv.rank() == 2 && xv.dim(1) == 1 && n >= 1, "repeat_columns: expected [C,1]");
  const int c = xv.dim(0);
  Tensor out({c, n});
  for (int ch = 0; ch < c; ++ch) {
    std::fill_n(out.data() + static_cast<std::size_t>(ch) * n, n, xv[static_cast<std::size_t>(ch)]);
  }
  Var y = make_output(std::move(out), {&x});
  record(y, [x, c, n](const Tensor& g) {
    Tensor& gx = x->grad_buffer();
    for (int ch = 0; ch < c; ++ch) {
      const double* row = g.data() + static_cast<std::size_t>(ch) * n;
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += row[j];
      gx[static_cast<std::size_t>(ch)] += s;
    }
  });
  return y;
}

Var Graph::slice_rows(const Var& x, int begin, int end) {
  const Tensor& xv = x->value;
  require(xv.rank() >= 1 && begin >= 0 && begin < end && end <= xv.dim(0), "slice_rows: bad range");
  const std::size_t stride = xv.size() / static_cast<std::size_t>(xv.dim(0));
  std::vector<int> shape = xv.shape();
  shape[0] = end - begin;
  Tensor out(shape);
  std::copy(xv.values().begin() + static_cast<long>(begin * stride),
            xv.values().begin() + static_cast<long>(end * stride), out.values().begin());
  Var y = make_output(std::move(out), {&x});
  record(y, [x, begin, stride](const Tensor& g) {
    double* gx = x->grad_buffer().data() + begin * stride;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return y;
}

Var Graph::mean(const Var& x) {
  const std::size_t n = x->value.size();
  require(n > 0, "mean: empty tensor");
  double s = 0.0;
  for (double v : x->value.values()) s += v;
  Var y = make_output(Tensor({1}, s / static_cast<double>(n)), {&x});
  record(y, [x, n](const Tensor& g) {
    Tensor& gx = x->grad_buffer();
    const double v = g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) gx[i] += v;
  });
  return y;
}

Var Graph::sum(const std::vector<Var>& scalars) {
  require(!scalars.empty(), "sum: no inputs");
  double s = 0.0;
  auto y = std::make_shared<Node>();
  for (const Var& v : scalars) {
    require(v->value.size() == 1, "sum: inputs must be scalars");
    s += v->value[0];
    y->requires_grad = y->requires_grad || v->requires_grad;
  }
  y->value = Tensor({1}, s);
  record(y, [scalars](const Tensor& g) {
    for (const Var& v : scalars) {
      if (v->requires_grad) v->grad_buffer()[0] += g[0];
    }
  });
  return y;
}

Var Graph::softmax_cross_entropy(const Var& scores, std::span<const int> labels) {
  const Tensor& sv = scores->value;
  require(sv.rank() >= 2, "softmax_cross_entropy: expected [C, ...] scores");
  const int c = sv.dim(0);
  const auto p = static_cast<int>(sv.size() / static_cast<std::size_t>(c));
  require(static_cast<int>(labels.size()) == p, "softmax_cross_entropy: label count mismatch");
  auto probs = std::make_shared<std::vector<double>>(sv.size());
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (int j = 0; j < p; ++j) {
    const int l = lab[static_cast<std::size_t>(j)];
    require(l >= 0 && l < c, "softmax_cross_entropy: label out of range");
    double mx = sv[static_cast<std::size_t>(j)];
    for (int k = 1; k < c; ++k) mx = std::max(mx, sv[static_cast<std::size_t>(k) * p + j]);
    double z = 0.0;
    for (int k = 0; k < c; ++k) {
      const double e = std::exp(sv[static_cast<std::size_t>(k) * p + j] - mx);
      (*probs)[static_cast<std::size_t>(k) * p + j] = e;
      z += e;
    }
    for (int k = 0; k < c; ++k) (*probs)[static_cast<std::size_t>(k) * p + j] /= z;
    loss -= sv[static_cast<std::size_t>(l) * p + j] - mx - std::log(z);
  }
  Var y = make_output(Tensor({1}, loss / p), {&scores});
  record(y, [scores, probs, lab = std::move(lab), c, p](const Tensor& g) {
    Tensor& gs = scores->grad_buffer();
    const double f = g[0] / p;
    for (int k = 0; k < c; ++k) {
      for (int j = 0; j < p; ++j) {
        const std::size_t i = static_cast<std::size_t>(k) * p + j;
        gs[i] += f * ((*probs)[i] - (lab[static_cast<std::size_t>(j)] == k ? 1.0 : 0.0));
      }
    }
  });
  return y;
}

Var Graph::custom(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  auto y = std::make_shared<Node>();
  y->value = std::move(value);
  for (const Var& v : inputs) y->requires_grad = y->requires_grad || v->requires_grad;
  record(y, [inputs, backward = std::move(backward)](const Tensor& g) { backward(g); });
  return y;
}

void Graph::backward(const Var& root) {
  require(root->value.size() == 1, "backward: root must be a single value");
  if (!record_) throw InvalidArgument("backward: graph was built without recording");
  root->grad_buffer()[0] += 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  tape_.clear();
}

}  // namespace maskpose::nn
