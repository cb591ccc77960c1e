#include "core/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nvlm {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_bwd(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

}  // namespace

NodeId Graph::push(Tensor value, bool needs_grad,
                   std::function<void(Graph&, const Tensor&)> fn) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backprop = needs_grad ? std::move(fn) : nullptr;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::leaf(Tensor value) {
  bool rg = value.requires_grad;
  return push(std::move(value), rg, nullptr);
}

void Graph::accumulate(NodeId id, const Tensor& g) {
  auto i = static_cast<std::size_t>(id);
  if (!nodes_[i].needs_grad) return;
  if (grads_[i].numel() == 0) grads_[i] = Tensor::zeros(nodes_[i].value.shape());
  auto dst = grads_[i].data();
  auto src = g.data();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
}

bool Graph::has_grad(NodeId id) const {
  auto i = static_cast<std::size_t>(id);
  return i < grads_.size() && grads_[i].numel() > 0;
}

const Tensor& Graph::grad(NodeId id) const {
  if (!has_grad(id)) fail(ErrorCode::Internal, "no gradient recorded for node ", id);
  return grads_[static_cast<std::size_t>(id)];
}

void Graph::check_2d(NodeId id, const char* op) const {
  if (value(id).ndim() != 2)
    fail(ErrorCode::ShapeMismatch, op, " expects a 2-D tensor, got ", shape_str(value(id)));
}

// ---------------------------------------------------------------------------

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb))
    fail(ErrorCode::ShapeMismatch, "add: shapes ", shape_str(ta), " vs ", shape_str(tb));
  Tensor out(ta.shape());
  for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] + tb[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb))
    fail(ErrorCode::ShapeMismatch, "mul: shapes ", shape_str(ta), " vs ", shape_str(tb));
  Tensor out(ta.shape());
  for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * tb[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, const Tensor& go) {
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    Tensor ga(va.shape()), gb(vb.shape());
    for (std::int64_t i = 0; i < va.numel(); ++i) {
      ga[i] = go[i] * vb[i];
      gb[i] = go[i] * va[i];
    }
    g.accumulate(a, ga);
    g.accumulate(b, gb);
  });
}

NodeId Graph::scale(NodeId a, double c) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * c;
  return push(std::move(out), needs(a), [a, c](Graph& g, const Tensor& go) {
    Tensor ga(go.shape());
    for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] = go[i] * c;
    g.accumulate(a, ga);
  });
}

NodeId Graph::scale_by(NodeId x, NodeId s) {
  const Tensor& tx = value(x);
  const Tensor& ts = value(s);
  if (!ts.is_scalar()) fail(ErrorCode::ShapeMismatch, "scale_by: scale must be scalar, got ", shape_str(ts));
  double c = ts[0];
  Tensor out(tx.shape());
  for (std::int64_t i = 0; i < tx.numel(); ++i) out[i] = tx[i] * c;
  return push(std::move(out), needs(x) || needs(s), [x, s](Graph& g, const Tensor& go) {
    const Tensor& vx = g.value(x);
    double c = g.value(s)[0];
    Tensor gx(vx.shape());
    double gs = 0.0;
    for (std::int64_t i = 0; i < vx.numel(); ++i) {
      gx[i] = go[i] * c;
      gs += go[i] * vx[i];
    }
    g.accumulate(x, gx);
    g.accumulate(s, Tensor::scalar(gs));
  });
}

NodeId Graph::add_bias(NodeId x, NodeId b) {
  check_2d(x, "add_bias");
  const Tensor& tx = value(x);
  const Tensor& tb = value(b);
  if (tb.ndim() != 1 || tb.dim(0) != tx.cols())
    fail(ErrorCode::ShapeMismatch, "add_bias: bias ", shape_str(tb), " vs input ", shape_str(tx));
  Tensor out(tx.shape());
  for (int r = 0; r < tx.rows(); ++r)
    for (int c = 0; c < tx.cols(); ++c) out.at(r, c) = tx.at(r, c) + tb[c];
  return push(std::move(out), needs(x) || needs(b), [x, b](Graph& g, const Tensor& go) {
    g.accumulate(x, go);
    Tensor gb({go.cols()});
    for (int r = 0; r < go.rows(); ++r)
      for (int c = 0; c < go.cols(); ++c) gb[c] += go.at(r, c);
    g.accumulate(b, gb);
  });
}

NodeId Graph::gelu(NodeId x) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  for (std::int64_t i = 0; i < tx.numel(); ++i) out[i] = gelu_fwd(tx[i]);
  return push(std::move(out), needs(x), [x](Graph& g, const Tensor& go) {
    const Tensor& vx = g.value(x);
    Tensor gx(vx.shape());
    for (std::int64_t i = 0; i < vx.numel(); ++i) gx[i] = go[i] * gelu_bwd(vx[i]);
    g.accumulate(x, gx);
  });
}

NodeId Graph::tanh_of(NodeId x) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  for (std::int64_t i = 0; i < tx.numel(); ++i) out[i] = std::tanh(tx[i]);
  NodeId id = push(std::move(out), needs(x), nullptr);
  if (needs(x)) {
    nodes_.back().backprop = [x, id](Graph& g, const Tensor& go) {
      const Tensor& y = g.value(id);
      Tensor gx(y.shape());
      for (std::int64_t i = 0; i < y.numel(); ++i) gx[i] = go[i] * (1.0 - y[i] * y[i]);
      g.accumulate(x, gx);
    };
  }
  return id;
}

NodeId Graph::transpose(NodeId x) {
  check_2d(x, "transpose");
  const Tensor& tx = value(x);
  Tensor out({tx.cols(), tx.rows()});
  for (int r = 0; r < tx.rows(); ++r)
    for (int c = 0; c < tx.cols(); ++c) out.at(c, r) = tx.at(r, c);
  return push(std::move(out), needs(x), [x](Graph& g, const Tensor& go) {
    Tensor gx({go.cols(), go.rows()});
    for (int r = 0; r < go.rows(); ++r)
      for (int c = 0; c < go.cols(); ++c) gx.at(c, r) = go.at(r, c);
    g.accumulate(x, gx);
  });
}

NodeId Graph::slice_rows(NodeId x, int begin, int end) {
  check_2d(x, "slice_rows");
  const Tensor& tx = value(x);
  if (begin < 0 || end > tx.rows() || begin >= end)
    fail(ErrorCode::ShapeMismatch, "slice_rows [", begin, ",", end, ") on ", shape_str(tx));
  Tensor out({end - begin, tx.cols()});
  for (int r = begin; r < end; ++r)
    for (int c = 0; c < tx.cols(); ++c) out.at(r - begin, c) = tx.at(r, c);
  return push(std::move(out), needs(x), [x, begin](Graph& g, const Tensor& go) {
    const Tensor& vx = g.value(x);
    Tensor gx(vx.shape());
    for (int r = 0; r < go.rows(); ++r)
      for (int c = 0; c < go.cols(); ++c) gx.at(begin + r, c) = go.at(r, c);
    g.accumulate(x, gx);
  });
}

NodeId Graph::slice_cols(NodeId x, int begin, int end) {
  check_2d(x, "slice_cols");
  const Tensor& tx = value(x);
  if (begin < 0 || end > tx.cols() || begin >= end)
    fail(ErrorCode::ShapeMismatch, "slice_cols [", begin, ",", end, ") on ", shape_str(tx));
  Tensor out({tx.rows(), end - begin});
  for (int r = 0; r < tx.rows(); ++r)
    for (int c = begin; c < end; ++c) out.at(r, c - begin) = tx.at(r, c);
  return push(std::move(out), needs(x), [x, begin](Graph& g, const Tensor& go) {
    const Tensor& vx = g.value(x);
    Tensor gx(vx.shape());
    for (int r = 0; r < go.rows(); ++r)
      for (int c = 0; c < go.cols(); ++c) gx.at(r, begin + c) = go.at(r, c);
    g.accumulate(x, gx);
  });
}

NodeId Graph::concat_rows(const std::vector<NodeId>& xs) {
  if (xs.empty()) fail(ErrorCode::InvalidArgument, "concat_rows: empty input list");
  int cols = value(xs[0]).cols();
  int rows = 0;
  bool ng = false;
  for (NodeId x : xs) {
    check_2d(x, "concat_rows");
    if (value(x).cols() != cols)
      fail(ErrorCode::ShapeMismatch, "concat_rows: column mismatch ", value(x).cols(), " vs ", cols);
    rows += value(x).rows();
    ng = ng || needs(x);
  }
  Tensor out({rows, cols});
  int r0 = 0;
  for (NodeId x : xs) {
    const Tensor& tx = value(x);
    for (int r = 0; r < tx.rows(); ++r)
      for (int c = 0; c < cols; ++c) out.at(r0 + r, c) = tx.at(r, c);
    r0 += tx.rows();
  }
  return push(std::move(out), ng, [xs](Graph& g, const Tensor& go) {
    int r0 = 0;
    for (NodeId x : xs) {
      const Tensor& vx = g.value(x);
      Tensor gx(vx.shape());
      for (int r = 0; r < vx.rows(); ++r)
        for (int c = 0; c < vx.cols(); ++c) gx.at(r, c) = go.at(r0 + r, c);
      g.accumulate(x, gx);
      r0 += vx.rows();
    }
  });
}

NodeId Graph::concat_cols(const std::vector<NodeId>& xs) {
  if (xs.empty()) fail(ErrorCode::InvalidArgument, "concat_cols: empty input list");
  int rows = value(xs[0]).rows();
  int cols = 0;
  bool ng = false;
  for (NodeId x : xs) {
    check_2d(x, "concat_cols");
    if (value(x).rows() != rows)
      fail(ErrorCode::ShapeMismatch, "concat_cols: row mismatch ", value(x).rows(), " vs ", rows);
    cols += value(x).cols();
    ng = ng || needs(x);
  }
  Tensor out({rows, cols});
  int c0 = 0;
  for (NodeId x : xs) {
    const Tensor& tx = value(x);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < tx.cols(); ++c) out.at(r, c0 + c) = tx.at(r, c);
    c0 += tx.cols();
  }
  return push(std::move(out), ng, [xs](Graph& g, const Tensor& go) {
    int c0 = 0;
    for (NodeId x : xs) {
      const Tensor& vx = g.value(x);
      Tensor gx(vx.shape());
      for (int r = 0; r < vx.rows(); ++r)
        for (int c = 0; c < vx.cols(); ++c) gx.at(r, c) = go.at(r, c0 + c);
      g.accumulate(x, gx);
      c0 += vx.cols();
    }
  });
}

NodeId Graph::embed_rows(NodeId table, std::vector<int> ids) {
  check_2d(table, "embed_rows");
  const Tensor& tt = value(table);
  for (int id : ids)
    if (id < 0 || id >= tt.rows())
      fail(ErrorCode::InvalidArgument, "embed_rows: id ", id, " out of range [0,", tt.rows(), ")");
  Tensor out({static_cast<int>(ids.size()), tt.cols()});
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (int c = 0; c < tt.cols(); ++c) out.at(static_cast<int>(r), c) = tt.at(ids[r], c);
  return push(std::move(out), needs(table),
              [table, ids = std::move(ids)](Graph& g, const Tensor& go) {
                const Tensor& vt = g.value(table);
                Tensor gt(vt.shape());
                for (std::size_t r = 0; r < ids.size(); ++r)
                  for (int c = 0; c < vt.cols(); ++c)
                    gt.at(ids[r], c) += go.at(static_cast<int>(r), c);
                g.accumulate(table, gt);
              });
}

NodeId Graph::sum(NodeId x) {
  const Tensor& tx = value(x);
  double s = 0.0;
  for (std::int64_t i = 0; i < tx.numel(); ++i) s += tx[i];
  return push(Tensor::scalar(s), needs(x), [x](Graph& g, const Tensor& go) {
    const Tensor& vx = g.value(x);
    g.accumulate(x, Tensor::full(vx.shape(), go[0]));
  });
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.cols() != tb.rows())
    fail(ErrorCode::ShapeMismatch, "matmul: inner dimensions disagree, ", shape_str(ta), " vs ",
         shape_str(tb));
  int m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      double av = ta.at(i, p);
      if (av == 0.0) continue;
      for (int j = 0; j < n; ++j) out.at(i, j) += av * tb.at(p, j);
    }
  }
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, const Tensor& go) {
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    int m = va.rows(), k = va.cols(), n = vb.cols();
    if (g.needs(a)) {  // dA = dC * B^T
      Tensor ga({m, k});
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double gv = go.at(i, j);
          if (gv == 0.0) continue;
          for (int p = 0; p < k; ++p) ga.at(i, p) += gv * vb.at(p, j);
        }
      g.accumulate(a, ga);
    }
    if (g.needs(b)) {  // dB = A^T * dC
      Tensor gb({k, n});
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double av = va.at(i, p);
          if (av == 0.0) continue;
          for (int j = 0; j < n; ++j) gb.at(p, j) += av * go.at(i, j);
        }
      g.accumulate(b, gb);
    }
  });
}

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
  check_2d(x, "layer_norm");
  const Tensor& tx = value(x);
  const Tensor& tg = value(gain);
  const Tensor& tb = value(bias);
  int d = tx.cols();
  if (tg.ndim() != 1 || tg.dim(0) != d || tb.ndim() != 1 || tb.dim(0) != d)
    fail(ErrorCode::ShapeMismatch, "layer_norm: gain/bias must be [", d, "], got ", shape_str(tg),
         " and ", shape_str(tb));
  Tensor out(tx.shape());
  for (int r = 0; r < tx.rows(); ++r) {
    double mean = 0.0;
    for (int c = 0; c < d; ++c) mean += tx.at(r, c);
    mean /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) {
      double dv = tx.at(r, c) - mean;
      var += dv * dv;
    }
    var /= d;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < d; ++c) out.at(r, c) = (tx.at(r, c) - mean) * inv * tg[c] + tb[c];
  }
  return push(std::move(out), needs(x) || needs(gain) || needs(bias),
              [x, gain, bias, eps](Graph& g, const Tensor& go) {
                const Tensor& vx = g.value(x);
                const Tensor& vg = g.value(gain);
                int d = vx.cols();
                Tensor gx(vx.shape());
                Tensor ggain({d});
                Tensor gbias({d});
                for (int r = 0; r < vx.rows(); ++r) {
                  double mean = 0.0;
                  for (int c = 0; c < d; ++c) mean += vx.at(r, c);
                  mean /= d;
                  double var = 0.0;
                  for (int c = 0; c < d; ++c) {
                    double dv = vx.at(r, c) - mean;
                    var += dv * dv;
                  }
                  var /= d;
                  double inv = 1.0 / std::sqrt(var + eps);
                  // xhat = (x - mean) * inv; h = go * gain (upstream through the affine)
                  double h_mean = 0.0, hx_mean = 0.0;
                  for (int c = 0; c < d; ++c) {
                    double xhat = (vx.at(r, c) - mean) * inv;
                    double h = go.at(r, c) * vg[c];
                    h_mean += h;
                    hx_mean += h * xhat;
                    ggain[c] += go.at(r, c) * xhat;
                    gbias[c] += go.at(r, c);
                  }
                  h_mean /= d;
                  hx_mean /= d;
                  for (int c = 0; c < d; ++c) {
                    double xhat = (vx.at(r, c) - mean) * inv;
                    double h = go.at(r, c) * vg[c];
                    gx.at(r, c) = inv * (h - h_mean - xhat * hx_mean);
                  }
                }
                g.accumulate(x, gx);
                g.accumulate(gain, ggain);
                g.accumulate(bias, gbias);
              });
}

NodeId Graph::softmax_rows(NodeId x) {
  check_2d(x, "softmax_rows");
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  for (int r = 0; r < tx.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < tx.cols(); ++c) mx = std::max(mx, tx.at(r, c));
    double z = 0.0;
    for (int c = 0; c < tx.cols(); ++c) {
      double e = std::exp(tx.at(r, c) - mx);
      out.at(r, c) = e;
      z += e;
    }
    for (int c = 0; c < tx.cols(); ++c) out.at(r, c) /= z;
  }
  NodeId id = push(std::move(out), needs(x), nullptr);
  if (needs(x)) {
    nodes_.back().backprop = [x, id](Graph& g, const Tensor& go) {
      const Tensor& y = g.value(id);
      Tensor gx(y.shape());
      for (int r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (int c = 0; c < y.cols(); ++c) dot += go.at(r, c) * y.at(r, c);
        for (int c = 0; c < y.cols(); ++c) gx.at(r, c) = y.at(r, c) * (go.at(r, c) - dot);
      }
      g.accumulate(x, gx);
    };
  }
  return id;
}

NodeId Graph::masked_softmax_rows(NodeId x, const BoolMatrix& allowed) {
  check_2d(x, "masked_softmax_rows");
  const Tensor& tx = value(x);
  if (allowed.rows != tx.rows() || allowed.cols != tx.cols())
    fail(ErrorCode::ShapeMismatch, "masked_softmax_rows: mask ", allowed.rows, "x", allowed.cols,
         " vs input ", shape_str(tx));
  Tensor out(tx.shape());
  for (int r = 0; r < tx.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < tx.cols(); ++c)
      if (allowed.at(r, c)) mx = std::max(mx, tx.at(r, c));
    if (!std::isfinite(mx)) continue;  // fully masked row stays zero
    double z = 0.0;
    for (int c = 0; c < tx.cols(); ++c) {
      if (!allowed.at(r, c)) continue;
      double e = std::exp(tx.at(r, c) - mx);
      out.at(r, c) = e;
      z += e;
    }
    for (int c = 0; c < tx.cols(); ++c) out.at(r, c) /= z;
  }
  NodeId id = push(std::move(out), needs(x), nullptr);
  if (needs(x)) {
    nodes_.back().backprop = [x, id](Graph& g, const Tensor& go) {
      const Tensor& y = g.value(id);
      Tensor gx(y.shape());
      for (int r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (int c = 0; c < y.cols(); ++c) dot += go.at(r, c) * y.at(r, c);
        for (int c = 0; c < y.cols(); ++c) gx.at(r, c) = y.at(r, c) * (go.at(r, c) - dot);
      }
      g.accumulate(x, gx);
    };
  }
  return id;
}

NodeId Graph::cross_entropy(NodeId logits, const std::vector<int>& targets,
                            const std::vector<std::uint8_t>& mask) {
  check_2d(logits, "cross_entropy");
  const Tensor& tl = value(logits);
  int t = tl.rows(), v = tl.cols();
  if (static_cast<int>(targets.size()) != t || static_cast<int>(mask.size()) != t)
    fail(ErrorCode::ShapeMismatch, "cross_entropy: ", t, " rows vs ", targets.size(),
         " targets and ", mask.size(), " mask entries");
  int kept = 0;
  for (int r = 0; r < t; ++r) {
    if (!mask[r]) continue;
    ++kept;
    if (targets[r] < 0 || targets[r] >= v)
      fail(ErrorCode::InvalidArgument, "cross_entropy: target id ", targets[r],
           " outside vocab of ", v);
  }
  if (kept == 0) fail(ErrorCode::InvalidArgument, "empty loss mask");
  double total = 0.0;
  for (int r = 0; r < t; ++r) {
    if (!mask[r]) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < v; ++c) mx = std::max(mx, tl.at(r, c));
    double z = 0.0;
    for (int c = 0; c < v; ++c) z += std::exp(tl.at(r, c) - mx);
    total += mx + std::log(z) - tl.at(r, targets[r]);
  }
  Tensor out = Tensor::scalar(total / kept);
  return push(std::move(out), needs(logits),
              [logits, targets, mask, kept](Graph& g, const Tensor& go) {
                const Tensor& vl = g.value(logits);
                int t = vl.rows(), v = vl.cols();
                double w = go[0] / kept;
                Tensor gl(vl.shape());
                for (int r = 0; r < t; ++r) {
                  if (!mask[r]) continue;
                  double mx = -std::numeric_limits<double>::infinity();
                  for (int c = 0; c < v; ++c) mx = std::max(mx, vl.at(r, c));
                  double z = 0.0;
                  for (int c = 0; c < v; ++c) z += std::exp(vl.at(r, c) - mx);
                  for (int c = 0; c < v; ++c)
                    gl.at(r, c) = w * (std::exp(vl.at(r, c) - mx) / z - (c == targets[r] ? 1.0 : 0.0));
                }
                g.accumulate(logits, gl);
              });
}

void Graph::backward(NodeId loss) {
  const Tensor& tl = value(loss);
  if (!tl.is_scalar())
    fail(ErrorCode::ShapeMismatch, "backward target must be scalar, got ", shape_str(tl));
  grads_.assign(nodes_.size(), Tensor());
  auto li = static_cast<std::size_t>(loss);
  if (!nodes_[li].needs_grad) return;  // loss does not depend on any grad leaf
  grads_[li] = Tensor::scalar(1.0);
  for (std::size_t i = li + 1; i-- > 0;) {
    if (grads_[i].numel() == 0 || !nodes_[i].backprop) continue;
    nodes_[i].backprop(*this, grads_[i]);
  }
}

}  // namespace nvlm
