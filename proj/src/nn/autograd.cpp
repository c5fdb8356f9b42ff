#include "dcasr/nn/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "dcasr/error.hpp"
#include "dcasr/nn/loss.hpp"

namespace dcasr::nn {

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(const std::string& name, const Tensor& value) {
  auto it = params_.find(name);
  if (it != params_.end()) return Var{this, it->second};
  nodes_.push_back(Node{value, {}, false, nullptr});
  const std::size_t id = nodes_.size() - 1;
  params_.emplace(name, id);
  return Var{this, id};
}

void Graph::bind_all(const ParamStore& store) {
  for (const auto& [name, t] : store) parameter(name, t);
}

Var Graph::record(Tensor value, BackwardFn fn) {
  if (!value.all_finite()) throw NumericError("non-finite value produced by graph op");
  nodes_.push_back(Node{std::move(value), {}, false, record_ ? std::move(fn) : nullptr});
  return Var{this, nodes_.size() - 1};
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (!n.has_grad) throw ConsistencyError("no gradient recorded for node");
  return n.grad;
}

void Graph::backward(Var loss) {
  if (!record_) throw ConsistencyError("backward() on a graph built without recording");
  if (loss.value().size() != 1) throw DimensionError("backward() needs a scalar loss");
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (nodes_[i].has_grad && nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

ParamStore Graph::parameter_grads() const {
  ParamStore out;
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    out.set(name, n.has_grad ? n.grad : Tensor(n.value.shape()));
  }
  return out;
}

namespace {

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw ConsistencyError("variable not attached to a graph");
  return *a.graph;
}

void require_same(Var a, Var b, const char* op) {
  if (a.graph != b.graph) throw ConsistencyError(std::string(op) + ": variables from different graphs");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.value().shape()) + " vs " +
                         shape_string(b.value().shape()));
  }
}

Tensor mat(std::size_t r, std::size_t c) { return Tensor({r, c}); }

template <typename F, typename D>
Var unary(Var a, F forward, D derivative) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  Tensor out = mat(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = forward(av[i]);
  const std::size_t ai = a.id;
  return g.record(std::move(out), [ai, derivative](Graph& gr, std::size_t self) {
    const Tensor& x = gr.value(ai);
    const Tensor& y = gr.value(self);
    const Tensor& gs = gr.grad_buffer(self);
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += gs[i] * derivative(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  }
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out = mat(n, m);
  const double* A = av.values().data();
  const double* B = bv.values().data();
  double* O = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = A[i * k + p];
      const double* br = B + p * m;
      double* o = O + i * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += x * br[j];
    }
  }
  const std::size_t ai = a.id, bi = b.id;
  return g.record(std::move(out), [ai, bi, n, k, m](Graph& gr, std::size_t self) {
    const double* G = gr.grad_buffer(self).values().data();
    const double* A = gr.value(ai).values().data();
    const double* B = gr.value(bi).values().data();
    double* GA = gr.grad_buffer(ai).values().data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        const double* br = B + p * m;
        const double* gr_row = G + i * m;
        for (std::size_t j = 0; j < m; ++j) acc += gr_row[j] * br[j];
        GA[i * k + p] += acc;
      }
    }
    double* GB = gr.grad_buffer(bi).values().data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double x = A[i * k + p];
        double* gb = GB + p * m;
        const double* gr_row = G + i * m;
        for (std::size_t j = 0; j < m; ++j) gb[j] += x * gr_row[j];
      }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner dimensions disagree " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  }
  const std::size_t n = av.rows(), k = av.cols(), m = bv.rows();
  Tensor out = mat(n, m);
  const double* A = av.values().data();
  const double* B = bv.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
      out[i * m + j] = acc;
    }
  }
  const std::size_t ai = a.id, bi = b.id;
  return g.record(std::move(out), [ai, bi, n, k, m](Graph& gr, std::size_t self) {
    const double* G = gr.grad_buffer(self).values().data();
    const double* A = gr.value(ai).values().data();
    const double* B = gr.value(bi).values().data();
    double* GA = gr.grad_buffer(ai).values().data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double gv = G[i * m + j];
        if (gv == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) GA[i * k + p] += gv * B[j * k + p];
      }
    }
    double* GB = gr.grad_buffer(bi).values().data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double gv = G[i * m + j];
        if (gv == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) GB[j * k + p] += gv * A[i * k + p];
      }
    }
  });
}

Var add(Var a, Var b) {
  require_same(a, b, "add");
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = mat(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record(std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < gs.size(); ++i) ga[i] += gs[i];
    Tensor& gb = gr.grad_buffer(bi);
    for (std::size_t i = 0; i < gs.size(); ++i) gb[i] += gs[i];
  });
}

Var sub(Var a, Var b) {
  require_same(a, b, "sub");
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = mat(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record(std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < gs.size(); ++i) ga[i] += gs[i];
    Tensor& gb = gr.grad_buffer(bi);
    for (std::size_t i = 0; i < gs.size(); ++i) gb[i] -= gs[i];
  });
}

Var mul(Var a, Var b) {
  require_same(a, b, "mul");
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = mat(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record(std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    const Tensor& av = gr.value(ai);
    const Tensor& bv = gr.value(bi);
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < gs.size(); ++i) ga[i] += gs[i] * bv[i];
    Tensor& gb = gr.grad_buffer(bi);
    for (std::size_t i = 0; i < gs.size(); ++i) gb[i] += gs[i] * av[i];
  });
}

Var add_row(Var a, Var row) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.size() != av.cols()) {
    throw DimensionError("add_row: row " + shape_string(rv.shape()) + " does not match columns of " +
                         shape_string(av.shape()));
  }
  const std::size_t n = av.rows(), c = av.cols();
  Tensor out = mat(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = av[i * c + j] + rv[j];
  }
  const std::size_t ai = a.id, ri = row.id;
  return g.record(std::move(out), [ai, ri, n, c](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < gs.size(); ++i) ga[i] += gs[i];
    Tensor& gb = gr.grad_buffer(ri);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) gb[j] += gs[i * c + j];
    }
  });
}

Var scale(Var a, double s) { return affine_scalar(a, s, 0.0); }

Var affine_scalar(Var a, double mul_by, double add_to) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  Tensor out = mat(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = mul_by * av[i] + add_to;
  const std::size_t ai = a.id;
  return g.record(std::move(out), [ai, mul_by](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < gs.size(); ++i) ga[i] += mul_by * gs[i];
  });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var silu(Var a) {
  return unary(
      a,
      [](double x) {
        const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return x * s;
      },
      [](double x, double) {
        const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var exp_floor(Var a, double floor) {
  return unary(
      a, [floor](double x) { return std::max(std::exp(x), floor); },
      [floor](double x, double y) { return std::exp(x) > floor ? y : 0.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softmax_rows(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const std::size_t n = av.rows(), c = av.cols();
  Tensor out = mat(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = out.row(i);
    auto src = av.row(i);
    std::copy(src.begin(), src.end(), r.begin());
    softmax_inplace(r);
  }
  const std::size_t ai = a.id;
  return g.record(std::move(out), [ai, n, c](Graph& gr, std::size_t self) {
    const Tensor& y = gr.value(self);
    const Tensor& gs = gr.grad_buffer(self);
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += gs[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[i * c + j] * (gs[i * c + j] - dot);
    }
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gain.value().size() != c || bias.value().size() != c) {
    throw DimensionError("layer_norm: gain/bias size must equal " + std::to_string(c));
  }
  Tensor out = mat(n, c);
  auto xhat = std::make_shared<std::vector<double>>(n * c);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xv[i * c + j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[i * c + j] - mean) * is;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t xi = x.id, gi = gain.id, bi = bias.id;
  return g.record(std::move(out), [xi, gi, bi, n, c, xhat, inv_std](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    const Tensor& gv = gr.value(gi);
    Tensor& gg = gr.grad_buffer(gi);
    Tensor& gb = gr.grad_buffer(bi);
    Tensor& gx = gr.grad_buffer(xi);
    const double inv_c = 1.0 / static_cast<double>(c);
    for (std::size_t i = 0; i < n; ++i) {
      double sum_d = 0.0, sum_dh = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double gy = gs[i * c + j];
        const double h = (*xhat)[i * c + j];
        gg[j] += gy * h;
        gb[j] += gy;
        const double d = gy * gv[j];
        sum_d += d;
        sum_dh += d * h;
      }
      const double is = (*inv_std)[i];
      for (std::size_t j = 0; j < c; ++j) {
        const double d = gs[i * c + j] * gv[j];
        const double h = (*xhat)[i * c + j];
        gx[i * c + j] += is * (d - inv_c * sum_d - h * inv_c * sum_dh);
      }
    }
  });
}

Var row_normalize(Var a, double floor) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const std::size_t n = av.rows(), c = av.cols();
  Tensor out = mat(n, c);
  auto norms = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += av[i * c + j] * av[i * c + j];
    const double nr = std::max(std::sqrt(ss), floor);
    (*norms)[i] = nr;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = av[i * c + j] / nr;
  }
  const std::size_t ai = a.id;
  return g.record(std::move(out), [ai, n, c, norms, floor](Graph& gr, std::size_t self) {
    const Tensor& y = gr.value(self);
    const Tensor& gs = gr.grad_buffer(self);
    const Tensor& x = gr.value(ai);
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < n; ++i) {
      const double nr = (*norms)[i];
      double ss = 0.0;
      for (std::size_t j = 0; j < c; ++j) ss += x[i * c + j] * x[i * c + j];
      const bool clamped = std::sqrt(ss) <= floor;
      double dot = 0.0;
      if (!clamped) {
        for (std::size_t j = 0; j < c; ++j) dot += gs[i * c + j] * y[i * c + j];
      }
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += (gs[i * c + j] - dot * y[i * c + j]) / nr;
    }
  });
}

Var gather_rows(Var table, std::span<const std::size_t> rows) {
  Graph& g = graph_of(table);
  const Tensor& tv = table.value();
  const std::size_t c = tv.cols();
  if (rows.empty()) throw InvalidInputError("gather_rows: empty index list");
  Tensor out = mat(rows.size(), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= tv.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       std::to_string(tv.rows()) + " rows");
    }
    auto src = tv.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const std::size_t ti = table.id;
  return g.record(std::move(out), [ti, idx = std::move(idx), c](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    Tensor& gt = gr.grad_buffer(ti);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) gt[idx[i] * c + j] += gs[i * c + j];
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidInputError("concat_cols: no inputs");
  Graph& g = graph_of(parts[0]);
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths, ids;
  for (const auto& p : parts) {
    if (p.rows() != n) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    ids.push_back(p.id);
    total += p.cols();
  }
  Tensor out = mat(n, total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < pv.cols(); ++j) out[i * total + off + j] = pv[i * pv.cols() + j];
    }
    off += pv.cols();
  }
  return g.record(std::move(out), [ids, widths, n, total](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor& gp = gr.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += gs[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidInputError("concat_rows: no inputs");
  Graph& g = graph_of(parts[0]);
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids, sizes;
  for (const auto& p : parts) {
    if (p.cols() != c) throw DimensionError("concat_rows: column counts differ");
    ids.push_back(p.id);
    sizes.push_back(p.value().size());
    total += p.rows();
  }
  Tensor out = mat(total, c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto v = p.value().values();
    std::copy(v.begin(), v.end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  return g.record(std::move(out), [ids, sizes](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor& gp = gr.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += gs[off + i];
      off += sizes[k];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  if (begin >= end || end > av.cols()) throw IndexError("slice_cols: bad range");
  const std::size_t n = av.rows(), c = av.cols(), w = end - begin;
  Tensor out = mat(n, w);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = av[i * c + begin + j];
  }
  const std::size_t ai = a.id;
  return g.record(std::move(out), [ai, n, c, w, begin](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w; ++j) ga[i * c + begin + j] += gs[i * w + j];
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  if (begin >= end || end > av.rows()) throw IndexError("slice_rows: bad range");
  const std::size_t c = av.cols();
  Tensor out = mat(end - begin, c);
  std::copy(av.values().begin() + static_cast<std::ptrdiff_t>(begin * c),
            av.values().begin() + static_cast<std::ptrdiff_t>(end * c), out.values().begin());
  const std::size_t ai = a.id;
  return g.record(std::move(out), [ai, begin, c](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < gs.size(); ++i) ga[begin * c + i] += gs[i];
  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out = mat(c, r);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  }
  const std::size_t ai = a.id;
  return g.record(std::move(out), [ai, r, c](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += gs[j * r + i];
    }
  });
}

Var mean_rows(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const std::size_t n = av.rows(), c = av.cols();
  Tensor out = mat(1, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j] += av[i * c + j];
  }
  for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(n);
  const std::size_t ai = a.id;
  return g.record(std::move(out), [ai, n, c](Graph& gr, std::size_t self) {
    const Tensor& gs = gr.grad_buffer(self);
    Tensor& ga = gr.grad_buffer(ai);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += gs[j] * inv;
    }
  });
}

Var sum_all(Var a) {
  Graph& g = graph_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ai = a.id;
  return g.record(Tensor({1, 1}, s), [ai](Graph& gr, std::size_t self) {
    const double gs = gr.grad_buffer(self)[0];
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gs;
  });
}

Var cross_entropy_rows(Var logits, std::span<const std::size_t> targets) {
  Graph& g = graph_of(logits);
  const Tensor& lv = logits.value();
  const std::size_t n = lv.rows(), c = lv.cols();
  if (targets.size() != n) throw DimensionError("cross_entropy_rows: one target per row required");
  double total = 0.0;
  auto grads = std::make_shared<std::vector<double>>(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const LossWithGrad r = softmax_cross_entropy(lv.row(i), targets[i]);
    total += r.loss;
    std::copy(r.grad.begin(), r.grad.end(), grads->begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  const std::size_t li = logits.id;
  return g.record(Tensor({1, 1}, total), [li, grads](Graph& gr, std::size_t self) {
    const double gs = gr.grad_buffer(self)[0];
    Tensor& gl = gr.grad_buffer(li);
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += gs * (*grads)[i];
  });
}

Var squared_error(Var a, Var b) {
  require_same(a, b, "squared_error");
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  const std::size_t ai = a.id, bi = b.id;
  return g.record(Tensor({1, 1}, s), [ai, bi](Graph& gr, std::size_t self) {
    const double gs = gr.grad_buffer(self)[0];
    const Tensor& av = gr.value(ai);
    const Tensor& bv = gr.value(bi);
    Tensor& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += 2.0 * gs * (av[i] - bv[i]);
    Tensor& gb = gr.grad_buffer(bi);
    for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= 2.0 * gs * (av[i] - bv[i]);
  });
}

Var affine(Var x, Var weight, Var bias) {
  const Tensor& wv = weight.value();
  if (wv.rank() != 2 || x.cols() != wv.rows() || bias.value().size() != wv.cols()) {
    throw DimensionError("affine shape mismatch: x " + shape_string(x.value().shape()) + ", W " +
                         shape_string(wv.shape()) + ", b " + shape_string(bias.value().shape()));
  }
  return add_row(matmul(x, weight), bias);
}

}  // namespace dcasr::nn
