#include "layoutcomp/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>
#include <string>

namespace layoutcomp::ad {

namespace {
// Reductions accumulate in at least double.
template <typename T>
using Acc = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;
}  // namespace

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(id);
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  require_finite<T>(value.data, "constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var<T>{this, it->second};
  require_finite<T>(p.value.data, p.name.c_str());
  Node n;
  n.param = &p;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_ids_.emplace(&p, id);
  return Var<T>{this, id};
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::vector<int> inputs, Backward backward) {
  require_finite<T>(value.data, "operation output");
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (int i : inputs) {
      if (i >= 0) n.needs_grad = n.needs_grad || nodes_[static_cast<size_t>(i)].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
std::vector<T>& Graph<T>::grad_buffer(int id) {
  auto& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty()) n.grad.assign(value(id).numel(), T(0));
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> out) {
  if (!record_) throw std::logic_error("backward on a non-recording graph");
  if (out.graph != this) throw std::invalid_argument("output belongs to another graph");
  if (value(out.id).numel() != 1) throw ShapeMismatch("backward needs a single-element output");
  grad_buffer(out.id)[0] += T(1);
  backward_visits_ = 0;
  for (int id = out.id; id >= 0; --id) {
    auto& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || n.grad.empty()) continue;
    ++backward_visits_;
    if (n.param) {
      auto& g = n.param->grad.data;
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    } else if (n.backward) {
      n.backward(*this);
    }
  }
}

namespace {

template <typename T>
void same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.numel() != b.numel() || a.cols() != b.cols()) throw ShapeMismatch(std::string(op) + ": operand shapes differ");
}

template <typename T>
Graph<T>& graph_of(Var<T> a) {
  if (!a.valid()) throw std::invalid_argument("invalid Var");
  return *a.graph;
}

template <typename T>
void same_graph(Var<T> a, Var<T> b) {
  if (b.valid() && a.graph != b.graph) throw std::invalid_argument("operands belong to different graphs");
}

// Output id of the next recorded node.
template <typename T>
int next_id(Graph<T>& g) {
  return static_cast<int>(g.size());
}

template <typename T>
Tensor<T> matrix(int rows, int cols) {
  return Tensor<T>(std::vector<int>{rows, cols});
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& g = graph_of(a);
  same_graph(a, b);
  same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  out.requires_grad = false;
  const auto& bv = b.value().data;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
  const int ia = a.id, ib = b.id, io = next_id(g);
  return g.record(std::move(out), {ia, ib}, [ia, ib, io](Graph<T>& gr) {
    const auto go = gr.grad(io);
    for (int id : {ia, ib}) {
      if (!gr.needs_grad(id)) continue;
      auto& gi = gr.grad_buffer(id);
      for (size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& g = graph_of(a);
  same_graph(a, b);
  same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value().data;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv[i];
  const int ia = a.id, ib = b.id, io = next_id(g);
  return g.record(std::move(out), {ia, ib}, [ia, ib, io](Graph<T>& gr) {
    const auto& go = gr.grad(io);
    const auto& av = gr.value(ia).data;
    const auto& bv2 = gr.value(ib).data;
    if (gr.needs_grad(ia)) {
      auto& ga = gr.grad_buffer(ia);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv2[i];
    }
    if (gr.needs_grad(ib)) {
      auto& gb = gr.grad_buffer(ib);
      for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  auto& g = graph_of(a);
  Tensor<T> out = a.value();
  for (auto& v : out.data) v *= s;
  const int ia = a.id, io = next_id(g);
  return g.record(std::move(out), {ia}, [ia, io, s](Graph<T>& gr) {
    const auto& go = gr.grad(io);
    auto& ga = gr.grad_buffer(ia);
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * s;
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  auto& g = graph_of(a);
  Acc<T> acc = 0;
  for (T v : a.value().data) acc += v;
  Tensor<T> out(std::vector<int>{1}, static_cast<T>(acc));
  const int ia = a.id, io = next_id(g);
  return g.record(std::move(out), {ia}, [ia, io](Graph<T>& gr) {
    const T go = gr.grad(io)[0];
    auto& ga = gr.grad_buffer(ia);
    for (auto& v : ga) v += go;
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  auto& g = graph_of(a);
  Tensor<T> out = a.value();
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  const int ia = a.id, io = next_id(g);
  return g.record(std::move(out), {ia}, [ia, io](Graph<T>& gr) {
    const auto& go = gr.grad(io);
    const auto& x = gr.value(ia).data;
    auto& ga = gr.grad_buffer(ia);
    for (size_t i = 0; i < go.size(); ++i) {
      if (x[i] > T(0)) ga[i] += go[i];
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  auto& g = graph_of(x);
  same_graph(x, w);
  same_graph(x, bias);
  const auto& xv = x.value();
  const auto& wv = w.value();
  const int n = xv.rows(), k = xv.cols(), m = wv.cols();
  if (wv.rows() != k) throw ShapeMismatch("linear: input width does not match weight rows");
  if (bias.valid() && static_cast<int>(bias.value().numel()) != m) throw ShapeMismatch("linear: bias width mismatch");
  Tensor<T> out = matrix<T>(n, m);
  std::vector<Acc<T>> acc(static_cast<size_t>(m));
  for (int i = 0; i < n; ++i) {
    if (bias.valid()) {
      std::copy_n(bias.value().data.data(), m, acc.begin());
    } else {
      std::fill(acc.begin(), acc.end(), Acc<T>(0));
    }
    const T* xrow = xv.row(i);
    for (int kk = 0; kk < k; ++kk) {
      const Acc<T> a = xrow[kk];
      if (a == 0) continue;
      const T* wrow = wv.row(kk);
      for (int j = 0; j < m; ++j) acc[static_cast<size_t>(j)] += a * wrow[j];
    }
    std::copy(acc.begin(), acc.end(), out.row(i));
  }
  const int ix = x.id, iw = w.id, ib = bias.valid() ? bias.id : -1, io = next_id(g);
  return g.record(std::move(out), {ix, iw, ib}, [ix, iw, ib, io, n, k, m](Graph<T>& gr) {
    const auto& go = gr.grad(io);
    const auto& xd = gr.value(ix);
    const auto& wd = gr.value(iw);
    if (gr.needs_grad(ix)) {
      auto& gx = gr.grad_buffer(ix);
      for (int i = 0; i < n; ++i) {
        const T* grow = go.data() + static_cast<size_t>(i) * m;
        T* gxrow = gx.data() + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
          const T* wrow = wd.row(kk);
          Acc<T> acc = 0;
          for (int j = 0; j < m; ++j) acc += static_cast<Acc<T>>(grow[j]) * wrow[j];
          gxrow[kk] += static_cast<T>(acc);
        }
      }
    }
    if (gr.needs_grad(iw)) {
      auto& gw = gr.grad_buffer(iw);
      for (int i = 0; i < n; ++i) {
        const T* grow = go.data() + static_cast<size_t>(i) * m;
        const T* xrow = xd.row(i);
        for (int kk = 0; kk < k; ++kk) {
          const T a = xrow[kk];
          if (a == T(0)) continue;
          T* gwrow = gw.data() + static_cast<size_t>(kk) * m;
          for (int j = 0; j < m; ++j) gwrow[j] += a * grow[j];
        }
      }
    }
    if (ib >= 0 && gr.needs_grad(ib)) {
      auto& gb = gr.grad_buffer(ib);
      for (int i = 0; i < n; ++i) {
        const T* grow = go.data() + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) gb[static_cast<size_t>(j)] += grow[j];
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  auto& g = graph_of(x);
  same_graph(x, gamma);
  same_graph(x, beta);
  const auto& xv = x.value();
  const int n = xv.rows(), m = xv.cols();
  if (static_cast<int>(gamma.value().numel()) != m || static_cast<int>(beta.value().numel()) != m) {
    throw ShapeMismatch("layer_norm: scale/shift width mismatch");
  }
  Tensor<T> out = matrix<T>(n, m);
  std::vector<T> xhat(static_cast<size_t>(n) * m);
  std::vector<T> inv_std(static_cast<size_t>(n));
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  for (int i = 0; i < n; ++i) {
    const T* r = xv.row(i);
    Acc<T> mean = 0;
    for (int j = 0; j < m; ++j) mean += r[j];
    mean /= m;
    Acc<T> var = 0;
    for (int j = 0; j < m; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= m;
    const Acc<T> is = 1 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = static_cast<T>(is);
    T* o = out.row(i);
    T* xh = xhat.data() + static_cast<size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const Acc<T> xa = (r[j] - mean) * is;
      xh[j] = static_cast<T>(xa);
      o[j] = static_cast<T>(gv[static_cast<size_t>(j)] * xa + bv[static_cast<size_t>(j)]);
    }
  }
  const int ix = x.id, ig = gamma.id, ibt = beta.id, io = next_id(g);
  return g.record(std::move(out), {ix, ig, ibt},
                  [ix, ig, ibt, io, n, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& gr) {
                    const auto& go = gr.grad(io);
                    const auto& gv2 = gr.value(ig).data;
                    if (gr.needs_grad(ig)) {
                      auto& gg = gr.grad_buffer(ig);
                      for (size_t i = 0; i < go.size(); ++i) gg[i % static_cast<size_t>(m)] += go[i] * xhat[i];
                    }
                    if (gr.needs_grad(ibt)) {
                      auto& gb = gr.grad_buffer(ibt);
                      for (size_t i = 0; i < go.size(); ++i) gb[i % static_cast<size_t>(m)] += go[i];
                    }
                    if (gr.needs_grad(ix)) {
                      auto& gx = gr.grad_buffer(ix);
                      std::vector<Acc<T>> dxh(static_cast<size_t>(m));
                      for (int i = 0; i < n; ++i) {
                        const size_t off = static_cast<size_t>(i) * m;
                        Acc<T> mean_d = 0, mean_dx = 0;
                        for (int j = 0; j < m; ++j) {
                          dxh[static_cast<size_t>(j)] = static_cast<Acc<T>>(go[off + j]) * gv2[static_cast<size_t>(j)];
                          mean_d += dxh[static_cast<size_t>(j)];
                          mean_dx += dxh[static_cast<size_t>(j)] * xhat[off + j];
                        }
                        mean_d /= m;
                        mean_dx /= m;
                        const Acc<T> is = inv_std[static_cast<size_t>(i)];
                        for (int j = 0; j < m; ++j) {
                          gx[off + j] += static_cast<T>(is * (dxh[static_cast<size_t>(j)] - mean_d - xhat[off + j] * mean_dx));
                        }
                      }
                    }
                  });
}

template <typename T>
Var<T> embedding(Var<T> table, const std::vector<int>& ids) {
  auto& g = graph_of(table);
  const auto& tv = table.value();
  const int vocab = tv.rows(), d = tv.cols();
  for (int id : ids) {
    if (id < -1 || id >= vocab) {
      throw VocabOverflow("embedding id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
  if (ids.empty()) throw ShapeMismatch("embedding: no ids");
  Tensor<T> out = matrix<T>(static_cast<int>(ids.size()), d);
  for (size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= 0) std::copy_n(tv.row(ids[r]), d, out.row(static_cast<int>(r)));
  }
  const int it = table.id, io = next_id(g);
  return g.record(std::move(out), {it}, [it, io, d, ids](Graph<T>& gr) {
    const auto& go = gr.grad(io);
    auto& gt = gr.grad_buffer(it);
    for (size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < 0) continue;
      T* dst = gt.data() + static_cast<size_t>(ids[r]) * d;
      const T* src = go.data() + r * static_cast<size_t>(d);
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  auto& g = graph_of(parts[0]);
  const int n = parts[0].rows();
  std::vector<int> widths, ids;
  int total = 0;
  for (const auto& p : parts) {
    same_graph(parts[0], p);
    if (p.rows() != n) throw ShapeMismatch("concat_cols: row counts differ");
    widths.push_back(p.cols());
    ids.push_back(p.id);
    total += p.cols();
  }
  Tensor<T> out = matrix<T>(n, total);
  for (int i = 0; i < n; ++i) {
    int off = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
      std::copy_n(parts[p].value().row(i), widths[p], out.row(i) + off);
      off += widths[p];
    }
  }
  const int io = next_id(g);
  return g.record(std::move(out), ids, [ids, widths, io, n, total](Graph<T>& gr) {
    const auto& go = gr.grad(io);
    int off = 0;
    for (size_t p = 0; p < ids.size(); ++p) {
      if (gr.needs_grad(ids[p])) {
        auto& gp = gr.grad_buffer(ids[p]);
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < widths[p]; ++j) {
            gp[static_cast<size_t>(i) * widths[p] + j] += go[static_cast<size_t>(i) * total + off + j];
          }
        }
      }
      off += widths[p];
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
  auto& g = graph_of(parts[0]);
  const int m = parts[0].cols();
  std::vector<int> ids;
  std::vector<size_t> offsets;
  int rows = 0;
  for (const auto& p : parts) {
    same_graph(parts[0], p);
    if (p.cols() != m) throw ShapeMismatch("concat_rows: column counts differ");
    ids.push_back(p.id);
    offsets.push_back(static_cast<size_t>(rows) * m);
    rows += p.rows();
  }
  Tensor<T> out = matrix<T>(rows, m);
  for (size_t p = 0; p < parts.size(); ++p) {
    const auto& d = parts[p].value().data;
    std::copy(d.begin(), d.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offsets[p]));
  }
  const int io = next_id(g);
  return g.record(std::move(out), ids, [ids, offsets, io](Graph<T>& gr) {
    const auto& go = gr.grad(io);
    for (size_t p = 0; p < ids.size(); ++p) {
      if (!gr.needs_grad(ids[p])) continue;
      auto& gp = gr.grad_buffer(ids[p]);
      for (size_t i = 0; i < gp.size(); ++i) gp[i] += go[offsets[p] + i];
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> x, const std::vector<int>& index) {
  auto& g = graph_of(x);
  const auto& xv = x.value();
  const int m = xv.cols();
  if (index.empty()) throw ShapeMismatch("gather_rows: empty index");
  for (int r : index) {
    if (r < -1 || r >= xv.rows()) throw std::out_of_range("gather_rows: row index out of range");
  }
  Tensor<T> out = matrix<T>(static_cast<int>(index.size()), m);
  for (size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= 0) std::copy_n(xv.row(index[r]), m, out.row(static_cast<int>(r)));
  }
  const int ix = x.id, io = next_id(g);
  return g.record(std::move(out), {ix}, [ix, io, m, index](Graph<T>& gr) {
    const auto& go = gr.grad(io);
    auto& gx = gr.grad_buffer(ix);
    for (size_t r = 0; r < index.size(); ++r) {
      if (index[r] < 0) continue;
      T* dst = gx.data() + static_cast<size_t>(index[r]) * m;
      const T* src = go.data() + r * static_cast<size_t>(m);
      for (int j = 0; j < m; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  require_finite<T>(logits, "softmax input");
  std::vector<T> out(logits.size());
  if (logits.empty()) return out;
  const T mx = *std::max_element(logits.begin(), logits.end());
  Acc<T> z = 0;
  for (size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - mx));
  for (auto& v : out) v = static_cast<T>(v / z);
  return out;
}

template <typename T>
std::vector<T> log_softmax(std::span<const T> logits) {
  require_finite<T>(logits, "log_softmax input");
  std::vector<T> out(logits.size());
  if (logits.empty()) return out;
  const T mx = *std::max_element(logits.begin(), logits.end());
  Acc<T> z = 0;
  for (T v : logits) z += std::exp(static_cast<Acc<T>>(v - mx));
  const T lz = static_cast<T>(std::log(z));
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - mx - lz;
  return out;
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  auto& g = graph_of(x);
  const auto& xv = x.value();
  const int n = xv.rows(), m = xv.cols();
  Tensor<T> out = matrix<T>(n, m);
  for (int i = 0; i < n; ++i) {
    auto row = softmax<T>(std::span<const T>(xv.row(i), static_cast<size_t>(m)));
    std::copy(row.begin(), row.end(), out.row(i));
  }
  const int ix = x.id, io = next_id(g);
  return g.record(std::move(out), {ix}, [ix, io, n, m](Graph<T>& gr) {
    const auto& go = gr.grad(io);
    const auto& y = gr.value(io).data;
    auto& gx = gr.grad_buffer(ix);
    for (int i = 0; i < n; ++i) {
      const size_t off = static_cast<size_t>(i) * m;
      Acc<T> dot = 0;
      for (int j = 0; j < m; ++j) dot += static_cast<Acc<T>>(go[off + j]) * y[off + j];
      for (int j = 0; j < m; ++j) gx[off + j] += static_cast<T>(y[off + j] * (go[off + j] - dot));
    }
  });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionSpec& spec, std::vector<T>* weights_out) {
  auto& g = graph_of(q);
  same_graph(q, k);
  same_graph(q, v);
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  const int B = spec.batch, Tq = spec.query_len, S = spec.key_len, H = qv.cols(), nh = spec.heads;
  if (nh <= 0 || H % nh != 0) throw ShapeMismatch("attention: head count must divide the hidden width");
  if (qv.rows() != B * Tq || kv.rows() != B * S || vv.rows() != B * S || kv.cols() != H || vv.cols() != H) {
    throw ShapeMismatch("attention: q/k/v shapes do not match the spec");
  }
  if (spec.causal && Tq != S) throw ShapeMismatch("attention: causal masking needs equal query and key lengths");
  if (!spec.key_valid.empty() && static_cast<int>(spec.key_valid.size()) != B * S) {
    throw ShapeMismatch("attention: key mask size mismatch");
  }
  const int dh = H / nh;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> weights(static_cast<size_t>(B) * nh * Tq * S, T(0));
  Tensor<T> out = matrix<T>(B * Tq, H);
  std::vector<Acc<T>> scores(static_cast<size_t>(S));
  std::vector<Acc<T>> oacc(static_cast<size_t>(H));
  std::vector<std::uint8_t> allowed(static_cast<size_t>(S));

  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < Tq; ++i) {
      bool any = false;
      for (int j = 0; j < S; ++j) {
        const bool ok = (!spec.causal || j <= i) && (spec.key_valid.empty() || spec.key_valid[static_cast<size_t>(b * S + j)]);
        allowed[static_cast<size_t>(j)] = ok;
        any = any || ok;
      }
      const T* qrow = qv.row(b * Tq + i);
      std::fill(oacc.begin(), oacc.end(), Acc<T>(0));
      for (int h = 0; h < nh; ++h) {
        const int c0 = h * dh;
        Acc<T> mx = -std::numeric_limits<Acc<T>>::infinity();
        for (int j = 0; j < S; ++j) {
          if (any && !allowed[static_cast<size_t>(j)]) continue;
          const T* krow = kv.row(b * S + j);
          Acc<T> s = 0;
          for (int c = 0; c < dh; ++c) s += static_cast<Acc<T>>(qrow[c0 + c]) * krow[c0 + c];
          s *= inv_scale;
          if (!allowed[static_cast<size_t>(j)]) s += kMaskedLogit;
          scores[static_cast<size_t>(j)] = s;
          mx = std::max(mx, s);
        }
        Acc<T> z = 0;
        for (int j = 0; j < S; ++j) {
          if (any && !allowed[static_cast<size_t>(j)]) continue;
          scores[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - mx);
          z += scores[static_cast<size_t>(j)];
        }
        T* w = weights.data() + ((static_cast<size_t>(b) * nh + h) * Tq + i) * S;
        for (int j = 0; j < S; ++j) {
          if (any && !allowed[static_cast<size_t>(j)]) continue;
          const Acc<T> wj = scores[static_cast<size_t>(j)] / z;
          w[j] = static_cast<T>(wj);
          const T* vrow = vv.row(b * S + j);
          for (int c = 0; c < dh; ++c) oacc[static_cast<size_t>(c0 + c)] += wj * vrow[c0 + c];
        }
      }
      std::copy(oacc.begin(), oacc.end(), out.row(b * Tq + i));
    }
  }
  if (weights_out) *weights_out = weights;
  const int iq = q.id, ik = k.id, iv = v.id, io = next_id(g);
  return g.record(
      std::move(out), {iq, ik, iv},
      [iq, ik, iv, io, B, Tq, S, H, nh, dh, inv_scale, weights = std::move(weights)](Graph<T>& gr) {
        const auto& go = gr.grad(io);
        const auto& qd = gr.value(iq);
        const auto& kd = gr.value(ik);
        const auto& vd = gr.value(iv);
        const bool need_q = gr.needs_grad(iq), need_k = gr.needs_grad(ik), need_v = gr.needs_grad(iv);
        std::vector<T>* gq = need_q ? &gr.grad_buffer(iq) : nullptr;
        std::vector<T>* gk = need_k ? &gr.grad_buffer(ik) : nullptr;
        std::vector<T>* gv = need_v ? &gr.grad_buffer(iv) : nullptr;
        std::vector<Acc<T>> dw(static_cast<size_t>(S));
        for (int b = 0; b < B; ++b) {
          for (int h = 0; h < nh; ++h) {
            const int c0 = h * dh;
            for (int i = 0; i < Tq; ++i) {
              const T* w = weights.data() + ((static_cast<size_t>(b) * nh + h) * Tq + i) * S;
              const T* grow = go.data() + static_cast<size_t>(b * Tq + i) * H;
              Acc<T> dot = 0;
              for (int j = 0; j < S; ++j) {
                if (w[j] == T(0)) {
                  dw[static_cast<size_t>(j)] = 0;
                  continue;
                }
                const T* vrow = vd.row(b * S + j);
                Acc<T> d = 0;
                for (int c = 0; c < dh; ++c) d += static_cast<Acc<T>>(grow[c0 + c]) * vrow[c0 + c];
                dw[static_cast<size_t>(j)] = d;
                dot += w[j] * d;
                if (gv) {
                  T* gvrow = gv->data() + static_cast<size_t>(b * S + j) * H;
                  for (int c = 0; c < dh; ++c) gvrow[c0 + c] += w[j] * grow[c0 + c];
                }
              }
              const T* qrow = qd.row(b * Tq + i);
              T* gqrow = gq ? gq->data() + static_cast<size_t>(b * Tq + i) * H : nullptr;
              for (int j = 0; j < S; ++j) {
                if (w[j] == T(0)) continue;
                const T ds = static_cast<T>(w[j] * (dw[static_cast<size_t>(j)] - dot) * inv_scale);
                const T* krow = kd.row(b * S + j);
                if (gqrow) {
                  for (int c = 0; c < dh; ++c) gqrow[c0 + c] += ds * krow[c0 + c];
                }
                if (gk) {
                  T* gkrow = gk->data() + static_cast<size_t>(b * S + j) * H;
                  for (int c = 0; c < dh; ++c) gkrow[c0 + c] += ds * qrow[c0 + c];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> pair_scores(Var<T> h, int batch, int len) {
  auto& g = graph_of(h);
  const auto& hv = h.value();
  const int H = hv.cols();
  if (batch <= 0 || len <= 0 || hv.rows() != batch * len) throw ShapeMismatch("pair_scores: shape mismatch");
  Tensor<T> out = matrix<T>(batch * len, len);
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < len; ++i) {
      const T* hi = hv.row(b * len + i);
      T* orow = out.row(b * len + i);
      for (int j = 0; j < len; ++j) {
        const T* hj = hv.row(b * len + j);
        Acc<T> s = 0;
        for (int c = 0; c < H; ++c) s += static_cast<Acc<T>>(hi[c]) * hj[c];
        orow[j] = static_cast<T>(s);
      }
    }
  }
  const int ih = h.id, io = next_id(g);
  return g.record(std::move(out), {ih}, [ih, io, batch, len, H](Graph<T>& gr) {
    const auto& go = gr.grad(io);
    const auto& hd = gr.value(ih);
    auto& gh = gr.grad_buffer(ih);
    for (int b = 0; b < batch; ++b) {
      for (int i = 0; i < len; ++i) {
        const T* gi = go.data() + static_cast<size_t>(b * len + i) * len;
        T* ghi = gh.data() + static_cast<size_t>(b * len + i) * H;
        const T* hi = hd.row(b * len + i);
        for (int j = 0; j < len; ++j) {
          const T gij = gi[j];
          if (gij == T(0)) continue;
          const T* hj = hd.row(b * len + j);
          T* ghj = gh.data() + static_cast<size_t>(b * len + j) * H;
          for (int c = 0; c < H; ++c) {
            ghi[c] += gij * hj[c];
            ghj[c] += gij * hi[c];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& targets, const std::vector<T>* additive_mask) {
  auto& g = graph_of(logits);
  const auto& lv = logits.value();
  const int n = lv.rows(), m = lv.cols();
  if (static_cast<int>(targets.size()) != n) throw ShapeMismatch("cross_entropy: one target per row required");
  if (additive_mask && !additive_mask->empty() && additive_mask->size() != lv.numel()) {
    throw ShapeMismatch("cross_entropy: mask shape mismatch");
  }
  const bool masked = additive_mask && !additive_mask->empty();
  std::vector<Acc<T>> probs(lv.numel(), Acc<T>(0));
  Acc<T> total = 0;
  std::vector<T> row(static_cast<size_t>(m));
  for (int i = 0; i < n; ++i) {
    const int t = targets[static_cast<size_t>(i)];
    if (t < 0) continue;
    if (t >= m) throw VocabOverflow("cross_entropy: target outside logit width");
    const T* l = lv.row(i);
    for (int j = 0; j < m; ++j) {
      row[static_cast<size_t>(j)] = l[j] + (masked ? (*additive_mask)[static_cast<size_t>(i) * m + j] : T(0));
    }
    const T mx = *std::max_element(row.begin(), row.end());
    Acc<T> z = 0;
    for (int j = 0; j < m; ++j) z += std::exp(static_cast<Acc<T>>(row[static_cast<size_t>(j)] - mx));
    const Acc<T> lse = static_cast<Acc<T>>(mx) + std::log(z);
    total += lse - static_cast<Acc<T>>(row[static_cast<size_t>(t)]);
    Acc<T>* p = probs.data() + static_cast<size_t>(i) * m;
    for (int j = 0; j < m; ++j) p[j] = std::exp(static_cast<Acc<T>>(row[static_cast<size_t>(j)]) - lse);
  }
  Tensor<T> out(std::vector<int>{1}, static_cast<T>(total));
  const int il = logits.id, io = next_id(g);
  return g.record(std::move(out), {il}, [il, io, n, m, targets, probs = std::move(probs)](Graph<T>& gr) {
    const Acc<T> go = gr.grad(io)[0];
    auto& gl = gr.grad_buffer(il);
    for (int i = 0; i < n; ++i) {
      const int t = targets[static_cast<size_t>(i)];
      if (t < 0) continue;
      const size_t off = static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) gl[off + j] += static_cast<T>(go * (probs[off + j] - (j == t ? 1 : 0)));
    }
  });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng) {
  auto& g = graph_of(x);
  if (rate <= 0.0 || !g.recording()) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<T> mask(x.value().numel());
  for (auto& m : mask) m = u(rng) < rate ? T(0) : keep_scale;
  Tensor<T> out = x.value();
  for (size_t i = 0; i < mask.size(); ++i) out.data[i] *= mask[i];
  const int ix = x.id, io = next_id(g);
  return g.record(std::move(out), {ix}, [ix, io, mask = std::move(mask)](Graph<T>& gr) {
    const auto& go = gr.grad(io);
    auto& gx = gr.grad_buffer(ix);
    for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * mask[i];
  });
}

#define LAYOUTCOMP_INSTANTIATE(T)                                                                          \
  template struct Var<T>;                                                                                  \
  template class Graph<T>;                                                                                 \
  template Var<T> add(Var<T>, Var<T>);                                                                     \
  template Var<T> mul(Var<T>, Var<T>);                                                                     \
  template Var<T> scale(Var<T>, T);                                                                        \
  template Var<T> sum(Var<T>);                                                                             \
  template Var<T> relu(Var<T>);                                                                            \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                                          \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                                   \
  template Var<T> embedding(Var<T>, const std::vector<int>&);                                              \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                                 \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                                 \
  template Var<T> gather_rows(Var<T>, const std::vector<int>&);                                            \
  template Var<T> softmax_rows(Var<T>);                                                                    \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, const AttentionSpec&, std::vector<T>*);                \
  template Var<T> pair_scores(Var<T>, int, int);                                                           \
  template Var<T> cross_entropy(Var<T>, const std::vector<int>&, const std::vector<T>*);                   \
  template Var<T> dropout(Var<T>, double, std::mt19937_64&);                                               \
  template std::vector<T> softmax(std::span<const T>);                                                     \
  template std::vector<T> log_softmax(std::span<const T>);

LAYOUTCOMP_INSTANTIATE(float)
LAYOUTCOMP_INSTANTIATE(double)
LAYOUTCOMP_INSTANTIATE(long double)

#undef LAYOUTCOMP_INSTANTIATE

}  // namespace layoutcomp::ad
