// Copyright 2026 The fracpos Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fracpos/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "fracpos/error.hpp"
#include "fracpos/flops.hpp"
#include "fracpos/kernels.hpp"

namespace fracpos::ops {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

Graph& graph_of(Var a) {
  if (!a.valid()) throw Error("op applied to an invalid Var");
  return *a.graph();
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  require(bv.rows() == k, "matmul: " + av.shape_string() + " x " + bv.shape_string());
  Tensor out = Tensor::matrix(m, n);
  kernels::gemm(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
  flops::record_matmul(m, k, n);
  return graph_of(a).make(std::move(out), {a, b}, [a, b, m, k, n](const Tensor& g) {
    if (a.requires_grad())
      kernels::gemm_nt(g.ptr(), b.value().ptr(), a.grad().ptr(), m, n, k, true);
    if (b.requires_grad())
      kernels::gemm_tn(a.value().ptr(), g.ptr(), b.grad().ptr(), m, k, n, true);
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  require(bv.cols() == k, "matmul_nt: " + av.shape_string() + " x " + bv.shape_string() + "^T");
  Tensor out = Tensor::matrix(m, n);
  kernels::gemm_nt(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
  flops::record_matmul(m, k, n);
  return graph_of(a).make(std::move(out), {a, b}, [a, b, m, k, n](const Tensor& g) {
    if (a.requires_grad()) kernels::gemm(g.ptr(), b.value().ptr(), a.grad().ptr(), m, n, k, true);
    if (b.requires_grad()) kernels::gemm_tn(g.ptr(), a.value().ptr(), b.grad().ptr(), m, n, k, true);
  });
}

Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const std::size_t m = xv.rows(), k = xv.cols(), n = wv.cols();
  require(wv.rows() == k, "linear: " + xv.shape_string() + " x " + wv.shape_string());
  Tensor out = Tensor::matrix(m, n);
  if (b.valid()) {
    const Tensor& bv = b.value();
    require(bv.size() == n, "linear: bias " + bv.shape_string());
    for (std::size_t i = 0; i < m; ++i) std::copy(bv.ptr(), bv.ptr() + n, out.ptr() + i * n);
  }
  kernels::gemm(xv.ptr(), wv.ptr(), out.ptr(), m, k, n, b.valid());
  flops::record_matmul(m, k, n);
  Graph& g = graph_of(x);
  return g.make(std::move(out), {x, w, b}, [x, w, b, m, k, n](const Tensor& gr) {
    if (x.requires_grad())
      kernels::gemm_nt(gr.ptr(), w.value().ptr(), x.grad().ptr(), m, n, k, true);
    if (w.requires_grad())
      kernels::gemm_tn(x.value().ptr(), gr.ptr(), w.grad().ptr(), m, k, n, true);
    if (b.valid() && b.requires_grad()) {
      double* db = b.grad().ptr();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += gr[i * n + j];
    }
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.same_shape(bv), "add: " + av.shape_string() + " vs " + bv.shape_string());
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return graph_of(a).make(std::move(out), {a, b}, [a, b](const Tensor& g) {
    for (Var v : {a, b}) {
      if (!v.requires_grad()) continue;
      Tensor& d = v.grad();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return graph_of(a).make(std::move(out), {a}, [a, s](const Tensor& g) {
    Tensor& d = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g[i];
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return graph_of(a).make(std::move(out), {a}, [a](const Tensor& g) {
    const Tensor& x = a.value();
    Tensor& d = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) d[i] += g[i];
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  require(gamma.value().size() == n && beta.value().size() == n, "layer_norm: width mismatch");
  Tensor out = Tensor::matrix(m, n);
  Graph& g = graph_of(x);
  const bool keep = g.recording();
  auto xhat = std::make_shared<Tensor>(keep ? Tensor::matrix(m, n) : Tensor());
  auto inv_std = std::make_shared<std::vector<double>>(keep ? m : 0);
  const double* ga = gamma.value().ptr();
  const double* be = beta.value().ptr();
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = xv.ptr() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += r[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    double* o = out.ptr() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (r[j] - mean) * is;
      if (keep) xhat->at(i, j) = h;
      o[j] = h * ga[j] + be[j];
    }
    if (keep) (*inv_std)[i] = is;
  }
  return g.make(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, inv_std, m, n](const Tensor& gr) {
                  const double* ga = gamma.value().ptr();
                  if (gamma.requires_grad() || beta.requires_grad()) {
                    double* dg = gamma.requires_grad() ? gamma.grad().ptr() : nullptr;
                    double* db = beta.requires_grad() ? beta.grad().ptr() : nullptr;
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) {
                        if (dg) dg[j] += gr[i * n + j] * xhat->at(i, j);
                        if (db) db[j] += gr[i * n + j];
                      }
                  }
                  if (!x.requires_grad()) return;
                  Tensor& dx = x.grad();
                  std::vector<double> dh(n);
                  for (std::size_t i = 0; i < m; ++i) {
                    double mean_dh = 0.0, mean_dhx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      dh[j] = gr[i * n + j] * ga[j];
                      mean_dh += dh[j];
                      mean_dhx += dh[j] * xhat->at(i, j);
                    }
                    mean_dh /= static_cast<double>(n);
                    mean_dhx /= static_cast<double>(n);
                    const double is = (*inv_std)[i];
                    for (std::size_t j = 0; j < n; ++j)
                      dx[i * n + j] += is * (dh[j] - mean_dh - xhat->at(i, j) * mean_dhx);
                  }
                });
}

Var gather_rows(Var x, std::vector<std::size_t> index) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  Tensor out = Tensor::matrix(index.size(), n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < xv.rows(), "gather_rows: index out of range");
    std::copy_n(xv.ptr() + index[i] * n, n, out.ptr() + i * n);
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
  return graph_of(x).make(std::move(out), {x}, [x, idx, n](const Tensor& g) {
    Tensor& d = x.grad();
    for (std::size_t i = 0; i < idx->size(); ++i) {
      double* dr = d.ptr() + (*idx)[i] * n;
      const double* gr = g.ptr() + i * n;
      for (std::size_t j = 0; j < n; ++j) dr[j] += gr[j];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  bool rg = false;
  for (const Var& p : parts) {
    require(p.cols() == n, "concat_rows: width mismatch");
    total += p.rows();
    rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::matrix(total, n);
  std::size_t at = 0;
  for (const Var& p : parts) {
    std::copy(p.value().ptr(), p.value().ptr() + p.value().size(), out.ptr() + at * n);
    at += p.rows();
  }
  auto saved = std::make_shared<std::vector<Var>>(parts.begin(), parts.end());
  return graph_of(parts.front()).make(std::move(out), rg, [saved, n](const Tensor& g) {
    std::size_t at = 0;
    for (const Var& p : *saved) {
      const std::size_t r = p.rows();
      if (p.requires_grad()) {
        Tensor& d = p.grad();
        for (std::size_t i = 0; i < r * n; ++i) d[i] += g[at * n + i];
      }
      at += r;
    }
  });
}

Var concat_cols(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rows() == bv.rows(), "concat_cols: row mismatch");
  const std::size_t m = av.rows(), na = av.cols(), nb = bv.cols();
  Tensor out = Tensor::matrix(m, na + nb);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.ptr() + i * na, na, out.ptr() + i * (na + nb));
    std::copy_n(bv.ptr() + i * nb, nb, out.ptr() + i * (na + nb) + na);
  }
  return graph_of(a).make(std::move(out), {a, b}, [a, b, m, na, nb](const Tensor& g) {
    if (a.requires_grad()) {
      Tensor& d = a.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < na; ++j) d[i * na + j] += g[i * (na + nb) + j];
    }
    if (b.requires_grad()) {
      Tensor& d = b.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < nb; ++j) d[i * nb + j] += g[i * (na + nb) + na + j];
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return graph_of(a).make(Tensor::scalar(s), {a}, [a](const Tensor& g) {
    for (double& d : a.grad().data()) d += g[0];
  });
}

Var half_sum_squares(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += 0.5 * v * v;
  return graph_of(a).make(Tensor::scalar(s), {a}, [a](const Tensor& g) {
    const Tensor& x = a.value();
    Tensor& d = a.grad();
    for (std::size_t i = 0; i < x.size(); ++i) d[i] += g[0] * x[i];
  });
}

Var dot(Var a, const Tensor& weights) {
  require(a.value().size() == weights.size(), "dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += a.value()[i] * weights[i];
  auto w = std::make_shared<Tensor>(weights);
  return graph_of(a).make(Tensor::scalar(s), {a}, [a, w](const Tensor& g) {
    Tensor& d = a.grad();
    for (std::size_t i = 0; i < w->size(); ++i) d[i] += g[0] * (*w)[i];
  });
}

namespace {

struct AttnSaved {
  // probs[s][h] holds the q_len x k_len softmax of segment s, head h.
  std::vector<std::vector<std::vector<double>>> probs;
};

bool ranges_disjoint(std::span<const AttentionSegment> segs, bool keys) {
  std::vector<std::pair<std::size_t, std::size_t>> r;
  for (const auto& s : segs) {
    if (keys) r.emplace_back(s.k_begin, s.k_begin + s.k_len);
    else r.emplace_back(s.q_begin, s.q_begin + s.q_len);
  }
  std::sort(r.begin(), r.end());
  for (std::size_t i = 1; i < r.size(); ++i)
    if (r[i].first < r[i - 1].second) return false;
  return true;
}

}  // namespace

Var attention(Var q, Var k, Var v, std::span<const AttentionSegment> segments, int heads,
              Var rel_bias) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t d = qv.cols();
  require(heads > 0 && d % static_cast<std::size_t>(heads) == 0,
          "attention: width not divisible by heads");
  require(kv.cols() == d && vv.cols() == d && kv.rows() == vv.rows(),
          "attention: q/k/v width mismatch");
  const auto nh = static_cast<std::size_t>(heads);
  const std::size_t dh = d / nh;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  if (rel_bias.valid())
    require(rel_bias.value().rows() == 3 && rel_bias.value().cols() == nh,
            "attention: rel_bias must be [3 x heads]");
  for (const auto& s : segments) {
    require(s.q_begin + s.q_len <= qv.rows() && s.k_begin + s.k_len <= kv.rows(),
            "attention: segment out of range");
    require(s.mask.empty() || s.mask.size() == s.q_len * s.k_len, "attention: mask shape mismatch");
    require(s.relation.empty() || s.relation.size() == s.q_len * s.k_len,
            "attention: relation shape mismatch");
    for (std::size_t i = 0; i < s.q_len; ++i) {
      bool any = s.k_len > 0;
      if (!s.mask.empty()) {
        any = false;
        for (std::size_t j = 0; j < s.k_len && !any; ++j) any = s.mask[i * s.k_len + j] != 0;
      }
      if (!any) throw NumericError("empty attention row");
    }
    for (std::size_t h = 0; h < nh; ++h) {
      flops::record_matmul(s.q_len, dh, s.k_len);
      flops::record_matmul(s.q_len, s.k_len, dh);
    }
  }
  require(ranges_disjoint(segments, false), "attention: query ranges overlap");

  Graph& g = graph_of(q);
  const bool keep = g.recording();
  Tensor out = Tensor::matrix(qv.rows(), d);
  auto saved = std::make_shared<AttnSaved>();
  if (keep) saved->probs.resize(segments.size(), std::vector<std::vector<double>>(nh));
  const double* bias = rel_bias.valid() ? rel_bias.value().ptr() : nullptr;
  const std::size_t tasks = segments.size() * nh;

#pragma omp parallel for schedule(dynamic) if (tasks > 1 && qv.rows() * kv.rows() * d > 65536)
  for (std::ptrdiff_t tt = 0; tt < static_cast<std::ptrdiff_t>(tasks); ++tt) {
    const auto t = static_cast<std::size_t>(tt);
    const AttentionSegment& s = segments[t / nh];
    const std::size_t h = t % nh;
    std::vector<double> p(s.q_len * s.k_len, 0.0);
    for (std::size_t i = 0; i < s.q_len; ++i) {
      const double* qi = qv.ptr() + (s.q_begin + i) * d + h * dh;
      double* pr = p.data() + i * s.k_len;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.k_len; ++j) {
        if (!s.mask.empty() && !s.mask[i * s.k_len + j]) continue;
        const double* kj = kv.ptr() + (s.k_begin + j) * d + h * dh;
        double dotv = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dotv += qi[c] * kj[c];
        double sc = dotv * inv_sqrt;
        if (bias && !s.relation.empty()) sc += bias[(s.relation[i * s.k_len + j] + 1) * nh + h];
        pr[j] = sc;
        mx = std::max(mx, sc);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < s.k_len; ++j) {
        if (!s.mask.empty() && !s.mask[i * s.k_len + j]) continue;
        pr[j] = std::exp(pr[j] - mx);
        z += pr[j];
      }
      double* o = out.ptr() + (s.q_begin + i) * d + h * dh;
      for (std::size_t j = 0; j < s.k_len; ++j) {
        if (!s.mask.empty() && !s.mask[i * s.k_len + j]) continue;
        pr[j] /= z;
        const double* vj = vv.ptr() + (s.k_begin + j) * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) o[c] += pr[j] * vj[c];
      }
    }
    if (keep) saved->probs[t / nh][h] = std::move(p);
  }

  auto segs = std::make_shared<std::vector<AttentionSegment>>(segments.begin(), segments.end());
  const bool keys_disjoint = ranges_disjoint(segments, true);
  return g.make(
      std::move(out), {q, k, v, rel_bias},
      [q, k, v, rel_bias, segs, saved, nh, dh, d, inv_sqrt, keys_disjoint](const Tensor& gr) {
        const Tensor& qv = q.value();
        const Tensor& kv = k.value();
        const Tensor& vv = v.value();
        double* dq = q.requires_grad() ? q.grad().ptr() : nullptr;
        double* dk = k.requires_grad() ? k.grad().ptr() : nullptr;
        double* dv = v.requires_grad() ? v.grad().ptr() : nullptr;
        const bool want_bias = rel_bias.valid() && rel_bias.requires_grad();
        const std::size_t tasks = segs->size() * nh;
        std::vector<double> bias_part(want_bias ? tasks * 3 : 0, 0.0);
        const bool par = keys_disjoint && tasks > 1;
        (void)par;
#pragma omp parallel for schedule(dynamic) if (par)
        for (std::ptrdiff_t tt = 0; tt < static_cast<std::ptrdiff_t>(tasks); ++tt) {
          const auto t = static_cast<std::size_t>(tt);
          const AttentionSegment& s = (*segs)[t / nh];
          const std::size_t h = t % nh;
          const std::vector<double>& p = saved->probs[t / nh][h];
          std::vector<double> ds(s.k_len);
          for (std::size_t i = 0; i < s.q_len; ++i) {
            const double* go = gr.ptr() + (s.q_begin + i) * d + h * dh;
            const double* pr = p.data() + i * s.k_len;
            double rowdot = 0.0;
            for (std::size_t j = 0; j < s.k_len; ++j) {
              ds[j] = 0.0;
              if (pr[j] == 0.0) continue;
              const double* vj = vv.ptr() + (s.k_begin + j) * d + h * dh;
              double dp = 0.0;
              for (std::size_t c = 0; c < dh; ++c) dp += go[c] * vj[c];
              ds[j] = dp;
              rowdot += dp * pr[j];
              if (dv) {
                double* dvj = dv + (s.k_begin + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) dvj[c] += pr[j] * go[c];
              }
            }
            const double* qi = qv.ptr() + (s.q_begin + i) * d + h * dh;
            double* dqi = dq ? dq + (s.q_begin + i) * d + h * dh : nullptr;
            for (std::size_t j = 0; j < s.k_len; ++j) {
              if (pr[j] == 0.0) continue;
              const double dsc = pr[j] * (ds[j] - rowdot);
              if (want_bias && !s.relation.empty()) bias_part[t * 3 + static_cast<std::size_t>(s.relation[i * s.k_len + j] + 1)] += dsc;
              const double* kj = kv.ptr() + (s.k_begin + j) * d + h * dh;
              if (dqi)
                for (std::size_t c = 0; c < dh; ++c) dqi[c] += dsc * inv_sqrt * kj[c];
              if (dk) {
                double* dkj = dk + (s.k_begin + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) dkj[c] += dsc * inv_sqrt * qi[c];
              }
            }
          }
        }
        if (want_bias) {
          Tensor& db = rel_bias.grad();
          for (std::size_t t = 0; t < tasks; ++t) {
            const AttentionSegment& s = (*segs)[t / nh];
            if (s.relation.empty()) continue;
            for (std::size_t r = 0; r < 3; ++r) db[r * nh + t % nh] += bias_part[t * 3 + r];
          }
        }
      });
}

Var log_softmax(Var logits, std::span<const unsigned char> allowed) {
  const Tensor& x = logits.value();
  const std::size_t m = x.rows(), n = x.cols();
  require(allowed.size() == n, "log_softmax: allowed mask width mismatch");
  Tensor out = Tensor::matrix(m, n, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = x.ptr() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (allowed[j]) mx = std::max(mx, r[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (allowed[j]) z += std::exp(r[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j)
      if (allowed[j]) out[i * n + j] = r[j] - lz;
  }
  Graph& g = graph_of(logits);
  if (!g.recording()) return g.make(std::move(out), false, {});
  auto mask = std::make_shared<std::vector<unsigned char>>(allowed.begin(), allowed.end());
  auto saved = std::make_shared<Tensor>(out);
  return g.make(std::move(out), {logits}, [logits, mask, saved, m, n](const Tensor& gr) {
    Tensor& d = logits.grad();
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if ((*mask)[j]) gs += gr[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        if ((*mask)[j]) d[i * n + j] += gr[i * n + j] - std::exp((*saved)[i * n + j]) * gs;
    }
  });
}

Var soft_cross_entropy(Var logits, std::span<const unsigned char> allowed,
                       std::span<const RowTarget> targets) {
  const Tensor& x = logits.value();
  const std::size_t m = x.rows(), n = x.cols();
  require(allowed.size() == n, "soft_cross_entropy: allowed mask width mismatch");
  require(targets.size() == m, "soft_cross_entropy: one target per row required");
  std::size_t n_allowed = 0;
  for (auto a : allowed) n_allowed += a ? 1 : 0;
  require(n_allowed > 0, "soft_cross_entropy: no allowed outcome");
  Graph& g = graph_of(logits);
  auto probs = std::make_shared<Tensor>(Tensor::matrix(m, n));
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = x.ptr() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (allowed[j]) mx = std::max(mx, r[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (allowed[j]) z += std::exp(r[j] - mx);
    const double lz = mx + std::log(z);
    double* pr = probs->ptr() + i * n;
    double uniform_term = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (allowed[j]) {
        pr[j] = std::exp(r[j] - lz);
        uniform_term += r[j] - lz;
      }
    const RowTarget& t = targets[i];
    double row = 0.0;
    for (const auto& [id, mass] : t.probs) {
      require(id >= 0 && static_cast<std::size_t>(id) < n && allowed[static_cast<std::size_t>(id)],
              "soft_cross_entropy: target id not allowed");
      row -= mass * (r[id] - lz);
    }
    if (t.uniform_mass != 0.0) row -= t.uniform_mass / static_cast<double>(n_allowed) * uniform_term;
    loss += t.weight * row;
  }
  if (!std::isfinite(loss)) throw NumericError("soft_cross_entropy: non-finite loss");
  auto tg = std::make_shared<std::vector<RowTarget>>(targets.begin(), targets.end());
  auto mask = std::make_shared<std::vector<unsigned char>>(allowed.begin(), allowed.end());
  return g.make(Tensor::scalar(loss), {logits},
                [logits, probs, tg, mask, m, n, n_allowed](const Tensor& gr) {
                  Tensor& d = logits.grad();
                  for (std::size_t i = 0; i < m; ++i) {
                    const RowTarget& t = (*tg)[i];
                    double qsum = t.uniform_mass;
                    for (const auto& pm : t.probs) qsum += pm.second;
                    const double w = gr[0] * t.weight;
                    const double u = t.uniform_mass / static_cast<double>(n_allowed);
                    for (std::size_t j = 0; j < n; ++j)
                      if ((*mask)[j]) d[i * n + j] += w * (qsum * (*probs)[i * n + j] - u);
                    for (const auto& [id, mass] : t.probs) d[i * n + static_cast<std::size_t>(id)] -= w * mass;
                  }
                });
}

}  // namespace fracpos::ops
