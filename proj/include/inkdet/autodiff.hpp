/* Copyright (c) 2026 The inkdet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "inkdet/boxes.hpp"
#include "inkdet/error.hpp"
#include "inkdet/rng.hpp"
#include "inkdet/tensor.hpp"

namespace inkdet {

namespace detail {

template <typename T>
inline T dot(const T* a, const T* b, int n) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

/// Reverse-mode tape over dense tensors. Values are computed eagerly; each
/// node stores a closure that routes its output gradient to its inputs.
/// One graph serves one forward/backward pass and is confined to a single
/// thread.
template <typename T>
class Graph {
 public:
  using NodeId = int;

  // ---- leaves ----

  NodeId input(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  const Tensor<T>& grad(NodeId id) const { return nodes_.at(id).grad; }

  // ---- convolution ----

  NodeId conv2d(NodeId xid, NodeId wid, NodeId bid, int stride, int padding) {
    const Tensor<T>& x = value(xid);
    const Tensor<T>& w = value(wid);
    const Tensor<T>& b = value(bid);
    if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1) {
      throw ShapeMismatch("conv2d: expected x[N,C,H,W], w[K,C,kh,kw], b[K]");
    }
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != C) throw ShapeMismatch("conv2d: channel mismatch");
    if (b.dim(0) != K) throw ShapeMismatch("conv2d: bias size mismatch");
    if (stride < 1) throw ShapeMismatch("conv2d: stride must be >= 1");
    if (kh > H + 2 * padding || kw > W + 2 * padding) {
      throw ShapeMismatch("conv2d: kernel larger than padded input");
    }
    const int Ho = (H + 2 * padding - kh) / stride + 1;
    const int Wo = (W + 2 * padding - kw) / stride + 1;
    const int M = Ho * Wo;        // output positions per batch
    const int Q = C * kh * kw;    // patch length

    Tensor<T> out({N, K, Ho, Wo});
    auto cols = std::make_shared<std::vector<T>>(
        static_cast<std::size_t>(N) * M * Q);
    std::vector<T> tmp(static_cast<std::size_t>(M) * K);

    for (int n = 0; n < N; ++n) {
      T* col = cols->data() + static_cast<std::size_t>(n) * M * Q;
      im2col(x, n, kh, kw, stride, padding, Ho, Wo, col);
      // tmp[p,k] = col.row(p) . w.row(k) + b[k]
      for (int p = 0; p < M; ++p) {
        const T* cp = col + static_cast<std::size_t>(p) * Q;
        T* tp = tmp.data() + static_cast<std::size_t>(p) * K;
        for (int k = 0; k < K; ++k) {
          tp[k] = detail::dot(cp, &w.data[static_cast<std::size_t>(k) * Q], Q) +
                  b.data[k];
        }
      }
      // position-major -> channel-major
      for (int k = 0; k < K; ++k) {
        T* dst = &out.at4(n, k, 0, 0);
        for (int p = 0; p < M; ++p) dst[p] = tmp[static_cast<std::size_t>(p) * K + k];
      }
    }

    return make_node(std::move(out), [=, this](Graph& g) {
      const Tensor<T>& gout = g.nodes_[g.self_].grad;
      const Tensor<T>& xv = g.nodes_[xid].value;
      const Tensor<T>& wv = g.nodes_[wid].value;
      Tensor<T>& gx = g.nodes_[xid].grad;
      Tensor<T>& gw = g.nodes_[wid].grad;
      Tensor<T>& gb = g.nodes_[bid].grad;
      std::vector<T> gtmp(static_cast<std::size_t>(M) * K);
      std::vector<T> gcols(static_cast<std::size_t>(M) * Q);
      for (int n = 0; n < N; ++n) {
        const T* col = cols->data() + static_cast<std::size_t>(n) * M * Q;
        for (int k = 0; k < K; ++k) {
          const T* src = &gout.at4(n, k, 0, 0);
          for (int p = 0; p < M; ++p) gtmp[static_cast<std::size_t>(p) * K + k] = src[p];
        }
        std::fill(gcols.begin(), gcols.end(), T(0));
        for (int p = 0; p < M; ++p) {
          const T* gp = gtmp.data() + static_cast<std::size_t>(p) * K;
          const T* cp = col + static_cast<std::size_t>(p) * Q;
          T* gcp = gcols.data() + static_cast<std::size_t>(p) * Q;
          for (int k = 0; k < K; ++k) {
            const T gk = gp[k];
            if (gk == T(0)) continue;
            gb.data[k] += gk;
            detail::axpy(gk, cp, &gw.data[static_cast<std::size_t>(k) * Q], Q);
            detail::axpy(gk, &wv.data[static_cast<std::size_t>(k) * Q], gcp, Q);
          }
        }
        col2im(gcols.data(), n, xv.dim(1), xv.dim(2), xv.dim(3), kh, kw, stride,
               padding, Ho, Wo, gx);
      }
      g.mark(xid);
      g.mark(wid);
      g.mark(bid);
    });
  }

  // ---- elementwise and structural ops ----

  NodeId relu(NodeId xid) {
    const Tensor<T>& x = value(xid);
    Tensor<T> out = x;
    for (T& v : out.data) v = v > T(0) ? v : T(0);
    return make_node(std::move(out), [=, this](Graph& g) {
      const Tensor<T>& gout = g.nodes_[g.self_].grad;
      const Tensor<T>& xv = g.nodes_[xid].value;
      Tensor<T>& gx = g.nodes_[xid].grad;
      for (std::size_t i = 0; i < xv.data.size(); ++i) {
        if (xv.data[i] > T(0)) gx.data[i] += gout.data[i];
      }
      g.mark(xid);
    });
  }

  /// 2x2 max pooling with stride 2; odd trailing rows/columns pool over
  /// the available elements. Gradient goes to the first-found argmax.
  NodeId max_pool2(NodeId xid) {
    const Tensor<T>& x = value(xid);
    if (x.rank() != 4) throw ShapeMismatch("max_pool2: expected [N,C,H,W]");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
    Tensor<T> out({N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.data.size());
    std::size_t oi = 0;
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        for (int yo = 0; yo < Ho; ++yo) {
          for (int xo = 0; xo < Wo; ++xo, ++oi) {
            T best{};
            std::int64_t best_idx = -1;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const int yy = yo * 2 + dy, xx = xo * 2 + dx;
                if (yy >= H || xx >= W) continue;
                const std::int64_t idx =
                    ((static_cast<std::int64_t>(n) * C + c) * H + yy) * W + xx;
                if (best_idx < 0 || x.data[idx] > best) {
                  best = x.data[idx];
                  best_idx = idx;
                }
              }
            }
            out.data[oi] = best;
            (*argmax)[oi] = best_idx;
          }
        }
      }
    }
    return make_node(std::move(out), [=, this](Graph& g) {
      const Tensor<T>& gout = g.nodes_[g.self_].grad;
      Tensor<T>& gx = g.nodes_[xid].grad;
      for (std::size_t i = 0; i < gout.data.size(); ++i) {
        gx.data[(*argmax)[i]] += gout.data[i];
      }
      g.mark(xid);
    });
  }

  /// x[N,D] * w[D,E] + b[E].
  NodeId linear(NodeId xid, NodeId wid, NodeId bid) {
    const Tensor<T>& x = value(xid);
    const Tensor<T>& w = value(wid);
    const Tensor<T>& b = value(bid);
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(0) ||
        w.dim(1) != b.dim(0)) {
      throw ShapeMismatch("linear: expected x[N,D], w[D,E], b[E]");
    }
    const int N = x.dim(0), D = x.dim(1), E = w.dim(1);
    Tensor<T> out({N, E});
    for (int n = 0; n < N; ++n) {
      T* on = &out.at2(n, 0);
      for (int e = 0; e < E; ++e) on[e] = b.data[e];
      for (int d = 0; d < D; ++d) {
        const T xv = x.at2(n, d);
        if (xv != T(0)) detail::axpy(xv, &w.at2(d, 0), on, E);
      }
    }
    return make_node(std::move(out), [=, this](Graph& g) {
      const Tensor<T>& gout = g.nodes_[g.self_].grad;
      const Tensor<T>& xv = g.nodes_[xid].value;
      const Tensor<T>& wv = g.nodes_[wid].value;
      Tensor<T>& gx = g.nodes_[xid].grad;
      Tensor<T>& gw = g.nodes_[wid].grad;
      Tensor<T>& gb = g.nodes_[bid].grad;
      for (int n = 0; n < N; ++n) {
        const T* gn = &gout.at2(n, 0);
        for (int e = 0; e < E; ++e) gb.data[e] += gn[e];
        for (int d = 0; d < D; ++d) {
          gx.at2(n, d) += detail::dot(gn, &wv.at2(d, 0), E);
          const T xnd = xv.at2(n, d);
          if (xnd != T(0)) detail::axpy(xnd, gn, &gw.at2(d, 0), E);
        }
      }
      g.mark(xid);
      g.mark(wid);
      g.mark(bid);
    });
  }

  NodeId add(NodeId aid, NodeId bid) {
    const Tensor<T>& a = value(aid);
    const Tensor<T>& b = value(bid);
    if (a.shape != b.shape) throw ShapeMismatch("add: shape mismatch");
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return make_node(std::move(out), [=, this](Graph& g) {
      const Tensor<T>& gout = g.nodes_[g.self_].grad;
      Tensor<T>& ga = g.nodes_[aid].grad;
      Tensor<T>& gb = g.nodes_[bid].grad;
      for (std::size_t i = 0; i < gout.data.size(); ++i) {
        ga.data[i] += gout.data[i];
        gb.data[i] += gout.data[i];
      }
      g.mark(aid);
      g.mark(bid);
    });
  }

  NodeId mul_scalar(NodeId xid, T s) {
    Tensor<T> out = value(xid);
    for (T& v : out.data) v *= s;
    return make_node(std::move(out), [=, this](Graph& g) {
      const Tensor<T>& gout = g.nodes_[g.self_].grad;
      Tensor<T>& gx = g.nodes_[xid].grad;
      for (std::size_t i = 0; i < gout.data.size(); ++i) gx.data[i] += s * gout.data[i];
      g.mark(xid);
    });
  }

  /// Concatenation along axis 0; trailing dimensions must match.
  NodeId concat0(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw ShapeMismatch("concat0: empty input list");
    std::vector<int> shape = value(xs[0]).shape;
    int total = 0;
    for (NodeId id : xs) {
      const Tensor<T>& t = value(id);
      if (t.rank() != static_cast<int>(shape.size())) {
        throw ShapeMismatch("concat0: rank mismatch");
      }
      for (std::size_t i = 1; i < shape.size(); ++i) {
        if (t.shape[i] != shape[i]) throw ShapeMismatch("concat0: trailing dims differ");
      }
      total += t.dim(0);
    }
    shape[0] = total;
    Tensor<T> out(shape);
    std::size_t off = 0;
    for (NodeId id : xs) {
      const Tensor<T>& t = value(id);
      std::copy(t.data.begin(), t.data.end(), out.data.begin() + off);
      off += t.data.size();
    }
    auto parts = std::make_shared<std::vector<NodeId>>(xs);
    return make_node(std::move(out), [=, this](Graph& g) {
      const Tensor<T>& gout = g.nodes_[g.self_].grad;
      std::size_t pos = 0;
      for (NodeId id : *parts) {
        Tensor<T>& gi = g.nodes_[id].grad;
        for (std::size_t i = 0; i < gi.data.size(); ++i) gi.data[i] += gout.data[pos + i];
        pos += gi.data.size();
        g.mark(id);
      }
    });
  }

  NodeId reshape(NodeId xid, std::vector<int> new_shape) {
    const Tensor<T>& x = value(xid);
    if (numel_of(new_shape) != x.numel()) {
      throw ShapeMismatch("reshape: element count mismatch");
    }
    Tensor<T> out(std::move(new_shape), x.data);
    return make_node(std::move(out), [=, this](Graph& g) {
      const Tensor<T>& gout = g.nodes_[g.self_].grad;
      Tensor<T>& gx = g.nodes_[xid].grad;
      for (std::size_t i = 0; i < gout.data.size(); ++i) gx.data[i] += gout.data[i];
      g.mark(xid);
    });
  }

  /// out.data[i] = x.data[indices[i]]; the inverse scatter-adds.
  NodeId gather(NodeId xid, std::shared_ptr<const std::vector<std::int64_t>> indices,
                std::vector<int> out_shape) {
    const Tensor<T>& x = value(xid);
    if (static_cast<std::int64_t>(indices->size()) != numel_of(out_shape)) {
      throw ShapeMismatch("gather: index count does not match output shape");
    }
    Tensor<T> out(std::move(out_shape));
    for (std::size_t i = 0; i < indices->size(); ++i) {
      out.data[i] = x.data[(*indices)[i]];
    }
    return make_node(std::move(out), [=, this](Graph& g) {
      const Tensor<T>& gout = g.nodes_[g.self_].grad;
      Tensor<T>& gx = g.nodes_[xid].grad;
      for (std::size_t i = 0; i < indices->size(); ++i) {
        gx.data[(*indices)[i]] += gout.data[i];
      }
      g.mark(xid);
    });
  }

  NodeId sum(NodeId xid) {
    const Tensor<T>& x = value(xid);
    T s = T(0);
    for (const T& v : x.data) s += v;
    return make_node(Tensor<T>::scalar(s), [=, this](Graph& g) {
      const T go = g.nodes_[g.self_].grad.data[0];
      Tensor<T>& gx = g.nodes_[xid].grad;
      for (T& v : gx.data) v += go;
      g.mark(xid);
    });
  }

  // ---- losses ----

  /// Weighted mean of -log softmax(logits)[target]. Rows with weight 0
  /// are skipped outright, so their logits never influence the value or
  /// the gradient. Denominator is max(1, sum of weights).
  NodeId softmax_cross_entropy(NodeId lid, std::vector<int> targets,
                               std::vector<T> weights) {
    const Tensor<T>& logits = value(lid);
    if (logits.rank() != 2) throw ShapeMismatch("softmax_cross_entropy: logits[N,C]");
    const int N = logits.dim(0), C = logits.dim(1);
    if (static_cast<int>(targets.size()) != N ||
        static_cast<int>(weights.size()) != N) {
      throw ShapeMismatch("softmax_cross_entropy: targets/weights length mismatch");
    }
    T wsum = T(0);
    for (int i = 0; i < N; ++i) {
      if (weights[i] < T(0)) throw BadTarget("negative weight");
      if (targets[i] < 0 || targets[i] >= C) {
        throw BadTarget("target " + std::to_string(targets[i]) + " outside [0," +
                        std::to_string(C) + ")");
      }
      wsum += weights[i];
    }
    const T denom = std::max(T(1), wsum);

    auto probs = std::make_shared<std::vector<T>>(logits.data.size(), T(0));
    T loss = T(0);
    for (int i = 0; i < N; ++i) {
      if (weights[i] == T(0)) continue;
      const T* row = &logits.at2(i, 0);
      T* prow = probs->data() + static_cast<std::size_t>(i) * C;
      T mx = row[0];
      for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      T z = T(0);
      for (int c = 0; c < C; ++c) {
        prow[c] = std::exp(row[c] - mx);
        z += prow[c];
      }
      for (int c = 0; c < C; ++c) prow[c] /= z;
      loss += weights[i] * (-std::log(std::max(prow[targets[i]], T(1e-30))));
    }
    loss /= denom;

    auto tgt = std::make_shared<std::vector<int>>(std::move(targets));
    auto wts = std::make_shared<std::vector<T>>(std::move(weights));
    return make_node(Tensor<T>::scalar(loss), [=, this](Graph& g) {
      const T go = g.nodes_[g.self_].grad.data[0];
      Tensor<T>& gl = g.nodes_[lid].grad;
      for (int i = 0; i < N; ++i) {
        const T w = (*wts)[i];
        if (w == T(0)) continue;
        const T* prow = probs->data() + static_cast<std::size_t>(i) * C;
        T* grow = &gl.at2(i, 0);
        const T scale = go * w / denom;
        for (int c = 0; c < C; ++c) {
          grow[c] += scale * (prow[c] - (c == (*tgt)[i] ? T(1) : T(0)));
        }
      }
      g.mark(lid);
    });
  }

  /// Elementwise smooth-L1 between pred and a constant target, weighted
  /// mean over unmasked elements (weight-0 elements are skipped).
  NodeId smooth_l1(NodeId pid, Tensor<T> target, Tensor<T> weights) {
    const Tensor<T>& pred = value(pid);
    if (pred.shape != target.shape || pred.shape != weights.shape) {
      throw ShapeMismatch("smooth_l1: shape mismatch");
    }
    T wsum = T(0);
    for (const T& w : weights.data) wsum += w;
    const T denom = std::max(T(1), wsum);
    T loss = T(0);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      const T w = weights.data[i];
      if (w == T(0)) continue;
      const T d = pred.data[i] - target.data[i];
      const T a = std::abs(d);
      loss += w * (a < T(1) ? T(0.5) * d * d : a - T(0.5));
    }
    loss /= denom;

    auto tgt = std::make_shared<Tensor<T>>(std::move(target));
    auto wts = std::make_shared<Tensor<T>>(std::move(weights));
    return make_node(Tensor<T>::scalar(loss), [=, this](Graph& g) {
      const T go = g.nodes_[g.self_].grad.data[0];
      const Tensor<T>& pv = g.nodes_[pid].value;
      Tensor<T>& gp = g.nodes_[pid].grad;
      for (std::size_t i = 0; i < pv.data.size(); ++i) {
        const T w = wts->data[i];
        if (w == T(0)) continue;
        const T d = pv.data[i] - tgt->data[i];
        const T df = std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1));
        gp.data[i] += go * w * df / denom;
      }
      g.mark(pid);
    });
  }

  /// Bilinear crop of a box (feature-map coordinates, pixel centers at
  /// half-integers) to an out x out patch. Differentiable with respect to
  /// the features only.
  NodeId crop_resize(NodeId fid, const BBox& box, int out_size) {
    const Tensor<T>& f = value(fid);
    if (f.rank() != 4 || f.dim(0) != 1) {
      throw ShapeMismatch("crop_resize: expected features[1,C,Hf,Wf]");
    }
    if (!(box.width() > 0.0) || !(box.height() > 0.0)) {
      throw DegenerateBox("crop_resize: box must have positive area");
    }
    const int C = f.dim(1), Hf = f.dim(2), Wf = f.dim(3);
    Tensor<T> out({1, C, out_size, out_size});

    auto taps = std::make_shared<std::vector<std::array<std::pair<int, T>, 2>>>();
    taps->resize(2 * out_size);  // x taps then y taps
    for (int j = 0; j < out_size; ++j) {
      (*taps)[j] = axis_taps(box.xmin + (j + 0.5) / out_size * box.width(), Wf);
      (*taps)[out_size + j] =
          axis_taps(box.ymin + (j + 0.5) / out_size * box.height(), Hf);
    }
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < out_size; ++i) {
        const auto& ty = (*taps)[out_size + i];
        for (int j = 0; j < out_size; ++j) {
          const auto& tx = (*taps)[j];
          T v = T(0);
          for (const auto& [yy, wy] : ty) {
            for (const auto& [xx, wx] : tx) {
              v += wy * wx * f.at4(0, c, yy, xx);
            }
          }
          out.at4(0, c, i, j) = v;
        }
      }
    }
    return make_node(std::move(out), [=, this](Graph& g) {
      const Tensor<T>& gout = g.nodes_[g.self_].grad;
      Tensor<T>& gf = g.nodes_[fid].grad;
      for (int c = 0; c < C; ++c) {
        for (int i = 0; i < out_size; ++i) {
          const auto& ty = (*taps)[out_size + i];
          for (int j = 0; j < out_size; ++j) {
            const auto& tx = (*taps)[j];
            const T go = gout.at4(0, c, i, j);
            for (const auto& [yy, wy] : ty) {
              for (const auto& [xx, wx] : tx) {
                gf.at4(0, c, yy, xx) += go * wy * wx;
              }
            }
          }
        }
      }
      g.mark(fid);
    });
  }

  // ---- reverse pass ----

  /// Accumulates gradients of `loss` into every node reachable backwards
  /// from it. The loss must be a scalar.
  void backward(NodeId loss) {
    if (value(loss).numel() != 1) {
      throw NonScalarLoss("backward: loss must be a scalar");
    }
    for (Node& n : nodes_) {
      n.grad = Tensor<T>::zeros(n.value.shape);
      n.touched = false;
    }
    nodes_[loss].grad.data[0] = T(1);
    nodes_[loss].touched = true;
    for (NodeId id = loss; id >= 0; --id) {
      if (!nodes_[id].touched || !nodes_[id].back) continue;
      self_ = id;
      nodes_[id].back(*this);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void(Graph&)> back;
    bool touched = false;
  };

  NodeId make_node(Tensor<T> value, std::function<void(Graph&)> back) {
    nodes_.push_back(Node{std::move(value), {}, std::move(back), false});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void mark(NodeId id) { nodes_[id].touched = true; }

  // Bilinear taps along one axis: indices clamped to [0, n-1], weights
  // from the distance to the two nearest pixel centers.
  static std::array<std::pair<int, T>, 2> axis_taps(double coord, int n) {
    const double t = coord - 0.5;
    const int i0 = static_cast<int>(std::floor(t));
    const T frac = static_cast<T>(t - i0);
    const int a = std::clamp(i0, 0, n - 1);
    const int b = std::clamp(i0 + 1, 0, n - 1);
    return {{{a, T(1) - frac}, {b, frac}}};
  }

  static void im2col(const Tensor<T>& x, int n, int kh, int kw, int stride,
                     int padding, int Ho, int Wo, T* col) {
    const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Q = C * kh * kw;
    for (int yo = 0; yo < Ho; ++yo) {
      for (int xo = 0; xo < Wo; ++xo) {
        T* dst = col + (static_cast<std::size_t>(yo) * Wo + xo) * Q;
        int q = 0;
        for (int c = 0; c < C; ++c) {
          for (int dy = 0; dy < kh; ++dy) {
            const int yy = yo * stride + dy - padding;
            for (int dx = 0; dx < kw; ++dx, ++q) {
              const int xx = xo * stride + dx - padding;
              dst[q] = (yy >= 0 && yy < H && xx >= 0 && xx < W)
                           ? x.at4(n, c, yy, xx)
                           : T(0);
            }
          }
        }
      }
    }
  }

  static void col2im(const T* gcols, int n, int C, int H, int W, int kh, int kw,
                     int stride, int padding, int Ho, int Wo, Tensor<T>& gx) {
    const int Q = C * kh * kw;
    for (int yo = 0; yo < Ho; ++yo) {
      for (int xo = 0; xo < Wo; ++xo) {
        const T* src = gcols + (static_cast<std::size_t>(yo) * Wo + xo) * Q;
        int q = 0;
        for (int c = 0; c < C; ++c) {
          for (int dy = 0; dy < kh; ++dy) {
            const int yy = yo * stride + dy - padding;
            for (int dx = 0; dx < kw; ++dx, ++q) {
              const int xx = xo * stride + dx - padding;
              if (yy >= 0 && yy < H && xx >= 0 && xx < W) {
                gx.at4(n, c, yy, xx) += src[q];
              }
            }
          }
        }
      }
    }
  }

  std::vector<Node> nodes_;
  NodeId self_ = -1;  // node whose backward closure is running
};

// ---------------------------------------------------------------------------
// Parameters and SGD.

/// Named trainable tensor with its gradient accumulator and momentum
/// buffer.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> momentum;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(Tensor<T>::zeros(value.shape)),
        momentum(Tensor<T>::zeros(value.shape)) {}
};

/// Momentum SGD with global gradient-norm clipping. A non-finite gradient
/// aborts before any parameter changes and reports the offending name.
/// Gradients are zeroed after the update.
template <typename T>
void sgd_step(std::vector<Parameter<T>*>& params, double lr, double momentum,
              double grad_clip_norm) {
  double sq = 0.0;
  for (const Parameter<T>* p : params) {
    for (const T& gv : p->grad.data) {
      if (!std::isfinite(gv)) {
        throw NonFiniteGradient("non-finite gradient in parameter '" + p->name + "'");
      }
      sq += static_cast<double>(gv) * static_cast<double>(gv);
    }
  }
  const double norm = std::sqrt(sq);
  const double scale =
      (grad_clip_norm > 0.0 && norm > grad_clip_norm) ? grad_clip_norm / norm : 1.0;
  for (Parameter<T>* p : params) {
    for (std::size_t i = 0; i < p->value.data.size(); ++i) {
      const T v = static_cast<T>(momentum) * p->momentum.data[i] +
                  p->grad.data[i] * static_cast<T>(scale);
      p->momentum.data[i] = v;
      p->value.data[i] -= static_cast<T>(lr) * v;
      p->grad.data[i] = T(0);
    }
  }
}

/// Fan-in-scaled normal init (std = sqrt(2/fan_in)).
template <typename T>
Tensor<T> he_normal(std::vector<int> shape, int fan_in, std::mt19937_64& g) {
  Tensor<T> t(std::move(shape));
  const double std_dev = std::sqrt(2.0 / fan_in);
  for (T& v : t.data) v = static_cast<T>(rng::normal(g) * std_dev);
  return t;
}

}  // namespace inkdet
