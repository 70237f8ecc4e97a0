#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "todlab/mat.hpp"
#include "todlab/rng.hpp"

namespace todlab {

// Reverse-mode tape. Nodes are created in topological order by construction,
// so backward() is a single reverse sweep over the arena. A graph built with
// recording=false stores no closures and allocates no gradient buffers; that
// is the freeze contract used for the teacher encoder and for evaluation.
//
// Parameter leaves borrow their value and accumulate gradients into an
// external sink, which persists across the per-example graphs of a batch.
// backward() may be called at most once per graph.
template <class S>
class Graph {
 public:
  struct Node {
    Mat<S> out;                    // owned output (unused for borrowed leaves)
    const Mat<S>* pval = nullptr;  // borrowed value (parameter leaves)
    Mat<S>* gsink = nullptr;       // external gradient accumulator
    Mat<S> gbuf;                   // lazily allocated interior gradient
    bool wants = false;            // participates in backprop
    bool gready = false;           // a child has written a gradient here
    std::function<void()> back;
  };
  using Ref = Node*;

  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  std::size_t node_count() const { return nodes_.size(); }

  const Mat<S>& v(Ref n) const { return n->pval ? *n->pval : n->out; }

  // Gradient buffer of a node; zero-initialised on first access. Parameter
  // sinks are never zeroed here: the trainer owns their lifecycle.
  Mat<S>& g(Ref n) {
    if (n->gsink) {
      n->gready = true;
      return *n->gsink;
    }
    if (!n->gready) {
      n->gbuf.resize(v(n).rows(), v(n).cols());
      n->gready = true;
    }
    return n->gbuf;
  }

  Ref constant(Mat<S> value) { return make(std::move(value), false, {}); }

  // Trainable leaf. Pass grad=nullptr to freeze the tensor in this graph.
  Ref param(const Mat<S>& value, Mat<S>* grad) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.pval = &value;
    if (recording_ && grad) {
      check(grad->same_shape(value), "param: gradient shape mismatch");
      n.gsink = grad;
      n.wants = true;
    }
    return &n;
  }

  Ref matmul(Ref a, Ref b) {
    const auto& A = v(a);
    const auto& B = v(b);
    check(A.cols() == B.rows(), "matmul: inner dimension mismatch");
    Mat<S> out(A.rows(), B.cols());
    out.map().noalias() = A.map() * B.map();
    Ref n = make(std::move(out), a->wants || b->wants, {});
    if (n->wants)
      n->back = [this, n, a, b] {
        if (a->wants) g(a).map().noalias() += g(n).map() * v(b).map().transpose();
        if (b->wants) g(b).map().noalias() += v(a).map().transpose() * g(n).map();
      };
    return n;
  }

  // A * B^T; the natural shape for row-major linear layers (W is out x in).
  Ref matmul_nt(Ref a, Ref b) {
    const auto& A = v(a);
    const auto& B = v(b);
    check(A.cols() == B.cols(), "matmul_nt: inner dimension mismatch");
    Mat<S> out(A.rows(), B.rows());
    out.map().noalias() = A.map() * B.map().transpose();
    Ref n = make(std::move(out), a->wants || b->wants, {});
    if (n->wants)
      n->back = [this, n, a, b] {
        if (a->wants) g(a).map().noalias() += g(n).map() * v(b).map();
        if (b->wants) g(b).map().noalias() += g(n).map().transpose() * v(a).map();
      };
    return n;
  }

  Ref add(Ref a, Ref b) {
    check(v(a).same_shape(v(b)), "add: shape mismatch");
    Mat<S> out(v(a).rows(), v(a).cols());
    out.map() = v(a).map() + v(b).map();
    Ref n = make(std::move(out), a->wants || b->wants, {});
    if (n->wants)
      n->back = [this, n, a, b] {
        if (a->wants) g(a).map() += g(n).map();
        if (b->wants) g(b).map() += g(n).map();
      };
    return n;
  }

  Ref sub(Ref a, Ref b) {
    check(v(a).same_shape(v(b)), "sub: shape mismatch");
    Mat<S> out(v(a).rows(), v(a).cols());
    out.map() = v(a).map() - v(b).map();
    Ref n = make(std::move(out), a->wants || b->wants, {});
    if (n->wants)
      n->back = [this, n, a, b] {
        if (a->wants) g(a).map() += g(n).map();
        if (b->wants) g(b).map() -= g(n).map();
      };
    return n;
  }

  Ref scale(Ref a, double c) {
    Mat<S> out(v(a).rows(), v(a).cols());
    out.map() = v(a).map() * S(c);
    Ref n = make(std::move(out), a->wants, {});
    if (n->wants)
      n->back = [this, n, a, c] { g(a).map() += g(n).map() * S(c); };
    return n;
  }

  // Elementwise product with a fixed matrix (dropout masks).
  Ref hadamard_const(Ref a, Mat<S> m) {
    check(v(a).same_shape(m), "hadamard_const: shape mismatch");
    Mat<S> out(v(a).rows(), v(a).cols());
    out.map() = v(a).map().cwiseProduct(m.map());
    Ref n = make(std::move(out), a->wants, {});
    if (n->wants)
      n->back = [this, n, a, m = std::move(m)] {
        g(a).map() += g(n).map().cwiseProduct(m.map());
      };
    return n;
  }

  // Broadcast-add a 1 x c row vector to every row of a.
  Ref add_rowvec(Ref a, Ref r) {
    const auto& A = v(a);
    const auto& R = v(r);
    check(R.rows() == 1 && R.cols() == A.cols(), "add_rowvec: shape mismatch");
    Mat<S> out(A.rows(), A.cols());
    out.map() = A.map().rowwise() + R.map().row(0);
    Ref n = make(std::move(out), a->wants || r->wants, {});
    if (n->wants)
      n->back = [this, n, a, r] {
        if (a->wants) g(a).map() += g(n).map();
        if (r->wants) g(r).map().row(0) += g(n).map().colwise().sum();
      };
    return n;
  }

  Ref row(Ref a, int i) {
    const auto& A = v(a);
    check(i >= 0 && i < A.rows(), "row: index out of range");
    Mat<S> out(1, A.cols());
    out.map().row(0) = A.map().row(i);
    Ref n = make(std::move(out), a->wants, {});
    if (n->wants)
      n->back = [this, n, a, i] { g(a).map().row(i) += g(n).map().row(0); };
    return n;
  }

  Ref mean_rows(Ref a) {
    const auto& A = v(a);
    check(A.rows() > 0, "mean_rows: empty input");
    Mat<S> out(1, A.cols());
    out.map().row(0) = A.map().colwise().mean();
    Ref n = make(std::move(out), a->wants, {});
    if (n->wants)
      n->back = [this, n, a] {
        auto ga = g(a).map();
        const S inv = S(1.0 / ga.rows());
        for (int r = 0; r < ga.rows(); ++r) ga.row(r) += g(n).map().row(0) * inv;
      };
    return n;
  }

  Ref col_block(Ref a, int off, int width) {
    const auto& A = v(a);
    check(off >= 0 && width > 0 && off + width <= A.cols(), "col_block: bad range");
    Mat<S> out(A.rows(), width);
    out.map() = A.map().middleCols(off, width);
    Ref n = make(std::move(out), a->wants, {});
    if (n->wants)
      n->back = [this, n, a, off, width] {
        g(a).map().middleCols(off, width) += g(n).map();
      };
    return n;
  }

  Ref concat_cols(const std::vector<Ref>& parts) {
    check(!parts.empty(), "concat_cols: no parts");
    int rows = v(parts[0]).rows(), cols = 0;
    bool w = false;
    for (Ref p : parts) {
      check(v(p).rows() == rows, "concat_cols: row mismatch");
      cols += v(p).cols();
      w = w || p->wants;
    }
    Mat<S> out(rows, cols);
    int off = 0;
    for (Ref p : parts) {
      out.map().middleCols(off, v(p).cols()) = v(p).map();
      off += v(p).cols();
    }
    Ref n = make(std::move(out), w, {});
    if (n->wants)
      n->back = [this, n, parts] {
        int o = 0;
        for (Ref p : parts) {
          if (p->wants) g(p).map() += g(n).map().middleCols(o, v(p).cols());
          o += v(p).cols();
        }
      };
    return n;
  }

  Ref concat_rows(const std::vector<Ref>& parts) {
    check(!parts.empty(), "concat_rows: no parts");
    int cols = v(parts[0]).cols(), rows = 0;
    bool w = false;
    for (Ref p : parts) {
      check(v(p).cols() == cols, "concat_rows: column mismatch");
      rows += v(p).rows();
      w = w || p->wants;
    }
    Mat<S> out(rows, cols);
    int off = 0;
    for (Ref p : parts) {
      out.map().middleRows(off, v(p).rows()) = v(p).map();
      off += v(p).rows();
    }
    Ref n = make(std::move(out), w, {});
    if (n->wants)
      n->back = [this, n, parts] {
        int o = 0;
        for (Ref p : parts) {
          if (p->wants) g(p).map() += g(n).map().middleRows(o, v(p).rows());
          o += v(p).rows();
        }
      };
    return n;
  }

  // Gaussian error linear unit, exact erf form.
  Ref gelu(Ref a) {
    const auto& A = v(a);
    Mat<S> out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.size(); ++i) {
      const double x = double(A.data()[i]);
      out.data()[i] = S(0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)));
    }
    Ref n = make(std::move(out), a->wants, {});
    if (n->wants)
      n->back = [this, n, a] {
        auto& ga = g(a);
        const auto& A2 = v(a);
        const auto& gn = g(n);
        for (std::size_t i = 0; i < A2.size(); ++i) {
          const double x = double(A2.data()[i]);
          const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
          const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
          ga.data()[i] += gn.data()[i] * S(cdf + x * pdf);
        }
      };
    return n;
  }

  // Row-wise layer normalisation with learned gain/bias.
  Ref layer_norm(Ref a, Ref gain, Ref bias, double eps) {
    const auto& A = v(a);
    const auto& G = v(gain);
    const auto& B = v(bias);
    check(G.rows() == 1 && G.cols() == A.cols(), "layer_norm: gain shape");
    check(B.rows() == 1 && B.cols() == A.cols(), "layer_norm: bias shape");
    const int R = A.rows(), C = A.cols();
    Mat<S> out(R, C);
    Mat<S> xhat(R, C);
    std::vector<S> rstd(R);
    for (int r = 0; r < R; ++r) {
      double mean = 0;
      for (int c = 0; c < C; ++c) mean += double(A(r, c));
      mean /= C;
      double var = 0;
      for (int c = 0; c < C; ++c) {
        const double d = double(A(r, c)) - mean;
        var += d * d;
      }
      var /= C;
      const double rs = 1.0 / std::sqrt(var + eps);
      rstd[r] = S(rs);
      for (int c = 0; c < C; ++c) {
        const S xh = S((double(A(r, c)) - mean) * rs);
        xhat(r, c) = xh;
        out(r, c) = G(0, c) * xh + B(0, c);
      }
    }
    Ref n = make(std::move(out), a->wants || gain->wants || bias->wants, {});
    if (n->wants)
      n->back = [this, n, a, gain, bias, xhat = std::move(xhat),
                 rstd = std::move(rstd)] {
        const auto& gn = g(n);
        const auto& G = v(gain);
        const int R = gn.rows(), C = gn.cols();
        if (a->wants) {
          auto& ga = g(a);
          for (int r = 0; r < R; ++r) {
            double m1 = 0, m2 = 0;
            for (int c = 0; c < C; ++c) {
              const double dxh = double(gn(r, c)) * double(G(0, c));
              m1 += dxh;
              m2 += dxh * double(xhat(r, c));
            }
            m1 /= C;
            m2 /= C;
            for (int c = 0; c < C; ++c) {
              const double dxh = double(gn(r, c)) * double(G(0, c));
              ga(r, c) += S(double(rstd[r]) * (dxh - m1 - double(xhat(r, c)) * m2));
            }
          }
        }
        if (gain->wants) {
          auto& gg = g(gain);
          for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) gg(0, c) += gn(r, c) * xhat(r, c);
        }
        if (bias->wants) {
          auto& gb = g(bias);
          for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) gb(0, c) += gn(r, c);
        }
      };
    return n;
  }

  Ref softmax_rows(Ref a) {
    const auto& A = v(a);
    const int R = A.rows(), C = A.cols();
    Mat<S> out(R, C);
    for (int r = 0; r < R; ++r) {
      double mx = -1e300;
      for (int c = 0; c < C; ++c) mx = std::max(mx, double(A(r, c)));
      double sum = 0;
      for (int c = 0; c < C; ++c) {
        const double e = std::exp(double(A(r, c)) - mx);
        out(r, c) = S(e);
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (int c = 0; c < C; ++c) out(r, c) = S(double(out(r, c)) * inv);
    }
    Ref n = make(std::move(out), a->wants, {});
    if (n->wants)
      n->back = [this, n, a] {
        const auto& Y = v(n);
        const auto& gn = g(n);
        auto& ga = g(a);
        for (int r = 0; r < Y.rows(); ++r) {
          double dot = 0;
          for (int c = 0; c < Y.cols(); ++c) dot += double(gn(r, c)) * double(Y(r, c));
          for (int c = 0; c < Y.cols(); ++c)
            ga(r, c) += S(double(Y(r, c)) * (double(gn(r, c)) - dot));
        }
      };
    return n;
  }

  // Inverted dropout: identity when p == 0 or the graph is not recording.
  Ref dropout(Ref a, double p, Rng& rng) {
    if (p <= 0.0 || !recording_) return a;
    check(p < 1.0, "dropout: p must be < 1");
    const auto& A = v(a);
    Mat<S> mask(A.rows(), A.cols());
    const S keep = S(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask.data()[i] = rng.bernoulli(p) ? S(0) : keep;
    return hadamard_const(a, std::move(mask));
  }

  // Row gather from an embedding table; backward scatter-adds.
  Ref embed(Ref table, std::vector<int> ids) {
    const auto& T = v(table);
    Mat<S> out(int(ids.size()), T.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      check(ids[i] >= 0 && ids[i] < T.rows(), "embed: id out of range");
      out.map().row(int(i)) = T.map().row(ids[i]);
    }
    Ref n = make(std::move(out), table->wants, {});
    if (n->wants)
      n->back = [this, n, table, ids = std::move(ids)] {
        auto gt = g(table).map();
        const auto& gn = g(n);
        for (std::size_t i = 0; i < ids.size(); ++i)
          gt.row(ids[i]) += gn.map().row(int(i));
      };
    return n;
  }

  // Euclidean distance between two same-shaped tensors, as a 1x1 node.
  // Zero-distance inputs take the zero subgradient.
  Ref l2_dist(Ref a, Ref b) {
    const auto& A = v(a);
    const auto& B = v(b);
    check(A.same_shape(B), "l2_dist: shape mismatch");
    double s = 0;
    for (std::size_t i = 0; i < A.size(); ++i) {
      const double d = double(A.data()[i]) - double(B.data()[i]);
      s += d * d;
    }
    const double dist = std::sqrt(s);
    Mat<S> out(1, 1);
    out(0, 0) = S(dist);
    Ref n = make(std::move(out), a->wants || b->wants, {});
    if (n->wants)
      n->back = [this, n, a, b, dist] {
        if (dist <= 1e-30) return;
        const S coef = g(n)(0, 0) / S(dist);
        const auto& A2 = v(a);
        const auto& B2 = v(b);
        if (a->wants) {
          auto& ga = g(a);
          for (std::size_t i = 0; i < A2.size(); ++i)
            ga.data()[i] += coef * (A2.data()[i] - B2.data()[i]);
        }
        if (b->wants) {
          auto& gb = g(b);
          for (std::size_t i = 0; i < B2.size(); ++i)
            gb.data()[i] -= coef * (A2.data()[i] - B2.data()[i]);
        }
      };
    return n;
  }

  // Sum of 1x1 nodes.
  Ref sum_list(const std::vector<Ref>& parts) {
    check(!parts.empty(), "sum_list: no parts");
    double s = 0;
    bool w = false;
    for (Ref p : parts) {
      check(v(p).rows() == 1 && v(p).cols() == 1, "sum_list: parts must be 1x1");
      s += double(v(p)(0, 0));
      w = w || p->wants;
    }
    Mat<S> out(1, 1);
    out(0, 0) = S(s);
    Ref n = make(std::move(out), w, {});
    if (n->wants)
      n->back = [this, n, parts] {
        for (Ref p : parts)
          if (p->wants) g(p)(0, 0) += g(n)(0, 0);
      };
    return n;
  }

  // Summed cross entropy over rows with integer targets. Rows whose target
  // equals ignore_index contribute nothing, forward or backward.
  Ref ce_rows(Ref logits, std::vector<int> targets, int ignore_index = -1) {
    const auto& X = v(logits);
    check(int(targets.size()) == X.rows(), "ce_rows: target count mismatch");
    const int R = X.rows(), C = X.cols();
    Mat<S> probs(R, C);
    double loss = 0;
    for (int r = 0; r < R; ++r) {
      if (targets[r] == ignore_index) continue;
      check(targets[r] >= 0 && targets[r] < C, "ce_rows: target out of range");
      double mx = -1e300;
      for (int c = 0; c < C; ++c) mx = std::max(mx, double(X(r, c)));
      double sum = 0;
      for (int c = 0; c < C; ++c) {
        const double e = std::exp(double(X(r, c)) - mx);
        probs(r, c) = S(e);
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (int c = 0; c < C; ++c) probs(r, c) = S(double(probs(r, c)) * inv);
      loss += std::log(sum) + mx - double(X(r, targets[r]));
    }
    Mat<S> out(1, 1);
    out(0, 0) = S(loss);
    Ref n = make(std::move(out), logits->wants, {});
    if (n->wants)
      n->back = [this, n, logits, probs = std::move(probs),
                 targets = std::move(targets), ignore_index] {
        const S seed = g(n)(0, 0);
        auto& gx = g(logits);
        for (int r = 0; r < gx.rows(); ++r) {
          if (targets[r] == ignore_index) continue;
          for (int c = 0; c < gx.cols(); ++c) {
            S p = probs(r, c);
            if (c == targets[r]) p -= S(1);
            gx(r, c) += seed * p;
          }
        }
      };
    return n;
  }

  // Summed binary cross entropy with logits against 0/1 targets.
  Ref bce_logits(Ref logits, Mat<S> targets) {
    const auto& X = v(logits);
    check(X.same_shape(targets), "bce_logits: shape mismatch");
    double loss = 0;
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double x = double(X.data()[i]);
      const double t = double(targets.data()[i]);
      loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    Mat<S> out(1, 1);
    out(0, 0) = S(loss);
    Ref n = make(std::move(out), logits->wants, {});
    if (n->wants)
      n->back = [this, n, logits, targets = std::move(targets)] {
        const S seed = g(n)(0, 0);
        auto& gx = g(logits);
        const auto& X2 = v(logits);
        for (std::size_t i = 0; i < X2.size(); ++i) {
          const double x = double(X2.data()[i]);
          const double sig = 1.0 / (1.0 + std::exp(-x));
          gx.data()[i] += seed * S(sig - double(targets.data()[i]));
        }
      };
    return n;
  }

  // Rows scaled to unit Euclidean norm. Rows with tiny norm pass through
  // unscaled with zero gradient.
  Ref normalize_rows(Ref a) {
    const auto& A = v(a);
    const int R = A.rows(), C = A.cols();
    Mat<S> out(R, C);
    std::vector<S> norms(R);
    for (int r = 0; r < R; ++r) {
      double s = 0;
      for (int c = 0; c < C; ++c) s += double(A(r, c)) * double(A(r, c));
      const double nrm = std::sqrt(s);
      norms[r] = S(nrm);
      const double inv = nrm > 1e-30 ? 1.0 / nrm : 1.0;
      for (int c = 0; c < C; ++c) out(r, c) = S(double(A(r, c)) * inv);
    }
    Ref n = make(std::move(out), a->wants, {});
    if (n->wants)
      n->back = [this, n, a, norms = std::move(norms)] {
        const auto& Y = v(n);
        const auto& gn = g(n);
        auto& ga = g(a);
        for (int r = 0; r < Y.rows(); ++r) {
          if (double(norms[r]) <= 1e-30) continue;
          double dot = 0;
          for (int c = 0; c < Y.cols(); ++c) dot += double(gn(r, c)) * double(Y(r, c));
          const double inv = 1.0 / double(norms[r]);
          for (int c = 0; c < Y.cols(); ++c)
            ga(r, c) += S((double(gn(r, c)) - dot * double(Y(r, c))) * inv);
        }
      };
    return n;
  }

  // x @ W^T + b with W stored out x in.
  Ref linear(Ref x, Ref w, Ref b) { return add_rowvec(matmul_nt(x, w), b); }

  // Seeds the root gradient and sweeps the tape in reverse creation order.
  void backward(Ref root, S seed = S(1)) {
    check(recording_, "backward: graph is not recording");
    check(!swept_, "backward: already called on this graph");
    check(v(root).rows() == 1 && v(root).cols() == 1, "backward: root must be 1x1");
    check(root->wants, "backward: root does not depend on any trainable leaf");
    swept_ = true;
    g(root)(0, 0) += seed;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->gready && it->back) it->back();
    }
  }

 private:
  Ref make(Mat<S> out, bool wants, std::function<void()> back) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.out = std::move(out);
    n.wants = recording_ && wants;
    if (n.wants) n.back = std::move(back);
    return &n;
  }

  std::deque<Node> nodes_;
  bool recording_ = true;
  bool swept_ = false;
};

}  // namespace todlab
