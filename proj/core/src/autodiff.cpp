#include "rksa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace rksa::ad {

namespace {

thread_local bool g_grad_enabled = true;

using Parents = std::vector<std::shared_ptr<Node>>;

Var make(Matrix value, Parents parents, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool tracked = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) tracked = tracked || p->requires_grad;
  }
  if (tracked) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  }
}

// Floored at the smallest normal double so the result stays strictly positive.
double softplus_scalar(double x) {
  const double y = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return std::max(y, std::numeric_limits<double>::min());
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  Matrix out = a.value().unaryExpr(f);
  return make(std::move(out), {a.node()}, [df](Node& self) {
    Node& x = self.parent(0);
    x.accumulate(self.grad.cwiseProduct(x.value.unaryExpr(df)));
  });
}

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

double Var::scalar() const {
  if (rows() != 1 || cols() != 1) throw ConfigError("scalar(): value is not 1x1");
  return value()(0, 0);
}

void Var::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) throw ConfigError("backward(): root must be 1x1");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ConfigError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                      std::to_string(b.rows()));
  }
  return make(a.value() * b.value(), {a.node(), b.node()}, [](Node& self) {
    Node& x = self.parent(0);
    Node& y = self.parent(1);
    if (x.requires_grad) x.accumulate(self.grad * y.value.transpose());
    if (y.requires_grad) y.accumulate(x.value.transpose() * self.grad);
  });
}

Var transpose(const Var& a) {
  return make(a.value().transpose(), {a.node()},
              [](Node& self) { self.parent(0).accumulate(self.grad.transpose()); });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
    self.parent(0).accumulate(self.grad);
    self.parent(1).accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a.node(), b.node()}, [](Node& self) {
    self.parent(0).accumulate(self.grad);
    self.parent(1).accumulate(-self.grad);
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a, b, "hadamard");
  return make(a.value().cwiseProduct(b.value()), {a.node(), b.node()}, [](Node& self) {
    Node& x = self.parent(0);
    Node& y = self.parent(1);
    if (x.requires_grad) x.accumulate(self.grad.cwiseProduct(y.value));
    if (y.requires_grad) y.accumulate(self.grad.cwiseProduct(x.value));
  });
}

Var divide(const Var& a, const Var& b) {
  require_same_shape(a, b, "divide");
  return make(a.value().cwiseQuotient(b.value()), {a.node(), b.node()}, [](Node& self) {
    Node& x = self.parent(0);
    Node& y = self.parent(1);
    if (x.requires_grad) x.accumulate(self.grad.cwiseQuotient(y.value));
    if (y.requires_grad) {
      y.accumulate(-self.grad.cwiseProduct(x.value).cwiseQuotient(y.value.cwiseAbs2()));
    }
  });
}

Var scale(const Var& a, double s) {
  return make(a.value() * s, {a.node()}, [s](Node& self) { self.parent(0).accumulate(self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  return make(a.value().array() + s, {a.node()},
              [](Node& self) { self.parent(0).accumulate(self.grad); });
}

Var scale_by(const Var& a, const Var& s) {
  const double factor = s.scalar();
  return make(a.value() * factor, {a.node(), s.node()}, [](Node& self) {
    Node& x = self.parent(0);
    Node& k = self.parent(1);
    if (x.requires_grad) x.accumulate(self.grad * k.value(0, 0));
    if (k.requires_grad) k.accumulate(Matrix::Constant(1, 1, self.grad.cwiseProduct(x.value).sum()));
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ConfigError("add_row: row shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make(std::move(out), {a.node(), row.node()}, [](Node& self) {
    self.parent(0).accumulate(self.grad);
    self.parent(1).accumulate(self.grad.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ConfigError("mul_row: row shape mismatch");
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return make(std::move(out), {a.node(), row.node()}, [](Node& self) {
    Node& x = self.parent(0);
    Node& r = self.parent(1);
    if (x.requires_grad) {
      Matrix g = self.grad.array().rowwise() * r.value.row(0).array();
      x.accumulate(g);
    }
    if (r.requires_grad) r.accumulate(self.grad.cwiseProduct(x.value).colwise().sum());
  });
}

Var softplus(const Var& a) { return unary(a, softplus_scalar, sigmoid_scalar); }

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log_sigmoid(const Var& a) {
  return unary(a, [](double x) { return -softplus_scalar(-x); },
               [](double x) { return sigmoid_scalar(-x); });
}

Var inv_sqrt1p_square(const Var& a) {
  return unary(a, [](double x) { return 1.0 / std::sqrt(1.0 + x * x); },
               [](double x) {
                 const double s = 1.0 + x * x;
                 return -x / (s * std::sqrt(s));
               });
}

Var clamp_off_diagonal(const Var& a, double bound) {
  Matrix out = a.value();
  for (Index j = 0; j < out.cols(); ++j) {
    for (Index i = 0; i < out.rows(); ++i) {
      if (i != j) out(i, j) = std::clamp(out(i, j), -bound, bound);
    }
  }
  return make(std::move(out), {a.node()}, [bound](Node& self) {
    Node& x = self.parent(0);
    Matrix g = self.grad;
    for (Index j = 0; j < g.cols(); ++j) {
      for (Index i = 0; i < g.rows(); ++i) {
        if (i != j && std::abs(x.value(i, j)) >= bound) g(i, j) = 0.0;
      }
    }
    x.accumulate(g);
  });
}

Var slice(const Var& a, Index row, Index col, Index rows, Index cols) {
  if (row < 0 || col < 0 || row + rows > a.rows() || col + cols > a.cols()) {
    throw ConfigError("slice: block out of range");
  }
  return make(a.value().block(row, col, rows, cols), {a.node()},
              [row, col, rows, cols](Node& self) {
                Node& x = self.parent(0);
                Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
                g.block(row, col, rows, cols) = self.grad;
                x.accumulate(g);
              });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw ConfigError("concat_cols: row mismatch");
    total += p.cols();
  }
  Matrix out(parts.front().rows(), total);
  Parents parents;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    parents.push_back(p.node());
  }
  return make(std::move(out), std::move(parents), [](Node& self) {
    Index off = 0;
    for (auto& p : self.parents) {
      const Index c = p->value.cols();
      if (p->requires_grad) p->accumulate(self.grad.middleCols(off, c));
      off += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no inputs");
  Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) throw ConfigError("concat_rows: column mismatch");
    total += p.rows();
  }
  Matrix out(total, parts.front().cols());
  Parents parents;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
    parents.push_back(p.node());
  }
  return make(std::move(out), std::move(parents), [](Node& self) {
    Index off = 0;
    for (auto& p : self.parents) {
      const Index r = p->value.rows();
      if (p->requires_grad) p->accumulate(self.grad.middleRows(off, r));
      off += r;
    }
  });
}

Var gather_rows(const Var& table, std::span<const Index> ids) {
  Matrix out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw ConfigError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                        std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<Index> idx(ids.begin(), ids.end());
  return make(std::move(out), {table.node()}, [idx = std::move(idx)](Node& self) {
    Node& t = self.parent(0);
    Matrix g = Matrix::Zero(t.value.rows(), t.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    t.accumulate(g);
  });
}

Var sum(const Var& a) {
  return make(Matrix::Constant(1, 1, a.value().sum()), {a.node()}, [](Node& self) {
    Node& x = self.parent(0);
    x.accumulate(Matrix::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0)));
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Index n = x.rows();
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw ConfigError("layer_norm: gain/bias shape mismatch");
  }
  Matrix normalized(n, d);
  Vector inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const double mean = x.value().row(i).mean();
    const RowVector centered = x.value().row(i).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(d);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    normalized.row(i) = centered * inv_std(i);
  }
  Matrix out = (normalized.array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  return make(std::move(out), {x.node(), gain.node(), bias.node()},
              [normalized, inv_std](Node& self) {
                Node& in = self.parent(0);
                Node& g = self.parent(1);
                Node& b = self.parent(2);
                if (g.requires_grad) g.accumulate(self.grad.cwiseProduct(normalized).colwise().sum());
                if (b.requires_grad) b.accumulate(self.grad.colwise().sum());
                if (in.requires_grad) {
                  const Matrix dn = self.grad.array().rowwise() * g.value.row(0).array();
                  Matrix dx(dn.rows(), dn.cols());
                  for (Index i = 0; i < dn.rows(); ++i) {
                    const double mean_dn = dn.row(i).mean();
                    const double mean_dn_n = dn.row(i).dot(normalized.row(i)) / static_cast<double>(dn.cols());
                    dx.row(i) = inv_std(i) * (dn.row(i).array() - mean_dn -
                                              normalized.row(i).array() * mean_dn_n);
                  }
                  in.accumulate(dx);
                }
              });
}

Var masked_softmax(const Var& z, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  if (mask.rows() != z.rows() || mask.cols() != z.cols()) throw ConfigError("masked_softmax: mask shape");
  Matrix p = Matrix::Zero(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < z.cols(); ++j) {
      if (mask(i, j)) mx = std::max(mx, z.value()(i, j));
    }
    if (!std::isfinite(mx)) {
      throw NumericalError("masked_softmax: row " + std::to_string(i) + " has no visible finite logit");
    }
    double total = 0.0;
    for (Index j = 0; j < z.cols(); ++j) {
      if (mask(i, j)) {
        p(i, j) = std::exp(z.value()(i, j) - mx);
        total += p(i, j);
      }
    }
    p.row(i) /= total;
  }
  Matrix saved = p;
  return make(std::move(p), {z.node()}, [saved = std::move(saved)](Node& self) {
    const Vector inner = self.grad.cwiseProduct(saved).rowwise().sum();
    Matrix dz = saved.cwiseProduct(self.grad.colwise() - inner);
    self.parent(0).accumulate(dz);
  });
}

Var cholesky(const Var& a) {
  if (a.rows() != a.cols()) throw ConfigError("cholesky: matrix is not square");
  Eigen::LLT<Matrix> llt(a.value());
  if (llt.info() != Eigen::Success) {
    throw NumericalError("cholesky: matrix of size " + std::to_string(a.rows()) +
                         " is not positive definite");
  }
  Matrix lower = llt.matrixL();
  if (!lower.allFinite()) throw NumericalError("cholesky: non-finite factor");
  return make(lower, {a.node()}, [](Node& self) {
    Node& in = self.parent(0);
    const Matrix& l = self.value;
    const Matrix lbar = self.grad.triangularView<Eigen::Lower>();
    Matrix phi = (l.transpose() * lbar).triangularView<Eigen::Lower>();
    phi.diagonal() *= 0.5;
    // S = L^{-T} Phi L^{-1}; gradient w.r.t. a symmetric input is sym(S).
    const auto upper = l.transpose().triangularView<Eigen::Upper>();
    Matrix left = upper.solve(phi);
    Matrix s = upper.solve(left.transpose()).transpose();
    in.accumulate(0.5 * (s + s.transpose()));
  });
}

Var row_normalize(const Var& x) {
  Vector norms = x.value().rowwise().norm();
  Matrix out = x.value();
  for (Index i = 0; i < out.rows(); ++i) {
    if (norms(i) > 0.0) out.row(i) /= norms(i);
  }
  Matrix saved = out;
  return make(std::move(out), {x.node()}, [saved = std::move(saved), norms](Node& self) {
    Matrix dx = Matrix::Zero(saved.rows(), saved.cols());
    for (Index i = 0; i < saved.rows(); ++i) {
      if (norms(i) <= 0.0) continue;
      const double proj = self.grad.row(i).dot(saved.row(i));
      dx.row(i) = (self.grad.row(i) - proj * saved.row(i)) / norms(i);
    }
    self.parent(0).accumulate(dx);
  });
}

Var correlation_normalize(const Var& g) {
  const Index n = g.rows();
  if (g.cols() != n) throw ConfigError("correlation_normalize: matrix is not square");
  Vector inv_sqrt(n);
  for (Index i = 0; i < n; ++i) {
    const double diag = g.value()(i, i);
    if (!(diag > 0.0)) {
      throw NumericalError("correlation_normalize: non-positive self-similarity at row " +
                           std::to_string(i));
    }
    inv_sqrt(i) = 1.0 / std::sqrt(diag);
  }
  // Elementwise with the outer product keeps a symmetric input bit-symmetric.
  Matrix out = g.value().cwiseProduct(inv_sqrt * inv_sqrt.transpose());
  out.diagonal().setOnes();
  return make(std::move(out), {g.node()}, [inv_sqrt](Node& self) {
    Node& in = self.parent(0);
    const Index n = inv_sqrt.size();
    Matrix dg = inv_sqrt.asDiagonal() * self.grad * inv_sqrt.asDiagonal();
    Vector ds = Vector::Zero(n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double coupling = self.grad(i, j) * in.value(i, j);
        ds(i) += coupling * inv_sqrt(j);
        ds(j) += coupling * inv_sqrt(i);
      }
    }
    for (Index i = 0; i < n; ++i) {
      // d(g^{-1/2})/dg = -0.5 g^{-3/2}
      dg(i, i) = -0.5 * ds(i) * inv_sqrt(i) * inv_sqrt(i) * inv_sqrt(i);
    }
    in.accumulate(dg);
  });
}

Var listmle(const Var& scores, std::span<const Index> order) {
  if (scores.rows() != 1) throw ConfigError("listmle: scores must be a row");
  const Index m = static_cast<Index>(order.size());
  if (m != scores.cols()) throw ConfigError("listmle: order length mismatch");
  if (m < 2) return constant(0.0);

  Vector s(m);
  for (Index k = 0; k < m; ++k) s(k) = scores.value()(0, order[static_cast<std::size_t>(k)]);
  // lse(k) = log sum_{l >= k} exp(s_l), built from the tail.
  Vector lse(m);
  lse(m - 1) = s(m - 1);
  for (Index k = m - 2; k >= 0; --k) {
    const double hi = std::max(s(k), lse(k + 1));
    lse(k) = hi + std::log(std::exp(s(k) - hi) + std::exp(lse(k + 1) - hi));
  }
  const double loss = (lse - s).sum();

  std::vector<Index> perm(order.begin(), order.end());
  return make(Matrix::Constant(1, 1, loss), {scores.node()},
              [s, lse, perm = std::move(perm)](Node& self) {
                Node& in = self.parent(0);
                const Index m = s.size();
                Matrix g = Matrix::Zero(1, in.value.cols());
                // d/ds_l = sum_{k <= l} softmax_k(l) - 1, with the prefix sum kept in log space.
                double acc = -std::numeric_limits<double>::infinity();
                for (Index l = 0; l < m; ++l) {
                  const double term = -lse(l);
                  const double hi = std::max(acc, term);
                  acc = hi + std::log(std::exp(acc - hi) + std::exp(term - hi));
                  g(0, perm[static_cast<std::size_t>(l)]) = std::exp(s(l) + acc) - 1.0;
                }
                in.accumulate(self.grad(0, 0) * g);
              });
}

}  // namespace rksa::ad
