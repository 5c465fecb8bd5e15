#include <geogcn/autodiff.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>

#include <Eigen/Geometry>

#include <geogcn/errors.hpp>

namespace geogcn::ad {

using detail::Node;

namespace {

thread_local bool grad_disabled = false;

void accumulate(Node& node, const Matrix& g) {
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

// First contribution assigns, later ones add; avoids zero-filling large buffers.
template <typename Expr>
void add_grad(Node& node, const Expr& g) {
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

template <typename A, typename B>
void add_grad_product(Node& node, const A& a, const B& b) {
  if (node.grad.size() == 0) {
    node.grad.noalias() = a * b;
  } else {
    node.grad.noalias() += a * b;
  }
}

Matrix& grad_of(Node& node) {
  if (node.grad.size() == 0) node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

std::string shape_str(const DiffArray& a) { return std::to_string(a.rows()) + "x" + std::to_string(a.cols()); }

void require_same_shape(const char* op, const DiffArray& a, const DiffArray& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw invalid_argument_error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace

DiffArray DiffArray::constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return DiffArray(std::move(node));
}

DiffArray DiffArray::parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return DiffArray(std::move(node));
}

DiffArray DiffArray::scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

DiffArray DiffArray::from_rows(std::span<const Eigen::Vector3d> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return constant(std::move(m));
}

std::vector<std::size_t> DiffArray::shape() const {
  return {static_cast<std::size_t>(rows()), static_cast<std::size_t>(cols())};
}

double DiffArray::item() const {
  if (!is_scalar()) throw invalid_argument_error("item: array of shape " + shape_str(*this) + " is not a scalar");
  return node_->value(0, 0);
}

const Matrix& DiffArray::grad() const {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(rows(), cols());
  return node_->grad;
}

void DiffArray::zero_grad() { node_->grad.resize(0, 0); }

Eigen::Vector3d DiffArray::row3(Eigen::Index r) const { return node_->value.row(r).transpose(); }

DiffArray DiffArray::make(Matrix value, std::vector<DiffArray> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool needs = !grad_disabled && std::any_of(inputs.begin(), inputs.end(), [](const DiffArray& a) { return a.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return DiffArray(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(grad_disabled) { grad_disabled = true; }
NoGradGuard::~NoGradGuard() { grad_disabled = previous_; }

void backward(const DiffArray& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw invalid_argument_error("backward: loss must be a scalar");
  }
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) n->grad.resize(0, 0);
  }
  grad_of(*root)(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    // Nodes no gradient reached contribute nothing.
    if ((*it)->backward && (*it)->grad.size() != 0) (*it)->backward(**it);
  }
}

DiffArray add(const DiffArray& a, const DiffArray& b) {
  require_same_shape("add", a, b);
  return DiffArray::make(a.value() + b.value(), {a, b}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    accumulate(*self.inputs[1], self.grad);
  });
}

DiffArray sub(const DiffArray& a, const DiffArray& b) {
  require_same_shape("sub", a, b);
  return DiffArray::make(a.value() - b.value(), {a, b}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    if (self.inputs[1]->requires_grad) grad_of(*self.inputs[1]) -= self.grad;
  });
}

DiffArray mul(const DiffArray& a, const DiffArray& b) {
  require_same_shape("mul", a, b);
  return DiffArray::make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) grad_of(x) += self.grad.cwiseProduct(y.value);
    if (y.requires_grad) grad_of(y) += self.grad.cwiseProduct(x.value);
  });
}

DiffArray scale(const DiffArray& a, double s) {
  return DiffArray::make(a.value() * s, {a}, [s](Node& self) { grad_of(*self.inputs[0]) += self.grad * s; });
}

DiffArray scale_by(const DiffArray& a, const DiffArray& s) {
  if (!s.is_scalar()) throw invalid_argument_error("scale_by: factor must be 1x1, got " + shape_str(s));
  return DiffArray::make(a.value() * s.value()(0, 0), {a, s}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& f = *self.inputs[1];
    if (x.requires_grad) grad_of(x) += self.grad * f.value(0, 0);
    if (f.requires_grad) grad_of(f)(0, 0) += self.grad.cwiseProduct(x.value).sum();
  });
}

DiffArray square(const DiffArray& a) {
  return DiffArray::make(a.value().array().square().matrix(), {a}, [](Node& self) {
    Node& x = *self.inputs[0];
    grad_of(x) += 2.0 * self.grad.cwiseProduct(x.value);
  });
}

DiffArray exp(const DiffArray& a) {
  Matrix v = a.value().array().exp().matrix();
  return DiffArray::make(v, {a}, [v](Node& self) { grad_of(*self.inputs[0]) += self.grad.cwiseProduct(v); });
}

DiffArray leaky_relu(const DiffArray& a, double slope) {
  const Matrix& x = a.value();
  Matrix v(x.rows(), x.cols());
  const double* xp = x.data();
  double* vp = v.data();
  const Eigen::Index size = x.size();
  // Branch-free forms; the data signs are unpredictable.
  if (slope <= 1.0) {
    for (Eigen::Index i = 0; i < size; ++i) vp[i] = std::max(xp[i], slope * xp[i]);
  } else {
    for (Eigen::Index i = 0; i < size; ++i) vp[i] = std::min(xp[i], slope * xp[i]);
  }
  return DiffArray::make(std::move(v), {a}, [slope](Node& self) {
    Node& in = *self.inputs[0];
    const bool fresh = in.grad.size() == 0;
    if (fresh) in.grad.resize(in.value.rows(), in.value.cols());
    const double* __restrict xp = in.value.data();
    const double* __restrict gp = self.grad.data();
    double* __restrict out = in.grad.data();
    const Eigen::Index size = in.grad.size();
    const double s = slope;
    if (fresh) {
      for (Eigen::Index i = 0; i < size; ++i) {
        const double m = xp[i] > 0.0 ? 1.0 : s;
        out[i] = gp[i] * m;
      }
    } else {
      for (Eigen::Index i = 0; i < size; ++i) {
        const double m = xp[i] > 0.0 ? 1.0 : s;
        out[i] += gp[i] * m;
      }
    }
  });
}

DiffArray min_select(const DiffArray& a, const DiffArray& b) {
  require_same_shape("min_select", a, b);
  Matrix v = a.value().cwiseMin(b.value());
  return DiffArray::make(std::move(v), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    for (Eigen::Index r = 0; r < self.grad.rows(); ++r) {
      for (Eigen::Index c = 0; c < self.grad.cols(); ++c) {
        const bool take_a = x.value(r, c) <= y.value(r, c);
        Node& target = take_a ? x : y;
        if (target.requires_grad) grad_of(target)(r, c) += self.grad(r, c);
      }
    }
  });
}

DiffArray matmul(const DiffArray& a, const DiffArray& b) {
  if (a.cols() != b.rows()) {
    throw invalid_argument_error("matmul: inner dimensions differ " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix v = a.value() * b.value();
  return DiffArray::make(std::move(v), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) add_grad_product(x, self.grad, y.value.transpose());
    if (y.requires_grad) add_grad_product(y, x.value.transpose(), self.grad);
  });
}

DiffArray add_row(const DiffArray& a, const DiffArray& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw invalid_argument_error("add_row: row shape " + shape_str(row) + " incompatible with " + shape_str(a));
  }
  Matrix v = a.value().rowwise() + row.value().row(0);
  return DiffArray::make(std::move(v), {a, row}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    Node& r = *self.inputs[1];
    if (r.requires_grad) add_grad(r, self.grad.colwise().sum());
  });
}

DiffArray sum(const DiffArray& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return DiffArray::make(std::move(v), {a}, [](Node& self) { grad_of(*self.inputs[0]).array() += self.grad(0, 0); });
}

DiffArray mean(const DiffArray& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw invalid_argument_error("mean: empty array");
  Matrix v(1, 1);
  v(0, 0) = a.value().sum() / n;
  return DiffArray::make(std::move(v), {a},
                         [n](Node& self) { grad_of(*self.inputs[0]).array() += self.grad(0, 0) / n; });
}

DiffArray concat_cols(const DiffArray& a, const DiffArray& b) {
  if (a.rows() != b.rows()) {
    throw invalid_argument_error("concat_cols: row counts differ " + shape_str(a) + " vs " + shape_str(b));
  }
  Matrix v(a.rows(), a.cols() + b.cols());
  v.leftCols(a.cols()) = a.value();
  v.rightCols(b.cols()) = b.value();
  const Eigen::Index ca = a.cols();
  const Eigen::Index cb = b.cols();
  return DiffArray::make(std::move(v), {a, b}, [ca, cb](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) grad_of(x) += self.grad.leftCols(ca);
    if (y.requires_grad) grad_of(y) += self.grad.rightCols(cb);
  });
}

DiffArray slice_cols(const DiffArray& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw invalid_argument_error("slice_cols: range out of bounds for " + shape_str(a));
  }
  Matrix v = a.value().middleCols(start, count);
  return DiffArray::make(std::move(v), {a}, [start, count](Node& self) {
    grad_of(*self.inputs[0]).middleCols(start, count) += self.grad;
  });
}

DiffArray gather_rows(const DiffArray& a, std::span<const std::size_t> indices) {
  Matrix v(static_cast<Eigen::Index>(indices.size()), a.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= static_cast<std::size_t>(a.rows())) throw invalid_argument_error("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(r)) = a.value().row(static_cast<Eigen::Index>(indices[r]));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return DiffArray::make(std::move(v), {a}, [idx = std::move(idx)](Node& self) {
    Matrix& g = grad_of(*self.inputs[0]);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      g.row(static_cast<Eigen::Index>(idx[r])) += self.grad.row(static_cast<Eigen::Index>(r));
    }
  });
}

DiffArray row_sqnorm(const DiffArray& a) {
  Matrix v = a.value().rowwise().squaredNorm();
  return DiffArray::make(std::move(v), {a}, [](Node& self) {
    Node& x = *self.inputs[0];
    grad_of(x) += 2.0 * (x.value.array().colwise() * self.grad.col(0).array()).matrix();
  });
}

DiffArray row_norm(const DiffArray& a) {
  Matrix v = a.value().rowwise().norm();
  return DiffArray::make(v, {a}, [v](Node& self) {
    Node& x = *self.inputs[0];
    Matrix& g = grad_of(x);
    for (Eigen::Index r = 0; r < x.value.rows(); ++r) {
      if (v(r, 0) > 0.0) g.row(r) += (self.grad(r, 0) / v(r, 0)) * x.value.row(r);
    }
  });
}

DiffArray row_normalize(const DiffArray& a, double eps) {
  const Eigen::VectorXd norms = a.value().rowwise().norm();
  Matrix v = a.value();
  for (Eigen::Index r = 0; r < v.rows(); ++r) v.row(r) /= std::max(norms(r), eps);
  return DiffArray::make(v, {a}, [v, norms, eps](Node& self) {
    Node& x = *self.inputs[0];
    Matrix& g = grad_of(x);
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      const double n = norms(r);
      if (n > eps) {
        // d(x/|x|) = (I - u u^T) / |x|
        const double proj = self.grad.row(r).dot(v.row(r));
        g.row(r) += (self.grad.row(r) - proj * v.row(r)) / n;
      } else {
        g.row(r) += self.grad.row(r) / eps;
      }
    }
  });
}

DiffArray cross_rows(const DiffArray& a, const DiffArray& b) {
  require_same_shape("cross_rows", a, b);
  if (a.cols() != 3) throw invalid_argument_error("cross_rows: rows must be 3-vectors");
  Matrix v(a.rows(), 3);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    v.row(r) = a.row3(r).cross(b.row3(r)).transpose();
  }
  return DiffArray::make(std::move(v), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    for (Eigen::Index r = 0; r < self.grad.rows(); ++r) {
      const Eigen::Vector3d g = self.grad.row(r).transpose();
      const Eigen::Vector3d xv = x.value.row(r).transpose();
      const Eigen::Vector3d yv = y.value.row(r).transpose();
      // d(x cross y) . g: grad_x = y cross g, grad_y = g cross x
      if (x.requires_grad) grad_of(x).row(r) += yv.cross(g).transpose();
      if (y.requires_grad) grad_of(y).row(r) += g.cross(xv).transpose();
    }
  });
}

DiffArray max_aggregate(const DiffArray& a, std::size_t group) {
  if (group == 0 || a.rows() % static_cast<Eigen::Index>(group) != 0) {
    throw invalid_argument_error("max_aggregate: " + std::to_string(a.rows()) + " rows not divisible by group " +
                                 std::to_string(group));
  }
  const auto g = static_cast<Eigen::Index>(group);
  const Eigen::Index n = a.rows() / g;
  const Eigen::Index c = a.cols();
  Matrix v(n, c);
  // arg holds the winning row offset within each group.
  std::vector<std::int32_t> arg(static_cast<std::size_t>(n * c), 0);
  const double* x = a.value().data();
  for (Eigen::Index i = 0; i < n; ++i) {
    double* vr = v.data() + i * c;
    std::int32_t* am = arg.data() + i * c;
    const double* first = x + i * g * c;
    std::copy(first, first + c, vr);
    for (Eigen::Index e = 1; e < g; ++e) {
      const double* xr = first + e * c;
      for (Eigen::Index ch = 0; ch < c; ++ch) {
        const bool greater = xr[ch] > vr[ch];
        vr[ch] = greater ? xr[ch] : vr[ch];
        am[ch] = greater ? static_cast<std::int32_t>(e) : am[ch];
      }
    }
  }
  return DiffArray::make(std::move(v), {a}, [arg = std::move(arg), c, g](Node& self) {
    Matrix& gx = grad_of(*self.inputs[0]);
    double* out = gx.data();
    const double* gp = self.grad.data();
    for (Eigen::Index i = 0; i < self.grad.rows(); ++i) {
      for (Eigen::Index ch = 0; ch < c; ++ch) {
        const Eigen::Index row = i * g + arg[static_cast<std::size_t>(i * c + ch)];
        out[row * c + ch] += gp[i * c + ch];
      }
    }
  });
}

DiffArray edge_linear(const DiffArray& x, const DiffArray& weight, const DiffArray& bias,
                      std::span<const std::size_t> neighbors, std::size_t k) {
  const Eigen::Index c = x.cols();
  const Eigen::Index n = x.rows();
  if (weight.rows() != 2 * c) {
    throw invalid_argument_error("edge_linear: weight " + shape_str(weight) + " does not take " + std::to_string(2 * c) +
                                 " input channels");
  }
  if (bias.rows() != 1 || bias.cols() != weight.cols()) throw invalid_argument_error("edge_linear: bad bias shape");
  if (neighbors.size() != static_cast<std::size_t>(n) * k) {
    throw invalid_argument_error("edge_linear: neighbour list does not match " + std::to_string(n) + " points x k=" +
                                 std::to_string(k));
  }
  for (std::size_t j : neighbors) {
    if (j >= static_cast<std::size_t>(n)) throw invalid_argument_error("edge_linear: neighbour index out of range");
  }

  // [x_i, x_j - x_i] W = x_i (W_top - W_bot) + x_j W_bot
  const Matrix w_center = weight.value().topRows(c) - weight.value().bottomRows(c);
  const Matrix center = x.value() * w_center;
  const Matrix nbr = x.value() * weight.value().bottomRows(c);
  const auto kk = static_cast<Eigen::Index>(k);
  Matrix v(n * kk, weight.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index e = 0; e < kk; ++e) {
      const auto j = static_cast<Eigen::Index>(neighbors[static_cast<std::size_t>(i * kk + e)]);
      v.row(i * kk + e) = center.row(i) + nbr.row(j) + bias.value().row(0);
    }
  }

  std::vector<std::size_t> nb(neighbors.begin(), neighbors.end());
  return DiffArray::make(std::move(v), {x, weight, bias}, [nb = std::move(nb), kk, n, c, w_center](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node& bn = *self.inputs[2];
    const Eigen::Index h = self.grad.cols();
    // Per-point sums of edge grads as centre (gc) and as neighbour (gn).
    Matrix gc = Matrix::Zero(n, h);
    Matrix gn = Matrix::Zero(n, h);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index e = 0; e < kk; ++e) {
        const auto row = self.grad.row(i * kk + e);
        gc.row(i) += row;
        gn.row(static_cast<Eigen::Index>(nb[static_cast<std::size_t>(i * kk + e)])) += row;
      }
    }
    if (xn.requires_grad) {
      add_grad_product(xn, gc, w_center.transpose());
      xn.grad.noalias() += gn * wn.value.bottomRows(c).transpose();
    }
    if (wn.requires_grad) {
      Matrix& gw = grad_of(wn);
      const Matrix xc = xn.value.transpose() * gc;
      gw.topRows(c) += xc;
      gw.bottomRows(c).noalias() += xn.value.transpose() * gn;
      gw.bottomRows(c) -= xc;
    }
    if (bn.requires_grad) grad_of(bn) += gc.colwise().sum();
  });
}

DiffArray detach(const DiffArray& a) { return DiffArray::constant(a.value()); }

}  // namespace geogcn::ad
