#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace geogcn::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Adds this node's grad into its inputs' grads.
  std::function<void(Node&)> backward;
};

}  // namespace detail

/// Dense 2-D array participating in reverse-mode differentiation.
///
/// Rows index points (or edges), columns index channels. Scalars are 1x1.
/// Copies share the underlying node; operations build a graph that
/// `backward` walks in reverse topological order. Leaves created with
/// `parameter` accumulate gradients across calls until `zero_grad`.
class DiffArray {
 public:
  DiffArray() = default;

  static DiffArray constant(Matrix value);
  static DiffArray parameter(Matrix value);
  static DiffArray scalar(double value);
  static DiffArray from_rows(std::span<const Eigen::Vector3d> rows);

  bool defined() const { return node_ != nullptr; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  std::vector<std::size_t> shape() const;
  bool is_scalar() const { return rows() == 1 && cols() == 1; }
  bool requires_grad() const { return node_->requires_grad; }

  const Matrix& value() const { return node_->value; }
  // Mutable access for leaves (optimizer updates, finite-difference probes).
  Matrix& mutable_value() { return node_->value; }
  double item() const;

  bool has_grad() const { return node_->grad.size() != 0; }
  const Matrix& grad() const;
  void zero_grad();

  Eigen::Vector3d row3(Eigen::Index r) const;

  // Internal: used by operations.
  static DiffArray make(Matrix value, std::vector<DiffArray> inputs, std::function<void(detail::Node&)> backward);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit DiffArray(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// While alive on a thread, operations record no backward graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar. Intermediate gradients are recomputed on
/// every call; leaf gradients accumulate.
void backward(const DiffArray& loss);

// Elementwise arithmetic. Shapes must match exactly.
DiffArray add(const DiffArray& a, const DiffArray& b);
DiffArray sub(const DiffArray& a, const DiffArray& b);
DiffArray mul(const DiffArray& a, const DiffArray& b);
DiffArray scale(const DiffArray& a, double s);
// a * s where s is a 1x1 array.
DiffArray scale_by(const DiffArray& a, const DiffArray& s);
DiffArray square(const DiffArray& a);
DiffArray exp(const DiffArray& a);
DiffArray leaky_relu(const DiffArray& a, double slope);
// Elementwise min; ties select `a`.
DiffArray min_select(const DiffArray& a, const DiffArray& b);

DiffArray matmul(const DiffArray& a, const DiffArray& b);
// Adds a 1xC row to every row of a.
DiffArray add_row(const DiffArray& a, const DiffArray& row);

DiffArray sum(const DiffArray& a);
DiffArray mean(const DiffArray& a);

DiffArray concat_cols(const DiffArray& a, const DiffArray& b);
DiffArray slice_cols(const DiffArray& a, Eigen::Index start, Eigen::Index count);
DiffArray gather_rows(const DiffArray& a, std::span<const std::size_t> indices);

// Row-wise operations on N x C arrays.
DiffArray row_sqnorm(const DiffArray& a);                 // N x 1
DiffArray row_norm(const DiffArray& a);                   // N x 1, zero rows get zero gradient
DiffArray row_normalize(const DiffArray& a, double eps);  // a / max(|a|, eps)
DiffArray cross_rows(const DiffArray& a, const DiffArray& b);  // N x 3

/// Channel-wise max over consecutive groups of `group` rows: (N*group) x C -> N x C.
/// Gradient goes to the first maximal row of each group.
DiffArray max_aggregate(const DiffArray& a, std::size_t group);

/// First EdgeConv layer on concatenated edge features [x_i, x_j - x_i].
///
/// `weight` is (2C) x H: the top C rows act on x_i, the bottom C rows on
/// x_j - x_i. Output row i*k + e corresponds to edge (i, neighbors[i*k + e]).
DiffArray edge_linear(const DiffArray& x, const DiffArray& weight, const DiffArray& bias,
                      std::span<const std::size_t> neighbors, std::size_t k);

DiffArray detach(const DiffArray& a);

inline DiffArray operator+(const DiffArray& a, const DiffArray& b) { return add(a, b); }
inline DiffArray operator-(const DiffArray& a, const DiffArray& b) { return sub(a, b); }
inline DiffArray operator*(const DiffArray& a, double s) { return scale(a, s); }
inline DiffArray operator*(double s, const DiffArray& a) { return scale(a, s); }

}  // namespace geogcn::ad
