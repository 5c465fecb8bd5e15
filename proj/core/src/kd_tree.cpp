#include <geogcn/kd_tree.hpp>

#include <algorithm>
#include <numeric>
#include <queue>

#include <geogcn/errors.hpp>

namespace geogcn {

namespace {

constexpr std::size_t kLeafSize = 12;

bool closer(const Neighbor& a, const Neighbor& b) {
  if (a.squared_distance != b.squared_distance) return a.squared_distance < b.squared_distance;
  return a.index < b.index;
}

struct FartherFirst {
  bool operator()(const Neighbor& a, const Neighbor& b) const { return closer(a, b); }
};

double box_squared_distance(const Vec3& q, const Vec3& lo, const Vec3& hi) {
  double d2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    double d = 0.0;
    if (q[a] < lo[a]) {
      d = lo[a] - q[a];
    } else if (q[a] > hi[a]) {
      d = q[a] - hi[a];
    }
    d2 += d * d;
  }
  return d2;
}

}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()), order_(points.size()) {
  std::iota(order_.begin(), order_.end(), Index{0});
  if (!points_.empty()) {
    nodes_.reserve(2 * (points_.size() / kLeafSize + 1));
    build(0, points_.size());
  }
}

int KdTree::build(std::size_t begin, std::size_t end) {
  Node node;
  node.begin = begin;
  node.end = end;
  node.lo = points_[order_[begin]];
  node.hi = node.lo;
  for (std::size_t i = begin + 1; i < end; ++i) {
    node.lo = node.lo.cwiseMin(points_[order_[i]]);
    node.hi = node.hi.cwiseMax(points_[order_[i]]);
  }

  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= kLeafSize) return id;

  int axis = 0;
  (node.hi - node.lo).maxCoeff(&axis);
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end), [&](Index a, Index b) {
                     if (points_[a][axis] != points_[b][axis]) return points_[a][axis] < points_[b][axis];
                     return a < b;
                   });

  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, std::size_t k, std::optional<Index> exclude) const {
  const std::size_t available = points_.size() - (exclude && *exclude < points_.size() ? 1 : 0);
  if (k > available) throw invalid_argument_error("knn: requested more neighbours than available points");
  if (k == 0) return {};

  // Max-heap on (distance, index): top is the current worst candidate.
  std::priority_queue<Neighbor, std::vector<Neighbor>, FartherFirst> heap;

  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();

    // Equal distances must still be visited so that lower indices can win ties.
    if (heap.size() == k && box_squared_distance(query, node.lo, node.hi) > heap.top().squared_distance) continue;

    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const Index idx = order_[i];
        if (exclude && idx == *exclude) continue;
        const Neighbor cand{idx, (points_[idx] - query).squaredNorm()};
        if (heap.size() < k) {
          heap.push(cand);
        } else if (closer(cand, heap.top())) {
          heap.pop();
          heap.push(cand);
        }
      }
      continue;
    }

    const Node& l = nodes_[static_cast<std::size_t>(node.left)];
    const Node& r = nodes_[static_cast<std::size_t>(node.right)];
    const double dl = box_squared_distance(query, l.lo, l.hi);
    const double dr = box_squared_distance(query, r.lo, r.hi);
    // Push the farther child first so the nearer one is searched first.
    if (dl <= dr) {
      stack.push_back(node.right);
      stack.push_back(node.left);
    } else {
      stack.push_back(node.left);
      stack.push_back(node.right);
    }
  }

  std::vector<Neighbor> result(heap.size());
  for (std::size_t i = result.size(); i-- > 0;) {
    result[i] = heap.top();
    heap.pop();
  }
  return result;
}

Neighbor KdTree::nearest(const Vec3& query) const {
  if (points_.empty()) throw invalid_argument_error("nearest: empty tree");
  return knn(query, 1).front();
}

}  // namespace geogcn
