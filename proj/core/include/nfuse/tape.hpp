#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace nfuse::toy {

/// Dense row-major matrix of doubles; rows = tokens, cols = channels.
struct Tensor {
  int rows = 0, cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  static Tensor randn(int r, int c, double stddev, uint64_t seed);
  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor ones_gain(int r, int c);  // all-ones (layernorm gain init)
};

/// Reverse-mode tape over Tensor ops. Nodes are created in topological
/// order; backward() walks them in reverse. Small and double-precision,
/// which keeps finite-difference checks tight.
class Tape {
 public:
  using Ref = int;

  Ref leaf(Tensor value);

  Ref matmul(Ref a, Ref b);     // (n,k) x (k,m)
  Ref matmul_nt(Ref a, Ref b);  // (n,k) x (m,k)^T -> (n,m)
  Ref add(Ref a, Ref b);
  Ref add_row(Ref a, Ref row);  // broadcast a 1-row tensor over all rows
  Ref scale(Ref a, double s);
  Ref gelu(Ref a);
  /// Row-wise softmax; an optional 0/1 mask (rows*cols entries) excludes
  /// keys. Every row must keep at least one allowed entry.
  Ref softmax_rows(Ref a, const std::vector<uint8_t>* mask = nullptr);
  Ref layernorm(Ref a, Ref gain, Ref bias, double eps = 1e-5);
  /// out[i,:] = a[row_map[i],:]; backward scatter-adds.
  Ref gather_rows(Ref a, std::vector<int> row_map);
  Ref mse(Ref a, Ref b);  // scalar (1x1) mean squared error

  const Tensor& value(Ref r) const { return nodes_[r].value; }
  const Tensor& grad(Ref r) const { return nodes_[r].grad; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every node.
  void backward(Ref loss);

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> back;  // may be empty (leaves)
  };

  Ref push(Tensor value, std::function<void()> back = {});
  std::vector<Node> nodes_;
};

}  // namespace nfuse::toy
