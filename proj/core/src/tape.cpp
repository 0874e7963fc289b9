#include "nfuse/tape.hpp"

#include <cmath>
#include <stdexcept>

#include "nfuse/rng.hpp"

namespace nfuse::toy {

Tensor Tensor::randn(int r, int c, double stddev, uint64_t seed) {
  Tensor t(r, c);
  StreamRng rng(seed, 0x7E4508ULL);
  for (auto& v : t.data) v = rng.normal() * stddev;
  return t;
}

Tensor Tensor::ones_gain(int r, int c) {
  Tensor t(r, c);
  std::fill(t.data.begin(), t.data.end(), 1.0);
  return t;
}

Tape::Ref Tape::push(Tensor value, std::function<void()> back) {
  Node n;
  n.grad = Tensor(value.rows, value.cols);
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Ref>(nodes_.size()) - 1;
}

Tape::Ref Tape::leaf(Tensor value) { return push(std::move(value)); }

Tape::Ref Tape::matmul(Ref a, Ref b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (A.cols != B.rows) throw std::invalid_argument("matmul: inner dims differ");
  Tensor C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int k = 0; k < A.cols; ++k) {
      const double aik = A.at(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < B.cols; ++j) C.at(i, j) += aik * B.at(k, j);
    }
  const Ref out = push(std::move(C));
  nodes_[out].back = [this, a, b, out] {
    const Tensor& dC = nodes_[out].grad;
    const Tensor& A2 = nodes_[a].value;
    const Tensor& B2 = nodes_[b].value;
    Tensor& dA = nodes_[a].grad;
    Tensor& dB = nodes_[b].grad;
    // dA = dC * B^T
    for (int i = 0; i < A2.rows; ++i)
      for (int j = 0; j < B2.cols; ++j) {
        const double d = dC.at(i, j);
        if (d == 0.0) continue;
        for (int k = 0; k < A2.cols; ++k) dA.at(i, k) += d * B2.at(k, j);
      }
    // dB = A^T * dC
    for (int i = 0; i < A2.rows; ++i)
      for (int k = 0; k < A2.cols; ++k) {
        const double av = A2.at(i, k);
        if (av == 0.0) continue;
        for (int j = 0; j < B2.cols; ++j) dB.at(k, j) += av * dC.at(i, j);
      }
  };
  return out;
}

Tape::Ref Tape::matmul_nt(Ref a, Ref b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (A.cols != B.cols) throw std::invalid_argument("matmul_nt: inner dims differ");
  Tensor C(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < B.rows; ++j) {
      double s = 0;
      for (int k = 0; k < A.cols; ++k) s += A.at(i, k) * B.at(j, k);
      C.at(i, j) = s;
    }
  const Ref out = push(std::move(C));
  nodes_[out].back = [this, a, b, out] {
    const Tensor& dC = nodes_[out].grad;
    const Tensor& A2 = nodes_[a].value;
    const Tensor& B2 = nodes_[b].value;
    Tensor& dA = nodes_[a].grad;
    Tensor& dB = nodes_[b].grad;
    for (int i = 0; i < dC.rows; ++i)
      for (int j = 0; j < dC.cols; ++j) {
        const double d = dC.at(i, j);
        if (d == 0.0) continue;
        for (int k = 0; k < A2.cols; ++k) {
          dA.at(i, k) += d * B2.at(j, k);
          dB.at(j, k) += d * A2.at(i, k);
        }
      }
  };
  return out;
}

Tape::Ref Tape::add(Ref a, Ref b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) throw std::invalid_argument("add: shape mismatch");
  Tensor C = A;
  for (size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
  const Ref out = push(std::move(C));
  nodes_[out].back = [this, a, b, out] {
    const Tensor& d = nodes_[out].grad;
    for (size_t i = 0; i < d.size(); ++i) {
      nodes_[a].grad.data[i] += d.data[i];
      nodes_[b].grad.data[i] += d.data[i];
    }
  };
  return out;
}

Tape::Ref Tape::add_row(Ref a, Ref row) {
  const Tensor& A = nodes_[a].value;
  const Tensor& R = nodes_[row].value;
  if (R.rows != 1 || R.cols != A.cols)
    throw std::invalid_argument("add_row: need a 1-row tensor of matching width");
  Tensor C = A;
  for (int i = 0; i < C.rows; ++i)
    for (int j = 0; j < C.cols; ++j) C.at(i, j) += R.at(0, j);
  const Ref out = push(std::move(C));
  nodes_[out].back = [this, a, row, out] {
    const Tensor& d = nodes_[out].grad;
    for (size_t i = 0; i < d.size(); ++i) nodes_[a].grad.data[i] += d.data[i];
    for (int i = 0; i < d.rows; ++i)
      for (int j = 0; j < d.cols; ++j) nodes_[row].grad.at(0, j) += d.at(i, j);
  };
  return out;
}

Tape::Ref Tape::scale(Ref a, double s) {
  Tensor C = nodes_[a].value;
  for (auto& v : C.data) v *= s;
  const Ref out = push(std::move(C));
  nodes_[out].back = [this, a, s, out] {
    const Tensor& d = nodes_[out].grad;
    for (size_t i = 0; i < d.size(); ++i) nodes_[a].grad.data[i] += s * d.data[i];
  };
  return out;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tape::Ref Tape::gelu(Ref a) {
  const Tensor& A = nodes_[a].value;
  Tensor C(A.rows, A.cols);
  for (size_t i = 0; i < A.size(); ++i) {
    const double x = A.data[i];
    C.data[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  const Ref out = push(std::move(C));
  nodes_[out].back = [this, a, out] {
    const Tensor& d = nodes_[out].grad;
    const Tensor& A2 = nodes_[a].value;
    for (size_t i = 0; i < d.size(); ++i) {
      const double x = A2.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      nodes_[a].grad.data[i] += d.data[i] * (cdf + x * pdf);
    }
  };
  return out;
}

Tape::Ref Tape::softmax_rows(Ref a, const std::vector<uint8_t>* mask) {
  const Tensor& A = nodes_[a].value;
  if (mask && mask->size() != A.size())
    throw std::invalid_argument("softmax_rows: mask size mismatch");
  Tensor C(A.rows, A.cols);
  for (int i = 0; i < A.rows; ++i) {
    double mx = -1e300;
    for (int j = 0; j < A.cols; ++j) {
      if (mask && !(*mask)[static_cast<size_t>(i) * A.cols + j]) continue;
      mx = std::fmax(mx, A.at(i, j));
    }
    if (mx == -1e300) throw std::invalid_argument("softmax_rows: fully masked row");
    double sum = 0;
    for (int j = 0; j < A.cols; ++j) {
      const bool ok = !mask || (*mask)[static_cast<size_t>(i) * A.cols + j];
      const double e = ok ? std::exp(A.at(i, j) - mx) : 0.0;
      C.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < A.cols; ++j) C.at(i, j) /= sum;
  }
  const Ref out = push(std::move(C));
  nodes_[out].back = [this, a, out] {
    const Tensor& P = nodes_[out].value;
    const Tensor& d = nodes_[out].grad;
    for (int i = 0; i < P.rows; ++i) {
      double dot = 0;
      for (int j = 0; j < P.cols; ++j) dot += d.at(i, j) * P.at(i, j);
      for (int j = 0; j < P.cols; ++j)
        nodes_[a].grad.at(i, j) += P.at(i, j) * (d.at(i, j) - dot);
    }
  };
  return out;
}

Tape::Ref Tape::layernorm(Ref a, Ref gain, Ref bias, double eps) {
  const Tensor& A = nodes_[a].value;
  const Tensor& G = nodes_[gain].value;
  const Tensor& B = nodes_[bias].value;
  if (G.rows != 1 || B.rows != 1 || G.cols != A.cols || B.cols != A.cols)
    throw std::invalid_argument("layernorm: gain/bias must be 1-row, matching width");
  Tensor C(A.rows, A.cols);
  std::vector<double> inv_sigma(A.rows), mu(A.rows);
  for (int i = 0; i < A.rows; ++i) {
    double m = 0;
    for (int j = 0; j < A.cols; ++j) m += A.at(i, j);
    m /= A.cols;
    double var = 0;
    for (int j = 0; j < A.cols; ++j) {
      const double dlt = A.at(i, j) - m;
      var += dlt * dlt;
    }
    var /= A.cols;
    mu[i] = m;
    inv_sigma[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < A.cols; ++j)
      C.at(i, j) = (A.at(i, j) - m) * inv_sigma[i] * G.at(0, j) + B.at(0, j);
  }
  const Ref out = push(std::move(C));
  nodes_[out].back = [this, a, gain, bias, out, mu, inv_sigma] {
    const Tensor& A2 = nodes_[a].value;
    const Tensor& G2 = nodes_[gain].value;
    const Tensor& d = nodes_[out].grad;
    const int n = A2.cols;
    for (int i = 0; i < A2.rows; ++i) {
      double sum_gd = 0, sum_gdx = 0;
      for (int j = 0; j < n; ++j) {
        const double xhat = (A2.at(i, j) - mu[i]) * inv_sigma[i];
        const double gd = d.at(i, j) * G2.at(0, j);
        sum_gd += gd;
        sum_gdx += gd * xhat;
        nodes_[gain].grad.at(0, j) += d.at(i, j) * xhat;
        nodes_[bias].grad.at(0, j) += d.at(i, j);
      }
      for (int j = 0; j < n; ++j) {
        const double xhat = (A2.at(i, j) - mu[i]) * inv_sigma[i];
        const double gd = d.at(i, j) * G2.at(0, j);
        nodes_[a].grad.at(i, j) +=
            inv_sigma[i] * (gd - sum_gd / n - xhat * sum_gdx / n);
      }
    }
  };
  return out;
}

Tape::Ref Tape::gather_rows(Ref a, std::vector<int> row_map) {
  const Tensor& A = nodes_[a].value;
  Tensor C(static_cast<int>(row_map.size()), A.cols);
  for (size_t i = 0; i < row_map.size(); ++i) {
    if (row_map[i] < 0 || row_map[i] >= A.rows)
      throw std::invalid_argument("gather_rows: index out of range");
    for (int j = 0; j < A.cols; ++j)
      C.at(static_cast<int>(i), j) = A.at(row_map[i], j);
  }
  const Ref out = push(std::move(C));
  nodes_[out].back = [this, a, out, map = std::move(row_map)] {
    const Tensor& d = nodes_[out].grad;
    for (size_t i = 0; i < map.size(); ++i)
      for (int j = 0; j < d.cols; ++j)
        nodes_[a].grad.at(map[i], j) += d.at(static_cast<int>(i), j);
  };
  return out;
}

Tape::Ref Tape::mse(Ref a, Ref b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) throw std::invalid_argument("mse: shape mismatch");
  double s = 0;
  for (size_t i = 0; i < A.size(); ++i) {
    const double d = A.data[i] - B.data[i];
    s += d * d;
  }
  Tensor C(1, 1);
  C.at(0, 0) = s / static_cast<double>(A.size());
  const Ref out = push(std::move(C));
  nodes_[out].back = [this, a, b, out] {
    const double up = nodes_[out].grad.at(0, 0);
    const Tensor& A2 = nodes_[a].value;
    const Tensor& B2 = nodes_[b].value;
    const double k = 2.0 * up / static_cast<double>(A2.size());
    for (size_t i = 0; i < A2.size(); ++i) {
      const double d = k * (A2.data[i] - B2.data[i]);
      nodes_[a].grad.data[i] += d;
      nodes_[b].grad.data[i] -= d;
    }
  };
  return out;
}

void Tape::backward(Ref loss) {
  if (nodes_[loss].value.rows != 1 || nodes_[loss].value.cols != 1)
    throw std::invalid_argument("backward: loss must be a scalar node");
  for (auto& n : nodes_) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
  nodes_[loss].grad.at(0, 0) = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;)
    if (nodes_[i].back) nodes_[i].back();
}

}  // namespace nfuse::toy
