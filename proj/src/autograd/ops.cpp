#include "bks/ops.hpp"

#include <algorithm>
#include <atomic>

#include "bks/errors.hpp"

namespace bks {

namespace {

std::atomic<std::uint64_t> next_sequence_nr{1};

// Records an interior node when any input requires grad.
Var make_result(
    Tensor value,
    std::initializer_list<const Var*> inputs,
    Node::BackwardFn fn) {
  bool any = false;
  for (const Var* in : inputs) {
    any = any || in->requires_grad();
  }
  auto out = std::make_shared<const Tensor>(std::move(value));
  if (!any) {
    return Var(std::move(out), nullptr);
  }
  auto node = std::make_shared<Node>();
  node->sequence_nr = next_sequence_nr.fetch_add(1, std::memory_order_relaxed);
  for (const Var* in : inputs) {
    node->next.push_back(in->node());
  }
  node->backward = std::move(fn);
  return Var(std::move(out), std::move(node));
}

void check_matrix(const Tensor& t, const char* what) {
  BKS_CHECK(
      t.dim() == 2,
      DimensionError,
      what,
      " expects a matrix, got shape ",
      shape_str(t.shape()));
}

} // namespace

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  BKS_CHECK(
      a.size(1) == b.size(0),
      DimensionError,
      "matmul inner extents differ: ",
      shape_str(a.shape()),
      " x ",
      shape_str(b.shape()));
  const auto m = static_cast<std::size_t>(a.size(0));
  const auto k = static_cast<std::size_t>(a.size(1));
  const auto n = static_cast<std::size_t>(b.size(1));
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] += av * brow[j];
      }
    }
  }
  return Tensor::computed(
      {static_cast<std::int64_t>(m), static_cast<std::int64_t>(n)},
      std::move(out));
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  // a: [k×m], b: [k×n] → [m×n]
  const auto k = static_cast<std::size_t>(a.size(0));
  const auto m = static_cast<std::size_t>(a.size(1));
  const auto n = static_cast<std::size_t>(b.size(1));
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = pa[p * m + i];
      double* row = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] += av * brow[j];
      }
    }
  }
  return Tensor::computed(
      {static_cast<std::int64_t>(m), static_cast<std::int64_t>(n)},
      std::move(out));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  // a: [m×k], b: [n×k] → [m×n]
  const auto m = static_cast<std::size_t>(a.size(0));
  const auto k = static_cast<std::size_t>(a.size(1));
  const auto n = static_cast<std::size_t>(b.size(0));
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += arow[p] * brow[p];
      }
      out[i * n + j] = acc;
    }
  }
  return Tensor::computed(
      {static_cast<std::int64_t>(m), static_cast<std::int64_t>(n)},
      std::move(out));
}

} // namespace kernels

Var matmul(const Var& a, const Var& b) {
  auto value = kernels::matmul(a.value(), b.value());
  const bool need_a = a.requires_grad();
  const bool need_b = b.requires_grad();
  return make_result(
      std::move(value),
      {&a, &b},
      [av = a.value_ptr(), bv = b.value_ptr(), need_a, need_b](
          const Tensor& g) {
        std::vector<Tensor> grads(2);
        if (need_a) {
          grads[0] = kernels::matmul_nt(g, *bv);
        }
        if (need_b) {
          grads[1] = kernels::matmul_tn(*av, g);
        }
        return grads;
      });
}

Var add(const Var& a, const Var& b) {
  BKS_CHECK(
      a.value().same_shape(b.value()),
      DimensionError,
      "add shape mismatch: ",
      shape_str(a.shape()),
      " vs ",
      shape_str(b.shape()));
  std::vector<double> out(a.value().data().begin(), a.value().data().end());
  auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += bd[i];
  }
  return make_result(
      Tensor::computed(a.shape(), std::move(out)),
      {&a, &b},
      [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var add_row(const Var& x, const Var& row) {
  check_matrix(x.value(), "add_row");
  BKS_CHECK(
      row.value().dim() == 1 && row.value().size(0) == x.value().size(1),
      DimensionError,
      "add_row needs a row of length ",
      x.value().size(1),
      ", got shape ",
      shape_str(row.shape()));
  const auto m = static_cast<std::size_t>(x.value().size(0));
  const auto n = static_cast<std::size_t>(x.value().size(1));
  std::vector<double> out(x.value().data().begin(), x.value().data().end());
  auto rd = row.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] += rd[j];
    }
  }
  return make_result(
      Tensor::computed(x.shape(), std::move(out)),
      {&x, &row},
      [m, n](const Tensor& g) {
        std::vector<double> rg(n, 0.0);
        auto gd = g.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            rg[j] += gd[i * n + j];
          }
        }
        return std::vector<Tensor>{
            g,
            Tensor::computed({static_cast<std::int64_t>(n)}, std::move(rg))};
      });
}

Var relu(const Var& a) {
  std::vector<double> out(a.value().data().begin(), a.value().data().end());
  for (auto& v : out) {
    v = std::max(v, 0.0);
  }
  return make_result(
      Tensor::computed(a.shape(), std::move(out)),
      {&a},
      [input = a.value_ptr()](const Tensor& g) {
        std::vector<double> gi(g.data().begin(), g.data().end());
        auto in = input->data();
        for (std::size_t i = 0; i < gi.size(); ++i) {
          if (in[i] <= 0.0) {
            gi[i] = 0.0;
          }
        }
        return std::vector<Tensor>{Tensor::computed(g.shape(), std::move(gi))};
      });
}

Var scale(const Var& a, double factor) {
  std::vector<double> out(a.value().data().begin(), a.value().data().end());
  for (auto& v : out) {
    v *= factor;
  }
  return make_result(
      Tensor::computed(a.shape(), std::move(out)),
      {&a},
      [factor](const Tensor& g) {
        std::vector<double> gi(g.data().begin(), g.data().end());
        for (auto& v : gi) {
          v *= factor;
        }
        return std::vector<Tensor>{Tensor::computed(g.shape(), std::move(gi))};
      });
}

Var mse_loss(const Var& pred, const Var& target) {
  BKS_CHECK(
      pred.value().same_shape(target.value()),
      DimensionError,
      "mse_loss shape mismatch: ",
      shape_str(pred.shape()),
      " vs ",
      shape_str(target.shape()));
  const auto n = pred.value().numel();
  std::vector<double> diff(n);
  double sum = 0.0;
  auto pd = pred.value().data();
  auto td = target.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = pd[i] - td[i];
    sum += diff[i] * diff[i];
  }
  auto shape = pred.shape();
  return make_result(
      Tensor::computed({}, {sum / static_cast<double>(n)}),
      {&pred, &target},
      [diff = std::move(diff), shape = std::move(shape), n](const Tensor& g) {
        const double k = 2.0 * g.item() / static_cast<double>(n);
        std::vector<double> gp(n);
        std::vector<double> gt(n);
        for (std::size_t i = 0; i < n; ++i) {
          gp[i] = k * diff[i];
          gt[i] = -gp[i];
        }
        return std::vector<Tensor>{
            Tensor::computed(shape, std::move(gp)),
            Tensor::computed(shape, std::move(gt))};
      });
}

} // namespace bks
