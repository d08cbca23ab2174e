#include "bks/synthetic.hpp"

#include "bks/errors.hpp"
#include "bks/ops.hpp"

namespace bks {

namespace {

Tensor take_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  const auto cols = static_cast<std::size_t>(t.size(1));
  auto d = t.data();
  return Tensor(
      {static_cast<std::int64_t>(end - begin), static_cast<std::int64_t>(cols)},
      std::vector<double>(d.begin() + begin * cols, d.begin() + end * cols));
}

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  BKS_CHECK(
      a.size(1) == b.size(1), DimensionError, "concat column mismatch");
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor({a.size(0) + b.size(0), a.size(1)}, std::move(data));
}

} // namespace

SyntheticRegression::SyntheticRegression(
    std::size_t in_dim,
    std::size_t out_dim,
    std::uint64_t seed,
    double noise)
    : in_dim_(in_dim), out_dim_(out_dim), noise_(noise), stream_(seed) {
  Rng rng = stream_.split(0);
  std::vector<double> w(in_dim * out_dim);
  for (auto& v : w) {
    v = rng.uniform(-1.0, 1.0);
  }
  teacher_ = Tensor(
      {static_cast<std::int64_t>(in_dim), static_cast<std::int64_t>(out_dim)},
      std::move(w));
}

Batch SyntheticRegression::batch(std::uint64_t iteration, std::size_t rows) const {
  Rng rng = stream_.split(iteration + 1);
  std::vector<double> x(rows * in_dim_);
  for (auto& v : x) {
    v = rng.uniform(-1.0, 1.0);
  }
  Tensor inputs(
      {static_cast<std::int64_t>(rows), static_cast<std::int64_t>(in_dim_)},
      std::move(x));
  Tensor targets = kernels::matmul(inputs, teacher_);
  for (auto& v : targets.mutable_data()) {
    v += noise_ * rng.uniform(-1.0, 1.0);
  }
  return {std::move(inputs), std::move(targets)};
}

Batch shard(const Batch& batch, int rank, int world) {
  const auto rows = static_cast<std::size_t>(batch.inputs.size(0));
  const auto w = static_cast<std::size_t>(world);
  BKS_CHECK(
      rows % w == 0,
      UsageError,
      "batch of ",
      rows,
      " rows does not split evenly over ",
      world,
      " ranks");
  const auto per = rows / w;
  const auto begin = per * static_cast<std::size_t>(rank);
  return {
      take_rows(batch.inputs, begin, begin + per),
      take_rows(batch.targets, begin, begin + per)};
}

Batch concat(const Batch& a, const Batch& b) {
  return {stack_rows(a.inputs, b.inputs), stack_rows(a.targets, b.targets)};
}

} // namespace bks
