#include "robustmal/kernels.hpp"

#include <omp.h>

#include "robustmal/error.hpp"

namespace robustmal {

namespace {

// Below this many multiply-adds the parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

void check(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kDimensionMismatch, what);
}

// Parallel bodies. `parallel` only decides whether the outer loop is
// distributed; small problems run inline.
void abt_body(const Matrix& a, const Matrix& b, Matrix& c, bool parallel) {
  check(a.cols() == b.cols(), "gemm_abt: inner dimensions differ");
  c.resize(a.rows(), b.rows());
  const auto n = static_cast<long>(a.rows());
  const std::size_t m = b.rows();
  const std::size_t k = a.cols();
#pragma omp parallel for schedule(static) if (parallel)
  for (long i = 0; i < n; ++i) {
    const double* ar = a.row(static_cast<std::size_t>(i)).data();
    double* cr = c.row(static_cast<std::size_t>(i)).data();
    for (std::size_t j = 0; j < m; ++j) {
      const double* br = b.row(j).data();
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      cr[j] = s;
    }
  }
}

void atb_body(const Matrix& a, const Matrix& b, Matrix& c, bool parallel) {
  check(a.rows() == b.rows(), "gemm_atb: row counts differ");
  c.resize(a.cols(), b.cols());
  const auto k = static_cast<long>(a.cols());
  const std::size_t n = a.rows();
  const std::size_t m = b.cols();
#pragma omp parallel for schedule(static) if (parallel)
  for (long i = 0; i < k; ++i) {
    double* cr = c.row(static_cast<std::size_t>(i)).data();
    for (std::size_t r = 0; r < n; ++r) {
      const double av = a(r, static_cast<std::size_t>(i));
      if (av == 0.0) continue;
      const double* br = b.row(r).data();
      for (std::size_t j = 0; j < m; ++j) cr[j] += av * br[j];
    }
  }
}

void gemm_body(const Matrix& a, const Matrix& b, Matrix& c, bool parallel) {
  check(a.cols() == b.rows(), "gemm: inner dimensions differ");
  c.resize(a.rows(), b.cols());
  const auto n = static_cast<long>(a.rows());
  const std::size_t k = a.cols();
  const std::size_t m = b.cols();
#pragma omp parallel for schedule(static) if (parallel)
  for (long i = 0; i < n; ++i) {
    double* cr = c.row(static_cast<std::size_t>(i)).data();
    const double* ar = a.row(static_cast<std::size_t>(i)).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const double* br = b.row(p).data();
      for (std::size_t j = 0; j < m; ++j) cr[j] += av * br[j];
    }
  }
}

void distance_body(const Matrix& q, const Matrix& r, Matrix& out, bool parallel) {
  check(q.cols() == r.cols(), "squared_distances: dimensions differ");
  out.resize(q.rows(), r.rows());
  const auto n = static_cast<long>(q.rows());
  const std::size_t m = r.rows();
  const std::size_t k = q.cols();
#pragma omp parallel for schedule(static) if (parallel)
  for (long i = 0; i < n; ++i) {
    const double* qr = q.row(static_cast<std::size_t>(i)).data();
    for (std::size_t j = 0; j < m; ++j) {
      const double* rr = r.row(j).data();
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double d = qr[p] - rr[p];
        s += d * d;
      }
      out(static_cast<std::size_t>(i), j) = s;
    }
  }
}

bool worth_it(std::size_t work) { return work >= kParallelWork && omp_get_max_threads() > 1; }

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check(rows[i].size() == m.cols(), "from_rows: ragged rows");
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

namespace kernels {

void gemm_abt(const Matrix& a, const Matrix& b, Matrix& c) {
  abt_body(a, b, c, worth_it(a.rows() * b.rows() * a.cols()));
}
void gemm_atb(const Matrix& a, const Matrix& b, Matrix& c) {
  atb_body(a, b, c, worth_it(a.rows() * a.cols() * b.cols()));
}
void gemm(const Matrix& a, const Matrix& b, Matrix& c) {
  gemm_body(a, b, c, worth_it(a.rows() * a.cols() * b.cols()));
}
void squared_distances(const Matrix& queries, const Matrix& reference, Matrix& out) {
  distance_body(queries, reference, out, worth_it(queries.rows() * reference.rows() * queries.cols()));
}

// Straightforward loops kept as the reference for the parallel kernels.
namespace serial {

void gemm_abt(const Matrix& a, const Matrix& b, Matrix& c) {
  check(a.cols() == b.cols(), "gemm_abt: inner dimensions differ");
  c.resize(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(j, p);
      c(i, j) = s;
    }
  }
}

void gemm_atb(const Matrix& a, const Matrix& b, Matrix& c) {
  check(a.rows() == b.rows(), "gemm_atb: row counts differ");
  c.resize(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, i) * b(r, j);
      c(i, j) = s;
    }
  }
}

void gemm(const Matrix& a, const Matrix& b, Matrix& c) {
  check(a.cols() == b.rows(), "gemm: inner dimensions differ");
  c.resize(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  }
}

void squared_distances(const Matrix& queries, const Matrix& reference, Matrix& out) {
  check(queries.cols() == reference.cols(), "squared_distances: dimensions differ");
  out.resize(queries.rows(), reference.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    for (std::size_t j = 0; j < reference.rows(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < queries.cols(); ++p) {
        const double d = queries(i, p) - reference(j, p);
        s += d * d;
      }
      out(i, j) = s;
    }
  }
}

}  // namespace serial

}  // namespace kernels

int worker_count() { return omp_get_max_threads(); }

void set_worker_count(int n) {
  if (n > 0) omp_set_num_threads(n);
}

}  // namespace robustmal
