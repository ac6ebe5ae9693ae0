#include "drbayes/numerics.hpp"

#include <algorithm>

namespace drbayes {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace {

std::uint64_t mix_identifiers(std::uint64_t seed, std::uint64_t stream_id) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream_id + 0x632BE59BD9B4E019ULL));
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(mix_identifiers(seed, stream_id)) {}

RngStream RngStream::substream(std::uint64_t key) const {
  return RngStream(mix_identifiers(seed_, stream_id_), key);
}

double RngStream::uniform() {
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
}

double RngStream::normal() { return normal_(engine_); }

double RngStream::exponential() {
  double e = 0.0;
  // Exp(1) can return exactly zero when the uniform hits 0; redraw.
  while (e <= 0.0) e = std::exponential_distribution<double>(1.0)(engine_);
  return e;
}

std::uint64_t RngStream::below(std::uint64_t n) {
  return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
}

DirichletDraw sample_dirichlet(Index n, RngStream& rng) {
  if (n < 1) throw std::invalid_argument("sample_dirichlet: n must be at least 1");
  Vector w(n);
  for (Index i = 0; i < n; ++i) w[i] = rng.exponential();
  w /= w.sum();
  return {std::move(w)};
}

Vector sample_mvn(const Vector& mean, const Matrix& cov, RngStream& rng) {
  const Index p = mean.size();
  if (cov.rows() != p || cov.cols() != p) {
    throw std::invalid_argument("sample_mvn: covariance dimension mismatch");
  }
  Vector z(p);
  for (Index i = 0; i < p; ++i) z[i] = rng.normal();
  if (p == 0) return mean;

  Eigen::LDLT<Matrix> ldlt(cov);
  if (ldlt.info() != Eigen::Success) throw DecompositionError("sample_mvn: LDLT failed");
  const double scale = std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
  Vector d = ldlt.vectorD();
  for (Index i = 0; i < p; ++i) {
    if (d[i] < -1e-10 * scale) {
      throw DecompositionError("sample_mvn: covariance is not positive semi-definite");
    }
    d[i] = std::sqrt(std::max(d[i], 0.0));
  }
  // cov = P^T L D L^T P, so P^T L D^{1/2} z has covariance cov.
  Vector v = ldlt.matrixL() * d.cwiseProduct(z).eval();
  return mean + ldlt.transpositionsP().transpose() * v;
}

double batch_means_error(const Vector& values, Index num_batches) {
  if (num_batches < 2) throw std::invalid_argument("batch_means_error: need at least 2 batches");
  if (values.size() < 2 * num_batches) {
    throw std::invalid_argument("batch_means_error: need at least two values per batch");
  }
  const Index size = values.size() / num_batches;
  Vector means(num_batches);
  for (Index b = 0; b < num_batches; ++b) means[b] = values.segment(b * size, size).mean();
  return sample_sd(means) / std::sqrt(static_cast<double>(num_batches));
}

Index default_batch_count(Index replications) {
  return static_cast<Index>(std::floor(std::sqrt(static_cast<double>(replications))));
}

double sample_mean(const Vector& v) { return v.size() == 0 ? 0.0 : v.mean(); }

double sample_sd(const Vector& v) {
  if (v.size() < 2) return 0.0;
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

}  // namespace drbayes
