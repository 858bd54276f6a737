#include "hierdet/sparsemax.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "hierdet/kernels.hpp"

namespace hierdet {

namespace {

void check_input(const std::vector<double>& logits) {
  if (logits.empty())
    throw std::invalid_argument("sparsemax: empty logit vector");
  for (double z : logits)
    if (!std::isfinite(z))
      throw std::invalid_argument("sparsemax: non-finite logit");
}

}  // namespace

SparseProjection sparsemax(const std::vector<double>& logits) {
  check_input(logits);
  const std::size_t q = logits.size();

  // The projection is invariant to uniform shifts; subtracting the max keeps
  // the cumulative sums well-conditioned for large logits.
  const double shift = kernels::max_value(logits.data(), q);
  std::vector<double> shifted(q);
  for (std::size_t i = 0; i < q; ++i) shifted[i] = logits[i] - shift;

  std::vector<double> sorted = shifted;
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());

  // k* = max{ k : 1 + k z_(k) > sum_{j<=k} z_(j) }, tau from its prefix sum.
  double cumsum = 0.0;
  int k_star = 0;
  double cumsum_at_k = 0.0;
  for (std::size_t k = 1; k <= q; ++k) {
    cumsum += sorted[k - 1];
    if (1.0 + static_cast<double>(k) * sorted[k - 1] > cumsum) {
      k_star = static_cast<int>(k);
      cumsum_at_k = cumsum;
    }
  }
  const double tau_shifted = (cumsum_at_k - 1.0) / k_star;

  SparseProjection out;
  out.tau = tau_shifted + shift;
  out.probabilities.resize(q);
  kernels::shifted_relu(shifted.data(), tau_shifted, out.probabilities.data(),
                        q);
  for (std::size_t i = 0; i < q; ++i)
    if (out.probabilities[i] > 0.0) out.support.push_back(static_cast<int>(i));
  return out;
}

std::optional<double> sparsemax_loss(const std::vector<double>& logits,
                                     const ObjectnessTarget& target) {
  if (target.degenerate()) return std::nullopt;
  check_input(logits);
  if (target.q.size() != logits.size())
    throw std::invalid_argument("sparsemax_loss: size mismatch");

  SparseProjection proj = sparsemax(logits);
  const double qz = kernels::dot(target.q.data(), logits.data(), logits.size());
  double support_term = 0.0;
  for (int j : proj.support)
    support_term += logits[j] * logits[j] - proj.tau * proj.tau;
  const double qq =
      kernels::dot(target.q.data(), target.q.data(), target.q.size());
  double loss = -qz + 0.5 * support_term + 0.5 * qq;
  // Exact arithmetic gives loss >= 0; clamp away the rounding residue so
  // the minimum reports as 0.
  return std::max(loss, 0.0);
}

std::optional<std::vector<double>> sparsemax_loss_grad(
    const std::vector<double>& logits, const ObjectnessTarget& target) {
  if (target.degenerate()) return std::nullopt;
  check_input(logits);
  if (target.q.size() != logits.size())
    throw std::invalid_argument("sparsemax_loss_grad: size mismatch");
  SparseProjection proj = sparsemax(logits);
  std::vector<double> grad(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    grad[i] = proj.probabilities[i] - target.q[i];
  return grad;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  check_input(logits);
  const double shift = kernels::max_value(logits.data(), logits.size());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - shift);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

std::optional<std::pair<double, std::vector<double>>> softmax_kl_loss(
    const std::vector<double>& logits, const ObjectnessTarget& target) {
  if (target.degenerate()) return std::nullopt;
  check_input(logits);
  if (target.q.size() != logits.size())
    throw std::invalid_argument("softmax_kl_loss: size mismatch");

  std::vector<double> s = softmax(logits);
  double loss = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double qi = target.q[i];
    if (qi > 0.0) loss += qi * (std::log(qi) - std::log(s[i]));
  }
  std::vector<double> grad(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) grad[i] = s[i] - target.q[i];
  return std::make_pair(std::max(loss, 0.0), std::move(grad));
}

}  // namespace hierdet
