#pragma once

// Spectrally restricted finetuning.
//
// A SpectralAdapter freezes the factorization W₀ = U Σ Vᵀ of a pretrained
// matrix and exposes a trainable r×r block M placed on the diagonal interval
// [k, k+r) of the spectral coefficient matrix:
//
//     W = U (Σ + A) Vᵀ,   A[k:k+r, k:k+r] = M, zero elsewhere
//       = W₀ + U_B M V_Bᵀ  with U_B = U[:, k:k+r], V_B = V[:, k:k+r]
//
// so ∂L/∂M = U_Bᵀ (∂L/∂W) V_B. The trainer fits M by least squares against a
// target linear map (or a chain of adapters against a composed map).

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spectra/error.hpp"
#include "spectra/matrix.hpp"
#include "spectra/rng.hpp"
#include "spectra/svd.hpp"

namespace spectra {

class SpectralAdapter {
 public:
  SpectralAdapter(SvdFactorization base, std::size_t start, std::size_t width)
      : base_(std::move(base)), start_(start), width_(width) {
    if (width_ == 0 || start_ + width_ > base_.rank()) {
      throw InvalidArgument("spectral interval [" + std::to_string(start_) + ", " + std::to_string(start_ + width_) +
                            ") must be non-empty and within [0, " + std::to_string(base_.rank()) + ")");
    }
    block_ = Matrix(width_, width_);
    u_block_ = base_.u.columns(start_, start_ + width_);
    v_block_ = base_.v.columns(start_, start_ + width_);
  }

  const SvdFactorization& base() const noexcept { return base_; }
  std::size_t start() const noexcept { return start_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t rows() const noexcept { return base_.rows(); }
  std::size_t cols() const noexcept { return base_.cols(); }

  Matrix& block() noexcept { return block_; }
  const Matrix& block() const noexcept { return block_; }
  void set_block(Matrix m) {
    if (m.rows() != width_ || m.cols() != width_) throw ShapeError("adapter block must be " + shape_str(width_, width_));
    block_ = std::move(m);
  }

  const Matrix& u_block() const noexcept { return u_block_; }
  const Matrix& v_block() const noexcept { return v_block_; }

  // U (Σ + A) Vᵀ as a dense matrix.
  Matrix effective_weight() const {
    Matrix w = reconstruct(base_);
    w += matmul(matmul(u_block_, block_), v_block_.transposed());
    return w;
  }

  // W·X for X with n rows (one sample per column), evaluated as U((Σ+A)(VᵀX)).
  Matrix forward(const Matrix& x) const {
    if (x.rows() != cols()) throw ShapeError("adapter forward: input has " + std::to_string(x.rows()) + " rows, expected " + std::to_string(cols()));
    Matrix z = matmul_tn(base_.v, x);  // p×B
    return matmul(base_.u, apply_core(z, false));
  }

  // Wᵀ·D for D with m rows, evaluated as V((Σ+A)ᵀ(UᵀD)).
  Matrix backward(const Matrix& d) const {
    if (d.rows() != rows()) throw ShapeError("adapter backward: input has " + std::to_string(d.rows()) + " rows, expected " + std::to_string(rows()));
    Matrix z = matmul_tn(base_.u, d);
    return matmul(base_.v, apply_core(z, true));
  }

  // ∂L/∂M = U_Bᵀ G V_B for G = ∂L/∂W (m×n).
  Matrix grad(const Matrix& g) const {
    if (g.rows() != rows() || g.cols() != cols()) {
      throw ShapeError("adapter grad: gradient is " + shape_str(g.rows(), g.cols()) + ", expected " + shape_str(rows(), cols()));
    }
    return matmul_tn(u_block_, matmul(g, v_block_));
  }

  // Same result for G = D Hᵀ without forming G: (U_Bᵀ D)(V_Bᵀ H)ᵀ.
  Matrix grad_outer(const Matrix& d, const Matrix& h) const {
    const Matrix left = matmul_tn(u_block_, d);   // r×B
    const Matrix right = matmul_tn(v_block_, h);  // r×B
    return matmul(left, right.transposed());
  }

 private:
  static std::string shape_str(std::size_t r, std::size_t c) { return std::to_string(r) + "x" + std::to_string(c); }

  // (Σ + A)·z, or (Σ + A)ᵀ·z when transpose is set; z is p×B.
  Matrix apply_core(const Matrix& z, bool transpose) const {
    Matrix out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const double s = base_.s[i];
      for (std::size_t b = 0; b < z.cols(); ++b) out(i, b) = s * z(i, b);
    }
    for (std::size_t i = 0; i < width_; ++i)
      for (std::size_t j = 0; j < width_; ++j) {
        const double a = transpose ? block_(j, i) : block_(i, j);
        if (a == 0.0) continue;
        for (std::size_t b = 0; b < z.cols(); ++b) out(start_ + i, b) += a * z(start_ + j, b);
      }
    return out;
  }

  const SvdFactorization base_;
  std::size_t start_;
  std::size_t width_;
  Matrix block_;
  Matrix u_block_;
  Matrix v_block_;
};

// ---------------------------------------------------------------------------
// Data and objective

// Inputs x (n×B, one sample per column) with targets y (m×B).
struct Batch {
  Matrix x;
  Matrix y;
};

// Anything that can produce a deterministic batch from a stream seed.
template <class S>
concept BatchSource = requires(const S& s, std::uint64_t seed, std::size_t count) {
  { s.sample(seed, count) } -> std::convertible_to<Batch>;
};

// y = target·x with x ~ N(0, I) drawn from SplitMix64(stream_seed).
class LinearTeacher {
 public:
  explicit LinearTeacher(Matrix target) : target_(std::move(target)) {}

  const Matrix& target() const noexcept { return target_; }

  Batch sample(std::uint64_t stream_seed, std::size_t count) const {
    Matrix x = random_normal_matrix(target_.cols(), count, stream_seed);
    Matrix y = matmul(target_, x);
    return {std::move(x), std::move(y)};
  }

 private:
  Matrix target_;
};

// L(W) = (1/B) Σ_b ‖W x_b − y_b‖²
inline double mse_loss(const Matrix& prediction, const Matrix& y) {
  if (!prediction.same_shape(y)) throw ShapeError("mse: prediction/target shape mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double r = prediction.values()[k] - y.values()[k];
    s += r * r;
  }
  return s / static_cast<double>(y.cols());
}

// Dense ∂L/∂W = (2/B)(WX − Y)Xᵀ for the MSE objective.
inline Matrix mse_weight_gradient(const Matrix& w, const Batch& batch) {
  Matrix r = matmul(w, batch.x) - batch.y;
  r *= 2.0 / static_cast<double>(batch.x.cols());
  return matmul(r, batch.x.transposed());
}

struct ChainEvaluation {
  double loss = 0.0;
  std::vector<Matrix> block_grads;  // one per adapter
};

// Loss of y ≈ W_L ⋯ W_1 x and its gradient w.r.t. every block, by manual
// backpropagation through the factored forward pass.
inline ChainEvaluation evaluate_chain(std::span<const SpectralAdapter> chain, const Batch& batch, bool with_grad = true) {
  if (chain.empty()) throw InvalidArgument("adapter chain is empty");
  std::vector<Matrix> acts;
  acts.reserve(chain.size() + 1);
  acts.push_back(batch.x);
  for (const auto& a : chain) acts.push_back(a.forward(acts.back()));

  ChainEvaluation ev;
  ev.loss = mse_loss(acts.back(), batch.y);
  if (!with_grad) return ev;

  Matrix delta = acts.back() - batch.y;
  delta *= 2.0 / static_cast<double>(batch.x.cols());
  ev.block_grads.resize(chain.size());
  for (std::size_t l = chain.size(); l-- > 0;) {
    ev.block_grads[l] = chain[l].grad_outer(delta, acts[l]);
    if (l > 0) delta = chain[l].backward(delta);
  }
  return ev;
}

// Synthetic regression targets over a frozen base.
struct SyntheticTarget {
  Matrix weight;  // W*
  Matrix block;   // A* on the trainable interval; empty for single-rank targets
};

// W* = W₀ + U_B A* V_Bᵀ on [start, start + width), A* = scale·N(0, 1) from the seed.
inline SyntheticTarget in_block_target(const SvdFactorization& base, std::size_t start, std::size_t width,
                                       double scale, std::uint64_t seed) {
  SpectralAdapter a(base, start, width);
  Matrix block = random_normal_matrix(width, width, derive_seed(seed, "target", 0));
  block *= scale;
  a.set_block(block);
  return {a.effective_weight(), std::move(block)};
}

// W* = W₀ + scale·u_j v_jᵀ for a single rank j.
inline SyntheticTarget single_rank_target(const SvdFactorization& base, std::size_t rank, double scale) {
  if (rank >= base.rank()) throw InvalidArgument("target rank " + std::to_string(rank) + " out of range");
  Matrix w = reconstruct(base);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) += scale * base.u(i, rank) * base.v(j, rank);
  return {std::move(w), Matrix()};
}

// ---------------------------------------------------------------------------
// Training

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t steps = 1;
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer{};
  std::size_t eval_size = 256;  // fixed evaluation batch used for the logged loss

  void validate() const {
    if (steps < 1) throw InvalidArgument("steps must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning rate must be finite and >= 0");
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    if (eval_size < 1) throw InvalidArgument("evaluation size must be >= 1");
  }
};

struct TrainStep {
  std::size_t step;  // 1-based
  double loss;       // evaluation-batch loss after this step's update
  double grad_norm;  // Frobenius norm of the training-batch block gradient(s)
};

struct TrainLog {
  double initial_loss = 0.0;
  std::vector<TrainStep> steps;
  std::vector<Matrix> final_blocks;

  double final_loss() const noexcept { return steps.empty() ? initial_loss : steps.back().loss; }
  const Matrix& final_block() const { return final_blocks.at(0); }
};

inline std::uint64_t train_stream_seed(std::uint64_t seed, std::size_t step) { return derive_seed(seed, "train", step); }
inline std::uint64_t eval_stream_seed(std::uint64_t seed) { return derive_seed(seed, "eval", 0); }

// Trains the blocks of every adapter in `chain` jointly; bases are untouched.
// Deterministic in (initial blocks, source, cfg).
template <BatchSource Source>
TrainLog train_srf(std::span<SpectralAdapter> chain, const Source& source, const TrainConfig& cfg) {
  cfg.validate();
  if (chain.empty()) throw InvalidArgument("adapter chain is empty");
  const Batch eval = source.sample(eval_stream_seed(cfg.seed), cfg.eval_size);

  std::vector<Matrix> m1, m2;
  for (const auto& a : chain) {
    m1.emplace_back(a.width(), a.width());
    m2.emplace_back(a.width(), a.width());
  }

  TrainLog log;
  log.initial_loss = evaluate_chain(chain, eval, false).loss;
  if (!std::isfinite(log.initial_loss)) throw NumericalError("non-finite loss before training");
  log.steps.reserve(cfg.steps);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const Batch batch = source.sample(train_stream_seed(cfg.seed, step), cfg.batch_size);
    const ChainEvaluation ev = evaluate_chain(chain, batch);
    if (!std::isfinite(ev.loss)) throw NumericalError("non-finite training loss at step " + std::to_string(step));

    double g2 = 0.0;
    for (const auto& g : ev.block_grads) g2 += dot(g.values(), g.values());

    for (std::size_t l = 0; l < chain.size(); ++l) {
      auto block = chain[l].block().values();
      const auto grad = ev.block_grads[l].values();
      if (cfg.optimizer.kind == OptimizerKind::Sgd) {
        for (std::size_t k = 0; k < block.size(); ++k) block[k] -= cfg.learning_rate * grad[k];
      } else {
        const auto& o = cfg.optimizer;
        const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
        auto mm = m1[l].values();
        auto vv = m2[l].values();
        for (std::size_t k = 0; k < block.size(); ++k) {
          mm[k] = o.beta1 * mm[k] + (1.0 - o.beta1) * grad[k];
          vv[k] = o.beta2 * vv[k] + (1.0 - o.beta2) * grad[k] * grad[k];
          block[k] -= cfg.learning_rate * (mm[k] / c1) / (std::sqrt(vv[k] / c2) + o.eps);
        }
      }
    }

    const double loss = evaluate_chain(chain, eval, false).loss;
    if (!std::isfinite(loss)) throw NumericalError("non-finite loss at step " + std::to_string(step));
    log.steps.push_back({step, loss, std::sqrt(g2)});
  }
  for (const auto& a : chain) log.final_blocks.push_back(a.block());
  return log;
}

template <BatchSource Source>
TrainLog train_srf(SpectralAdapter& adapter, const Source& source, const TrainConfig& cfg) {
  return train_srf(std::span<SpectralAdapter>(&adapter, 1), source, cfg);
}

// ---------------------------------------------------------------------------
// Gradient verification

// A scalar objective of the effective weight together with its gradient.
struct WeightLoss {
  std::function<double(const Matrix&)> value;
  std::function<Matrix(const Matrix&)> gradient;
};

// max over block entries of |analytic − central difference| / max(1e-12, |central difference|).
inline double finite_diff_check(const SpectralAdapter& adapter, const WeightLoss& loss, double step) {
  if (!(step > 0.0)) throw InvalidArgument("finite-difference step must be > 0");
  const Matrix analytic = adapter.grad(loss.gradient(adapter.effective_weight()));
  SpectralAdapter probe = adapter;
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.block().size(); ++k) {
    const double saved = probe.block().values()[k];
    probe.block().values()[k] = saved + step;
    const double plus = loss.value(probe.effective_weight());
    probe.block().values()[k] = saved - step;
    const double minus = loss.value(probe.effective_weight());
    probe.block().values()[k] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) throw NumericalError("non-finite loss in finite-difference probe");
    const double fd = (plus - minus) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic.values()[k] - fd) / std::max(1e-12, std::abs(fd)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Configuration sweeps

struct SweepRow {
  std::size_t start;
  std::size_t width;
  double final_loss;
};

// One run per width r on the interval [0, r).
template <BatchSource Source>
std::vector<SweepRow> rank_budget_sweep(const SvdFactorization& base, const Source& source,
                                        std::span<const std::size_t> budgets, const TrainConfig& cfg) {
  std::vector<SweepRow> rows;
  for (std::size_t r : budgets) {
    SpectralAdapter a(base, 0, r);
    rows.push_back({0, r, train_srf(a, source, cfg).final_loss()});
  }
  return rows;
}

// One run per start k on the interval [k, k + width).
template <BatchSource Source>
std::vector<SweepRow> block_location_sweep(const SvdFactorization& base, const Source& source,
                                           std::span<const std::size_t> starts, std::size_t width,
                                           const TrainConfig& cfg) {
  std::vector<SweepRow> rows;
  for (std::size_t k : starts) {
    SpectralAdapter a(base, k, width);
    rows.push_back({k, width, train_srf(a, source, cfg).final_loss()});
  }
  return rows;
}

}  // namespace spectra
