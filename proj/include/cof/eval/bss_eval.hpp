#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <iostream>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "cof/audio/stft.hpp"

namespace cof::eval {

// Stand-in for +/- infinity so CSV output stays numeric.
inline constexpr double kInfiniteDb = 1e9;

struct BssScores {
  double sdr = 0, sir = 0, sar = 0;
};

// estimate (zero-padded by filter_len - 1) = target + interf + artif
struct BssDecomposition {
  std::vector<double> target, interf, artif;
};

namespace detail {

inline int fft_size(std::int64_t n) {
  int s = 1;
  while (s < n) s <<= 1;
  return s;
}

// 10 log10(num / den), with the sentinel for empty numerators and for
// residuals more than 200 dB below the signal.
inline double ratio_db(double num, double den) {
  if (!(num > 0)) return -kInfiniteDb;
  if (den <= num * 1e-20) return kInfiniteDb;
  return 10.0 * std::log10(num / den);
}

inline double sq(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v * v;
  return s;
}

}  // namespace detail

// Least-squares projections of estimates onto time-shifted references
// (shifts 0..filter_len-1). Factorisations are computed once per reference set.
class BssEvaluator {
 public:
  BssEvaluator(std::vector<std::vector<double>> refs, int filter_len)
      : refs_(std::move(refs)), L_(filter_len) {
    if (refs_.empty()) throw InvalidInput("bss_eval: no references");
    if (L_ < 1) throw InvalidInput("bss_eval: filter length must be positive");
    T_ = static_cast<std::int64_t>(refs_[0].size());
    for (auto& r : refs_)
      if (static_cast<std::int64_t>(r.size()) != T_) throw InvalidInput("bss_eval: references differ in length");
    if (T_ < 1) throw InvalidInput("bss_eval: empty references");
    N_ = refs_.size();
    nfft_ = detail::fft_size(T_ + L_);
    plan_ = std::make_unique<audio::detail::FftPlan>(nfft_);
    for (auto& r : refs_) spec_.push_back(transform(r));
    // Cross-correlations c_ik(l) = sum_u r_i[u] r_k[u + l], |l| < L.
    const std::int64_t n = static_cast<std::int64_t>(N_) * L_;
    Eigen::MatrixXd G(n, n);
    for (std::size_t i = 0; i < N_; ++i)
      for (std::size_t k = 0; k < N_; ++k) {
        const auto c = correlate(spec_[i], spec_[k]);
        for (int a = 0; a < L_; ++a)
          for (int b = 0; b < L_; ++b) {
            const int l = a - b;
            G(static_cast<std::int64_t>(i) * L_ + a, static_cast<std::int64_t>(k) * L_ + b) = c[(l + nfft_) % nfft_];
          }
      }
    all_ = factor(G, "all references");
    for (std::size_t j = 0; j < N_; ++j)
      single_.push_back(factor(G.block(static_cast<std::int64_t>(j) * L_, static_cast<std::int64_t>(j) * L_, L_, L_),
                               "reference " + std::to_string(j)));
  }

  std::size_t sources() const { return N_; }
  bool regularized() const { return regularized_; }

  BssScores score(std::size_t j, const std::vector<double>& est, BssDecomposition* out = nullptr) const {
    if (j >= N_) throw InvalidInput("bss_eval: source index out of range");
    if (static_cast<std::int64_t>(est.size()) != T_)
      throw InvalidInput("bss_eval: estimate has " + std::to_string(est.size()) + " samples, references have " +
                         std::to_string(T_));
    const auto E = transform(est);
    std::vector<std::vector<double>> xc;
    for (auto& R : spec_) xc.push_back(correlate(R, E));
    Eigen::VectorXd d_all(static_cast<std::int64_t>(N_) * L_), d_one(L_);
    for (std::size_t i = 0; i < N_; ++i)
      for (int a = 0; a < L_; ++a) d_all(static_cast<std::int64_t>(i) * L_ + a) = xc[i][a];
    for (int a = 0; a < L_; ++a) d_one(a) = xc[j][a];
    const Eigen::VectorXd c_all = all_.solve(d_all), c_one = single_[j].solve(d_one);
    std::vector<Eigen::VectorXd> coeffs;
    for (std::size_t i = 0; i < N_; ++i) coeffs.push_back(c_all.segment(static_cast<std::int64_t>(i) * L_, L_));
    const auto p_all = synthesize(coeffs);
    std::vector<Eigen::VectorXd> only(N_, Eigen::VectorXd::Zero(L_));
    only[j] = c_one;
    const auto p_one = synthesize(only);
    const std::size_t M = static_cast<std::size_t>(T_ + L_ - 1);
    BssDecomposition d;
    d.target = p_one;
    d.interf.resize(M);
    d.artif.resize(M);
    for (std::size_t t = 0; t < M; ++t) {
      d.interf[t] = p_all[t] - p_one[t];
      d.artif[t] = (t < est.size() ? est[t] : 0.0) - p_all[t];
    }
    std::vector<double> noise(M), ti(M);
    for (std::size_t t = 0; t < M; ++t) {
      noise[t] = d.interf[t] + d.artif[t];
      ti[t] = d.target[t] + d.interf[t];
    }
    const double st = detail::sq(d.target);
    BssScores s;
    s.sdr = detail::ratio_db(st, detail::sq(noise));
    s.sir = detail::ratio_db(st, detail::sq(d.interf));
    s.sar = detail::ratio_db(detail::sq(ti), detail::sq(d.artif));
    if (out) *out = std::move(d);
    return s;
  }

 private:
  using Spectrum = std::vector<std::complex<double>>;

  Spectrum transform(const std::vector<double>& x) const {
    double* in = plan_->real();
    std::fill(in, in + nfft_, 0.0);
    std::copy(x.begin(), x.end(), in);
    plan_->forward();
    Spectrum s(static_cast<std::size_t>(nfft_ / 2 + 1));
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = {plan_->spectrum()[k][0], plan_->spectrum()[k][1]};
    return s;
  }

  // Circular sum_u a[u] b[u + l] for every lag l.
  std::vector<double> correlate(const Spectrum& A, const Spectrum& B) const {
    for (std::size_t k = 0; k < A.size(); ++k) {
      const auto v = std::conj(A[k]) * B[k];
      plan_->spectrum()[k][0] = v.real();
      plan_->spectrum()[k][1] = v.imag();
    }
    plan_->inverse();
    std::vector<double> out(plan_->real(), plan_->real() + nfft_);
    for (auto& v : out) v /= nfft_;
    return out;
  }

  // sum_i (c_i * r_i), first T + L - 1 samples.
  std::vector<double> synthesize(const std::vector<Eigen::VectorXd>& coeffs) const {
    Spectrum acc(static_cast<std::size_t>(nfft_ / 2 + 1), {0.0, 0.0});
    for (std::size_t i = 0; i < N_; ++i) {
      if (coeffs[i].isZero(0.0)) continue;
      std::vector<double> c(coeffs[i].data(), coeffs[i].data() + L_);
      const auto C = transform(c);
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += C[k] * spec_[i][k];
    }
    for (std::size_t k = 0; k < acc.size(); ++k) {
      plan_->spectrum()[k][0] = acc[k].real();
      plan_->spectrum()[k][1] = acc[k].imag();
    }
    plan_->inverse();
    std::vector<double> out(plan_->real(), plan_->real() + (T_ + L_ - 1));
    for (auto& v : out) v /= nfft_;
    return out;
  }

  Eigen::LDLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& G, const std::string& what) {
    Eigen::LDLT<Eigen::MatrixXd> f(G);
    const auto D = f.vectorD();
    const double top = std::max(D.cwiseAbs().maxCoeff(), 1e-300);
    if (f.info() == Eigen::Success && D.minCoeff() > 1e-12 * top) return f;
    regularized_ = true;
    std::cerr << "warning: bss_eval: Gram matrix of " << what
              << " is rank deficient; using a regularized solve\n";
    const double lambda = 1e-9 * std::max(G.trace() / static_cast<double>(G.rows()), 1e-300);
    Eigen::MatrixXd R = G;
    R.diagonal().array() += lambda;
    return Eigen::LDLT<Eigen::MatrixXd>(R);
  }

  std::vector<std::vector<double>> refs_;
  int L_;
  std::int64_t T_ = 0;
  std::size_t N_ = 0;
  int nfft_ = 0;
  std::unique_ptr<audio::detail::FftPlan> plan_;
  std::vector<Spectrum> spec_;
  Eigen::LDLT<Eigen::MatrixXd> all_;
  std::vector<Eigen::LDLT<Eigen::MatrixXd>> single_;
  bool regularized_ = false;
};

// Estimate n is scored against reference n.
inline std::vector<BssScores> bss_eval(const std::vector<std::vector<double>>& estimates,
                                       const std::vector<std::vector<double>>& references, int filter_len = 512) {
  if (estimates.size() != references.size())
    throw InvalidInput("bss_eval: " + std::to_string(estimates.size()) + " estimates for " +
                       std::to_string(references.size()) + " references");
  BssEvaluator ev(references, filter_len);
  std::vector<BssScores> out;
  for (std::size_t j = 0; j < estimates.size(); ++j) out.push_back(ev.score(j, estimates[j]));
  return out;
}

}  // namespace cof::eval
