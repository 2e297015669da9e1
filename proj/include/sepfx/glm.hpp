#ifndef SEPFX_GLM_HPP
#define SEPFX_GLM_HPP

#include "sepfx/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace sepfx {

enum class Link { Logit, Identity };

struct GlmControl {
    double tolerance = 1e-8;  ///< sup-norm of the score
    int max_iterations = 100;
    double separation_bound = 30.0;  ///< on standardized coefficients
    double fitted_floor = 1e-10;
};

template <typename Scalar>
struct GlmResult {
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    Vector coef;
    bool converged = false;
    int iterations = 0;
    Scalar loglik = 0;
    Scalar max_score = 0;
    Scalar sigma = 0;  ///< residual sd (identity link)
};

template <typename Scalar>
Scalar log1p_exp(Scalar x) {
    using std::exp;
    using std::log1p;
    return x > 0 ? x + log1p(exp(-x)) : log1p(exp(x));
}

template <typename Scalar>
Scalar expit(Scalar x) {
    using std::exp;
    return x >= 0 ? Scalar(1) / (1 + exp(-x)) : exp(x) / (1 + exp(x));
}

template <typename Scalar>
Scalar bernoulli_loglik(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& y,
                        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& eta) {
    Scalar ll = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) ll += y[i] * eta[i] - log1p_exp(eta[i]);
    return ll;
}

namespace detail {

template <typename Derived>
void check_rank(const Eigen::MatrixBase<Derived>& X) {
    Eigen::ColPivHouseholderQR<typename Derived::PlainObject> qr(X);
    if (qr.rank() < X.cols())
        throw RankDeficient("design matrix has rank " + std::to_string(qr.rank()) + " < " +
                            std::to_string(X.cols()) + " columns");
}

template <typename Scalar>
void check_separation(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& X,
                      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& coef,
                      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& eta, const GlmControl& ctl) {
    using std::abs;
    using std::sqrt;
    const Eigen::Index n = X.rows();
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const Scalar mean = X.col(j).mean();
        const Scalar sd = sqrt((X.col(j).array() - mean).square().sum() / Scalar(n));
        const Scalar scale = sd > Scalar(1e-12) ? sd : Scalar(1);
        if (abs(coef[j] * scale) > Scalar(ctl.separation_bound))
            throw Separation("coefficient " + std::to_string(j) + " diverges (standardized |beta| > " +
                             std::to_string(ctl.separation_bound) + ")");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar p = expit(eta[i]);
        if (p < Scalar(ctl.fitted_floor) || p > 1 - Scalar(ctl.fitted_floor))
            throw Separation("fitted probability numerically 0 or 1");
    }
}

}  // namespace detail

/// Maximum likelihood GLM fit. Logit: safeguarded Newton-Raphson started at
/// zero. Identity: least squares via column-pivoted QR.
template <typename Scalar>
GlmResult<Scalar> fit_glm(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& X,
                          const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& y, Link link,
                          const GlmControl& ctl = GlmControl()) {
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using std::abs;
    using std::log;
    using std::sqrt;

    if (X.rows() == 0) throw NoRiskSet("no rows in the risk set");
    if (X.rows() < X.cols())
        throw RankDeficient(std::to_string(X.rows()) + " rows for " + std::to_string(X.cols()) + " coefficients");
    detail::check_rank(X);

    GlmResult<Scalar> out;
    const Scalar n = Scalar(X.rows());
    if (link == Link::Identity) {
        out.coef = X.colPivHouseholderQr().solve(y);
        const Vector r = y - X * out.coef;
        const Scalar rss = r.squaredNorm();
        out.sigma = sqrt(rss / n);
        const Scalar s2 = rss > 0 ? rss / n : Scalar(1e-300);
        out.loglik = -n / 2 * (log(2 * Scalar(M_PI) * s2) + 1);
        out.max_score = (X.transpose() * r).cwiseAbs().maxCoeff();
        out.converged = true;
        return out;
    }

    Vector beta = Vector::Zero(X.cols());
    Vector eta = X * beta;
    Scalar ll = bernoulli_loglik<Scalar>(y, eta);
    // the score cannot drop below rounding noise in low precision
    const Scalar tol = std::max(Scalar(ctl.tolerance), 64 * Eigen::NumTraits<Scalar>::epsilon() * n);
    for (int it = 0; it <= ctl.max_iterations; ++it) {
        Vector mu(eta.size()), w(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            mu[i] = expit(eta[i]);
            w[i] = mu[i] * (1 - mu[i]);
        }
        const Vector score = X.transpose() * (y - mu);
        out.max_score = score.cwiseAbs().maxCoeff();
        out.iterations = it;
        if (out.max_score < tol) {
            out.converged = true;
            break;
        }
        if (it == ctl.max_iterations) break;
        const Matrix info = X.transpose() * w.asDiagonal() * X;
        const Vector step = info.ldlt().solve(score);
        Scalar t = 1;
        Vector cand = beta + step;
        Vector cand_eta = X * cand;
        Scalar cand_ll = bernoulli_loglik<Scalar>(y, cand_eta);
        for (int h = 0; h < 30 && !(cand_ll >= ll - Scalar(1e-12) * (1 + abs(ll))); ++h) {
            t /= 2;
            cand = beta + t * step;
            cand_eta = X * cand;
            cand_ll = bernoulli_loglik<Scalar>(y, cand_eta);
        }
        beta = cand;
        eta = cand_eta;
        ll = cand_ll;
    }
    out.coef = beta;
    out.loglik = ll;
    detail::check_separation<Scalar>(X, beta, eta, ctl);
    return out;
}

}  // namespace sepfx

#endif  // SEPFX_GLM_HPP
