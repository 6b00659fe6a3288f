#include <cmath>
#include <limits>
#include <sstream>

#include "pathenv/detail/gls.hpp"
#include "pathenv/detail/profile.hpp"
#include "pathenv/error.hpp"
#include "pathenv/mixed_model.hpp"

namespace pathenv {

namespace detail {

std::optional<GlsFactor> factor_gls(const Eigen::MatrixXd& S, const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& y, FactorFailure* failure,
                                    double max_condition) {
    auto fail = [&](FactorFailure why) -> std::optional<GlsFactor> {
        if (failure) *failure = why;
        return std::nullopt;
    };
    if (failure) *failure = FactorFailure::none;
    GlsFactor f;
    f.llt.compute(S);
    if (f.llt.info() != Eigen::Success) return fail(FactorFailure::not_pd);
    const auto& Lmat = f.llt.matrixLLT();
    double dmin = std::numeric_limits<double>::infinity();
    double dmax = 0.0;
    f.logdet_S = 0.0;
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
        const double d = Lmat(i, i);
        if (!(d > 0.0) || !std::isfinite(d)) return fail(FactorFailure::not_pd);
        dmin = std::min(dmin, d);
        dmax = std::max(dmax, d);
        f.logdet_S += 2.0 * std::log(d);
    }
    if ((dmax / dmin) * (dmax / dmin) > max_condition) return fail(FactorFailure::ill_conditioned);

    f.SinvX = f.llt.solve(X);
    f.xsx = X.transpose() * f.SinvX;
    Eigen::LLT<Eigen::Matrix2d> xllt(f.xsx);
    if (xllt.info() != Eigen::Success) return fail(FactorFailure::design_degenerate);
    const double l0 = xllt.matrixLLT()(0, 0);
    const double l1 = xllt.matrixLLT()(1, 1);
    if (!(l0 > 0.0 && l1 > 0.0) || (l0 * l0 + l1 * l1) / std::min(l0 * l0, l1 * l1) > 1e14) {
        return fail(FactorFailure::design_degenerate);
    }
    f.logdet_xsx = 2.0 * (std::log(l0) + std::log(l1));
    f.xsx_inv = xllt.solve(Eigen::Matrix2d::Identity());
    f.beta = xllt.solve(f.SinvX.transpose() * y);
    f.resid = y - X * f.beta;
    f.Py = f.llt.solve(f.resid);
    f.yPy = f.resid.dot(f.Py);
    return f;
}

Eigen::MatrixXd projection_matrix(const GlsFactor& f) {
    const Eigen::Index n = f.SinvX.rows();
    Eigen::MatrixXd P = f.llt.solve(Eigen::MatrixXd::Identity(n, n));
    P.noalias() -= f.SinvX * f.xsx_inv * f.SinvX.transpose();
    return P;
}

Eigen::MatrixXd assemble_covariance(double c0, double c_x, double c_z, double c_xz, const Eigen::MatrixXd& BBt,
                                    const Eigen::MatrixXd& Kz, const Eigen::MatrixXd& Kxz) {
    const Eigen::Index n = Kz.rows();
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
    if (c_x != 0.0) S += c_x * BBt;
    if (c_z != 0.0) S += c_z * Kz;
    if (c_xz != 0.0) S += c_xz * Kxz;
    S.diagonal().array() += c0;
    return S;
}

TraceTerms trace_terms(const Eigen::MatrixXd& P, const Eigen::VectorXd& Py,
                       const std::vector<const Eigen::MatrixXd*>& derivs) {
    const Eigen::Index k = static_cast<Eigen::Index>(derivs.size());
    TraceTerms t;
    t.tr.resize(k);
    t.quad.resize(k);
    t.cross.resize(k, k);
    std::vector<Eigen::MatrixXd> A(static_cast<size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::MatrixXd* G = derivs[static_cast<size_t>(i)];
        if (G == nullptr) {  // identity
            A[static_cast<size_t>(i)] = P;
            t.quad(i) = Py.squaredNorm();
        } else {
            A[static_cast<size_t>(i)].noalias() = P * (*G);
            t.quad(i) = Py.dot(*G * Py);
        }
        t.tr(i) = A[static_cast<size_t>(i)].trace();
    }
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = i; j < k; ++j) {
            // tr(A_i A_j) = sum_kl A_i(k,l) A_j(l,k)
            const double v = (A[static_cast<size_t>(i)].array() * A[static_cast<size_t>(j)].transpose().array()).sum();
            t.cross(i, j) = v;
            t.cross(j, i) = v;
        }
    }
    return t;
}

}  // namespace detail

namespace {

const GramSet& grams_at(const GramSet& grams, double rho, GramSet& storage) {
    if (rho == grams.rho) return grams;
    storage = grams.with_rho(rho);
    return storage;
}

[[noreturn]] void raise_failure(detail::FactorFailure why, const VarianceParams& p, const SplineSystem& s,
                                const GramSet& g) {
    if (why == detail::FactorFailure::design_degenerate) {
        throw DesignDegenerate("X' Sigma^-1 X is singular");
    }
    const double n = static_cast<double>(g.n());
    const double contrib[4] = {p.sigma2, p.tau_x * s.BBt.trace() / n, p.tau_z * g.Kz.trace() / n,
                               p.tau_xz * g.Kxz.trace() / n};
    const char* names[4] = {"error variance", "spline component tau_x", "pathway component tau_z",
                            "interaction component tau_xz"};
    int dom = 0;
    for (int i = 1; i < 4; ++i) {
        if (contrib[i] > contrib[dom]) dom = i;
    }
    std::ostringstream msg;
    msg << "covariance is numerically singular (dominant term: " << names[dom] << ")";
    throw IllConditioned(msg.str());
}

void check_dims(const Eigen::VectorXd* y, const SplineSystem& system, const GramSet& grams) {
    require(grams.n() == system.n(), "spline system and Gram matrices disagree in size");
    if (y) require(y->size() == system.n(), "response length does not match the design");
}

}  // namespace

VarianceParams VarianceParams::from_lambda(double sigma2, const std::array<double, 3>& lambda_inv, double rho) {
    VarianceParams p;
    p.sigma2 = sigma2;
    p.tau_x = lambda_inv[0] * sigma2;
    p.tau_z = lambda_inv[1] * sigma2;
    p.tau_xz = lambda_inv[2] * sigma2;
    p.rho = rho;
    return p;
}

ProjectionSet covariance(const VarianceParams& params, const SplineSystem& system, const GramSet& grams_in) {
    check_dims(nullptr, system, grams_in);
    require(params.sigma2 > 0.0, "covariance: sigma2 must be positive");
    require(params.tau_x >= 0.0 && params.tau_z >= 0.0 && params.tau_xz >= 0.0,
            "covariance: variance components must be non-negative");
    GramSet storage;
    const GramSet& grams = grams_at(grams_in, params.rho, storage);

    ProjectionSet out;
    out.Sigma = detail::assemble_covariance(params.sigma2, params.tau_x, params.tau_z, params.tau_xz,
                                            system.BBt, grams.Kz, grams.Kxz);
    out.Sigma_lambda = out.Sigma / params.sigma2;
    detail::FactorFailure why{};
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(system.n());
    auto f = detail::factor_gls(out.Sigma, system.X, zero, &why);
    if (!f) raise_failure(why, params, system, grams);
    out.P = detail::projection_matrix(*f);
    out.P_lambda = params.sigma2 * out.P;
    return out;
}

Eigen::VectorXd Effects::fitted(const SplineSystem& system) const {
    Eigen::VectorXd f = system.X * beta;
    if (r_x.size() > 0) f += system.B * r_x;
    if (r_z.size() > 0) f += r_z;
    if (r_xz.size() > 0) f += r_xz;
    return f;
}

Effects blup(const Eigen::VectorXd& y, const VarianceParams& params, const SplineSystem& system,
             const GramSet& grams_in) {
    check_dims(&y, system, grams_in);
    require(params.sigma2 > 0.0, "blup: sigma2 must be positive");
    require(params.tau_x >= 0.0 && params.tau_z >= 0.0 && params.tau_xz >= 0.0,
            "blup: variance components must be non-negative");
    GramSet storage;
    const GramSet& grams = grams_at(grams_in, params.rho, storage);
    const Eigen::Index n = system.n();
    const Eigen::Index m = system.B.cols();

    const Eigen::MatrixXd Sigma = detail::assemble_covariance(params.sigma2, params.tau_x, params.tau_z,
                                                              params.tau_xz, system.BBt, grams.Kz, grams.Kxz);
    detail::FactorFailure why{};
    auto f0 = detail::factor_gls(Sigma, system.X, y, &why, std::numeric_limits<double>::infinity());
    if (!f0) {
        if (why == detail::FactorFailure::design_degenerate) throw DesignDegenerate("X' Sigma^-1 X is singular");
        raise_failure(why, params, system, grams);
    }

    Effects e;
    e.beta = f0->beta;
    e.beta_cov = f0->xsx_inv;
    e.r_x = Eigen::VectorXd::Zero(m);
    e.r_z = Eigen::VectorXd::Zero(n);
    e.r_xz = Eigen::VectorXd::Zero(n);

    // Stage 1: (B' D1^-1 B + tau_x^-1 I)^-1 B' D1^-1 E = tau_x B' (D1 + tau_x BB')^-1 E, and D1 + tau_x BB' = Sigma.
    const Eigen::VectorXd E = f0->resid;
    if (params.tau_x > 0.0) e.r_x = params.tau_x * (system.B.transpose() * f0->llt.solve(E));
    Eigen::VectorXd e1 = E - system.B * e.r_x;

    // Stage 2: tau_z Kz (D2 + tau_z Kz)^-1 e1 with D2 + tau_z Kz = D1.
    Eigen::VectorXd e2 = e1;
    if (params.tau_z > 0.0) {
        const Eigen::MatrixXd D1 = detail::assemble_covariance(params.sigma2, 0.0, params.tau_z, params.tau_xz,
                                                               system.BBt, grams.Kz, grams.Kxz);
        Eigen::LLT<Eigen::MatrixXd> llt(D1);
        Eigen::VectorXd w = (llt.info() == Eigen::Success) ? Eigen::VectorXd(llt.solve(e1))
                                                           : Eigen::VectorXd(f0->llt.solve(E));
        e.r_z = params.tau_z * (grams.Kz * w);
        e2 = e1 - e.r_z;
    }

    // Stage 3: tau_xz Kxz (D3 + tau_xz Kxz)^-1 e2 with D3 + tau_xz Kxz = D2.
    if (params.tau_xz > 0.0) {
        Eigen::MatrixXd D2 = params.tau_xz * grams.Kxz;
        D2.diagonal().array() += params.sigma2;
        Eigen::LLT<Eigen::MatrixXd> llt(D2);
        Eigen::VectorXd w = (llt.info() == Eigen::Success) ? Eigen::VectorXd(llt.solve(e2))
                                                           : Eigen::VectorXd(f0->llt.solve(E));
        e.r_xz = params.tau_xz * (grams.Kxz * w);
    }
    return e;
}

BlockSystem mixed_model_equations(const Eigen::VectorXd& y, const VarianceParams& params,
                                  const SplineSystem& system, const GramSet& grams_in) {
    check_dims(&y, system, grams_in);
    GramSet storage;
    const GramSet& grams = grams_at(grams_in, params.rho, storage);
    const Eigen::Index n = system.n();
    const Eigen::Index m = system.B.cols();
    const Eigen::Index dim = 2 + m + 2 * n;

    Eigen::MatrixXd T(n, dim);
    T << system.X, system.B, Eigen::MatrixXd::Identity(n, n), Eigen::MatrixXd::Identity(n, n);

    BlockSystem bs;
    bs.A = Eigen::MatrixXd::Zero(dim, dim);
    bs.rhs = Eigen::VectorXd::Zero(dim);
    const double s2 = params.sigma2;

    bs.A.topRows(2) = system.X.transpose() * T;
    bs.rhs.head(2) = system.X.transpose() * y;

    bs.A.middleRows(2, m) = params.tau_x * (system.B.transpose() * T);
    bs.A.block(2, 2, m, m).diagonal().array() += s2;
    bs.rhs.segment(2, m) = params.tau_x * (system.B.transpose() * y);

    bs.A.middleRows(2 + m, n) = params.tau_z * (grams.Kz * T);
    bs.A.block(2 + m, 2 + m, n, n).diagonal().array() += s2;
    bs.rhs.segment(2 + m, n) = params.tau_z * (grams.Kz * y);

    bs.A.middleRows(2 + m + n, n) = params.tau_xz * (grams.Kxz * T);
    bs.A.block(2 + m + n, 2 + m + n, n, n).diagonal().array() += s2;
    bs.rhs.segment(2 + m + n, n) = params.tau_xz * (grams.Kxz * y);
    return bs;
}

Eigen::VectorXd stack_effects(const Effects& e) {
    Eigen::VectorXd u(2 + e.r_x.size() + e.r_z.size() + e.r_xz.size());
    u << e.beta, e.r_x, e.r_z, e.r_xz;
    return u;
}

double reml_loglik(const Eigen::VectorXd& y, const VarianceParams& params, const SplineSystem& system,
                   const GramSet& grams_in) {
    check_dims(&y, system, grams_in);
    GramSet storage;
    const GramSet& grams = grams_at(grams_in, params.rho, storage);
    const Eigen::MatrixXd S = detail::assemble_covariance(params.sigma2, params.tau_x, params.tau_z, params.tau_xz,
                                                          system.BBt, grams.Kz, grams.Kxz);
    detail::FactorFailure why{};
    auto f = detail::factor_gls(S, system.X, y, &why);
    if (!f) raise_failure(why, params, system, grams);
    return -0.5 * f->logdet_S - 0.5 * f->logdet_xsx - 0.5 * f->yPy;
}

namespace detail {

namespace {

// Scatters trace terms computed for a subset back into full-length arrays.
void scatter(const TraceTerms& t, const std::vector<int>& idx, Eigen::VectorXd& tr, Eigen::VectorXd& quad,
             Eigen::MatrixXd& cross) {
    for (size_t a = 0; a < idx.size(); ++a) {
        tr(idx[a]) = t.tr(static_cast<Eigen::Index>(a));
        quad(idx[a]) = t.quad(static_cast<Eigen::Index>(a));
        for (size_t b = 0; b < idx.size(); ++b) {
            cross(idx[a], idx[b]) = t.cross(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        }
    }
}

}  // namespace

ScoreInfo reml_score_info_subset(const Eigen::VectorXd& y, const VarianceParams& params,
                                 const SplineSystem& system, const GramSet& grams_in,
                                 const std::array<bool, 5>& need) {
    check_dims(&y, system, grams_in);
    GramSet storage;
    const GramSet& grams = grams_at(grams_in, params.rho, storage);
    const Eigen::MatrixXd S = assemble_covariance(params.sigma2, params.tau_x, params.tau_z, params.tau_xz,
                                                  system.BBt, grams.Kz, grams.Kxz);
    FactorFailure why{};
    auto f = factor_gls(S, system.X, y, &why);
    if (!f) raise_failure(why, params, system, grams);
    const Eigen::MatrixXd P = projection_matrix(*f);
    Eigen::MatrixXd dS_drho;
    if (need[th_rho]) dS_drho = params.tau_z * grams.dKz_drho + params.tau_xz * grams.dKxz_drho;
    const Eigen::MatrixXd* all[5] = {nullptr, &system.BBt, &grams.Kz, &grams.Kxz, &dS_drho};
    std::vector<const Eigen::MatrixXd*> derivs;
    std::vector<int> idx;
    for (int i = 0; i < kRemlParams; ++i) {
        if (need[static_cast<size_t>(i)]) {
            derivs.push_back(all[i]);
            idx.push_back(i);
        }
    }
    Eigen::VectorXd tr = Eigen::VectorXd::Zero(kRemlParams);
    Eigen::VectorXd quad = Eigen::VectorXd::Zero(kRemlParams);
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(kRemlParams, kRemlParams);
    scatter(trace_terms(P, f->Py, derivs), idx, tr, quad, cross);

    ScoreInfo out;
    out.loglik = -0.5 * f->logdet_S - 0.5 * f->logdet_xsx - 0.5 * f->yPy;
    out.score = -0.5 * tr + 0.5 * quad;
    out.info = 0.5 * cross;
    return out;
}

}  // namespace detail

ScoreInfo reml_score_info(const Eigen::VectorXd& y, const VarianceParams& params, const SplineSystem& system,
                          const GramSet& grams) {
    return detail::reml_score_info_subset(y, params, system, grams, {true, true, true, true, true});
}

namespace {

struct ProfilePieces {
    std::optional<detail::GlsFactor> f;
    double loglik = 0.0;
    double sigma2_hat = 0.0;
};

ProfilePieces profile_value(const Eigen::VectorXd& y, const std::array<double, 3>& li, const SplineSystem& system,
                            const GramSet& grams, detail::FactorFailure* why) {
    ProfilePieces out;
    const Eigen::MatrixXd S = detail::assemble_covariance(1.0, li[0], li[1], li[2], system.BBt, grams.Kz, grams.Kxz);
    out.f = detail::factor_gls(S, system.X, y, why);
    if (!out.f) return out;
    const double dof = static_cast<double>(system.n() - kFixedEffects);
    if (!(out.f->yPy > 0.0) || out.f->resid.norm() <= 1e-10 * y.norm()) {
        throw DegenerateResponse("response lies in the column space of X");
    }
    out.sigma2_hat = out.f->yPy / dof;
    out.loglik = -0.5 * out.f->logdet_S - 0.5 * out.f->logdet_xsx - 0.5 * dof * std::log(out.f->yPy);
    return out;
}

}  // namespace

double preml_loglik(const Eigen::VectorXd& y, const std::array<double, 3>& lambda_inv, double rho,
                    const SplineSystem& system, const GramSet& grams_in) {
    check_dims(&y, system, grams_in);
    for (double v : lambda_inv) require(v >= 0.0, "preml: lambda^-1 must be non-negative");
    GramSet storage;
    const GramSet& grams = grams_at(grams_in, rho, storage);
    detail::FactorFailure why{};
    auto pieces = profile_value(y, lambda_inv, system, grams, &why);
    if (!pieces.f) raise_failure(why, VarianceParams::from_lambda(1.0, lambda_inv, rho), system, grams);
    return pieces.loglik;
}

namespace detail {

ProfileResult preml_profile_subset(const Eigen::VectorXd& y, const std::array<double, 3>& lambda_inv, double rho,
                                   const SplineSystem& system, const GramSet& grams_in,
                                   const std::array<bool, 4>& need) {
    check_dims(&y, system, grams_in);
    for (double v : lambda_inv) require(v >= 0.0, "preml: lambda^-1 must be non-negative");
    require(rho > 0.0, "preml: rho must be positive");
    GramSet storage;
    const GramSet& grams = grams_at(grams_in, rho, storage);
    FactorFailure why{};
    auto pieces = profile_value(y, lambda_inv, system, grams, &why);
    if (!pieces.f) raise_failure(why, VarianceParams::from_lambda(1.0, lambda_inv, rho), system, grams);

    const auto& f = *pieces.f;
    const Eigen::MatrixXd P = projection_matrix(f);
    Eigen::MatrixXd dS_drho;
    if (need[3]) dS_drho = lambda_inv[1] * grams.dKz_drho + lambda_inv[2] * grams.dKxz_drho;
    const Eigen::MatrixXd* all[4] = {&system.BBt, &grams.Kz, &grams.Kxz, &dS_drho};
    std::vector<const Eigen::MatrixXd*> derivs;
    std::vector<int> idx;
    for (int i = 0; i < 4; ++i) {
        if (need[static_cast<size_t>(i)]) {
            derivs.push_back(all[i]);
            idx.push_back(i);
        }
    }
    Eigen::VectorXd tr = Eigen::VectorXd::Zero(4);
    Eigen::VectorXd quad = Eigen::VectorXd::Zero(4);
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(4, 4);
    scatter(trace_terms(P, f.Py, derivs), idx, tr, quad, cross);

    const double nq = static_cast<double>(system.n() - kFixedEffects);
    ProfileResult out;
    out.sigma2_hat = pieces.sigma2_hat;
    out.loglik = pieces.loglik;
    out.var_sigma2 = 2.0 * out.sigma2_hat * out.sigma2_hat * P.trace() / (nq * nq);
    out.score = -0.5 * tr + 0.5 * quad / out.sigma2_hat;
    out.info = ((nq - 2.0) * cross - tr * tr.transpose()) / (2.0 * nq);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            if (!need[static_cast<size_t>(i)] || !need[static_cast<size_t>(j)]) out.info(i, j) = 0.0;
        }
    }
    return out;
}

}  // namespace detail

ProfileResult preml_profile(const Eigen::VectorXd& y, const std::array<double, 3>& lambda_inv, double rho,
                            const SplineSystem& system, const GramSet& grams) {
    return detail::preml_profile_subset(y, lambda_inv, rho, system, grams, {true, true, true, true});
}

}  // namespace pathenv
