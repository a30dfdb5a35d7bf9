// LSMR (Fong & Saunders) for min ||A x - b||_2 with zero damping.

#include <cmath>
#include <limits>
#include <tuple>

#include "gradleak/linalg.hpp"

namespace gradleak {

namespace {

// Stable Givens rotation: returns (c, s, r) with [c s; -s c] [a; b] = [r; 0].
std::tuple<double, double, double> SymOrtho(double a, double b) {
  if (b == 0.0) return {a >= 0.0 ? 1.0 : -1.0, 0.0, std::abs(a)};
  if (a == 0.0) return {0.0, b >= 0.0 ? 1.0 : -1.0, std::abs(b)};
  if (std::abs(b) > std::abs(a)) {
    const double tau = a / b;
    const double s = (b >= 0.0 ? 1.0 : -1.0) / std::sqrt(1.0 + tau * tau);
    return {s * tau, s, b / s};
  }
  const double tau = b / a;
  const double c = (a >= 0.0 ? 1.0 : -1.0) / std::sqrt(1.0 + tau * tau);
  return {c, c * tau, a / c};
}

}  // namespace

LsmrResult LsmrSolve(const CsrMatrix& a, const Vector& b, const LsmrOptions& opts) {
  if (b.size() != a.rows()) throw Error(ErrorCode::kShapeMismatch, "rhs length differs from rows");
  if (!b.allFinite()) throw Error(ErrorCode::kNonFinite, "rhs contains NaN or Inf");
  const std::int64_t max_iter = opts.max_iter > 0 ? opts.max_iter : 10 * std::max<std::int64_t>(a.cols(), 1);
  if (max_iter < 1) throw Error(ErrorCode::kInvalidArgument, "max_iter must be at least 1");

  const auto n = a.cols();
  LsmrResult out;
  out.solution = Vector::Zero(n);
  Vector& x = out.solution;

  Vector u = b;
  const double normb = b.norm();
  double beta = normb;
  Vector v(n);
  double alpha = 0.0;
  if (beta > 0.0) {
    u /= beta;
    a.MultiplyTransposed(u, v);
    alpha = v.norm();
  } else {
    v.setZero();
  }
  if (alpha > 0.0) v /= alpha;

  double zetabar = alpha * beta;
  double alphabar = alpha;
  double rho = 1.0;
  double rhobar = 1.0;
  double cbar = 1.0;
  double sbar = 0.0;
  Vector h = v;
  Vector hbar = Vector::Zero(n);

  double betadd = beta;
  double betad = 0.0;
  double rhodold = 1.0;
  double tautildeold = 0.0;
  double thetatilde = 0.0;
  double zeta = 0.0;
  double d = 0.0;

  double norm_a2 = alpha * alpha;
  double maxrbar = 0.0;
  double minrbar = std::numeric_limits<double>::max();

  if (alpha * beta == 0.0) {
    out.residual_norm = beta;
    out.stop_reason = 1;
    return out;
  }

  Vector av(a.rows());
  Vector atu(n);
  std::int64_t itn = 0;
  int istop = 0;
  while (itn < max_iter) {
    ++itn;
    a.Multiply(v, av);
    u = av - alpha * u;
    beta = u.norm();
    if (beta > 0.0) {
      u /= beta;
      a.MultiplyTransposed(u, atu);
      v = atu - beta * v;
      alpha = v.norm();
      if (alpha > 0.0) v /= alpha;
    }

    // With zero damping the first rotation is the identity.
    const double alphahat = alphabar;
    const double rhoold = rho;
    double c = 0.0, s = 0.0;
    std::tie(c, s, rho) = SymOrtho(alphahat, beta);
    const double thetanew = s * alpha;
    alphabar = c * alpha;

    const double rhobarold = rhobar;
    const double zetaold = zeta;
    const double thetabar = sbar * rho;
    const double rhotemp = cbar * rho;
    std::tie(cbar, sbar, rhobar) = SymOrtho(cbar * rho, thetanew);
    zeta = cbar * zetabar;
    zetabar = -sbar * zetabar;

    hbar = h - (thetabar * rho / (rhoold * rhobarold)) * hbar;
    x += (zeta / (rho * rhobar)) * hbar;
    h = v - (thetanew / rho) * h;

    // Running estimate of ||r||.
    const double betaacute = betadd;
    const double betahat = c * betaacute;
    betadd = -s * betaacute;
    const double thetatildeold = thetatilde;
    auto [ctildeold, stildeold, rhotildeold] = SymOrtho(rhodold, thetabar);
    thetatilde = stildeold * rhobar;
    rhodold = ctildeold * rhobar;
    betad = -stildeold * betad + ctildeold * betahat;
    tautildeold = (zetaold - thetatildeold * tautildeold) / rhotildeold;
    const double taud = (zeta - thetatilde * tautildeold) / rhodold;
    const double normr = std::sqrt(d + (betad - taud) * (betad - taud) + betadd * betadd);

    norm_a2 += beta * beta;
    const double norm_a = std::sqrt(norm_a2);
    norm_a2 += alpha * alpha;

    maxrbar = std::max(maxrbar, rhobarold);
    if (itn > 1) minrbar = std::min(minrbar, rhobarold);
    const double cond_a = std::max(maxrbar, rhotemp) / std::min(minrbar, rhotemp);

    const double normar = std::abs(zetabar);
    const double normx = x.norm();
    const double test1 = normr / normb;
    const double test2 = (norm_a * normr != 0.0) ? normar / (norm_a * normr)
                                                 : std::numeric_limits<double>::infinity();
    const double test3 = 1.0 / cond_a;
    const double t1 = test1 / (1.0 + norm_a * normx / normb);
    const double rtol = opts.btol + opts.atol * norm_a * normx / normb;

    if (1.0 + test3 <= 1.0) istop = 6;
    if (1.0 + test2 <= 1.0) istop = 5;
    if (1.0 + t1 <= 1.0) istop = 4;
    if (test2 <= opts.atol) istop = 2;
    if (test1 <= rtol) istop = 1;
    if (istop > 0) break;
  }

  Vector r(a.rows());
  a.Multiply(x, r);
  r -= b;
  out.residual_norm = r.norm();
  out.iterations = itn;
  out.stop_reason = istop > 0 ? istop : 7;
  if (istop == 0) throw DidNotConverge(std::move(out));
  return out;
}

LsmrResult LsmrSolve(const SparseSystem& sys, const LsmrOptions& opts) {
  sys.Validate();
  return LsmrSolve(CsrMatrix::FromSystem(sys), sys.Rhs(), opts);
}

}  // namespace gradleak
