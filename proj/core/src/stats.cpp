#include "dslab/stats.hpp"

#include <cmath>
#include <limits>

#include "dslab/tensor.hpp"

namespace dslab {

namespace {

double sample_variance(std::span<const double> xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return sq / static_cast<double>(xs.size() - 1);
}

// Lentz's algorithm for the continued fraction of I_x(a, b).
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kTiny = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw Error("incomplete beta: continued fraction did not converge");
}

}  // namespace

SampleStats aggregate(std::span<const double> xs) {
  if (xs.empty()) throw Error("aggregate: need at least one value");
  double sum = 0.0;
  for (double x : xs) sum += x;
  SampleStats s;
  s.n = xs.size();
  s.mean = sum / static_cast<double>(xs.size());
  s.stddev = std::sqrt(sample_variance(xs, s.mean));
  return s;
}

WelchResult welch_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error("welch: each group needs at least two values");
  }
  const SampleStats sa = aggregate(a);
  const SampleStats sb = aggregate(b);
  const double va = sa.stddev * sa.stddev;
  const double vb = sb.stddev * sb.stddev;
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());

  WelchResult r;
  if (va == 0.0 && vb == 0.0) {
    r.dof = na + nb - 2.0;
    if (sa.mean == sb.mean) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(),
                          sa.mean - sb.mean);
      r.p = 0.0;
    }
    return r;
  }

  const double qa = va / na;
  const double qb = vb / nb;
  r.t = (sa.mean - sb.mean) / std::sqrt(qa + qb);
  r.dof = (qa + qb) * (qa + qb) /
          (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  // Two-sided: p = P(|T| >= |t|) = I_{dof/(dof+t^2)}(dof/2, 1/2).
  r.p = regularized_incomplete_beta(0.5 * r.dof, 0.5,
                                    r.dof / (r.dof + r.t * r.t));
  return r;
}

double cohens_d(std::span<const double> baseline,
                std::span<const double> method) {
  if (baseline.size() < 2 || method.size() < 2) {
    throw Error("cohens d: each group needs at least two values");
  }
  const SampleStats sb = aggregate(baseline);
  const SampleStats sm = aggregate(method);
  const double diff = sb.mean - sm.mean;
  const double pooled =
      std::sqrt((sb.stddev * sb.stddev + sm.stddev * sm.stddev) / 2.0);
  if (pooled == 0.0) {
    if (diff == 0.0) return 0.0;
    return std::copysign(std::numeric_limits<double>::infinity(), diff);
  }
  return diff / pooled;
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error("linear fit: need two equal-length samples of size >= 2");
  }
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n;
  const double my = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw Error("linear fit: x values are all identical");

  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (fit.slope * x[i] + fit.intercept);
    ss_res += e * e;
    ss_tot += (y[i] - my) * (y[i] - my);
  }
  fit.r2 = ss_tot == 0.0 ? (ss_res == 0.0 ? 1.0 : 0.0) : 1.0 - ss_res / ss_tot;
  return fit;
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw Error("incomplete beta: both shape parameters must be positive");
  }
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cf(a, b, x) / a;
  }
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw Error("t cdf: degrees of freedom must be positive");
  if (t == 0.0) return 0.5;
  const double tail =
      0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t > 0.0 ? 1.0 - tail : tail;
}

}  // namespace dslab
