#include "pyratten/gradsuite.hpp"

#include <algorithm>
#include <functional>

#include "pyratten/attention.hpp"
#include "pyratten/gradcheck.hpp"
#include "pyratten/network.hpp"
#include "pyratten/ops.hpp"
#include "pyratten/random.hpp"

namespace pyratten {

double default_gradcheck_eps() {
#ifdef PYRATTEN_DOUBLE
  return 1e-5;
#else
  return 1e-2;
#endif
}

double default_gradcheck_tolerance() {
#ifdef PYRATTEN_DOUBLE
  return 1e-4;
#else
  return 1e-2;
#endif
}

namespace {

using Op = std::function<Tensor(const Tensor&)>;

// sum(op(x) - op(x0)): same gradient as sum(op(x)), but the scalar stays
// small so rounding it to Real does not swamp the finite differences.
Op centered_sum(const Op& op, const Tensor& x0) {
  Tensor base;
  {
    NoTapeScope no_tape;
    base = op(x0);
  }
  return [op, base](const Tensor& x) { return sum(sub(op(x), base)); };
}

// Test functions are built so that no gradient element sits near zero: a
// central difference in 32-bit resolves about 1e-5 absolutely, so the
// relative error of a near-zero element measures rounding, not the backward
// rule. Weight signs are restricted where that keeps every backward path live.
struct Case {
  std::string name;
  std::function<std::pair<Op, Tensor>(Rng&, double eps)> make;
};

ConvSpec random_conv(int c_out, int c_in, int k, int stride, int pad, double lo, double hi, Rng& rng) {
  return ConvSpec{uniform_tensor(Shape{c_out, c_in, k, k}, lo, hi, rng),
                  uniform_tensor(Shape{c_out, 1, 1, 1}, -0.5, 0.5, rng), stride, pad, pad};
}

// Transposed conv weight is (Cin, Cout, k, k); the bias follows Cout.
ConvSpec random_conv_transpose(int c_in, int c_out, int k, int stride, int pad, double lo, double hi,
                               Rng& rng) {
  return ConvSpec{uniform_tensor(Shape{c_in, c_out, k, k}, lo, hi, rng),
                  uniform_tensor(Shape{c_out, 1, 1, 1}, -0.5, 0.5, rng), stride, pad, pad};
}

// Signed query/key projections; a positive value projection keeps the summed
// output sensitive to every input. The theta bias only shifts the output
// (attention rows sum to one), so it stays zero.
AttentionParams random_attention(int c, int e, Rng& rng) {
  AttentionParams p{random_conv(e, c, 1, 1, 0, -0.5, 0.5, rng), random_conv(e, c, 1, 1, 0, -0.5, 0.5, rng),
                    random_conv(c, c, 1, 1, 0, 0.0, 0.5, rng)};
  p.w_theta.bias = Tensor::zeros(p.w_theta.bias.shape());
  return p;
}

Shape random_shape(Rng& rng, int min_hw = 5) {
  const int c = 4 + static_cast<int>(rng.below(5));  // 4..8
  const int h = min_hw + static_cast<int>(rng.below(11 - min_hw));
  const int w = min_hw + static_cast<int>(rng.below(11 - min_hw));
  return Shape{1, c, h, w};
}

// Output weights of +-1 along `axis`, with both signs present in every slice.
Tensor signed_slice_weights(const Shape& s, int axis, Rng& rng) {
  Tensor w(s);
  const int len = s[axis];
  std::size_t inner = 1;
  for (int d = axis + 1; d < 4; ++d) inner *= static_cast<std::size_t>(s[d]);
  const std::size_t outer = w.numel() / (inner * len);
  auto v = w.mutable_data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const int neg = static_cast<int>(rng.below(static_cast<std::uint64_t>(len)));
      int pos = static_cast<int>(rng.below(static_cast<std::uint64_t>(len - 1)));
      if (pos >= neg) ++pos;
      for (int a = 0; a < len; ++a) {
        Real sign = rng.uniform() < 0.5 ? Real(-1) : Real(1);
        if (a == neg) sign = Real(-1);
        if (a == pos) sign = Real(1);
        v[(o * len + a) * inner + i] = sign;
      }
    }
  }
  return w;
}

std::vector<Case> cases() {
  std::vector<Case> all;
  all.push_back({"conv2d", [](Rng& rng, double) {
                   const Shape s = random_shape(rng);
                   const int stride = 1 + static_cast<int>(rng.below(2));
                   const ConvSpec spec = random_conv(5, s.c, 3, stride, 1, 0.05, 0.5, rng);
                   const Tensor x = uniform_tensor(s, -1, 1, rng);
                   return std::pair{centered_sum([spec](const Tensor& t) { return conv2d(t, spec); }, x), x};
                 }});
  all.push_back({"conv2d.weight", [](Rng& rng, double) {
                   const Shape s = random_shape(rng);
                   const ConvSpec spec = random_conv(5, s.c, 3, 1, 1, -0.5, 0.5, rng);
                   const Tensor x = uniform_tensor(s, 0, 1, rng);
                   Op op = [spec, x](const Tensor& w) {
                     ConvSpec local = spec;
                     local.weight = w;
                     return conv2d(x, local);
                   };
                   return std::pair{centered_sum(op, spec.weight), spec.weight};
                 }});
  all.push_back({"conv_transpose2d", [](Rng& rng, double) {
                   const Shape s = random_shape(rng);
                   const int stride = 1 + static_cast<int>(rng.below(2));
                   const ConvSpec spec = random_conv_transpose(s.c, 3, 3, stride, 1, 0.05, 0.5, rng);
                   const Tensor x = uniform_tensor(s, -1, 1, rng);
                   return std::pair{
                       centered_sum([spec](const Tensor& t) { return conv_transpose2d(t, spec); }, x), x};
                 }});
  all.push_back({"conv_transpose2d.weight", [](Rng& rng, double) {
                   const Shape s = random_shape(rng);
                   const ConvSpec spec = random_conv_transpose(s.c, 3, 3, 1, 1, -0.5, 0.5, rng);
                   const Tensor x = uniform_tensor(s, 0, 1, rng);
                   Op op = [spec, x](const Tensor& w) {
                     ConvSpec local = spec;
                     local.weight = w;
                     return conv_transpose2d(x, local);
                   };
                   return std::pair{centered_sum(op, spec.weight), spec.weight};
                 }});
  all.push_back({"bicubic_resize", [](Rng& rng, double) {
                   const Shape s = random_shape(rng);
                   const double factors[] = {0.6, 0.7, 0.8, 0.9, 1.5};
                   const double f = factors[rng.below(5)];
                   const Tensor x = uniform_tensor(s, -1, 1, rng);
                   return std::pair{centered_sum([f](const Tensor& t) { return bicubic_resize(t, f); }, x), x};
                 }});
  all.push_back({"softmax", [](Rng& rng, double) {
                   const Shape s = random_shape(rng);
                   const int axis = 1 + static_cast<int>(rng.below(3));
                   const Tensor weights = signed_slice_weights(s, axis, rng);
                   const Tensor x = uniform_tensor(s, -1, 1, rng);
                   Op op = [axis, weights](const Tensor& t) { return mul(softmax(t, axis), weights); };
                   return std::pair{centered_sum(op, x), x};
                 }});
  all.push_back({"l1_loss", [](Rng& rng, double eps) {
                   const Shape s = random_shape(rng);
                   const Tensor target = uniform_tensor(s, -1, 1, rng);
                   Tensor x = uniform_tensor(s, -1, 1, rng);
                   // Keep every element clear of a tie by more than the probe step.
                   const Real gap = static_cast<Real>(std::max(0.05, 4 * eps));
                   auto xv = x.mutable_data();
                   auto tv = target.data();
                   for (std::size_t i = 0; i < xv.size(); ++i) {
                     if (std::abs(xv[i] - tv[i]) < gap) xv[i] = tv[i] + 2 * gap;
                   }
                   return std::pair{Op([target](const Tensor& t) { return l1_loss(t, target); }), x};
                 }});
  all.push_back({"residual_block", [](Rng& rng, double eps) {
                   const Shape s = random_shape(rng);
                   const ResidualBlockParams p{random_conv(s.c, s.c, 3, 1, 1, -0.1, 0.1, rng),
                                               random_conv(s.c, s.c, 3, 1, 1, -0.1, 0.1, rng)};
                   // A probe moves a pre-activation by at most eps * max|w1|; redraw the
                   // input until no pre-activation is that close to the relu kink.
                   double reach = 0.0;
                   for (Real v : p.conv1.weight.data()) reach = std::max(reach, std::abs(double(v)));
                   reach *= 2 * eps;
                   Tensor x;
                   for (int attempt = 0;; ++attempt) {
                     x = uniform_tensor(s, -1, 1, rng);
                     NoTapeScope no_tape;
                     const Tensor pre = conv2d(x, p.conv1);
                     double closest = 1e300;
                     for (Real v : pre.data()) closest = std::min(closest, std::abs(double(v)));
                     if (closest > reach) break;
                     if (attempt == 1000) throw NumericError("residual_block: no kink-free input found");
                   }
                   return std::pair{centered_sum([p](const Tensor& t) { return residual_block(t, p); }, x), x};
                 }});
  all.push_back({"nonlocal_attention", [](Rng& rng, double) {
                   const Shape s = random_shape(rng);
                   const AttentionParams p = random_attention(s.c, std::max(1, s.c / 2), rng);
                   const Tensor x = uniform_tensor(s, -1, 1, rng);
                   return std::pair{centered_sum([p](const Tensor& t) { return nonlocal_attention(t, p); }, x), x};
                 }});
  all.push_back({"scale_agnostic_attention", [](Rng& rng, double) {
                   const Shape s = random_shape(rng);
                   const AttentionParams p = random_attention(s.c, std::max(1, s.c / 2), rng);
                   const double factor = 0.6 + 0.1 * static_cast<double>(rng.below(4));
                   const Tensor x = uniform_tensor(s, -1, 1, rng);
                   Op op = [p, factor](const Tensor& t) { return scale_agnostic_attention(t, factor, p); };
                   return std::pair{centered_sum(op, x), x};
                 }});
  all.push_back({"pyramid_attention", [](Rng& rng, double) {
                   const Shape s = random_shape(rng);
                   PyramidAttentionConfig cfg;
                   cfg.feature_channels = s.c;
                   cfg.embed_channels = std::max(1, s.c / 2);
                   const AttentionParams p = random_attention(s.c, cfg.embed_channels, rng);
                   const Tensor x = uniform_tensor(s, -1, 1, rng);
                   Op op = [cfg, p](const Tensor& t) { return pyramid_attention(t, cfg, p); };
                   return std::pair{centered_sum(op, x), x};
                 }});
  all.push_back({"pyramid_attention.w_g", [](Rng& rng, double) {
                   const Shape s = random_shape(rng);
                   PyramidAttentionConfig cfg;
                   cfg.feature_channels = s.c;
                   cfg.embed_channels = std::max(1, s.c / 2);
                   const AttentionParams p = random_attention(s.c, cfg.embed_channels, rng);
                   const Tensor x = uniform_tensor(s, -1, 1, rng);
                   Op op = [cfg, p, x](const Tensor& w) {
                     AttentionParams local = p;
                     local.w_g.weight = w;
                     return pyramid_attention(x, cfg, local);
                   };
                   return std::pair{centered_sum(op, p.w_g.weight), p.w_g.weight};
                 }});
  return all;
}

}  // namespace

std::vector<std::string> gradient_suite_ops() {
  std::vector<std::string> names;
  for (const Case& c : cases()) names.push_back(c.name);
  return names;
}

std::vector<GradSuiteEntry> run_gradient_suite(const std::string& only, double eps,
                                               std::uint64_t seed) {
  std::vector<GradSuiteEntry> out;
  const double tol = default_gradcheck_tolerance();
  Rng rng(seed);
  bool matched = false;
  for (const Case& c : cases()) {
    // Every case draws from its own stream so filtering does not change shapes.
    Rng local(rng.next_u64());
    if (!only.empty() && c.name != only) continue;
    matched = true;
    auto [f, x] = c.make(local, eps);
    const GradCheckResult r = grad_check(f, x, eps);
    out.push_back(GradSuiteEntry{c.name, x.shape().str(), r.max_rel_error, tol,
                                 r.max_rel_error < tol, r.analytic, r.numeric});
  }
  if (!matched) throw ConfigError("unknown gradcheck op '" + only + "'");
  return out;
}

}  // namespace pyratten
