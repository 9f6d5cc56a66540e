#pragma once

// The full gradient-verification suite at 64-bit precision: every
// differentiable primitive on randomized shapes across many seeds, a tiny
// backbone, and the complete attention head at each supported head count.
// Shared by the gradcheck CLI command and the acceptance tests.

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "multibreath/backbone.hpp"
#include "multibreath/csra.hpp"
#include "multibreath/gradcheck.hpp"
#include "multibreath/rng.hpp"

namespace mb::ad {

struct SuiteResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass() const { return max_rel_err < tolerance; }
};

namespace suite_detail {

inline Array<double> random_array(Shape shape, Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  Array<double> a(std::move(shape));
  for (auto& x : a.v) x = rng.uniform(lo, hi);
  return a;
}

// Scalarize through a fixed random projection so every output cell
// contributes to the checked gradient. The projection array must stay
// constant across repeated forward evaluations.
inline Tensor<double> project(const Tensor<double>& out, const Array<double>& w) {
  return sum_all(mul(out, Tensor<double>::leaf(w)));
}

inline SuiteResult check(const std::string& name, ParameterSet<double>& params,
                         const std::function<Tensor<double>()>& f) {
  GradCheckReport r = gradient_check(params, f);
  return {name, r.max_rel_err, 1e-4};
}

}  // namespace suite_detail

inline std::vector<SuiteResult> run_gradcheck_suite(int num_seeds = 20) {
  using namespace suite_detail;
  std::vector<SuiteResult> results;

  auto merge = [&results](SuiteResult r) {
    for (auto& prev : results)
      if (prev.name == r.name) {
        prev.max_rel_err = std::max(prev.max_rel_err, r.max_rel_err);
        return;
      }
    results.push_back(std::move(r));
  };

  for (int seed = 0; seed < num_seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) * 7919 + 1);
    const long n = 2 + static_cast<long>(rng.uniform_int(2));
    const long m = 3 + static_cast<long>(rng.uniform_int(2));

    // elementwise binary
    for (const std::string op : {"add", "sub", "mul"}) {
      ParameterSet<double> p;
      p.add("a", random_array({n, m}, rng));
      p.add("b", random_array({n, m}, rng));
      merge(check(op, p, [&p, op]() {
        Tensor<double>&a = p.at("a"), &b = p.at("b");
        Tensor<double> o = op == "add"   ? add(a, b)
                           : op == "sub" ? sub(a, b)
                                         : mul(a, b);
        return sum_all(o);
      }));
    }

    // elementwise unary (log gets positive inputs)
    for (const std::string op :
         {"smul", "sadd", "relu", "sigmoid", "exp", "log"}) {
      ParameterSet<double> p;
      p.add("a", random_array({n, m}, rng, op == "log" ? 0.2 : -1.0, 2.0));
      merge(check(op, p, [&p, op]() {
        Tensor<double>& a = p.at("a");
        Tensor<double> o = op == "smul"      ? smul(a, 1.7)
                           : op == "sadd"    ? sadd(a, 0.3)
                           : op == "relu"    ? relu(a)
                           : op == "sigmoid" ? sigmoid(a)
                           : op == "exp"     ? exp_(a)
                                             : log_(a);
        return sum_all(o);
      }));
    }

    // matmul, both batched and shared-rhs
    {
      ParameterSet<double> p;
      p.add("a", random_array({2, n, m}, rng));
      p.add("b", random_array({m, 4}, rng));
      p.add("c", random_array({2, 4, n}, rng));
      const Array<double> proj = random_array({2, n, n}, rng);
      merge(check("matmul", p, [&p, proj]() {
        return project(matmul(matmul(p.at("a"), p.at("b")), p.at("c")), proj);
      }));
    }

    // shape ops and reductions
    {
      ParameterSet<double> p;
      p.add("a", random_array({n, m, 4}, rng));
      const Array<double> pr = random_array({n, m * 4}, rng);
      const Array<double> pt = random_array({n, 4, m}, rng);
      const Array<double> prep = random_array({n, m * 2}, rng);
      const Array<double> pmean = random_array({m, 4}, rng);
      const Array<double> pmax = random_array({n, 4}, rng);
      merge(check("shape_reduce", p, [&p, n, m, pr, pt, prep, pmean, pmax]() {
        Tensor<double>& a = p.at("a");
        Tensor<double> acc = project(reshape(a, {n, m * 4}), pr);
        acc = add(acc, project(transpose_last2(a), pt));
        acc = add(acc, project(sum_axis(repeat_axis(a, 1, 2), 2), prep));
        acc = add(acc, project(mean_axis(a, 0), pmean));
        acc = add(acc, project(max_axis(a, 1), pmax));
        return acc;
      }));
    }

    // softmax over interior and trailing axes
    {
      ParameterSet<double> p;
      p.add("a", random_array({n, m, 4}, rng, -3.0, 3.0));
      const Array<double> proj = random_array({n, m, 4}, rng);
      merge(check("softmax", p, [&p, proj]() {
        return add(project(softmax_axis(p.at("a"), 1), proj),
                   project(softmax_axis(p.at("a"), 2), proj));
      }));
    }

    // avgpool + conv2d (with bias)
    {
      ParameterSet<double> p;
      p.add("x", random_array({1, 2, 6, 8}, rng));
      p.add("w", random_array({3, 2, 3, 3}, rng));
      p.add("b", random_array({3}, rng));
      const Array<double> proj = random_array({1, 3, 3, 4}, rng);
      merge(check("conv2d_avgpool", p, [&p, proj]() {
        Tensor<double> y = conv2d(p.at("x"), p.at("w"), &p.at("b"), 1, 1);
        return project(avgpool2x2(y), proj);
      }));
    }

    // batchnorm, train mode
    {
      ParameterSet<double> p;
      p.add("x", random_array({2, 3, 4, 4}, rng));
      p.add("gamma", random_array({3}, rng, 0.5, 1.5));
      p.add("beta", random_array({3}, rng));
      const Array<double> proj = random_array({2, 3, 4, 4}, rng);
      merge(check("batchnorm2d", p, [&p, proj]() {
        BatchNormStats<double> stats(3);
        return project(batchnorm2d(p.at("x"), p.at("gamma"), p.at("beta"),
                                   stats, /*train=*/true),
                       proj);
      }));
    }

    // losses
    {
      ParameterSet<double> p;
      p.add("z", random_array({n, 2}, rng, -2.0, 2.0));
      Array<double> targets({n, 2});
      for (auto& t : targets.v) t = rng.uniform() < 0.5 ? 0.0 : 1.0;
      merge(check("bce_with_logits", p, [&p, targets]() {
        return bce_with_logits(p.at("z"), targets);
      }));
    }
    {
      ParameterSet<double> p;
      p.add("z", random_array({n, 4}, rng, -2.0, 2.0));
      std::vector<long> cls(n);
      for (auto& c : cls) c = static_cast<long>(rng.uniform_int(3));
      merge(check("cross_entropy", p, [&p, cls]() {
        return cross_entropy(p.at("z"), cls);
      }));
    }
  }

  // Tiny backbone, end to end. Relu is not differentiable at 0 and batchnorm
  // centers activations there, so an occasional draw leaves a pre-relu value
  // within reach of the finite-difference step; redraw until every activation
  // keeps a safe margin from the kink.
  {
    nn::BackboneConfig cfg;
    cfg.widths = {4, 8};
    ParameterSet<double> p;
    nn::BackboneState<double> state;
    nn::init_backbone(cfg, 42, p, state);
    p.add("input", Array<double>({1, 1, 16, 32}));
    double margin = 0.0;
    for (int attempt = 0; attempt < 64 && margin < 1e-3; ++attempt) {
      Rng rng(424242 + 1000003ull * static_cast<std::uint64_t>(attempt));
      p.at("input").raw_value() = random_array({1, 1, 16, 32}, rng);
      nn::BackboneState<double> fresh = state;
      margin = std::numeric_limits<double>::max();
      nn::forward_features(cfg, p, fresh, p.at("input"), /*train=*/true,
                           &margin);
    }
    Rng rng(424243);
    const Array<double> proj = random_array({1, 8, 4, 8}, rng);
    merge(check("backbone_tiny", p, [&p, &cfg, &state, proj]() {
      nn::BackboneState<double> fresh = state;  // keep running stats fixed
      return project(
          nn::forward_features(cfg, p, fresh, p.at("input"), /*train=*/true),
          proj);
    }));
  }

  // full head for each supported head count, including the max-pool head
  for (long H : {1L, 2L, 4L, 6L}) {
    nn::CsraHeadConfig cfg;
    cfg.num_heads = H;
    cfg.temperatures = nn::CsraHeadConfig::default_temperatures(H);
    cfg.feature_dim = 8;
    ParameterSet<double> p;
    nn::init_csra(cfg, 1000 + H, p);
    Rng rng(91 + H);
    p.add("features", random_array({2, 8, 2, 4}, rng));
    Array<double> targets({2, 2});
    for (auto& t : targets.v) t = rng.uniform() < 0.5 ? 0.0 : 1.0;
    merge(check("csra_head_H" + std::to_string(H), p, [&p, &cfg, targets]() {
      return bce_with_logits(nn::csra_logits(p.at("features"), p, cfg),
                             targets);
    }));
  }

  return results;
}

}  // namespace mb::ad
