#pragma once

// Central finite-difference checks of analytic gradients, run in double.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ripeseg/tensor/graph.hpp"
#include "ripeseg/tensor/random.hpp"

namespace ripeseg {

struct GradcheckOptions {
  double step = 1e-3;
  double rel_tol = 1e-3;
  double abs_tol = 1e-7;             // differences below this pass regardless
  double min_pass_fraction = 0.99;
  std::size_t max_coords = 0;        // per leaf; 0 checks every coordinate
  std::string faulty_op;             // corrupt this op's backward
  std::uint64_t seed = 7;
  // When x +- step crosses a ReLU, pooling or clamp boundary the quotient is
  // not a derivative estimate; the step is divided by 10 up to this many times.
  int max_refinements = 4;
};

struct GradcheckResult {
  std::string op;
  std::size_t checked = 0;
  std::size_t passed = 0;
  std::size_t refined = 0;  // coordinates checked with a reduced step
  double max_rel_error = 0;
  double seconds = 0;
  std::string error;  // set when the check could not run

  double pass_fraction() const { return checked ? double(passed) / double(checked) : 0.0; }
  bool ok(double min_fraction) const { return error.empty() && checked > 0 && pass_fraction() >= min_fraction; }
};

/// Relative error |a - n| / max(|a|, |n|), zero when both vanish.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  return scale == 0 ? 0.0 : std::abs(analytic - numeric) / scale;
}

/// Compares d f / d leaf against central differences for every leaf.
/// `f` must rebuild its scalar output from the current leaf values.
inline GradcheckResult check_gradients(std::string name, const std::vector<Tensor<double>>& leaves,
                                       const std::function<Tensor<double>(Graph<double>&)>& f,
                                       const GradcheckOptions& o) {
  GradcheckResult r;
  r.op = std::move(name);
  for (const auto& l : leaves) l.zero_grad();
  {
    typename Graph<double>::Options go;
    go.faulty_op = o.faulty_op;
    Graph<double> g(go);
    g.backward(f(g));
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& l : leaves) analytic.push_back(l.grad().vec());

  struct Sample {
    double value;
    std::uint64_t branches;
  };
  auto eval = [&] {
    typename Graph<double>::Options opts;
    opts.record = false;
    opts.trace_branches = true;
    Graph<double> g(opts);
    const double v = f(g).item();
    return Sample{v, g.branch_signature()};
  };
  const auto base = eval().branches;
  Rng rng(o.seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const auto n = leaves[li].size();
    std::vector<std::size_t> coords;
    if (o.max_coords && n > o.max_coords) {
      coords = rng.permutation(n);
      coords.resize(o.max_coords);
      std::sort(coords.begin(), coords.end());
    } else {
      for (std::size_t k = 0; k < n; ++k) coords.push_back(k);
    }
    auto data = leaves[li].mutable_data();
    for (auto k : coords) {
      const double orig = data[k];
      double h = o.step, numeric = 0;
      for (int attempt = 0;; ++attempt) {
        data[k] = orig + h;
        const auto fp = eval();
        data[k] = orig - h;
        const auto fm = eval();
        data[k] = orig;
        numeric = (fp.value - fm.value) / (2 * h);
        const bool smooth = fp.branches == base && fm.branches == base;
        if (smooth || attempt == o.max_refinements) break;
        h /= 10;
      }
      if (h != o.step) ++r.refined;
      const double a = analytic[li][k];
      const double rel = relative_error(a, numeric);
      const bool pass = rel <= o.rel_tol || std::abs(a - numeric) <= o.abs_tol;
      ++r.checked;
      if (pass) ++r.passed;
      if (std::abs(a - numeric) > o.abs_tol) r.max_rel_error = std::max(r.max_rel_error, rel);
    }
  }
  return r;
}

struct GradcheckSuiteOptions {
  GradcheckOptions check{};
  std::vector<std::string> ops;  // empty: all
};

/// Names of every row of the suite, in run order.
std::vector<std::string> gradcheck_ops();

/// Runs the selected rows; unknown names raise ConfigError.
std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckSuiteOptions& options,
                                                 const std::function<void(const GradcheckResult&)>& on_row = {});

}  // namespace ripeseg
