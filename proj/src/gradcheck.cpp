#include "limn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace limn {

GradCheckResult grad_check(const std::function<Tensor(Graph&)>& f, std::vector<ParamStore::Entry> inputs,
                           const GradCheckOptions& opts) {
  for (auto& [name, t] : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Graph g;
    Tensor loss = f(g);
    g.backward(loss);
  }
  auto eval = [&f]() {
    Graph g(false);
    return f(g).item();
  };

  GradCheckResult res;
  std::mt19937_64 rng(opts.seed);
  for (auto& [name, t] : inputs) {
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_coords != 0 && idx.size() > opts.max_coords) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_coords);
      std::sort(idx.begin(), idx.end());
    }
    const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                      : std::vector<double>(t.size(), 0.0);
    auto data = t.mutable_data();
    for (std::size_t i : idx) {
      const double orig = data[i];
      data[i] = orig + opts.step;
      const double up = eval();
      data[i] = orig - opts.step;
      const double down = eval();
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.floor});
      ++res.coords_checked;
      if (res.worst.empty() || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = name + "[" + std::to_string(i) + "]";
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace limn
