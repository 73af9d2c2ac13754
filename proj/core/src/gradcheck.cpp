#include "pepnet/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace pepnet {

double finite_diff_check(const std::function<double()>& loss_value,
                         std::span<GradCheckTarget> targets, double step) {
  double max_err = 0.0;
  for (GradCheckTarget& t : targets) {
    if (static_cast<int64_t>(t.analytic.size()) != t.size) {
      throw std::invalid_argument("finite_diff_check: analytic gradient size mismatch for " +
                                  t.name);
    }
    for (int64_t i = 0; i < t.size; ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + step;
      const double up = loss_value();
      t.data[i] = saved - step;
      const double down = loss_value();
      t.data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw std::runtime_error("finite_diff_check: non-finite loss while probing " + t.name);
      }
      const double central = (up - down) / (2.0 * step);
      const double err = std::fabs(t.analytic[static_cast<size_t>(i)] - central) /
                         std::max(1.0, std::fabs(central));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

double finite_diff_check(const std::function<NodeId(Graph&)>& build,
                         std::span<Parameter* const> params, double step) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    NodeId loss = build(g);
    g.backward(loss);
  }
  std::vector<GradCheckTarget> targets;
  targets.reserve(params.size());
  for (Parameter* p : params) {
    GradCheckTarget t;
    t.name = p->name;
    t.data = p->value.data();
    t.size = p->value.size();
    t.analytic.assign(p->grad.data(), p->grad.data() + p->grad.size());
    targets.push_back(std::move(t));
  }
  const auto loss_value = [&]() {
    Graph g;
    return g.value(build(g))[0];
  };
  const double err = finite_diff_check(loss_value, targets, step);
  for (Parameter* p : params) p->zero_grad();
  return err;
}

}  // namespace pepnet
