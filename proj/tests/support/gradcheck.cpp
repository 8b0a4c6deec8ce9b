#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "soundstream/ops.hpp"

namespace soundstream::testing {

GradCheckResult grad_check(std::vector<Tensor> params, const std::function<Tensor()>& loss_fn, float step,
                           std::size_t max_per_param, std::uint64_t seed) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = loss_fn();
    }
    backward(loss, tape);
  }
  std::vector<std::vector<float>> analytic;
  for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  auto eval = [&]() -> double {
    NoGradScope no_grad;
    return static_cast<double>(loss_fn().item());
  };

  GradCheckResult result;
  std::mt19937_64 rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const auto& a = analytic[pi];
    std::vector<std::size_t> idx(a.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (max_per_param != 0 && idx.size() > max_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_param);
    }
    double diff2 = 0.0, an2 = 0.0, nu2 = 0.0, worst_gap = -1.0;
    std::string worst_entry;
    for (std::size_t i : idx) {
      const float orig = p.data()[i];
      p.data()[i] = orig + step;
      const double lp = eval();
      p.data()[i] = orig - step;
      const double lm = eval();
      p.data()[i] = orig;
      const double numeric = (lp - lm) / (2.0 * static_cast<double>(step));
      const double an = a[i];
      diff2 += (an - numeric) * (an - numeric);
      an2 += an * an;
      nu2 += numeric * numeric;
      ++result.checked;
      if (std::fabs(an - numeric) > worst_gap) {
        worst_gap = std::fabs(an - numeric);
        std::ostringstream os;
        os << "[" << i << "] analytic=" << an << " numeric=" << numeric;
        worst_entry = os.str();
      }
    }
    const double err = std::sqrt(diff2) / std::max({std::sqrt(an2), std::sqrt(nu2), 1e-12});
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      std::ostringstream os;
      os << "param#" << pi << " rel=" << err << " largest gap at " << worst_entry;
      result.worst = os.str();
    }
  }
  for (auto& p : params) p.zero_grad();
  return result;
}

GradCheckResult directional_check(std::vector<Tensor> params, const std::function<Tensor()>& loss_fn, int directions,
                                  float step, std::uint64_t seed) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = loss_fn();
    }
    backward(loss, tape);
  }
  std::vector<std::vector<float>> analytic, original;
  for (auto& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
    original.emplace_back(p.data().begin(), p.data().end());
  }
  auto eval = [&]() -> double {
    NoGradScope no_grad;
    return static_cast<double>(loss_fn().item());
  };
  auto shift = [&](const std::vector<std::vector<float>>& v, double h) {
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto d = params[pi].data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(original[pi][i] + h * v[pi][i]);
    }
  };

  GradCheckResult result;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  double gnorm2 = 0.0;
  for (const auto& a : analytic)
    for (float g : a) gnorm2 += static_cast<double>(g) * g;
  const double gnorm = std::sqrt(gnorm2);
  for (int k = 0; k < directions; ++k) {
    std::vector<std::vector<float>> r;
    double rnorm2 = 0.0;
    for (auto& p : params) {
      r.emplace_back(static_cast<std::size_t>(p.numel()));
      for (auto& e : r.back()) {
        e = static_cast<float>(nd(rng));
        rnorm2 += static_cast<double>(e) * e;
      }
    }
    const double rinv = k == 0 || rnorm2 == 0.0 ? 0.0 : 1.0 / std::sqrt(rnorm2);
    const double ginv = gnorm > 0.0 ? 1.0 / gnorm : 0.0;
    std::vector<std::vector<float>> v(params.size());
    double vnorm2 = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      v[pi].resize(r[pi].size());
      for (std::size_t i = 0; i < r[pi].size(); ++i) {
        const double e = analytic[pi][i] * ginv + r[pi][i] * rinv;
        v[pi][i] = static_cast<float>(e);
        vnorm2 += e * e;
      }
    }
    const double inv = vnorm2 > 0.0 ? 1.0 / std::sqrt(vnorm2) : 0.0;
    double an = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      for (std::size_t i = 0; i < v[pi].size(); ++i) {
        v[pi][i] = static_cast<float>(v[pi][i] * inv);
        an += static_cast<double>(analytic[pi][i]) * v[pi][i];
      }
    }
    shift(v, step);
    const double lp = eval();
    shift(v, -step);
    const double lm = eval();
    shift(v, 0.0);
    const double numeric = (lp - lm) / (2.0 * static_cast<double>(step));
    const double err = std::fabs(an - numeric) / std::max({std::fabs(an), std::fabs(numeric), 1e-12});
    ++result.checked;
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      std::ostringstream os;
      os << "direction#" << k << " analytic=" << an << " numeric=" << numeric;
      result.worst = os.str();
    }
  }
  for (auto& p : params) p.zero_grad();
  return result;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, float scale, bool requires_grad) {
  std::normal_distribution<float> nd(0.0f, scale);
  Tensor t(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

Tensor random_projection(const Tensor& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(t.shape(), rng);
  return ops::sum(ops::mul(t, w));
}

}  // namespace soundstream::testing
