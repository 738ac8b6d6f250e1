#include "hissd/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hissd::oracle {

namespace {

void check_distribution(const std::vector<double>& p, const std::string& what) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument(what + " has a negative entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument(what + " does not sum to 1");
}

std::vector<double> random_distribution(Rng& rng, int n) {
  std::vector<double> p(n);
  double sum = 0.0;
  for (auto& v : p) {
    // exponential draws give a uniform point on the simplex
    v = -std::log(1.0 - uniform01(rng));
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

void DiscreteSkillWorld::validate() const {
  if (n_tasks < 1 || n_skills < 1) throw std::invalid_argument("world needs tasks and skills");
  if (static_cast<int>(obs_probs.size()) != n_tasks || static_cast<int>(encoder.size()) != n_tasks ||
      static_cast<int>(task_prior.size()) != n_tasks) {
    throw std::invalid_argument("world tables do not match the task count");
  }
  for (int i = 0; i < n_tasks; ++i) {
    const std::string t = "task " + std::to_string(i);
    check_distribution(obs_probs[i], t + " observation distribution");
    if (encoder[i].size() != obs_probs[i].size()) {
      throw std::invalid_argument(t + " encoder rows do not match its observations");
    }
    for (std::size_t x = 0; x < encoder[i].size(); ++x) {
      if (static_cast<int>(encoder[i][x].size()) != n_skills) {
        throw std::invalid_argument(t + " encoder row has the wrong width");
      }
      check_distribution(encoder[i][x], t + " encoder row " + std::to_string(x));
    }
    if (static_cast<int>(task_prior[i].size()) != n_skills) {
      throw std::invalid_argument(t + " prior has the wrong width");
    }
    check_distribution(task_prior[i], t + " prior");
  }
}

std::vector<double> DiscreteSkillWorld::skill_marginal() const {
  std::vector<double> pz(n_skills, 0.0);
  for (int i = 0; i < n_tasks; ++i) {
    for (std::size_t x = 0; x < obs_probs[i].size(); ++x) {
      for (int z = 0; z < n_skills; ++z) pz[z] += obs_probs[i][x] * encoder[i][x][z] / n_tasks;
    }
  }
  return pz;
}

DiscreteSkillWorld uniform_world(int n_tasks, int n_skills) {
  DiscreteSkillWorld w;
  w.n_tasks = n_tasks;
  w.n_skills = n_skills;
  const std::vector<double> u(n_skills, 1.0 / n_skills);
  for (int i = 0; i < n_tasks; ++i) {
    w.obs_probs.push_back({1.0});
    w.encoder.push_back({u});
    w.task_prior.push_back(u);
  }
  return w;
}

DiscreteSkillWorld random_world(Rng& rng, int max_tasks) {
  DiscreteSkillWorld w;
  w.n_tasks = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_tasks)));
  w.n_skills = 2 + static_cast<int>(uniform_index(rng, 7));
  for (int i = 0; i < w.n_tasks; ++i) {
    const int n_obs = 1 + static_cast<int>(uniform_index(rng, 6));
    w.obs_probs.push_back(random_distribution(rng, n_obs));
    std::vector<std::vector<double>> rows;
    for (int x = 0; x < n_obs; ++x) rows.push_back(random_distribution(rng, w.n_skills));
    w.encoder.push_back(std::move(rows));
    w.task_prior.push_back(random_distribution(rng, w.n_skills));
  }
  return w;
}

Theorem1Result theorem1_check(const DiscreteSkillWorld& world) {
  world.validate();
  const int N = world.n_tasks;
  const int Z = world.n_skills;
  const std::vector<double> pz = world.skill_marginal();
  auto h = [&](int task, int x, int z) { return world.encoder[task][x][z] / pz[z]; };

  Theorem1Result r;
  for (int i = 0; i < N; ++i) {
    const auto& px = world.obs_probs[i];
    std::vector<double> pz_task(Z, 0.0);
    for (std::size_t x = 0; x < px.size(); ++x) {
      for (int z = 0; z < Z; ++z) pz_task[z] += px[x] * world.encoder[i][x][z];
    }

    // Other tasks' negative observations, enumerated as a mixed-radix counter.
    std::vector<int> others;
    for (int j = 0; j < N; ++j) {
      if (j != i) others.push_back(j);
    }
    for (std::size_t x = 0; x < px.size(); ++x) {
      for (int z = 0; z < Z; ++z) {
        const double pxz = px[x] * world.encoder[i][x][z];
        if (pxz == 0.0) continue;
        const double hx = h(i, static_cast<int>(x), z);
        std::vector<int> neg(others.size(), 0);
        double expect = 0.0;
        while (true) {
          double weight = 1.0, denom = hx;
          for (std::size_t n = 0; n < others.size(); ++n) {
            weight *= world.obs_probs[others[n]][neg[n]];
            denom += h(others[n], neg[n], z);
          }
          expect += weight * std::log(hx / denom);
          std::size_t n = 0;
          for (; n < others.size(); ++n) {
            if (++neg[n] < static_cast<int>(world.obs_probs[others[n]].size())) break;
            neg[n] = 0;
          }
          if (n == others.size()) break;
        }
        r.lhs -= pxz * expect / N;
      }
    }

    for (std::size_t x = 0; x < px.size(); ++x) {
      double kl = 0.0, mi = 0.0;
      for (int z = 0; z < Z; ++z) {
        const double g = world.encoder[i][x][z];
        if (g == 0.0) continue;
        kl += g * std::log(g / world.task_prior[i][z]);
        mi += g * std::log(g / pz_task[z]);
      }
      r.expected_kl += px[x] * kl / N;
      r.mi += px[x] * mi / N;
    }
  }
  r.rhs = -r.expected_kl;
  r.holds = r.lhs >= r.rhs - 1e-9 && r.mi <= r.expected_kl + 1e-9;
  return r;
}

ExpectileCheck expectile_identity_check(const std::vector<double>& samples, double eps) {
  if (samples.size() < 2) throw std::invalid_argument("expectile check needs at least 2 samples");
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("eps must lie in (0, 1)");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it, hi = *hi_it;

  auto objective = [&](double v) {
    double s = 0.0;
    for (double x : samples) {
      const double n = x - v;
      s += (n < 0.0 ? 1.0 - eps : eps) * n * n;
    }
    return s;
  };
  auto first_order = [&](double v) {
    double s = 0.0;
    for (double x : samples) s += (x < v ? 1.0 - eps : eps) * (x - v);
    return s;
  };

  ExpectileCheck out;
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = objective(c), fd = objective(d);
  for (int it = 0; it < 200 && b - a > 1e-13 * std::max(1.0, std::abs(a) + std::abs(b)); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = objective(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = objective(d);
    }
  }
  out.minimizer = 0.5 * (a + b);

  // first_order is decreasing in v, positive at lo and negative at hi
  a = lo;
  b = hi;
  for (int it = 0; it < 200 && b - a > 0.0; ++it) {
    const double m = 0.5 * (a + b);
    if (m == a || m == b) break;
    if (first_order(m) > 0.0) a = m; else b = m;
  }
  out.reference = 0.5 * (a + b);
  return out;
}

GradcheckResult gradcheck(const LossClosure& loss, const std::vector<nn::ParamStore*>& params,
                          double perturb, int max_entries, std::uint64_t seed) {
  GradcheckResult res;
  struct Entry {
    nn::ParamStore* store;
    int param;
    Eigen::Index index;
  };
  std::vector<Entry> entries;
  for (nn::ParamStore* s : params) {
    for (int p = 0; p < s->size(); ++p) {
      for (Eigen::Index i = 0; i < s->value(p).size(); ++i) entries.push_back({s, p, i});
    }
  }
  if (entries.empty()) return res;

  for (nn::ParamStore* s : params) s->zero_grad();
  {
    nn::Tape tape;
    for (nn::ParamStore* s : params) tape.track(*s);
    nn::Var l = loss(tape);
    if (!std::isfinite(l.scalar())) throw std::runtime_error("gradcheck: loss is not finite");
    tape.backward(l);
  }

  if (static_cast<int>(entries.size()) > max_entries) {
    Rng rng(seed);
    for (int i = 0; i < max_entries; ++i) {
      const std::size_t j = i + uniform_index(rng, entries.size() - i);
      std::swap(entries[i], entries[j]);
    }
    entries.resize(max_entries);
  }

  auto eval = [&]() {
    nn::Tape tape;
    return loss(tape).scalar();
  };
  for (const Entry& e : entries) {
    double& v = e.store->value(e.param).data()[e.index];
    const double saved = v;
    v = saved + perturb;
    const double up = eval();
    v = saved - perturb;
    const double down = eval();
    v = saved;
    const std::string name = e.store->name() + "/" + e.store->entry_name(e.param) + "[" +
                             std::to_string(e.index) + "]";
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("gradcheck: non-finite loss when perturbing " + name);
    }
    const double numeric = (up - down) / (2.0 * perturb);
    const double analytic = e.store->grad(e.param).data()[e.index];
    const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
    if (res.worst_entry.empty() || err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_entry = name;
    }
    ++res.checked;
  }
  return res;
}

}  // namespace hissd::oracle
