// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments select
// criteria by number, e.g. `maskdiff_acceptance 1 2 5`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "maskdiff/dataset.hpp"
#include "maskdiff/diffusion.hpp"
#include "maskdiff/manifest.hpp"
#include "maskdiff/metrics.hpp"
#include "maskdiff/pairs.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/toyset.hpp"
#include "maskdiff/trainer.hpp"
#include "metric_oracles.hpp"
#include "reference.hpp"

using namespace maskdiff;
using namespace maskdiff::testing;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kScheduleSeconds = 1.0;
constexpr double kMaxBeta = 0.999;
constexpr double kFirstAlphaBarMin = 0.999;

constexpr int kForwardDraws = 10000;
constexpr double kForwardTargetAlphaBar = 0.25;
constexpr double kForwardStdErrors = 3.0;
constexpr double kForwardSeconds = 10.0;

constexpr double kGradRelTol = 1e-3;
constexpr double kGradSeconds = 120.0;

constexpr double kAccumulationTol = 1e-6;
constexpr double kAdamRelTol = 1e-6;
constexpr double kEmaRelTol = 1e-6;

constexpr double kOracleTol = 1e-10;
constexpr double kSelfFidTol = 1e-8;
constexpr double kShiftFidTol = 0.05;
constexpr double kRankTol = 1e-12;
constexpr double kMetricSeconds = 60.0;

constexpr int kToyTrainCount = 64;
constexpr int kToyValCount = 16;
constexpr int kToyHeldOutCount = 64;
constexpr int kDiffusionSteps = 100;
constexpr int64_t kMaxOptimizerSteps = 2000;
constexpr double kToySeconds = 1800.0;
constexpr double kLossRatio = 0.5;
constexpr int kConditioningSamples = 50;
constexpr double kContrastStdErrors = 5.0;
constexpr double kFidRatio = 0.5;
constexpr uint64_t kToySeed = 2024;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

/// Collects expectations for one criterion.
struct Verdict {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& what) { notes.push_back(what); }
  bool pass() const { return failures.empty(); }
};

// ---------------------------------------------------------------------------
// 1. Schedule suite

Verdict schedule_suite() {
  Verdict v;
  const auto start = Clock::now();
  for (int steps : {10, 100, 1000}) {
    const NoiseSchedule s = cosine_schedule(steps);
    const std::string tag = "T=" + std::to_string(steps);
    v.expect(s.steps == steps && static_cast<int>(s.alpha_bar.size()) == steps, tag + ": table length");
    for (int t = 0; t < steps; ++t) {
      const double b = s.beta[static_cast<size_t>(t)];
      v.expect(b > 0.0 && b <= kMaxBeta, tag + ": beta[" + std::to_string(t) + "]=" + fmt(b) + " outside (0, 0.999]");
      if (t > 0) {
        v.expect(s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t - 1)],
                 tag + ": alpha_bar not strictly decreasing at t=" + std::to_string(t));
      }
    }
    if (steps == 1000) {
      v.expect(s.alpha_bar[0] >= kFirstAlphaBarMin, tag + ": alpha_bar[0]=" + fmt(s.alpha_bar[0], 8));
    }
    v.note(tag + " alpha_bar[0]=" + fmt(s.alpha_bar[0], 8) + " alpha_bar[T-1]=" + fmt(s.alpha_bar.back(), 4) +
           " max beta=" + fmt(*std::max_element(s.beta.begin(), s.beta.end()), 4));
  }
  const double elapsed = seconds_since(start);
  v.expect(elapsed < kScheduleSeconds, "runtime " + fmt(elapsed) + " s");
  return v;
}

// ---------------------------------------------------------------------------
// 2. Forward-process statistics

struct MomentCheck {
  double pooled_mean_z = 0.0;
  double pooled_var_z = 0.0;
  int pixels_within = 0;  // per-pixel mean and variance both within the bound
};

// Draws are [N,1,8,8]; expected per-pixel mean sqrt(ab) x0 and variance 1 - ab.
MomentCheck check_moments(const Tensor& draws, const std::vector<float>& x0, double alpha_bar) {
  const auto n = static_cast<double>(draws.dim(0));
  const size_t pixels = x0.size();
  const double var = 1.0 - alpha_bar;
  std::vector<double> sum(pixels, 0.0), sum2(pixels, 0.0);
  const auto data = draws.data();
  for (size_t i = 0; i < data.size(); ++i) {
    const size_t p = i % pixels;
    const double r = data[i] - std::sqrt(alpha_bar) * x0[p];
    sum[p] += r;
    sum2[p] += r * r;
  }
  MomentCheck out;
  double pooled_mean = 0.0, pooled_var = 0.0;
  for (size_t p = 0; p < pixels; ++p) {
    const double m = sum[p] / n;
    const double s2 = (sum2[p] - n * m * m) / (n - 1.0);
    pooled_mean += m / static_cast<double>(pixels);
    pooled_var += s2 / static_cast<double>(pixels);
    const double mean_z = m / std::sqrt(var / n);
    const double var_z = (s2 - var) / (var * std::sqrt(2.0 / (n - 1.0)));
    out.pixels_within += std::abs(mean_z) < kForwardStdErrors && std::abs(var_z) < kForwardStdErrors;
  }
  const double total = n * static_cast<double>(pixels);
  out.pooled_mean_z = pooled_mean / std::sqrt(var / total);
  out.pooled_var_z = (pooled_var - var) / (var * std::sqrt(2.0 / (total - static_cast<double>(pixels))));
  return out;
}

Verdict forward_statistics() {
  Verdict v;
  const auto start = Clock::now();
  const NoiseSchedule s = cosine_schedule(kDiffusionSteps);
  int t = 0;
  for (int k = 1; k < s.steps; ++k) {
    if (std::abs(s.alpha_bar[static_cast<size_t>(k)] - kForwardTargetAlphaBar) <
        std::abs(s.alpha_bar[static_cast<size_t>(t)] - kForwardTargetAlphaBar))
      t = k;
  }
  const double ab = s.alpha_bar[static_cast<size_t>(t)];
  std::vector<float> x0(64);
  for (size_t p = 0; p < x0.size(); ++p) x0[p] = static_cast<float>(-1.0 + 2.0 * static_cast<double>(p) / 63.0);
  std::vector<float> tiled;
  tiled.reserve(x0.size() * kForwardDraws);
  for (int i = 0; i < kForwardDraws; ++i) tiled.insert(tiled.end(), x0.begin(), x0.end());
  const Tensor clean = Tensor::from_data({kForwardDraws, 1, 8, 8}, tiled);
  v.note("T=" + std::to_string(kDiffusionSteps) + " t=" + std::to_string(t) + " alpha_bar=" + fmt(ab, 4));

  // Route 1: the stochastic Markov chain q(x_k | x_{k-1}) for k = 0..t.
  RngStream chain_rng(31);
  Tensor x = clean;
  for (int k = 0; k <= t; ++k) x = forward_step(x, k, Tensor::randn(x.shape(), chain_rng), s);
  // Route 2: one-shot sampling of the closed-form marginal.
  RngStream marginal_rng(32);
  const Tensor y = forward_marginal(clean, t, Tensor::randn(clean.shape(), marginal_rng), s);

  for (const auto& [name, draws] : {std::pair{"chain", x}, std::pair{"marginal", y}}) {
    const MomentCheck m = check_moments(draws, x0, ab);
    v.expect(std::abs(m.pooled_mean_z) < kForwardStdErrors, std::string(name) + ": mean z=" + fmt(m.pooled_mean_z, 3));
    v.expect(std::abs(m.pooled_var_z) < kForwardStdErrors, std::string(name) + ": variance z=" + fmt(m.pooled_var_z, 3));
    v.note(std::string(name) + ": mean z=" + fmt(m.pooled_mean_z, 3) + " variance z=" + fmt(m.pooled_var_z, 3) +
           " pixels within 3 SE=" + std::to_string(m.pixels_within) + "/64");
  }
  const double elapsed = seconds_since(start);
  v.expect(elapsed < kForwardSeconds, "runtime " + fmt(elapsed) + " s");
  return v;
}

// ---------------------------------------------------------------------------
// 3. Gradient checks

// Groups parameter paths into denoiser blocks, e.g. "down.0.res.conv1.weight"
// -> "down.0.res", "time.fc1.bias" -> "time".
std::string block_of(const std::string& name) {
  if (const auto pos = name.find(".res."); pos != std::string::npos) return name.substr(0, pos + 4);
  if (name.rfind("time.", 0) == 0 || name.rfind("out.", 0) == 0) return name.substr(0, name.find('.'));
  return name.substr(0, name.rfind('.'));
}

Verdict gradient_checks() {
  namespace R = maskdiff::testing::ref;
  using Arrays = std::vector<R::Array>;
  Verdict v;
  const auto start = Clock::now();
  RngStream rng(41);
  double worst = 0.0;
  auto record = [&](const std::string& name, const GradCheckReport& r) {
    worst = std::max(worst, r.max_rel_error);
    v.expect(r.max_rel_error < kGradRelTol,
             name + ": rel " + fmt(r.max_rel_error, 3) + " at " + (r.worst_input.empty() ? "?" : r.worst_input));
  };
  auto op = [&](const std::string& name, const std::vector<Tensor>& inputs, const std::function<Tensor()>& f,
                const std::function<R::Array(const Arrays&)>& reference) {
    const auto proj = random_projection(f().shape(), rng);
    record(name, gradcheck(
                     inputs, {}, [&] { return proj(f()); }, [&](const Arrays& a) { return proj(reference(a)); }, rng));
  };

  int op_checks = 0;
  {
    Tensor a = random_leaf({2, 4, 8, 8}, rng), b = random_leaf({2, 4, 8, 8}, rng);
    Tensor bias = random_leaf({2, 4}, rng);
    Tensor xin = random_leaf({2, 12}, rng), w = random_leaf({5, 12}, rng), lb = random_leaf({5}, rng);
    Tensor k3 = random_leaf({4, 4, 3, 3}, rng, 0.3f), cb = random_leaf({4}, rng);
    Tensor gamma = random_leaf({4}, rng), beta = random_leaf({4}, rng);
    Tensor small = random_leaf({2, 4, 4, 4}, rng);
    Tensor left = random_leaf({2, 2, 8, 8}, rng), right = random_leaf({2, 2, 8, 8}, rng);
    op("add", {a, b}, [&] { return add(a, b); }, [](const Arrays& x) { return R::add(x[0], x[1]); });
    op("mul", {a, b}, [&] { return mul(a, b); }, [](const Arrays& x) { return R::mul(x[0], x[1]); });
    op("silu", {a}, [&] { return silu(a); }, [](const Arrays& x) { return R::silu(x[0]); });
    op("add_channel_bias", {a, bias}, [&] { return add_channel_bias(a, bias); },
       [](const Arrays& x) { return R::add_channel_bias(x[0], x[1]); });
    op("linear", {xin, w, lb}, [&] { return linear(xin, w, lb); },
       [](const Arrays& x) { return R::linear(x[0], x[1], x[2]); });
    for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}}) {
      op("conv2d stride " + std::to_string(stride), {a, k3, cb}, [&, stride, pad] { return conv2d(a, k3, cb, stride, pad); },
         [stride, pad](const Arrays& x) { return R::conv2d(x[0], x[1], x[2], stride, pad); });
    }
    for (int groups : {1, 2, 4}) {
      op("group_norm groups " + std::to_string(groups), {a, gamma, beta},
         [&, groups] { return group_norm(a, groups, gamma, beta); },
         [groups](const Arrays& x) { return R::group_norm(x[0], groups, x[1], x[2]); });
    }
    op("upsample_nearest", {small}, [&] { return upsample_nearest(small, 2); },
       [](const Arrays& x) { return R::upsample_nearest(x[0], 2); });
    op("concat_channels", {left, right}, [&] { return concat_channels(left, right); },
       [](const Arrays& x) { return R::concat_channels(x[0], x[1]); });
    op("spatial_mean", {a}, [&] { return spatial_mean(a); }, [](const Arrays& x) { return R::spatial_mean(x[0]); });
    op("mse_loss", {a, b}, [&] { return mse_loss(a, b); },
       [](const Arrays& x) { return R::Array{{}, {R::mse(x[0], x[1])}}; });
    op_checks = 15;
  }

  // Every denoiser block, probed through the full network so each block sees
  // realistic upstream activations and downstream gradients.
  const UNetConfig c = tiny_config();
  DenoiserParams p = randomized_params(c, rng);
  Tensor input = Tensor::randn({2, c.in_channels, 8, 8}, rng);
  input.set_requires_grad(true);
  const std::vector<int> timesteps{3, 41};
  const Tensor target = Tensor::randn({2, 1, 8, 8}, rng);
  const R::Array target_ref = R::from(target);
  std::map<std::string, std::vector<std::string>> blocks;
  for (const auto& [name, t] : p) blocks[block_of(name)].push_back(name);
  blocks["input"] = {};
  for (const auto& [block, members] : blocks) {
    std::vector<Tensor> inputs;
    std::vector<std::string> names;
    if (block == "input") {
      inputs.push_back(input);
      names.push_back("input");
    }
    for (const auto& n : members) {
      inputs.push_back(p.at(n));
      names.push_back(n);
    }
    const R::Params base = R::from(p);
    const R::Array input_ref = R::from(input);
    record("denoiser block " + block,
           gradcheck(
               inputs, names, [&] { return mse_loss(denoise(p, input, timesteps, c), target); },
               [&](const Arrays& vals) {
                 R::Params rp = base;
                 R::Array x = input_ref;
                 for (size_t i = 0; i < vals.size(); ++i) {
                   if (names[i] == "input")
                     x = vals[i];
                   else
                     rp[names[i]] = vals[i];
                 }
                 return R::mse(R::denoise(rp, x, timesteps, c), target_ref);
               },
               rng, 1e-6, 16));
  }

  // The full training objective with respect to every parameter.
  const NoiseSchedule sched = cosine_schedule(50);
  const TrainBatch batch = random_batch(2, 8, rng);
  const NoiseDraw draw = draw_noise(batch.images.shape(), sched, rng);
  std::vector<Tensor> all;
  std::vector<std::string> all_names;
  for (auto& [name, t] : p) {
    all.push_back(t);
    all_names.push_back(name);
  }
  const R::Array x0 = R::from(batch.images), mask = R::from(batch.masks), eps = R::from(draw.eps);
  record("training_loss",
         gradcheck(
             all, all_names, [&] { return noise_prediction_loss(make_predictor(p, c), batch, draw, sched); },
             [&](const Arrays& vals) {
               R::Params rp;
               for (size_t i = 0; i < vals.size(); ++i) rp.emplace(all_names[i], vals[i]);
               return R::noise_prediction_loss(rp, c, x0, mask, eps, draw.timesteps, sched.alpha_bar);
             },
             rng, 1e-6, 16));

  v.note(std::to_string(op_checks) + " op checks, " + std::to_string(blocks.size()) +
         " denoiser blocks, training_loss; worst rel error " + fmt(worst, 3));
  const double elapsed = seconds_since(start);
  v.expect(elapsed < kGradSeconds, "runtime " + fmt(elapsed) + " s");
  return v;
}

// ---------------------------------------------------------------------------
// 4. Optimizer suite

DenoiserParams scalar_params(float value) {
  DenoiserParams p;
  p.insert("theta", Tensor::from_data({1}, {value}, true));
  return p;
}

double max_abs_diff(const DenoiserParams& a, const DenoiserParams& b) {
  double m = 0.0;
  for (const auto& [name, t] : a) {
    const auto& u = b.at(name);
    for (size_t i = 0; i < t.data().size(); ++i) m = std::max(m, std::abs(static_cast<double>(t.data()[i]) - u.data()[i]));
  }
  return m;
}

std::vector<TrainingPair> random_pairs(int n, int size, RngStream& rng) {
  std::vector<TrainingPair> out;
  for (int i = 0; i < n; ++i) {
    const TrainBatch b = random_batch(1, size, rng);
    out.push_back({"p" + std::to_string(i), "mono", {b.images.data().begin(), b.images.data().end()},
                   {b.masks.data().begin(), b.masks.data().end()}});
  }
  return out;
}

Verdict optimizer_suite() {
  Verdict v;
  // Adam: the first bias-corrected step is lr * g / (|g| + eps).
  for (double lr : {1e-2, 5e-4}) {
    for (float g : {0.3f, -2.0f, 1e-3f}) {
      DenoiserParams p = scalar_params(1.0f);
      p.at("theta").mutable_grad()[0] = g;
      OptimizerState s;
      const AdamHyper h{lr, 0.9, 0.999, 1e-8};
      adam_step(p, s, h);
      const double expect = 1.0 - lr * g / (std::abs(g) + h.eps);
      const double got = p.at("theta").data()[0];
      v.expect(std::abs(got - expect) <= kAdamRelTol * std::abs(expect),
               "adam first step lr=" + fmt(lr) + " g=" + fmt(g) + ": " + fmt(got, 9) + " vs " + fmt(expect, 9));
    }
  }

  // Accumulation: two half batches scaled by 1/2 versus the fused batch, at
  // the gradient level and after whole training runs.
  {
    RngStream rng(43);
    const UNetConfig c = tiny_config();
    const NoiseSchedule sched = cosine_schedule(20);
    DenoiserParams p = randomized_params(c, rng);
    const TrainBatch b = random_batch(4, 8, rng);
    auto half = [&](const Tensor& t, int h) {
      const int64_t per = t.numel() / 2;
      return Tensor::from_data({2, 1, 8, 8}, {t.data().begin() + h * per, t.data().begin() + (h + 1) * per});
    };
    RngStream fused_rng(9), acc_rng(9);
    p.zero_grad();
    training_loss(p, c, b, sched, fused_rng).backward();
    std::map<std::string, std::vector<float>> fused;
    for (const auto& [name, t] : p) fused[name] = {t.grad().begin(), t.grad().end()};
    p.zero_grad();
    for (int h = 0; h < 2; ++h) {
      const TrainBatch part{half(b.images, h), half(b.masks, h), {}};
      scale(training_loss(p, c, part, sched, acc_rng), 0.5f).backward();
    }
    double worst = 0.0;
    for (const auto& [name, t] : p)
      for (size_t i = 0; i < t.grad().size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(t.grad()[i]) - fused[name][i]));
    v.expect(worst <= kAccumulationTol, "gradient accumulation max diff " + fmt(worst, 3));

    const auto train_set = random_pairs(4, 8, rng);
    TrainHooks hooks;
    hooks.validator = [](const DenoiserParams&, int epoch) { return 1.0 / epoch; };
    TrainConfig whole;
    whole.batch_size = 4;
    whole.max_epochs = 3;
    whole.seed = 11;
    TrainConfig split = whole;
    split.batch_size = 2;
    split.accumulation_steps = 2;
    const TrainResult ra = train(train_set, {}, c, whole, sched, hooks);
    const TrainResult rb = train(train_set, {}, c, split, sched, hooks);
    const double param_diff = max_abs_diff(ra.best.params, rb.best.params);
    v.expect(ra.optimizer_steps == rb.optimizer_steps, "accumulated run took a different number of steps");
    v.expect(param_diff <= kAccumulationTol, "trainer accumulation max param diff " + fmt(param_diff, 3));
    v.note("accumulation: gradient diff " + fmt(worst, 3) + ", parameter diff after 3 steps " + fmt(param_diff, 3));
  }

  // EMA: with constant parameters the shadow closes the gap geometrically.
  {
    const double d = 0.995;
    DenoiserParams params = scalar_params(3.0f);
    DenoiserParams ema = scalar_params(-1.0f);
    double worst = 0.0;
    for (int k = 1; k <= 200; ++k) {
      ema_update(ema, params, d);
      const double expect = 3.0 + std::pow(d, k) * (-1.0 - 3.0);
      // Relative to the initial gap, since the shadow itself crosses zero.
      worst = std::max(worst, std::abs(ema.at("theta").data()[0] - expect) / 4.0);
    }
    v.expect(worst <= kEmaRelTol, "ema geometric form rel error " + fmt(worst, 3));
    v.note("ema: 200 updates at decay 0.995, max error relative to the initial gap " + fmt(worst, 3));
  }

  // Early stopping on a monotonically worsening validation series, both for
  // the counter and for the training loop.
  for (int patience : {1, 3, 10}) {
    EarlyStopping es(patience);
    int epochs = 0;
    for (int e = 1; e <= 100; ++e) {
      ++epochs;
      if (es.update(1.0 + e)) break;
    }
    v.expect(epochs == patience + 1, "early stopping patience " + std::to_string(patience) + " ran " +
                                         std::to_string(epochs) + " epochs");
  }
  {
    RngStream rng(44);
    const auto pairs = random_pairs(2, 8, rng);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.patience_epochs = 10;
    cfg.max_epochs = 100;
    TrainHooks hooks;
    hooks.validator = [](const DenoiserParams&, int epoch) { return static_cast<double>(epoch); };
    const TrainResult r = train(pairs, {}, tiny_config(), cfg, cosine_schedule(10), hooks);
    v.expect(r.epochs_run == cfg.patience_epochs + 1, "training loop with patience 10 ran " +
                                                          std::to_string(r.epochs_run) + " epochs");
    v.note("training loop stopped after " + std::to_string(r.epochs_run) + " epochs with patience 10");
  }
  return v;
}

// ---------------------------------------------------------------------------
// 5. Metric oracles

Verdict metric_oracles() {
  Verdict v;
  const auto start = Clock::now();
  RngStream rng(51);
  double fid_gap = 0.0, kid_gap = 0.0, self_fid = 0.0;
  for (int dim = 1; dim <= 6; ++dim) {
    for (int n = 2; n <= 8; ++n) {
      const FeatureSet a = random_features(n, dim, rng);
      const FeatureSet b = random_features(n, dim, rng, 0.5);
      fid_gap = std::max(fid_gap, std::abs(fid(a, b) - naive_fid(a, b)));
      self_fid = std::max(self_fid, std::abs(fid(a, a)));
      // One full-size subset is a permutation of each set, so kid equals the
      // unbiased statistic on the whole sets.
      RngStream krng(static_cast<uint64_t>(dim * 100 + n));
      kid_gap = std::max(kid_gap, std::abs(kid(a, b, n, 1, krng).mean - naive_mmd2(a, b)));
      kid_gap = std::max(kid_gap, std::abs(mmd2_unbiased(a.rows, b.rows) - naive_mmd2(a, b)));
    }
  }
  v.expect(fid_gap < kOracleTol, "fid vs brute force " + fmt(fid_gap, 3));
  v.expect(kid_gap < kOracleTol, "kid vs brute force " + fmt(kid_gap, 3));
  v.expect(self_fid < kSelfFidTol, "fid(a, a) " + fmt(self_fid, 3));

  const FeatureSet big_a = random_features(50000, 2, rng);
  const FeatureSet big_b = random_features(50000, 2, rng, 1.0);
  const double shift = fid(big_a, big_b);
  v.expect(std::abs(shift - 1.0) < kShiftFidTol, "unit mean-shift fid " + fmt(shift));

  const FeatureSet same_a = random_features(400, 4, rng), same_b = random_features(400, 4, rng);
  RngStream krng(52);
  const KidResult same = kid(same_a, same_b, 100, 100, krng);
  v.expect(std::abs(same.mean) < 3.0 * same.std, "same-distribution kid " + fmt(same.mean) + " +- " + fmt(same.std));

  double auroc_gap = 0.0, ap_gap = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const size_t n = 2 + rng.uniform_int(9);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.uniform_int(5)) / 4.0;
      y[i] = static_cast<int>(rng.uniform_int(2));
    }
    y[0] = 0;
    y[1] = 1;
    auroc_gap = std::max(auroc_gap, std::abs(auroc(s, y) - pair_auroc(s, y)));
    ap_gap = std::max(ap_gap, std::abs(average_precision(s, y) - threshold_ap(s, y)));
  }
  v.expect(auroc_gap < kRankTol, "auroc vs pair enumeration " + fmt(auroc_gap, 3));
  v.expect(ap_gap < kRankTol, "average precision vs threshold enumeration " + fmt(ap_gap, 3));

  v.note("fid gap " + fmt(fid_gap, 3) + ", kid gap " + fmt(kid_gap, 3) + ", fid(a,a) " + fmt(self_fid, 3) +
         ", shift fid " + fmt(shift) + ", same kid " + fmt(same.mean, 3) + " +- " + fmt(same.std, 3));
  const double elapsed = seconds_since(start);
  v.expect(elapsed < kMetricSeconds, "runtime " + fmt(elapsed) + " s");
  return v;
}

// ---------------------------------------------------------------------------
// 6. Mask pipeline

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict mask_pipeline() {
  Verdict v;
  const ClassCatalog catalog = ClassCatalog::standard();
  const auto toys = generate_toyset(64, 61, catalog);
  int64_t checked_pixels = 0;
  size_t feature_defect_total = 0;
  for (const auto& s : toys) {
    const AnnotationMap& a = s.annotation;
    const ConditioningMask bg = background_mask(a, catalog);
    bool complement = bg.width == a.width && bg.height == a.height;
    std::set<int> defects;
    for (size_t i = 0; i < a.labels.size(); ++i) {
      const int label = a.labels[i];
      const bool foreground = catalog.kind(label) != ClassKind::Background;
      complement = complement && (bg.bits[i] == (foreground ? 0 : 1));
      if (catalog.kind(label) == ClassKind::Defect) defects.insert(label);
      ++checked_pixels;
    }
    v.expect(complement, s.id + ": background mask is not the complement of foreground pixels");

    const auto fd = feature_defect_masks(a, catalog);
    feature_defect_total += fd.size();
    v.expect(fd.size() == defects.size(), s.id + ": " + std::to_string(fd.size()) + " feature-defect masks for " +
                                              std::to_string(defects.size()) + " defect classes");
    auto it = defects.begin();
    for (size_t k = 0; k < fd.size() && it != defects.end(); ++k, ++it) {
      bool exact = fd[k].defect_class == *it;
      for (size_t i = 0; i < a.labels.size(); ++i) {
        const int label = a.labels[i];
        const bool on = catalog.kind(label) == ClassKind::Feature || label == *it;
        exact = exact && (fd[k].bits[i] == (on ? 1 : 0));
      }
      v.expect(exact, s.id + ": feature-defect mask " + std::to_string(k) + " has wrong pixels");
    }
  }

  // Real toy images plus synthetic images paired to them, written to disk and
  // split into a manifest.
  const fs::path dir = fs::temp_directory_path() / "maskdiff_acceptance_masks";
  auto build = [&]() {
    fs::remove_all(dir);
    write_toyset((dir / "real").string(), 64, 61);
    write_toyset((dir / "synthetic").string(), 96, 62);
    std::vector<ImageEntry> entries;
    for (int i = 0; i < 64; ++i) {
      char id[16];
      std::snprintf(id, sizeof id, "toy_%04d", i);
      entries.push_back({std::string("real_") + id, (dir / "real" / "images" / (std::string(id) + ".pgm")).string(),
                         (dir / "real" / "annotations" / (std::string(id) + ".pgm")).string(), ""});
    }
    for (int i = 0; i < 96; ++i) {
      char id[16], paired[16];
      std::snprintf(id, sizeof id, "toy_%04d", i);
      std::snprintf(paired, sizeof paired, "toy_%04d", (i * 37) % 64);
      entries.push_back({std::string("syn_") + id, (dir / "synthetic" / "images" / (std::string(id) + ".pgm")).string(),
                         (dir / "synthetic" / "annotations" / (std::string(id) + ".pgm")).string(),
                         std::string("real_") + paired});
    }
    const DatasetManifest m = build_manifest(entries, catalog, kToyImageSize);
    const DatasetManifest split = split_manifest(m, {0.6, 0.2, 0.2}, 63);
    split.save((dir / "manifest.jsonl").string());
    return std::pair{split, slurp(dir / "manifest.jsonl")};
  };
  const auto [first, first_bytes] = build();
  const auto [second, second_bytes] = build();
  fs::remove_all(dir);

  int synthetic = 0;
  std::map<Split, int> counts;
  for (const auto& r : first.records) {
    ++counts[r.split];
    v.expect(r.split != Split::Unassigned, r.id + " has no split");
    if (r.origin != Origin::Synthetic) continue;
    ++synthetic;
    const ManifestRecord* real = first.find(r.paired_real_id);
    v.expect(real != nullptr, r.id + ": paired record " + r.paired_real_id + " missing");
    if (real) {
      v.expect(real->split == r.split, r.id + " in " + to_string(r.split) + " but its pair " + real->id + " in " +
                                           to_string(real->split));
      v.expect(real->category == r.category, r.id + " category differs from its pair");
    }
  }
  v.expect(synthetic == 96, "expected 96 synthetic records, found " + std::to_string(synthetic));
  v.expect(first_bytes == second_bytes && first == second, "manifests from the same seed differ");
  v.note("64 images, " + std::to_string(checked_pixels) + " pixels, " + std::to_string(feature_defect_total) +
         " feature-defect masks; split train/val/test " + std::to_string(counts[Split::Train]) + "/" +
         std::to_string(counts[Split::Val]) + "/" + std::to_string(counts[Split::Test]) + " with " +
         std::to_string(synthetic) + " synthetic records; manifest " + std::to_string(first_bytes.size()) + " bytes");
  return v;
}

// ---------------------------------------------------------------------------
// 7 and 8. End-to-end toy reproduction

struct ToyPairs {
  std::vector<ToySample> samples;
  std::vector<TrainingPair> pairs;  // first feature-defect mask of each sample
};

ToyPairs toy_pairs(int n, uint64_t seed) {
  const ClassCatalog catalog = ClassCatalog::standard();
  ToyPairs out;
  out.samples = generate_toyset(n, seed, catalog);
  for (const auto& s : out.samples) {
    auto p = make_pairs(s.id, to_string(s.category), s.image, s.annotation, catalog, kToyImageSize,
                        MaskSelection::FeatureDefect);
    if (p.empty()) throw std::runtime_error("toy sample without defect: " + s.id);
    out.pairs.push_back(p.front());
  }
  return out;
}

Tensor mask_tensor(const TrainingPair& p) {
  return Tensor::from_data({1, 1, kToyImageSize, kToyImageSize}, p.mask);
}

GrayImage to_image(const Tensor& t) {
  return GrayImage{static_cast<int>(t.dim(3)), static_cast<int>(t.dim(2)), to_uint8(t.data())};
}

struct ToyRun {
  TrainResult result;
  std::string checkpoint_id;
  std::vector<Tensor> contrast_samples;
  std::vector<Tensor> heldout_samples;
  Tensor pair_a, pair_b;
  size_t contrast_index = 0;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
};

ToyRun run_toy(const ToyPairs& train_data, const ToyPairs& val_data, const ToyPairs& heldout) {
  ToyRun run;
  const auto start = Clock::now();
  const UNetConfig unet;
  TrainConfig cfg;
  cfg.max_steps = kMaxOptimizerSteps;
  cfg.max_epochs = static_cast<int>(kMaxOptimizerSteps);
  cfg.seed = kToySeed;
  const NoiseSchedule sched = cosine_schedule(kDiffusionSteps);
  TrainHooks hooks;
  hooks.on_epoch = [](int epoch, double train_loss, double val_loss) {
    if (epoch % 25 == 0) std::cerr << "    epoch " << epoch << " train " << train_loss << " val " << val_loss << "\n";
  };
  run.result = train(train_data.pairs, val_data.pairs, unet, cfg, sched, hooks);
  run.train_seconds = seconds_since(start);
  run.checkpoint_id = run.result.best.id();

  const NoisePredictor predictor = make_predictor(run.result.best.ema_params, unet);
  const RngStream root(kToySeed);

  // The held-out mask with the largest defect area.
  size_t best_area = 0;
  for (size_t i = 0; i < heldout.samples.size(); ++i) {
    const int cls = std::stoi(heldout.pairs[i].id.substr(heldout.pairs[i].id.rfind('-') + 1));
    const auto& labels = heldout.samples[i].annotation.labels;
    const auto area = static_cast<size_t>(std::count(labels.begin(), labels.end(), cls));
    if (area > best_area) {
      best_area = area;
      run.contrast_index = i;
    }
  }
  run.contrast_samples = sample_batch(predictor, {mask_tensor(heldout.pairs[run.contrast_index])},
                                      kConditioningSamples, sched, root.substream("contrast"));

  std::vector<Tensor> masks;
  for (const auto& p : heldout.pairs) masks.push_back(mask_tensor(p));
  run.heldout_samples = sample_batch(predictor, masks, 1, sched, root.substream("heldout"));

  RngStream same_a = root.substream("pair"), same_b = root.substream("pair");
  run.pair_a = sample(predictor, masks[0], sched, same_a);
  run.pair_b = sample(predictor, masks[1], sched, same_b);
  run.total_seconds = seconds_since(start);

  // Optional artifacts for inspection.
  if (const char* dump = std::getenv("MASKDIFF_ACCEPTANCE_DUMP")) {
    const fs::path root_dir(dump);
    save_checkpoint(run.result.best, (root_dir / "checkpoint").string());
    fs::create_directories(root_dir / "heldout");
    fs::create_directories(root_dir / "generated");
    fs::create_directories(root_dir / "contrast");
    for (size_t i = 0; i < heldout.samples.size(); ++i) {
      write_pgm((root_dir / "heldout" / (heldout.samples[i].id + ".pgm")).string(), heldout.samples[i].image);
      write_pgm((root_dir / "generated" / (heldout.samples[i].id + ".pgm")).string(), to_image(run.heldout_samples[i]));
    }
    for (size_t i = 0; i < run.contrast_samples.size(); ++i)
      write_pgm((root_dir / "contrast" / ("s" + std::to_string(i) + ".pgm")).string(), to_image(run.contrast_samples[i]));
  }
  return run;
}

struct ToyData {
  ToyPairs train, val, heldout;
};

const ToyData& toy_data() {
  static const ToyData data{toy_pairs(kToyTrainCount, 71), toy_pairs(kToyValCount, 72),
                            toy_pairs(kToyHeldOutCount, 73)};
  return data;
}

Verdict toy_reproduction(const ToyRun& run) {
  Verdict v;
  const ToyData& data = toy_data();
  const ClassCatalog catalog = ClassCatalog::standard();
  const TrainResult& r = run.result;

  v.expect(r.optimizer_steps <= kMaxOptimizerSteps, "optimizer steps " + std::to_string(r.optimizer_steps));
  v.expect(!r.aborted, "training aborted: " + r.abort_reason);
  v.expect(run.total_seconds <= kToySeconds, "wall time " + fmt(run.total_seconds) + " s");
  v.note("trained " + std::to_string(r.epochs_run) + " epochs, " + std::to_string(r.optimizer_steps) +
         " steps in " + fmt(run.train_seconds, 4) + " s; best epoch " + std::to_string(r.best.epoch) +
         " val " + fmt(r.best.best_val_loss, 4) + "; checkpoint " + run.checkpoint_id);

  // (a) Training loss: mean of the last epoch against the first epoch.
  if (r.train_history.empty()) {
    v.expect(false, "no training history");
  } else {
    const double first = r.train_history.front(), last = r.train_history.back();
    v.expect(last < kLossRatio * first, "(a) training loss " + fmt(last, 4) + " vs initial " + fmt(first, 4));
    v.note("(a) training loss " + fmt(first, 4) + " -> " + fmt(last, 4) + " (ratio " + fmt(last / first, 3) + ")");
  }

  // (b) Defect pixels come out darker than feature pixels under one mask.
  {
    const ToySample& s = data.heldout.samples[run.contrast_index];
    const TrainingPair& p = data.heldout.pairs[run.contrast_index];
    const int cls = std::stoi(p.id.substr(p.id.rfind('-') + 1));
    std::vector<double> diffs;
    for (const Tensor& img : run.contrast_samples) {
      double defect = 0.0, feature = 0.0;
      int nd = 0, nf = 0;
      for (size_t i = 0; i < s.annotation.labels.size(); ++i) {
        const int label = s.annotation.labels[i];
        if (label == cls) {
          defect += img.data()[i];
          ++nd;
        } else if (catalog.kind(label) == ClassKind::Feature) {
          feature += img.data()[i];
          ++nf;
        }
      }
      diffs.push_back(defect / nd - feature / nf);
    }
    const auto n = static_cast<double>(diffs.size());
    double mean = 0.0, var = 0.0;
    for (double d : diffs) mean += d / n;
    for (double d : diffs) var += (d - mean) * (d - mean) / (n - 1.0);
    const double se = std::sqrt(var / n);
    const double z = se > 0.0 ? -mean / se : (mean < 0.0 ? INFINITY : 0.0);
    v.expect(diffs.size() == kConditioningSamples && z > kContrastStdErrors,
             "(b) defect minus feature intensity " + fmt(mean, 4) + " (SE " + fmt(se, 3) + ")");
    v.note("(b) mask " + p.id + ": defect minus feature intensity " + fmt(mean, 4) + ", " + fmt(z, 4) +
           " standard errors over " + std::to_string(diffs.size()) + " samples");
  }

  // (c) FID against held-out toy images: generated versus pure noise.
  {
    const PooledDenoiserEncoder encoder(r.best.ema_params, r.best.unet, run.checkpoint_id);
    std::vector<GrayImage> real, generated, noise;
    for (const auto& s : data.heldout.samples) real.push_back(s.image);
    for (const auto& t : run.heldout_samples) generated.push_back(to_image(t));
    RngStream noise_rng(kToySeed + 1);
    for (size_t i = 0; i < real.size(); ++i) {
      std::vector<float> px(static_cast<size_t>(kToyImageSize * kToyImageSize));
      for (float& x : px) x = static_cast<float>(noise_rng.normal());
      noise.push_back(GrayImage{kToyImageSize, kToyImageSize, to_uint8(px)});
    }
    const FeatureSet fr = extract_features(real, encoder), fg = extract_features(generated, encoder),
                     fn = extract_features(noise, encoder);
    const double fid_gen = fid(fg, fr), fid_noise = fid(fn, fr);
    v.expect(fid_gen < kFidRatio * fid_noise, "(c) fid generated " + fmt(fid_gen) + " vs noise " + fmt(fid_noise));
    v.note("(c) fid generated " + fmt(fid_gen, 5) + ", noise " + fmt(fid_noise, 5) + " (ratio " +
           fmt(fid_gen / fid_noise, 3) + ", " + encoder.identity() + ")");
  }

  // (d) The mask changes the sample when the noise is held fixed.
  {
    double l2 = 0.0;
    for (size_t i = 0; i < run.pair_a.data().size(); ++i) {
      const double d = run.pair_a.data()[i] - run.pair_b.data()[i];
      l2 += d * d;
    }
    l2 = std::sqrt(l2);
    v.expect(l2 > 0.0, "(d) samples from two masks with one seed are identical");
    v.note("(d) L2 between two masks with one seed " + fmt(l2, 4));
  }
  return v;
}

bool same_tensors(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].shape() != b[i].shape() || !std::equal(a[i].data().begin(), a[i].data().end(), b[i].data().begin()))
      return false;
  }
  return true;
}

bool same_params(const DenoiserParams& a, const DenoiserParams& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    if (!b.contains(name)) return false;
    const auto& u = b.at(name);
    if (t.shape() != u.shape() || !std::equal(t.data().begin(), t.data().end(), u.data().begin())) return false;
  }
  return true;
}

Verdict determinism(const ToyRun& first, const ToyRun& second) {
  Verdict v;
  v.expect(first.checkpoint_id == second.checkpoint_id,
           "checkpoint ids " + first.checkpoint_id + " vs " + second.checkpoint_id);
  v.expect(same_params(first.result.best.params, second.result.best.params), "parameters differ");
  v.expect(same_params(first.result.best.ema_params, second.result.best.ema_params), "EMA parameters differ");
  v.expect(first.result.best.optimizer == second.result.best.optimizer, "optimizer state differs");
  v.expect(first.result.train_history == second.result.train_history, "training histories differ");
  v.expect(first.result.val_history == second.result.val_history, "validation histories differ");
  v.expect(same_tensors(first.contrast_samples, second.contrast_samples), "conditioning samples differ");
  v.expect(same_tensors(first.heldout_samples, second.heldout_samples), "held-out samples differ");
  v.expect(same_tensors({first.pair_a, first.pair_b}, {second.pair_a, second.pair_b}), "paired samples differ");
  v.note("checkpoint " + first.checkpoint_id + "; " +
         std::to_string(first.contrast_samples.size() + first.heldout_samples.size() + 2) +
         " sampled images compared bit-exactly; rerun took " + fmt(second.total_seconds, 4) + " s");
  return v;
}

struct Criterion {
  int number;
  std::string title;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    try {
      selected.insert(std::stoi(argv[i]));
    } catch (const std::exception&) {
      std::cerr << "usage: " << argv[0] << " [criterion number]...\n";
      return 2;
    }
  }
  std::optional<ToyRun> first_run;
  auto toy_run = [&]() -> const ToyRun& {
    if (!first_run) first_run = run_toy(toy_data().train, toy_data().val, toy_data().heldout);
    return *first_run;
  };
  const std::vector<Criterion> criteria{
      {1, "schedule suite", schedule_suite},
      {2, "forward-process statistics", forward_statistics},
      {3, "gradient checks", gradient_checks},
      {4, "optimizer suite", optimizer_suite},
      {5, "metric oracles", metric_oracles},
      {6, "mask pipeline", mask_pipeline},
      {7, "end-to-end toy reproduction", [&] { return toy_reproduction(toy_run()); }},
      {8, "determinism", [&] {
         const ToyRun& first = toy_run();
         const ToyRun second = run_toy(toy_data().train, toy_data().val, toy_data().heldout);
         return determinism(first, second);
       }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.number)) continue;
    const auto start = Clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v.expect(false, std::string("exception: ") + e.what());
    }
    const double elapsed = seconds_since(start);
    for (const auto& n : v.notes) std::cout << "    " << n << "\n";
    for (const auto& f : v.failures) std::cout << "    failed: " << f << "\n";
    std::cout << (v.pass() ? "PASS" : "FAIL") << " criterion " << c.number << ": " << c.title << " ("
              << fmt(elapsed, 4) << " s)" << std::endl;
    failed += !v.pass();
  }
  return failed == 0 ? 0 : 1;
}
