// One PASS/FAIL line per acceptance criterion. Arguments select criteria by
// number; no arguments runs all nine. Exit status is 0 only if every
// selected criterion passes.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pvgc/backbone.hpp"
#include "pvgc/capsule.hpp"
#include "pvgc/checkpoint.hpp"
#include "pvgc/commands.hpp"
#include "pvgc/data.hpp"
#include "pvgc/graph.hpp"
#include "pvgc/metrics.hpp"
#include "pvgc/model.hpp"
#include "pvgc/run_config.hpp"
#include "pvgc/train.hpp"
#include "pvgc/verification.hpp"

using namespace pvgc;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [failed]");
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::vector<double> normals(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

Outcome gradient_integrity() {
  Outcome o;
  auto config = parse_run_config_text("", "acceptance", {});
  std::ostringstream out, err;
  const auto t0 = std::chrono::steady_clock::now();
  const int code = run_gradcheck(config, all_op_checks(), out, err);
  const double elapsed = seconds_since(t0);
  std::cout << out.str() << err.str();
  o.require(code == kExitOk, "gradcheck exit " + std::to_string(code));
  o.require(config.gradcheck_instances >= 20, std::to_string(config.gradcheck_instances) + " instances per op");
  o.require(elapsed < 300.0, fmt(elapsed) + " s");
  return o;
}

Outcome knn_oracle() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 63, d = 1 + rng() % 8, k = 1 + rng() % 9, dil = 1 + rng() % 2;
    auto x = normals(n * d, rng);
    auto got = knn_dilated(x, n, d, k, dil);
    auto want = oracle::knn_bruteforce(x, n, d, k, dil);
    if (got.neighbors != want.neighbors || got.indices != want.indices) ++mismatches;
  }
  o.require(mismatches == 0, "200 random instances, " + std::to_string(mismatches) + " mismatches");

  auto equal = knn_dilated(std::vector<double>(5, 0.5), 5, 1, 2, 1);
  o.require(equal.indices == std::vector<std::size_t>{1, 2, 0, 2, 0, 1, 0, 1, 0, 1}, "all-equal features");
  auto line = knn_dilated(std::vector<double>{0, 1, 3}, 3, 1, 1, 1);
  o.require(line.indices == std::vector<std::size_t>{1, 0, 1}, "[[0],[1],[3]] K=1");
  auto stride = knn_dilated(std::vector<double>{0, 1, 2, 3, 4, 5, 6}, 7, 1, 3, 2);
  o.require(std::vector<std::size_t>(stride.row(0).begin(), stride.row(0).end()) == std::vector<std::size_t>{1, 3, 5},
            "dilation 2 picks ranks 0, 2, 4");

  // Integer grids produce many equal distances.
  std::size_t tie_mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 30, d = 1 + rng() % 3, k = 1 + rng() % 9, dil = 1 + rng() % 2;
    std::vector<double> x(n * d);
    for (auto& v : x) v = static_cast<double>(rng() % 3);
    auto got = knn_dilated(x, n, d, k, dil);
    auto want = oracle::knn_bruteforce(x, n, d, k, dil);
    if (got.neighbors != want.neighbors || got.indices != want.indices) ++tie_mismatches;
  }
  o.require(tie_mismatches == 0, "100 tie-heavy instances, " + std::to_string(tie_mismatches) + " mismatches");
  return o;
}

Outcome closed_form_losses() {
  Outcome o;
  PrecisionScope f64(Precision::f64);
  const MarginParams table{0.9, 0.1, 0.5};
  const std::vector<std::size_t> zero{0};
  const double a = margin_loss(Tensor({1, 2}, {0.4, 0.1}), zero, table).item();
  const double b = margin_loss(Tensor({1, 2}, {0.9, 0.6}), zero, table).item();
  o.require(std::abs(a - 0.25) <= 1e-12, "margin (0.4, 0.1) = " + fmt(a));
  o.require(std::abs(b - 0.125) <= 1e-12, "margin (0.9, 0.6) = " + fmt(b));
  const double ce = cross_entropy(Tensor::zeros({1, 7}), std::vector<std::size_t>{3}).item();
  o.require(std::abs(ce - std::log(7.0)) <= 1e-9, "uniform 7-way cross-entropy = " + fmt(ce));
  return o;
}

Outcome capsule_invariants() {
  Outcome o;
  PrecisionScope f64(Precision::f64);
  std::mt19937_64 rng(44);
  const std::size_t count = 10000, d = 16;
  std::vector<double> raw(count * d);
  for (std::size_t i = 0; i < count; ++i) {
    // Scales from 1e-3 to 1e3 cover both saturation regimes.
    const double scale = std::pow(10.0, -3.0 + 6.0 * static_cast<double>(i) / count);
    auto v = normals(d, rng, scale);
    std::copy(v.begin(), v.end(), raw.begin() + static_cast<long>(i * d));
  }
  auto out = values_of(squash(Tensor({count, d}, raw)));
  double worst_formula = 0.0;
  bool below_one = true;
  for (std::size_t i = 0; i < count; ++i) {
    double s2 = 0.0, v2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      s2 += raw[i * d + j] * raw[i * d + j];
      v2 += out[i * d + j] * out[i * d + j];
    }
    const double norm = std::sqrt(v2);
    below_one = below_one && norm < 1.0;
    worst_formula = std::max(worst_formula, std::abs(norm - s2 / (1.0 + s2)));
  }
  o.require(below_one, "10^4 squash norms < 1");
  o.require(worst_formula <= 1e-12, "norm vs s²/(1+s²) " + fmt(worst_formula));

  double worst_row = 0.0, worst_out = 0.0, worst_coupling = 0.0;
  for (int inst = 0; inst < 10; ++inst) {
    const std::size_t batch = 2, m = 5 + rng() % 40, c = 2 + rng() % 6, cd = 4 + rng() % 13;
    auto u = normals(batch * m * c * cd, rng, 0.5);
    RoutingTrace trace;
    auto v = values_of(dynamic_routing(Tensor({batch, m, c, cd}, u), 3, &trace));
    for (const auto& coupling : trace.couplings) {
      auto cv = values_of(coupling);
      for (std::size_t row = 0; row < batch * m; ++row) {
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += cv[row * c + j];
        worst_row = std::max(worst_row, std::abs(sum - 1.0));
      }
    }
    for (std::size_t b = 0; b < batch; ++b) {
      std::vector<double> one(u.begin() + static_cast<long>(b * m * c * cd),
                              u.begin() + static_cast<long>((b + 1) * m * c * cd));
      std::vector<std::vector<double>> couplings;
      auto want = oracle::routing(one, m, c, cd, 3, &couplings);
      for (std::size_t k = 0; k < c * cd; ++k) worst_out = std::max(worst_out, std::abs(v[b * c * cd + k] - want[k]));
      for (std::size_t t = 0; t < 3; ++t) {
        auto cv = values_of(trace.couplings[t]);
        for (std::size_t k = 0; k < m * c; ++k)
          worst_coupling = std::max(worst_coupling, std::abs(cv[b * m * c + k] - couplings[t][k]));
      }
    }
  }
  o.require(worst_row <= 1e-9, "coupling row sums within " + fmt(worst_row));
  o.require(worst_out <= 1e-10, "routing vs straight-line oracle " + fmt(worst_out));
  o.require(worst_coupling <= 1e-10, "couplings vs oracle " + fmt(worst_coupling));
  return o;
}

Outcome residual_and_equivariance() {
  Outcome o;
  PrecisionScope f64(Precision::f64);
  std::mt19937_64 rng(55);
  const std::size_t batch = 2, n = 16, d = 8;
  Tensor x = random_normal({batch * n, d}, rng, 1.0, false);
  auto g = make_grapher(d, 2, rng);
  auto f = make_ffn(d, 4, rng);
  auto g_zero = g;
  g_zero.out.weight = Tensor::zeros(g.out.weight.shape());
  auto f_zero = f;
  f_zero.fc2.weight = Tensor::zeros(f.fc2.weight.shape());
  bool identities = true;
  for (auto mode : {NormMode::train, NormMode::eval}) {
    ForwardContext ctx{mode, false, nullptr};
    identities = identities && values_of(grapher_forward(x, batch, g_zero, 3, 1, ctx)) == values_of(x);
    identities = identities && values_of(ffn_forward(x, f_zero, ctx)) == values_of(x);
  }
  o.require(identities, "zero W_out Grapher and zero W_2 FFN return the input bitwise");

  for (auto* norm : {&g.in_norm, &g.out_norm}) {
    norm->state.running_mean = random_normal({d}, rng, 0.1, false);
    norm->state.running_var = random_uniform({d}, rng, 0.5, 2.0, false);
  }
  double eval_worst = 0.0, train_worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    auto xv = normals(n * d, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pv(n * d);
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(xv.begin() + static_cast<long>(perm[i] * d), d, pv.begin() + static_cast<long>(i * d));
    for (auto mode : {NormMode::eval, NormMode::train}) {
      ForwardContext ctx{mode, false, nullptr};
      auto y = values_of(grapher_forward(Tensor({n, d}, xv), 1, g, 3, 5, ctx));
      auto py = values_of(grapher_forward(Tensor({n, d}, pv), 1, g, 3, 5, ctx));
      double worst = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) worst = std::max(worst, std::abs(py[i * d + c] - y[perm[i] * d + c]));
      (mode == NormMode::eval ? eval_worst : train_worst) = std::max(mode == NormMode::eval ? eval_worst : train_worst, worst);
    }
  }
  o.require(eval_worst == 0.0, "Grapher permutation equivariance with running statistics, max deviation " +
                                   fmt(eval_worst));
  // Batch statistics sum the rows in node order, so a permutation may move
  // the last bit. Reported, not gated.
  o.detail += "; with batch statistics max deviation " + fmt(train_worst);
  return o;
}

Outcome architecture_accounting() {
  Outcome o;
  ModelConfig pooling = model_preset("tiny");
  pooling.height = pooling.width = 256;
  pooling.classes = 7;
  pooling.head = HeadKind::pooling_mlp;
  ModelConfig capsule = pooling;
  capsule.head = HeadKind::capsule;
  const auto cp = count_params_flops(pooling), cc = count_params_flops(capsule);
  const double pm = static_cast<double>(cp.params) / 1e6, cm = static_cast<double>(cc.params) / 1e6;

  o.require(cc.params < cp.params, "capsule params " + fmt(cm) + "M < pooling params " + fmt(pm) + "M");
  o.require(cc.flops > cp.flops,
            "capsule FLOPs " + std::to_string(cc.flops) + " > pooling FLOPs " + std::to_string(cp.flops));
  const bool pooling_in = std::abs(pm - 9.54) <= 0.15 * 9.54;
  const bool capsule_in = std::abs(cm - 9.48) <= 0.15 * 9.48;
  o.require(pooling_in, "pooling params " + fmt(pm) + "M within 15% of 9.54M");
  o.require(capsule_in, "capsule params " + fmt(cm) + "M within 15% of 9.48M");

  if (!pooling_in || !capsule_in) {
    // The largest single lever is stage 3 depth; a [2,2,6,2] layout shows
    // where the published totals could come from.
    ModelConfig deep = capsule;
    deep.stages[2].depth = 6;
    std::cout << "per-stage census, capsule head, 256x256, c=7\n"
              << census_diff(cc, count_params_flops(deep), "depths 2,2,2,2", "depths 2,2,6,2");
    ModelConfig deep_pool = pooling;
    deep_pool.stages[2].depth = 6;
    std::cout << "per-stage census, pooling head, 256x256, c=7\n"
              << census_diff(cp, count_params_flops(deep_pool), "depths 2,2,2,2", "depths 2,2,6,2");
  }
  return o;
}

InMemoryDataset two_class_set() { return synth_dataset(2, 20, 32, 7); }

Outcome end_to_end_learning() {
  Outcome o;
  ModelConfig config = model_preset("micro");
  config.classes = 2;
  TrainConfig train_cfg;
  train_cfg.epochs = 300;
  train_cfg.seed = 1;
  train_cfg.augment = true;

  auto data = two_class_set();
  Model model(config, 1);
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train(model, data, nullptr, train_cfg);
  const double elapsed = seconds_since(t0);
  Model best = model_from_checkpoint(result.best);
  const double final_acc = evaluate(model, data, train_cfg.batch_size, LossKind::automatic).accuracy;
  const double best_acc = evaluate(best, data, train_cfg.batch_size, LossKind::automatic).accuracy;
  o.require(final_acc >= 0.95, "final training accuracy " + fmt(final_acc));
  o.require(best_acc >= 0.95, "best checkpoint (epoch " + std::to_string(result.best_epoch) +
                                  ") training accuracy " + fmt(best_acc));
  o.require(elapsed < 600.0, "300 epochs in " + fmt(elapsed) + " s");

  auto shuffled = two_class_set();
  std::vector<std::size_t> labels;
  for (const auto& s : shuffled.samples()) labels.push_back(s.label);
  std::mt19937_64 rng(99);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < labels.size(); ++i) shuffled.samples()[i].label = labels[i];

  TrainConfig control = train_cfg;
  control.epochs = 50;
  // Passing the training set as the validation set scores it in eval mode,
  // without augmentation, after every epoch.
  Model noise(config, 1);
  auto noisy = train(noise, shuffled, &shuffled, control);
  double clean_peak = 0.0, batch_peak = 0.0;
  for (const auto& r : noisy.history) {
    clean_peak = std::max(clean_peak, r.val_acc);
    batch_peak = std::max(batch_peak, r.train_acc);
  }
  o.require(clean_peak < 0.8, "shuffled labels, 50 epochs, peak training-set accuracy " + fmt(clean_peak));
  o.detail += "; peak running accuracy over augmented batches " + fmt(batch_peak);
  return o;
}

Outcome determinism() {
  Outcome o;
  ModelConfig config = model_preset("micro");
  config.classes = 3;
  auto data = synth_dataset(3, 6, 32, 3);
  auto val = synth_dataset(3, 2, 32, 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 21;
  cfg.precision = Precision::f64;
  Model a(config, 21), b(config, 21);
  auto ra = train(a, data, &val, cfg);
  auto rb = train(b, data, &val, cfg);
  bool same = ra.history.size() == 3 && rb.history.size() == 3;
  for (std::size_t e = 0; same && e < 3; ++e) {
    same = std::bit_cast<std::uint64_t>(ra.history[e].train_loss) == std::bit_cast<std::uint64_t>(rb.history[e].train_loss) &&
           std::bit_cast<std::uint64_t>(ra.history[e].val_loss) == std::bit_cast<std::uint64_t>(rb.history[e].val_loss);
  }
  o.require(same, "3-epoch loss histories bitwise equal");
  o.require(encode_checkpoint(ra.best) == encode_checkpoint(rb.best), "best checkpoints byte-identical");
  return o;
}

Outcome metrics_correctness() {
  Outcome o;
  // Rows are truth, columns prediction; class 1 is positive.
  auto fixture = compute_metrics({5, 1, 1, 3}, 2);
  o.require(std::abs(fixture.accuracy - 0.8) <= 1e-12, "accuracy " + fmt(fixture.accuracy));
  o.require(std::abs(fixture.f1[1] - 0.75) <= 1e-12, "F1 " + fmt(fixture.f1[1]));

  std::mt19937_64 rng(9);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t c = 2 + rng() % 6, samples = 1 + rng() % 200;
    std::vector<std::size_t> truth(samples), pred(samples);
    for (std::size_t i = 0; i < samples; ++i) {
      truth[i] = rng() % c;
      pred[i] = rng() % 3 == 0 ? rng() % c : truth[i];
    }
    auto r = metrics_from_predictions(truth, pred, c);
    std::size_t right = 0;
    for (std::size_t i = 0; i < samples; ++i) right += truth[i] == pred[i] ? 1 : 0;
    worst = std::max(worst, std::abs(r.accuracy - static_cast<double>(right) / static_cast<double>(samples)));
    double f_sum = 0.0;
    std::size_t total = 0;
    for (std::size_t k = 0; k < c; ++k) {
      std::size_t tp = r.count(k, k), row = 0, col = 0;
      for (std::size_t j = 0; j < c; ++j) {
        row += r.count(k, j);
        col += r.count(j, k);
        total += r.count(k, j);
      }
      const double p = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
      const double q = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
      const double f = p + q > 0.0 ? 2.0 * p * q / (p + q) : 0.0;
      worst = std::max({worst, std::abs(r.precision[k] - p), std::abs(r.recall[k] - q), std::abs(r.f1[k] - f)});
      f_sum += r.f1[k];
    }
    worst = std::max(worst, std::abs(r.macro_f1 - f_sum / static_cast<double>(c)));
    if (total != samples) worst = INFINITY;
  }
  o.require(worst <= 1e-12, "identities over 500 random runs, max deviation " + fmt(worst));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient integrity", gradient_integrity},
      {"KNN oracle equivalence", knn_oracle},
      {"closed-form loss values", closed_form_losses},
      {"capsule invariants", capsule_invariants},
      {"residual and equivariance properties", residual_and_equivariance},
      {"architecture accounting", architecture_accounting},
      {"end-to-end learning", end_to_end_learning},
      {"determinism", determinism},
      {"metrics correctness", metrics_correctness},
  };
  std::vector<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::stoul(argv[i]));
  if (selected.empty()) {
    for (std::size_t i = 1; i <= criteria.size(); ++i) selected.push_back(i);
  }

  std::vector<std::string> lines;
  bool all = true;
  for (std::size_t id : selected) {
    const auto& [name, run] = criteria.at(id - 1);
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    all = all && o.pass;
    lines.push_back((o.pass ? "PASS" : "FAIL") + std::string("  criterion ") + std::to_string(id) + " " + name + " (" +
                    fmt(seconds_since(t0)) + " s): " + o.detail);
    std::cout << lines.back() << std::endl;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << "\n";
  return all ? 0 : 1;
}
