// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance                 run all criteria
//   acceptance --criterion N   run only criterion N
//
// Exit status is 0 iff every criterion that ran passed.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qnn/checkpoint.hpp"
#include "qnn/cli.hpp"
#include "qnn/gradcheck.hpp"
#include "qnn/model.hpp"
#include "qnn/quaternion.hpp"
#include "qnn/training.hpp"

using namespace qnn;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Q = Quaternion<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("qnn_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---- 1: algebra oracle --------------------------------------------------------

Outcome algebra_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-10, 10);
  double matrix_diff = 0, norm_rel = 0;
  for (int n = 0; n < 10000; ++n) {
    const Q a{u(rng), u(rng), u(rng), u(rng)}, b{u(rng), u(rng), u(rng), u(rng)};
    const Q h = hamilton(a, b);
    // Oracle: distribute over the basis using the unit multiplication table.
    static constexpr int kIndex[4][4] = {{0, 1, 2, 3}, {1, 0, 3, 2}, {2, 3, 0, 1}, {3, 2, 1, 0}};
    static constexpr int kSign[4][4] = {{1, 1, 1, 1}, {1, -1, 1, -1}, {1, -1, -1, 1}, {1, 1, -1, -1}};
    double expect[4] = {};
    for (int p = 0; p < 4; ++p)
      for (int q = 0; q < 4; ++q) expect[kIndex[p][q]] += kSign[p][q] * a[p] * b[q];
    const auto m = to_matrix(a);
    for (int r = 0; r < 4; ++r) {
      double via_matrix = 0;
      for (int c = 0; c < 4; ++c) via_matrix += m[r][c] * b[c];
      matrix_diff = std::max({matrix_diff, std::abs(expect[r] - h[r]), std::abs(expect[r] - via_matrix)});
    }
    norm_rel = std::max(norm_rel, std::abs(norm(h) - norm(a) * norm(b)) / (norm(a) * norm(b)));
  }
  const Q one{1, 0, 0, 0}, i{0, 1, 0, 0}, j{0, 0, 1, 0}, k{0, 0, 0, 1}, m1{-1, 0, 0, 0};
  const Q mi{0, -1, 0, 0}, mj{0, 0, -1, 0}, mk{0, 0, 0, -1};
  const bool table = hamilton(i, i) == m1 && hamilton(j, j) == m1 && hamilton(k, k) == m1 && hamilton(i, j) == k &&
                     hamilton(j, k) == i && hamilton(k, i) == j && hamilton(j, i) == mk && hamilton(k, j) == mi &&
                     hamilton(i, k) == mj && hamilton(one, i) == i && hamilton(j, one) == j;
  const double secs = seconds_since(t0);
  return {matrix_diff < 1e-12 && norm_rel < 1e-10 && table && secs < 5.0,
          "oracle max|Δ|=" + fmt(matrix_diff) + " (<1e-12), norm rel=" + fmt(norm_rel) + " (<1e-10), basis table " +
              (table ? "exact" : "WRONG") + ", " + fmt(secs, 3) + " s (<5 s)"};
}

// ---- 2: unit-quaternion contract ------------------------------------------------

Outcome unit_quaternions() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 data_rng(7);
  std::normal_distribution<float> g(0.0f, 1.0f);
  double worst = 0;
  std::size_t checked = 0, skipped = 0;
  for (auto act : {Activation::kTanh, Activation::kHardTanh, Activation::kReLU}) {
    Rng init(11);
    R2HEncoder<float> enc(40, 256, act, true, init);
    R2HEncoder<float> pre(enc.dense(), act, false);
    std::vector<float> xs(1000 * 40);
    for (auto& v : xs) v = 3.0f * g(data_rng);
    const Tensor<float> x({1000, 40}, xs);
    const auto before = pre.forward(x).data();
    const auto after = enc.forward(x).data();
    const QuatLayout layout{64};
    for (std::size_t row = 0; row < 1000; ++row) {
      const auto p = layout.unpack<float>(std::span<const float>(before).subspan(row * 256, 256));
      const auto q = layout.unpack<float>(std::span<const float>(after).subspan(row * 256, 256));
      for (std::size_t h = 0; h < 64; ++h) {
        const double pn = std::sqrt(double(p[h].r) * p[h].r + double(p[h].x) * p[h].x + double(p[h].y) * p[h].y +
                                    double(p[h].z) * p[h].z);
        if (pn <= 1e-6) {
          ++skipped;
          continue;
        }
        const double qn = std::sqrt(double(q[h].r) * q[h].r + double(q[h].x) * q[h].x + double(q[h].y) * q[h].y +
                                    double(q[h].z) * q[h].z);
        worst = std::max(worst, std::abs(qn - 1.0));
        ++checked;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && checked > 0 && secs < 5.0,
          "max|norm−1|=" + fmt(worst) + " (<1e-6) over " + std::to_string(checked) + " quaternions (" +
              std::to_string(skipped) + " below 1e-6 pre-norm), tanh/hardtanh/relu, " + fmt(secs, 3) + " s (<5 s)"};
}

// ---- 3: gradient suite ------------------------------------------------------------

Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, bool grad, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor<double>(shape, std::move(v), grad);
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr double kStep = 1e-4, kTol = 1e-5;
  std::mt19937_64 rng(99);
  std::vector<std::string> failures;
  double worst = 0;
  int cases = 0;
  auto run = [&](const std::string& name, const std::function<Tensor<double>()>& loss,
                 std::vector<Tensor<double>> params, const std::vector<std::string>& names = {}) {
    const auto r = check::gradcheck(loss, std::move(params), names, kStep, kTol);
    worst = std::max(worst, r.max_rel_error);
    ++cases;
    if (!r.passed || r.max_rel_error >= kTol) failures.push_back(name + ": " + r.worst);
  };
  auto tensors = [](const ParamList<double>& ps, std::vector<Tensor<double>> extra) {
    for (const auto& p : ps) extra.push_back(p.tensor);
    return extra;
  };

  {
    Rng init(1);
    QuatLinear<double> layer(3, 2, true, init);
    for (auto& v : layer.bias().mutable_data()) v = 0.05;
    auto x = random_tensor({4, 12}, rng, true);
    const auto w = random_tensor({4, 8}, rng, false);
    ParamList<double> ps;
    layer.collect(ps, "");
    run("quat-linear", [&] { return sum(mul(layer.forward(x), w)); }, tensors(ps, {x}));
  }
  for (auto act : {Activation::kSigmoid, Activation::kTanh, Activation::kHardTanh, Activation::kReLU}) {
    // Keep pre-activations at least 1e-2 away from the kinks at 0 and ±1.
    std::uniform_real_distribution<double> u(-2, 2);
    std::vector<double> v(24);
    for (auto& e : v) {
      do e = u(rng);
      while (std::abs(e) < 1e-2 || std::abs(std::abs(e) - 1) < 1e-2);
    }
    auto x = Tensor<double>({3, 8}, v, true);
    const auto w = random_tensor({3, 8}, rng, false);
    run("split-" + to_string(act), [&] { return sum(mul(split_activation(act, x), w)); }, {x});
  }
  for (bool normalized : {true, false}) {
    Rng init(2);
    R2HEncoder<double> enc(6, 8, Activation::kTanh, normalized, init);
    auto x = random_tensor({3, 6}, rng, true);
    const auto w = random_tensor({3, 8}, rng, false);
    ParamList<double> ps;
    enc.collect(ps, "");
    run(normalized ? "r2h-norm" : "r2h", [&] { return sum(mul(enc.forward(x), w)); }, tensors(ps, {x}));
  }
  {
    Rng init(3);
    QLSTMCell<double> cell(2, 2, init);
    auto seq = random_tensor({4, 3, 8}, rng, true);
    ParamList<double> ps;
    cell.collect(ps, "");
    run("qlstm-rollout", [&] { return sum(select(run_direction<double>(cell, seq), 3)); }, tensors(ps, {seq}));
  }
  {
    ModelConfig cfg;
    cfg.input_dim = 8;
    cfg.r2h_size = 8;
    cfg.hidden = 8;  // 2 quaternions
    cfg.depth = 2;
    cfg.classes = 3;
    cfg.dropout = 0;
    cfg.precision = Precision::kF64;
    AcousticModel<double> model(cfg);
    std::vector<Utterance> utts;
    for (std::size_t frames : {5u, 4u}) {
      Utterance u{"toy" + std::to_string(frames), frames, 8, {}, {}};
      std::normal_distribution<float> g;
      for (std::size_t i = 0; i < frames * 8; ++i) u.features.push_back(g(rng));
      for (std::size_t t = 0; t < frames; ++t) u.labels.push_back(static_cast<std::int32_t>(rng() % 3));
      utts.push_back(u);
    }
    const auto batch = make_batch({&utts[0], &utts[1]});  // T=5, B=2
    std::vector<std::string> names;
    std::vector<Tensor<double>> ps;
    for (const auto& p : model.parameters()) {
      names.push_back(p.name);
      ps.push_back(p.tensor);
    }
    run("toy-model", [&] { return cross_entropy(model.forward(batch), batch.labels, batch.mask); }, ps, names);
  }
  const double secs = seconds_since(t0);
  std::string detail = std::to_string(cases) + " cases, max rel err=" + fmt(worst) + " (<1e-5, h=1e-4, f64), " +
                       fmt(secs, 3) + " s (<120 s)";
  if (!failures.empty()) detail += "; first failure " + failures.front();
  return {failures.empty() && secs < 120.0, detail};
}

// ---- 4: parameter accounting ------------------------------------------------------

json cli_params(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  std::vector<std::string> full{"params"};
  full.insert(full.end(), args.begin(), args.end());
  if (cli::run(full, out, err) != 0) throw std::runtime_error("params failed: " + err.str());
  std::istringstream in(out.str());
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty() && line[0] == '{') last = line;
  return json::parse(last);
}

// Symbolic counts written from the layer definitions.
std::size_t qlstm_layer(std::size_t m, std::size_t n) { return 2 * (m * n / 4 + n * n / 4) * 4 + 2 * 4 * n; }
std::size_t lstm_layer(std::size_t m, std::size_t n) { return 2 * 4 * (n * m + n * n + n); }

Outcome parameter_accounting() {
  std::vector<std::string> problems;
  // Matched recurrent stacks: 4 bidirectional layers at real width 1024.
  const std::size_t quat_weights = 4 * 2 * 4 * (1024 * 1024 / 4 + 1024 * 1024 / 4);
  const std::size_t real_weights = 4 * 2 * 4 * (1024 * 1024 + 1024 * 1024);
  const auto full = cli_params({"--classes", "1944"});
  const auto stack_q = full["model"]["stack_weights"].get<std::size_t>();
  const double weight_ratio = full["recurrent_weight_ratio"].get<double>();
  if (stack_q != quat_weights) problems.push_back("qlstm stack weights " + std::to_string(stack_q));
  if (real_weights != 4 * quat_weights || weight_ratio != 4.0) problems.push_back("weight ratio " + fmt(weight_ratio));

  // Symbolic totals for a handful of shapes, including the full-scale one.
  struct Shape {
    std::size_t input, r2h, hidden, depth, classes;
  };
  for (const Shape s : {Shape{40, 1024, 1024, 4, 1944}, Shape{40, 256, 128, 2, 4}, Shape{13, 64, 32, 3, 7},
                        Shape{40, 512, 64, 0, 10}}) {
    const auto j = cli_params({"--input-dim", std::to_string(s.input), "--r2h-size", std::to_string(s.r2h),
                               "--hidden", std::to_string(s.hidden), "--depth", std::to_string(s.depth), "--classes",
                               std::to_string(s.classes)});
    std::size_t q_stack = 0, l_stack = 0;
    for (std::size_t l = 0; l < s.depth; ++l) {
      q_stack += qlstm_layer(l == 0 ? s.r2h : s.hidden, s.hidden);
      l_stack += lstm_layer(l == 0 ? s.input : s.hidden, s.hidden);
    }
    const std::size_t head = s.depth ? s.hidden : 0;
    const std::size_t out_in = s.depth ? s.hidden : s.r2h;
    const std::size_t q_total = (s.input * s.r2h + s.r2h) + q_stack + (out_in * s.classes + s.classes);
    const std::size_t l_total = l_stack + ((head ? head : s.input) * s.classes + s.classes);
    if (j["model"]["total"].get<std::size_t>() != q_total)
      problems.push_back("qlstm total " + j["model"]["total"].dump() + " vs " + std::to_string(q_total));
    if (s.depth > 0 && j["matched_lstm"]["total"].get<std::size_t>() != l_total)
      problems.push_back("lstm total " + j["matched_lstm"]["total"].dump() + " vs " + std::to_string(l_total));
  }

  // Full-scale models: the shared real output layer dilutes 4× towards 3×.
  const double total_ratio = full["total_ratio"].get<double>();
  const bool roughly_three = total_ratio >= 2.5 && total_ratio < 3.5;
  if (!roughly_three) problems.push_back("full-model ratio " + fmt(total_ratio));
  std::string detail = "recurrent weight ratio " + fmt(weight_ratio, 6) + " (exact 4.00); full-scale totals " +
                       fmt(full["matched_lstm"]["total"].get<double>() / 1e6, 4) + "M vs " +
                       fmt(full["model"]["total"].get<double>() / 1e6, 4) + "M, ratio " + fmt(total_ratio, 3) +
                       " (≈3×, reference 46.0M/15.5M=" + fmt(46.0 / 15.5, 3) + "); symbolic counts match";
  if (!problems.empty()) detail += "; " + problems.front();
  return {problems.empty(), detail};
}

// ---- 5: initialization ---------------------------------------------------------------

Outcome initialization() {
  Rng rng(5);
  const std::size_t fan_in = 250, fan_out = 400;  // 10^5 draws
  const double sigma = chi4_scale(fan_in, fan_out);
  const auto w = chi4_init(fan_in, fan_out, rng);
  const double n = static_cast<double>(w.size());
  double phi2 = 0, sum[4] = {}, sum2[4] = {};
  for (const auto& q : w) {
    phi2 += (q.r * q.r + q.x * q.x + q.y * q.y + q.z * q.z) / (sigma * sigma);
    for (int c = 0; c < 4; ++c) {
      sum[c] += q[c];
      sum2[c] += q[c] * q[c];
    }
  }
  const double mean_phi2 = phi2 / n;
  double worst_z = 0;
  for (int c = 0; c < 4; ++c) {
    const double mean = sum[c] / n;
    const double se = std::sqrt((sum2[c] / n - mean * mean) / n);
    worst_z = std::max(worst_z, std::abs(mean) / se);
  }
  // Every bias of a freshly built model, front to back.
  ModelConfig cfg;
  cfg.r2h_size = 64;
  cfg.hidden = 32;
  cfg.depth = 2;
  std::size_t biases = 0, nonzero = 0;
  for (const auto& p : AcousticModel<float>(cfg).parameters()) {
    const auto leaf = p.name.substr(p.name.rfind('.') + 1);
    if (leaf == "bias" || leaf.rfind("b_", 0) == 0) {
      for (float v : p.tensor.data()) {
        ++biases;
        nonzero += v != 0.0f;
      }
    }
  }
  const bool pass = w.size() == 100000 && std::abs(mean_phi2 - 4.0) <= 0.2 && worst_z < 3.0 && nonzero == 0 &&
                    biases > 0;
  return {pass, "mean φ²/σ²=" + fmt(mean_phi2, 5) + " (4±5%), max |component mean|/SE=" + fmt(worst_z, 3) +
                    " (<3), " + std::to_string(nonzero) + " of " + std::to_string(biases) + " biases non-zero"};
}

// ---- 6: end-to-end learning --------------------------------------------------------

// Binary accuracy on the delta-coded pair: among frames of the two classes,
// the prediction restricted to those two logits.
double pair_accuracy(const AcousticModel<float>& model, const std::vector<Utterance>& utts, std::int32_t a,
                     std::int32_t b) {
  NoGradGuard guard;
  std::size_t right = 0, total = 0;
  for (const auto& batch : make_batches(utts, 16, nullptr, false)) {
    const auto logits = model.forward(batch).data();
    const std::size_t classes = model.config().classes;
    for (std::size_t row = 0; row < batch.mask.size(); ++row) {
      const auto label = batch.labels[row];
      if (!batch.mask[row] || (label != a && label != b)) continue;
      const float za = logits[row * classes + a], zb = logits[row * classes + b];
      right += (za >= zb ? a : b) == label;
      ++total;
    }
  }
  return total ? static_cast<double>(right) / static_cast<double>(total) : 0.0;
}

Outcome end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const SynthSpec spec;  // C=4, D=40, 200 training utterances, seed 1234
  const auto ds = generate_synthetic(spec);

  ModelConfig cfg;
  cfg.r2h_size = 256;
  cfg.hidden = 128;
  cfg.depth = 2;
  cfg.epochs = 15;
  cfg.seed = 1;
  AcousticModel<float> model(cfg);
  const auto reports = train(model, ds.train, ds.valid, {});
  double best_acc = 0;
  std::size_t first_epoch = 0;
  for (const auto& r : reports) {
    const double acc = 100.0 - r.valid_fer;
    if (acc > 90.0 && first_epoch == 0) first_epoch = r.epoch;
    best_acc = std::max(best_acc, acc);
  }
  const double final_acc = reports.empty() ? 0.0 : 100.0 - reports.back().valid_fer;

  // Memoryless baseline: per-frame softmax regression on the raw features.
  ModelConfig lin;
  lin.front_end = FrontEnd::kIdentity;
  lin.depth = 0;
  lin.dropout = 0;
  lin.epochs = 15;
  lin.lr = 1e-2;
  lin.seed = 1;
  AcousticModel<float> logistic(lin);
  const auto lin_reports = train(logistic, ds.train, ds.valid, {});
  const auto delta_a = static_cast<std::int32_t>(spec.classes - 2), delta_b = delta_a + 1;
  const double baseline_pair = 100.0 * pair_accuracy(logistic, ds.valid, delta_a, delta_b);
  const double model_pair = 100.0 * pair_accuracy(model, ds.valid, delta_a, delta_b);
  const double secs = seconds_since(t0);

  const bool pass = first_epoch > 0 && baseline_pair <= 55.0 && secs < 600.0;
  return {pass, "R2H-Norm-QLSTM valid frame accuracy " + fmt(final_acc, 4) + "% at epoch 15 (first >90% at epoch " +
                    std::to_string(first_epoch) + "), delta-pair accuracy " + fmt(model_pair, 4) +
                    "%; logistic baseline delta-pair " + fmt(baseline_pair, 4) + "% (≤55%), overall " +
                    fmt(100.0 - lin_reports.back().valid_fer, 4) + "%; seed 1, data seed 1234, " + fmt(secs, 4) +
                    " s (<600 s)"};
}

// ---- 7: comparative trend -----------------------------------------------------------

Outcome comparative_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = generate_synthetic(SynthSpec{});
  const std::vector<std::pair<std::string, FrontEnd>> front_ends{
      {"R2H-Norm", FrontEnd::kR2HNorm}, {"R2H", FrontEnd::kR2H}, {"NaiveQuat", FrontEnd::kNaiveQuat}};
  std::vector<std::vector<double>> losses(front_ends.size());
  for (std::size_t f = 0; f < front_ends.size(); ++f) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      ModelConfig cfg;
      cfg.front_end = front_ends[f].second;
      cfg.r2h_size = 256;
      cfg.hidden = 128;
      cfg.depth = 2;
      cfg.epochs = 6;
      cfg.seed = seed;
      AcousticModel<float> model(cfg);
      losses[f].push_back(train(model, ds.train, ds.valid, {}).back().valid_loss);
    }
  }
  std::vector<double> means;
  for (const auto& l : losses) means.push_back((l[0] + l[1] + l[2]) / 3.0);
  std::string violations;
  for (std::size_t s = 0; s < 3; ++s) {
    if (losses[0][s] > losses[1][s]) violations += " seed" + std::to_string(s + 1) + ":R2H-Norm>R2H";
    if (losses[1][s] > losses[2][s]) violations += " seed" + std::to_string(s + 1) + ":R2H>NaiveQuat";
  }
  const bool pass = means[0] <= means[1] && means[1] <= means[2];
  std::string detail = "mean final valid loss (3 seeds, 6 epochs, r2h 256/hidden 128/depth 2): ";
  for (std::size_t f = 0; f < front_ends.size(); ++f) {
    detail += front_ends[f].first + "=" + fmt(means[f], 5) + " [" + fmt(losses[f][0], 4) + " " + fmt(losses[f][1], 4) +
              " " + fmt(losses[f][2], 4) + "]" + (f + 1 < front_ends.size() ? ", " : "");
  }
  detail += "; required R2H-Norm ≤ R2H ≤ NaiveQuat";
  detail += "; single-seed violations:" + (violations.empty() ? std::string(" none") : violations);
  detail += "; " + fmt(seconds_since(t0), 4) + " s";
  return {pass, detail};
}

// ---- 8: determinism and round trips ---------------------------------------------------

Outcome determinism() {
  std::vector<std::string> problems;
  SynthSpec spec;
  spec.dim = 16;
  spec.train_utterances = 40;
  spec.valid_utterances = 10;
  spec.test_utterances = 10;
  const auto ds = generate_synthetic(spec);

  // Repeated seeded runs: byte-identical metrics and checkpoints. A high stall
  // threshold makes the schedule halve often.
  ModelConfig cfg;
  cfg.input_dim = 16;
  cfg.r2h_size = 32;
  cfg.hidden = 16;
  cfg.depth = 2;
  cfg.epochs = 6;
  cfg.lr = 3e-3;
  cfg.lr_threshold = 0.2;
  std::vector<fs::path> dirs{scratch("run_a"), scratch("run_b")};
  std::vector<std::vector<EpochReport>> runs;
  for (const auto& dir : dirs) {
    AcousticModel<float> model(cfg);
    runs.push_back(train(model, ds.train, ds.valid, {.out_dir = dir}));
  }
  if (slurp(dirs[0] / "metrics.jsonl") != slurp(dirs[1] / "metrics.jsonl")) problems.push_back("metrics differ");
  if (slurp(dirs[0] / "last.qnn") != slurp(dirs[1] / "last.qnn")) problems.push_back("checkpoints differ");

  // LR values are exactly lr0·2^(−k), non-increasing.
  std::size_t halvings = 0;
  double prev = cfg.lr;
  for (const auto& r : runs[0]) {
    for (double lr : {r.lr, r.next_lr}) {
      const int k = static_cast<int>(std::lround(std::log2(cfg.lr / lr)));
      if (k < 0 || lr != std::ldexp(cfg.lr, -k)) problems.push_back("lr " + fmt(lr, 17) + " not lr0·2^-k");
      if (lr > prev) problems.push_back("lr increased");
      prev = lr;
    }
    halvings += r.next_lr < r.lr;
  }

  // QFEA round trip.
  const auto qfea = scratch("qfea") / "train.qfea";
  write_features(qfea, ds.train);
  const auto back = read_features(qfea);
  bool qfea_exact = back.size() == ds.train.size();
  for (std::size_t i = 0; qfea_exact && i < back.size(); ++i) {
    qfea_exact = back[i].id == ds.train[i].id && back[i].labels == ds.train[i].labels &&
                 back[i].features.size() == ds.train[i].features.size() &&
                 std::memcmp(back[i].features.data(), ds.train[i].features.data(),
                             back[i].features.size() * sizeof(float)) == 0;
  }
  write_features(qfea.parent_path() / "again.qfea", back);
  qfea_exact = qfea_exact && slurp(qfea) == slurp(qfea.parent_path() / "again.qfea");
  if (!qfea_exact) problems.push_back("QFEA round trip not bit-exact");

  // Checkpoint round trip: load into a differently seeded model, save again.
  ModelConfig other = cfg;
  other.seed = 77;
  AcousticModel<float> restored(other);
  auto params = restored.parameters();
  load_checkpoint(dirs[0] / "last.qnn", cfg, params);
  const auto resaved = dirs[0] / "resaved.qnn";
  save_checkpoint(resaved, cfg, params);
  const bool ckpt_exact = slurp(resaved) == slurp(dirs[0] / "last.qnn");
  if (!ckpt_exact) problems.push_back("checkpoint round trip not bit-exact");

  std::string detail = "metrics " + std::string(problems.empty() || problems[0] != "metrics differ" ? "identical" : "DIFFER") +
                       " across 2 seeded runs; QFEA " + (qfea_exact ? "bit-exact" : "NOT exact") + "; checkpoint " +
                       (ckpt_exact ? "bit-exact" : "NOT exact") + "; lr took only lr0·2^-k values (" +
                       std::to_string(halvings) + " halvings)";
  if (!problems.empty()) detail += "; " + problems.front();
  return {problems.empty(), detail};
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "algebra oracle", algebra_oracle},
    {2, "unit-quaternion contract", unit_quaternions},
    {3, "gradient suite", gradient_suite},
    {4, "parameter accounting", parameter_accounting},
    {5, "initialization", initialization},
    {6, "end-to-end learning", end_to_end},
    {7, "comparative trend", comparative_trend},
    {8, "determinism and round trips", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--criterion N]\n";
      return 2;
    }
  }
  bool all_pass = true;
  for (const auto& c : kCriteria) {
    if (only && c.id != only) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): " << o.detail
              << std::endl;
  }
  return all_pass ? 0 : 1;
}
