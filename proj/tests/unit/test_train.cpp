#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "lucf/tensor/tensor_io.hpp"
#include "lucf/train/trainer.hpp"

using namespace lucf;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.base_width = 4;
  c.input_h = c.input_w = 32;
  return c;
}

std::vector<SegSample> tiny_data(std::int64_t n = 4, std::uint64_t seed = 3) {
  DatasetSpec s;
  s.num_samples = n;
  s.height = s.width = 32;
  s.seed = seed;
  return gen_synthetic(s).samples;
}

TrainConfig tiny_train(std::int64_t iters = 4) {
  TrainConfig t;
  t.batch_size = 2;
  t.max_iter = iters;
  t.seed = 9;
  return t;
}

std::vector<std::vector<double>> snapshot(LucfNet& net) {
  std::vector<std::vector<double>> out;
  for (const auto& p : net.parameters()) out.push_back(p.tensor->to_vector());
  for (const auto& b : net.buffers()) out.push_back(b.tensor->to_vector());
  return out;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary | std::ios::trunc) << s; }

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("lucf_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Schedule, Examples) {
  EXPECT_DOUBLE_EQ(lr_schedule(0, 100, 0.05), 0.05);
  EXPECT_EQ(lr_schedule(100, 100, 0.05), 0.0);
  EXPECT_NEAR(lr_schedule(50, 100, 0.05, 0.9), 0.02679, 1e-5);
  EXPECT_THROW(lr_schedule(101, 100, 0.05), std::out_of_range);
  EXPECT_THROW(lr_schedule(-1, 100, 0.05), std::out_of_range);
  double prev = 1.0;
  for (int i = 0; i <= 37; ++i) {
    const double lr = lr_schedule(i, 37, 0.05);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

namespace {

struct Params : nn::Module {
  Tensor w, b;
  Params(std::vector<double> wv, std::vector<double> bv) {
    w = Tensor::from_values({static_cast<std::int64_t>(wv.size())}, wv, DType::f64).set_requires_grad(true);
    b = Tensor::from_values({static_cast<std::int64_t>(bv.size())}, bv, DType::f64).set_requires_grad(true);
    register_parameter("w", w, true);
    register_parameter("b", b, false);
  }
};

void set_grads(Params& m, double gw, double gb) {
  m.zero_grad();
  add(sum(mul_scalar(m.w, gw)), sum(mul_scalar(m.b, gb))).backward();
}

}  // namespace

TEST(Sgd, VanillaAndZeroGradient) {
  Params m({1.0, -2.0}, {0.5});
  OptimState st;
  st.cfg = {0.1, 0.0, 0.0, 0.9};
  st.max_iter = 10;
  set_grads(m, 3.0, -1.0);
  sgd_step(m.parameters(), st);
  EXPECT_DOUBLE_EQ(m.w.value_at(0), 1.0 - 0.1 * 3.0);
  EXPECT_DOUBLE_EQ(m.w.value_at(1), -2.0 - 0.1 * 3.0);
  EXPECT_DOUBLE_EQ(m.b.value_at(0), 0.5 + 0.1);
  EXPECT_EQ(st.iter, 1);

  Params z({1.0}, {2.0});
  OptimState s2;
  s2.cfg = {0.1, 0.9, 0.0, 0.9};
  s2.max_iter = 10;
  s2.velocity = {Tensor::from_values({1}, {0.4}, DType::f64), Tensor::from_values({1}, {-0.2}, DType::f64)};
  set_grads(z, 0.0, 0.0);
  sgd_step(z.parameters(), s2);
  EXPECT_DOUBLE_EQ(s2.velocity[0].value_at(0), 0.9 * 0.4);
  EXPECT_DOUBLE_EQ(s2.velocity[1].value_at(0), 0.9 * -0.2);
}

TEST(Sgd, QuadraticTrajectory) {
  // f(p) = a p^2 / 2, grad = a p
  const double a = 3.0, lr0 = 0.05, mom = 0.9, wd = 0.01;
  Params m({2.0}, {0.0});
  OptimState st;
  st.cfg = {lr0, mom, wd, 0.9};
  st.max_iter = 4;
  double p = 2.0, v = 0.0;
  for (int k = 0; k < 2; ++k) {
    m.zero_grad();
    mul_scalar(mul(m.w, m.w), a / 2.0).backward();
    m.b.zero_grad();
    sum(mul_scalar(m.b, 0.0)).backward();
    sgd_step(m.parameters(), st);
    const double lr = lr0 * std::pow(1.0 - k / 4.0, 0.9);
    v = mom * v + a * p + wd * p;
    p -= lr * v;
    EXPECT_NEAR(m.w.value_at(0), p, 1e-12);
  }
}

TEST(Sgd, MissingGradientLeavesStateUntouched) {
  Params m({1.0}, {1.0});
  OptimState st;
  st.max_iter = 5;
  m.zero_grad();
  sum(m.w).backward();
  EXPECT_THROW(sgd_step(m.parameters(), st), std::invalid_argument);
  EXPECT_EQ(m.w.value_at(0), 1.0);
  EXPECT_TRUE(st.velocity.empty());
  EXPECT_EQ(st.iter, 0);
}

TEST(Sgd, DecayShrinksFlaggedNormOnly) {
  Params m({1.0, -3.0, 2.0}, {4.0});
  OptimState st;
  // Monotone while lr * weight_decay <= (1 - sqrt(momentum))^2.
  st.cfg = {0.05, 0.9, 0.05, 0.9};
  st.max_iter = 50;
  double prev = 1e9;
  for (int i = 0; i < 50; ++i) {
    set_grads(m, 0.0, 0.0);
    sgd_step(m.parameters(), st);
    double n = 0;
    for (double x : m.w.to_vector()) n += x * x;
    EXPECT_LT(n, prev);
    prev = n;
    EXPECT_EQ(m.b.value_at(0), 4.0);
  }
}

TEST(Train, BatchOrderIsPureAndCoversEpochs) {
  EXPECT_EQ(batch_indices(10, 3, 5, 7), batch_indices(10, 3, 5, 7));
  std::multiset<std::int64_t> seen;
  for (std::int64_t it = 0; it < 5; ++it)
    for (auto i : batch_indices(10, 2, 5, it)) seen.insert(i);
  for (std::int64_t i = 0; i < 10; ++i) EXPECT_EQ(seen.count(i), 1u);
  EXPECT_NE(batch_indices(10, 10, 5, 0), batch_indices(10, 10, 5, 1));
  EXPECT_EQ(iterations_for_epochs(10, 4, 2), 6);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  Rng rng(1);
  LucfNet net(tiny_model(), rng);
  auto cfg = tiny_train(3);
  cfg.optim.lr_base = 0.0;
  std::vector<std::vector<double>> before;
  for (const auto& p : net.parameters()) before.push_back(p.tensor->to_vector());
  Trainer t(net, tiny_data(1), cfg);
  auto rows = t.run();
  EXPECT_EQ(rows.size(), 3u);
  EXPECT_EQ(t.history().size(), 3u);
  std::size_t i = 0;
  for (const auto& p : net.parameters()) EXPECT_EQ(p.tensor->to_vector(), before[i++]) << p.name;
}

TEST(Train, DeterministicHistoryAndLossDecreases) {
  std::string csv[2];
  for (int r = 0; r < 2; ++r) {
    Rng rng(1);
    LucfNet net(tiny_model(), rng);
    auto cfg = tiny_train(6);
    Trainer t(net, tiny_data(), cfg);
    csv[r] = history_csv(t.run());
  }
  EXPECT_EQ(csv[0], csv[1]);
  EXPECT_EQ(csv[0].substr(0, csv[0].find('\n')), "iter,lr,total,head1,head2,head3,head4,lovasz,ohem_org,ohem_re");
}

TEST(Train, HistoriesDifferOnlyInLossColumns) {
  std::vector<std::vector<HistoryRow>> runs;
  for (const char* terms : {"ce+dice", "lovasz+ohem"}) {
    Rng rng(1);
    LucfNet net(tiny_model(), rng);
    auto cfg = tiny_train(2);
    cfg.loss = loss_terms_from_string(terms);
    Trainer t(net, tiny_data(), cfg);
    runs.push_back(t.run());
  }
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(runs[0][i].iter, runs[1][i].iter);
    EXPECT_EQ(runs[0][i].lr, runs[1][i].lr);
  }
}

TEST(Train, DivergenceNamesComponent) {
  Rng rng(1);
  LucfNet net(tiny_model(), rng);
  auto cfg = tiny_train(20);
  cfg.optim.lr_base = 1e30;
  Trainer t(net, tiny_data(), cfg);
  try {
    t.run();
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("non-finite"), std::string::npos) << msg;
  }
}

TEST(Train, RejectsBadInputs) {
  Rng rng(1);
  LucfNet net(tiny_model(), rng);
  EXPECT_THROW(Trainer(net, {}, tiny_train()), std::invalid_argument);
  auto cfg = tiny_train();
  cfg.batch_size = 0;
  EXPECT_THROW(Trainer(net, tiny_data(), cfg), std::invalid_argument);
  auto data = tiny_data();
  data[1].num_classes = 3;
  EXPECT_THROW(Trainer(net, data, tiny_train()), std::invalid_argument);
}

TEST(Checkpoint, RoundTripAndByteIdentity) {
  const auto dir = temp_dir("rt");
  Rng rng(1);
  LucfNet net(tiny_model(), rng);
  Trainer t(net, tiny_data(), tiny_train(4));
  t.run(2);
  t.save(dir / "a.ckpt");
  const auto snap = snapshot(net);

  Rng rng2(77);
  LucfNet other(tiny_model(), rng2);
  OptimState st;
  const auto meta = load_checkpoint(dir / "a.ckpt", other, &st);
  EXPECT_EQ(meta.iter, 2);
  EXPECT_EQ(meta.rng.seed(), 9u);
  EXPECT_EQ(snapshot(other), snap);
  EXPECT_EQ(st.iter, 2);
  EXPECT_EQ(st.velocity.size(), net.parameters().size());
  save_checkpoint(dir / "b.ckpt", other, &st, meta.rng, meta.train);
  EXPECT_EQ(read_bytes(dir / "a.ckpt"), read_bytes(dir / "b.ckpt"));
  fs::remove_all(dir);
}

TEST(Checkpoint, ResumeIsBitExact) {
  const auto dir = temp_dir("resume");
  std::vector<HistoryRow> full;
  std::string full_ckpt;
  {
    Rng rng(1);
    LucfNet net(tiny_model(), rng);
    Trainer t(net, tiny_data(), tiny_train(6));
    full = t.run();
    t.save(dir / "full.ckpt");
  }
  std::vector<HistoryRow> resumed;
  {
    Rng rng(1);
    LucfNet net(tiny_model(), rng);
    Trainer t(net, tiny_data(), tiny_train(6));
    resumed = t.run(3);
    t.save(dir / "half.ckpt");
  }
  {
    Rng rng(123);
    LucfNet net(tiny_model(), rng);
    Trainer t(net, tiny_data(), tiny_train(6));
    t.resume(dir / "half.ckpt");
    EXPECT_EQ(t.iter(), 3);
    auto rest = t.run();
    resumed.insert(resumed.end(), rest.begin(), rest.end());
    t.save(dir / "resumed.ckpt");
  }
  EXPECT_EQ(history_csv(full), history_csv(resumed));
  EXPECT_EQ(read_bytes(dir / "full.ckpt"), read_bytes(dir / "resumed.ckpt"));
  fs::remove_all(dir);
}

TEST(Checkpoint, DistinctErrorsAndAtomicity) {
  const auto dir = temp_dir("err");
  Rng rng(1);
  LucfNet net(tiny_model(), rng);
  OptimState st;
  save_checkpoint(dir / "ok.ckpt", net, &st, Rng(4));
  const std::string bytes = read_bytes(dir / "ok.ckpt");

  Rng rng2(2);
  LucfNet target(tiny_model(), rng2);
  const auto before = snapshot(target);

  write_bytes(dir / "trunc.ckpt", bytes.substr(0, bytes.size() - 10));
  EXPECT_THROW(load_checkpoint(dir / "trunc.ckpt", target), CheckpointFormatError);
  write_bytes(dir / "short.ckpt", bytes.substr(0, 40));
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt", target), CheckpointFormatError);
  std::string garbled = bytes;
  garbled[20] = '#';
  write_bytes(dir / "garbled.ckpt", garbled);
  EXPECT_THROW(load_checkpoint(dir / "garbled.ckpt", target), CheckpointFormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt", target), CheckpointFormatError);
  EXPECT_EQ(snapshot(target), before);

  auto other_cfg = tiny_model();
  other_cfg.num_classes = 5;
  Rng rng3(3);
  LucfNet other(other_cfg, rng3);
  EXPECT_THROW(load_checkpoint(dir / "ok.ckpt", other), CheckpointHashError);

  // Reshape one tensor in the directory while keeping its byte count.
  std::istringstream len(bytes.substr(8, 8));
  const auto hlen = le::get_u64(len);
  auto header = nlohmann::json::parse(bytes.substr(16, hlen));
  auto& entry = header["tensors"][0];
  auto shape = entry["shape"].get<Shape>();
  ASSERT_EQ(shape.size(), 4u);
  entry["shape"] = Shape{shape[0] * shape[1], shape[2], shape[3], 1};
  const std::string h2 = header.dump();
  std::ostringstream os;
  os.write(bytes.data(), 8);
  le::put_u64(os, h2.size());
  os << h2 << bytes.substr(16 + hlen);
  write_bytes(dir / "shape.ckpt", os.str());
  EXPECT_THROW(load_checkpoint(dir / "shape.ckpt", target), CheckpointShapeError);

  header = nlohmann::json::parse(bytes.substr(16, hlen));
  header["config"]["num_classes"] = 5;
  const std::string h3 = header.dump();
  std::ostringstream os3;
  os3.write(bytes.data(), 8);
  le::put_u64(os3, h3.size());
  os3 << h3 << bytes.substr(16 + hlen);
  write_bytes(dir / "hash.ckpt", os3.str());
  EXPECT_THROW(load_checkpoint(dir / "hash.ckpt", target), CheckpointHashError);

  EXPECT_EQ(snapshot(target), before);
  fs::remove_all(dir);
}

TEST(Evaluate, ZeroModelPredictsBackground) {
  Rng rng(1);
  LucfNet net(tiny_model(), rng);
  net.zero_parameters();
  auto data = tiny_data(3);
  const auto rep = evaluate_run(net, data, 2);
  EXPECT_EQ(rep.num_cases, 3);
  for (std::size_t c = 1; c < rep.per_class_dsc.size(); ++c) EXPECT_EQ(rep.per_class_dsc[c], 0.0);
  EXPECT_EQ(rep.mean_dsc, 0.0);
  EXPECT_GT(rep.per_class_dsc[0], 0.0);
}

TEST(Evaluate, BatchSizeInvariantAndRestoresMode) {
  Rng rng(1);
  LucfNet net(tiny_model(), rng);
  Trainer t(net, tiny_data(), tiny_train(2));
  t.run();
  auto data = tiny_data(5, 8);
  const auto a = evaluate_run(net, data, 1);
  const auto b = evaluate_run(net, data, 5);
  const auto c = evaluate_run(net, data, 2);
  EXPECT_EQ(a.csv(), b.csv());
  EXPECT_EQ(a.csv(), c.csv());
  EXPECT_TRUE(net.training());
  data[0].num_classes = 6;
  EXPECT_THROW(evaluate_run(net, data), std::invalid_argument);
  EXPECT_THROW(evaluate_run(net, {}), std::invalid_argument);
}
