#include "lucf/cli/commands.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "lucf/tensor/autograd.hpp"

namespace lucf::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

template <class F>
auto as_usage(const std::string& section, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(section + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(section + ": " + e.what());
  }
}

std::vector<SegSample> load_data(const fs::path& dir) {
  if (dir.empty()) throw UsageError("--data is required");
  auto samples = load_dataset(dir);
  if (samples.empty()) throw std::runtime_error("dataset " + dir.string() + " is empty");
  return samples;
}

/// Rows of an existing history file with iter < `before`, header included.
std::vector<std::string> history_prefix(const fs::path& path, std::int64_t before) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line)) return lines;
  lines.push_back(line);
  while (std::getline(in, line)) {
    if (std::stoll(line.substr(0, line.find(','))) >= before) break;
    lines.push_back(line);
  }
  return lines;
}

void write_history_file(const fs::path& path, const std::vector<std::string>& prefix, const std::vector<HistoryRow>& rows) {
  std::string csv = history_csv(rows);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (prefix.empty()) {
    out << csv;
    return;
  }
  for (const auto& l : prefix) out << l << '\n';
  out << csv.substr(csv.find('\n') + 1);
}

void train_one(const RunConfig& cfg, const std::vector<SegSample>& data, const TrainOptions& opt, const fs::path& out,
               std::ostream& log) {
  fs::create_directories(out);
  ModelConfig mc = cfg.model;
  fit_model_to(mc, data.front());
  as_usage("model", [&] {
    mc.validate();
    return 0;
  });
  Rng init(cfg.seed, 1);
  LucfNet net(mc, init);
  Trainer trainer(net, data, cfg.train);

  std::vector<std::string> prefix;
  if (!opt.resume.empty()) {
    trainer.resume(opt.resume);
    prefix = history_prefix(out / "history.csv", trainer.iter());
    log << "resumed from " << opt.resume.string() << " at iter " << trainer.iter() << "\n";
  }
  const std::int64_t until = opt.stop_at >= 0 ? opt.stop_at : cfg.train.max_iter;
  if (until > cfg.train.max_iter || until < trainer.iter()) {
    throw UsageError("--stop-at must lie in [" + std::to_string(trainer.iter()) + ", " + std::to_string(cfg.train.max_iter) + "]");
  }
  write_json(out / "run_config.json", to_json(cfg));

  std::vector<HistoryRow> rows;
  try {
    rows = trainer.run(until, [&](const HistoryRow& r) {
      if (opt.log_every > 0 && (r.iter + 1) % opt.log_every == 0) {
        log << "iter " << r.iter + 1 << "/" << cfg.train.max_iter << " lr " << fmt(r.lr) << " loss " << fmt(r.total) << "\n";
      }
    });
  } catch (const TrainingDiverged&) {
    write_history_file(out / "history.csv", prefix, trainer.history());
    throw;
  }
  write_history_file(out / "history.csv", prefix, trainer.history());
  save_checkpoint(out / "checkpoint.ckpt", net, &trainer.optim(), trainer.data_rng(), to_json(cfg));
}

}  // namespace

void RunConfig::propagate_seed() {
  data.seed = seed;
  train.seed = seed;
}

double RunConfig::hd_percentile() const {
  if (metrics == "hd95") return 95.0;
  if (metrics == "hd100") return 100.0;
  throw UsageError("metrics must be hd95 or hd100, got \"" + metrics + "\"");
}

nlohmann::json to_json(const RunConfig& cfg) {
  return {{"seed", cfg.seed},
          {"model", to_json(cfg.model)},
          {"data", to_json(cfg.data)},
          {"train", to_json(cfg.train)},
          {"eval", {{"metrics", cfg.metrics}, {"batch_size", cfg.eval_batch_size}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "seed") c.seed = as_usage("seed", [&] { return v.get<std::uint64_t>(); });
    else if (key == "model") c.model = as_usage("model", [&] {
      auto m = model_config_from_json(v);
      m.validate();
      return m;
    });
    else if (key == "data") c.data = as_usage("data", [&] { return dataset_spec_from_json(v); });
    else if (key == "train") c.train = as_usage("train", [&] { return train_config_from_json(v); });
    else if (key == "eval") {
      as_usage("eval", [&] {
        for (const auto& [k, e] : v.items()) {
          if (k == "metrics") c.metrics = e.get<std::string>();
          else if (k == "batch_size") c.eval_batch_size = e.get<std::int64_t>();
          else throw UsageError("unknown key \"" + k + "\"");
        }
        return 0;
      });
    } else {
      throw UsageError("config: unknown key \"" + key + "\"");
    }
  }
  c.hd_percentile();
  c.propagate_seed();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void fit_model_to(ModelConfig& model, const SegSample& sample) {
  model.in_channels = sample.image.dim(0);
  model.num_classes = sample.num_classes;
  model.input_h = sample.height();
  model.input_w = sample.width();
}

Manifest cmd_synth(const RunConfig& cfg, const SynthOptions& opt) {
  if (opt.out.empty()) throw UsageError("--out is required");
  if (opt.format != "png" && opt.format != "pgm") throw UsageError("--format must be png or pgm");
  cfg.data.validate();
  if (fs::exists(opt.out) && !fs::is_empty(opt.out)) {
    if (!opt.force) throw std::runtime_error("target " + opt.out.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(opt.out);
  }
  fs::create_directories(opt.out);
  const auto data = gen_synthetic(cfg.data);
  auto m = write_dataset(opt.out, data, cfg.data, opt.format);
  write_json(opt.out / "run_config.json", to_json(cfg));
  return m;
}

void cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& log) {
  if (opt.out.empty()) throw UsageError("--out is required");
  if (!opt.grid.empty() && !opt.resume.empty()) throw UsageError("--grid cannot be combined with --resume");
  const auto data = load_data(opt.data);
  if (opt.grid.empty()) {
    train_one(cfg, data, opt, opt.out, log);
    return;
  }
  for (double w : opt.grid) {
    if (!(w >= 0.0 && w <= 1.0)) throw UsageError("--grid weights must lie in [0, 1]");
  }
  for (double w : opt.grid) {
    RunConfig cell = cfg;
    cell.train.loss.hybrid_weight = w;
    log << "grid cell hybrid_weight " << fmt(w) << "\n";
    train_one(cell, data, opt, opt.out / "grid" / ("hw_" + fmt(w)), log);
  }
}

MetricReport cmd_eval(const RunConfig& cfg, const EvalOptions& opt) {
  if (opt.out.empty()) throw UsageError("--out is required");
  if (opt.checkpoint.empty()) throw UsageError("--checkpoint is required");
  if (!fs::exists(opt.checkpoint)) throw std::runtime_error("checkpoint " + opt.checkpoint.string() + " does not exist");
  const double q = cfg.hd_percentile();
  const auto meta = read_checkpoint_meta(opt.checkpoint);
  Rng init(0);
  LucfNet net(meta.config, init);
  load_checkpoint(opt.checkpoint, net);
  const auto data = load_data(opt.data);
  const auto report = evaluate_run(net, data, cfg.eval_batch_size, q);
  fs::create_directories(opt.out);
  report.write(opt.out / "metrics.csv", opt.out / "metrics.json");
  return report;
}

std::vector<SuiteEntry> cmd_gradcheck(std::uint64_t seed, const std::string& inject_fault) {
  FaultInjectionGuard fault(inject_fault);
  SuiteOptions o;
  o.seed = seed + 1;
  return run_gradcheck_suite(o);
}

nlohmann::json cmd_summary(const ModelConfig& model, std::int64_t h, std::int64_t w, bool paper_reference, bool measure) {
  as_usage("model", [&] {
    model.validate();
    model.validate_input(h, w);
    return 0;
  });
  Rng init(0);
  LucfNet net(model, init);
  const auto params = param_count(model);
  const auto flops = flop_count(model, h, w);
  nlohmann::json j{{"config", to_json(model)},
                   {"input", {1, model.in_channels, h, w}},
                   {"params", params},
                   {"params_enumerated", net.num_parameters()},
                   {"flops", flops},
                   {"params_m", static_cast<double>(params) / 1e6},
                   {"gflops", static_cast<double>(flops) / 1e9}};
  if (measure) j["flops_measured"] = measured_flop_count(net, h, w);
  if (paper_reference) j["paper_reference"] = {{"params_m", 6.93}, {"gflops", 6.60}, {"binding", false}};
  return j;
}

std::string format_summary(const nlohmann::json& s) {
  std::ostringstream os;
  char line[200];
  const auto& in = s.at("input");
  std::snprintf(line, sizeof line, "input          %lldx%lldx%lldx%lld\n", in[0].get<long long>(), in[1].get<long long>(),
                in[2].get<long long>(), in[3].get<long long>());
  os << line;
  std::snprintf(line, sizeof line, "params         %lld (%.3f M), enumerated %lld\n", s.at("params").get<long long>(),
                s.at("params_m").get<double>(), s.at("params_enumerated").get<long long>());
  os << line;
  std::snprintf(line, sizeof line, "flops          %lld (%.3f GFLOPs)\n", s.at("flops").get<long long>(), s.at("gflops").get<double>());
  os << line;
  if (s.contains("flops_measured")) os << "flops measured " << s.at("flops_measured").get<long long>() << "\n";
  if (s.contains("paper_reference")) os << "paper reports 6.93 M / 6.60 GFLOPs (reference only)\n";
  return os.str();
}

std::vector<fs::path> cmd_dump_features(const RunConfig& cfg, const DumpOptions& opt) {
  if (opt.image.empty()) throw UsageError("--image is required");
  if (opt.out.empty()) throw UsageError("--out is required");
  const Gray8 img = read_gray8(opt.image);
  std::vector<float> px(img.pixels.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  const Tensor x = Tensor::from_buffer<float>({1, 1, img.height, img.width}, std::move(px));

  ModelConfig mc = cfg.model;
  if (!opt.checkpoint.empty()) mc = read_checkpoint_meta(opt.checkpoint).config;
  if (mc.in_channels != 1) throw std::runtime_error("dump-features needs a single-channel model");
  mc.validate_input(img.height, img.width);
  Rng init(cfg.seed, 1);
  LucfNet net(mc, init);
  if (!opt.checkpoint.empty()) load_checkpoint(opt.checkpoint, net);
  net.eval();
  NoGradGuard no_grad;

  fs::create_directories(opt.out);
  std::vector<fs::path> written;
  for (int stage = 1; stage <= 4; ++stage) {
    const Tensor f = net.dump_features(x, stage);
    Gray8 g{f.dim(1), f.dim(2), {}};
    for (double v : f.to_vector()) g.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    const auto path = opt.out / ("stage" + std::to_string(stage) + ".pgm");
    write_gray8(path, g);
    written.push_back(path);
  }
  return written;
}

}  // namespace lucf::cli
