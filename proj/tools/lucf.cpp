#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "lucf/cli/commands.hpp"

using namespace lucf;
using namespace lucf::cli;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string preset;
  // model
  std::optional<std::int64_t> base_width;
  std::optional<int> fusion_depth;
  bool no_lg = false;
  std::string local_norm;
  // data
  std::optional<std::int64_t> num_samples, classes;
  std::vector<std::int64_t> size;
  std::string family;
  std::optional<double> noise;
  // train
  std::optional<std::int64_t> iters, epochs, batch_size;
  std::optional<double> lr, momentum, weight_decay, hybrid_weight;
  std::string loss;
  bool no_augment = false;
  // eval
  std::string metrics;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run config; flags override its values")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Seed for every random choice");
}

void add_model(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--preset", o.preset, "Model preset")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--base-width", o.base_width, "Encoder base width")->check(CLI::PositiveNumber);
  cmd->add_option("--fusion-depth", o.fusion_depth, "Decoder layers fused into the output (1-4)")->check(CLI::Range(1, 4));
  cmd->add_flag("--no-lg", o.no_lg, "Disable the LG blocks");
  cmd->add_option("--local-norm", o.local_norm, "Norm in local aggregation")->check(CLI::IsMember({"batch", "layer"}));
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.preset == "paper") c.model = paper_preset();
  if (o.preset == "desk") c.model = desk_preset();
  if (o.seed) c.seed = *o.seed;
  if (o.base_width) c.model.base_width = *o.base_width;
  if (o.fusion_depth) c.model.fusion_depth = *o.fusion_depth;
  if (o.no_lg) c.model.lg_enabled = false;
  if (!o.local_norm.empty()) c.model.local_norm = o.local_norm == "layer" ? nn::NormKind::layer : nn::NormKind::batch;
  if (o.num_samples) c.data.num_samples = *o.num_samples;
  if (o.classes) c.data.num_classes = *o.classes;
  if (!o.size.empty()) {
    c.data.height = o.size[0];
    c.data.width = o.size.size() > 1 ? o.size[1] : o.size[0];
  }
  if (!o.family.empty()) c.data.family = shape_family_from_string(o.family);
  if (o.noise) c.data.noise_sigma = *o.noise;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.iters) c.train.max_iter = *o.iters;
  if (o.lr) c.train.optim.lr_base = *o.lr;
  if (o.momentum) c.train.optim.momentum = *o.momentum;
  if (o.weight_decay) c.train.optim.weight_decay = *o.weight_decay;
  if (!o.loss.empty()) {
    try {
      c.train.loss = loss_terms_from_string(o.loss, c.train.loss);
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("--loss: ") + e.what());
    }
  }
  if (o.hybrid_weight) c.train.loss.hybrid_weight = *o.hybrid_weight;
  if (o.no_augment) c.train.augment = false;
  if (!o.metrics.empty()) c.metrics = o.metrics;
  c.propagate_seed();
  try {
    c.model.validate();
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  c.hd_percentile();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LUCF-Net segmentation: data synthesis, training, evaluation and diagnostics"};
  app.require_subcommand(1);
  Overrides o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  SynthOptions synth_opt;
  add_common(synth, o);
  synth->add_option("--out", synth_opt.out, "Target directory")->required();
  synth->add_option("--num-samples", o.num_samples, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--size", o.size, "Height [width]")->expected(1, 2);
  synth->add_option("--classes", o.classes, "Number of classes including background");
  synth->add_option("--family", o.family, "Shape family")->check(CLI::IsMember({"ellipses", "polygons", "nested"}));
  synth->add_option("--noise", o.noise, "Gaussian noise sigma");
  synth->add_option("--format", synth_opt.format, "Image format")->check(CLI::IsMember({"png", "pgm"}));
  synth->add_flag("--force", synth_opt.force, "Replace a non-empty target directory");

  auto* train = app.add_subcommand("train", "Train a model and write checkpoint + loss history");
  TrainOptions train_opt;
  add_common(train, o);
  add_model(train, o);
  train->add_option("--data", train_opt.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", train_opt.out, "Output directory")->required();
  auto* iters = train->add_option("--iters", o.iters, "Total iterations")->check(CLI::PositiveNumber);
  train->add_option("--epochs", o.epochs, "Total epochs (converted to iterations)")->check(CLI::PositiveNumber)->excludes(iters);
  train->add_option("--batch-size", o.batch_size, "Batch size")->check(CLI::PositiveNumber);
  train->add_option("--lr", o.lr, "Base learning rate")->check(CLI::NonNegativeNumber);
  train->add_option("--momentum", o.momentum, "SGD momentum");
  train->add_option("--weight-decay", o.weight_decay, "Weight decay")->check(CLI::NonNegativeNumber);
  train->add_option("--loss", o.loss, "Loss terms, e.g. lovasz+ohem or ce+dice");
  auto* hw = train->add_option("--hybrid-weight", o.hybrid_weight, "Weight of the region term")->check(CLI::Range(0.0, 1.0));
  train->add_option("--grid", train_opt.grid, "Hybrid weights; one run per value")->excludes(hw);
  train->add_flag("--no-augment", o.no_augment, "Disable flips and rotations");
  train->add_option("--resume", train_opt.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--stop-at", train_opt.stop_at, "Stop and checkpoint at this iteration")->check(CLI::NonNegativeNumber);
  train->add_option("--log-every", train_opt.log_every, "Progress interval (0 = silent)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  EvalOptions eval_opt;
  add_common(eval, o);
  eval->add_option("--checkpoint", eval_opt.checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", eval_opt.data, "Dataset directory")->required();
  eval->add_option("--out", eval_opt.out, "Report directory")->required();
  eval->add_option("--metrics", o.metrics, "Hausdorff variant")->check(CLI::IsMember({"hd95", "hd100"}));
  eval->add_option("--batch-size", o.batch_size, "Evaluation batch size")->check(CLI::PositiveNumber);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of every op, block and loss");
  std::string fault;
  bool gc_json = false;
  add_common(gradcheck, o);
  gradcheck->add_option("--inject-fault", fault, "Corrupt the backward rule of this op (negative control)");
  gradcheck->add_flag("--json", gc_json, "Machine-readable report");

  auto* summary = app.add_subcommand("summary", "Parameter and FLOP counts");
  std::vector<std::int64_t> input{224, 224};
  bool sum_json = false, measure = false;
  add_common(summary, o);
  add_model(summary, o);
  summary->add_option("--input", input, "Input height width")->expected(2)->capture_default_str();
  summary->add_option("--classes", o.classes, "Number of classes");
  summary->add_flag("--json", sum_json, "Machine-readable summary");
  summary->add_flag("--measure", measure, "Also count FLOPs by running the network");

  auto* dump = app.add_subcommand("dump-features", "Write per-stage feature maps as PGM");
  DumpOptions dump_opt;
  add_common(dump, o);
  add_model(dump, o);
  dump->add_option("--checkpoint", dump_opt.checkpoint, "Checkpoint file (random init if absent)")->check(CLI::ExistingFile);
  dump->add_option("--image", dump_opt.image, "Grayscale PGM or PNG")->required()->check(CLI::ExistingFile);
  dump->add_option("--out", dump_opt.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = resolve(o);
    if (*synth) {
      const auto m = cmd_synth(cfg, synth_opt);
      std::cout << "wrote " << m.entries.size() << " samples to " << synth_opt.out.string() << "\n";
    } else if (*train) {
      if (o.epochs) {
        const auto n = static_cast<std::int64_t>(load_dataset(train_opt.data).size());
        cfg.train.max_iter = iterations_for_epochs(n, cfg.train.batch_size, *o.epochs);
      }
      cmd_train(cfg, train_opt, std::clog);
      std::cout << "wrote " << train_opt.out.string() << "\n";
    } else if (*eval) {
      if (o.batch_size) cfg.eval_batch_size = *o.batch_size;
      const auto r = cmd_eval(cfg, eval_opt);
      std::cout << "mean_dsc " << r.mean_dsc << " mean_iou " << r.mean_iou << " mean_" << r.hd_label() << " " << r.mean_hd << "\n";
    } else if (*gradcheck) {
      const auto entries = cmd_gradcheck(cfg.seed, fault);
      if (gc_json) std::cout << to_json(entries).dump(2) << "\n";
      else std::cout << format_table(entries);
      if (!all_passed(entries)) {
        std::cerr << "gradcheck failed:";
        for (const auto& e : entries)
          if (!e.report.passed) std::cerr << " " << e.report.name;
        std::cerr << "\n";
        return 1;
      }
    } else if (*summary) {
      if (o.classes) cfg.model.num_classes = *o.classes;
      const auto s = cmd_summary(cfg.model, input[0], input[1], o.preset == "paper", measure);
      if (sum_json) std::cout << s.dump(2) << "\n";
      else std::cout << format_summary(s);
    } else if (*dump) {
      for (const auto& p : cmd_dump_features(cfg, dump_opt)) std::cout << p.string() << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
