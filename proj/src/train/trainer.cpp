#include "lucf/train/trainer.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lucf/tensor/autograd.hpp"

namespace lucf {

namespace {

constexpr std::uint64_t kOrderStream = 0x0DA7A0DE;

std::string fmt(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::int64_t> epoch_permutation(std::int64_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed, kOrderStream + static_cast<std::uint64_t>(epoch));
  for (std::int64_t i = n - 1; i > 0; --i) {
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  }
  return perm;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (max_iter < 1) throw std::invalid_argument("train: max_iter must be >= 1");
  optim.validate();
  loss.validate();
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"batch_size", cfg.batch_size}, {"max_iter", cfg.max_iter}, {"seed", cfg.seed},
          {"augment", cfg.augment},       {"optim", to_json(cfg.optim)},  {"loss", to_json(cfg.loss)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "batch_size") c.batch_size = v.get<std::int64_t>();
    else if (key == "max_iter") c.max_iter = v.get<std::int64_t>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "augment") c.augment = v.get<bool>();
    else if (key == "optim") c.optim = optim_config_from_json(v);
    else if (key == "loss") c.loss = loss_config_from_json(v);
    else throw std::invalid_argument("train config: unknown key \"" + key + "\"");
  }
  c.validate();
  return c;
}

std::int64_t iterations_for_epochs(std::int64_t num_samples, std::int64_t batch_size, std::int64_t epochs) {
  if (num_samples < 1 || batch_size < 1 || epochs < 1) throw std::invalid_argument("iterations_for_epochs: arguments must be >= 1");
  return epochs * ((num_samples + batch_size - 1) / batch_size);
}

std::vector<std::int64_t> batch_indices(std::int64_t num_samples, std::int64_t batch_size, std::uint64_t seed, std::int64_t iter) {
  if (num_samples < 1) throw std::invalid_argument("batch_indices: empty dataset");
  std::vector<std::int64_t> out;
  std::int64_t cached_epoch = -1;
  std::vector<std::int64_t> perm;
  for (std::int64_t j = 0; j < batch_size; ++j) {
    const std::int64_t g = iter * batch_size + j;
    const std::int64_t epoch = g / num_samples;
    if (epoch != cached_epoch) {
      perm = epoch_permutation(num_samples, seed, epoch);
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<std::size_t>(g % num_samples)]);
  }
  return out;
}

std::uint64_t augment_seed(std::uint64_t seed, std::int64_t position) {
  return Rng::mix64(seed ^ Rng::mix64(static_cast<std::uint64_t>(position) + 0xA5A5A5A5ULL));
}

std::pair<Tensor, LabelMap> make_batch(const std::vector<SegSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
  const auto& first = samples.front();
  const std::int64_t c = first.image.dim(0), h = first.height(), w = first.width();
  const auto b = static_cast<std::int64_t>(samples.size());
  std::vector<float> img;
  img.reserve(static_cast<std::size_t>(b * c * h * w));
  LabelMap labels(b, h, w);
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (s.image.shape() != first.image.shape()) {
      throw std::invalid_argument("make_batch: sample " + s.id + " is " + shape_str(s.image.shape()) + ", expected " +
                                  shape_str(first.image.shape()));
    }
    const Tensor f = s.image.to(DType::f32);
    auto d = f.data<float>();
    img.insert(img.end(), d.begin(), d.end());
    std::copy(s.label.values.begin(), s.label.values.end(), labels.values.begin() + i * h * w);
  }
  Tensor x = Tensor::from_buffer<float>({b, c, h, w}, std::move(img));
  return {default_dtype() == DType::f32 ? x : x.to(default_dtype()), std::move(labels)};
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  std::size_t heads = rows.empty() ? 0 : rows.front().per_head.size();
  os << "iter,lr,total";
  for (std::size_t k = 0; k < heads; ++k) os << ",head" << k + 1;
  if (!rows.empty())
    for (const auto& [name, v] : rows.front().components) os << ',' << name;
  os << '\n';
  for (const auto& r : rows) {
    os << r.iter << ',' << fmt(r.lr) << ',' << fmt(r.total);
    for (double v : r.per_head) os << ',' << fmt(v);
    for (const auto& [name, v] : r.components) os << ',' << fmt(v);
    os << '\n';
  }
  return os.str();
}

void write_history(const std::filesystem::path& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_history: cannot write " + path.string());
  out << history_csv(rows);
}

Trainer::Trainer(LucfNet& net, std::vector<SegSample> data, TrainConfig cfg) : net_(net), data_(std::move(data)), cfg_(cfg) {
  cfg_.validate();
  if (data_.empty()) throw std::invalid_argument("train: dataset is empty");
  const auto& mc = net_.config();
  for (const auto& s : data_) {
    if (s.num_classes != mc.num_classes) {
      throw std::invalid_argument("train: sample " + s.id + " has " + std::to_string(s.num_classes) + " classes, model has " +
                                  std::to_string(mc.num_classes));
    }
    if (s.image.dim(0) != mc.in_channels) {
      throw std::invalid_argument("train: sample " + s.id + " has " + std::to_string(s.image.dim(0)) +
                                  " channels, model expects " + std::to_string(mc.in_channels));
    }
  }
  mc.validate_input(data_.front().height(), data_.front().width());
  optim_.cfg = cfg_.optim;
  optim_.max_iter = cfg_.max_iter;
}

Rng Trainer::data_rng() const { return Rng(cfg_.seed, kOrderStream, static_cast<std::uint64_t>(optim_.iter)); }

HistoryRow Trainer::step() {
  const std::int64_t it = optim_.iter;
  if (it >= cfg_.max_iter) throw std::logic_error("train: already at max_iter " + std::to_string(cfg_.max_iter));
  const auto idx = batch_indices(static_cast<std::int64_t>(data_.size()), cfg_.batch_size, cfg_.seed, it);
  std::vector<SegSample> batch;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const auto& s = data_[static_cast<std::size_t>(idx[j])];
    batch.push_back(cfg_.augment ? augment(s, augment_seed(cfg_.seed, it * cfg_.batch_size + static_cast<std::int64_t>(j))) : s);
  }
  auto [x, labels] = make_batch(batch);

  net_.train();
  net_.zero_grad();
  const auto out = net_.forward(x);
  const auto rep = deep_supervision_loss(out, labels, cfg_.loss);

  HistoryRow row;
  row.iter = it;
  row.lr = optim_.lr();
  row.total = rep.total;
  row.per_head = rep.per_head;
  row.components = rep.components;
  if (!std::isfinite(rep.total)) {
    std::string culprit = "total";
    for (const auto& [name, v] : rep.components) {
      if (!std::isfinite(v)) {
        culprit = name;
        break;
      }
    }
    throw TrainingDiverged("train: non-finite loss at iter " + std::to_string(it) + ": first non-finite component is " + culprit);
  }

  rep.graph.backward();
  const auto params = net_.parameters();
  for (const auto& p : params) {
    const Tensor g = p.tensor->grad();
    if (!g.defined()) continue;
    for (double v : g.to_vector()) {
      if (!std::isfinite(v)) throw TrainingDiverged("train: non-finite gradient at iter " + std::to_string(it) + " in " + p.name);
    }
  }
  sgd_step(params, optim_);
  history_.push_back(row);
  return row;
}

std::vector<HistoryRow> Trainer::run(std::int64_t until, const std::function<void(const HistoryRow&)>& on_step) {
  if (until < 0) until = cfg_.max_iter;
  if (until > cfg_.max_iter) throw std::invalid_argument("train: cannot run past max_iter");
  std::vector<HistoryRow> rows;
  while (optim_.iter < until) {
    rows.push_back(step());
    if (on_step) on_step(rows.back());
  }
  return rows;
}

void Trainer::save(const std::filesystem::path& path) { save_checkpoint(path, net_, &optim_, data_rng(), to_json(cfg_)); }

void Trainer::resume(const std::filesystem::path& path) {
  OptimState loaded;
  const auto meta = load_checkpoint(path, net_, &loaded);
  if (loaded.max_iter != cfg_.max_iter) {
    throw std::invalid_argument("train: checkpoint max_iter " + std::to_string(loaded.max_iter) + " differs from the run's " +
                                std::to_string(cfg_.max_iter));
  }
  optim_ = std::move(loaded);
  (void)meta;
}

MetricReport evaluate_run(LucfNet& net, const std::vector<SegSample>& data, std::int64_t batch_size, double hd_percentile) {
  if (data.empty()) throw std::invalid_argument("evaluate_run: dataset is empty");
  if (batch_size < 1) throw std::invalid_argument("evaluate_run: batch_size must be >= 1");
  const auto k = net.config().num_classes;
  for (const auto& s : data) {
    if (s.num_classes != k) {
      throw std::invalid_argument("evaluate_run: sample " + s.id + " has " + std::to_string(s.num_classes) +
                                  " classes, model has " + std::to_string(k));
    }
  }
  const bool was_training = net.training();
  net.eval();
  NoGradGuard no_grad;
  const auto h = data.front().height(), w = data.front().width();
  const auto n = static_cast<std::int64_t>(data.size());
  LabelMap pred(n, h, w), gt(n, h, w);
  try {
    for (std::int64_t start = 0; start < n; start += batch_size) {
      const auto end = std::min(n, start + batch_size);
      std::vector<SegSample> chunk(data.begin() + start, data.begin() + end);
      auto [x, labels] = make_batch(chunk);
      const auto p = argmax_channels(net.forward(x).fused_logits);
      std::copy(p.values.begin(), p.values.end(), pred.values.begin() + start * h * w);
      std::copy(labels.values.begin(), labels.values.end(), gt.values.begin() + start * h * w);
    }
  } catch (...) {
    net.train(was_training);
    throw;
  }
  net.train(was_training);
  return evaluate(pred, gt, k, hd_percentile);
}

}  // namespace lucf
