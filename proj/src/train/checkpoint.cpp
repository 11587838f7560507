#include "lucf/train/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "lucf/tensor/tensor_io.hpp"

namespace lucf {

namespace {

constexpr char kMagic[8] = {'L', 'U', 'C', 'F', 'C', 'K', 'P', 'T'};
constexpr int kFormatVersion = 1;

struct Slot {
  std::string name;
  Tensor* tensor;
};

std::vector<Slot> model_slots(LucfNet& net) {
  std::vector<Slot> slots;
  for (const auto& p : net.parameters()) slots.push_back({"param/" + p.name, p.tensor});
  for (const auto& b : net.buffers()) slots.push_back({"buffer/" + b.name, b.tensor});
  return slots;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

std::uint64_t parse_hex64(const std::string& s) {
  if (s.size() != 16) throw CheckpointFormatError("checkpoint: config_hash must be 16 hex digits");
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw CheckpointFormatError("checkpoint: config_hash must be 16 hex digits");
  }
  return v;
}

DType dtype_from_string(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw CheckpointFormatError("checkpoint: unknown dtype \"" + s + "\"");
}

std::size_t element_size(DType d) { return d == DType::f32 ? 4 : 8; }

struct Parsed {
  CheckpointMeta meta;
  nlohmann::json directory;
  std::string data;
};

Parsed parse(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointFormatError("checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw CheckpointFormatError("checkpoint: " + path.string() + " is not a checkpoint (bad magic)");
  }
  std::istringstream lenstream(bytes.substr(8, 8));
  const std::uint64_t header_len = le::get_u64(lenstream);
  if (header_len > bytes.size() - 16) throw CheckpointFormatError("checkpoint: header length exceeds file size (truncated?)");

  Parsed p;
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(16, static_cast<std::size_t>(header_len)));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointFormatError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  try {
    if (h.at("format").get<int>() != kFormatVersion) throw CheckpointFormatError("checkpoint: unsupported format version");
    auto& m = p.meta;
    try {
      m.config = model_config_from_json(h.at("config"));
    } catch (const std::invalid_argument& e) {
      throw CheckpointFormatError(std::string("checkpoint: invalid config: ") + e.what());
    }
    m.config_hash = parse_hex64(h.at("config_hash").get<std::string>());
    m.iter = h.at("iter").get<std::int64_t>();
    m.max_iter = h.at("max_iter").get<std::int64_t>();
    m.has_optimizer = !h.at("optimizer").is_null();
    if (m.has_optimizer) {
      try {
        m.optim = optim_config_from_json(h.at("optimizer"));
      } catch (const std::invalid_argument& e) {
        throw CheckpointFormatError(std::string("checkpoint: invalid optimizer: ") + e.what());
      }
    }
    const auto& r = h.at("rng");
    m.rng = Rng(r.at("seed").get<std::uint64_t>(), r.at("stream").get<std::uint64_t>(), r.at("counter").get<std::uint64_t>());
    m.train = h.at("train");
    p.directory = h.at("tensors");
    if (!p.directory.is_array()) throw CheckpointFormatError("checkpoint: tensor directory must be an array");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointFormatError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  if (config_hash(p.meta.config) != p.meta.config_hash) {
    throw CheckpointHashError("checkpoint: stored config_hash " + hex64(p.meta.config_hash) +
                              " does not match the stored config (" + hex64(config_hash(p.meta.config)) + ")");
  }
  p.data = bytes.substr(16 + static_cast<std::size_t>(header_len));
  return p;
}

struct Entry {
  std::string name;
  Tensor value;
};

std::vector<Entry> read_entries(const Parsed& p) {
  std::vector<Entry> entries;
  std::uint64_t expected_offset = 0;
  try {
    for (const auto& e : p.directory) {
      Entry out;
      out.name = e.at("name").get<std::string>();
      const DType dtype = dtype_from_string(e.at("dtype").get<std::string>());
      const Shape shape = e.at("shape").get<Shape>();
      for (auto d : shape)
        if (d < 1) throw CheckpointFormatError("checkpoint: " + out.name + " has a non-positive extent");
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto nbytes = e.at("bytes").get<std::uint64_t>();
      if (offset != expected_offset || nbytes != static_cast<std::uint64_t>(shape_numel(shape)) * element_size(dtype)) {
        throw CheckpointFormatError("checkpoint: inconsistent directory entry for " + out.name);
      }
      if (offset + nbytes > p.data.size()) throw CheckpointFormatError("checkpoint: data for " + out.name + " is truncated");
      out.value = Tensor::empty(shape, dtype);
      std::istringstream is(p.data.substr(static_cast<std::size_t>(offset), static_cast<std::size_t>(nbytes)));
      le::get_values(is, out.value);
      expected_offset += nbytes;
      entries.push_back(std::move(out));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointFormatError(std::string("checkpoint: corrupt tensor directory: ") + e.what());
  }
  if (expected_offset != p.data.size()) throw CheckpointFormatError("checkpoint: trailing bytes after tensor data");
  return entries;
}

void check_match(const Entry& e, const Tensor& target) {
  if (e.value.shape() != target.shape() || e.value.dtype() != target.dtype()) {
    throw CheckpointShapeError("checkpoint: " + e.name + " is " + shape_str(e.value.shape()) + " " + to_string(e.value.dtype()) +
                               ", model expects " + shape_str(target.shape()) + " " + to_string(target.dtype()));
  }
}

void copy_into(const Tensor& src, Tensor& dst) {
  dispatch(dst.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto s = src.template data<T>();
    auto d = dst.template mutable_data<T>();
    std::copy(s.begin(), s.end(), d.begin());
  });
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, LucfNet& net, const OptimState* optim, const Rng& rng,
                     const nlohmann::json& train) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& s : model_slots(net)) tensors.emplace_back(s.name, s.tensor);
  const auto params = net.parameters();
  if (optim != nullptr && !optim->velocity.empty()) {
    if (optim->velocity.size() != params.size()) throw std::invalid_argument("save_checkpoint: velocity count does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) tensors.emplace_back("velocity/" + params[i].name, &optim->velocity[i]);
  }

  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const auto nbytes = static_cast<std::uint64_t>(t->numel()) * element_size(t->dtype());
    dir.push_back({{"name", name}, {"dtype", to_string(t->dtype())}, {"shape", t->shape()}, {"offset", offset}, {"bytes", nbytes}});
    offset += nbytes;
  }
  nlohmann::json h;
  h["format"] = kFormatVersion;
  h["config"] = to_json(net.config());
  h["config_hash"] = hex64(config_hash(net.config()));
  h["iter"] = optim != nullptr ? optim->iter : 0;
  h["max_iter"] = optim != nullptr ? optim->max_iter : 0;
  h["optimizer"] = optim != nullptr ? to_json(optim->cfg) : nlohmann::json(nullptr);
  h["rng"] = {{"seed", rng.seed()}, {"stream", rng.stream()}, {"counter", rng.counter()}};
  h["train"] = train;
  h["tensors"] = dir;
  const std::string header = h.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write " + tmp.string());
    out.write(kMagic, 8);
    le::put_u64(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : tensors) le::put_values(out, *t);
    if (!out.flush()) throw std::runtime_error("save_checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) { return parse(path).meta; }

CheckpointMeta load_checkpoint(const std::filesystem::path& path, LucfNet& net, OptimState* optim) {
  Parsed p = parse(path);
  const auto want = config_hash(net.config());
  if (p.meta.config_hash != want) {
    throw CheckpointHashError("checkpoint: config_hash " + hex64(p.meta.config_hash) + " does not match the model (" + hex64(want) + ")");
  }
  auto entries = read_entries(p);

  auto slots = model_slots(net);
  const auto params = net.parameters();
  std::vector<const Tensor*> model_values(slots.size(), nullptr);
  std::vector<Tensor> velocity;
  std::size_t next_slot = 0;
  for (const auto& e : entries) {
    if (next_slot < slots.size()) {
      if (e.name != slots[next_slot].name) {
        throw CheckpointShapeError("checkpoint: expected " + slots[next_slot].name + ", found " + e.name);
      }
      check_match(e, *slots[next_slot].tensor);
      model_values[next_slot] = &e.value;
      ++next_slot;
      continue;
    }
    const std::size_t vi = velocity.size();
    if (vi >= params.size() || e.name != "velocity/" + params[vi].name) {
      throw CheckpointShapeError("checkpoint: unexpected tensor " + e.name);
    }
    check_match(e, *params[vi].tensor);
    velocity.push_back(e.value);
  }
  if (next_slot != slots.size()) throw CheckpointShapeError("checkpoint: missing tensor " + slots[next_slot].name);
  if (!velocity.empty() && velocity.size() != params.size()) {
    throw CheckpointShapeError("checkpoint: missing tensor velocity/" + params[velocity.size()].name);
  }

  for (std::size_t i = 0; i < slots.size(); ++i) copy_into(*model_values[i], *slots[i].tensor);
  if (optim != nullptr) {
    if (p.meta.has_optimizer) optim->cfg = p.meta.optim;
    optim->iter = p.meta.iter;
    optim->max_iter = p.meta.max_iter;
    optim->velocity = std::move(velocity);
  }
  return p.meta;
}

}  // namespace lucf
