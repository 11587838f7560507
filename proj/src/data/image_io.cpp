#include <png.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lucf/data/dataset.hpp"

namespace lucf {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Gray8 read_pgm(const std::string& bytes, const std::filesystem::path& path) {
  std::size_t pos = 2;
  auto next_int = [&]() -> std::int64_t {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::int64_t v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw std::runtime_error(path.string() + ": malformed PGM header");
    return v;
  };
  Gray8 img;
  img.width = next_int();
  img.height = next_int();
  const auto maxval = next_int();
  if (maxval < 1 || maxval > 255) throw std::runtime_error(path.string() + ": unsupported PGM maxval " + std::to_string(maxval));
  ++pos;  // single whitespace byte after maxval
  const auto n = static_cast<std::size_t>(img.width * img.height);
  if (img.width < 1 || img.height < 1 || bytes.size() < pos + n) throw std::runtime_error(path.string() + ": truncated PGM data");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

Gray8 read_png(const std::string& bytes, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw std::runtime_error(path.string() + ": " + image.message);
  }
  if (image.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_LINEAR)) {
    png_image_free(&image);
    throw std::runtime_error(path.string() + ": unsupported PNG (only 8-bit grayscale is accepted)");
  }
  image.format = PNG_FORMAT_GRAY;
  Gray8 img;
  img.height = image.height;
  img.width = image.width;
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    throw std::runtime_error(path.string() + ": " + image.message);
  }
  return img;
}

}  // namespace

Gray8 read_gray8(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return read_pgm(bytes, path);
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) == 0) return read_png(bytes, path);
  throw std::runtime_error(path.string() + ": unsupported image format (expected PGM P5 or PNG)");
}

void write_gray8(const std::filesystem::path& path, const Gray8& img) {
  if (static_cast<std::int64_t>(img.pixels.size()) != img.height * img.width) throw std::invalid_argument("write_gray8: pixel count mismatch");
  const auto ext = path.extension().string();
  if (ext == ".pgm") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    return;
  }
  if (ext == ".png") {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
      throw std::runtime_error(path.string() + ": " + image.message);
    }
    return;
  }
  throw std::invalid_argument(path.string() + ": unsupported extension (expected .pgm or .png)");
}

SegSample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                      std::int64_t num_classes, std::string id) {
  const Gray8 img = read_gray8(image_path);
  const LabelMap label = load_mask(label_path);
  if (img.height != label.height || img.width != label.width) {
    throw std::invalid_argument("image " + image_path.string() + " is " + std::to_string(img.height) + "x" +
                                std::to_string(img.width) + " but label " + label_path.string() + " is " +
                                std::to_string(label.height) + "x" + std::to_string(label.width));
  }
  SegSample s;
  s.id = id.empty() ? image_path.stem().string() : std::move(id);
  s.num_classes = num_classes;
  std::vector<float> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  s.image = Tensor::from_buffer({1, img.height, img.width}, std::move(v));
  s.label = label;
  s.validate();
  return s;
}

void save_mask(const LabelMap& mask, const std::filesystem::path& path) {
  if (mask.batch != 1) throw std::invalid_argument("save_mask: expected a single [1, H, W] mask");
  Gray8 img{mask.height, mask.width, {}};
  img.pixels.reserve(mask.values.size());
  for (auto v : mask.values) {
    if (v < 0 || v > 255) throw std::invalid_argument("save_mask: class " + std::to_string(v) + " does not fit in 8 bits");
    img.pixels.push_back(static_cast<std::uint8_t>(v));
  }
  write_gray8(path, img);
}

LabelMap load_mask(const std::filesystem::path& path) {
  const Gray8 img = read_gray8(path);
  return LabelMap(1, img.height, img.width, std::vector<std::int32_t>(img.pixels.begin(), img.pixels.end()));
}

void save_image(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3 && image.rank() != 2) throw std::invalid_argument("save_image: expected [C, H, W] or [H, W]");
  const std::int64_t h = image.dim(-2), w = image.dim(-1);
  Gray8 img{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
  for (std::int64_t i = 0; i < h * w; ++i) {
    const double v = std::clamp(image.value_at(i), 0.0, 1.0);
    img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  write_gray8(path, img);
}

}  // namespace lucf
