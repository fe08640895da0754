#include "tthlab/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tthlab/error.hpp"

namespace tth {

std::string ImageShape::to_string() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

Image::Image(ImageShape shape, double fill) : shape_(shape), px_(shape.size(), fill) {}

Image::Image(ImageShape shape, std::vector<double> pixels)
    : shape_(shape), px_(std::move(pixels)) {
  if (px_.size() != shape_.size()) {
    raise(ErrorKind::Dimension, "image " + shape_.to_string() + " given " +
                                    std::to_string(px_.size()) + " values");
  }
  require_finite(px_, "image pixels");
}

Tensor Image::to_tensor() const {
  return Tensor({shape_.height, shape_.width, shape_.channels}, px_);
}

Image Image::from_tensor(const Tensor& t) {
  if (t.rank() != 3) raise(ErrorKind::Dimension, "image tensor must be H x W x C");
  const auto v = t.values();
  return Image({t.dim(0), t.dim(1), t.dim(2)}, std::vector<double>(v.begin(), v.end()));
}

Image Image::crop(const PixelRect& rect) const {
  if (rect.y + rect.height > shape_.height || rect.x + rect.width > shape_.width) {
    raise(ErrorKind::Dimension, "crop window exceeds image " + shape_.to_string());
  }
  Image out({rect.height, rect.width, shape_.channels});
  for (std::size_t y = 0; y < rect.height; ++y) {
    for (std::size_t x = 0; x < rect.width; ++x) {
      for (std::size_t c = 0; c < shape_.channels; ++c) {
        out.at(y, x, c) = at(rect.y + y, rect.x + x, c);
      }
    }
  }
  return out;
}

Image quantized(const Image& image) {
  Image out = image;
  for (double& v : out.pixels()) v = std::clamp(std::round(v), 0.0, 255.0);
  return out;
}

std::string encode_ppm(const Image& image) {
  if (image.channels() != 3) raise(ErrorKind::Format, "PPM needs 3 channels");
  std::string out = "P6\n" + std::to_string(image.width()) + " " +
                    std::to_string(image.height()) + "\n255\n";
  out.reserve(out.size() + image.shape().size());
  for (double v : image.pixels()) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(std::round(v), 0.0, 255.0))));
  }
  return out;
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::size_t read_header_int(std::string_view bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  std::size_t start = pos;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) raise(ErrorKind::Format, "malformed PPM header");
  return std::stoul(std::string(bytes.substr(start, pos - start)));
}

}  // namespace

Image decode_ppm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes.substr(0, 2) != "P6") raise(ErrorKind::Format, "not a P6 PPM");
  std::size_t pos = 2;
  const std::size_t width = read_header_int(bytes, pos);
  const std::size_t height = read_header_int(bytes, pos);
  const std::size_t maxval = read_header_int(bytes, pos);
  if (maxval != 255) raise(ErrorKind::Format, "PPM maxval must be 255");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    raise(ErrorKind::Format, "malformed PPM header");
  }
  ++pos;
  const ImageShape shape{height, width, 3};
  if (bytes.size() - pos < shape.size()) raise(ErrorKind::Format, "truncated PPM data");
  std::vector<double> px(shape.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i]));
  }
  return Image(shape, std::move(px));
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot write " + path.string());
  const std::string bytes = encode_ppm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise(ErrorKind::Io, "write failed for " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return decode_ppm(buf.str());
  } catch (const Error& e) {
    raise(e.kind(), std::string(e.what()) + " (" + path.string() + ")");
  }
}

}  // namespace tth
