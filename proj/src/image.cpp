#include "agnn/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace agnn {

template <typename S>
Tensor<S> upsample_bilinear(const Tensor<S>& map, int height, int width) {
  if (map.rank() != 2) throw ShapeError("upsample_bilinear: expected [H,W], got " + map.shape().str());
  const int h = map.dim(0), w = map.dim(1);
  Tensor<S> out(Shape{height, width});
  const double sy = static_cast<double>(h) / height, sx = static_cast<double>(w) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      const double top = (1 - tx) * map.at(y0, x0) + tx * map.at(y0, x1);
      const double bottom = (1 - tx) * map.at(y1, x0) + tx * map.at(y1, x1);
      out.at(y, x) = static_cast<S>((1 - ty) * top + ty * bottom);
    }
  }
  return out;
}

template Tensor<double> upsample_bilinear<double>(const Tensor<double>&, int, int);
template Tensor<float> upsample_bilinear<float>(const Tensor<float>&, int, int);

namespace {

struct Header {
  int width = 0;
  int height = 0;
  std::size_t payload = 0;  // offset of the first raster byte
};

class HeaderParser {
 public:
  explicit HeaderParser(std::string_view bytes) : bytes_(bytes) {}

  Header parse(std::string_view magic) {
    if (bytes_.substr(0, 2) != magic) throw FormatError("expected magic " + std::string(magic), 0);
    pos_ = 2;
    Header h;
    h.width = number("width");
    h.height = number("height");
    const int maxval = number("maxval");
    if (maxval != 255) throw FormatError("maxval " + std::to_string(maxval) + " is not 255", pos_);
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw FormatError("missing whitespace after maxval", pos_);
    }
    h.payload = pos_ + 1;
    return h;
  }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  int number(const char* what) {
    const std::size_t start = pos_;
    skip_space();
    if (pos_ == start && start != 0) {
      throw FormatError(std::string("missing separator before ") + what, pos_);
    }
    long value = 0;
    const std::size_t digits = pos_;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1 << 20) throw FormatError(std::string(what) + " is too large", digits);
      ++pos_;
    }
    if (pos_ == digits) throw FormatError(std::string("malformed ") + what, pos_);
    if (value <= 0) throw FormatError(std::string(what) + " must be positive", digits);
    return static_cast<int>(value);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string header(const char* magic, int width, int height) {
  return std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

void require_payload(std::string_view bytes, const Header& h, std::size_t needed) {
  if (bytes.size() - h.payload < needed) {
    throw FormatError("truncated payload: need " + std::to_string(needed) + " bytes, have " +
                          std::to_string(bytes.size() - h.payload),
                      bytes.size());
  }
}

}  // namespace

std::string encode_ppm(const Image& image) {
  std::string out = header("P6", image.width, image.height);
  out.append(image.rgb.begin(), image.rgb.end());
  return out;
}

std::string encode_pgm(const Mask& mask) {
  std::string out = header("P5", mask.width, mask.height);
  for (std::uint8_t v : mask.data) out.push_back(static_cast<char>(v ? 255 : 0));
  return out;
}

Image decode_ppm(std::string_view bytes) {
  const Header h = HeaderParser(bytes).parse("P6");
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height * 3;
  require_payload(bytes, h, n);
  Image img(h.height, h.width);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(h.payload), n, img.rgb.begin());
  return img;
}

Mask decode_pgm(std::string_view bytes) {
  const Header h = HeaderParser(bytes).parse("P5");
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  require_payload(bytes, h, n);
  Mask m(h.height, h.width);
  for (std::size_t i = 0; i < n; ++i) {
    m.data[i] = static_cast<unsigned char>(bytes[h.payload + i]) >= 128 ? 1 : 0;
  }
  return m;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_ppm(const std::filesystem::path& path, const Image& image) { write_file(path, encode_ppm(image)); }
void write_pgm(const std::filesystem::path& path, const Mask& mask) { write_file(path, encode_pgm(mask)); }
Image read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }
Mask read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

}  // namespace agnn
