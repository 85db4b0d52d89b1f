#include "lgseg/image.hpp"

#include <png.h>

#include <cstring>
#include <stdexcept>

namespace lgseg {

ImageU8 read_png(const std::string& path, int channels) {
  if (channels != 1 && channels != 3)
    throw std::invalid_argument("read_png: channels must be 1 or 3");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw std::runtime_error("read_png: cannot open " + path + ": " + image.message);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  ImageU8 out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("read_png: decode failed for " + path + ": " + image.message);
  }
  return out;
}

void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_png: channels must be 1 or 3");
  if (img.pixels.size() != static_cast<size_t>(img.width) * img.height * img.channels)
    throw std::invalid_argument("write_png: pixel buffer size mismatch");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw std::runtime_error("write_png: cannot write " + path + ": " + image.message);
}

Tensor image_to_tensor(const ImageU8& img) {
  std::vector<double> v(img.pixels.size());
  for (size_t i = 0; i < img.pixels.size(); ++i) v[i] = img.pixels[i] / 255.0;
  return Tensor::from({img.height, img.width, img.channels}, std::move(v));
}

}  // namespace lgseg
