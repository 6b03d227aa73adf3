#include "cgir/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "cgir/rng.hpp"

namespace cgir {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Tensor load_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) raise<IoError>("cannot open ", path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) raise<IoError>("libpng read init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    raise<IoError>("libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise<IoError>("failed to decode ", path);
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  // Normalize every input variant to 8-bit RGB.
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::vector<png_byte> row(static_cast<size_t>(png_get_rowbytes(png, info)));
  Tensor img = Tensor::empty({3, static_cast<int64_t>(h), static_cast<int64_t>(w)});
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at({c, static_cast<int64_t>(y), static_cast<int64_t>(x)}) =
            static_cast<Scalar>(row[3 * x + static_cast<png_uint_32>(c)]) / 255.0;
      }
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void save_png(const std::string& path, const Tensor& img) {
  check_shape(img.rank() == 3 && img.dim(0) == 3,
              "save_png: expected (3,H,W), got ", shape_str(img.shape()));
  const int64_t h = img.dim(1), w = img.dim(2);

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) raise<IoError>("cannot create ", path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) raise<IoError>("libpng write init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    raise<IoError>("libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    raise<IoError>("failed to encode ", path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<size_t>(3 * w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        Scalar v = img.at({c, y, x});
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        row[static_cast<size_t>(3 * x + c)] =
            static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
    png_write_row(png, row.data());
  }

  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void check_image_dims(const Tensor& img, const char* who) {
  check_shape(img.rank() == 3 && img.dim(0) == 3, who, ": expected (3,H,W), got ",
              shape_str(img.shape()));
  const int64_t h = img.dim(1), w = img.dim(2);
  check_param(h >= 32 && w >= 32 && h % 16 == 0 && w % 16 == 0, who,
              ": image sides must be >= 32 and divisible by 16, got ", h, "x", w);
  for (int64_t i = 0; i < img.numel(); ++i)
    check_param(img[i] >= 0.0 && img[i] <= 1.0, who, ": pixel values must lie in [0,1]");
}

Tensor procedural_clean(int64_t index, int64_t h, int64_t w) {
  check_param(h >= 1 && w >= 1, "procedural_clean: bad size");
  Rng rng(derive_seed(0xc1ea11u, static_cast<uint64_t>(index)));
  Tensor img = Tensor::empty({3, h, w});

  // Base: per-channel affine gradient with random orientation.
  for (int c = 0; c < 3; ++c) {
    const Scalar gx = rng.uniform(-0.5, 0.5), gy = rng.uniform(-0.5, 0.5);
    const Scalar bias = rng.uniform(0.2, 0.8);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        img.at({c, y, x}) = bias + gx * (static_cast<Scalar>(x) / w - 0.5) +
                            gy * (static_cast<Scalar>(y) / h - 0.5);
  }

  // A few opaque rectangles and disks of random color.
  const int shapes = 3 + static_cast<int>(rng.below(4));
  for (int s = 0; s < shapes; ++s) {
    const Scalar col[3] = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                           rng.uniform(0.05, 0.95)};
    const bool disk = rng.coin();
    const int64_t cy = static_cast<int64_t>(rng.below(static_cast<uint64_t>(h)));
    const int64_t cx = static_cast<int64_t>(rng.below(static_cast<uint64_t>(w)));
    const int64_t ry = 2 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(h / 4 + 1)));
    const int64_t rx = 2 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(w / 4 + 1)));
    for (int64_t y = std::max<int64_t>(0, cy - ry); y < std::min(h, cy + ry); ++y)
      for (int64_t x = std::max<int64_t>(0, cx - rx); x < std::min(w, cx + rx); ++x) {
        if (disk) {
          const Scalar dy = static_cast<Scalar>(y - cy) / ry;
          const Scalar dx = static_cast<Scalar>(x - cx) / rx;
          if (dy * dy + dx * dx > 1.0) continue;
        }
        for (int c = 0; c < 3; ++c) img.at({c, y, x}) = col[c];
      }
  }

  // Low-amplitude sinusoidal texture supplies mid-frequency content.
  const Scalar fy = rng.uniform(2.0, 7.0), fx = rng.uniform(2.0, 7.0);
  const Scalar phase = rng.uniform(0.0, 6.28318530717958648);
  const Scalar amp = rng.uniform(0.03, 0.08);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const Scalar t = amp * std::sin(2.0 * M_PI * (fy * y / h + fx * x / w) + phase);
      for (int c = 0; c < 3; ++c) img.at({c, y, x}) += t;
    }

  for (int64_t i = 0; i < img.numel(); ++i)
    img[i] = img[i] < 0.0 ? 0.0 : (img[i] > 1.0 ? 1.0 : img[i]);
  return img;
}

}  // namespace cgir
