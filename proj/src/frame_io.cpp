#include "onestream/frame_io.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <fmt/format.h>

#include "onestream/errors.hpp"

namespace onestream {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open(const fs::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError(fmt::format("cannot open {}", path.string()));
  return f;
}

std::string frame_name(std::size_t i) { return fmt::format("{:06d}.png", i); }

}  // namespace

Image read_png(const fs::path& path) {
  File file = open(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw IoError(fmt::format("{} is not a PNG file", path.string()));

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialization failed");
  }
  Image img;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(fmt::format("corrupt PNG {}", path.string()));
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // little-endian samples on read
  png_read_update_info(png, info);

  img.width = int(png_get_image_width(png, info));
  img.height = int(png_get_image_height(png, info));
  img.channels = int(png_get_channels(png, info));
  img.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * std::size_t(img.height));
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + std::size_t(y) * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = std::size_t(img.width) * img.height * img.channels;
  img.samples.resize(n);
  if (img.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i)
      img.samples[i] = std::uint16_t(buffer[2 * i] | (buffer[2 * i + 1] << 8));
  } else {
    for (std::size_t i = 0; i < n; ++i) img.samples[i] = buffer[i];
  }
  return img;
}

void write_png(const fs::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("write_png: 1 or 3 channels only");
  if (img.bit_depth != 8 && img.bit_depth != 16) throw IoError("write_png: 8 or 16 bits only");
  File file = open(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed");
  }
  const std::size_t bytes = img.bit_depth / 8;
  const std::size_t rowbytes = std::size_t(img.width) * img.channels * bytes;
  std::vector<png_byte> buffer(rowbytes * std::size_t(img.height));
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    if (bytes == 2) {
      buffer[2 * i] = png_byte(img.samples[i] >> 8);  // PNG is big-endian
      buffer[2 * i + 1] = png_byte(img.samples[i] & 0xff);
    } else {
      buffer[i] = png_byte(img.samples[i]);
    }
  }
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + std::size_t(y) * rowbytes;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(fmt::format("failed writing {}", path.string()));
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, img.width, img.height, img.bit_depth,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

AnnotatedStream read_frame_directory(const fs::path& root) {
  std::ifstream manifest(root / "manifest.txt");
  if (!manifest) throw IoError(fmt::format("missing {}", (root / "manifest.txt").string()));
  std::vector<std::string> names;
  int declared_classes = -1;
  for (std::string line; std::getline(manifest, line);) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream in(line.substr(1));
      std::string key;
      int value = 0;
      if (in >> key >> value && key == "classes") declared_classes = value;
      continue;
    }
    names.push_back(line);
  }
  if (names.empty()) throw ConfigError("frame directory manifest lists no videos", "stream.manifest");

  AnnotatedStream s;
  int max_label = -1;
  for (const std::string& name : names) {
    const fs::path dir = root / name;
    Video v;
    while (fs::exists(dir / frame_name(v.frames))) ++v.frames;
    if (v.frames == 0) throw IoError(fmt::format("video {} has no frames", dir.string()));
    const bool labels = fs::exists(dir / "labels" / frame_name(0));
    const bool depth = fs::exists(dir / "depth" / frame_name(0));
    for (std::size_t f = 0; f < v.frames; ++f) {
      const Image img = read_png(dir / frame_name(f));
      if (img.channels != 3 || img.bit_depth != 8)
        throw IoError(fmt::format("{}: frames must be 8-bit RGB", dir.string()));
      if (s.height == 0) {
        s.height = img.height;
        s.width = img.width;
      }
      if (img.height != s.height || img.width != s.width)
        throw IoError(fmt::format("{}: frame size differs from the stream", dir.string()));
      const std::size_t plane = std::size_t(s.height) * s.width;
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t p = 0; p < plane; ++p)
          v.rgb.push_back(std::uint8_t(img.samples[p * 3 + ch]));
      if (labels) {
        const Image lab = read_png(dir / "labels" / frame_name(f));
        if (lab.channels != 1 || lab.bit_depth != 8 || lab.width != s.width || lab.height != s.height)
          throw IoError(fmt::format("{}: labels must be 8-bit gray at frame size", dir.string()));
        for (std::uint16_t x : lab.samples) {
          const int label = x == 255 ? -1 : int(x);
          max_label = std::max(max_label, label);
          v.labels.push_back(std::int16_t(label));
        }
      }
      if (depth) {
        const Image dep = read_png(dir / "depth" / frame_name(f));
        if (dep.channels != 1 || dep.bit_depth != 16 || dep.width != s.width || dep.height != s.height)
          throw IoError(fmt::format("{}: depth must be 16-bit gray at frame size", dir.string()));
        v.depth_mm.insert(v.depth_mm.end(), dep.samples.begin(), dep.samples.end());
      }
    }
    s.videos.push_back(std::move(v));
  }
  s.num_classes = declared_classes > 0 ? declared_classes : max_label + 1;
  s.validate();
  return s;
}

void write_frame_directory(const AnnotatedStream& stream, const fs::path& root) {
  stream.validate();
  fs::create_directories(root);
  std::ofstream manifest(root / "manifest.txt");
  if (!manifest) throw IoError(fmt::format("cannot write {}", (root / "manifest.txt").string()));
  if (stream.has_labels()) manifest << "# classes " << stream.num_classes << '\n';
  const std::size_t plane = std::size_t(stream.height) * stream.width;
  for (std::size_t vi = 0; vi < stream.videos.size(); ++vi) {
    const Video& v = stream.videos[vi];
    const std::string name = fmt::format("video_{:04d}", vi);
    manifest << name << '\n';
    const fs::path dir = root / name;
    fs::create_directories(dir);
    if (!v.labels.empty()) fs::create_directories(dir / "labels");
    if (!v.depth_mm.empty()) fs::create_directories(dir / "depth");
    for (std::size_t f = 0; f < v.frames; ++f) {
      Image img{stream.width, stream.height, 3, 8, std::vector<std::uint16_t>(plane * 3)};
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t p = 0; p < plane; ++p) img.samples[p * 3 + ch] = v.rgb[(f * 3 + ch) * plane + p];
      write_png(dir / frame_name(f), img);
      if (!v.labels.empty()) {
        Image lab{stream.width, stream.height, 1, 8, std::vector<std::uint16_t>(plane)};
        for (std::size_t p = 0; p < plane; ++p) {
          const int label = v.labels[f * plane + p];
          lab.samples[p] = std::uint16_t(label < 0 ? 255 : label);
        }
        write_png(dir / "labels" / frame_name(f), lab);
      }
      if (!v.depth_mm.empty()) {
        Image dep{stream.width, stream.height, 1, 16,
                  std::vector<std::uint16_t>(v.depth_mm.begin() + f * plane,
                                             v.depth_mm.begin() + (f + 1) * plane)};
        write_png(dir / "depth" / frame_name(f), dep);
      }
    }
  }
  if (!manifest) throw IoError("failed writing manifest");
}

}  // namespace onestream
