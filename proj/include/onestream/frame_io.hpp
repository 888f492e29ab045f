#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "onestream/stream.hpp"

namespace onestream {

/// Decoded PNG: 8- or 16-bit samples, `channels` interleaved per pixel.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

/// Reads gray, gray+alpha, RGB or RGBA PNGs at 8 or 16 bits; alpha is
/// dropped and palettes expanded. Throws IoError.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// Frame directory layout under `root`:
///   manifest.txt          one video directory name per line
///   <video>/000000.png    RGB frames, numbered from 0
///   <video>/labels/*.png  optional 8-bit class ids, 255 = ignore
///   <video>/depth/*.png   optional 16-bit depth in millimeters, 0 = invalid
/// `num_classes` is taken from the manifest's `# classes N` line when
/// present, otherwise from the largest label seen.
AnnotatedStream read_frame_directory(const std::filesystem::path& root);
void write_frame_directory(const AnnotatedStream& stream, const std::filesystem::path& root);

}  // namespace onestream
