#pragma once

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <csetjmp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include "vcrobust/errors.hpp"
#include "vcrobust/image.hpp"

namespace vcrobust {

namespace detail {

inline bool has_png_signature(const std::vector<unsigned char>& bytes) {
  static constexpr unsigned char kSig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return bytes.size() >= 8 && std::equal(kSig, kSig + 8, bytes.begin());
}

inline bool has_jpeg_signature(const std::vector<unsigned char>& bytes) {
  return bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF;
}

inline Image image_from_rgb8(int h, int w, const unsigned char* rgb) {
  std::vector<double> data(Image::expected_size(h, w));
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = rgb[i] / 255.0;
  return Image(h, w, std::move(data));
}

inline Image decode_png(const std::vector<unsigned char>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw IoError(std::string("cannot read PNG header: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG: " + msg);
  }
  return image_from_rgb8(static_cast<int>(image.height),
                         static_cast<int>(image.width), rgb.data());
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

struct JpegDecodeState {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  std::vector<unsigned char> rgb;
  int height = 0;
  int width = 0;
};

// No automatic objects are modified between setjmp and longjmp; all state
// lives behind `state`.
inline bool decode_jpeg_raw(const std::vector<unsigned char>& bytes,
                            JpegDecodeState* state) {
  state->cinfo.err = jpeg_std_error(&state->err.pub);
  state->err.pub.error_exit = jpeg_error_exit;
  if (setjmp(state->err.jump)) {
    jpeg_destroy_decompress(&state->cinfo);
    return false;
  }
  jpeg_create_decompress(&state->cinfo);
  jpeg_mem_src(&state->cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&state->cinfo, TRUE);
  state->cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&state->cinfo);
  state->width = static_cast<int>(state->cinfo.output_width);
  state->height = static_cast<int>(state->cinfo.output_height);
  const std::size_t stride = static_cast<std::size_t>(state->width) * 3;
  state->rgb.resize(stride * static_cast<std::size_t>(state->height));
  while (state->cinfo.output_scanline < state->cinfo.output_height) {
    JSAMPROW row = state->rgb.data() + stride * state->cinfo.output_scanline;
    jpeg_read_scanlines(&state->cinfo, &row, 1);
  }
  jpeg_finish_decompress(&state->cinfo);
  jpeg_destroy_decompress(&state->cinfo);
  return true;
}

inline Image decode_jpeg(const std::vector<unsigned char>& bytes) {
  auto state = std::make_unique<JpegDecodeState>();
  if (!decode_jpeg_raw(bytes, state.get())) {
    throw IoError(std::string("cannot decode JPEG: ") + state->err.message);
  }
  return image_from_rgb8(state->height, state->width, state->rgb.data());
}

inline unsigned char to_byte(double v) {
  // Round half up; intensities are already in [0, 1].
  return static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
}

}  // namespace detail

/// Decodes PNG or JPEG bytes (format sniffed from the signature). Grayscale
/// is broadcast to three channels.
inline Image decode_image(const std::vector<unsigned char>& bytes) {
  if (detail::has_png_signature(bytes)) return detail::decode_png(bytes);
  if (detail::has_jpeg_signature(bytes)) return detail::decode_jpeg(bytes);
  throw FormatError("unsupported image format (expected PNG or JPEG)");
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  return bytes;
}

inline Image load_image(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw IoError("no such image file: " + path.string());
  }
  return decode_image(read_file_bytes(path));
}

/// 8-bit RGB PNG, each intensity stored as round_half_up(i * 255).
inline std::vector<unsigned char> encode_png(const Image& img) {
  std::vector<unsigned char> rgb(img.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = detail::to_byte(img.data()[i]);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw IoError(std::string("cannot size PNG: ") + image.message);
  }
  std::vector<unsigned char> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw IoError(std::string("cannot encode PNG: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline void save_image(const Image& img, const std::filesystem::path& path) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing " + path.string());
}

}  // namespace vcrobust
