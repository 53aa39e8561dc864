#include "patchforge/codec.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <jpeglib.h>

namespace patchforge {

std::string_view codec_name(Codec codec) {
  switch (codec) {
    case Codec::Raw:
      return "raw";
    case Codec::Png:
      return "png";
    case Codec::Jpeg:
      return "jpeg";
  }
  return "raw";
}

Codec parse_codec(std::string_view name) {
  if (name == "raw") return Codec::Raw;
  if (name == "png") return Codec::Png;
  if (name == "jpeg" || name == "jpg") return Codec::Jpeg;
  throw ValidationError("unknown codec '" + std::string(name) + "'");
}

std::string_view codec_extension(Codec codec) {
  switch (codec) {
    case Codec::Raw:
      return "raw";
    case Codec::Png:
      return "png";
    case Codec::Jpeg:
      return "jpg";
  }
  return "raw";
}

namespace {

std::vector<std::uint8_t> encode_png(const Image& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.data().data(), 0, nullptr)) {
    throw DecodeError(std::string("png encode failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.data().data(), 0, nullptr)) {
    throw DecodeError(std::string("png encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw DecodeError(std::string("png decode failed: ") + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image out(static_cast<int>(png.width), static_cast<int>(png.height));
  if (!png_image_finish_read(&png, nullptr, out.data().data(), 0, nullptr)) {
    png_image_free(&png);
    throw DecodeError(std::string("png decode failed: ") + png.message);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

std::vector<std::uint8_t> encode_jpeg(const Image& image, int quality) {
  jpeg_compress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw DecodeError(std::string("jpeg encode failed: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(image.width());
  cinfo.image_height = static_cast<JDIMENSION>(image.height());
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto row = image.row(static_cast<int>(cinfo.next_scanline));
    JSAMPROW ptr = const_cast<JSAMPROW>(row.data());
    jpeg_write_scanlines(&cinfo, &ptr, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  std::free(buffer);
  return out;
}

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  // Declared before setjmp so the longjmp path never skips its destructor.
  Image out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(std::string("jpeg decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out = Image(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW ptr = out.row(static_cast<int>(cinfo.output_scanline)).data();
    jpeg_read_scanlines(&cinfo, &ptr, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode(const Image& image, Codec codec, int jpeg_quality) {
  switch (codec) {
    case Codec::Raw:
      return image.buffer();
    case Codec::Png:
      return encode_png(image);
    case Codec::Jpeg:
      return encode_jpeg(image, jpeg_quality);
  }
  throw ValidationError("unknown codec");
}

Image decode(std::span<const std::uint8_t> bytes, Codec codec, int expected_width,
             int expected_height) {
  Image out;
  switch (codec) {
    case Codec::Raw: {
      const std::size_t want = static_cast<std::size_t>(expected_width) * expected_height * 3;
      if (bytes.size() != want) {
        throw DecodeError("raw tile has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(want));
      }
      return Image(expected_width, expected_height,
                   std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
    }
    case Codec::Png:
      out = decode_png(bytes);
      break;
    case Codec::Jpeg:
      out = decode_jpeg(bytes);
      break;
  }
  if (out.width() != expected_width || out.height() != expected_height) {
    throw DecodeError("decoded tile is " + std::to_string(out.width()) + "x" +
                      std::to_string(out.height()) + ", expected " +
                      std::to_string(expected_width) + "x" + std::to_string(expected_height));
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw NotFoundError("cannot open '" + path + "'");
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot write '" + path + "'");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error("write failed for '" + path + "'");
  }
}

Image read_png(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return decode_png(bytes);
}

void write_png(const std::string& path, const Image& image) {
  write_file_bytes(path, encode_png(image));
}

void write_png_gray(const std::string& path, std::span<const std::uint8_t> gray, int width,
                    int height) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(width);
  png.height = static_cast<png_uint_32>(height);
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, gray.data(), 0, nullptr)) {
    throw Error("cannot write png '" + path + "': " + png.message);
  }
}

}  // namespace patchforge
