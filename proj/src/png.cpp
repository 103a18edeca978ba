#include "png.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "shade/error.hpp"

namespace shade::detail {

namespace {

void put_u32_be(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

void write_chunk(std::ofstream& os, const char type[4], const std::vector<uint8_t>& data) {
  std::vector<uint8_t> head;
  put_u32_be(head, static_cast<uint32_t>(data.size()));
  os.write(reinterpret_cast<const char*>(head.data()), 4);
  os.write(type, 4);
  if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
  std::vector<uint8_t> tail;
  put_u32_be(tail, static_cast<uint32_t>(crc));
  os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace

void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& rgb) {
  if (rgb.size() != static_cast<size_t>(width) * height * 3)
    throw contract_error("write_png_rgb8: buffer size mismatch");

  // filter byte 0 + raw RGB per scanline
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * 3));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const uint8_t* row = rgb.data() + static_cast<size_t>(y) * width * 3;
    raw.insert(raw.end(), row, row + static_cast<size_t>(width) * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> deflated(bound);
  if (compress2(deflated.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw io_error("write_png_rgb8: deflate failed");
  deflated.resize(bound);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("write_png_rgb8: cannot open " + path);
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(width));
  put_u32_be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  write_chunk(os, "IHDR", ihdr);
  write_chunk(os, "IDAT", deflated);
  write_chunk(os, "IEND", {});
  if (!os) throw io_error("write_png_rgb8: write failed for " + path);
}

}  // namespace shade::detail
