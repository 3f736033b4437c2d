#include "segprompt/image.hpp"

#include <cctype>
#include <fstream>
#include <string>

namespace segprompt {

namespace {

int read_header_int(std::istream& in) {
  int c = in.peek();
  while (c != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      break;
    }
    c = in.peek();
  }
  int value = -1;
  if (!(in >> value)) throw IoError("malformed PGM header");
  return value;
}

}  // namespace

GrayImage load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5') throw IoError(path.string() + " is not a binary PGM");
  const int width = read_header_int(in);
  const int height = read_header_int(in);
  const int maxval = read_header_int(in);
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255)
    throw IoError(path.string() + ": unsupported PGM geometry or depth");
  in.get();  // single whitespace before the raster
  GrayImage image(height, width);
  in.read(reinterpret_cast<char*>(image.data()), static_cast<std::streamsize>(image.size()));
  if (!in) throw IoError(path.string() + ": truncated raster");
  return image;
}

void save_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data()), static_cast<std::streamsize>(image.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace segprompt
