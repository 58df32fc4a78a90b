#include "seqsort/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "seqsort/error.hpp"
#include "seqsort/fsutil.hpp"

namespace seqsort {

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::string out = "P5\n" + std::to_string(image.cols) + " " + std::to_string(image.rows) + "\n255\n";
  out.reserve(out.size() + image.data.size());
  for (double v : image.data) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  write_file_atomic(path, out);
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IOFailure, "cannot open " + path.string());
  if (next_token(in) != "P5") fail(ErrorCode::PixelDecodeFailure, path.string() + " is not a binary PGM");
  int cols = 0, rows = 0, maxval = 0;
  try {
    cols = std::stoi(next_token(in));
    rows = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    fail(ErrorCode::PixelDecodeFailure, path.string() + ": bad PGM header");
  }
  if (cols <= 0 || rows <= 0 || maxval <= 0 || maxval > 65535) {
    fail(ErrorCode::PixelDecodeFailure, path.string() + ": bad PGM dimensions");
  }
  Image img(rows, cols);
  const std::size_t n = img.data.size();
  const bool wide = maxval > 255;
  std::vector<unsigned char> buf(n * (wide ? 2 : 1));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) fail(ErrorCode::PixelDecodeFailure, path.string() + ": truncated");
  for (std::size_t i = 0; i < n; ++i) {
    img.data[i] = wide ? static_cast<double>((buf[2 * i] << 8) | buf[2 * i + 1]) : static_cast<double>(buf[i]);
  }
  return img;
}

}  // namespace seqsort
