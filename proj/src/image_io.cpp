#include "ento/image_io.hpp"

#include <fstream>
#include <limits>

#include "ento/errors.hpp"

namespace ento::io {
namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  for (;;) {
    int c = in.get();
    if (c == EOF) {
      if (tok.empty())
        throw ParseError(path + ": unexpected end of header");
      return tok;
    }
    if (c == '#') {
      if (!tok.empty()) return tok;
      in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
}

int header_int(std::istream& in, const std::string& path, const char* what) {
  std::string tok = next_token(in, path);
  try {
    size_t pos = 0;
    int v = std::stoi(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError(path + ": bad " + what + " '" + tok + "'");
  }
}

struct PnmHeader {
  int width = 0;
  int height = 0;
};

PnmHeader read_header(std::istream& in, const std::string& path,
                      const char* magic) {
  std::string m = next_token(in, path);
  if (m != magic)
    throw ParseError(path + ": expected " + magic + ", got '" + m + "'");
  PnmHeader h;
  h.width = header_int(in, path, "width");
  h.height = header_int(in, path, "height");
  int maxval = header_int(in, path, "maxval");
  if (h.width <= 0 || h.height <= 0)
    throw ParseError(path + ": non-positive dimensions");
  if (maxval != 255)
    throw ParseError(path + ": only maxval 255 is supported");
  return h;
}

void read_payload(std::istream& in, const std::string& path, char* dst,
                  std::size_t n) {
  // Header tokenizer leaves the stream right after the maxval token; a single
  // whitespace byte separates it from the payload and get() consumed it.
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw ParseError(path + ": truncated pixel data");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

}  // namespace

Frame read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  PnmHeader h = read_header(in, path, "P6");
  Frame f(h.width, h.height);
  read_payload(in, path, reinterpret_cast<char*>(f.pixels.data()),
               f.pixels.size());
  return f;
}

void write_ppm(const std::string& path, const Frame& frame) {
  auto out = open_out(path);
  out << "P6\n" << frame.width << " " << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()),
            static_cast<std::streamsize>(frame.pixels.size()));
  if (!out) throw IoError("short write to " + path);
}

detect::Mask read_pgm_mask(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  PnmHeader h = read_header(in, path, "P5");
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h.width) * h.height);
  read_payload(in, path, reinterpret_cast<char*>(raw.data()), raw.size());
  detect::Mask m(h.width, h.height);
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (raw[i] >= 128) m.bits[i] = 1;
  return m;
}

void write_pgm_mask(const std::string& path, const detect::Mask& mask) {
  std::vector<std::uint8_t> raw(mask.bits.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = mask.bits[i] ? 255 : 0;
  write_pgm_gray(path, mask.width, mask.height, raw);
}

void write_pgm_gray(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels) {
  if (width <= 0 || height <= 0)
    throw DomainError("image dimensions must be positive");
  if (pixels.size() != static_cast<std::size_t>(width) * height)
    throw ShapeError("pixel buffer does not match dimensions");
  auto out = open_out(path);
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace ento::io
