#include "scalar/data/image.hpp"

#include <cctype>
#include <fstream>
#include <iterator>

namespace scalar::data {

void write_pnm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw IoError(IoErrorKind::Validation, path.string() + ": only 1- or 3-channel images can be written");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorKind::Open, path.string() + ": cannot open for writing");
  out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << '\n' << 255 << '\n';
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError(IoErrorKind::Open, path.string() + ": write failed");
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
bool next_token(const std::string& buf, std::size_t& pos, std::string& tok) {
  tok.clear();
  while (pos < buf.size()) {
    if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) tok.push_back(buf[pos++]);
  return !tok.empty();
}

int parse_positive(const std::string& tok, const std::filesystem::path& path, const char* field) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size() || v <= 0) {
    throw IoError(IoErrorKind::MalformedHeader, path.string() + ": malformed header field " + field + " '" + tok + "'");
  }
  return v;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::Open, path.string() + ": cannot open for reading");
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  std::string magic, w, h, maxval;
  if (!next_token(buf, pos, magic) || (magic != "P5" && magic != "P6")) {
    throw IoError(IoErrorKind::MalformedHeader, path.string() + ": malformed header, expected P5 or P6 magic");
  }
  if (!next_token(buf, pos, w) || !next_token(buf, pos, h) || !next_token(buf, pos, maxval)) {
    throw IoError(IoErrorKind::MalformedHeader, path.string() + ": malformed header, missing fields");
  }
  Image img;
  img.channels = magic == "P6" ? 3 : 1;
  img.width = parse_positive(w, path, "width");
  img.height = parse_positive(h, path, "height");
  if (parse_positive(maxval, path, "maxval") != 255) {
    throw IoError(IoErrorKind::MalformedHeader, path.string() + ": malformed header, maxval must be 255");
  }
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) {
    throw IoError(IoErrorKind::MalformedHeader, path.string() + ": malformed header, no separator before payload");
  }
  ++pos;
  const std::size_t expected = static_cast<std::size_t>(img.width) * img.height * img.channels;
  const std::size_t available = buf.size() - pos;
  if (available < expected) {
    throw IoError(IoErrorKind::TruncatedPayload, path.string() + ": truncated payload, expected " +
                                                     std::to_string(expected) + " bytes, found " +
                                                     std::to_string(available));
  }
  img.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                    buf.begin() + static_cast<std::ptrdiff_t>(pos + expected));
  return img;
}

}  // namespace scalar::data
