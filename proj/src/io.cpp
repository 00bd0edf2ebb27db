#include "mpcs/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "mpcs/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary format assumes a little-endian host");

namespace mpcs {

namespace {

constexpr char kMagic[4] = {'M', 'P', 'C', 'S'};

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode) {
  std::ofstream os(path, mode);
  if (!os) throw IoError("cannot open for writing: " + path);
  return os;
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode) {
  std::ifstream is(path, mode);
  if (!is) throw IoError("cannot open for reading: " + path);
  return is;
}

}  // namespace

void save_matrix_binary(const std::string& path, const Eigen::MatrixXd& m) {
  auto os = open_out(path, std::ios::binary);
  os.write(kMagic, 4);
  write_u32(os, static_cast<std::uint32_t>(m.rows()));
  write_u32(os, static_cast<std::uint32_t>(m.cols()));
  write_u32(os, 0);
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!os) throw IoError("write failed: " + path);
}

Eigen::MatrixXd load_matrix_binary(const std::string& path) {
  auto is = open_in(path, std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad magic in " + path);
  const std::uint32_t rows = read_u32(is);
  const std::uint32_t cols = read_u32(is);
  read_u32(is);  // reserved
  Eigen::MatrixXd m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw IoError("truncated matrix file: " + path);
  return m;
}

void save_vector_binary(const std::string& path, const Eigen::VectorXd& v) {
  save_matrix_binary(path, v);
}

Eigen::VectorXd load_vector_binary(const std::string& path) {
  Eigen::MatrixXd m = load_matrix_binary(path);
  if (m.cols() != 1) throw IoError("expected a single-column file: " + path);
  return m.col(0);
}

void save_matrix_csv(const std::string& path, const Eigen::MatrixXd& m) {
  auto os = open_out(path, std::ios::out);
  char buf[32];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      os << buf << (j + 1 < m.cols() ? "," : "");
    }
    os << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

Eigen::MatrixXd load_matrix_csv(const std::string& path) {
  auto is = open_in(path, std::ios::in);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);  // accepts subnormals
      if (end == cell.c_str()) throw IoError("bad CSV number in " + path);
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError("ragged CSV: " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("empty CSV: " + path);
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void write_pgm(const std::string& path, const Eigen::MatrixXd& image) {
  auto os = open_out(path, std::ios::binary);
  os << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
  std::vector<unsigned char> row(image.cols());
  for (Eigen::Index i = 0; i < image.rows(); ++i) {
    for (Eigen::Index j = 0; j < image.cols(); ++j) {
      const double v = std::round(image(i, j));
      row[static_cast<size_t>(j)] =
          static_cast<unsigned char>(v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v));
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw IoError("write failed: " + path);
}

namespace {

// Next whitespace-delimited token, skipping '#' comment lines.
std::string next_pgm_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {}
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

Eigen::MatrixXd read_pgm(const std::string& path) {
  auto is = open_in(path, std::ios::binary);
  if (next_pgm_token(is) != "P5") throw IoError("not a binary PGM: " + path);
  const int cols = std::stoi(next_pgm_token(is));
  const int rows = std::stoi(next_pgm_token(is));
  const int maxval = std::stoi(next_pgm_token(is));
  if (rows <= 0 || cols <= 0 || maxval != 255)
    throw IoError("unsupported PGM (need 8-bit): " + path);

  std::vector<unsigned char> data(static_cast<size_t>(rows) * cols);
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size()));
  if (!is) throw IoError("truncated PGM: " + path);
  Eigen::MatrixXd image(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      image(i, j) = data[static_cast<size_t>(i) * cols + j];
  return image;
}

// ------------------------------------------------------------- KeyValueFile

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueFile KeyValueFile::load(const std::string& path) {
  auto is = open_in(path, std::ios::in);
  KeyValueFile kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": expected 'key = value'");
    kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

void KeyValueFile::save(const std::string& path) const {
  auto os = open_out(path, std::ios::out);
  for (const auto& [k, v] : entries_) os << k << " = " << v << "\n";
  if (!os) throw IoError("write failed: " + path);
}

const std::string* KeyValueFile::find(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return &v;
  return nullptr;
}

bool KeyValueFile::has(const std::string& key) const { return find(key) != nullptr; }

std::string KeyValueFile::get_string(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) throw ParseError("missing config key: " + key);
  return *v;
}

std::string KeyValueFile::get_string(const std::string& key,
                                     const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

double KeyValueFile::get_double(const std::string& key) const {
  try {
    return std::stod(get_string(key));
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError("config key is not a number: " + key);
  }
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

int KeyValueFile::get_int(const std::string& key) const {
  try {
    return std::stoi(get_string(key));
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError("config key is not an integer: " + key);
  }
}

int KeyValueFile::get_int(const std::string& key, int fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::uint64_t KeyValueFile::get_u64(const std::string& key) const {
  try {
    return std::stoull(get_string(key));
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError("config key is not an integer: " + key);
  }
}

std::uint64_t KeyValueFile::get_u64(const std::string& key,
                                    std::uint64_t fallback) const {
  return has(key) ? get_u64(key) : fallback;
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void KeyValueFile::set_double(const std::string& key, double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  set(key, buf);
}

void KeyValueFile::set_int(const std::string& key, long long value) {
  set(key, std::to_string(value));
}

void KeyValueFile::set_u64(const std::string& key, std::uint64_t value) {
  set(key, std::to_string(value));
}

}  // namespace mpcs
