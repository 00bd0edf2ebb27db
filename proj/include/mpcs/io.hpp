#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mpcs {

// Binary matrix format: 16-byte header (magic "MPCS", u32 rows, u32 cols,
// u32 reserved = 0), then rows*cols little-endian f64 in column-major order.
void save_matrix_binary(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd load_matrix_binary(const std::string& path);

void save_vector_binary(const std::string& path, const Eigen::VectorXd& v);
Eigen::VectorXd load_vector_binary(const std::string& path);

// Plain CSV without header, one matrix row per line; for small cases.
void save_matrix_csv(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd load_matrix_csv(const std::string& path);

// Binary PGM (P5, 8-bit). Matrices hold gray values in [0, 255]; writing
// clamps and rounds.
void write_pgm(const std::string& path, const Eigen::MatrixXd& image);
Eigen::MatrixXd read_pgm(const std::string& path);

// Flat "key = value" text files ('#' comments), used for run configs and
// simulation manifests. Keys keep insertion order on save.
class KeyValueFile {
 public:
  KeyValueFile() = default;
  static KeyValueFile load(const std::string& path);
  void save(const std::string& path) const;

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  void set(const std::string& key, const std::string& value);
  void set_double(const std::string& key, double value);
  void set_int(const std::string& key, long long value);
  void set_u64(const std::string& key, std::uint64_t value);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  const std::string* find(const std::string& key) const;
};

}  // namespace mpcs
