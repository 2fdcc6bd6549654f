#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "spv/error.hpp"

namespace spv {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Label used for samples whose identity is unknown (generic set).
inline constexpr int unknown_label = -1;

struct Pose {
  double pitch = 0.0;
  double yaw = 0.0;
  double roll = 0.0;

  friend bool operator==(const Pose&, const Pose&) = default;
};

inline double pose_distance(const Pose& a, const Pose& b) {
  const double dp = a.pitch - b.pitch;
  const double dy = a.yaw - b.yaw;
  const double dr = a.roll - b.roll;
  return std::sqrt(dp * dp + dy * dy + dr * dr);
}

inline double pose_norm(const Pose& p) { return pose_distance(p, Pose{}); }

// d x n matrix, one sample per column. Non-empty with finite entries.
class SampleMatrix {
public:
  SampleMatrix() = default;

  explicit SampleMatrix(Matrix data) : data_(std::move(data)) {
    if (data_.rows() < 1 || data_.cols() < 1)
      throw data_error("sample matrix must have at least one row and one column");
    for (Index j = 0; j < data_.cols(); ++j)
      for (Index i = 0; i < data_.rows(); ++i)
        if (!std::isfinite(data_(i, j)))
          throw data_error("non-finite entry at row " + std::to_string(i) + ", column " +
                           std::to_string(j));
  }

  const Matrix& data() const noexcept { return data_; }
  Index dim() const noexcept { return data_.rows(); }
  Index count() const noexcept { return data_.cols(); }
  auto column(Index j) const { return data_.col(j); }

private:
  Matrix data_;
};

struct SampleMeta {
  std::vector<int> labels;
  std::vector<Pose> poses;                  // empty when pose metadata is absent
  std::optional<std::vector<int>> blocks;   // pose-cluster id per column
  std::optional<std::vector<bool>> natural; // explicit natural-sample markers

  std::size_t size() const noexcept { return labels.size(); }
  bool has_poses() const noexcept { return !poses.empty(); }

  void validate(std::size_t n) const {
    if (labels.size() != n)
      throw data_error("metadata has " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(n) + " samples");
    for (int l : labels)
      if (l < unknown_label) throw data_error("labels must be >= -1");
    if (!poses.empty()) {
      if (poses.size() != n) throw data_error("pose count does not match sample count");
      for (const auto& p : poses)
        for (double a : {p.pitch, p.yaw, p.roll})
          if (!(a >= -180.0 && a <= 180.0))
            throw data_error("pose angle outside [-180, 180] degrees");
    }
    if (blocks && blocks->size() != n) throw data_error("block count does not match sample count");
    if (natural && natural->size() != n)
      throw data_error("natural marker count does not match sample count");
  }
};

enum class MatrixFormat { csv, binary };

// ".bin" / ".spvm" select the binary format, everything else is CSV.
inline MatrixFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return (ext == ".bin" || ext == ".spvm") ? MatrixFormat::binary : MatrixFormat::csv;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_cell(std::string_view cell, std::size_t row, std::size_t col) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size())
    throw data_error("non-numeric cell '" + std::string(cell) + "' at row " + std::to_string(row) +
                     ", column " + std::to_string(col));
  if (!std::isfinite(v))
    throw data_error("non-finite cell at row " + std::to_string(row) + ", column " +
                     std::to_string(col));
  return v;
}

template <class T>
void write_le(std::ostream& os, T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
  } else {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
}

template <class T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
  if (!is) throw data_error("truncated binary matrix");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

inline constexpr std::array<char, 4> binary_magic{'S', 'P', 'V', 'M'};

} // namespace detail

// CSV: one row per feature dimension, one column per sample. Lines starting
// with '#' and blank lines are ignored.
inline SampleMatrix load_matrix(const std::filesystem::path& path, MatrixFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open matrix file: " + path.string());

  if (format == MatrixFormat::binary) {
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    if (!in || magic != detail::binary_magic) throw data_error("bad binary matrix magic in " + path.string());
    const auto d = detail::read_le<std::uint32_t>(in);
    const auto n = detail::read_le<std::uint32_t>(in);
    if (d == 0 || n == 0) throw data_error("empty matrix in " + path.string());
    Matrix m(d, n);
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < d; ++i) m(i, j) = detail::read_le<double>(in);
    return SampleMatrix(std::move(m));
  }

  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    std::vector<double> row;
    std::size_t col = 0;
    std::size_t start = 0;
    while (true) {
      const auto comma = body.find(',', start);
      const auto cell = body.substr(start, comma == std::string_view::npos ? body.size() - start : comma - start);
      row.push_back(detail::parse_cell(cell, line_no, ++col));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw data_error("ragged row at line " + std::to_string(line_no) + ": expected " +
                       std::to_string(rows.front().size()) + " cells, found " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw data_error("empty matrix in " + path.string());

  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return SampleMatrix(std::move(m));
}

inline SampleMatrix load_matrix(const std::filesystem::path& path) {
  return load_matrix(path, format_from_path(path));
}

inline void save_matrix(const SampleMatrix& m, const std::filesystem::path& path, MatrixFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write matrix file: " + path.string());

  const Matrix& a = m.data();
  if (format == MatrixFormat::binary) {
    out.write(detail::binary_magic.data(), 4);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.rows()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.cols()));
    for (Index j = 0; j < a.cols(); ++j)
      for (Index i = 0; i < a.rows(); ++i) detail::write_le<double>(out, a(i, j));
  } else {
    out << std::setprecision(17);
    for (Index i = 0; i < a.rows(); ++i) {
      for (Index j = 0; j < a.cols(); ++j) {
        if (j) out << ',';
        out << a(i, j);
      }
      out << '\n';
    }
  }
  out.flush();
  if (!out) throw io_error("failed while writing " + path.string());
}

inline void save_matrix(const SampleMatrix& m, const std::filesystem::path& path) {
  save_matrix(m, path, format_from_path(path));
}

// Unit l2 norm per column.
inline Matrix normalize_columns(const Matrix& m) {
  Matrix out = m;
  for (Index j = 0; j < out.cols(); ++j) {
    const double n = out.col(j).norm();
    if (n == 0.0) throw data_error("cannot normalize zero column " + std::to_string(j));
    out.col(j) /= n;
  }
  return out;
}

inline SampleMatrix normalize_columns(const SampleMatrix& m) {
  return SampleMatrix(normalize_columns(m.data()));
}

// ---------------------------------------------------------------------------
// metadata JSON: {"labels":[...], "poses":[[pitch,yaw,roll],...], "blocks":[...]|null}
// An optional "natural":[bool,...] marks explicitly labeled natural samples.

inline nlohmann::json meta_to_json(const SampleMeta& meta) {
  nlohmann::json j;
  j["labels"] = meta.labels;
  auto poses = nlohmann::json::array();
  for (const auto& p : meta.poses) poses.push_back({p.pitch, p.yaw, p.roll});
  j["poses"] = std::move(poses);
  j["blocks"] = meta.blocks ? nlohmann::json(*meta.blocks) : nlohmann::json(nullptr);
  if (meta.natural) j["natural"] = *meta.natural;
  return j;
}

inline SampleMeta meta_from_json(const nlohmann::json& j) {
  SampleMeta meta;
  try {
    meta.labels = j.at("labels").get<std::vector<int>>();
    if (j.contains("poses") && !j["poses"].is_null()) {
      for (const auto& p : j["poses"]) {
        if (!p.is_array() || p.size() != 3) throw data_error("pose entries must be [pitch, yaw, roll]");
        meta.poses.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
      }
    }
    if (j.contains("blocks") && !j["blocks"].is_null()) meta.blocks = j["blocks"].get<std::vector<int>>();
    if (j.contains("natural") && !j["natural"].is_null()) meta.natural = j["natural"].get<std::vector<bool>>();
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("malformed metadata: ") + e.what());
  }
  return meta;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw data_error("invalid JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw io_error("failed while writing " + path.string());
}

inline SampleMeta load_meta(const std::filesystem::path& path, std::optional<std::size_t> expected_count = {}) {
  auto meta = meta_from_json(read_json_file(path));
  meta.validate(expected_count.value_or(meta.labels.size()));
  return meta;
}

inline void save_meta(const SampleMeta& meta, const std::filesystem::path& path) {
  write_json_file(meta_to_json(meta), path);
}

// ---------------------------------------------------------------------------

enum class RowNorm { l2, linf };

struct ModelConfig {
  double lambda = 0.005;
  double mu = 0.005;
  double tau = 0.5;
  int xi = 3;
  // Row-sparsity weight. When eta_relative is set it is a fraction of
  // eta_max(D) for the dissimilarity matrix at hand.
  double eta = 0.05;
  bool eta_relative = true;
  RowNorm row_norm = RowNorm::linf;
  double sci_threshold = 0.25;
  double tol = 1e-6;
  int max_iter = 1000;
  std::uint64_t seed = 0;
  // Re-normalize variational (difference) atoms to unit norm.
  bool normalize_variational = true;
  // Largest number of active-set combinations searched exhaustively by the
  // paired solver before it falls back to greedy selection with swaps.
  int exhaustive_budget = 256;
  // S+V class residuals keep only the variational blocks paired with the
  // class's own active sets; otherwise the whole variational code is shared.
  bool mask_variational_blocks = false;

  void validate() const {
    if (!(lambda > 0.0)) throw config_error("lambda must be > 0");
    if (!(mu > 0.0)) throw config_error("mu must be > 0");
    if (!(tau >= 0.0 && tau <= 1.0)) throw config_error("tau must lie in [0, 1]");
    if (xi < 1) throw config_error("xi must be >= 1");
    if (!(eta > 0.0)) throw config_error("eta must be > 0");
    if (!(sci_threshold > 0.0 && sci_threshold < 1.0)) throw config_error("sci_threshold must lie in (0, 1)");
    if (!(tol > 0.0)) throw config_error("tol must be > 0");
    if (max_iter < 1) throw config_error("max_iter must be >= 1");
    if (exhaustive_budget < 0) throw config_error("exhaustive_budget must be >= 0");
  }
};

inline std::string to_string(RowNorm n) { return n == RowNorm::l2 ? "2" : "inf"; }

inline RowNorm row_norm_from_string(const std::string& s) {
  if (s == "2" || s == "l2") return RowNorm::l2;
  if (s == "inf" || s == "linf") return RowNorm::linf;
  throw config_error("row norm must be '2' or 'inf', got '" + s + "'");
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"lambda", c.lambda},
                     {"mu", c.mu},
                     {"tau", c.tau},
                     {"xi", c.xi},
                     {"eta", c.eta},
                     {"eta_relative", c.eta_relative},
                     {"row_norm_q", to_string(c.row_norm)},
                     {"sci_threshold", c.sci_threshold},
                     {"tol", c.tol},
                     {"max_iter", c.max_iter},
                     {"seed", c.seed},
                     {"normalize_variational", c.normalize_variational},
                     {"exhaustive_budget", c.exhaustive_budget},
                     {"mask_variational_blocks", c.mask_variational_blocks}};
}

// Missing keys keep their current values so a partial file overrides defaults.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  try {
    if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
    if (j.contains("mu")) c.mu = j["mu"].get<double>();
    if (j.contains("tau")) c.tau = j["tau"].get<double>();
    if (j.contains("xi")) c.xi = j["xi"].get<int>();
    if (j.contains("eta")) c.eta = j["eta"].get<double>();
    if (j.contains("eta_relative")) c.eta_relative = j["eta_relative"].get<bool>();
    if (j.contains("row_norm_q")) {
      const auto& v = j["row_norm_q"];
      c.row_norm = row_norm_from_string(v.is_string() ? v.get<std::string>() : std::to_string(v.get<int>()));
    }
    if (j.contains("sci_threshold")) c.sci_threshold = j["sci_threshold"].get<double>();
    if (j.contains("tol")) c.tol = j["tol"].get<double>();
    if (j.contains("max_iter")) c.max_iter = j["max_iter"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("normalize_variational")) c.normalize_variational = j["normalize_variational"].get<bool>();
    if (j.contains("exhaustive_budget")) c.exhaustive_budget = j["exhaustive_budget"].get<int>();
    if (j.contains("mask_variational_blocks")) c.mask_variational_blocks = j["mask_variational_blocks"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("malformed config: ") + e.what());
  }
}

} // namespace spv
